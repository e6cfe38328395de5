//! Shared fixtures for the criterion benchmarks in `benches/`.

use planar_splat::scenes::{make_synthetic, SceneBundle, SyntheticKind, SyntheticSpec};
use planar_splat::trainer::{init_from_points, Trainer, TrainConfig};
use planar_splat::GaussianCloud;

/// The 20-view textured cube at `size`×`size`.
pub fn cube_scene(size: usize) -> SceneBundle {
    make_synthetic(&SyntheticSpec {
        kind: SyntheticKind::Cube,
        width: size,
        height: size,
        ..Default::default()
    })
    .expect("synthetic cube")
}

/// Initial cloud from the scene's sparse points.
pub fn initial_cloud(scene: &SceneBundle) -> GaussianCloud {
    init_from_points(scene.points.as_ref().expect("points"), scene.extent())
}

/// A cloud after `iterations` training steps, dense enough to look like a
/// mid-training state.
pub fn trained_cloud(scene: &SceneBundle, iterations: usize) -> GaussianCloud {
    let config = TrainConfig {
        iterations,
        ..Default::default()
    };
    let mut trainer = Trainer::new(scene, config).expect("trainer");
    trainer.run(None, |_, _| Ok(())).expect("training");
    trainer.cloud
}
