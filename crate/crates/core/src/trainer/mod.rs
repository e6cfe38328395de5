//! Optimization loop: view sampling, loss assembly, gradient steps and
//! density control.

mod adam;
mod densify;

pub use adam::{AdamHyper, CloudAdam, ExposureAdam, StepRates};
pub use densify::{densify_and_prune, init_from_points, CloudEdit, DensifyConfig, DensifyReport, DensifyStats};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{flatten_loss, save_checkpoint, GaussianCloud};
use crate::geometry::{build_view_graph, ViewGraph, ViewGraphParams};
use crate::image_buf::Image;
use crate::losses::{
    image_loss, multiview_losses, single_view_loss, total_loss, ExposureParams, LossTerms, LossWeights, MultiViewParams,
};
use crate::render::{backward, render_with, MapGradients, RenderConfig};
use crate::scenes::SceneBundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene extent.
    pub position: f64,
    /// Final position rate; the rate decays exponentially in between.
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub sh: f64,
    pub exposure: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 0.05,
            color: 2.5e-3,
            sh: 1.25e-4,
            exposure: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub learning_rates: LearningRates,
    pub densify: DensifyConfig,
    /// Fraction of the iterations after which the multi-view terms switch on.
    pub multiview_start_fraction: f64,
    pub weights: LossWeights,
    pub exposure_compensation: bool,
    pub multiview: MultiViewParams,
    pub view_graph: ViewGraphParams,
    /// Pixel offset of the neighbors used for depth normals.
    pub single_view_offset: usize,
    /// Optimize degree-1 view-dependent color.
    pub sh: bool,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            seed: 0,
            learning_rates: LearningRates::default(),
            densify: DensifyConfig::default(),
            multiview_start_fraction: 0.3,
            weights: LossWeights::default(),
            exposure_compensation: false,
            multiview: MultiViewParams::default(),
            view_graph: ViewGraphParams::default(),
            single_view_offset: 1,
            sh: false,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        let lr = &self.learning_rates;
        let rates = [
            lr.position,
            lr.position_final,
            lr.rotation,
            lr.scale,
            lr.opacity,
            lr.color,
            lr.sh,
            lr.exposure,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad(format!("learning rates must be positive: {lr:?}"));
        }
        for (name, f) in [
            ("multiview_start_fraction", self.multiview_start_fraction),
            ("densify.stop_fraction", self.densify.stop_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.densify.interval == 0 {
            return bad("densify.interval must be positive".into());
        }
        if !(self.densify.grad_threshold > 0.0) || !(self.densify.split_scale_fraction > 0.0) {
            return bad("densification thresholds must be positive".into());
        }
        if self.single_view_offset == 0 || self.multiview.stride == 0 {
            return bad("offsets and strides must be positive".into());
        }
        self.weights.validate()
    }

    pub fn multiview_start(&self) -> usize {
        (self.multiview_start_fraction * self.iterations as f64).round() as usize
    }

    pub fn densify_stop(&self) -> usize {
        (self.densify.stop_fraction * self.iterations as f64).round() as usize
    }
}

/// Loss values of one iteration; `total` is the weighted objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: u32,
    pub neighbor: Option<u32>,
    pub rgb: f64,
    pub flatten: f64,
    pub single_view: f64,
    pub mv_photometric: f64,
    pub mv_geometric: f64,
    pub total: f64,
    pub gaussians: usize,
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(path, line, e.to_string())
}

/// Training state for one scene.
pub struct Trainer<'a> {
    pub scene: &'a SceneBundle,
    pub config: TrainConfig,
    pub cloud: GaussianCloud,
    pub exposure: Vec<ExposureParams>,
    pub graph: ViewGraph,
    pub stats: DensifyStats,
    pub extent: f64,
    pub iteration: usize,
    adam: CloudAdam,
    exposure_adam: ExposureAdam,
    grays: Vec<Image>,
    render_config: RenderConfig,
    rng: ChaCha8Rng,
    order: Vec<u32>,
    cursor: usize,
}

impl<'a> Trainer<'a> {
    /// Initializes from the scene's sparse points.
    pub fn new(scene: &'a SceneBundle, config: TrainConfig) -> Result<Self> {
        let points = scene
            .points
            .as_ref()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Empty("scene has no sparse points to initialize from".into()))?;
        let cloud = init_from_points(points, scene.extent());
        Self::with_cloud(scene, config, cloud)
    }

    pub fn with_cloud(scene: &'a SceneBundle, config: TrainConfig, cloud: GaussianCloud) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let graph = if scene.len() >= 2 {
            build_view_graph(&scene.cameras, config.view_graph)?
        } else {
            ViewGraph::default()
        };
        let cloud = if config.sh { cloud.with_sh() } else { cloud };
        let n = cloud.len();
        Ok(Self {
            scene,
            exposure: vec![ExposureParams::default(); scene.len()],
            graph,
            stats: DensifyStats::new(n),
            extent: scene.extent(),
            iteration: 0,
            adam: CloudAdam::new(n, AdamHyper::default()),
            exposure_adam: ExposureAdam::new(scene.len(), AdamHyper::default()),
            grays: scene.grays(),
            render_config: scene.render_config(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            config,
            cloud,
        })
    }

    /// Next reference view: a fresh shuffled permutation every epoch.
    fn next_view(&mut self) -> u32 {
        if self.cursor >= self.order.len() {
            self.order = (0..self.scene.len() as u32).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn rates(&self) -> StepRates {
        let lr = &self.config.learning_rates;
        let t = (self.iteration as f64 / self.config.iterations.max(1) as f64).min(1.0);
        let position = (lr.position.ln() * (1.0 - t) + lr.position_final.ln() * t).exp() * self.extent;
        StepRates {
            position,
            rotation: lr.rotation,
            scale: lr.scale,
            opacity: lr.opacity,
            color: lr.color,
            sh: lr.sh,
        }
    }

    pub fn multiview_active(&self) -> bool {
        let w = &self.config.weights;
        self.iteration >= self.config.multiview_start() && (w.mv_geometric > 0.0 || w.mv_photometric > 0.0)
    }

    /// One optimization step.
    pub fn step(&mut self) -> LossRecord {
        let view = self.next_view();
        let vi = view as usize;
        let scene = self.scene;
        let camera = &scene.cameras[vi];
        let gt = &scene.images[vi];
        let weights = self.config.weights;

        let maps = render_with(&self.cloud, camera, &self.render_config);
        // image 0 anchors the brightness scale
        let compensate = self.config.exposure_compensation && vi != 0;
        let exposure = compensate.then_some(&self.exposure[vi]);
        let il = image_loss(&maps.color, gt, exposure, weights.ssim);
        let mut ref_grads = MapGradients::for_maps(&maps);
        ref_grads.color.copy_from_slice(&il.grad_rendered);

        let mut terms = LossTerms {
            rgb: il.loss,
            ..Default::default()
        };
        if weights.single_view > 0.0 {
            let sv = single_view_loss(&maps, gt, camera, self.config.single_view_offset);
            terms.single_view = sv.loss;
            ref_grads.add_scaled(&sv.grads, weights.single_view);
        }

        let mut neighbor = None;
        let mut nbr_part = None;
        if self.multiview_active() {
            if let Some(nb) = self.graph.sample_neighbor(view, &mut self.rng) {
                let ncam = &scene.cameras[nb as usize];
                let nmaps = render_with(&self.cloud, ncam, &self.render_config);
                let grays = (weights.mv_photometric > 0.0).then(|| (&self.grays[vi], &self.grays[nb as usize]));
                let mv = multiview_losses(&maps, &nmaps, camera, ncam, grays, &self.config.multiview);
                terms.mv_geometric = mv.geometric;
                terms.mv_photometric = mv.photometric;
                ref_grads.add_scaled(&mv.geometric_ref, weights.mv_geometric);
                ref_grads.add_scaled(&mv.photometric_ref, weights.mv_photometric);
                let mut ng = MapGradients::for_maps(&nmaps);
                ng.add_scaled(&mv.geometric_nbr, weights.mv_geometric);
                neighbor = Some(nb);
                nbr_part = Some((nb, nmaps, ng));
            }
        }

        let mut grads = backward(&self.cloud, camera, &maps, &ref_grads);
        self.stats.record(&grads);
        if let Some((nb, nmaps, ng)) = nbr_part {
            if !ng.is_zero() {
                grads.accumulate(&backward(&self.cloud, &scene.cameras[nb as usize], &nmaps, &ng));
            }
        }
        let (flat, flat_grads) = flatten_loss(&self.cloud);
        terms.flatten = flat;
        for (g, f) in grads.log_scales.iter_mut().zip(&flat_grads) {
            *g += f * weights.flatten;
        }

        let rates = self.rates();
        self.adam.step(&mut self.cloud, &grads, &rates);
        self.cloud.renormalize_rotations();
        if compensate && il.exposure_applied {
            let e = &mut self.exposure[vi];
            let mut p = [e.a, e.b];
            self.exposure_adam
                .step(vi, &mut p, il.grad_exposure, self.config.learning_rates.exposure);
            *e = ExposureParams::new(p[0], p[1]);
        }

        let record = LossRecord {
            iteration: self.iteration,
            view,
            neighbor,
            rgb: terms.rgb,
            flatten: terms.flatten,
            single_view: terms.single_view,
            mv_photometric: terms.mv_photometric,
            mv_geometric: terms.mv_geometric,
            total: total_loss(&terms, &weights),
            gaussians: self.cloud.len(),
        };
        self.iteration += 1;
        if self.densify_due() {
            self.densify();
        }
        record
    }

    fn densify_due(&self) -> bool {
        let it = self.iteration;
        let d = &self.config.densify;
        it % d.interval == 0 && it >= d.start && it <= self.config.densify_stop()
    }

    /// Runs density control now and resets the statistics.
    pub fn densify(&mut self) -> DensifyReport {
        let edit = densify_and_prune(&mut self.cloud, &self.stats, &self.config.densify, self.extent, &mut self.rng);
        self.adam.select(&edit.keep, edit.added);
        self.stats = DensifyStats::new(self.cloud.len());
        log::debug!("iteration {}: {:?}, {} Gaussians", self.iteration, edit.report, self.cloud.len());
        edit.report
    }

    /// Runs the remaining iterations, calling `on_step` after each one and
    /// writing checkpoints into `out_dir` when configured.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&Self, &LossRecord) -> Result<()>,
    ) -> Result<Vec<LossRecord>> {
        let mut records = Vec::with_capacity(self.config.iterations.saturating_sub(self.iteration));
        while self.iteration < self.config.iterations {
            let r = self.step();
            if !r.total.is_finite() {
                return Err(Error::Failed(format!("loss became {} at iteration {}", r.total, r.iteration)));
            }
            on_step(self, &r)?;
            let k = self.config.checkpoint_interval;
            if let Some(dir) = out_dir {
                if k > 0 && self.iteration % k == 0 {
                    save_checkpoint(&dir.join(format!("checkpoint_{:06}.ply", self.iteration)), &self.cloud)?;
                }
            }
            records.push(r);
        }
        Ok(records)
    }
}

/// Trains `scene` from its sparse points with `config` and returns the
/// final cloud, exposure parameters and loss trace.
pub fn train(scene: &SceneBundle, config: TrainConfig) -> Result<(GaussianCloud, Vec<ExposureParams>, Vec<LossRecord>)> {
    let mut t = Trainer::new(scene, config)?;
    let records = t.run(None, |_, _| Ok(()))?;
    Ok((t.cloud, t.exposure, records))
}
