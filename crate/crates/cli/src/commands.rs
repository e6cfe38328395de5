use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use log::info;
use nalgebra::Vector3;
use planar_splat::fusion::{
    chamfer_distance, mesh_from_cloud, ChamferReport, MeshFormat, MeshSurface, TriangleMesh,
};
use planar_splat::gaussians::{load_checkpoint, save_checkpoint};
use planar_splat::gradcheck::{run_gradcheck, GradcheckOptions};
use planar_splat::losses::LossWeights;
use planar_splat::scenes::{
    load_scene, make_synthetic, AnalyticShape, save_scene, write_float_map, write_image, SceneBundle, SceneFormat, SyntheticSpec,
};
use planar_splat::trainer::{write_loss_csv, Trainer};
use planar_splat::{render_with, Image, RenderMaps};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CmdResult, EvalArgs, Failure, GradcheckArgs, MeshArgs, Phase, RenderArgs, RunArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads the config file, applies the shared flag overrides and validates.
fn resolve(run: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load_or_default(run.config.as_deref())?;
    if let Some(s) = &run.scene {
        config.scene = Some(s.clone());
    }
    if let Some(f) = &run.scene_format {
        config.scene_format = Some(f.clone());
    }
    config.validate()?;
    Ok(config)
}

fn load(config: &RunConfig) -> anyhow::Result<SceneBundle> {
    let path = config.scene_path()?;
    let format = match &config.scene_format {
        Some(f) => f.parse()?,
        None => SceneFormat::detect(path),
    };
    let scene = load_scene(path, format)?;
    info!("loaded {} views from {}", scene.len(), path.display());
    Ok(scene)
}

fn fusion_bounds(config: &RunConfig, scene: &SceneBundle) -> (Vector3<f64>, Vector3<f64>) {
    match config.bounds {
        Some([lo, hi]) => (Vector3::from(lo), Vector3::from(hi)),
        None => scene.bounds(),
    }
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        kind: args.kind,
        n_views: args.views,
        width: args.width,
        height: args.height,
        seed: args.seed,
        n_points: args.points,
        exposure_perturbation: args.exposure_perturbation,
        ..Default::default()
    };
    let scene = make_synthetic(&spec).usage()?;
    create_dir(&args.out).runtime()?;
    save_scene(&args.out, &scene).runtime()?;
    info!("wrote {} views to {}", scene.len(), args.out.display());
    Ok(())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let (config, scene) = (|| {
        let mut config = resolve(&args.run)?;
        if let Some(o) = &args.out {
            config.output = Some(o.clone());
        }
        if let Some(n) = args.iterations {
            config.train.iterations = n;
        }
        if let Some(s) = args.seed {
            config.train.seed = s;
        }
        if args.exposure_compensation {
            config.train.exposure_compensation = true;
        }
        if args.no_geometry {
            config.train.weights = LossWeights::default().without_geometry();
        }
        if let Some(k) = args.checkpoint_interval {
            config.train.checkpoint_interval = k;
        }
        if let Some(k) = args.preview_interval {
            config.preview_interval = k;
        }
        config.validate()?;
        config.output_dir()?;
        let scene = load(&config)?;
        Ok::<_, anyhow::Error>((config, scene))
    })()
    .usage()?;
    let mut trainer = Trainer::new(&scene, config.train.clone()).usage()?;

    let out = config.output_dir().usage()?;
    let previews = out.join("previews");
    create_dir(&previews).runtime()?;
    write_json(&out.join("config.json"), &config).runtime()?;

    let preview = config.preview_interval;
    let total = config.train.iterations;
    let records = trainer
        .run(Some(out), |t, r| {
            if preview > 0 && (t.iteration % preview == 0 || t.iteration == total) {
                let maps = render_with(&t.cloud, &scene.cameras[0], &scene.render_config());
                write_image(&previews.join(format!("iter_{:06}.png", t.iteration)), &maps.color)?;
                info!(
                    "iteration {}: loss {:.5} (rgb {:.5}), {} Gaussians",
                    t.iteration, r.total, r.rgb, r.gaussians
                );
            }
            Ok(())
        })
        .runtime()?;

    save_checkpoint(&out.join("point_cloud.ply"), &trainer.cloud).runtime()?;
    write_loss_csv(&out.join("loss.csv"), &records).runtime()?;
    write_json(&out.join("exposure.json"), &trainer.exposure).runtime()?;
    info!("wrote {} Gaussians to {}", trainer.cloud.len(), out.display());
    Ok(())
}

fn single_channel(maps: &RenderMaps, f: impl Fn(usize) -> f64) -> Image {
    Image::from_fn(maps.width, maps.height, 1, |x, y, _| f(maps.pixel_index(x, y)))
}

fn dump_maps(dir: &Path, stem: &str, maps: &RenderMaps) -> planar_splat::Result<()> {
    write_image(&dir.join(format!("{stem}_color.png")), &maps.color)?;
    let depth = single_channel(maps, |i| if maps.depth_valid[i] { maps.depth[i] } else { f64::NAN });
    write_float_map(&dir.join(format!("{stem}_depth.fmap")), &depth)?;
    write_float_map(&dir.join(format!("{stem}_normal.fmap")), &maps.normal)?;
    write_float_map(&dir.join(format!("{stem}_distance.fmap")), &single_channel(maps, |i| maps.distance[i]))?;
    write_float_map(&dir.join(format!("{stem}_alpha.fmap")), &single_channel(maps, |i| maps.accum_alpha[i]))?;
    // normals mapped from [-1, 1] for viewing
    let preview = Image::from_fn(maps.width, maps.height, 3, |x, y, c| {
        0.5 - 0.5 * maps.normal.get(x, y, c)
    });
    write_image(&dir.join(format!("{stem}_normal.png")), &preview)
}

#[derive(Serialize)]
struct ViewReport {
    view: u32,
    psnr: f64,
}

pub fn render(args: RenderArgs) -> CmdResult {
    let config = resolve(&args.run).usage()?;
    let scene = load(&config).usage()?;
    let cloud = load_checkpoint(&args.checkpoint).usage()?;
    let indices: Vec<usize> = if args.views.is_empty() {
        (0..scene.len()).collect()
    } else {
        args.views
            .iter()
            .map(|id| {
                scene
                    .view_ids
                    .iter()
                    .position(|v| v == id)
                    .ok_or_else(|| anyhow!("scene has no view with id {id}"))
            })
            .collect::<anyhow::Result<_>>()
            .usage()?
    };
    create_dir(&args.out).runtime()?;
    let mut reports = Vec::new();
    for i in indices {
        let maps = render_with(&cloud, &scene.cameras[i], &scene.render_config());
        let id = scene.view_ids[i];
        dump_maps(&args.out, &format!("view_{id:03}"), &maps).runtime()?;
        let psnr = maps.color.psnr(&scene.images[i]);
        println!("view {id}: PSNR {psnr:.2} dB");
        reports.push(ViewReport { view: id, psnr });
    }
    write_json(&args.out.join("psnr.json"), &reports).runtime()?;
    Ok(())
}

pub fn mesh(args: MeshArgs) -> CmdResult {
    let mut config = resolve(&args.run).usage()?;
    if let Some(v) = args.voxel_size {
        config.fusion.voxel_size = Some(v);
    }
    if args.no_depth_filter {
        config.fusion.depth_filter = false;
    }
    config.validate().usage()?;
    let format = match MeshFormat::from_path(&args.out) {
        Some(MeshFormat::PlyBinary) if args.ascii => MeshFormat::PlyAscii,
        Some(f) => f,
        None => return Err(Failure::Usage(anyhow!("{}: use a .ply or .obj extension", args.out.display()))),
    };
    let scene = load(&config).usage()?;
    let cloud = load_checkpoint(&args.checkpoint).usage()?;
    let (lo, hi) = fusion_bounds(&config, &scene);
    let (volume, mesh) = mesh_from_cloud(&cloud, &scene.cameras, lo, hi, &config.fusion).runtime()?;
    if mesh.is_empty() {
        return Err(Failure::Runtime(anyhow!("fusion produced an empty mesh")));
    }
    mesh.save(&args.out, format).runtime()?;
    if let Some(path) = &args.volume {
        volume.save(path).runtime()?;
    }
    info!(
        "wrote {} vertices, {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        args.out.display()
    );
    Ok(())
}

enum Reference {
    Shape(AnalyticShape),
    Mesh(TriangleMesh),
}

fn load_reference(path: &Path) -> anyhow::Result<Reference> {
    if path.is_file() && MeshFormat::from_path(path).is_some() {
        return Ok(Reference::Mesh(TriangleMesh::load(path)?));
    }
    let scene = load_scene(path, SceneFormat::detect(path))?;
    let gt = scene.ground_truth.context("reference scene has no ground truth")?;
    match (gt.shape, gt.mesh) {
        (Some(shape), _) => Ok(Reference::Shape(shape)),
        (None, Some(mesh)) => Ok(Reference::Mesh(mesh)),
        (None, None) => Err(anyhow!("reference scene ground truth has neither a shape nor a mesh")),
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    mesh: &'a Path,
    reference: &'a Path,
    #[serde(flatten)]
    chamfer: ChamferReport,
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let mesh = TriangleMesh::load(&args.mesh).usage()?;
    let reference = load_reference(&args.reference).usage()?;
    let surface = MeshSurface::new(&mesh);
    let report = match &reference {
        Reference::Shape(shape) => chamfer_distance(&surface, shape, args.samples, args.seed),
        Reference::Mesh(m) => chamfer_distance(&surface, &MeshSurface::new(m), args.samples, args.seed),
    }
    .runtime()?;
    println!("mesh -> reference  {:.6}", report.a_to_b);
    println!("reference -> mesh  {:.6}", report.b_to_a);
    println!("chamfer            {:.6}", report.chamfer);
    if let Some(path) = &args.json {
        let full = EvalReport {
            mesh: &args.mesh,
            reference: &args.reference,
            chamfer: report,
        };
        write_json(path, &full).runtime()?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let options = GradcheckOptions {
        seed: args.seed,
        size: args.size,
        gaussians: args.gaussians,
        tolerance: args.tolerance,
        flip_sign: args.flip_sign.as_deref().map(str::parse).transpose().usage()?,
        ..Default::default()
    };
    let report = run_gradcheck(&options).usage()?;
    println!("{report}");
    if let Some(path) = &args.json {
        write_json(path, &report).runtime()?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check failed")))
    }
}
