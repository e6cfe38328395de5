use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use planar_splat::fusion::TriangleMesh;
use planar_splat::gaussians::save_checkpoint;
use planar_splat::scenes::{read_float_map, AnalyticShape};
use planar_splat::trainer::read_loss_csv;
use planar_splat::GaussianCloud;
use tempfile::TempDir;

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planar-splat"))
        .args(args.iter().map(|a| a.as_ref()))
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn planar-splat")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, kind: &str, views: usize, size: usize) -> PathBuf {
    let scene = dir.join(format!("{kind}_scene"));
    let s = size.to_string();
    let v = views.to_string();
    ok(&run(&[
        &"synth", &"--kind", &kind, &"--views", &v, &"--width", &s, &"--height", &s, &"--points", &"300", &"--out", &scene,
    ]));
    scene
}

/// A plane scene trained long enough to render faithfully, shared by the
/// render, mesh and eval tests.
struct Trained {
    _dir: TempDir,
    scene: PathBuf,
    checkpoint: PathBuf,
}

fn trained_plane() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let scene = synth(dir.path(), "textured-plane", 12, 32);
        let out = dir.path().join("run");
        ok(&run(&[&"train", &"--scene", &scene, &"--out", &out, &"--iterations", &"1500", &"--preview-interval", &"0"]));
        Trained {
            checkpoint: out.join("point_cloud.ply"),
            scene,
            _dir: dir,
        }
    })
}

#[test]
fn train_writes_artifacts_and_reduces_loss() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "textured-plane", 12, 32);
    let out = dir.path().join("run");
    ok(&run(&[
        &"train", &"--scene", &scene, &"--out", &out, &"--iterations", &"500", &"--preview-interval", &"250",
        &"--checkpoint-interval", &"250",
    ]));
    for f in [
        "point_cloud.ply",
        "loss.csv",
        "exposure.json",
        "config.json",
        "checkpoint_000250.ply",
        "checkpoint_000500.ply",
        "previews/iter_000250.png",
        "previews/iter_000500.png",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let records = read_loss_csv(&out.join("loss.csv")).unwrap();
    assert_eq!(records.len(), 500);
    let mean = |r: &[planar_splat::trainer::LossRecord]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    assert!(mean(&records[480..]) < mean(&records[..20]));
    // the resolved configuration reproduces the run
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["iterations"], 500);
}

#[test]
fn seeded_training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "textured-plane", 12, 24);
    let csv = |name: &str| {
        let out = dir.path().join(name);
        ok(&run(&[
            &"train", &"--scene", &scene, &"--out", &out, &"--iterations", &"60", &"--seed", &"9", &"--preview-interval",
            &"0",
        ]));
        fs::read(out.join("loss.csv")).unwrap()
    };
    assert_eq!(csv("a"), csv("b"));
}

#[test]
fn config_file_is_validated_and_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "textured-plane", 12, 24);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"iterations": 5, "learning_rate": 1.0}}"#).unwrap();
    let out = run(&[&"train", &"--config", &bad, &"--scene", &scene, &"--out", &dir.path().join("x")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    let good = dir.path().join("good.json");
    let body = serde_json::json!({
        "scene": scene,
        "output": dir.path().join("from_config"),
        "train": {"iterations": 40},
        "preview_interval": 0
    });
    fs::write(&good, body.to_string()).unwrap();
    let flag_out = dir.path().join("from_flag");
    ok(&run(&[&"train", &"--config", &good, &"--iterations", &"25", &"--out", &flag_out]));
    assert_eq!(read_loss_csv(&flag_out.join("loss.csv")).unwrap().len(), 25);
    assert!(!dir.path().join("from_config").exists());

    let invalid = dir.path().join("invalid.json");
    fs::write(&invalid, r#"{"train": {"iterations": 0}}"#).unwrap();
    let out = run(&[&"train", &"--config", &invalid, &"--scene", &scene, &"--out", &dir.path().join("y")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_inputs_exit_with_usage_status() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&run(&[&"train", &"--scene", &missing, &"--out", &dir.path().join("o")])), 2);
    assert_eq!(code(&run(&[&"frobnicate"])), 2);
    assert_eq!(code(&run(&[&"synth", &"--kind", &"torus", &"--out", &missing])), 2);
    assert_eq!(code(&run(&[&"synth", &"--views", &"1", &"--out", &missing])), 2);
    assert_eq!(code(&run(&[&"gradcheck", &"--threads", &"0"])), 2);
}

#[test]
fn render_reproduces_training_views() {
    let t = trained_plane();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r");
    let stdout = ok(&run(&[&"render", &"--scene", &t.scene, &"--checkpoint", &t.checkpoint, &"--view", &"0", &"--view", &"5", &"--out", &out]));
    let report: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("psnr.json")).unwrap()).unwrap();
    assert_eq!(report.len(), 2);
    for r in &report {
        assert!(r["psnr"].as_f64().unwrap() > 30.0, "{stdout}");
    }
    let depth = read_float_map(&out.join("view_000_depth.fmap")).unwrap();
    assert_eq!((depth.width, depth.height, depth.channels), (32, 32, 1));
    assert!(depth.data.iter().filter(|d| d.is_finite()).count() > 32 * 32 / 2);
    let normal = read_float_map(&out.join("view_005_normal.fmap")).unwrap();
    assert_eq!(normal.channels, 3);
    assert!(out.join("view_005_color.png").is_file());
}

#[test]
fn render_rejects_unknown_views_and_blanks_empty_clouds() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "textured-plane", 4, 16);
    let empty = dir.path().join("empty.ply");
    save_checkpoint(&empty, &GaussianCloud::default()).unwrap();

    let out = run(&[&"render", &"--scene", &scene, &"--checkpoint", &empty, &"--view", &"42", &"--out", &dir.path().join("a")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("42"));

    let out_dir = dir.path().join("b");
    ok(&run(&[&"render", &"--scene", &scene, &"--checkpoint", &empty, &"--out", &out_dir]));
    for v in 0..4 {
        let alpha = read_float_map(&out_dir.join(format!("view_{v:03}_alpha.fmap"))).unwrap();
        assert!(alpha.data.iter().all(|a| *a == 0.0));
        let depth = read_float_map(&out_dir.join(format!("view_{v:03}_depth.fmap"))).unwrap();
        assert!(depth.data.iter().all(|d| d.is_nan()));
    }
}

#[test]
fn mesh_and_eval_trained_plane() {
    let t = trained_plane();
    let dir = TempDir::new().unwrap();
    let mesh = dir.path().join("mesh.ply");
    let volume = dir.path().join("volume.bin");
    ok(&run(&[&"mesh", &"--scene", &t.scene, &"--checkpoint", &t.checkpoint, &"--out", &mesh, &"--volume", &volume]));
    let m = TriangleMesh::load(&mesh).unwrap();
    assert!(!m.is_empty());
    assert_eq!(&fs::read(&volume).unwrap()[..8], b"TSDFVOL\0");

    let unfiltered = dir.path().join("raw.obj");
    ok(&run(&[&"mesh", &"--scene", &t.scene, &"--checkpoint", &t.checkpoint, &"--out", &unfiltered, &"--no-depth-filter"]));
    let raw = TriangleMesh::load(&unfiltered).unwrap();
    assert!(!raw.is_empty());
    assert_ne!(raw.vertices.len(), m.vertices.len());

    let json = dir.path().join("eval.json");
    let stdout = ok(&run(&[&"eval", &"--mesh", &mesh, &"--reference", &t.scene, &"--samples", &"20000", &"--json", &json]));
    assert!(stdout.contains("chamfer"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let chamfer = report["chamfer"].as_f64().unwrap();
    assert!(chamfer > 0.0 && chamfer < 0.05, "{chamfer}");

    let stdout = ok(&run(&[&"eval", &"--mesh", &mesh, &"--reference", &mesh, &"--samples", &"5000"]));
    let line = stdout.lines().find(|l| l.starts_with("chamfer")).unwrap();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(value < 1e-9, "{stdout}");
}

#[test]
fn mesh_of_sphere_scene_is_not_empty() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "sphere", 20, 32);
    let out = dir.path().join("run");
    ok(&run(&[&"train", &"--scene", &scene, &"--out", &out, &"--iterations", &"100", &"--preview-interval", &"0"]));
    let mesh = dir.path().join("sphere.ply");
    ok(&run(&[&"mesh", &"--scene", &scene, &"--checkpoint", &out.join("point_cloud.ply"), &"--out", &mesh, &"--ascii"]));
    assert!(fs::read_to_string(&mesh).unwrap().starts_with("ply\nformat ascii"));
    assert!(!TriangleMesh::load(&mesh).unwrap().is_empty());
}

#[test]
fn mesh_fails_without_gaussians() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "textured-plane", 4, 16);
    let empty = dir.path().join("empty.ply");
    save_checkpoint(&empty, &GaussianCloud::default()).unwrap();
    let out = run(&[&"mesh", &"--scene", &scene, &"--checkpoint", &empty, &"--out", &dir.path().join("m.ply")]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero Gaussians"));
}

#[test]
fn eval_concentric_spheres() {
    let dir = TempDir::new().unwrap();
    let sphere = |r: f64, name: &str| {
        let path = dir.path().join(name);
        let mesh = AnalyticShape::Sphere {
            center: nalgebra::Vector3::zeros(),
            radius: r,
        }
        .to_mesh();
        mesh.save(&path, planar_splat::fusion::MeshFormat::PlyBinary).unwrap();
        path
    };
    let a = sphere(1.0, "a.ply");
    let b = sphere(1.1, "b.ply");
    let json = dir.path().join("r.json");
    ok(&run(&[&"eval", &"--mesh", &a, &"--reference", &b, &"--samples", &"20000", &"--json", &json]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let c = report["chamfer"].as_f64().unwrap();
    assert!((c - 0.1).abs() < 2e-3, "{c}");

    let out = run(&[&"eval", &"--mesh", &dir.path().join("nope.ply"), &"--reference", &b]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_reports_every_class() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("g.json");
    let stdout = ok(&run(&[&"gradcheck", &"--seed", &"3", &"--json", &json]));
    for class in ["position", "rotation", "scale", "opacity", "color", "sh", "exposure_a", "exposure_b"] {
        assert!(stdout.lines().any(|l| l.trim_start().starts_with(class) && l.contains("PASS")), "{class}\n{stdout}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["classes"].as_array().unwrap().len(), 8);
}

#[test]
fn gradcheck_catches_an_injected_sign_error() {
    let out = run(&[&"gradcheck", &"--flip-sign", &"rotation"]);
    assert_eq!(code(&out), 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.trim_start().starts_with("rotation") && l.contains("FAIL")));
    assert_eq!(code(&run(&[&"gradcheck", &"--flip-sign", &"nonsense"])), 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let scene = synth(dir.path(), "cube", 8, 24);
    let csv = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&run(&[
            &"--threads", &threads, &"train", &"--scene", &scene, &"--out", &out, &"--iterations", &"30", &"--preview-interval", &"0",
        ]));
        fs::read(out.join("loss.csv")).unwrap()
    };
    assert_eq!(csv("one", "1"), csv("two", "2"));
}
