//! Finite-difference verification of the analytic gradients of the
//! rasterizer and every loss term, per parameter class.
//!
//! Occlusion weights of the multi-view terms are detached in training; the
//! check replaces them by a unit weight so that the finite differences
//! differentiate the same function as the analytic pass.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussians::{flatten_loss, logit, normalize_quat, Gaussian, GaussianCloud};
use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::losses::{
    exposure_adjust, image_loss, multiview_losses_with_weight, single_view_loss, ExposureParams, LossWeights,
    MultiViewParams,
};
use crate::render::{backward, render_with, MapGradients, ParamGradients, RenderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
    Sh,
    ExposureA,
    ExposureB,
}

impl ParamClass {
    pub const ALL: [ParamClass; 8] = [
        Self::Position,
        Self::Rotation,
        Self::Scale,
        Self::Opacity,
        Self::Color,
        Self::Sh,
        Self::ExposureA,
        Self::ExposureB,
    ];

    fn width(self) -> usize {
        match self {
            Self::Position | Self::Scale | Self::Color => 3,
            Self::Rotation => 4,
            Self::Opacity => 1,
            Self::Sh => 9,
            Self::ExposureA | Self::ExposureB => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Position => "position",
            Self::Rotation => "rotation",
            Self::Scale => "scale",
            Self::Opacity => "opacity",
            Self::Color => "color",
            Self::Sh => "sh",
            Self::ExposureA => "exposure_a",
            Self::ExposureB => "exposure_b",
        }
    }
}

impl std::str::FromStr for ParamClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter class {s:?}")))
    }
}

/// The loss terms checked individually, plus their weighted total.
pub const TERMS: [&str; 6] = ["rgb", "flatten", "single_view", "mv_photometric", "mv_geometric", "total"];

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub gaussians: usize,
    pub size: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub sh: bool,
    /// Deliberately negate the analytic gradient of one class, to confirm
    /// the harness catches sign errors.
    pub flip_sign: Option<ParamClass>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 5,
            size: 16,
            step: 1e-6,
            tolerance: 1e-3,
            floor: 1e-6,
            sh: true,
            flip_sign: None,
        }
    }
}

/// Worst relative error of one parameter class over all terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: ParamClass,
    pub max_rel_error: f64,
    /// Term and scalar index where the maximum occurs.
    pub worst_term: &'static str,
    pub checked: usize,
    /// Scalars whose difference quotient changed with the step (a
    /// discontinuity inside the stencil) and were therefore not compared.
    pub skipped: usize,
    pub max_abs_gradient: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub classes: Vec<ClassReport>,
    /// Pixels contributing to each term at the evaluation point.
    pub term_counts: Vec<(&'static str, usize)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(|c| c.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check, seed {}, tolerance {:e}", self.seed, self.tolerance)?;
        for c in &self.classes {
            writeln!(
                f,
                "  {:<11} {}  max rel err {:.3e} ({}), {} checked, {} skipped, max |g| {:.3e}",
                c.class.name(),
                if c.passed { "PASS" } else { "FAIL" },
                c.max_rel_error,
                c.worst_term,
                c.checked,
                c.skipped,
                c.max_abs_gradient
            )?;
        }
        let counts: Vec<String> = self.term_counts.iter().map(|(t, n)| format!("{t} {n}")).collect();
        write!(f, "  contributing pixels: {}", counts.join(", "))
    }
}

/// Two small views of a handful of Gaussians near a common plane over a
/// colored background, with ground truth rendered from a perturbed copy and
/// brightness-shifted so that the exposure path is active.
struct Case {
    cameras: [Camera; 2],
    gts: [Image; 2],
    grays: [Image; 2],
    weights: LossWeights,
    params: MultiViewParams,
    render_config: RenderConfig,
}

fn random_gaussian(rng: &mut ChaCha8Rng, sh: bool) -> Gaussian {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let angle: f64 = rng.gen_range(0.0..0.5);
    let half = 0.5 * angle;
    let a = axis.normalize() * half.sin();
    let scale = |rng: &mut ChaCha8Rng| rng.gen_range(0.15f64..0.35).ln();
    Gaussian {
        position: Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(2.8..3.2)),
        rotation: normalize_quat(&[half.cos(), a.x, a.y, a.z]),
        log_scale: Vector3::new(scale(rng), scale(rng), rng.gen_range(0.01f64..0.03).ln()),
        opacity_logit: logit(rng.gen_range(0.35..0.9)),
        color: Vector3::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)),
        sh: if sh {
            [0; 3].map(|_| Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
        } else {
            [Vector3::zeros(); 3]
        },
    }
}

fn build_case(opts: &GradcheckOptions) -> Result<(Case, GaussianCloud, ExposureParams)> {
    if opts.gaussians == 0 || opts.size < 8 {
        return Err(Error::Config("gradient check needs at least one Gaussian and 8x8 images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = opts.size;
    let f = 1.4 * s as f64;
    let c = (s as f64 - 1.0) / 2.0;
    let yaw: f64 = 0.12;
    let r2 = Matrix3::new(yaw.cos(), 0.0, yaw.sin(), 0.0, 1.0, 0.0, -yaw.sin(), 0.0, yaw.cos());
    let cameras = [
        Camera::from_pinhole(f, f, c, c, Matrix3::identity(), Vector3::zeros(), s, s, 0)?,
        Camera::from_pinhole(f, f, c, c, r2, Vector3::new(-0.35, 0.02, 0.05), s, s, 1)?,
    ];
    let mut cloud = GaussianCloud::default();
    if opts.sh {
        cloud = cloud.with_sh();
    }
    for _ in 0..opts.gaussians {
        cloud.push(random_gaussian(&mut rng, opts.sh));
    }
    let mut target = cloud.clone();
    for p in &mut target.positions {
        *p += Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0);
    }
    for col in &mut target.colors {
        *col = col.map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.05, 0.95));
    }
    let shift = ExposureParams::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.03..0.03));
    let render_config = RenderConfig {
        background: [0.35, 0.5, 0.6],
        ..Default::default()
    };
    let gts = [0, 1].map(|k| {
        let base = exposure_adjust(&render_with(&target, &cameras[k], &render_config).color, &shift);
        // background and noise keep every pixel away from the L1 kink
        Image::from_fn(s, s, 3, |x, y, ch| base.get(x, y, ch) + 0.05 + 0.02 * rng.gen::<f64>())
    });
    let grays = [gts[0].to_gray(), gts[1].to_gray()];
    let exposure = ExposureParams::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.02..0.02));
    Ok((
        Case {
            cameras,
            gts,
            grays,
            weights: LossWeights::default(),
            params: MultiViewParams::default(),
            render_config,
        },
        cloud,
        exposure,
    ))
}

fn unit_weight(phi: f64) -> f64 {
    if phi < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Analytic gradient of one term: cloud parameters plus exposure `(a, b)`.
struct TermGrad {
    params: ParamGradients,
    exposure: [f64; 2],
}

struct Evaluation {
    values: [f64; 6],
    counts: [usize; 5],
    grads: Option<Vec<TermGrad>>,
}

fn evaluate(case: &Case, cloud: &GaussianCloud, exposure: &ExposureParams, with_grads: bool) -> Evaluation {
    let [cam_r, cam_n] = &case.cameras;
    let w = &case.weights;
    let maps = render_with(cloud, cam_r, &case.render_config);
    let nmaps = render_with(cloud, cam_n, &case.render_config);

    let il = image_loss(&maps.color, &case.gts[0], Some(exposure), w.ssim);
    let (flat, flat_grads) = flatten_loss(cloud);
    let sv = single_view_loss(&maps, &case.gts[0], cam_r, 1);
    let mv = multiview_losses_with_weight(
        &maps,
        &nmaps,
        cam_r,
        cam_n,
        Some((&case.grays[0], &case.grays[1])),
        &case.params,
        unit_weight,
    );
    let values5 = [il.loss, flat, sv.loss, mv.photometric, mv.geometric];
    let weights5 = [1.0, w.flatten, w.single_view, w.mv_photometric, w.mv_geometric];
    let total = values5.iter().zip(&weights5).map(|(v, k)| v * k).sum();
    let values = [values5[0], values5[1], values5[2], values5[3], values5[4], total];
    let counts = [
        maps.width * maps.height,
        cloud.len(),
        sv.count,
        mv.photometric_count,
        mv.geometric_count,
    ];
    if !with_grads {
        return Evaluation {
            values,
            counts,
            grads: None,
        };
    }

    let on_ref = |g: &MapGradients| backward(cloud, cam_r, &maps, g);
    let mut rgb_maps = MapGradients::for_maps(&maps);
    rgb_maps.color.copy_from_slice(&il.grad_rendered);
    let rgb = TermGrad {
        params: on_ref(&rgb_maps),
        exposure: if il.exposure_applied { il.grad_exposure } else { [0.0; 2] },
    };
    let mut flat_params = ParamGradients::zeros(cloud, 0);
    flat_params.log_scales = flat_grads;
    let flatten = TermGrad {
        params: flat_params,
        exposure: [0.0; 2],
    };
    let single = TermGrad {
        params: on_ref(&sv.grads),
        exposure: [0.0; 2],
    };
    let photometric = TermGrad {
        params: on_ref(&mv.photometric_ref),
        exposure: [0.0; 2],
    };
    let mut geo = on_ref(&mv.geometric_ref);
    geo.accumulate(&backward(cloud, cam_n, &nmaps, &mv.geometric_nbr));
    let geometric = TermGrad {
        params: geo,
        exposure: [0.0; 2],
    };

    let mut total = ParamGradients::zeros(cloud, 0);
    let mut total_exp = [0.0; 2];
    for (t, k) in [&rgb, &flatten, &single, &photometric, &geometric].iter().zip(&weights5) {
        let mut scaled = t.params.clone();
        scale_params(&mut scaled, *k);
        total.accumulate(&scaled);
        total_exp[0] += k * t.exposure[0];
        total_exp[1] += k * t.exposure[1];
    }
    let total = TermGrad {
        params: total,
        exposure: total_exp,
    };
    Evaluation {
        values,
        counts,
        grads: Some(vec![rgb, flatten, single, photometric, geometric, total]),
    }
}

fn scale_params(g: &mut ParamGradients, k: f64) {
    for i in 0..g.len() {
        g.positions[i] *= k;
        g.rotations[i] = g.rotations[i].map(|v| v * k);
        g.log_scales[i] *= k;
        g.opacity_logits[i] *= k;
        g.colors[i] *= k;
        if let Some(sh) = &mut g.sh {
            for c in &mut sh[i] {
                *c *= k;
            }
        }
    }
}

/// Mutable access to scalar `k` of Gaussian `i` in `class`.
fn scalar_mut(cloud: &mut GaussianCloud, class: ParamClass, i: usize, k: usize) -> &mut f64 {
    match class {
        ParamClass::Position => &mut cloud.positions[i][k],
        ParamClass::Rotation => &mut cloud.rotations[i][k],
        ParamClass::Scale => &mut cloud.log_scales[i][k],
        ParamClass::Opacity => &mut cloud.opacity_logits[i],
        ParamClass::Color => &mut cloud.colors[i][k],
        ParamClass::Sh => &mut cloud.sh.as_mut().expect("sh enabled")[i][k / 3][k % 3],
        ParamClass::ExposureA | ParamClass::ExposureB => unreachable!(),
    }
}

fn analytic(g: &TermGrad, class: ParamClass, i: usize, k: usize) -> f64 {
    let p = &g.params;
    match class {
        ParamClass::Position => p.positions[i][k],
        ParamClass::Rotation => p.rotations[i][k],
        ParamClass::Scale => p.log_scales[i][k],
        ParamClass::Opacity => p.opacity_logits[i],
        ParamClass::Color => p.colors[i][k],
        ParamClass::Sh => p.sh.as_ref().map(|s| s[i][k / 3][k % 3]).unwrap_or(0.0),
        ParamClass::ExposureA => g.exposure[0],
        ParamClass::ExposureB => g.exposure[1],
    }
}

/// Runs the check on the scene generated from `opts.seed`.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (case, cloud, exposure) = build_case(opts)?;
    let base = evaluate(&case, &cloud, &exposure, true);
    let grads = base.grads.expect("requested");

    let eval_at = |class: ParamClass, i: usize, k: usize, delta: f64| -> [f64; 6] {
        let mut c = cloud.clone();
        let mut e = exposure;
        match class {
            ParamClass::ExposureA => e.a += delta,
            ParamClass::ExposureB => e.b += delta,
            _ => *scalar_mut(&mut c, class, i, k) += delta,
        }
        evaluate(&case, &c, &e, false).values
    };
    let diff = |class, i, k, h: f64| -> [f64; 6] {
        let p = eval_at(class, i, k, h);
        let m = eval_at(class, i, k, -h);
        std::array::from_fn(|t| (p[t] - m[t]) / (2.0 * h))
    };

    let mut classes = Vec::new();
    for class in ParamClass::ALL {
        if class == ParamClass::Sh && !opts.sh {
            continue;
        }
        let slots: Vec<(usize, usize)> = match class {
            ParamClass::ExposureA | ParamClass::ExposureB => vec![(0, 0)],
            _ => (0..cloud.len()).flat_map(|i| (0..class.width()).map(move |k| (i, k))).collect(),
        };
        let sign = if opts.flip_sign == Some(class) { -1.0 } else { 1.0 };
        let mut report = ClassReport {
            class,
            max_rel_error: 0.0,
            worst_term: TERMS[0],
            checked: 0,
            skipped: 0,
            max_abs_gradient: 0.0,
            passed: true,
        };
        for (i, k) in slots {
            let fd = diff(class, i, k, opts.step);
            let fd_half = diff(class, i, k, 0.5 * opts.step);
            for (t, term) in TERMS.iter().enumerate() {
                let a = sign * analytic(&grads[t], class, i, k);
                let n = fd[t];
                let scale = a.abs().max(n.abs()).max(opts.floor);
                if (fd_half[t] - n).abs() > 0.1 * opts.tolerance * scale {
                    report.skipped += 1;
                    continue;
                }
                let rel = (a - n).abs() / scale;
                report.checked += 1;
                report.max_abs_gradient = report.max_abs_gradient.max(a.abs());
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst_term = term;
                }
            }
        }
        // footprint cut-offs make a few stencils straddle a jump; they may
        // hide some comparisons but never most of them
        report.passed = report.max_rel_error < opts.tolerance && report.checked > 0 && report.skipped * 3 <= report.checked;
        classes.push(report);
    }
    let term_counts = TERMS[..5].iter().copied().zip(base.counts).collect();
    Ok(GradcheckReport {
        seed: opts.seed,
        tolerance: opts.tolerance,
        classes,
        term_counts,
    })
}
