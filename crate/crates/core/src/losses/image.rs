//! Color loss: L1 on the (optionally exposure-compensated) render mixed with
//! a structural term on the raw render.

use super::exposure::{exposure_adjust, exposure_backward, ExposureParams};
use super::ssim::ssim_with_grad;
use crate::image_buf::Image;

/// Structural loss of the raw render below which exposure compensation is
/// applied to the L1 term.
pub const EXPOSURE_SWITCH: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageLoss {
    pub loss: f64,
    pub l1: f64,
    /// `1 − SSIM` of the raw render.
    pub ssim_loss: f64,
    /// Whether the L1 term saw the exposure-adjusted image.
    pub exposure_applied: bool,
    /// Gradient w.r.t. the rendered color, interleaved like the image.
    pub grad_rendered: Vec<f64>,
    /// Gradient w.r.t. `(a, b)`; zero when compensation was not applied.
    pub grad_exposure: [f64; 2],
}

/// `(1 − λ) · mean|Ĩ − gt| + λ · (1 − SSIM(raw, gt))`, where `Ĩ` is the
/// exposure-adjusted render when `exposure` is given and the raw render is
/// already structurally close to `gt`, and the raw render otherwise.
pub fn image_loss(rendered: &Image, gt: &Image, exposure: Option<&ExposureParams>, lambda: f64) -> ImageLoss {
    assert!(rendered.same_shape(gt), "image_loss: shape mismatch");
    let (ssim, ssim_grad) = ssim_with_grad(rendered, gt);
    let ssim_loss = 1.0 - ssim;
    let applied = exposure.filter(|_| ssim_loss < EXPOSURE_SWITCH);
    let adjusted = match applied {
        Some(p) => exposure_adjust(rendered, p),
        None => rendered.clone(),
    };
    let n = rendered.data.len().max(1) as f64;
    let mut l1 = 0.0;
    let mut grad_l1 = vec![0.0; rendered.data.len()];
    for (k, (x, y)) in adjusted.data.iter().zip(&gt.data).enumerate() {
        let d = x - y;
        l1 += d.abs();
        grad_l1[k] = if d > 0.0 {
            (1.0 - lambda) / n
        } else if d < 0.0 {
            -(1.0 - lambda) / n
        } else {
            0.0
        };
    }
    l1 /= n;
    let (mut grad, grad_exposure) = match applied {
        Some(p) => exposure_backward(rendered, p, &grad_l1),
        None => (grad_l1, [0.0, 0.0]),
    };
    for (g, s) in grad.iter_mut().zip(&ssim_grad) {
        *g -= lambda * s;
    }
    ImageLoss {
        loss: (1.0 - lambda) * l1 + lambda * ssim_loss,
        l1,
        ssim_loss,
        exposure_applied: applied.is_some(),
        grad_rendered: grad,
        grad_exposure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ssim::ssim;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(12, 10, 3, |_, _, _| rng.gen_range(0.05..0.95))
    }

    #[test]
    fn identical_images_give_zero() {
        let a = random_image(1);
        let out = image_loss(&a, &a, Some(&ExposureParams::default()), 0.2);
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn half_brightness_matches_scalar_reimplementation() {
        let gt = random_image(2);
        let mut r = gt.clone();
        r.data.iter_mut().for_each(|v| *v *= 0.5);
        let p = ExposureParams::new(0.3, 0.01);
        let out = image_loss(&r, &gt, Some(&p), 0.2);
        let s_loss = 1.0 - ssim(&r, &gt);
        let used = s_loss < 0.5;
        let mut l1 = 0.0;
        for (x, y) in r.data.iter().zip(&gt.data) {
            let xa = if used { 0.3f64.exp() * x + 0.01 } else { *x };
            l1 += (xa - y).abs();
        }
        l1 /= r.data.len() as f64;
        assert_eq!(out.exposure_applied, used);
        assert!((out.loss - (0.8 * l1 + 0.2 * s_loss)).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_pure_l1() {
        let a = random_image(3);
        let b = random_image(4);
        let out = image_loss(&a, &b, None, 0.0);
        assert!((out.loss - a.mean_abs_diff(&b)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gt = random_image(5);
        let mut r = gt.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        r.data.iter_mut().for_each(|v| *v = (*v * 0.9 + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0));
        let p = ExposureParams::new(0.05, 0.02);
        let out = image_loss(&r, &gt, Some(&p), 0.2);
        assert!(out.exposure_applied);
        let h = 1e-7;
        for k in (0..r.data.len()).step_by(7) {
            let mut rp = r.clone();
            rp.data[k] += h;
            let mut rm = r.clone();
            rm.data[k] -= h;
            let num = (image_loss(&rp, &gt, Some(&p), 0.2).loss - image_loss(&rm, &gt, Some(&p), 0.2).loss) / (2.0 * h);
            assert!((num - out.grad_rendered[k]).abs() < 1e-6, "{num} vs {}", out.grad_rendered[k]);
        }
        let f = |a: f64, b: f64| image_loss(&r, &gt, Some(&ExposureParams::new(a, b)), 0.2).loss;
        let na = (f(p.a + h, p.b) - f(p.a - h, p.b)) / (2.0 * h);
        let nb = (f(p.a, p.b + h) - f(p.a, p.b - h)) / (2.0 * h);
        assert!((na - out.grad_exposure[0]).abs() < 1e-6);
        assert!((nb - out.grad_exposure[1]).abs() < 1e-6);
    }

    /// The switch is a hard gate: no gradient to the exposure parameters
    /// flows through the structural threshold itself.
    #[test]
    fn switch_carries_no_gradient() {
        let gt = random_image(7);
        let far = Image::filled(12, 10, 3, 0.0);
        let p = ExposureParams::new(0.1, 0.1);
        let out = image_loss(&far, &gt, Some(&p), 0.2);
        assert!(!out.exposure_applied);
        assert_eq!(out.grad_exposure, [0.0, 0.0]);
    }
}
