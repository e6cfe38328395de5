//! Structural similarity with an 11×11 Gaussian window (σ = 1.5) and
//! zero-padded borders, averaged over pixels and channels.

use crate::image_buf::Image;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn window() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same" convolution of a single-channel plane with zero padding.
/// The window is symmetric, so this is also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM and, if requested, its gradient with respect to `a`.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert!(a.same_shape(b), "ssim: shape mismatch");
    let (w, h, ch) = (a.width, a.height, a.channels);
    let n = w * h;
    if n == 0 {
        return (1.0, want_grad.then(Vec::new));
    }
    let k = window();
    let inv = 1.0 / (n * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..ch {
        let pa = plane(a, c);
        let pb = plane(b, c);
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = blur(&pa, w, h, &k);
        let mu_b = blur(&pb, w, h, &k);
        let e_aa = blur(&sq(&pa, &pa), w, h, &k);
        let e_bb = blur(&sq(&pb, &pb), w, h, &k);
        let e_ab = blur(&sq(&pa, &pb), w, h, &k);
        let mut d_mu = vec![0.0; n];
        let mut d_aa = vec![0.0; n];
        let mut d_ab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = var_a + var_b + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mu[i] = inv * (2.0 * mb * (a2 - a1) / (b1 * b2) - 2.0 * ma * s * (1.0 / b1 - 1.0 / b2));
                d_aa[i] = -inv * s / b2;
                d_ab[i] = inv * 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = &mut grad {
            let g_mu = blur(&d_mu, w, h, &k);
            let g_aa = blur(&d_aa, w, h, &k);
            let g_ab = blur(&d_ab, w, h, &k);
            for i in 0..n {
                g[i * ch + c] = g_mu[i] + 2.0 * pa[i] * g_aa[i] + pb[i] * g_ab[i];
            }
        }
    }
    (total * inv, grad)
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_impl(a, b, false).0
}

/// SSIM together with its gradient with respect to the first image.
pub fn ssim_with_grad(a: &Image, b: &Image) -> (f64, Vec<f64>) {
    let (s, g) = ssim_impl(a, b, true);
    (s, g.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-pixel evaluation with a full 2D window.
    fn reference_ssim(a: &Image, b: &Image) -> f64 {
        let (w, h, ch) = (a.width as isize, a.height as isize, a.channels);
        let mut g = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11isize {
                        for j in 0..11isize {
                            let (yy, xx) = (y + i - 5, x + j - 5);
                            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                continue;
                            }
                            let wt = g[i as usize][j as usize] / s;
                            let va = a.get(xx as usize, yy as usize, c);
                            let vb = b.get(xx as usize, yy as usize, c);
                            ma += wt * va;
                            mb += wt * vb;
                            aa += wt * va * va;
                            bb += wt * vb * vb;
                            ab += wt * va * vb;
                        }
                    }
                    let num = (2.0 * ma * mb + 1e-4) * (2.0 * (ab - ma * mb) + 9e-4);
                    let den = (ma * ma + mb * mb + 1e-4) * ((aa - ma * ma) + (bb - mb * mb) + 9e-4);
                    total += num / den;
                }
            }
        }
        total / (a.width * a.height * ch) as f64
    }

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.gen())
    }

    #[test]
    fn identical_images_score_one() {
        let a = random_image(1, 13, 9, 3);
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_vs_inverse_is_negative() {
        let a = Image::from_fn(8, 8, 1, |x, y, _| ((x + y) % 2) as f64);
        let b = Image::from_fn(8, 8, 1, |x, y, _| 1.0 - ((x + y) % 2) as f64);
        assert!(ssim(&a, &b) < 0.0);
    }

    #[test]
    fn constant_offset_matches_reference() {
        let a = Image::filled(12, 10, 1, 0.4);
        let b = Image::filled(12, 10, 1, 0.5);
        assert!((ssim(&a, &b) - reference_ssim(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn random_images_match_reference_and_are_symmetric() {
        let a = random_image(2, 15, 11, 3);
        let b = random_image(3, 15, 11, 3);
        let s = ssim(&a, &b);
        assert!((s - reference_ssim(&a, &b)).abs() < 1e-9);
        assert!((s - ssim(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(4, 9, 7, 2);
        let b = random_image(5, 9, 7, 2);
        let (_, g) = ssim_with_grad(&a, &b);
        let h = 1e-6;
        for k in (0..a.data.len()).step_by(5) {
            let mut p = a.clone();
            p.data[k] += h;
            let mut m = a.clone();
            m.data[k] -= h;
            let num = (ssim(&p, &b) - ssim(&m, &b)) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-7, "k {k}: {num} vs {}", g[k]);
        }
    }
}
