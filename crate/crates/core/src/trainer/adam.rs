//! Adaptive first/second-moment optimizer over the cloud's parameter
//! classes.

use nalgebra::Vector3;

use crate::gaussians::GaussianCloud;
use crate::render::ParamGradients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments of one parameter class, `width` scalars per
/// Gaussian.
#[derive(Clone, Debug, PartialEq)]
struct Moments {
    width: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(width: usize, n: usize) -> Self {
        Self {
            width,
            m: vec![0.0; width * n],
            v: vec![0.0; width * n],
        }
    }

    fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        lr: f64,
        hyper: &AdamHyper,
        bias: (f64, f64),
    ) {
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bias.0;
            let v_hat = *v / bias.1;
            *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }

    fn select(&mut self, keep: &[bool], added: usize) {
        let w = self.width;
        let mut m = Vec::with_capacity(self.m.len() + w * added);
        let mut v = Vec::with_capacity(self.v.len() + w * added);
        for (i, &k) in keep.iter().enumerate() {
            if k {
                m.extend_from_slice(&self.m[w * i..w * (i + 1)]);
                v.extend_from_slice(&self.v[w * i..w * (i + 1)]);
            }
        }
        m.resize(m.len() + w * added, 0.0);
        v.resize(v.len() + w * added, 0.0);
        self.m = m;
        self.v = v;
    }
}

/// Learning rate per parameter class for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub sh: f64,
}

/// Optimizer state for a [`GaussianCloud`]. The step count is shared by all
/// Gaussians; entries added by densification start with zero moments.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudAdam {
    hyper: AdamHyper,
    step: u64,
    positions: Moments,
    rotations: Moments,
    scales: Moments,
    opacity: Moments,
    colors: Moments,
    sh: Moments,
}

fn flat3(v: &[Vector3<f64>]) -> impl Iterator<Item = f64> + '_ {
    v.iter().flat_map(|x| x.iter().copied())
}

fn flat3_mut(v: &mut [Vector3<f64>]) -> impl Iterator<Item = &mut f64> {
    v.iter_mut().flat_map(|x| x.iter_mut())
}

impl CloudAdam {
    pub fn new(n: usize, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            step: 0,
            positions: Moments::new(3, n),
            rotations: Moments::new(4, n),
            scales: Moments::new(3, n),
            opacity: Moments::new(1, n),
            colors: Moments::new(3, n),
            sh: Moments::new(9, n),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.opacity.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &ParamGradients, rates: &StepRates) {
        assert_eq!(cloud.len(), grads.len());
        assert_eq!(cloud.len(), self.len());
        self.step += 1;
        let t = self.step as i32;
        let bias = (1.0 - self.hyper.beta1.powi(t), 1.0 - self.hyper.beta2.powi(t));
        let h = self.hyper;
        self.positions
            .step(flat3_mut(&mut cloud.positions), flat3(&grads.positions), rates.position, &h, bias);
        self.rotations.step(
            cloud.rotations.iter_mut().flat_map(|q| q.iter_mut()),
            grads.rotations.iter().flat_map(|q| q.iter().copied()),
            rates.rotation,
            &h,
            bias,
        );
        self.scales
            .step(flat3_mut(&mut cloud.log_scales), flat3(&grads.log_scales), rates.scale, &h, bias);
        self.opacity.step(
            cloud.opacity_logits.iter_mut(),
            grads.opacity_logits.iter().copied(),
            rates.opacity,
            &h,
            bias,
        );
        self.colors
            .step(flat3_mut(&mut cloud.colors), flat3(&grads.colors), rates.color, &h, bias);
        if let (Some(sh), Some(g)) = (&mut cloud.sh, &grads.sh) {
            self.sh.step(
                sh.iter_mut().flat_map(|c| c.iter_mut().flat_map(|v| v.iter_mut())),
                g.iter().flat_map(|c| c.iter().flat_map(|v| v.iter().copied())),
                rates.sh,
                &h,
                bias,
            );
        }
    }

    /// Mirrors a cloud edit: keeps the masked entries in order, then appends
    /// `added` fresh ones.
    pub fn select(&mut self, keep: &[bool], added: usize) {
        for m in [
            &mut self.positions,
            &mut self.rotations,
            &mut self.scales,
            &mut self.opacity,
            &mut self.colors,
            &mut self.sh,
        ] {
            m.select(keep, added);
        }
    }
}

/// Per-image optimizer state for the exposure parameters; each image keeps
/// its own step count and is only updated when it is rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureAdam {
    hyper: AdamHyper,
    state: Vec<(u64, Moments)>,
}

impl ExposureAdam {
    pub fn new(n_images: usize, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            state: (0..n_images).map(|_| (0, Moments::new(2, 1))).collect(),
        }
    }

    pub fn step(&mut self, image: usize, params: &mut [f64; 2], grad: [f64; 2], lr: f64) {
        let (step, m) = &mut self.state[image];
        *step += 1;
        let t = *step as i32;
        let bias = (1.0 - self.hyper.beta1.powi(t), 1.0 - self.hyper.beta2.powi(t));
        m.step(params.iter_mut(), grad.into_iter(), lr, &self.hyper, bias);
    }
}
