//! Per-image affine exposure model `exp(a) · I + b`.

use serde::{Deserialize, Serialize};

use crate::image_buf::Image;

/// Log-gain `a` and bias `b` of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureParams {
    pub a: f64,
    pub b: f64,
}

impl ExposureParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn gain(&self) -> f64 {
        self.a.exp()
    }
}

pub fn exposure_adjust(rendered: &Image, params: &ExposureParams) -> Image {
    let g = params.gain();
    let mut out = rendered.clone();
    for v in &mut out.data {
        *v = g * *v + params.b;
    }
    out
}

/// Pulls a gradient on the adjusted image back to the rendered image and to
/// `(a, b)`.
pub fn exposure_backward(rendered: &Image, params: &ExposureParams, grad_adjusted: &[f64]) -> (Vec<f64>, [f64; 2]) {
    assert_eq!(grad_adjusted.len(), rendered.data.len());
    let g = params.gain();
    let mut da = 0.0;
    let mut db = 0.0;
    let grad = rendered
        .data
        .iter()
        .zip(grad_adjusted)
        .map(|(&i, &d)| {
            da += d * g * i;
            db += d;
            d * g
        })
        .collect();
    (grad, [da, db])
}
