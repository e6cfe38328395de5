//! Training objectives. Every loss returns its value together with gradients
//! on the rendered maps (or images) it reads; [`crate::render::backward`]
//! carries those to the Gaussian parameters.

mod exposure;
mod image;
mod multiview;
mod single_view;
mod ssim;

pub use exposure::{exposure_adjust, exposure_backward, ExposureParams};
pub use image::{image_loss, ImageLoss, EXPOSURE_SWITCH};
pub use multiview::{
    multiview_geometric_loss, multiview_losses, multiview_photometric_loss, ncc, occlusion_weight, round_trip_errors,
    MultiViewLoss,
    MultiViewNormalization, MultiViewParams,
};
pub(crate) use multiview::evaluate as multiview_losses_with_weight;
pub use single_view::{depth_normal, edge_weights, single_view_loss, SingleViewLoss};
pub use ssim::{ssim, ssim_with_grad, SSIM_C1, SSIM_C2};

use serde::{Deserialize, Serialize};

/// Mixing weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Share of the structural term inside the color loss.
    pub ssim: f64,
    pub flatten: f64,
    pub single_view: f64,
    pub mv_photometric: f64,
    pub mv_geometric: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.2,
            flatten: 100.0,
            single_view: 0.015,
            mv_photometric: 0.15,
            mv_geometric: 0.03,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.ssim, self.flatten, self.single_view, self.mv_photometric, self.mv_geometric];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.ssim > 1.0 {
            return Err(crate::Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    /// Color and flattening only.
    pub fn without_geometry(self) -> Self {
        Self {
            single_view: 0.0,
            mv_photometric: 0.0,
            mv_geometric: 0.0,
            ..self
        }
    }
}

/// Unweighted values of each objective for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub flatten: f64,
    pub single_view: f64,
    pub mv_photometric: f64,
    pub mv_geometric: f64,
}

/// `rgb + λ1 flatten + λ2 single_view + λ3 mv_photometric + λ4 mv_geometric`.
/// The color term already contains its own structural mix.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> f64 {
    terms.rgb
        + weights.flatten * terms.flatten
        + weights.single_view * terms.single_view
        + weights.mv_photometric * terms.mv_photometric
        + weights.mv_geometric * terms.mv_geometric
}
