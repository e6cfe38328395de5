//! Cloud initialization and adaptive density control.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fusion::Grid;
use crate::gaussians::{logit, Gaussian, GaussianCloud};
use crate::render::ParamGradients;
use crate::scenes::PointSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub interval: usize,
    /// First iteration at which densification may run.
    pub start: usize,
    /// Densification stops after this fraction of the iterations.
    pub stop_fraction: f64,
    /// Threshold on the mean absolute screen-space positional gradient.
    pub grad_threshold: f64,
    /// Gaussians larger than this fraction of the scene extent are split,
    /// smaller ones cloned.
    pub split_scale_fraction: f64,
    pub prune_opacity: f64,
    /// Hard cap on the number of Gaussians.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            stop_fraction: 0.6,
            grad_threshold: 0.0004,
            split_scale_fraction: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 50_000,
        }
    }
}

/// Screen-space gradient statistics gathered between densification calls.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
    /// Summed world-space positional gradients, for clone offsets.
    pub position_grad: Vec<Vector3<f64>>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            views: vec![0; n],
            position_grad: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_sum.is_empty()
    }

    /// Adds one rendered view's statistics.
    pub fn record(&mut self, grads: &ParamGradients) {
        for i in 0..self.len() {
            if grads.visible[i] {
                self.grad_sum[i] += grads.mean2d_abs[i];
                self.views[i] += 1;
                self.position_grad[i] += grads.positions[i];
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }
}

/// What one densification call did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Result of an edit: which old Gaussians survive (in order) and how many
/// were appended after them.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudEdit {
    pub keep: Vec<bool>,
    pub added: usize,
    pub report: DensifyReport,
}

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// reaches the threshold, then prunes transparent ones. Clones are offset
/// against the accumulated positional gradient by half their largest scale;
/// a split replaces a Gaussian by two samples from it with scales divided by
/// 1.6.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &DensifyStats,
    config: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> CloudEdit {
    let n = cloud.len();
    assert_eq!(stats.len(), n);
    let split_at = config.split_scale_fraction * extent;
    let mut candidates: Vec<(f64, usize)> = (0..n)
        .map(|i| (stats.mean(i), i))
        .filter(|(g, _)| *g >= config.grad_threshold)
        .collect();
    // highest gradients first when the cap bites
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut budget = config.max_gaussians.saturating_sub(n);
    let mut split = vec![false; n];
    let mut new = Vec::new();
    let mut report = DensifyReport::default();
    for &(_, i) in &candidates {
        if budget == 0 {
            break;
        }
        let g = cloud.get(i);
        let scales = cloud.scales(i);
        let largest = scales.max();
        if largest > split_at {
            let rot = cloud.rotation_matrix(i);
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                new.push(Gaussian {
                    position: g.position + rot * scales.component_mul(&z),
                    log_scale: g.log_scale.map(|s| s - 1.6f64.ln()),
                    ..g.clone()
                });
            }
            split[i] = true;
            report.split += 1;
            budget = budget.saturating_sub(1);
        } else {
            let dir = stats.position_grad[i].try_normalize(1e-300).unwrap_or_else(Vector3::zeros);
            new.push(Gaussian {
                position: g.position - dir * (0.5 * largest),
                ..g
            });
            report.cloned += 1;
            budget -= 1;
        }
    }

    let keep: Vec<bool> = (0..n)
        .map(|i| !split[i] && cloud.opacity(i) >= config.prune_opacity)
        .collect();
    report.pruned = (0..n).filter(|&i| !split[i] && !keep[i]).count();
    let new: Vec<Gaussian> = new
        .into_iter()
        .filter(|g| crate::gaussians::sigmoid(g.opacity_logit) >= config.prune_opacity)
        .collect();
    cloud.retain_mask(&keep);
    let added = new.len();
    for g in new {
        cloud.push(g);
    }
    CloudEdit { keep, added, report }
}

/// One Gaussian per point: isotropic scale equal to the mean distance to
/// the three nearest other points, opacity 0.1, identity rotation and the
/// point color as base color. With fewer than four points the scale falls
/// back to `extent / 100`.
pub fn init_from_points(points: &PointSet, extent: f64) -> GaussianCloud {
    let n = points.len();
    let fallback = extent / 100.0;
    let scales: Vec<f64> = if n < 4 {
        vec![fallback; n]
    } else {
        let boxes: Vec<_> = points.positions.iter().map(|p| (*p, *p)).collect();
        let (lo, hi) = boxes.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), (p, _)| (lo.inf(p), hi.sup(p)),
        );
        let cell = (hi - lo).max() / (n as f64).cbrt();
        let grid = Grid::build(&boxes, cell);
        (0..n)
            .map(|i| {
                let p = points.positions[i];
                let near = grid.k_nearest(&p, 3, |j| (j as usize != i).then(|| (points.positions[j as usize] - p).norm()));
                let mean = near.iter().sum::<f64>() / near.len().max(1) as f64;
                if mean > 0.0 {
                    mean
                } else {
                    fallback
                }
            })
            .collect()
    };
    let mut cloud = GaussianCloud::default();
    for i in 0..n {
        cloud.push(Gaussian {
            position: points.positions[i],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scales[i].ln()),
            opacity_logit: logit(0.1),
            color: points.colors[i],
            sh: [Vector3::zeros(); 3],
        });
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_points(h: f64) -> PointSet {
        let mut p = PointSet::default();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..6 {
                    p.positions.push(Vector3::new(x as f64, y as f64, z as f64) * h);
                    p.colors.push(Vector3::new(0.1 * x as f64, 0.2, 0.3));
                }
            }
        }
        p
    }

    /// Brute-force mean distance to the three nearest neighbors.
    fn knn_oracle(points: &[Vector3<f64>], i: usize) -> f64 {
        let mut d: Vec<f64> = points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (q - points[i]).norm()).collect();
        d.sort_by(f64::total_cmp);
        d[..3].iter().sum::<f64>() / 3.0
    }

    #[test]
    fn grid_spacing_gives_unit_spacing_scales() {
        let pts = grid_points(0.25);
        let cloud = init_from_points(&pts, 10.0);
        assert_eq!(cloud.len(), 216);
        for i in 0..cloud.len() {
            assert!((cloud.scales(i) - Vector3::repeat(0.25)).abs().max() < 1e-12);
            assert_eq!(cloud.rotations[i], [1.0, 0.0, 0.0, 0.0]);
            assert!((cloud.opacity(i) - 0.1).abs() < 1e-12);
            assert_eq!(cloud.colors[i], pts.colors[i]);
        }
    }

    #[test]
    fn random_points_match_brute_force_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = PointSet::default();
        for _ in 0..300 {
            pts.positions.push(Vector3::new(rng.gen::<f64>() * 3.0, rng.gen::<f64>(), rng.gen::<f64>() * 0.1));
            pts.colors.push(Vector3::zeros());
        }
        let cloud = init_from_points(&pts, 1.0);
        for i in 0..300 {
            assert!((cloud.scales(i).x - knn_oracle(&pts.positions, i)).abs() < 1e-12, "point {i}");
        }
    }

    #[test]
    fn few_points_use_the_fallback_scale() {
        let mut pts = PointSet::default();
        pts.positions.push(Vector3::new(1.0, 2.0, 3.0));
        pts.colors.push(Vector3::new(0.2, 0.4, 0.6));
        let cloud = init_from_points(&pts, 5.0);
        assert_eq!(cloud.len(), 1);
        assert!((cloud.scales(0).x - 0.05).abs() < 1e-15);
        assert_eq!(cloud.colors[0], Vector3::new(0.2, 0.4, 0.6));
    }

    fn cloud_of(opacities: &[f64], scale: f64) -> GaussianCloud {
        let mut c = GaussianCloud::default();
        for (i, &o) in opacities.iter().enumerate() {
            c.push(Gaussian {
                position: Vector3::new(i as f64, 0.0, 0.0),
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: Vector3::repeat(scale.ln()),
                opacity_logit: logit(o),
                color: Vector3::repeat(0.5),
                sh: [Vector3::zeros(); 3],
            });
        }
        c
    }

    #[test]
    fn zero_gradients_only_prune() {
        let mut c = cloud_of(&[0.5, 0.004, 0.9], 0.01);
        let before = c.clone();
        let stats = DensifyStats::new(3);
        let edit = densify_and_prune(&mut c, &stats, &DensifyConfig::default(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(edit.report, DensifyReport { cloned: 0, split: 0, pruned: 1 });
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(0), before.get(0));
        assert_eq!(c.get(1), before.get(2));
    }

    #[test]
    fn small_gaussian_above_threshold_is_cloned_against_the_gradient() {
        let mut c = cloud_of(&[0.5, 0.5], 0.001);
        let mut stats = DensifyStats::new(2);
        stats.grad_sum[1] = 0.01;
        stats.views[1] = 2;
        stats.position_grad[1] = Vector3::new(0.0, 3.0, 0.0);
        let edit = densify_and_prune(&mut c, &stats, &DensifyConfig::default(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(edit.report.cloned, 1);
        assert_eq!(c.len(), 3);
        assert_eq!(edit.added, 1);
        let clone = c.get(2);
        assert!((clone.position - Vector3::new(1.0, -0.0005, 0.0)).norm() < 1e-15);
        assert_eq!(clone.log_scale, c.log_scales[1]);
    }

    #[test]
    fn large_gaussian_is_split_in_two() {
        let mut c = cloud_of(&[0.5, 0.5], 0.2);
        let mut stats = DensifyStats::new(2);
        stats.grad_sum[0] = 0.001;
        stats.views[0] = 1;
        let edit = densify_and_prune(&mut c, &stats, &DensifyConfig::default(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(edit.report.split, 1);
        assert_eq!(edit.keep, vec![false, true]);
        assert_eq!(c.len(), 3);
        for i in 1..3 {
            assert!((c.scales(i).x - 0.2 / 1.6).abs() < 1e-12);
            assert!(c.positions[i].norm() < 1.0);
        }
    }

    #[test]
    fn cap_limits_growth_to_the_strongest_gradients() {
        let mut c = cloud_of(&[0.5, 0.5, 0.5], 0.001);
        let mut stats = DensifyStats::new(3);
        stats.grad_sum = vec![0.001, 0.003, 0.002];
        stats.views = vec![1, 1, 1];
        let cfg = DensifyConfig {
            max_gaussians: 4,
            ..Default::default()
        };
        densify_and_prune(&mut c, &stats, &cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c.len(), 4);
        assert_eq!(c.positions[3], Vector3::new(1.0, 0.0, 0.0));
    }
}
