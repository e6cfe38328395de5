use super::*;
use crate::gaussians::{logit, normalize_quat, Gaussian};
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cam(w: usize, h: usize) -> Camera {
    Camera::from_pinhole(
        60.0,
        60.0,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        Matrix3::identity(),
        Vector3::zeros(),
        w,
        h,
        0,
    )
    .unwrap()
}

fn disk(z: f64, radius: f64, opacity: f64, color: Vector3<f64>) -> Gaussian {
    Gaussian {
        position: Vector3::new(0.0, 0.0, z),
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: Vector3::new(radius.ln(), radius.ln(), 1e-4f64.ln()),
        opacity_logit: logit(opacity),
        color,
        sh: [Vector3::zeros(); 3],
    }
}

fn cloud_of(gs: Vec<Gaussian>) -> GaussianCloud {
    let mut c = GaussianCloud::default();
    for g in gs {
        c.push(g);
    }
    c
}

/// A single frontal disk yields the exact plane depth at every covered pixel,
/// whatever its opacity.
#[test]
fn frontal_disk_depth_is_unbiased() {
    let camera = cam(32, 32);
    for &op in &[0.1, 0.5, 0.99] {
        let cloud = cloud_of(vec![disk(5.0, 1.0, op, Vector3::repeat(0.5))]);
        let maps = render(&cloud, &camera);
        let mut covered = 0;
        for idx in 0..32 * 32 {
            if maps.accum_alpha[idx] > 1e-6 {
                covered += 1;
                let ray = camera.pixel_ray(&Vector2::new((idx % 32) as f64, (idx / 32) as f64));
                let expected = 5.0 / ray.z;
                assert!((maps.depth[idx] - expected).abs() < 1e-9, "op {op}: {} vs {expected}", maps.depth[idx]);
                let n = maps.normal_at(idx) / maps.accum_alpha[idx];
                assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
            }
        }
        assert!(covered > 100);
        if op < 0.5 {
            assert!(maps.depth_valid.iter().all(|v| !v));
        } else if op > 0.9 {
            assert!(maps.depth_valid.iter().any(|v| *v));
        }
    }
}

#[test]
fn empty_cloud_renders_background() {
    let camera = cam(20, 12);
    let maps = render(&GaussianCloud::default(), &camera);
    assert!(maps.color.data.iter().all(|v| *v == 0.0));
    assert!(maps.accum_alpha.iter().all(|v| *v == 0.0));
    assert!(maps.depth_valid.iter().all(|v| !v));
    assert_eq!(maps.visible_count(), 0);
    let cfg = RenderConfig {
        background: [0.25, 0.5, 0.75],
        ..Default::default()
    };
    let maps = render_with(&GaussianCloud::default(), &camera, &cfg);
    for idx in 0..20 * 12 {
        assert_eq!(maps.color_at(idx), Vector3::new(0.25, 0.5, 0.75));
    }
}

/// A disk over a background mixes the two by its alpha.
#[test]
fn background_shows_through_transmittance() {
    let camera = cam(33, 33);
    let cloud = cloud_of(vec![disk(4.0, 1.0, 0.6, Vector3::new(1.0, 0.0, 0.0))]);
    let cfg = RenderConfig {
        background: [0.0, 0.0, 1.0],
        ..Default::default()
    };
    let maps = render_with(&cloud, &camera, &cfg);
    let c = maps.color_at(maps.pixel_index(16, 16));
    assert!((c - Vector3::new(0.6, 0.0, 0.4)).norm() < 1e-12);
    assert!((maps.accum_alpha[maps.pixel_index(16, 16)] - 0.6).abs() < 1e-12);
}

/// Hand-computed blend of two stacked frontal disks at the principal point.
#[test]
fn two_stacked_disks_match_hand_blend() {
    let camera = cam(33, 33);
    let front = disk(4.0, 1.0, 0.6, Vector3::new(1.0, 0.0, 0.0));
    let back = disk(6.0, 1.0, 0.5, Vector3::new(0.0, 0.0, 1.0));
    let cloud = cloud_of(vec![back, front]);
    let maps = render(&cloud, &camera);
    let idx = maps.pixel_index(16, 16);
    // at the center both falloffs are exactly one
    let (a1, a2) = (0.6, 0.5);
    let w1 = a1;
    let w2 = (1.0 - a1) * a2;
    let c = maps.color_at(idx);
    assert!((c - Vector3::new(w1, 0.0, w2)).norm() < 1e-12);
    assert!((maps.distance[idx] - (-(4.0 * w1) - 6.0 * w2)).abs() < 1e-12);
    assert!((maps.depth_zblend[idx] - (4.0 * w1 + 6.0 * w2)).abs() < 1e-12);
    assert!((maps.accum_alpha[idx] - (w1 + w2)).abs() < 1e-12);
    let n = maps.normal_at(idx);
    let expected_depth = (4.0 * w1 + 6.0 * w2) / (w1 + w2);
    assert!((maps.depth[idx] - expected_depth).abs() < 1e-12);
    assert!((n.z + w1 + w2).abs() < 1e-12);
    assert!(maps.depth_valid[idx]);
}

#[test]
fn opaque_disk_color_saturates_at_alpha_max() {
    let camera = cam(17, 17);
    let c = Vector3::new(0.2, 0.4, 0.8);
    let mut g = disk(3.0, 1.0, 0.5, c);
    g.opacity_logit = 30.0;
    let maps = render(&cloud_of(vec![g]), &camera);
    let got = maps.color_at(maps.pixel_index(8, 8));
    assert!((got - c * 0.99).norm() < 1e-12);
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
    let q = normalize_quat(&[rng.gen_range(0.3..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
    Gaussian {
        position: Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(3.0..5.0)),
        rotation: q,
        log_scale: Vector3::new(rng.gen_range(-2.5..-1.2), rng.gen_range(-2.5..-1.2), rng.gen_range(-5.0..-3.5)),
        opacity_logit: rng.gen_range(-1.5..1.5),
        color: Vector3::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)),
        sh: [
            Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
            Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
            Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
        ],
    }
}

fn random_cloud(seed: u64, n: usize, sh: bool) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = GaussianCloud::default();
    if sh {
        c = c.with_sh();
    }
    for _ in 0..n {
        c.push(random_gaussian(&mut rng));
    }
    c
}

fn maps_bits(m: &RenderMaps) -> Vec<u64> {
    m.color
        .data
        .iter()
        .chain(&m.normal.data)
        .chain(&m.distance)
        .chain(&m.depth)
        .chain(&m.depth_zblend)
        .chain(&m.accum_alpha)
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn render_is_invariant_to_insertion_order() {
    let camera = cam(24, 24);
    let cloud = random_cloud(11, 12, true);
    let maps = render(&cloud, &camera);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    for _ in 0..5 {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut shuffled = GaussianCloud::default().with_sh();
        for &i in &order {
            shuffled.push(cloud.get(i));
        }
        assert_eq!(maps_bits(&render(&shuffled, &camera)), maps_bits(&maps));
    }
}

/// Random dense upstream gradients on every output map.
fn random_upstream(w: usize, h: usize, seed: u64) -> MapGradients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = MapGradients::zeros(w, h);
    for v in g
        .color
        .iter_mut()
        .chain(g.normal.iter_mut())
        .chain(g.distance.iter_mut())
        .chain(g.depth.iter_mut())
        .chain(g.depth_zblend.iter_mut())
        .chain(g.accum_alpha.iter_mut())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    g
}

fn functional(maps: &RenderMaps, g: &MapGradients) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&maps.color.data, &g.color)
        + dot(&maps.normal.data, &g.normal)
        + dot(&maps.distance, &g.distance)
        + dot(&maps.depth, &g.depth)
        + dot(&maps.depth_zblend, &g.depth_zblend)
        + dot(&maps.accum_alpha, &g.accum_alpha)
}

/// Reads or writes scalar parameter `k` of Gaussian `i`: 0..3 position,
/// 3..7 quaternion, 7..10 log scale, 10 opacity logit, 11..14 color,
/// 14..23 SH.
fn param(cloud: &mut GaussianCloud, i: usize, k: usize, delta: f64) {
    match k {
        0..=2 => cloud.positions[i][k] += delta,
        3..=6 => cloud.rotations[i][k - 3] += delta,
        7..=9 => cloud.log_scales[i][k - 7] += delta,
        10 => cloud.opacity_logits[i] += delta,
        11..=13 => cloud.colors[i][k - 11] += delta,
        _ => cloud.sh.as_mut().unwrap()[i][(k - 14) / 3][(k - 14) % 3] += delta,
    }
}

fn analytic(g: &ParamGradients, i: usize, k: usize) -> f64 {
    match k {
        0..=2 => g.positions[i][k],
        3..=6 => g.rotations[i][k - 3],
        7..=9 => g.log_scales[i][k - 7],
        10 => g.opacity_logits[i],
        11..=13 => g.colors[i][k - 11],
        _ => g.sh.as_ref().unwrap()[i][(k - 14) / 3][(k - 14) % 3],
    }
}

/// Compares the analytic gradient against central differences and returns
/// the worst mismatch relative to the largest gradient magnitude.
fn check_gradients(cloud: &GaussianCloud, camera: &Camera, upstream: &MapGradients) -> f64 {
    check_gradients_with(cloud, camera, upstream, &RenderConfig::default())
}

fn check_gradients_with(cloud: &GaussianCloud, camera: &Camera, upstream: &MapGradients, cfg: &RenderConfig) -> f64 {
    let render = |c: &GaussianCloud, cam: &Camera| render_with(c, cam, cfg);
    let maps = render(cloud, camera);
    let grads = backward(cloud, camera, &maps, upstream);
    let n_params = if cloud.sh.is_some() { 23 } else { 14 };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1e-3;
    let mut pairs = Vec::new();
    for i in 0..cloud.len() {
        for k in 0..n_params {
            let mut p = cloud.clone();
            param(&mut p, i, k, h);
            let fp = functional(&render(&p, camera), upstream);
            let mut m = cloud.clone();
            param(&mut m, i, k, -h);
            let fm = functional(&render(&m, camera), upstream);
            let num = (fp - fm) / (2.0 * h);
            let ana = analytic(&grads, i, k);
            scale = scale.max(num.abs()).max(ana.abs());
            pairs.push((num, ana));
        }
    }
    for (num, ana) in pairs {
        worst = worst.max((num - ana).abs());
    }
    worst / scale
}

/// Upstream gradient without the ray-plane depth term, whose denominator
/// makes the functional very stiff near grazing normals.
fn without_depth(mut g: MapGradients) -> MapGradients {
    g.depth.iter_mut().for_each(|v| *v = 0.0);
    g
}

#[test]
fn backward_matches_finite_differences() {
    let camera = cam(16, 16);
    for seed in 0..4 {
        let cloud = random_cloud(100 + seed, 5, seed % 2 == 0);
        let up = without_depth(random_upstream(16, 16, seed));
        let err = check_gradients(&cloud, &camera, &up);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn background_gradients_match_finite_differences() {
    let camera = cam(16, 16);
    let cfg = RenderConfig {
        background: [0.3, 0.9, 0.55],
        ..Default::default()
    };
    for seed in 0..2 {
        let cloud = random_cloud(40 + seed, 5, false);
        let mut up = MapGradients::zeros(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        up.color.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let err = check_gradients_with(&cloud, &camera, &up, &cfg);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn backward_depth_term_matches_finite_differences() {
    let camera = cam(16, 16);
    // opaque-ish, mostly frontal so |N · ray| stays well away from zero
    let mut cloud = random_cloud(7, 4, false);
    for i in 0..cloud.len() {
        cloud.opacity_logits[i] = 2.0;
    }
    let mut up = MapGradients::zeros(16, 16);
    let maps = render(&cloud, &camera);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for idx in 0..256 {
        if maps.depth_valid[idx] {
            up.depth[idx] = rng.gen_range(-1.0..1.0);
        }
    }
    let err = check_gradients(&cloud, &camera, &up);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let camera = cam(16, 16);
    let cloud = random_cloud(5, 6, true);
    let maps = render(&cloud, &camera);
    let g = backward(&cloud, &camera, &maps, &MapGradients::zeros(16, 16));
    assert_eq!(g, {
        let mut z = ParamGradients::zeros(&cloud, 0);
        z.visible = g.visible.clone();
        z
    });
}

#[test]
fn backward_is_deterministic() {
    let camera = cam(40, 24);
    let cloud = random_cloud(21, 30, false);
    let maps = render(&cloud, &camera);
    let up = random_upstream(40, 24, 1);
    let a = backward(&cloud, &camera, &maps, &up);
    let b = backward(&cloud, &camera, &maps, &up);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_match_on_random_scenes(seed in 0u64..10_000) {
        let camera = cam(16, 16);
        let cloud = random_cloud(seed, 5, false);
        let up = without_depth(random_upstream(16, 16, seed ^ 0x55));
        let err = check_gradients(&cloud, &camera, &up);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn accumulated_alpha_stays_in_unit_interval(seed in 0u64..10_000) {
        let camera = cam(16, 16);
        let maps = render(&random_cloud(seed, 8, true), &camera);
        for &a in &maps.accum_alpha {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        for c in &maps.color.data {
            prop_assert!(*c >= 0.0 && *c <= 1.0 + 1e-12);
        }
    }
}
