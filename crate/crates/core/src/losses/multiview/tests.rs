use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 32;
const H: usize = 24;

fn camera(center: Vector3<f64>, yaw_deg: f64, id: u32) -> Camera {
    let t = yaw_deg.to_radians();
    let r = Matrix3::new(t.cos(), 0.0, t.sin(), 0.0, 1.0, 0.0, -t.sin(), 0.0, t.cos());
    Camera::from_pinhole(50.0, 50.0, 15.5, 11.5, r, center, W, H, id).unwrap()
}

/// Maps of the world plane `{X : n · X = c}` seen from `cam`, with blended
/// quantities scaled by `opacity` and only pixels in `valid` marked opaque.
fn plane_maps(cam: &Camera, n: Vector3<f64>, c: f64, opacity: f64, valid: impl Fn(usize, usize) -> bool) -> RenderMaps {
    let mut n_cam = cam.rotation().transpose() * n;
    let mut d = c - n.dot(cam.center());
    if d > 0.0 {
        n_cam = -n_cam;
        d = -d;
    }
    let normal = Image::from_fn(W, H, 3, |_, _, k| n_cam[k] * opacity);
    let accum = (0..W * H).map(|i| if valid(i % W, i / W) { 1.0 } else { 0.0 }).collect();
    RenderMaps::from_parts(cam, Image::new(W, H, 3), normal, vec![d * opacity; W * H], accum)
}

fn all(_: usize, _: usize) -> bool {
    true
}

fn unit_weight(phi: f64) -> f64 {
    if phi < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// World-space round trip: cast the reference pixel onto the reference
/// plane, project into the neighbor, cast from there onto the neighbor's
/// plane and project back.
fn oracle_phi(
    reference: &Camera,
    neighbor: &Camera,
    p: Vector2<f64>,
    ref_plane: (Vector3<f64>, f64),
    nbr_plane: (Vector3<f64>, f64),
) -> f64 {
    let cast = |cam: &Camera, q: Vector2<f64>, (n, c): (Vector3<f64>, f64)| {
        let dir = cam.rotation() * cam.pixel_ray(&q);
        let t = (c - n.dot(cam.center())) / n.dot(&dir);
        cam.center() + dir * t
    };
    let x = cast(reference, p, ref_plane);
    let q = neighbor.project(&neighbor.world_to_camera(&x));
    let x2 = cast(neighbor, q, nbr_plane);
    let back = reference.project(&reference.world_to_camera(&x2));
    (back - p).norm()
}

#[test]
fn weight_and_bound() {
    assert_eq!(occlusion_weight(1.0), 0.0);
    assert_eq!(occlusion_weight(3.0), 0.0);
    assert!((0.5 * occlusion_weight(0.5) - 0.303_265_329_856_316_7).abs() < 1e-15);
    let mut phi = 0.0;
    while phi < 1.0 {
        assert!(phi * occlusion_weight(phi) <= (-1.0f64).exp() + 1e-15);
        phi += 1e-3;
    }
}

#[test]
fn consistent_planes_have_zero_error() {
    let n = Vector3::new(0.2, -0.1, -1.0).normalize();
    let c = n.dot(&Vector3::new(0.0, 0.0, 5.0));
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.6, 0.1, 0.2), -6.0, 1);
    let rm = plane_maps(&r, n, c, 0.8, all);
    let nm = plane_maps(&nb, n, c, 0.6, all);
    let out = multiview_geometric_loss(&rm, &nm, &r, &nb, &MultiViewParams::default());
    assert!(out.geometric_count > 100);
    assert!(out.geometric < 1e-9, "{}", out.geometric);
}

#[test]
fn half_pixel_error_single_contributor() {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.5, 0.0, 0.0), 0.0, 1);
    let n = Vector3::new(0.0, 0.0, 1.0);
    let p = Vector2::new(16.0, 12.0);
    // find the neighbor plane offset giving a round-trip error of half a pixel
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_phi(&r, &nb, p, (n, 5.0), (n, 5.0 + mid)) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rm = plane_maps(&r, n, 5.0, 1.0, |x, y| (x, y) == (16, 12));
    let nm = plane_maps(&nb, n, 5.0 + lo, 1.0, all);
    let out = multiview_geometric_loss(&rm, &nm, &r, &nb, &MultiViewParams::default());
    assert_eq!(out.geometric_count, 1);
    assert!((out.geometric - 0.5 * (-0.5f64).exp()).abs() < 1e-9, "{}", out.geometric);
    assert!((out.geometric - 0.3033).abs() < 1e-4);
}

#[test]
fn large_errors_are_masked() {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.5, 0.0, 0.0), 0.0, 1);
    let n = Vector3::new(0.0, 0.0, 1.0);
    let rm = plane_maps(&r, n, 5.0, 1.0, all);
    let nm = plane_maps(&nb, n, 10.0, 1.0, all);
    let out = multiview_geometric_loss(&rm, &nm, &r, &nb, &MultiViewParams::default());
    assert_eq!(out.geometric, 0.0);
    assert_eq!(out.geometric_count, 0);
    assert!(out.geometric_ref.is_zero() && out.geometric_nbr.is_zero());
}

#[test]
fn phi_matches_world_space_oracle() {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.4, -0.1, 0.1), -4.0, 1);
    let n_r = Vector3::new(0.1, 0.05, -1.0).normalize();
    let n_n = Vector3::new(0.12, 0.05, -1.0).normalize();
    let c_r = n_r.dot(&Vector3::new(0.0, 0.0, 5.0));
    let c_n = n_n.dot(&Vector3::new(0.0, 0.0, 5.05));
    let nm = plane_maps(&nb, n_n, c_n, 1.0, all);
    for &(x, y) in &[(10usize, 8usize), (20, 15), (5, 20)] {
        let rm = plane_maps(&r, n_r, c_r, 1.0, |u, v| (u, v) == (x, y));
        let out = evaluate(&rm, &nm, &r, &nb, None, &MultiViewParams::default(), unit_weight);
        let phi = oracle_phi(&r, &nb, Vector2::new(x as f64, y as f64), (n_r, c_r), (n_n, c_n));
        assert!(phi < 1.0 && phi > 1e-3);
        assert!((out.geometric - phi).abs() < 1e-9, "{} vs {phi}", out.geometric);
    }
}

#[test]
fn per_pixel_errors_match_world_space_oracle() {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.4, -0.1, 0.1), -4.0, 1);
    let n_r = Vector3::new(0.1, 0.05, -1.0).normalize();
    let n_n = Vector3::new(0.12, 0.05, -1.0).normalize();
    let c_r = n_r.dot(&Vector3::new(0.0, 0.0, 5.0));
    let c_n = n_n.dot(&Vector3::new(0.0, 0.0, 5.05));
    let rm = plane_maps(&r, n_r, c_r, 1.0, |x, _| x != 3);
    let nm = plane_maps(&nb, n_n, c_n, 1.0, all);
    let errors = round_trip_errors(&rm, &nm, &r, &nb);
    let mut seen = 0;
    for (idx, e) in errors.iter().enumerate() {
        let (x, y) = (idx % W, idx / W);
        if x == 3 {
            assert!(e.is_none());
        }
        if let Some(e) = e {
            let phi = oracle_phi(&r, &nb, Vector2::new(x as f64, y as f64), (n_r, c_r), (n_n, c_n));
            assert!((e - phi).abs() < 1e-9);
            seen += 1;
        }
    }
    assert!(seen > W * H / 2);
}

fn perturbed_pair(seed: u64) -> (Camera, Camera, RenderMaps, RenderMaps) {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.4, -0.1, 0.1), -4.0, 1);
    let n = Vector3::new(0.1, 0.05, -1.0).normalize();
    let c = n.dot(&Vector3::new(0.0, 0.0, 5.0));
    let mut rm = plane_maps(&r, n, c, 0.9, all);
    let mut nm = plane_maps(&nb, n, c - 0.03, 0.9, all);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in [&mut rm, &mut nm] {
        for v in &mut m.normal.data {
            *v += rng.gen_range(-0.02..0.02);
        }
        for v in &mut m.distance {
            *v *= 1.0 + rng.gen_range(-0.01..0.01);
        }
    }
    (r, nb, rm, nm)
}

fn texture(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (0.45 * x).sin() * (0.3 * y + 0.4).cos() + 0.1 * (0.2 * x + 0.25 * y).sin()
}

fn fd_check(f: &dyn Fn(&RenderMaps, &RenderMaps) -> f64, grads: (&MapGradients, &MapGradients), rm: &RenderMaps, nm: &RenderMaps, which: usize) {
    let h = 1e-7;
    let base = if which == 0 { rm } else { nm };
    let g = if which == 0 { grads.0 } else { grads.1 };
    let eval = |k: usize, field: usize, delta: f64| {
        let mut m = base.clone();
        if field < 3 {
            m.normal.data[3 * k + field] += delta;
        } else {
            m.distance[k] += delta;
        }
        if which == 0 {
            f(&m, nm)
        } else {
            f(rm, &m)
        }
    };
    let mut checked = 0;
    for k in (0..W * H).step_by(13) {
        for field in 0..4 {
            let num = (eval(k, field, h) - eval(k, field, -h)) / (2.0 * h);
            let ana = if field < 3 { g.normal[3 * k + field] } else { g.distance[k] };
            assert!((num - ana).abs() <= 1e-5 * num.abs().max(1e-3), "pixel {k} field {field}: {num} vs {ana}");
            checked += (ana != 0.0) as usize;
        }
    }
    assert!(checked > 20);
}

#[test]
fn geometric_gradients_match_finite_differences() {
    let (r, nb, rm, nm) = perturbed_pair(1);
    let params = MultiViewParams::default();
    let out = evaluate(&rm, &nm, &r, &nb, None, &params, unit_weight);
    assert!(out.geometric > 0.01);
    let f = |a: &RenderMaps, b: &RenderMaps| evaluate(a, b, &r, &nb, None, &params, unit_weight).geometric;
    fd_check(&f, (&out.geometric_ref, &out.geometric_nbr), &rm, &nm, 0);
    fd_check(&f, (&out.geometric_ref, &out.geometric_nbr), &rm, &nm, 1);
}

#[test]
fn photometric_gradients_match_finite_differences() {
    let (r, nb, rm, nm) = perturbed_pair(2);
    let rg = Image::from_fn(W, H, 1, |x, y, _| texture(x as f64, y as f64));
    let ng = Image::from_fn(W, H, 1, |x, y, _| texture(x as f64 + 3.3, y as f64 * 1.1 - 0.5));
    let params = MultiViewParams::default();
    let out = evaluate(&rm, &nm, &r, &nb, Some((&rg, &ng)), &params, unit_weight);
    assert!(out.photometric_count > 50);
    let f = |a: &RenderMaps, b: &RenderMaps| evaluate(a, b, &r, &nb, Some((&rg, &ng)), &params, unit_weight).photometric;
    fd_check(&f, (&out.photometric_ref, &MapGradients::for_maps(&nm)), &rm, &nm, 0);
}

/// Neighbor shifted sideways so the frontal plane induces an exact
/// two-pixel disparity.
fn shifted_pair() -> (Camera, Camera, RenderMaps, RenderMaps) {
    let r = camera(Vector3::zeros(), 0.0, 0);
    let nb = camera(Vector3::new(0.2, 0.0, 0.0), 0.0, 1);
    let n = Vector3::new(0.0, 0.0, 1.0);
    let rm = plane_maps(&r, n, 5.0, 1.0, all);
    let nm = plane_maps(&nb, n, 5.0, 1.0, all);
    (r, nb, rm, nm)
}

#[test]
fn matching_views_have_zero_photometric_loss() {
    let (r, nb, rm, nm) = shifted_pair();
    let rg = Image::from_fn(W, H, 1, |x, y, _| texture(x as f64, y as f64));
    for (gain, bias) in [(1.0, 0.0), (0.5, 0.2)] {
        let ng = Image::from_fn(W, H, 1, |x, y, _| gain * texture(x as f64 + 2.0, y as f64) + bias);
        let out = multiview_photometric_loss(&rg, &ng, &rm, &nm, &r, &nb, &MultiViewParams::default());
        assert!(out.photometric_count > 100);
        assert!(out.photometric.abs() < 1e-9, "gain {gain}: {}", out.photometric);
        assert!(out.geometric.abs() < 1e-9);
    }
}

#[test]
fn ramps_are_uncorrelated() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for y in 0..7 {
        for x in 0..7 {
            a.push(x as f64);
            b.push(y as f64);
        }
    }
    assert!(ncc(&a, &b).abs() < 1e-15);
    assert_eq!(ncc(&a, &vec![0.3; 49]), 0.0);
    assert!((ncc(&a, &a) - 1.0).abs() < 1e-15);
}

#[test]
fn stride_and_sampled_normalization() {
    let (r, nb, rm, nm) = perturbed_pair(3);
    let dense = multiview_geometric_loss(&rm, &nm, &r, &nb, &MultiViewParams::default());
    let sparse = multiview_geometric_loss(&rm, &nm, &r, &nb, &MultiViewParams { stride: 2, ..Default::default() });
    assert!(sparse.geometric_count * 3 < dense.geometric_count);
    let sampled = multiview_geometric_loss(
        &rm,
        &nm,
        &r,
        &nb,
        &MultiViewParams {
            normalization: MultiViewNormalization::Sampled,
            ..Default::default()
        },
    );
    assert_eq!(sampled.geometric_count, W * H);
    let ratio = dense.geometric_count as f64 / sampled.geometric_count as f64;
    assert!((sampled.geometric - dense.geometric * ratio).abs() < 1e-12);
}

proptest! {
    #[test]
    fn ncc_is_affine_invariant(seed in 0u64..1000, gain in 0.05f64..20.0, bias in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..49).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..49).map(|_| rng.gen()).collect();
        let b2: Vec<f64> = b.iter().map(|v| gain * v + bias).collect();
        prop_assert!((ncc(&a, &b) - ncc(&a, &b2)).abs() < 1e-9);
    }
}
