//! Three-point resection.
//!
//! Distances along the three bearings are found from Grunert's quartic in
//! the ratio `v = s3 / s1`; each real root gives one camera-frame triangle,
//! which is aligned with the world triangle by a closed-form absolute
//! orientation.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{GeometryError, RigidPose};

/// Largest angular residual a returned pose may leave on any bearing.
const BEARING_TOLERANCE_RAD: f64 = 1e-6;

/// All poses `x_cam = R x_world + t` consistent with three world points seen
/// along three bearings. Bearings are normalized before use.
pub fn p3p_solve(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Result<Vec<RigidPose>, GeometryError> {
    let [p1, p2, p3] = world;
    let scale = (p2 - p1).norm().max((p3 - p1).norm()).max(1e-300);
    if (p2 - p1).cross(&(p3 - p1)).norm() <= 1e-9 * scale * scale {
        return Err(GeometryError::CollinearPoints);
    }
    let j = [bearings[0].normalize(), bearings[1].normalize(), bearings[2].normalize()];

    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);

    let p = (a2 - c2) / b2;
    let q = (a2 + c2) / b2;
    let (ca2, cb2, cg2) = (cos_a * cos_a, cos_b * cos_b, cos_g * cos_g);

    let a4 = (p - 1.0).powi(2) - 4.0 * c2 / b2 * ca2;
    let a3 = 4.0 * (p * (1.0 - p) * cos_b - (1.0 - q) * cos_a * cos_g + 2.0 * c2 / b2 * ca2 * cos_b);
    let a2c = 2.0
        * (p * p - 1.0 + 2.0 * p * p * cb2 + 2.0 * (b2 - c2) / b2 * ca2 - 4.0 * q * cos_a * cos_b * cos_g
            + 2.0 * (b2 - a2) / b2 * cg2);
    let a1 = 4.0 * (-p * (1.0 + p) * cos_b + 2.0 * a2 / b2 * cg2 * cos_b - (1.0 - q) * cos_a * cos_g);
    let a0 = (1.0 + p).powi(2) - 4.0 * a2 / b2 * cg2;

    let mut poses: Vec<RigidPose> = Vec::new();
    for v in real_polynomial_roots(&[a4, a3, a2c, a1, a0]) {
        if v <= 0.0 {
            continue;
        }
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        for u in distance_ratios_u(v, p, cos_a, cos_b, cos_g, c2 / s1_sq) {
            let cam = [j[0] * s1, j[1] * (u * s1), j[2] * (v * s1)];
            let pose = align_triangles(world, &cam);
            let consistent = world.iter().zip(&j).all(|(w, b)| {
                let x = pose.transform(w);
                x.norm() > 0.0 && x.normalize().dot(b).clamp(-1.0, 1.0).acos() < BEARING_TOLERANCE_RAD
            });
            let duplicate = poses.iter().any(|q| {
                (q.rotation - pose.rotation).norm() < 1e-9 && (q.translation - pose.translation).norm() < 1e-9 * scale
            });
            if consistent && !duplicate {
                poses.push(pose);
            }
        }
    }
    Ok(poses)
}

/// Candidates for `u = s2 / s1` given `v = s3 / s1`.
///
/// Away from `cos_g = v cos_a` the ratio follows linearly from the two
/// distance equations; there it is undetermined by them and both roots of
/// `1 + u^2 - 2u cos_g = c^2 / s1^2` are returned for the caller to verify.
fn distance_ratios_u(v: f64, p: f64, cos_a: f64, cos_b: f64, cos_g: f64, c2_over_s1_sq: f64) -> Vec<f64> {
    let denom = 2.0 * (cos_g - v * cos_a);
    if denom.abs() > 1e-6 {
        let u = ((p - 1.0) * v * v - 2.0 * p * cos_b * v + 1.0 + p) / denom;
        return if u > 0.0 { vec![u] } else { Vec::new() };
    }
    let disc = cos_g * cos_g - 1.0 + c2_over_s1_sq;
    if disc < -1e-9 {
        return Vec::new();
    }
    let r = disc.max(0.0).sqrt();
    [cos_g - r, cos_g + r].into_iter().filter(|&u| u > 0.0).collect()
}

/// Least-squares rigid alignment `cam ≈ R world + t` (Kabsch).
fn align_triangles(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> RigidPose {
    let mw = (world[0] + world[1] + world[2]) / 3.0;
    let mc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (c - mc) * (w - mw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    RigidPose { rotation: r, translation: mc - r * mw }
}

/// Real roots of `c[0] x^n + ... + c[n]`, from companion-matrix eigenvalues
/// polished with Newton steps.
pub fn real_polynomial_roots(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let lead = coeffs.iter().position(|c| c.abs() > 1e-12 * max).expect("non-zero");
    let c = &coeffs[lead..];
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        comp[(0, i)] = -c[i + 1] / c[0];
        if i + 1 < n {
            comp[(i + 1, i)] = 1.0;
        }
    }
    let eval = |x: f64| c.iter().fold(0.0, |acc, &k| acc * x + k);
    let deriv = |x: f64| {
        c[..n]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &k)| acc * x + k * (n - i) as f64)
    };
    let mut roots = Vec::new();
    for z in comp.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let d = deriv(x);
            if d == 0.0 {
                break;
            }
            let step = eval(x) / d;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polynomial_roots() {
        // (x - 1)(x + 2)(x - 3)(x - 0.5)
        let r = real_polynomial_roots(&[1.0, -2.5, -4.0, 8.5, -3.0]);
        let expect = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // x^2 + 1 has no real roots; leading zeros are skipped
        assert!(real_polynomial_roots(&[0.0, 1.0, 0.0, 1.0]).is_empty());
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        RigidPose::from_axis_angle(
            axis,
            rng.random_range(0.0..1.0),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        )
    }

    #[test]
    fn recovers_generating_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let pose = random_pose(&mut rng);
            let cam: Vec<Vector3<f64>> = (0..3)
                .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(2.0..8.0)))
                .collect();
            let inv = pose.inverse();
            let world = [inv.transform(&cam[0]), inv.transform(&cam[1]), inv.transform(&cam[2])];
            let bearings = [cam[0].normalize(), cam[1].normalize(), cam[2].normalize()];
            let sols = p3p_solve(&world, &bearings).unwrap();
            assert!(!sols.is_empty() && sols.len() <= 4);
            let best = sols
                .iter()
                .map(|s| (s.rotation - pose.rotation).norm() + (s.translation - pose.translation).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "closest candidate off by {best}");
        }
    }

    #[test]
    fn equilateral_ahead_includes_identity() {
        let z = 5.0;
        let world = [
            Vector3::new(1.0, 0.0, z),
            Vector3::new(-0.5, 3f64.sqrt() / 2.0, z),
            Vector3::new(-0.5, -(3f64.sqrt()) / 2.0, z),
        ];
        let bearings = [world[0].normalize(), world[1].normalize(), world[2].normalize()];
        let sols = p3p_solve(&world, &bearings).unwrap();
        assert!(sols
            .iter()
            .any(|s| (s.rotation - Matrix3::identity()).norm() < 1e-6 && s.translation.norm() < 1e-6));
    }

    #[test]
    fn collinear_points_are_rejected() {
        let world = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 1.0, 2.0), Vector3::new(2.0, 2.0, 3.0)];
        let b = [Vector3::z(), Vector3::z(), Vector3::z()];
        assert_eq!(p3p_solve(&world, &b), Err(GeometryError::CollinearPoints));
    }
}
