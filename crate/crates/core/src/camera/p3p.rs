//! Grunert's three-point pose solution.
//!
//! Given three unit bearing vectors in the camera frame and the matching world
//! points, the law-of-cosines system for the three depths reduces to a quartic.
//! Each real root gives one candidate pose (at most four).

use nalgebra::{Complex, Matrix3, Point3, Rotation3, Vector3};

use super::Pose;

/// Candidate poses (world→camera) consistent with the three correspondences.
pub fn solve(bearings: &[Vector3<f64>; 3], world: &[Point3<f64>; 3]) -> Vec<Pose> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let cos_alpha = bearings[1].dot(&bearings[2]);
    let cos_beta = bearings[0].dot(&bearings[2]);
    let cos_gamma = bearings[0].dot(&bearings[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let ca2 = cos_alpha * cos_alpha;
    let cb2 = cos_beta * cos_beta;
    let cg2 = cos_gamma * cos_gamma;

    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca2,
        4.0 * (amc * (1.0 - amc) * cos_beta - (1.0 - apc) * cos_alpha * cos_gamma + 2.0 * c2 / b2 * ca2 * cos_beta),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb2 + 2.0 * bmc * ca2
            - 4.0 * apc * cos_alpha * cos_beta * cos_gamma
            + 2.0 * bma * cg2),
        4.0 * (-amc * (1.0 + amc) * cos_beta + 2.0 * a2 / b2 * cg2 * cos_beta - (1.0 - apc) * cos_alpha * cos_gamma),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg2,
    ];

    let mut poses = Vec::new();
    for v in real_quartic_roots(&coeffs) {
        let denom = 2.0 * (cos_gamma - v * cos_alpha);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = ((-1.0 + amc) * v * v - 2.0 * amc * cos_beta * v + 1.0 + amc) / denom;
        let d = 1.0 + v * v - 2.0 * v * cos_beta;
        if d <= 0.0 {
            continue;
        }
        let s1 = (b2 / d).sqrt();
        let s2 = u * s1;
        let s3 = v * s1;
        if !(s1 > 0.0 && s2 > 0.0 && s3 > 0.0) {
            continue;
        }
        let cam = [bearings[0] * s1, bearings[1] * s2, bearings[2] * s3];
        if let Some(pose) = absolute_orientation(world, &cam) {
            poses.push(pose);
        }
    }
    poses
}

/// Rigid transform mapping the world points onto camera-frame points (Kabsch).
fn absolute_orientation(world: &[Point3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<Pose> {
    let wc = (world[0].coords + world[1].coords + world[2].coords) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i].coords - wc) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    // Singular values are unsorted; the reflection fix goes on the smallest.
    let k = svd.singular_values.imin();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(k, k)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = cc - r * wc;
    if !translation.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(Pose::new(rotation, translation))
}

/// Real roots of c0·x⁴ + c1·x³ + c2·x² + c3·x + c4.
///
/// All four complex roots are found by Durand–Kerner iteration; the nearly
/// real ones are polished with Newton steps on the real polynomial.
fn real_quartic_roots(c: &[f64; 5]) -> Vec<f64> {
    if c[0].abs() < 1e-14 * c.iter().fold(0.0f64, |m, x| m.max(x.abs())) {
        return Vec::new();
    }
    let n = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let eval_c = |x: Complex<f64>| (((x + n[0]) * x + n[1]) * x + n[2]) * x + n[3];
    let eval = |x: f64| (((x + n[0]) * x + n[1]) * x + n[2]) * x + n[3];
    let deriv = |x: f64| ((4.0 * x + 3.0 * n[0]) * x + 2.0 * n[1]) * x + n[2];

    // Cauchy bound on root magnitude sets the starting circle.
    let radius = 1.0 + n.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let seed = Complex::new(0.4, 0.9);
    let mut z: [Complex<f64>; 4] = std::array::from_fn(|k| seed.powu(k as u32) * radius);
    for _ in 0..500 {
        let mut shift = 0.0f64;
        for i in 0..4 {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..4 {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex::new(1e-300, 0.0);
            }
            let step = eval_c(z[i]) / denom;
            z[i] -= step;
            shift = shift.max(step.norm() / (1.0 + z[i].norm()));
        }
        if shift < 1e-15 {
            break;
        }
    }

    let mut roots = Vec::new();
    for zi in z {
        if zi.im.abs() > 1e-6 * (1.0 + zi.re.abs()) {
            continue;
        }
        let mut x = zi.re;
        for _ in 0..4 {
            let d = deriv(x);
            if d.abs() < 1e-300 {
                break;
            }
            x -= eval(x) / d;
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}
