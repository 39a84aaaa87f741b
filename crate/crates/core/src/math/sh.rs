use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Per-channel real spherical-harmonics coefficients, degrees 0..3
/// (16 coefficients per color channel). Coefficient 0 carries the
/// view-independent diffuse color.
pub type ShCoefficients = [Vec3; 16];

pub const SH_COEFF_COUNT: usize = 16;

pub const SH_C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    1.0925484305920792,
    0.31539156525252005,
    1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    0.5900435899266435,
    2.890611442640554,
    0.4570457994644658,
    0.3731763325901154,
    0.4570457994644658,
    1.445305721320277,
    0.5900435899266435,
];

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Real SH basis values at a unit direction, orders m = -l..l per degree.
pub fn sh_basis(degree: usize, dir: Vec3) -> Result<[f64; SH_COEFF_COUNT]> {
    if degree > 3 {
        return Err(Error::Domain(format!("SH degree {degree} unsupported (max 3)")));
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; SH_COEFF_COUNT];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = C1 * y;
        b[2] = C1 * z;
        b[3] = C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
    }
    Ok(b)
}

/// Evaluate per-channel SH up to `degree` at a unit direction.
pub fn eval_sh(degree: usize, coeffs: &ShCoefficients, dir: Vec3) -> Result<Vec3> {
    let basis = sh_basis(degree, dir)?;
    let mut out = Vec3::ZERO;
    for i in 0..sh_coeff_count(degree) {
        out += coeffs[i] * basis[i];
    }
    Ok(out)
}

/// Adjoint of `eval_sh` w.r.t. the coefficients (the direction is treated
/// as a fixed per-view input).
pub fn eval_sh_backward(
    degree: usize,
    dir: Vec3,
    grad_out: Vec3,
    grad_coeffs: &mut ShCoefficients,
) -> Result<()> {
    let basis = sh_basis(degree, dir)?;
    for i in 0..sh_coeff_count(degree) {
        grad_coeffs[i] += grad_out * basis[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent tabulated real-SH oracle (explicit polynomial forms with
    /// exact normalization constants from the real spherical harmonics).
    fn oracle_basis(dir: Vec3) -> [f64; 16] {
        use std::f64::consts::PI;
        let (x, y, z) = (dir.x, dir.y, dir.z);
        let s = |v: f64| v.sqrt();
        [
            0.5 * s(1.0 / PI),
            s(3.0 / (4.0 * PI)) * y,
            s(3.0 / (4.0 * PI)) * z,
            s(3.0 / (4.0 * PI)) * x,
            0.5 * s(15.0 / PI) * x * y,
            0.5 * s(15.0 / PI) * y * z,
            0.25 * s(5.0 / PI) * (3.0 * z * z - 1.0),
            0.5 * s(15.0 / PI) * x * z,
            0.25 * s(15.0 / PI) * (x * x - y * y),
            0.25 * s(35.0 / (2.0 * PI)) * y * (3.0 * x * x - y * y),
            0.5 * s(105.0 / PI) * x * y * z,
            0.25 * s(21.0 / (2.0 * PI)) * y * (5.0 * z * z - 1.0),
            0.25 * s(7.0 / PI) * z * (5.0 * z * z - 3.0),
            0.25 * s(21.0 / (2.0 * PI)) * x * (5.0 * z * z - 1.0),
            0.25 * s(105.0 / PI) * z * (x * x - y * y),
            0.25 * s(35.0 / (2.0 * PI)) * x * (x * x - 3.0 * y * y),
        ]
    }

    #[test]
    fn degree_zero_is_constant() {
        let mut coeffs = [Vec3::ZERO; 16];
        coeffs[0] = Vec3::splat(1.0);
        let out = eval_sh(0, &coeffs, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((out.x - 0.28209479).abs() < 1e-7);
        assert!((out.y - 0.28209479).abs() < 1e-7);
        assert!((out.z - 0.28209479).abs() < 1e-7);
    }

    #[test]
    fn zero_coefficients() {
        let coeffs = [Vec3::ZERO; 16];
        let out = eval_sh(3, &coeffs, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(out, Vec3::ZERO);
    }

    #[test]
    fn matches_tabulated_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut coeffs = [Vec3::ZERO; 16];
        for c in &mut coeffs {
            *c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        for dir in [
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.3, -0.8, 0.52).normalized(),
            Vec3::new(-1.0, 0.0, 0.0),
        ] {
            let got = eval_sh(3, &coeffs, dir).unwrap();
            let basis = oracle_basis(dir);
            let mut want = Vec3::ZERO;
            for i in 0..16 {
                want += coeffs[i] * basis[i];
            }
            assert!((got - want).norm() <= 1e-10, "dir {dir:?}");
        }
    }

    #[test]
    fn linear_in_coefficients() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut c1 = [Vec3::ZERO; 16];
        let mut c2 = [Vec3::ZERO; 16];
        for i in 0..16 {
            c1[i] = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            c2[i] = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        }
        let dir = Vec3::new(0.2, 0.5, -0.9).normalized();
        let (a, b) = (0.7, -1.3);
        let mut mix = [Vec3::ZERO; 16];
        for i in 0..16 {
            mix[i] = c1[i] * a + c2[i] * b;
        }
        let lhs = eval_sh(3, &mix, dir).unwrap();
        let rhs = eval_sh(3, &c1, dir).unwrap() * a + eval_sh(3, &c2, dir).unwrap() * b;
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn degree_out_of_range() {
        let coeffs = [Vec3::ZERO; 16];
        assert!(eval_sh(4, &coeffs, Vec3::new(0.0, 0.0, 1.0)).is_err());
    }
}
