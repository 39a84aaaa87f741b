//! Deterministic numeric primitives shared across the engine: small
//! vectors/matrices, quaternions, frequency encoding, spherical harmonics.
//! Everything is double precision and free of shared state.

pub mod encoding;
pub mod mat3;
pub mod quat;
pub mod sh;
pub mod vec3;

pub use encoding::{encoding_len, positional_encoding, positional_encoding_backward};
pub use mat3::Mat3;
pub use quat::{quat_to_rotmat, quat_to_rotmat_backward, Quat};
pub use sh::{eval_sh, eval_sh_backward, sh_basis, sh_coeff_count, ShCoefficients, SH_C0, SH_COEFF_COUNT};
pub use vec3::Vec3;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d(sigmoid)/dx expressed via the already-computed output.
pub fn sigmoid_backward(y: f64, grad_out: f64) -> f64 {
    grad_out * y * (1.0 - y)
}

pub fn softplus(x: f64) -> f64 {
    // Stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn softplus_backward(x: f64, grad_out: f64) -> f64 {
    grad_out * sigmoid(x)
}

/// Inverse of softplus; used to seed raw parameters from target activations.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).max(1e-300).ln()
    }
}

pub fn inverse_sigmoid(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}
