//! Deformation fields: the Gaussian deformation network (position /
//! rotation / scale residuals over time) and the reflection-direction
//! deformation network for time-varying lighting.

use crate::error::{Error, Result};
use crate::math::{
    encoding_len, positional_encoding, positional_encoding_backward, Quat, Vec3,
};
use crate::mlp::{Mlp, MlpCache, MlpConfig};

/// Encoding frequency counts. Configurable; defaults follow the common
/// deformable-splatting convention.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncodingFreqs {
    pub position: usize,
    pub time: usize,
    pub direction: usize,
}

impl Default for EncodingFreqs {
    fn default() -> Self {
        EncodingFreqs { position: 10, time: 6, direction: 4 }
    }
}

/// Residuals predicted by the Gaussian deformation network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformOutput {
    pub d_position: Vec3,
    pub d_rotation: Quat,
    pub d_log_scale: Vec3,
}

impl DeformOutput {
    pub const ZERO: DeformOutput = DeformOutput {
        d_position: Vec3::ZERO,
        d_rotation: Quat { w: 0.0, x: 0.0, y: 0.0, z: 0.0 },
        d_log_scale: Vec3::ZERO,
    };
}

pub fn gaussian_mlp_config(freqs: EncodingFreqs, width: usize, layers: usize) -> MlpConfig {
    MlpConfig {
        input_dim: encoding_len(3, freqs.position) + encoding_len(1, freqs.time),
        hidden_width: width,
        hidden_layers: layers,
        skip_layer: Some(layers / 2),
        head_dims: vec![3, 4, 3],
    }
}

pub fn reflection_mlp_config(freqs: EncodingFreqs, width: usize, layers: usize) -> MlpConfig {
    MlpConfig {
        input_dim: encoding_len(3, freqs.direction) + encoding_len(1, freqs.time),
        hidden_width: width,
        hidden_layers: layers,
        skip_layer: Some(layers / 2),
        head_dims: vec![3],
    }
}

fn encode_input(v: &[f64], v_freqs: usize, t: f64, t_freqs: usize) -> Vec<f64> {
    let mut enc = Vec::new();
    positional_encoding(v, v_freqs, &mut enc);
    let mut enc_t = Vec::new();
    positional_encoding(&[t], t_freqs, &mut enc_t);
    enc.extend_from_slice(&enc_t);
    enc
}

/// Forward state for one Gaussian's deformation query.
pub struct DeformCache {
    pub mlp: MlpCache,
    input: Vec<f64>,
}

/// Predict position/rotation/scale residuals for a canonical position at
/// time `t` (heads: dx, dr, ds).
pub fn deform_gaussian(
    theta_g: &Mlp,
    freqs: EncodingFreqs,
    position: Vec3,
    t: f64,
) -> Result<(DeformOutput, DeformCache)> {
    let input = encode_input(&position.to_array(), freqs.position, t, freqs.time);
    let (heads, cache) = theta_g.forward(&input)?;
    let out = DeformOutput {
        d_position: Vec3::new(heads[0][0], heads[0][1], heads[0][2]),
        d_rotation: Quat::new(heads[1][0], heads[1][1], heads[1][2], heads[1][3]),
        d_log_scale: Vec3::new(heads[2][0], heads[2][1], heads[2][2]),
    };
    if !out.d_position.is_finite() || !out.d_rotation.is_finite() || !out.d_log_scale.is_finite() {
        return Err(Error::Numerical("deformation network produced non-finite residuals".into()));
    }
    Ok((out, DeformCache { mlp: cache, input }))
}

/// Adjoint of `deform_gaussian`: accumulates into the network's flat
/// gradient buffer. The canonical position is treated as a detached input
/// to the network (standard deformable-splatting practice), so no position
/// adjoint is returned here.
pub fn deform_gaussian_backward(
    theta_g: &Mlp,
    cache: &DeformCache,
    grad_out: &DeformOutput,
    grad_params: &mut [f64],
) -> Result<()> {
    let head_grads = vec![
        grad_out.d_position.to_array().to_vec(),
        grad_out.d_rotation.to_array().to_vec(),
        grad_out.d_log_scale.to_array().to_vec(),
    ];
    let mut grad_input = vec![0.0; cache.input.len()];
    theta_g.backward(&cache.mlp, &head_grads, grad_params, &mut grad_input)
}

/// Deformed attributes of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformedAttributes {
    pub position: Vec3,
    /// Unit quaternion: normalize(r + dr).
    pub rotation: Quat,
    pub log_scale: Vec3,
}

/// Apply residuals: x + dx, normalize(r + dr), log_scale + ds (scale
/// residual lives in the stored log domain).
pub fn apply_deformation(
    position: Vec3,
    rotation: Quat,
    log_scale: Vec3,
    residual: &DeformOutput,
) -> Result<DeformedAttributes> {
    let q_sum = rotation.add(residual.d_rotation);
    let q = q_sum
        .normalized()
        .map_err(|_| Error::Geometry("deformation produced a zero rotation quaternion".into()))?;
    Ok(DeformedAttributes {
        position: position + residual.d_position,
        rotation: q,
        log_scale: log_scale + residual.d_log_scale,
    })
}

/// Adjoint of `apply_deformation`. Given gradients w.r.t. the deformed
/// attributes, returns (grad canonical position, grad canonical rotation,
/// grad canonical log-scale, grad residuals). Position and scale are plain
/// sums; the rotation chain goes through quaternion normalization, and the
/// raw-sum gradient applies identically to `r` and `dr`.
pub fn apply_deformation_backward(
    rotation: Quat,
    residual: &DeformOutput,
    grad_position: Vec3,
    grad_rotation_unit: Quat,
    grad_log_scale: Vec3,
) -> (Vec3, Quat, Vec3, DeformOutput) {
    let q_sum = rotation.add(residual.d_rotation);
    let n = q_sum.norm();
    let qn = q_sum.scale(1.0 / n);
    let proj = grad_rotation_unit.dot(qn);
    let g_sum = Quat::new(
        (grad_rotation_unit.w - qn.w * proj) / n,
        (grad_rotation_unit.x - qn.x * proj) / n,
        (grad_rotation_unit.y - qn.y * proj) / n,
        (grad_rotation_unit.z - qn.z * proj) / n,
    );
    (
        grad_position,
        g_sum,
        grad_log_scale,
        DeformOutput { d_position: grad_position, d_rotation: g_sum, d_log_scale: grad_log_scale },
    )
}

/// Forward state for one reflection deformation query.
pub struct ReflectCache {
    pub mlp: MlpCache,
    input: Vec<f64>,
    omega: Vec3,
    sum: Vec3,
    /// True when the residual sum degenerated and the input passed through.
    passthrough: bool,
}

/// Deform a unit reflection direction at time `t`: normalize(w + dw).
/// Degenerate sums (norm < 1e-8) fall back to the input direction.
pub fn deform_reflection(
    theta_r: &Mlp,
    freqs: EncodingFreqs,
    omega_r: Vec3,
    t: f64,
) -> Result<(Vec3, ReflectCache)> {
    let input = encode_input(&omega_r.to_array(), freqs.direction, t, freqs.time);
    let (heads, cache) = theta_r.forward(&input)?;
    let d = Vec3::new(heads[0][0], heads[0][1], heads[0][2]);
    let sum = omega_r + d;
    let n = sum.norm();
    let (out, passthrough) = if n < 1e-8 { (omega_r, true) } else { (sum / n, false) };
    Ok((out, ReflectCache { mlp: cache, input, omega: omega_r, sum, passthrough }))
}

/// Adjoint of `deform_reflection`: accumulates network gradients and
/// returns the adjoint w.r.t. the input direction (both the identity path
/// and the encoded network input contribute).
pub fn deform_reflection_backward(
    theta_r: &Mlp,
    freqs: EncodingFreqs,
    cache: &ReflectCache,
    grad_out: Vec3,
    grad_params: &mut [f64],
) -> Result<Vec3> {
    if cache.passthrough {
        // Output was the unmodified input direction.
        return Ok(grad_out);
    }
    let g_sum = Vec3::normalize_backward(cache.sum, grad_out);
    let head_grads = vec![g_sum.to_array().to_vec()];
    let mut grad_input = vec![0.0; cache.input.len()];
    theta_r.backward(&cache.mlp, &head_grads, grad_params, &mut grad_input)?;
    // Encoded-direction part of the input adjoint chains back to omega.
    let dir_len = encoding_len(3, freqs.direction);
    let mut g_dir = [0.0; 3];
    positional_encoding_backward(
        &cache.omega.to_array(),
        freqs.direction,
        &grad_input[..dir_len],
        &mut g_dir,
    );
    Ok(g_sum + Vec3::from_array(g_dir))
}
