//! Physical normal estimation for deformed Gaussians: axis alignment,
//! rotation recovery from axis pairs, oblateness-scaled residual
//! deformation, outward orientation, and the flatness penalty weight.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const BETA_EPS: f64 = 1e-6;
pub const DEGENERATE_NORMAL_EPS: f64 = 1e-8;

/// Flip deformed axes so each points into the same half-space as its
/// canonical counterpart. A dot of exactly zero flips.
pub fn align_axes(v_s: Vec3, v_l: Vec3, v_s_t: Vec3, v_l_t: Vec3) -> (Vec3, Vec3) {
    let s = if v_s.dot(v_s_t) <= 0.0 { -v_s_t } else { v_s_t };
    let l = if v_l.dot(v_l_t) <= 0.0 { -v_l_t } else { v_l_t };
    (s, l)
}

fn triad(a: Vec3, b: Vec3) -> Mat3 {
    Mat3::from_cols(a, b, a.cross(b))
}

fn check_orthonormal(a: Vec3, b: Vec3) -> Result<()> {
    let tol = 1e-6;
    if (a.norm() - 1.0).abs() > tol || (b.norm() - 1.0).abs() > tol || a.dot(b).abs() > tol {
        return Err(Error::Geometry("axis pair is not orthonormal".into()));
    }
    Ok(())
}

/// Rotation mapping the canonical axis pair onto the aligned deformed
/// pair: R = V U^T with U = [v_s | v_l | v_s x v_l] and likewise V.
pub fn rotation_from_axes(v_s: Vec3, v_l: Vec3, v_s_t: Vec3, v_l_t: Vec3) -> Result<Mat3> {
    check_orthonormal(v_s, v_l)?;
    check_orthonormal(v_s_t, v_l_t)?;
    Ok(triad(v_s_t, v_l_t) * triad(v_s, v_l).transpose())
}

/// beta = (|v_l| - |v_s|) / |v_l|.
pub fn oblateness(len_s: f64, len_l: f64) -> Result<f64> {
    if len_l <= 0.0 {
        return Err(Error::Domain("oblateness requires a positive long-axis length".into()));
    }
    Ok((len_l - len_s) / len_l)
}

/// dn^t = (beta / max(beta^t, eps)) R^t dn.
pub fn deform_normal_residual(dn: Vec3, r_t: &Mat3, beta: f64, beta_t: f64) -> Vec3 {
    *r_t * dn * (beta / beta_t.max(BETA_EPS))
}

/// n = normalize(dn^t + v_s^t), sign-flipped toward the viewer. A
/// degenerate sum falls back to the oriented shortest axis.
pub fn final_normal(dn_t: Vec3, v_s_t: Vec3, omega_o: Vec3) -> Vec3 {
    let mut n = dn_t + v_s_t;
    if n.norm() < DEGENERATE_NORMAL_EPS {
        n = v_s_t;
    }
    if n.dot(omega_o) <= 0.0 {
        n = -n;
    }
    n.normalized()
}

/// gamma^k with gamma = sqrt(1 - (|v_s^t| / |v_l^t|)^2): 0 for isotropic
/// Gaussians, toward 1 as they flatten.
pub fn gamma_weight(len_s_t: f64, len_l_t: f64, k: u32) -> f64 {
    let w = len_s_t / len_l_t;
    (1.0 - w * w).max(0.0).sqrt().powi(k as i32)
}

/// Everything the normal chain consumes for one Gaussian. Unit axis
/// directions come from rotation-matrix columns, magnitudes from
/// exp(log_scale), canonical and deformed respectively. Axes are
/// pre-alignment; the chain aligns internally.
#[derive(Debug, Clone, Copy)]
pub struct NormalChainInput {
    pub delta_n: Vec3,
    pub v_s: Vec3,
    pub v_l: Vec3,
    pub len_s: f64,
    pub len_l: f64,
    pub v_s_t: Vec3,
    pub v_l_t: Vec3,
    pub len_s_t: f64,
    pub len_l_t: f64,
    /// Unit direction from the Gaussian toward the camera.
    pub omega_o: Vec3,
}

/// Cached forward state of the fused normal chain.
#[derive(Debug, Clone, Copy)]
pub struct NormalChain {
    pub normal: Vec3,
    pub r_t: Mat3,
    pub beta: f64,
    pub beta_t: f64,
    /// Alignment signs for the deformed short / long axes.
    sign_s: f64,
    sign_l: f64,
    /// Outward-orientation sign.
    sign_out: f64,
    /// Pre-normalization sum dn^t + v_s^t (post orientation flip).
    raw: Vec3,
    degenerate: bool,
}

/// Fused per-Gaussian forward: align -> rotate -> scale residual ->
/// orient -> normalize.
pub fn normal_chain(inp: &NormalChainInput) -> Result<NormalChain> {
    let sign_s = if inp.v_s.dot(inp.v_s_t) <= 0.0 { -1.0 } else { 1.0 };
    let sign_l = if inp.v_l.dot(inp.v_l_t) <= 0.0 { -1.0 } else { 1.0 };
    let (as_t, al_t) = (inp.v_s_t * sign_s, inp.v_l_t * sign_l);
    let r_t = rotation_from_axes(inp.v_s, inp.v_l, as_t, al_t)?;
    let beta = oblateness(inp.len_s, inp.len_l)?;
    let beta_t = oblateness(inp.len_s_t, inp.len_l_t)?;
    let dn_t = deform_normal_residual(inp.delta_n, &r_t, beta, beta_t);
    let mut raw = dn_t + as_t;
    let degenerate = raw.norm() < DEGENERATE_NORMAL_EPS;
    if degenerate {
        raw = as_t;
    }
    let sign_out = if raw.dot(inp.omega_o) <= 0.0 { -1.0 } else { 1.0 };
    raw = raw * sign_out;
    Ok(NormalChain {
        normal: raw.normalized(),
        r_t,
        beta,
        beta_t,
        sign_s,
        sign_l,
        sign_out,
        raw,
        degenerate,
    })
}

/// Adjoints of `normal_chain`. Axis gradients are w.r.t. the
/// pre-alignment deformed axes; sign flips and the orientation flip are
/// locally constant. No gradient w.r.t. the view direction is produced.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalChainGrads {
    pub d_delta_n: Vec3,
    pub d_v_s: Vec3,
    pub d_v_l: Vec3,
    pub d_len_s: f64,
    pub d_len_l: f64,
    pub d_v_s_t: Vec3,
    pub d_v_l_t: Vec3,
    pub d_len_s_t: f64,
    pub d_len_l_t: f64,
}

pub fn normal_chain_backward(
    inp: &NormalChainInput,
    fwd: &NormalChain,
    grad_normal: Vec3,
) -> NormalChainGrads {
    let mut g = NormalChainGrads::default();
    // normalize, then the orientation sign.
    let g_raw = Vec3::normalize_backward(fwd.raw, grad_normal) * fwd.sign_out;
    let as_t = inp.v_s_t * fwd.sign_s;
    if fwd.degenerate {
        g.d_v_s_t = g_raw * fwd.sign_s;
        return g;
    }
    // raw = c * R dn + as_t with c = beta / max(beta_t, eps).
    let beta_c = fwd.beta_t.max(BETA_EPS);
    let c = fwd.beta / beta_c;
    let g_dn_t = g_raw;
    let mut g_as_t = g_raw;
    g.d_delta_n = fwd.r_t.transpose() * g_dn_t * c;
    let r_dn = fwd.r_t * inp.delta_n;
    let g_c = g_dn_t.dot(r_dn);
    let g_r = Mat3::outer(g_dn_t, inp.delta_n) * c;
    // c = beta / beta_c.
    let g_beta = g_c / beta_c;
    let g_beta_t = if fwd.beta_t > BETA_EPS { -g_c * fwd.beta / (beta_c * beta_c) } else { 0.0 };
    // beta = 1 - s/l.
    g.d_len_s = -g_beta / inp.len_l;
    g.d_len_l = g_beta * inp.len_s / (inp.len_l * inp.len_l);
    g.d_len_s_t = -g_beta_t / inp.len_l_t;
    g.d_len_l_t = g_beta_t * inp.len_s_t / (inp.len_l_t * inp.len_l_t);
    // R = V U^T = sum_i w_i u_i^T over the triad columns.
    let al_t = inp.v_l_t * fwd.sign_l;
    let u = [inp.v_s, inp.v_l, inp.v_s.cross(inp.v_l)];
    let w = [as_t, al_t, as_t.cross(al_t)];
    let mut g_u = [Vec3::ZERO; 3];
    let mut g_w = [Vec3::ZERO; 3];
    for i in 0..3 {
        g_w[i] = g_r * u[i];
        g_u[i] = g_r.transpose() * w[i];
    }
    // Cross-product adjoints: for c = a x b, g_a += b x g_c, g_b += g_c x a.
    let g_u0 = g_u[0] + u[1].cross(g_u[2]);
    let g_u1 = g_u[1] + g_u[2].cross(u[0]);
    g_as_t = g_as_t + g_w[0] + w[1].cross(g_w[2]);
    let g_al_t = g_w[1] + g_w[2].cross(w[0]);
    g.d_v_s = g_u0;
    g.d_v_l = g_u1;
    g.d_v_s_t = g_as_t * fwd.sign_s;
    g.d_v_l_t = g_al_t * fwd.sign_l;
    g
}
