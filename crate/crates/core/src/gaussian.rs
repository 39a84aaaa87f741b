//! Canonical Gaussian set, covariance construction and perspective
//! projection of covariances to screen space.

use crate::error::{Error, Result};
use crate::math::{
    quat_to_rotmat, quat_to_rotmat_backward, sigmoid, Mat3, Quat, ShCoefficients, Vec3,
};

/// Screen-space low-pass added to both diagonal entries of the projected
/// covariance, in px^2. Guarantees every splat covers at least ~1 pixel.
pub const LOW_PASS_PX2: f64 = 0.3;

/// All optimizable attributes of a single Gaussian (AoS view used for
/// construction and inspection; training state lives in [`GaussianSet`]).
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    pub position: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub raw_opacity: f64,
    pub sh: ShCoefficients,
    pub specular_tint: Vec3,
    pub raw_roughness: f64,
    pub normal_residual: Vec3,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.raw_opacity)
    }

    pub fn roughness(&self) -> f64 {
        sigmoid(self.raw_roughness)
    }
}

/// Structure-of-arrays storage for the canonical Gaussians `G`.
#[derive(Debug, Clone, Default)]
pub struct GaussianSet {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub raw_opacities: Vec<f64>,
    pub sh: Vec<ShCoefficients>,
    pub specular_tints: Vec<Vec3>,
    pub raw_roughness: Vec<f64>,
    pub normal_residuals: Vec<Vec3>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.raw_opacities.push(g.raw_opacity);
        self.sh.push(g.sh);
        self.specular_tints.push(g.specular_tint);
        self.raw_roughness.push(g.raw_roughness);
        self.normal_residuals.push(g.normal_residual);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            raw_opacity: self.raw_opacities[i],
            sh: self.sh[i],
            specular_tint: self.specular_tints[i],
            raw_roughness: self.raw_roughness[i],
            normal_residual: self.normal_residuals[i],
        }
    }

    /// Keep only the Gaussians whose index passes the predicate.
    pub fn retain_indices(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.len());
        let mut idx;
        macro_rules! retain_vec {
            ($field:expr) => {{
                idx = 0;
                $field.retain(|_| {
                    let k = keep[idx];
                    idx += 1;
                    k
                });
            }};
        }
        retain_vec!(self.positions);
        retain_vec!(self.rotations);
        retain_vec!(self.log_scales);
        retain_vec!(self.raw_opacities);
        retain_vec!(self.sh);
        retain_vec!(self.specular_tints);
        retain_vec!(self.raw_roughness);
        retain_vec!(self.normal_residuals);
        let _ = idx;
    }
}

/// Per-frame pinhole camera with a rigid world-to-camera transform
/// (+z forward, +y down) and a normalized timestamp.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rot: Mat3,
    /// World-to-camera translation.
    pub trans: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Normalized time in [0, 1].
    pub time: f64,
}

impl Camera {
    pub fn to_camera(&self, p_world: Vec3) -> Vec3 {
        self.rot * p_world + self.trans
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rot.transpose() * self.trans)
    }

    /// Pinhole projection of a camera-space point to pixel coordinates.
    pub fn project(&self, p_cam: Vec3) -> (f64, f64) {
        (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy)
    }
}

/// Symmetric 2x2 matrix stored as (xx, xy, yy).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Result<Sym2> {
        let d = self.det();
        if d <= 0.0 {
            return Err(Error::Geometry("2D covariance not positive definite".into()));
        }
        Ok(Sym2 { xx: self.yy / d, xy: -self.xy / d, yy: self.xx / d })
    }

    /// Adjoint of `inverse`: dL/dA given B = A^-1 and dL/dB, using
    /// dB = -B dA B. `grad_out` components follow the (xx, xy, yy) packing
    /// where the off-diagonal carries the *combined* contribution of both
    /// symmetric entries.
    pub fn inverse_backward(inv: &Sym2, grad_out: &Sym2) -> Sym2 {
        // Unpack to full matrices; off-diagonal adjoint split evenly.
        let b = [inv.xx, inv.xy, inv.xy, inv.yy];
        let g = [grad_out.xx, 0.5 * grad_out.xy, 0.5 * grad_out.xy, grad_out.yy];
        // dL/dA = -B^T G B^T (B symmetric).
        let mut gb = [0.0; 4];
        for r in 0..2 {
            for c in 0..2 {
                let mut acc = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        acc += b[i * 2 + r] * g[i * 2 + j] * b[j * 2 + c];
                    }
                }
                gb[r * 2 + c] = -acc;
            }
        }
        Sym2 { xx: gb[0], xy: gb[1] + gb[2], yy: gb[3] }
    }
}

/// 3D covariance from log-scales and rotation: R diag(exp(s))^2 R^T.
pub fn build_covariance(log_scale: Vec3, rotation: Quat) -> Result<Mat3> {
    let r = quat_to_rotmat(rotation)?;
    let s2 = (log_scale * 2.0).exp();
    Ok(r * Mat3::diag(s2) * r.transpose())
}

/// Adjoint of `build_covariance`. Returns (d log_scale, d rotation).
pub fn build_covariance_backward(
    log_scale: Vec3,
    rotation: Quat,
    grad_sigma: &Mat3,
) -> Result<(Vec3, Quat)> {
    let r = quat_to_rotmat(rotation)?;
    let v = (log_scale * 2.0).exp(); // diag entries
    // dL/dv_i = (R^T G R)_ii ; dL/d ls_i = dL/dv_i * 2 v_i
    let rtgr = r.transpose() * *grad_sigma * r;
    let g_ls = Vec3::new(
        rtgr.at(0, 0) * 2.0 * v.x,
        rtgr.at(1, 1) * 2.0 * v.y,
        rtgr.at(2, 2) * 2.0 * v.z,
    );
    // dL/dR = (G + G^T) R S
    let s = Mat3::diag(v);
    let g_r = (*grad_sigma + grad_sigma.transpose()) * r * s;
    let g_q = quat_to_rotmat_backward(rotation, &g_r)?;
    Ok((g_ls, g_q))
}

/// Result of projecting one Gaussian's covariance to screen space.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedCovariance {
    /// 2D covariance in px^2 including the low-pass term.
    pub cov2d: Sym2,
    /// Camera-space depth used for sorting.
    pub depth: f64,
}

fn jacobian(cam: &Camera, p_cam: Vec3) -> [Vec3; 2] {
    let inv_z = 1.0 / p_cam.z;
    [
        Vec3::new(cam.fx * inv_z, 0.0, -cam.fx * p_cam.x * inv_z * inv_z),
        Vec3::new(0.0, cam.fy * inv_z, -cam.fy * p_cam.y * inv_z * inv_z),
    ]
}

/// Project a world-space covariance through the camera using the affine
/// (EWA) approximation: sigma' = J W Sigma W^T J^T + low-pass. Returns
/// `None` for centers behind the near plane (culled, not an error).
pub fn project_covariance(
    sigma: &Mat3,
    cam: &Camera,
    pos_world: Vec3,
    near: f64,
) -> Option<ProjectedCovariance> {
    let p_cam = cam.to_camera(pos_world);
    if p_cam.z <= near {
        return None;
    }
    let j = jacobian(cam, p_cam);
    let sigma_cam = cam.rot * *sigma * cam.rot.transpose();
    let m0 = sigma_cam * j[0];
    let m1 = sigma_cam * j[1];
    let cov2d = Sym2 {
        xx: j[0].dot(m0) + LOW_PASS_PX2,
        xy: j[0].dot(m1),
        yy: j[1].dot(m1) + LOW_PASS_PX2,
    };
    Some(ProjectedCovariance { cov2d, depth: p_cam.z })
}

/// Adjoint of `project_covariance` w.r.t. the world covariance and the
/// world position (the position enters through the Jacobian `J`).
/// `grad_cov2d` packs (xx, xy, yy) with the off-diagonal combined.
pub fn project_covariance_backward(
    sigma: &Mat3,
    cam: &Camera,
    pos_world: Vec3,
    grad_cov2d: &Sym2,
) -> (Mat3, Vec3) {
    let p_cam = cam.to_camera(pos_world);
    let j = jacobian(cam, p_cam);
    let sigma_cam = cam.rot * *sigma * cam.rot.transpose();
    // Full 2x2 grad with symmetric split.
    let g = [grad_cov2d.xx, 0.5 * grad_cov2d.xy, 0.5 * grad_cov2d.xy, grad_cov2d.yy];
    // dL/d sigma_cam = J^T G J  (J rows j0, j1)
    let mut g_sigma_cam = Mat3::ZERO;
    for a in 0..2 {
        for b in 0..2 {
            g_sigma_cam = g_sigma_cam + Mat3::outer(j[a], j[b]) * g[a * 2 + b];
        }
    }
    let g_sigma = cam.rot.transpose() * g_sigma_cam * cam.rot;
    // dL/dJ = (G + G^T) J sigma_cam (rows).
    let sym = [2.0 * g[0], g[1] + g[2], g[1] + g[2], 2.0 * g[3]];
    let gj0 = sigma_cam * (j[0] * sym[0] + j[1] * sym[1]);
    let gj1 = sigma_cam * (j[0] * sym[2] + j[1] * sym[3]);
    // J entries as functions of p_cam = (x, y, z):
    // j0 = (fx/z, 0, -fx x / z^2), j1 = (0, fy/z, -fy y / z^2)
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let g_pcam = Vec3::new(
        gj0.z * (-fx / z2),
        gj1.z * (-fy / z2),
        gj0.x * (-fx / z2) + gj0.z * (2.0 * fx * x / z3) + gj1.y * (-fy / z2)
            + gj1.z * (2.0 * fy * y / z3),
    );
    let g_pos = cam.rot.transpose() * g_pcam;
    (g_sigma, g_pos)
}

/// Pixel-space projection of the Gaussian center with its adjoint.
pub fn project_point_backward(cam: &Camera, pos_world: Vec3, grad_px: (f64, f64)) -> Vec3 {
    let p = cam.to_camera(pos_world);
    let inv_z = 1.0 / p.z;
    let g_pcam = Vec3::new(
        grad_px.0 * cam.fx * inv_z,
        grad_px.1 * cam.fy * inv_z,
        -(grad_px.0 * cam.fx * p.x + grad_px.1 * cam.fy * p.y) * inv_z * inv_z,
    );
    cam.rot.transpose() * g_pcam
}

/// Shortest/longest principal axes of a Gaussian: unit directions (rotation
/// matrix columns) plus their scale magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct AxisFrame {
    pub v_short: Vec3,
    pub len_short: f64,
    pub v_long: Vec3,
    pub len_long: f64,
    pub idx_short: usize,
    pub idx_long: usize,
    /// True when short and long axes coincide by tie-break (isotropic).
    pub degenerate: bool,
}

/// Shortest and longest axes of a Gaussian. Ties break to the lowest index.
pub fn gaussian_axes(log_scale: Vec3, rotation: Quat) -> Result<AxisFrame> {
    let r = quat_to_rotmat(rotation)?;
    let s = log_scale.exp();
    let mut idx_short = 0;
    let mut idx_long = 0;
    for i in 1..3 {
        if s.get(i) < s.get(idx_short) {
            idx_short = i;
        }
        if s.get(i) > s.get(idx_long) {
            idx_long = i;
        }
    }
    Ok(AxisFrame {
        v_short: r.col(idx_short),
        len_short: s.get(idx_short),
        v_long: r.col(idx_long),
        len_long: s.get(idx_long),
        idx_short,
        idx_long,
        degenerate: idx_short == idx_long,
    })
}
