//! Loss terms: photometric (L1 + DSSIM), normal consistency, residual
//! regularizer, and the stage-gated total.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::train::schedule::Stage;

pub const LAMBDA_DSSIM: f64 = 0.2;
pub const LAMBDA_NORMAL: f64 = 0.01;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with border renormalization (kernel weights
/// outside the image are dropped and the rest rescaled).
struct Blur {
    w: usize,
    h: usize,
    kernel: [f64; SSIM_WIN],
    /// Per-pixel in-bounds weight sums for the 2D window.
    weight: Vec<f64>,
}

impl Blur {
    fn new(w: usize, h: usize) -> Blur {
        let kernel = ssim_kernel();
        let r = SSIM_WIN / 2;
        let axis_w = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = 0.0;
                    for k in 0..SSIM_WIN {
                        let j = i as isize + k as isize - r as isize;
                        if j >= 0 && (j as usize) < n {
                            s += kernel[k];
                        }
                    }
                    s
                })
                .collect()
        };
        let (wx, wy) = (axis_w(w), axis_w(h));
        let weight = (0..w * h).map(|i| wx[i % w] * wy[i / w]).collect();
        Blur { w, h, kernel, weight }
    }

    /// Unnormalized separable convolution (zero padding).
    fn conv_raw(&self, img: &[f64]) -> Vec<f64> {
        let r = (SSIM_WIN / 2) as isize;
        let mut tmp = vec![0.0; img.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for k in 0..SSIM_WIN {
                    let j = x as isize + k as isize - r;
                    if j >= 0 && (j as usize) < self.w {
                        s += self.kernel[k] * img[y * self.w + j as usize];
                    }
                }
                tmp[y * self.w + x] = s;
            }
        }
        let mut out = vec![0.0; img.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for k in 0..SSIM_WIN {
                    let j = y as isize + k as isize - r;
                    if j >= 0 && (j as usize) < self.h {
                        s += self.kernel[k] * tmp[j as usize * self.w + x];
                    }
                }
                out[y * self.w + x] = s;
            }
        }
        out
    }

    fn blur(&self, img: &[f64]) -> Vec<f64> {
        let mut out = self.conv_raw(img);
        for (o, w) in out.iter_mut().zip(&self.weight) {
            *o /= w;
        }
        out
    }

    /// Adjoint of `blur` (kernel is symmetric; normalization divides at
    /// the window center).
    fn blur_adjoint(&self, field: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = field.iter().zip(&self.weight).map(|(f, w)| f / w).collect();
        self.conv_raw(&scaled)
    }
}

/// (1 - lambda) L1 + lambda (1 - SSIM), SSIM with an 11x11 Gaussian
/// window (sigma 1.5). Returns the scalar and d loss / d render, one RGB
/// adjoint per pixel. Channels are scored independently and averaged.
pub fn photometric_loss(
    render: &[Vec3],
    gt: &[Vec3],
    width: usize,
    height: usize,
) -> Result<(f64, Vec<Vec3>)> {
    if render.len() != gt.len() || render.len() != width * height {
        return Err(Error::Usage("photometric loss requires matching image dimensions".into()));
    }
    let n = render.len();
    let blur = Blur::new(width, height);
    let mut loss = 0.0;
    let mut adj = vec![Vec3::ZERO; n];
    for ch in 0..3 {
        let x: Vec<f64> = render.iter().map(|v| v.get(ch)).collect();
        let y: Vec<f64> = gt.iter().map(|v| v.get(ch)).collect();
        // L1 term.
        let mut l1 = 0.0;
        for i in 0..n {
            l1 += (x[i] - y[i]).abs();
        }
        l1 /= n as f64;
        // SSIM statistics.
        let ux = blur.blur(&x);
        let uy = blur.blur(&y);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let ux2 = blur.blur(&x2);
        let uy2 = blur.blur(&y2);
        let uxy = blur.blur(&xy);
        let mut ssim_sum = 0.0;
        let mut d_ux = vec![0.0; n];
        let mut d_ux2 = vec![0.0; n];
        let mut d_uxy = vec![0.0; n];
        for i in 0..n {
            let sx = ux2[i] - ux[i] * ux[i];
            let sy = uy2[i] - uy[i] * uy[i];
            let sxy = uxy[i] - ux[i] * uy[i];
            let a1 = 2.0 * ux[i] * uy[i] + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux[i] * ux[i] + uy[i] * uy[i] + SSIM_C1;
            let b2 = sx + sy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            ssim_sum += s;
            // Partials w.r.t. the filtered moments.
            d_ux[i] = (2.0 * uy[i] * a2 - 2.0 * uy[i] * a1) / (b1 * b2)
                - s * (2.0 * ux[i] / b1 - 2.0 * ux[i] / b2);
            d_ux2[i] = -s / b2;
            d_uxy[i] = 2.0 * a1 / (b1 * b2);
        }
        let ssim = ssim_sum / n as f64;
        loss += (1.0 - LAMBDA_DSSIM) * l1 + LAMBDA_DSSIM * (1.0 - ssim);
        // Backward: L1 plus the three filtered-moment chains.
        let gx = blur.blur_adjoint(&d_ux);
        let gx2 = blur.blur_adjoint(&d_ux2);
        let gxy = blur.blur_adjoint(&d_uxy);
        let scale = -LAMBDA_DSSIM / n as f64;
        for i in 0..n {
            let l1_g = (1.0 - LAMBDA_DSSIM) / n as f64
                * if x[i] > y[i] {
                    1.0
                } else if x[i] < y[i] {
                    -1.0
                } else {
                    0.0
                };
            let ssim_g = scale * (gx[i] + 2.0 * x[i] * gx2[i] + y[i] * gxy[i]);
            let v = adj[i].get(ch) + l1_g + ssim_g;
            adj[i].set(ch, v);
        }
    }
    Ok((loss / 3.0, adj.iter().map(|v| *v / 3.0).collect()))
}

/// Mean SSIM over channels, same 11x11 / sigma 1.5 kernel as the loss
/// (no adjoint; used for evaluation metrics).
pub fn ssim(a: &[Vec3], b: &[Vec3], width: usize, height: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != width * height {
        return Err(Error::Usage("SSIM requires matching image dimensions".into()));
    }
    let n = a.len();
    let blur = Blur::new(width, height);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.iter().map(|v| v.get(ch)).collect();
        let y: Vec<f64> = b.iter().map(|v| v.get(ch)).collect();
        let ux = blur.blur(&x);
        let uy = blur.blur(&y);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let ux2 = blur.blur(&x2);
        let uy2 = blur.blur(&y2);
        let uxy = blur.blur(&xy);
        let mut sum = 0.0;
        for i in 0..n {
            let sx = ux2[i] - ux[i] * ux[i];
            let sy = uy2[i] - uy[i] * uy[i];
            let sxy = uxy[i] - ux[i] * uy[i];
            let a1 = 2.0 * ux[i] * uy[i] + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux[i] * ux[i] + uy[i] * uy[i] + SSIM_C1;
            let b2 = sx + sy + SSIM_C2;
            sum += a1 * a2 / (b1 * b2);
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// PSNR in dB for linear [0,1] images: 10 log10(1 / MSE), capped at 99.
pub fn psnr(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Usage("PSNR requires matching non-empty images".into()));
    }
    let mut mse = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        mse += d.norm_sq();
    }
    mse /= (a.len() * 3) as f64;
    if mse <= 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Mean over valid pixels of (1 - N . N_hat). The pseudo-normal N_hat is
/// treated as detached: adjoints are returned for N only.
pub fn normal_loss(
    n: &[Vec3],
    n_hat: &[Vec3],
    valid: &[bool],
) -> (f64, Vec<Vec3>) {
    let count = valid.iter().filter(|&&v| v).count();
    let mut adj = vec![Vec3::ZERO; n.len()];
    if count == 0 {
        return (0.0, adj);
    }
    let mut sum = 0.0;
    for i in 0..n.len() {
        if valid[i] {
            sum += 1.0 - n[i].dot(n_hat[i]);
            adj[i] = -n_hat[i] / count as f64;
        }
    }
    (sum / count as f64, adj)
}

/// Mean over Gaussians of gamma^k ||dn||^2. The gamma weights come in
/// precomputed and are treated as constants in the adjoint.
pub fn reg_loss(delta_n: &[Vec3], gamma_k: &[f64]) -> (f64, Vec<Vec3>) {
    let n = delta_n.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut sum = 0.0;
    let mut adj = Vec::with_capacity(n);
    for (dn, g) in delta_n.iter().zip(gamma_k) {
        sum += g * dn.norm_sq();
        adj.push(*dn * (2.0 * g / n as f64));
    }
    (sum / n as f64, adj)
}

/// Loss components before gating.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub color: f64,
    pub normal: f64,
    pub reg: f64,
}

/// L = L_color + lambda_normal L_normal + L_reg, with the normal and
/// regularizer terms active only once the dynamic warmup has passed.
pub fn total_loss(terms: &LossTerms, stage: Stage, normal_active: bool) -> f64 {
    match (stage, normal_active) {
        (Stage::Static, _) | (_, false) => terms.color,
        (_, true) => terms.color + LAMBDA_NORMAL * terms.normal + terms.reg,
    }
}
