//! Image-based lighting: learnable cubemap with a GGX-prefiltered mip
//! chain, split-sum BRDF lookup table, reflection directions, and final
//! color assembly (diffuse SH term plus specular environment term).

use crate::deform::{
    deform_reflection, deform_reflection_backward, EncodingFreqs, ReflectCache,
};
use crate::error::{Error, Result};
use crate::math::{sh::SH_C0, softplus, softplus_backward, Vec3};
use crate::mlp::Mlp;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

pub const DEFAULT_ENV_RES: usize = 128;
pub const DEFAULT_MIP_COUNT: usize = 5;
pub const DEFAULT_PREFILTER_SPP: usize = 256;
pub const DEFAULT_LUT_RES: usize = 32;
pub const DEFAULT_LUT_SAMPLES: usize = 1024;

/// omega_r = 2 (omega_o . n) n - omega_o.
pub fn reflect(omega_o: Vec3, n: Vec3) -> Vec3 {
    n * (2.0 * omega_o.dot(n)) - omega_o
}

/// Adjoint of `reflect`: returns (grad n, grad omega_o).
pub fn reflect_backward(omega_o: Vec3, n: Vec3, grad_out: Vec3) -> (Vec3, Vec3) {
    let g_n = grad_out * (2.0 * omega_o.dot(n)) + omega_o * (2.0 * grad_out.dot(n));
    let g_o = n * (2.0 * n.dot(grad_out)) - grad_out;
    (g_n, g_o)
}

// Cube face layout: (major axis index, major sign, s axis index, s sign,
// t axis index, t sign), face order +X,-X,+Y,-Y,+Z,-Z.
const FACES: [(usize, f64, usize, f64, usize, f64); 6] = [
    (0, 1.0, 2, -1.0, 1, -1.0),
    (0, -1.0, 2, 1.0, 1, -1.0),
    (1, 1.0, 0, 1.0, 2, 1.0),
    (1, -1.0, 0, 1.0, 2, -1.0),
    (2, 1.0, 0, 1.0, 1, -1.0),
    (2, -1.0, 0, -1.0, 1, -1.0),
];

/// Face index plus in-face (u, v) in [0,1] for a nonzero direction.
pub fn dir_to_face_uv(dir: Vec3) -> Result<(usize, f64, f64)> {
    let a = dir.abs();
    if a.max_component() == 0.0 {
        return Err(Error::Domain("cannot map the zero direction to a cube face".into()));
    }
    let axis = if a.x >= a.y && a.x >= a.z { 0 } else if a.y >= a.z { 1 } else { 2 };
    let face = axis * 2 + if dir.get(axis) >= 0.0 { 0 } else { 1 };
    let (mi, ms, si, ss, ti, ts) = FACES[face];
    let m = ms * dir.get(mi);
    let u = (ss * dir.get(si) / m + 1.0) * 0.5;
    let v = (ts * dir.get(ti) / m + 1.0) * 0.5;
    Ok((face, u, v))
}

/// Unnormalized direction of a face point; inverse of `dir_to_face_uv`.
pub fn face_uv_to_dir(face: usize, u: f64, v: f64) -> Vec3 {
    let (mi, ms, si, ss, ti, ts) = FACES[face];
    let mut d = Vec3::ZERO;
    d.set(mi, ms);
    d.set(si, ss * (2.0 * u - 1.0));
    d.set(ti, ts * (2.0 * v - 1.0));
    d
}

/// d(u,v)/d(dir) rows for the face selected by `dir_to_face_uv`.
fn face_uv_jacobian(dir: Vec3, face: usize) -> (Vec3, Vec3) {
    let (mi, ms, si, ss, ti, ts) = FACES[face];
    let m = ms * dir.get(mi);
    let sc = ss * dir.get(si);
    let tc = ts * dir.get(ti);
    let mut du = Vec3::ZERO;
    du.set(si, 0.5 * ss / m);
    du.set(mi, -0.5 * sc * ms / (m * m));
    let mut dv = Vec3::ZERO;
    dv.set(ti, 0.5 * ts / m);
    dv.set(mi, -0.5 * tc * ms / (m * m));
    (du, dv)
}

/// Bilinear footprint with clamp-to-edge: texel pairs and weights plus
/// the in-cell interpolation derivative factors.
struct Bilinear {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    /// d fx / du and d fy / dv in texel units; zero when clamped.
    dfx_du: f64,
    dfy_dv: f64,
}

fn bilinear(u: f64, v: f64, res: usize) -> Bilinear {
    let r = res as f64;
    let x = u * r - 0.5;
    let y = v * r - 0.5;
    let xf = x.floor();
    let yf = y.floor();
    let clamp = |i: f64| (i.max(0.0) as usize).min(res - 1);
    let x0 = clamp(xf);
    let x1 = clamp(xf + 1.0);
    let y0 = clamp(yf);
    let y1 = clamp(yf + 1.0);
    let interior_x = xf >= 0.0 && xf + 1.0 <= r - 1.0;
    let interior_y = yf >= 0.0 && yf + 1.0 <= r - 1.0;
    Bilinear {
        x0,
        x1,
        y0,
        y1,
        fx: if interior_x { x - xf } else if xf < 0.0 { 0.0 } else { 1.0 },
        fy: if interior_y { y - yf } else if yf < 0.0 { 0.0 } else { 1.0 },
        dfx_du: if interior_x { r } else { 0.0 },
        dfy_dv: if interior_y { r } else { 0.0 },
    }
}

fn texel_index(face: usize, x: usize, y: usize, res: usize) -> usize {
    ((face * res + y) * res + x) * 3
}

fn sample_level(data: &[f64], res: usize, face: usize, u: f64, v: f64) -> Vec3 {
    let b = bilinear(u, v, res);
    let at = |x: usize, y: usize| {
        let i = texel_index(face, x, y, res);
        Vec3::new(data[i], data[i + 1], data[i + 2])
    };
    let top = at(b.x0, b.y0) * (1.0 - b.fx) + at(b.x1, b.y0) * b.fx;
    let bot = at(b.x0, b.y1) * (1.0 - b.fx) + at(b.x1, b.y1) * b.fx;
    top * (1.0 - b.fy) + bot * b.fy
}

/// Scatter `grad` into texel adjoints and return (dL/du, dL/dv).
fn sample_level_backward(
    data: &[f64],
    grad_data: &mut [f64],
    res: usize,
    face: usize,
    u: f64,
    v: f64,
    grad: Vec3,
) -> (f64, f64) {
    let b = bilinear(u, v, res);
    let w = [
        (b.x0, b.y0, (1.0 - b.fx) * (1.0 - b.fy)),
        (b.x1, b.y0, b.fx * (1.0 - b.fy)),
        (b.x0, b.y1, (1.0 - b.fx) * b.fy),
        (b.x1, b.y1, b.fx * b.fy),
    ];
    for (x, y, wt) in w {
        let i = texel_index(face, x, y, res);
        grad_data[i] += grad.x * wt;
        grad_data[i + 1] += grad.y * wt;
        grad_data[i + 2] += grad.z * wt;
    }
    let at = |x: usize, y: usize| {
        let i = texel_index(face, x, y, res);
        Vec3::new(data[i], data[i + 1], data[i + 2])
    };
    let d_fx = (at(b.x1, b.y0) - at(b.x0, b.y0)) * (1.0 - b.fy)
        + (at(b.x1, b.y1) - at(b.x0, b.y1)) * b.fy;
    let d_fy = (at(b.x0, b.y1) * (1.0 - b.fx) + at(b.x1, b.y1) * b.fx)
        - (at(b.x0, b.y0) * (1.0 - b.fx) + at(b.x1, b.y0) * b.fx);
    (grad.dot(d_fx) * b.dfx_du, grad.dot(d_fy) * b.dfy_dv)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn texel_seed(seed: u64, level: usize, face: usize, x: usize, y: usize) -> u64 {
    splitmix64(
        seed ^ splitmix64((level as u64) << 48 | (face as u64) << 40 | (x as u64) << 20 | y as u64),
    )
}

fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let up = if n.z.abs() < 0.999 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let t = up.cross(n).normalized();
    (t, n.cross(t))
}

/// GGX half-vector importance sample around `n`, returning the reflected
/// light direction for the n = v = r convention.
fn ggx_sample_l(n: Vec3, t: Vec3, b: Vec3, alpha: f64, u1: f64, u2: f64) -> Vec3 {
    let phi = 2.0 * std::f64::consts::PI * u1;
    let cos_t = ((1.0 - u2) / (1.0 + (alpha * alpha - 1.0) * u2)).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let h = t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t;
    h * (2.0 * n.dot(h)) - n
}

/// Learnable environment cubemap. Texels are stored pre-activation and
/// mapped through softplus to radiance; the mip chain holds activated
/// radiance, level m prefiltered at roughness m/M from the base level.
#[derive(Debug, Clone)]
pub struct EnvironmentCubemap {
    res: usize,
    mips: usize,
    spp: usize,
    seed: u64,
    params: Vec<f64>,
    levels: Vec<Vec<f64>>,
    dirty: bool,
}

/// Per-level texel adjoints matching `levels` shapes.
#[derive(Debug, Clone)]
pub struct CubemapGrad {
    pub levels: Vec<Vec<f64>>,
}

impl EnvironmentCubemap {
    /// Constant initial radiance `init` (softplus-inverse applied).
    pub fn new(res: usize, mips: usize, spp: usize, seed: u64, init: f64) -> Result<Self> {
        if res < 1 || res >> mips == 0 {
            return Err(Error::Config(format!(
                "cubemap resolution {res} does not support {mips} mip levels"
            )));
        }
        if init <= 0.0 {
            return Err(Error::Config("initial radiance must be positive".into()));
        }
        let raw = crate::math::softplus_inverse(init);
        Ok(EnvironmentCubemap {
            res,
            mips,
            spp,
            seed,
            params: vec![raw; 6 * res * res * 3],
            levels: Vec::new(),
            dirty: true,
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn mips(&self) -> usize {
        self.mips
    }

    pub fn spp(&self) -> usize {
        self.spp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.dirty = true;
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "cubemap expects {} parameters, got {}",
                self.params.len(),
                p.len()
            )));
        }
        self.params.copy_from_slice(p);
        self.dirty = true;
        Ok(())
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    fn level_res(&self, m: usize) -> usize {
        self.res >> m
    }

    /// Activated radiance mip chain; `prefilter` must have run first.
    pub fn levels(&self) -> Result<&[Vec<f64>]> {
        if self.dirty {
            return Err(Error::Contract("cubemap queried before prefiltering".into()));
        }
        Ok(&self.levels)
    }

    pub fn zero_grad(&self) -> CubemapGrad {
        CubemapGrad {
            levels: (0..=self.mips)
                .map(|m| vec![0.0; 6 * self.level_res(m) * self.level_res(m) * 3])
                .collect(),
        }
    }

    /// Rebuild the mip chain if base texels changed since the last build.
    pub fn ensure_prefiltered(&mut self) {
        if self.dirty {
            self.prefilter();
        }
    }

    /// Level 0 is softplus(base); level m is the GGX convolution of level
    /// 0 at roughness m/M, importance-sampled per texel with a
    /// deterministic per-texel RNG stream.
    pub fn prefilter(&mut self) {
        let base: Vec<f64> = self.params.iter().map(|&p| softplus(p)).collect();
        let mut levels = vec![base];
        for m in 1..=self.mips {
            levels.push(self.prefilter_level(&levels[0], m));
        }
        self.levels = levels;
        self.dirty = false;
    }

    fn prefilter_level(&self, base: &[f64], m: usize) -> Vec<f64> {
        let res_m = self.level_res(m);
        let rho = m as f64 / self.mips as f64;
        let alpha = rho * rho;
        let mut out = vec![0.0; 6 * res_m * res_m * 3];
        out.par_chunks_mut(3).enumerate().for_each(|(ti, px)| {
            let face = ti / (res_m * res_m);
            let rem = ti % (res_m * res_m);
            let (y, x) = (rem / res_m, rem % res_m);
            let v = self.filter_texel(base, m, face, x, y, alpha, None);
            px[0] = v.x;
            px[1] = v.y;
            px[2] = v.z;
        });
        out
    }

    /// One prefiltered texel. With `scatter` present, additionally
    /// distributes the given output adjoint onto base texels (the sample
    /// stream is recomputed rather than stored).
    fn filter_texel(
        &self,
        base: &[f64],
        m: usize,
        face: usize,
        x: usize,
        y: usize,
        alpha: f64,
        scatter: Option<(Vec3, &mut [f64])>,
    ) -> Vec3 {
        let res_m = self.level_res(m);
        let n = face_uv_to_dir(
            face,
            (x as f64 + 0.5) / res_m as f64,
            (y as f64 + 0.5) / res_m as f64,
        )
        .normalized();
        let (t, b) = tangent_frame(n);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(texel_seed(self.seed, m, face, x, y));
        let mut samples = Vec::with_capacity(self.spp);
        let mut sum_w = 0.0;
        let mut sum_c = Vec3::ZERO;
        for _ in 0..self.spp {
            let l = ggx_sample_l(n, t, b, alpha, rng.gen::<f64>(), rng.gen::<f64>());
            let ndl = n.dot(l);
            if ndl <= 0.0 {
                continue;
            }
            let (f, u, v) = dir_to_face_uv(l).expect("unit sample direction");
            sum_c = sum_c + sample_level(base, self.res, f, u, v) * ndl;
            sum_w += ndl;
            samples.push((f, u, v, ndl));
        }
        if sum_w == 0.0 {
            // Pathological texel: fall back to the center lookup.
            let (f, u, v) = dir_to_face_uv(n).expect("unit normal");
            if let Some((g, grad_base)) = scatter {
                sample_level_backward(base, grad_base, self.res, f, u, v, g);
            }
            return sample_level(base, self.res, f, u, v);
        }
        if let Some((g, grad_base)) = scatter {
            for (f, u, v, ndl) in &samples {
                sample_level_backward(base, grad_base, self.res, *f, *u, *v, g * (*ndl / sum_w));
            }
        }
        sum_c / sum_w
    }

    /// Trilinear query: bilinear within the dominant face, linear between
    /// the two mips bracketing rho * M.
    pub fn query(&self, dir: Vec3, roughness: f64) -> Result<Vec3> {
        let levels = self.levels()?;
        let (face, u, v) = dir_to_face_uv(dir)?;
        let (m0, m1, f) = self.mip_lerp(roughness);
        let c0 = sample_level(&levels[m0], self.level_res(m0), face, u, v);
        if m1 == m0 {
            return Ok(c0);
        }
        let c1 = sample_level(&levels[m1], self.level_res(m1), face, u, v);
        Ok(c0 * (1.0 - f) + c1 * f)
    }

    fn mip_lerp(&self, roughness: f64) -> (usize, usize, f64) {
        let l = roughness.clamp(0.0, 1.0) * self.mips as f64;
        let m0 = (l.floor() as usize).min(self.mips);
        let m1 = (m0 + 1).min(self.mips);
        (m0, m1, l - m0 as f64)
    }

    /// Adjoint of `query`: scatters into per-level texel grads, returns
    /// (grad dir, grad roughness). Face selection is locally constant.
    pub fn query_backward(
        &self,
        dir: Vec3,
        roughness: f64,
        grad_out: Vec3,
        grads: &mut CubemapGrad,
    ) -> Result<(Vec3, f64)> {
        let levels = self.levels()?;
        let (face, u, v) = dir_to_face_uv(dir)?;
        let (m0, m1, f) = self.mip_lerp(roughness);
        let (mut gu, mut gv) = sample_level_backward(
            &levels[m0],
            &mut grads.levels[m0],
            self.level_res(m0),
            face,
            u,
            v,
            grad_out * (1.0 - f),
        );
        let mut g_rho = 0.0;
        if m1 != m0 {
            let (gu1, gv1) = sample_level_backward(
                &levels[m1],
                &mut grads.levels[m1],
                self.level_res(m1),
                face,
                u,
                v,
                grad_out * f,
            );
            gu += gu1;
            gv += gv1;
            let c0 = sample_level(&levels[m0], self.level_res(m0), face, u, v);
            let c1 = sample_level(&levels[m1], self.level_res(m1), face, u, v);
            if roughness > 0.0 && roughness < 1.0 {
                g_rho = grad_out.dot(c1 - c0) * self.mips as f64;
            }
        }
        let (du, dv) = face_uv_jacobian(dir, face);
        Ok((du * gu + dv * gv, g_rho))
    }

    /// Chain accumulated level adjoints back to the pre-activation
    /// parameters: mip levels back through the prefilter convolution,
    /// then everything through the softplus activation.
    pub fn backward_to_params(&self, grads: &CubemapGrad, out: &mut [f64]) -> Result<()> {
        if self.dirty {
            return Err(Error::Contract("cubemap backward requires a prefiltered state".into()));
        }
        if out.len() != self.params.len() || grads.levels.len() != self.mips + 1 {
            return Err(Error::Contract("cubemap gradient shape mismatch".into()));
        }
        let base = &self.levels[0];
        let mut grad_base = grads.levels[0].clone();
        // Parallel per-mip-texel scatter into thread-local buffers folded
        // in a fixed order for determinism.
        for m in 1..=self.mips {
            let res_m = self.level_res(m);
            let rho = m as f64 / self.mips as f64;
            let alpha = rho * rho;
            let tex_count = 6 * res_m * res_m;
            let chunk = 512;
            let partials: Vec<Vec<f64>> = (0..tex_count)
                .collect::<Vec<_>>()
                .par_chunks(chunk)
                .map(|ids| {
                    let mut local = vec![0.0; base.len()];
                    for &ti in ids {
                        let g = Vec3::new(
                            grads.levels[m][ti * 3],
                            grads.levels[m][ti * 3 + 1],
                            grads.levels[m][ti * 3 + 2],
                        );
                        if g == Vec3::ZERO {
                            continue;
                        }
                        let face = ti / (res_m * res_m);
                        let rem = ti % (res_m * res_m);
                        self.filter_texel(
                            base,
                            m,
                            face,
                            rem % res_m,
                            rem / res_m,
                            alpha,
                            Some((g, &mut local)),
                        );
                    }
                    local
                })
                .collect();
            for p in partials {
                for (a, b) in grad_base.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        for i in 0..out.len() {
            out[i] += softplus_backward(self.params[i], grad_base[i]);
        }
        Ok(())
    }
}

/// 32x32 split-sum BRDF integration table over (cos theta, roughness).
#[derive(Debug, Clone)]
pub struct EnvBrdfLut {
    res: usize,
    f1: Vec<f64>,
    f2: Vec<f64>,
}

fn smith_g(ndv: f64, ndl: f64, alpha: f64) -> f64 {
    // Height-correlated Smith for GGX.
    let a2 = alpha * alpha;
    let lv = ndl * (a2 + (1.0 - a2) * ndv * ndv).sqrt();
    let ll = ndv * (a2 + (1.0 - a2) * ndl * ndl).sqrt();
    2.0 * ndl * ndv / (lv + ll)
}

/// GGX split-sum integration, 1024 samples per cell by default.
pub fn build_env_brdf_lut(res: usize, samples: usize, seed: u64) -> EnvBrdfLut {
    let mut f1 = vec![0.0; res * res];
    let mut f2 = vec![0.0; res * res];
    f1.par_iter_mut().zip(f2.par_iter_mut()).enumerate().for_each(|(idx, (o1, o2))| {
        let (j, i) = (idx / res, idx % res);
        let ndv = ((i as f64 + 0.5) / res as f64).max(1e-4);
        let rho = (j as f64 + 0.5) / res as f64;
        let alpha = (rho * rho).max(1e-4);
        let n = Vec3::new(0.0, 0.0, 1.0);
        let v = Vec3::new((1.0 - ndv * ndv).max(0.0).sqrt(), 0.0, ndv);
        let t = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(texel_seed(seed, 0, 0, i, j));
        let (mut a, mut bb) = (0.0, 0.0);
        for _ in 0..samples {
            let (u1, u2) = (rng.gen::<f64>(), rng.gen::<f64>());
            let phi = 2.0 * std::f64::consts::PI * u1;
            let cos_t = ((1.0 - u2) / (1.0 + (alpha * alpha - 1.0) * u2)).sqrt();
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let h = t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t;
            let l = h * (2.0 * v.dot(h)) - v;
            if l.z <= 0.0 {
                continue;
            }
            let (ndl, ndh, vdh) = (l.z, h.z.max(1e-8), v.dot(h).max(1e-8));
            let g = smith_g(ndv, ndl, alpha);
            let w = g * vdh / (ndv * ndh);
            let fc = (1.0 - vdh).powi(5);
            a += (1.0 - fc) * w;
            bb += fc * w;
        }
        let mut a = a / samples as f64;
        let mut bb = bb / samples as f64;
        // Sampling noise at grazing angles can push the estimate a hair
        // past the energy-conservation bound; renormalize.
        let sum = a + bb;
        if sum > 1.0 {
            a /= sum;
            bb /= sum;
        }
        *o1 = a;
        *o2 = bb;
    });
    EnvBrdfLut { res, f1, f2 }
}

impl EnvBrdfLut {
    pub fn res(&self) -> usize {
        self.res
    }

    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        (self.f1[j * self.res + i], self.f2[j * self.res + i])
    }

    fn axis(&self, x: f64) -> (usize, usize, f64, f64) {
        // Cell centers at (i + 0.5) / res, clamp-to-edge.
        let r = self.res as f64;
        let p = x.clamp(0.0, 1.0) * r - 0.5;
        let pf = p.floor();
        let i0 = (pf.max(0.0) as usize).min(self.res - 1);
        let i1 = (i0 + 1).min(self.res - 1);
        let interior = pf >= 0.0 && pf + 1.0 <= r - 1.0;
        let f = if interior { p - pf } else if pf < 0.0 { 0.0 } else { 1.0 };
        (i0, i1, f, if interior { r } else { 0.0 })
    }

    /// Bilinear (F1, F2) lookup.
    pub fn lookup(&self, cos_theta: f64, roughness: f64) -> (f64, f64) {
        let (i0, i1, fx, _) = self.axis(cos_theta);
        let (j0, j1, fy, _) = self.axis(roughness);
        let pick = |v: &[f64]| {
            let top = v[j0 * self.res + i0] * (1.0 - fx) + v[j0 * self.res + i1] * fx;
            let bot = v[j1 * self.res + i0] * (1.0 - fx) + v[j1 * self.res + i1] * fx;
            top * (1.0 - fy) + bot * fy
        };
        (pick(&self.f1), pick(&self.f2))
    }

    /// Adjoint of `lookup` w.r.t. (cos theta, roughness).
    pub fn lookup_backward(&self, cos_theta: f64, roughness: f64, g1: f64, g2: f64) -> (f64, f64) {
        let (i0, i1, fx, dfx) = self.axis(cos_theta);
        let (j0, j1, fy, dfy) = self.axis(roughness);
        let mut gc = 0.0;
        let mut gr = 0.0;
        for (v, g) in [(&self.f1, g1), (&self.f2, g2)] {
            let d_fx = (v[j0 * self.res + i1] - v[j0 * self.res + i0]) * (1.0 - fy)
                + (v[j1 * self.res + i1] - v[j1 * self.res + i0]) * fy;
            let d_fy = (v[j1 * self.res + i0] * (1.0 - fx) + v[j1 * self.res + i1] * fx)
                - (v[j0 * self.res + i0] * (1.0 - fx) + v[j0 * self.res + i1] * fx);
            gc += g * d_fx * dfx;
            gr += g * d_fy * dfy;
        }
        (gc, gr)
    }
}

/// c_s = (s_tint * F1 + F2) (.) L_env, clamped at zero below.
pub fn specular_color(s_tint: Vec3, f1: f64, f2: f64, l_env: Vec3) -> Vec3 {
    (s_tint * f1 + Vec3::splat(f2)).mul_elem(l_env).max_elem(0.0)
}

/// Per-Gaussian shading inputs (activated values, not raw parameters).
#[derive(Debug, Clone, Copy)]
pub struct ShadeInput {
    /// Degree-0 SH coefficient of the Gaussian.
    pub sh0: Vec3,
    pub s_tint: Vec3,
    pub roughness: f64,
    /// Unit shading normal, oriented toward the viewer.
    pub normal: Vec3,
    /// Unit direction from the Gaussian toward the camera.
    pub omega_o: Vec3,
    pub t: f64,
}

pub struct ShadeCache {
    omega_r: Vec3,
    omega_bar: Vec3,
    reflect_cache: Option<ReflectCache>,
    f1: f64,
    f2: f64,
    l_env: Vec3,
    c_d: Vec3,
    c_s_raw: Vec3,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ShadeGrads {
    pub d_sh0: Vec3,
    pub d_s_tint: Vec3,
    pub d_roughness: f64,
    pub d_normal: Vec3,
    pub d_omega_o: Vec3,
}

/// Final color c = c_d + c_s: diffuse from degree-0 SH plus the split-sum
/// specular environment term, optionally querying through the reflection
/// deformation network.
pub fn shade(
    inp: &ShadeInput,
    env: &EnvironmentCubemap,
    lut: &EnvBrdfLut,
    theta_r: Option<(&Mlp, EncodingFreqs)>,
) -> Result<(Vec3, ShadeCache)> {
    let c_d = (inp.sh0 * SH_C0 + Vec3::splat(0.5)).max_elem(0.0);
    let omega_r = reflect(inp.omega_o, inp.normal);
    let (omega_bar, reflect_cache) = match theta_r {
        Some((mlp, freqs)) => {
            let (w, cache) = deform_reflection(mlp, freqs, omega_r, inp.t)?;
            (w, Some(cache))
        }
        // Normalized exactly like the deformable path so zero residuals
        // reproduce this branch bit-for-bit.
        None => (omega_r.normalized(), None),
    };
    let (f1, f2) = lut.lookup(inp.normal.dot(inp.omega_o), inp.roughness);
    let l_env = env.query(omega_bar, inp.roughness)?;
    let c_s_raw = (inp.s_tint * f1 + Vec3::splat(f2)).mul_elem(l_env);
    let c_s = c_s_raw.max_elem(0.0);
    Ok((
        c_d + c_s,
        ShadeCache { omega_r, omega_bar, reflect_cache, f1, f2, l_env, c_d, c_s_raw },
    ))
}

/// Adjoint of `shade`. Cubemap texel adjoints go into `env_grads`;
/// reflection-network adjoints into `theta_r_grads` when deformable.
pub fn shade_backward(
    inp: &ShadeInput,
    cache: &ShadeCache,
    env: &EnvironmentCubemap,
    lut: &EnvBrdfLut,
    theta_r: Option<(&Mlp, EncodingFreqs)>,
    grad_color: Vec3,
    env_grads: &mut CubemapGrad,
    theta_r_grads: Option<&mut [f64]>,
) -> Result<ShadeGrads> {
    let mut g = ShadeGrads::default();
    // Diffuse: clamp mask, then the SH0 constant.
    let mask = |v: f64, raw: f64| if raw > 0.0 { v } else { 0.0 };
    g.d_sh0 = Vec3::new(
        mask(grad_color.x, cache.c_d.x) * SH_C0,
        mask(grad_color.y, cache.c_d.y) * SH_C0,
        mask(grad_color.z, cache.c_d.z) * SH_C0,
    );
    // Specular clamp mask.
    let g_cs = Vec3::new(
        mask(grad_color.x, cache.c_s_raw.x),
        mask(grad_color.y, cache.c_s_raw.y),
        mask(grad_color.z, cache.c_s_raw.z),
    );
    let k = inp.s_tint * cache.f1 + Vec3::splat(cache.f2);
    let g_k = g_cs.mul_elem(cache.l_env);
    let g_l = g_cs.mul_elem(k);
    g.d_s_tint = g_k * cache.f1;
    let g_f1 = g_k.dot(inp.s_tint);
    let g_f2 = g_k.x + g_k.y + g_k.z;
    let (g_cos, g_rho_lut) = lut.lookup_backward(inp.normal.dot(inp.omega_o), inp.roughness, g_f1, g_f2);
    let (g_dir, g_rho_q) = env.query_backward(cache.omega_bar, inp.roughness, g_l, env_grads)?;
    g.d_roughness = g_rho_lut + g_rho_q;
    let g_omega_r = match (theta_r, cache.reflect_cache.as_ref()) {
        (Some((mlp, freqs)), Some(rc)) => {
            let grads = theta_r_grads
                .ok_or_else(|| Error::Contract("missing reflection network gradient buffer".into()))?;
            deform_reflection_backward(mlp, freqs, rc, g_dir, grads)?
        }
        (None, None) => Vec3::normalize_backward(cache.omega_r, g_dir),
        _ => return Err(Error::Contract("shade cache and network arguments disagree".into())),
    };
    let (g_n, g_o) = reflect_backward(inp.omega_o, inp.normal, g_omega_r);
    g.d_normal = g_n + inp.omega_o * g_cos;
    g.d_omega_o = g_o + inp.normal * g_cos;
    let _ = cache.omega_r;
    Ok(g)
}
