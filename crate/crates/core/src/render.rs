//! Full-frame differentiable rendering: per-Gaussian deformation,
//! covariance projection, physically based normal estimation, environment
//! shading, and tile compositing, with exact adjoints back to every
//! trainable parameter group.

use crate::deform::{
    apply_deformation, apply_deformation_backward, deform_gaussian, deform_gaussian_backward,
    DeformCache, DeformOutput, DeformedAttributes,
};
use crate::env::{shade, shade_backward, EnvBrdfLut, ShadeCache, ShadeInput};
use crate::error::{Error, Result};
use crate::gaussian::{
    build_covariance, build_covariance_backward, gaussian_axes, project_covariance,
    project_covariance_backward, project_point_backward, AxisFrame, Camera, Sym2,
};
use crate::math::quat::{quat_to_rotmat_backward, Quat};
use crate::math::sh::{eval_sh, eval_sh_backward, ShCoefficients};
use crate::math::{sigmoid, sigmoid_backward, Mat3, Vec3};
use crate::model::Model;
use crate::normals::{gamma_weight, normal_chain, normal_chain_backward, NormalChain, NormalChainInput};
use crate::raster::{
    bin_and_sort, composite_backward, composite_forward, PixelAdjoints, RenderBuffers, Splat2D,
    TileLists, TILE_SIZE,
};
use rayon::prelude::*;

/// Default near-plane distance for culling (world units).
pub const DEFAULT_NEAR: f64 = 0.01;
/// Anisotropy-weight exponent for the normal residual regularizer.
pub const DEFAULT_GAMMA_K: u32 = 5;
/// SH degree used for the view-dependent diffuse fallback color.
pub const SH_DEGREE: usize = 3;

/// How the specular environment term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvMode {
    /// No environment map at all; color comes from full SH evaluation.
    ShOnly,
    /// Split-sum cubemap queried directly along the reflected direction.
    StaticEnv,
    /// Cubemap queried through the reflection deformation network.
    DeformableEnv,
}

impl std::str::FromStr for EnvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<EnvMode> {
        match s {
            "SH-only" => Ok(EnvMode::ShOnly),
            "static-env" => Ok(EnvMode::StaticEnv),
            "deformable-env" => Ok(EnvMode::DeformableEnv),
            other => Err(Error::Usage(format!("unknown environment mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for EnvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvMode::ShOnly => "SH-only",
            EnvMode::StaticEnv => "static-env",
            EnvMode::DeformableEnv => "deformable-env",
        })
    }
}

/// How per-Gaussian shading normals are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalMode {
    /// Shortest scaling axis, flipped toward the viewer.
    ShortestAxis,
    /// Residual-corrected normal chain (align / rotate / rescale).
    Physical,
}

impl std::str::FromStr for NormalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<NormalMode> {
        match s {
            "shortest-axis" => Ok(NormalMode::ShortestAxis),
            "physical" => Ok(NormalMode::Physical),
            other => Err(Error::Usage(format!("unknown normal mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for NormalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormalMode::ShortestAxis => "shortest-axis",
            NormalMode::Physical => "physical",
        })
    }
}

/// Per-frame rendering switches. Stage gating in the trainer is expressed
/// entirely through these flags.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub env_mode: EnvMode,
    pub normal_mode: NormalMode,
    /// Apply the Gaussian deformation network (dynamic stage active).
    pub deform: bool,
    /// Route cubemap queries through the reflection network (only has an
    /// effect under `DeformableEnv`).
    pub reflect_deform: bool,
    /// Split-sum specular shading; when false color falls back to SH.
    pub specular: bool,
    pub near: f64,
    pub gamma_k: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            env_mode: EnvMode::DeformableEnv,
            normal_mode: NormalMode::Physical,
            deform: true,
            reflect_deform: true,
            specular: true,
            near: DEFAULT_NEAR,
            gamma_k: DEFAULT_GAMMA_K,
        }
    }
}

impl RenderOptions {
    pub fn specular_active(&self) -> bool {
        self.specular && self.env_mode != EnvMode::ShOnly
    }

    pub fn reflection_active(&self) -> bool {
        self.specular_active() && self.env_mode == EnvMode::DeformableEnv && self.reflect_deform
    }
}

/// Per-visible-Gaussian forward state retained for the backward pass.
struct GaussCtx {
    gauss: usize,
    residual: DeformOutput,
    deform_cache: Option<DeformCache>,
    attrs: DeformedAttributes,
    sigma: Mat3,
    inv_cov: Sym2,
    omega_o: Vec3,
    axes_canon: AxisFrame,
    axes_def: AxisFrame,
    /// Physical-normal chain state; `None` in shortest-axis mode or for
    /// degenerate (isotropic) Gaussians that fall back to shortest-axis.
    chain: Option<(NormalChainInput, NormalChain)>,
    /// Orientation sign of the shortest-axis fallback normal.
    axis_sign: f64,
    shade: Option<(ShadeInput, ShadeCache)>,
    /// SH color before the zero clamp (clamp mask for the backward pass).
    sh_raw: Vec3,
    gamma: f64,
}

/// A rendered frame plus everything needed to run the adjoint pass.
pub struct FrameRender {
    pub width: usize,
    pub height: usize,
    pub camera: Camera,
    pub options: RenderOptions,
    pub splats: Vec<Splat2D>,
    pub tiles: TileLists,
    pub buffers: RenderBuffers,
    ctxs: Vec<GaussCtx>,
}

impl FrameRender {
    /// Indices of the Gaussians that produced splats, in splat order.
    pub fn visible(&self) -> Vec<usize> {
        self.ctxs.iter().map(|c| c.gauss).collect()
    }

    /// Residuals and (detached) anisotropy weights of the visible
    /// Gaussians, in splat order, for the normal-residual regularizer.
    pub fn reg_terms(&self, model: &Model) -> (Vec<Vec3>, Vec<f64>) {
        let dn = self.ctxs.iter().map(|c| model.gaussians.normal_residuals[c.gauss]).collect();
        let gamma = self.ctxs.iter().map(|c| c.gamma).collect();
        (dn, gamma)
    }

    /// Chain adjoints on renormalized per-pixel unit normals back onto the
    /// raw alpha-weighted normal sums the compositor accumulates.
    /// `grad_unit` must be per-pixel and is ignored where no unit normal
    /// is defined.
    pub fn add_unit_normal_adjoint(&self, grad_unit: &[Vec3], adj: &mut PixelAdjoints) {
        for i in 0..self.buffers.normal.len() {
            if self.buffers.unit_normal(i).is_some() {
                adj.normal[i] += Vec3::normalize_backward(self.buffers.normal[i], grad_unit[i]);
            }
        }
    }
}

/// Gradients for every trainable parameter group, shaped like the model.
pub struct ModelGrads {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub raw_opacities: Vec<f64>,
    pub sh: Vec<ShCoefficients>,
    pub specular_tints: Vec<Vec3>,
    pub raw_roughness: Vec<f64>,
    pub normal_residuals: Vec<Vec3>,
    pub theta_g: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub env: Vec<f64>,
    /// Per-Gaussian screen-space center gradient norms (densification
    /// statistic, not a descent direction).
    pub screen: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &Model) -> ModelGrads {
        let n = model.gaussians.len();
        ModelGrads {
            positions: vec![Vec3::ZERO; n],
            rotations: vec![Quat::new(0.0, 0.0, 0.0, 0.0); n],
            log_scales: vec![Vec3::ZERO; n],
            raw_opacities: vec![0.0; n],
            sh: vec![[Vec3::ZERO; 16]; n],
            specular_tints: vec![Vec3::ZERO; n],
            raw_roughness: vec![0.0; n],
            normal_residuals: vec![Vec3::ZERO; n],
            theta_g: vec![0.0; model.theta_g.param_count()],
            theta_r: vec![0.0; model.theta_r.param_count()],
            env: vec![0.0; model.env.params().len()],
            screen: vec![0.0; n],
        }
    }
}

fn theta_r_args<'m>(
    model: &'m Model,
    opts: &RenderOptions,
) -> Option<(&'m crate::mlp::Mlp, crate::deform::EncodingFreqs)> {
    if opts.reflection_active() {
        Some((&model.theta_r, model.freqs))
    } else {
        None
    }
}

// Forward state for one Gaussian, or None when culled. Runs on worker
// threads; only reads the model.
fn forward_gaussian(
    model: &Model,
    lut: Option<&EnvBrdfLut>,
    cam: &Camera,
    opts: &RenderOptions,
    i: usize,
) -> Result<Option<(GaussCtx, Splat2D)>> {
    let g = &model.gaussians;
    let t = cam.time;

    let (residual, deform_cache) = if opts.deform {
        let (r, c) = deform_gaussian(&model.theta_g, model.freqs, g.positions[i], t)?;
        (r, Some(c))
    } else {
        (DeformOutput::ZERO, None)
    };
    let attrs = apply_deformation(g.positions[i], g.rotations[i], g.log_scales[i], &residual)?;

    let sigma = build_covariance(attrs.log_scale, attrs.rotation)?;
    let proj = match project_covariance(&sigma, cam, attrs.position, opts.near) {
        Some(p) => p,
        None => return Ok(None),
    };
    let inv_cov = match proj.cov2d.inverse() {
        Ok(ic) => ic,
        Err(_) => return Ok(None),
    };
    let center = cam.project(cam.to_camera(attrs.position));

    let to_cam = cam.center() - attrs.position;
    if to_cam.norm() < 1e-9 {
        return Ok(None);
    }
    let omega_o = to_cam.normalized();

    let axes_canon = gaussian_axes(g.log_scales[i], g.rotations[i])?;
    let axes_def = gaussian_axes(attrs.log_scale, attrs.rotation)?;

    // Physical normal chain; isotropic Gaussians (short == long by
    // tie-break) have no defined triad and fall back to shortest-axis.
    let mut chain = None;
    let mut axis_sign = 1.0;
    let normal_world = if opts.normal_mode == NormalMode::Physical
        && !axes_canon.degenerate
        && !axes_def.degenerate
    {
        let inp = NormalChainInput {
            delta_n: g.normal_residuals[i],
            v_s: axes_canon.v_short,
            v_l: axes_canon.v_long,
            len_s: axes_canon.len_short,
            len_l: axes_canon.len_long,
            v_s_t: axes_def.v_short,
            v_l_t: axes_def.v_long,
            len_s_t: axes_def.len_short,
            len_l_t: axes_def.len_long,
            omega_o,
        };
        let fwd = normal_chain(&inp)?;
        let n = fwd.normal;
        chain = Some((inp, fwd));
        n
    } else {
        if axes_def.v_short.dot(omega_o) < 0.0 {
            axis_sign = -1.0;
        }
        axes_def.v_short * axis_sign
    };

    let mut shade_state = None;
    let mut sh_raw = Vec3::ZERO;
    let color = if opts.specular_active() {
        let lut = lut.ok_or_else(|| Error::Contract("specular shading requires a BRDF LUT".into()))?;
        let inp = ShadeInput {
            sh0: g.sh[i][0],
            s_tint: g.specular_tints[i],
            roughness: sigmoid(g.raw_roughness[i]),
            normal: normal_world,
            omega_o,
            t,
        };
        let (c, cache) = shade(&inp, &model.env, lut, theta_r_args(model, opts))?;
        shade_state = Some((inp, cache));
        c
    } else {
        let raw = eval_sh(SH_DEGREE, &g.sh[i], -omega_o)? + Vec3::splat(0.5);
        sh_raw = raw;
        raw.max_elem(0.0)
    };

    let gamma = gamma_weight(axes_def.len_short, axes_def.len_long, opts.gamma_k);

    let splat = Splat2D {
        center,
        inv_cov,
        depth: proj.depth,
        opacity: sigmoid(g.raw_opacities[i]),
        color,
        normal: cam.rot * normal_world,
        index: i,
    };
    let ctx = GaussCtx {
        gauss: i,
        residual,
        deform_cache,
        attrs,
        sigma,
        inv_cov,
        omega_o,
        axes_canon,
        axes_def,
        chain,
        axis_sign,
        shade: shade_state,
        sh_raw,
        gamma,
    };
    Ok(Some((ctx, splat)))
}

/// Render one frame. The environment must already be prefiltered when
/// specular shading is active; `lut` is required in that case too.
pub fn render(
    model: &Model,
    lut: Option<&EnvBrdfLut>,
    cam: &Camera,
    opts: &RenderOptions,
) -> Result<FrameRender> {
    if opts.specular_active() && model.env.is_dirty() {
        return Err(Error::Contract("environment cubemap must be prefiltered before rendering".into()));
    }
    let n = model.gaussians.len();
    let results: Result<Vec<Option<(GaussCtx, Splat2D)>>> = (0..n)
        .into_par_iter()
        .map(|i| forward_gaussian(model, lut, cam, opts, i))
        .collect();
    let mut ctxs = Vec::new();
    let mut splats = Vec::new();
    for item in results?.into_iter().flatten() {
        ctxs.push(item.0);
        splats.push(item.1);
    }
    let (width, height) = (cam.width, cam.height);
    let tiles = bin_and_sort(&splats, width, height, TILE_SIZE);
    let buffers = composite_forward(&splats, &tiles, width, height);
    Ok(FrameRender { width, height, camera: cam.clone(), options: *opts, splats, tiles, buffers, ctxs })
}

/// Adjoint of `render`. `adj` holds per-pixel adjoints on the raw
/// compositor outputs; `reg_adj` (optional, splat order) holds the
/// regularizer adjoints on the visible normal residuals.
pub fn render_backward(
    frame: &FrameRender,
    model: &Model,
    lut: Option<&EnvBrdfLut>,
    adj: &PixelAdjoints,
    reg_adj: &[Vec3],
) -> Result<ModelGrads> {
    if !reg_adj.is_empty() && reg_adj.len() != frame.ctxs.len() {
        return Err(Error::Contract("regularizer adjoint count does not match visible Gaussians".into()));
    }
    let opts = &frame.options;
    let cam = &frame.camera;
    let g = &model.gaussians;
    let mut grads = ModelGrads::zeros(model);
    let mut env_grad = model.env.zero_grad();
    let splat_grads = composite_backward(&frame.splats, &frame.tiles, &frame.buffers, adj)?;

    for (vi, ctx) in frame.ctxs.iter().enumerate() {
        let i = ctx.gauss;
        let sg = &splat_grads[vi];
        grads.screen[i] = (sg.d_center.0 * sg.d_center.0 + sg.d_center.1 * sg.d_center.1).sqrt();

        // Splat normal was rotated into camera space: n_cam = R n_world.
        let mut g_n_world = cam.rot.transpose() * sg.d_normal;
        let mut d_omega_o = Vec3::ZERO;

        // Color.
        match (&ctx.shade, lut) {
            (Some((inp, cache)), Some(lut)) => {
                let theta_r = theta_r_args(model, opts);
                let tr_grads =
                    if theta_r.is_some() { Some(grads.theta_r.as_mut_slice()) } else { None };
                let s = shade_backward(inp, cache, &model.env, lut, theta_r, sg.d_color, &mut env_grad, tr_grads)?;
                grads.sh[i][0] += s.d_sh0;
                grads.specular_tints[i] += s.d_s_tint;
                grads.raw_roughness[i] += sigmoid_backward(inp.roughness, s.d_roughness);
                g_n_world += s.d_normal;
                d_omega_o += s.d_omega_o;
            }
            (Some(_), None) => {
                return Err(Error::Contract("specular shading requires a BRDF LUT".into()));
            }
            (None, _) => {
                // SH fallback with the zero-clamp mask; the evaluation
                // direction is treated as fixed.
                let mask = Vec3::new(
                    if ctx.sh_raw.x > 0.0 { sg.d_color.x } else { 0.0 },
                    if ctx.sh_raw.y > 0.0 { sg.d_color.y } else { 0.0 },
                    if ctx.sh_raw.z > 0.0 { sg.d_color.z } else { 0.0 },
                );
                eval_sh_backward(SH_DEGREE, -ctx.omega_o, mask, &mut grads.sh[i])?;
            }
        }

        // Opacity activation.
        let opacity = frame.splats[vi].opacity;
        grads.raw_opacities[i] += sigmoid_backward(opacity, sg.d_opacity);

        // Screen-space center and depth back to the deformed position.
        let mut d_pos_def = project_point_backward(cam, ctx.attrs.position, sg.d_center);
        d_pos_def += cam.rot.transpose() * Vec3::new(0.0, 0.0, sg.d_depth);

        // 2D covariance chain: inv_cov -> cov2d -> (sigma, position).
        let d_cov2d = Sym2::inverse_backward(&ctx.inv_cov, &sg.d_inv_cov);
        let (d_sigma, d_pos_cov) = project_covariance_backward(&ctx.sigma, cam, ctx.attrs.position, &d_cov2d);
        d_pos_def += d_pos_cov;
        let (mut d_ls_def, mut d_q_def) =
            build_covariance_backward(ctx.attrs.log_scale, ctx.attrs.rotation, &d_sigma)?;

        // Normal chain back to both axis frames and the residual.
        let mut d_q_canon = Quat::new(0.0, 0.0, 0.0, 0.0);
        let mut d_ls_canon = Vec3::ZERO;
        match &ctx.chain {
            Some((inp, fwd)) => {
                let ng = normal_chain_backward(inp, fwd, g_n_world);
                grads.normal_residuals[i] += ng.d_delta_n;
                let mut g_can = Mat3::ZERO;
                add_col(&mut g_can, ctx.axes_canon.idx_short, ng.d_v_s);
                add_col(&mut g_can, ctx.axes_canon.idx_long, ng.d_v_l);
                d_q_canon = d_q_canon.add(quat_to_rotmat_backward(g.rotations[i], &g_can)?);
                d_ls_canon.set(
                    ctx.axes_canon.idx_short,
                    d_ls_canon.get(ctx.axes_canon.idx_short) + ng.d_len_s * ctx.axes_canon.len_short,
                );
                d_ls_canon.set(
                    ctx.axes_canon.idx_long,
                    d_ls_canon.get(ctx.axes_canon.idx_long) + ng.d_len_l * ctx.axes_canon.len_long,
                );
                let mut g_def = Mat3::ZERO;
                add_col(&mut g_def, ctx.axes_def.idx_short, ng.d_v_s_t);
                add_col(&mut g_def, ctx.axes_def.idx_long, ng.d_v_l_t);
                d_q_def = d_q_def.add(quat_to_rotmat_backward(ctx.attrs.rotation, &g_def)?);
                d_ls_def.set(
                    ctx.axes_def.idx_short,
                    d_ls_def.get(ctx.axes_def.idx_short) + ng.d_len_s_t * ctx.axes_def.len_short,
                );
                d_ls_def.set(
                    ctx.axes_def.idx_long,
                    d_ls_def.get(ctx.axes_def.idx_long) + ng.d_len_l_t * ctx.axes_def.len_long,
                );
            }
            None => {
                // Shortest-axis normal: one rotation column, fixed sign.
                let mut g_def = Mat3::ZERO;
                add_col(&mut g_def, ctx.axes_def.idx_short, g_n_world * ctx.axis_sign);
                d_q_def = d_q_def.add(quat_to_rotmat_backward(ctx.attrs.rotation, &g_def)?);
            }
        }

        // Regularizer adjoint lands directly on the residual (the
        // anisotropy weight is detached).
        if !reg_adj.is_empty() {
            grads.normal_residuals[i] += reg_adj[vi];
        }

        // omega_o = normalize(camera_center - x_deformed).
        if d_omega_o != Vec3::ZERO {
            d_pos_def += -Vec3::normalize_backward(cam.center() - ctx.attrs.position, d_omega_o);
        }

        // Deformation: deformed attributes back to canonical + residual.
        let (d_x, d_q_store, d_ls, d_residual) =
            apply_deformation_backward(g.rotations[i], &ctx.residual, d_pos_def, d_q_def, d_ls_def);
        grads.positions[i] += d_x;
        grads.rotations[i] = grads.rotations[i].add(d_q_store).add(d_q_canon);
        grads.log_scales[i] += d_ls + d_ls_canon;
        if let Some(cache) = &ctx.deform_cache {
            deform_gaussian_backward(&model.theta_g, cache, &d_residual, &mut grads.theta_g)?;
        }
    }

    if opts.specular_active() {
        model.env.backward_to_params(&env_grad, &mut grads.env)?;
    }
    Ok(grads)
}

fn add_col(m: &mut Mat3, c: usize, v: Vec3) {
    for r in 0..3 {
        m.set(r, c, m.at(r, c) + v.get(r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_env_brdf_lut, EnvironmentCubemap};
    use crate::gaussian::{Gaussian, GaussianSet};
    use crate::math::inverse_sigmoid;
    use crate::model::Model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera(width: usize, height: usize, t: f64) -> Camera {
        Camera {
            rot: Mat3::IDENTITY,
            trans: Vec3::ZERO,
            fx: 22.0,
            fy: 22.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            time: t,
        }
    }

    fn rand_unit_quat(rng: &mut impl Rng) -> Quat {
        loop {
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if q.norm() > 0.3 {
                return q.normalized().unwrap();
            }
        }
    }

    fn test_model(n: usize, seed: u64, opaque: bool) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = GaussianSet::default();
        for k in 0..n {
            let ring = 0.55 + 0.25 * (k as f64 / n.max(1) as f64);
            let ang = 2.1 * k as f64 + 0.4;
            let mut sh = [Vec3::ZERO; 16];
            for c in sh.iter_mut().take(4) {
                *c = Vec3::new(
                    rng.gen_range(0.1..0.6),
                    rng.gen_range(0.1..0.6),
                    rng.gen_range(0.1..0.6),
                );
            }
            set.push(Gaussian {
                position: Vec3::new(
                    ring * ang.cos(),
                    ring * ang.sin(),
                    3.0 + rng.gen_range(-0.3..0.3),
                ),
                rotation: rand_unit_quat(&mut rng),
                log_scale: Vec3::new(
                    rng.gen_range(-1.6..-1.2),
                    rng.gen_range(-1.1..-0.8),
                    rng.gen_range(-0.7..-0.4),
                ),
                raw_opacity: inverse_sigmoid(if opaque { 0.85 } else { 0.45 }),
                sh,
                specular_tint: Vec3::new(
                    rng.gen_range(0.3..0.7),
                    rng.gen_range(0.3..0.7),
                    rng.gen_range(0.3..0.7),
                ),
                raw_roughness: rng.gen_range(-0.4..0.4),
                normal_residual: Vec3::new(
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                ),
            });
        }
        let mut env = EnvironmentCubemap::new(8, 2, 16, 5, 0.4).unwrap();
        {
            let p = env.params_mut();
            let mut erng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            for v in p.iter_mut() {
                *v = erng.gen_range(0.1..1.2);
            }
        }
        env.ensure_prefiltered();
        let freqs = crate::deform::EncodingFreqs { position: 4, time: 2, direction: 2 };
        let mut model = Model::new(set, freqs, 16, 3, env, &mut rng).unwrap();
        model.env.ensure_prefiltered();
        model
    }

    fn lut() -> EnvBrdfLut {
        build_env_brdf_lut(8, 64, 97)
    }

    fn zero_mlp(mlp: &mut crate::mlp::Mlp) {
        let n = mlp.param_count();
        mlp.set_params(&vec![0.0; n]).unwrap();
    }

    #[test]
    fn identity_deformation_matches_static_bit_for_bit() {
        let mut model = test_model(6, 11, true);
        zero_mlp(&mut model.theta_g);
        zero_mlp(&mut model.theta_r);
        let cam = test_camera(24, 24, 0.7);
        let lut = lut();
        let dynamic = RenderOptions {
            env_mode: EnvMode::DeformableEnv,
            deform: true,
            reflect_deform: true,
            ..RenderOptions::default()
        };
        let static_opts = RenderOptions {
            env_mode: EnvMode::StaticEnv,
            deform: false,
            reflect_deform: false,
            ..RenderOptions::default()
        };
        let a = render(&model, Some(&lut), &cam, &dynamic).unwrap();
        let b = render(&model, Some(&lut), &cam, &static_opts).unwrap();
        assert_eq!(a.splats.len(), b.splats.len());
        assert!(!a.splats.is_empty());
        for i in 0..a.buffers.color.len() {
            assert_eq!(a.buffers.color[i], b.buffers.color[i], "color pixel {i}");
            assert_eq!(a.buffers.depth[i], b.buffers.depth[i], "depth pixel {i}");
            assert_eq!(a.buffers.normal[i], b.buffers.normal[i], "normal pixel {i}");
            assert_eq!(a.buffers.alpha[i], b.buffers.alpha[i], "alpha pixel {i}");
        }
    }

    #[test]
    fn behind_camera_is_culled() {
        let mut model = test_model(3, 7, true);
        for p in model.gaussians.positions.iter_mut() {
            p.z = -2.0;
        }
        let cam = test_camera(16, 16, 0.0);
        let frame = render(&model, None, &cam, &RenderOptions {
            specular: false,
            ..RenderOptions::default()
        })
        .unwrap();
        assert!(frame.splats.is_empty());
        assert!(frame.buffers.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn sh_only_ignores_environment_and_reports_no_env_grads() {
        let mut model = test_model(5, 23, true);
        // Dirty (never prefiltered) environment must not be touched.
        model.env.params_mut()[0] += 0.0;
        assert!(model.env.is_dirty());
        let cam = test_camera(20, 20, 0.3);
        let opts = RenderOptions { env_mode: EnvMode::ShOnly, ..RenderOptions::default() };
        let frame = render(&model, None, &cam, &opts).unwrap();
        assert!(!frame.splats.is_empty());
        let mut adj = PixelAdjoints::zeros(20, 20);
        for c in adj.color.iter_mut() {
            *c = Vec3::splat(1.0);
        }
        let grads = render_backward(&frame, &model, None, &adj, &[]).unwrap();
        assert!(grads.env.iter().all(|&g| g == 0.0));
        assert!(grads.theta_r.iter().all(|&g| g == 0.0));
        // SH degrees above zero received gradient (view-dependent path).
        let any_high = grads.sh.iter().any(|c| c[1..4].iter().any(|v| v.norm() > 0.0));
        assert!(any_high);
    }

    #[test]
    fn specular_and_sh_colors_differ() {
        let model = test_model(5, 31, true);
        let cam = test_camera(20, 20, 0.2);
        let lut = lut();
        let spec = render(&model, Some(&lut), &cam, &RenderOptions::default()).unwrap();
        let shon = render(&model, None, &cam, &RenderOptions {
            env_mode: EnvMode::ShOnly,
            ..RenderOptions::default()
        })
        .unwrap();
        let diff: f64 = spec
            .buffers
            .color
            .iter()
            .zip(&shon.buffers.color)
            .map(|(a, b)| (*a - *b).norm())
            .sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in [EnvMode::ShOnly, EnvMode::StaticEnv, EnvMode::DeformableEnv] {
            assert_eq!(m.to_string().parse::<EnvMode>().unwrap(), m);
        }
        for m in [NormalMode::ShortestAxis, NormalMode::Physical] {
            assert_eq!(m.to_string().parse::<NormalMode>().unwrap(), m);
        }
        assert!("foo".parse::<EnvMode>().is_err());
        assert!("bar".parse::<NormalMode>().is_err());
    }

    // End-to-end finite-difference check: a fixed random functional of all
    // four output buffers plus the residual regularizer, differentiated
    // through the full pipeline (deformation networks, covariance
    // projection, normal chain, shading, prefiltering, compositing).
    struct FdRig {
        model: Model,
        cam: Camera,
        opts: RenderOptions,
        lut: EnvBrdfLut,
        adj: PixelAdjoints,
        reg_w: Vec3,
    }

    impl FdRig {
        fn new(seed: u64, opts: RenderOptions) -> FdRig {
            let model = test_model(4, seed, false);
            let cam = test_camera(16, 16, 0.6);
            let lut = lut();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
            let mut adj = PixelAdjoints::zeros(16, 16);
            for i in 0..adj.color.len() {
                adj.color[i] = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                adj.depth[i] = rng.gen_range(-0.2..0.2);
                adj.normal[i] = Vec3::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                );
                adj.alpha[i] = rng.gen_range(-0.3..0.3);
            }
            FdRig { model, cam, opts, lut, adj, reg_w: Vec3::new(0.3, -0.2, 0.5) }
        }

        fn loss_of(&self, model: &Model) -> f64 {
            let mut m = model.clone();
            m.env.ensure_prefiltered();
            let frame = render(&m, Some(&self.lut), &self.cam, &self.opts).unwrap();
            let b = &frame.buffers;
            let mut l = 0.0;
            for i in 0..b.color.len() {
                l += b.color[i].dot(self.adj.color[i])
                    + b.depth[i] * self.adj.depth[i]
                    + b.normal[i].dot(self.adj.normal[i])
                    + b.alpha[i] * self.adj.alpha[i];
            }
            for ctx_gauss in frame.visible() {
                l += m.gaussians.normal_residuals[ctx_gauss].dot(self.reg_w);
            }
            l
        }

        fn analytic(&self) -> ModelGrads {
            let frame = render(&self.model, Some(&self.lut), &self.cam, &self.opts).unwrap();
            let reg: Vec<Vec3> = frame.visible().iter().map(|_| self.reg_w).collect();
            render_backward(&frame, &self.model, Some(&self.lut), &self.adj, &reg).unwrap()
        }

        fn fd(&self, apply: &dyn Fn(&mut Model, f64)) -> f64 {
            let h = 3e-6;
            let mut p = self.model.clone();
            apply(&mut p, h);
            let mut m = self.model.clone();
            apply(&mut m, -h);
            (self.loss_of(&p) - self.loss_of(&m)) / (2.0 * h)
        }

        fn check(&self, apply: &dyn Fn(&mut Model, f64), want: f64, what: &str) {
            let fd = self.fd(apply);
            let rel = (fd - want).abs() / fd.abs().max(2e-2);
            assert!(rel <= 2e-3, "{what}: fd {fd} vs analytic {want}");
        }
    }

    fn run_fd_suite(rig: &FdRig) {
        let g = rig.analytic();
        for i in 0..rig.model.gaussians.len() {
            rig.check(&|m, d| m.gaussians.positions[i].x += d, g.positions[i].x, "position.x");
            rig.check(&|m, d| m.gaussians.positions[i].z += d, g.positions[i].z, "position.z");
            rig.check(&|m, d| m.gaussians.log_scales[i].y += d, g.log_scales[i].y, "log_scale.y");
            rig.check(&|m, d| m.gaussians.rotations[i].x += d, g.rotations[i].x, "rotation.x");
            rig.check(&|m, d| m.gaussians.rotations[i].w += d, g.rotations[i].w, "rotation.w");
            rig.check(&|m, d| m.gaussians.raw_opacities[i] += d, g.raw_opacities[i], "opacity");
            rig.check(&|m, d| m.gaussians.sh[i][0].y += d, g.sh[i][0].y, "sh0.y");
            rig.check(&|m, d| m.gaussians.specular_tints[i].z += d, g.specular_tints[i].z, "tint.z");
            rig.check(&|m, d| m.gaussians.raw_roughness[i] += d, g.raw_roughness[i], "roughness");
            rig.check(
                &|m, d| m.gaussians.normal_residuals[i].x += d,
                g.normal_residuals[i].x,
                "normal_residual.x",
            );
        }
        // Network and cubemap parameters, sampled.
        let ng = rig.model.theta_g.param_count();
        for idx in [0, ng / 3, ng / 2, ng - 1] {
            rig.check(
                &move |m, d| {
                    let mut p = m.theta_g.params().to_vec();
                    p[idx] += d;
                    m.theta_g.set_params(&p).unwrap();
                },
                g.theta_g[idx],
                "theta_g",
            );
        }
        let nr = rig.model.theta_r.param_count();
        for idx in [0, nr / 2, nr - 1] {
            rig.check(
                &move |m, d| {
                    let mut p = m.theta_r.params().to_vec();
                    p[idx] += d;
                    m.theta_r.set_params(&p).unwrap();
                },
                g.theta_r[idx],
                "theta_r",
            );
        }
        let ne = rig.model.env.params().len();
        for idx in [1, ne / 4, ne / 2, ne - 2] {
            rig.check(&move |m, d| m.env.params_mut()[idx] += d, g.env[idx], "env");
        }
    }

    #[test]
    fn full_pipeline_gradients_match_fd_physical_deformable() {
        let rig = FdRig::new(101, RenderOptions::default());
        run_fd_suite(&rig);
    }

    #[test]
    fn full_pipeline_gradients_match_fd_shortest_axis_static() {
        let rig = FdRig::new(
            103,
            RenderOptions {
                env_mode: EnvMode::StaticEnv,
                normal_mode: NormalMode::ShortestAxis,
                deform: true,
                reflect_deform: false,
                ..RenderOptions::default()
            },
        );
        run_fd_suite(&rig);
    }

    #[test]
    fn full_pipeline_gradients_match_fd_sh_only() {
        let rig = FdRig::new(
            107,
            RenderOptions {
                env_mode: EnvMode::ShOnly,
                normal_mode: NormalMode::Physical,
                deform: true,
                ..RenderOptions::default()
            },
        );
        // SH mode has no tint/roughness/env/theta_r gradients. Positions
        // are excluded here: the SH evaluation direction is detached, so
        // finite differences pick up a small view-direction term the
        // analytic gradient intentionally omits.
        let g = rig.analytic();
        for i in 0..rig.model.gaussians.len() {
            rig.check(&|m, d| m.gaussians.log_scales[i].z += d, g.log_scales[i].z, "log_scale.z");
            rig.check(&|m, d| m.gaussians.rotations[i].y += d, g.rotations[i].y, "rotation.y");
            rig.check(&|m, d| m.gaussians.sh[i][2].x += d, g.sh[i][2].x, "sh2.x");
            rig.check(&|m, d| m.gaussians.sh[i][9].z += d, g.sh[i][9].z, "sh9.z");
            rig.check(
                &|m, d| m.gaussians.normal_residuals[i].y += d,
                g.normal_residuals[i].y,
                "normal_residual.y",
            );
        }
        assert!(g.env.iter().all(|&v| v == 0.0));
        assert!(g.specular_tints.iter().all(|&v| v == Vec3::ZERO));
    }

    #[test]
    fn unit_normal_adjoint_chains_through_renormalization() {
        let model = test_model(5, 41, true);
        let cam = test_camera(16, 16, 0.4);
        let lut = lut();
        let frame = render(&model, Some(&lut), &cam, &RenderOptions::default()).unwrap();
        // Pick a pixel with a defined unit normal and FD the renormalized
        // normal against the chained adjoint.
        let pix = (0..frame.buffers.normal.len())
            .find(|&i| frame.buffers.unit_normal(i).is_some())
            .expect("some covered pixel");
        let g_unit = Vec3::new(0.3, -0.7, 0.2);
        let mut grad_unit = vec![Vec3::ZERO; frame.buffers.normal.len()];
        grad_unit[pix] = g_unit;
        let mut adj = PixelAdjoints::zeros(16, 16);
        frame.add_unit_normal_adjoint(&grad_unit, &mut adj);
        let expect = Vec3::normalize_backward(frame.buffers.normal[pix], g_unit);
        assert!((adj.normal[pix] - expect).norm() < 1e-15);
        // Oracle: perturb the raw sum directly.
        let h = 1e-6;
        let f = |raw: Vec3| raw.normalized().dot(g_unit);
        let raw = frame.buffers.normal[pix];
        for c in 0..3 {
            let mut p = raw;
            p.set(c, p.get(c) + h);
            let mut m = raw;
            m.set(c, m.get(c) - h);
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - expect.get(c)).abs() < 1e-6, "component {c}");
        }
    }

    #[test]
    fn screen_gradient_norms_populated() {
        let model = test_model(5, 53, true);
        let cam = test_camera(20, 20, 0.1);
        let lut = lut();
        let frame = render(&model, Some(&lut), &cam, &RenderOptions::default()).unwrap();
        let mut adj = PixelAdjoints::zeros(20, 20);
        for c in adj.color.iter_mut() {
            *c = Vec3::splat(0.5);
        }
        let grads = render_backward(&frame, &model, Some(&lut), &adj, &[]).unwrap();
        let touched = frame.visible().iter().filter(|&&i| grads.screen[i] > 0.0).count();
        assert!(touched > 0);
    }
}
