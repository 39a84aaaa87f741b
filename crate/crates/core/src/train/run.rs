//! The three-stage training loop: per-iteration render + adjoint, per-group
//! Adam updates with staged freezing, densification control, and a metrics
//! log sampled every `metrics_every` iterations.

use crate::deform::EncodingFreqs;
use crate::env::{build_env_brdf_lut, EnvironmentCubemap};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::io::{Dataset, OptimizerSnapshot};
use crate::math::{inverse_sigmoid, Quat, Vec3, SH_C0};
use crate::model::Model;
use crate::raster::{depth_to_normal, PixelAdjoints};
use crate::render::{render, render_backward, EnvMode, ModelGrads, NormalMode, RenderOptions};
use crate::train::adam::{adam_step, expon_lr, AdamConfig, AdamState};
use crate::train::densify::{densify_and_prune, DensifyAccum, DensifyConfig};
use crate::train::loss::{normal_loss, photometric_loss, psnr, reg_loss, LossTerms};
use crate::train::schedule::{Stage, StageSchedule};
use rand::Rng;

/// Per-group learning rates (base-splatting defaults; the position and
/// network rates decay exponentially over the whole run).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub mlp_init: f64,
    pub mlp_final: f64,
    pub cubemap: f64,
    /// Specular tint and roughness.
    pub tint: f64,
    pub normal_residual: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            sh: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            mlp_init: 8e-4,
            mlp_final: 8e-6,
            cubemap: 1e-2,
            tint: 2.5e-3,
            normal_residual: 1e-3,
        }
    }
}

/// Everything the loop needs besides the dataset and the model.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: StageSchedule,
    pub densify: DensifyConfig,
    pub adam: AdamConfig,
    pub lrs: LearningRates,
    pub env_mode: EnvMode,
    pub normal_mode: NormalMode,
    pub gamma_k: u32,
    pub lambda_normal: f64,
    pub near: f64,
    pub metrics_every: usize,
    /// BRDF LUT resolution / sample count / seed.
    pub lut_res: usize,
    pub lut_samples: usize,
    pub lut_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: StageSchedule::default(),
            densify: DensifyConfig::default(),
            adam: AdamConfig::default(),
            lrs: LearningRates::default(),
            env_mode: EnvMode::DeformableEnv,
            normal_mode: NormalMode::Physical,
            gamma_k: 5,
            lambda_normal: crate::train::loss::LAMBDA_NORMAL,
            near: crate::render::DEFAULT_NEAR,
            metrics_every: 50,
            lut_res: 32,
            lut_samples: 256,
            lut_seed: 97,
        }
    }
}

/// Model shape hyperparameters used when initializing from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub mlp_width: usize,
    pub mlp_layers: usize,
    pub env_res: usize,
    pub env_mips: usize,
    pub env_spp: usize,
    pub freqs: EncodingFreqs,
    /// Fallback sample count when the dataset has no point cloud.
    pub fallback_points: usize,
    pub init_opacity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            mlp_width: 64,
            mlp_layers: 4,
            env_res: 128,
            env_mips: 5,
            env_spp: 64,
            freqs: EncodingFreqs::default(),
            fallback_points: 10_000,
            init_opacity: 0.1,
        }
    }
}

/// One CSV row of the training log.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: usize,
    pub stage: Stage,
    pub color: f64,
    pub normal: f64,
    pub reg: f64,
    pub total: f64,
    /// PSNR on the first held-out frame (train frame 0 when no test split).
    pub psnr: f64,
    pub gaussians: usize,
}

pub const METRICS_CSV_HEADER: &str =
    "iteration,stage,loss_color,loss_normal,loss_reg,loss_total,psnr_holdout,gaussians";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.8},{:.8},{:.8},{:.8},{:.4},{}",
            self.iteration,
            self.stage,
            self.color,
            self.normal,
            self.reg,
            self.total,
            self.psnr,
            self.gaussians
        )
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub optimizer: OptimizerSnapshot,
}

/// Fixed optimizer group order (also the checkpoint order).
pub const GROUP_NAMES: [&str; 12] = [
    "positions",
    "rotations",
    "log_scales",
    "raw_opacities",
    "sh0",
    "sh_hi",
    "specular_tints",
    "raw_roughness",
    "normal_residuals",
    "theta_g",
    "theta_r",
    "env",
];

fn group_len(model: &Model, name: &str) -> usize {
    let n = model.gaussians.len();
    match name {
        "positions" | "log_scales" | "sh0" | "specular_tints" | "normal_residuals" => 3 * n,
        "rotations" => 4 * n,
        "raw_opacities" | "raw_roughness" => n,
        "sh_hi" => 45 * n,
        "theta_g" => model.theta_g.param_count(),
        "theta_r" => model.theta_r.param_count(),
        "env" => model.env.params().len(),
        _ => unreachable!("unknown parameter group"),
    }
}

fn gather_params(model: &Model, name: &str) -> Vec<f64> {
    let g = &model.gaussians;
    match name {
        "positions" => g.positions.iter().flat_map(|v| v.to_array()).collect(),
        "rotations" => g.rotations.iter().flat_map(|q| q.to_array()).collect(),
        "log_scales" => g.log_scales.iter().flat_map(|v| v.to_array()).collect(),
        "raw_opacities" => g.raw_opacities.clone(),
        "sh0" => g.sh.iter().flat_map(|c| c[0].to_array()).collect(),
        "sh_hi" => g.sh.iter().flat_map(|c| c[1..16].iter().flat_map(|v| v.to_array())).collect(),
        "specular_tints" => g.specular_tints.iter().flat_map(|v| v.to_array()).collect(),
        "raw_roughness" => g.raw_roughness.clone(),
        "normal_residuals" => g.normal_residuals.iter().flat_map(|v| v.to_array()).collect(),
        "theta_g" => model.theta_g.params().to_vec(),
        "theta_r" => model.theta_r.params().to_vec(),
        "env" => model.env.params().to_vec(),
        _ => unreachable!("unknown parameter group"),
    }
}

fn scatter_params(model: &mut Model, name: &str, p: &[f64]) -> Result<()> {
    let g = &mut model.gaussians;
    let vec3s = |p: &[f64]| -> Vec<Vec3> {
        p.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
    };
    match name {
        "positions" => g.positions = vec3s(p),
        "rotations" => {
            g.rotations = p.chunks_exact(4).map(|c| Quat::new(c[0], c[1], c[2], c[3])).collect()
        }
        "log_scales" => g.log_scales = vec3s(p),
        "raw_opacities" => g.raw_opacities = p.to_vec(),
        "sh0" => {
            for (i, c) in p.chunks_exact(3).enumerate() {
                g.sh[i][0] = Vec3::new(c[0], c[1], c[2]);
            }
        }
        "sh_hi" => {
            for (i, per) in p.chunks_exact(45).enumerate() {
                for (j, c) in per.chunks_exact(3).enumerate() {
                    g.sh[i][j + 1] = Vec3::new(c[0], c[1], c[2]);
                }
            }
        }
        "specular_tints" => g.specular_tints = vec3s(p),
        "raw_roughness" => g.raw_roughness = p.to_vec(),
        "normal_residuals" => g.normal_residuals = vec3s(p),
        "theta_g" => model.theta_g.set_params(p)?,
        "theta_r" => model.theta_r.set_params(p)?,
        "env" => model.env.set_params(p)?,
        _ => unreachable!("unknown parameter group"),
    }
    Ok(())
}

fn gather_grads(grads: &ModelGrads, name: &str) -> Vec<f64> {
    match name {
        "positions" => grads.positions.iter().flat_map(|v| v.to_array()).collect(),
        "rotations" => grads.rotations.iter().flat_map(|q| q.to_array()).collect(),
        "log_scales" => grads.log_scales.iter().flat_map(|v| v.to_array()).collect(),
        "raw_opacities" => grads.raw_opacities.clone(),
        "sh0" => grads.sh.iter().flat_map(|c| c[0].to_array()).collect(),
        "sh_hi" => {
            grads.sh.iter().flat_map(|c| c[1..16].iter().flat_map(|v| v.to_array())).collect()
        }
        "specular_tints" => grads.specular_tints.iter().flat_map(|v| v.to_array()).collect(),
        "raw_roughness" => grads.raw_roughness.clone(),
        "normal_residuals" => grads.normal_residuals.iter().flat_map(|v| v.to_array()).collect(),
        "theta_g" => grads.theta_g.clone(),
        "theta_r" => grads.theta_r.clone(),
        "env" => grads.env.clone(),
        _ => unreachable!("unknown parameter group"),
    }
}

/// Groups whose Gaussian-indexed moments become stale after densification.
fn is_gaussian_group(name: &str) -> bool {
    !matches!(name, "theta_g" | "theta_r" | "env")
}

struct Optimizer {
    groups: Vec<(String, AdamState)>,
}

impl Optimizer {
    fn new(model: &Model) -> Optimizer {
        Optimizer {
            groups: GROUP_NAMES
                .iter()
                .map(|&n| (n.to_string(), AdamState::new(group_len(model, n))))
                .collect(),
        }
    }

    fn from_snapshot(model: &Model, snap: OptimizerSnapshot) -> Result<Optimizer> {
        if snap.groups.len() != GROUP_NAMES.len() {
            return Err(Error::Data("optimizer snapshot has the wrong group count".into()));
        }
        for ((name, st), want) in snap.groups.iter().zip(GROUP_NAMES) {
            if name != want {
                return Err(Error::Data(format!(
                    "optimizer snapshot group '{name}' where '{want}' expected"
                )));
            }
            if st.m.len() != group_len(model, want) {
                return Err(Error::Data(format!(
                    "optimizer snapshot group '{name}' length {} does not match the model",
                    st.m.len()
                )));
            }
        }
        Ok(Optimizer { groups: snap.groups })
    }

    fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot { groups: self.groups.clone() }
    }

    fn state_mut(&mut self, name: &str) -> &mut AdamState {
        &mut self.groups.iter_mut().find(|(n, _)| n == name).expect("known group").1
    }

    /// Reset Gaussian-indexed moments after the set changed shape. Network
    /// and cubemap moments survive.
    fn reset_gaussian_groups(&mut self, model: &Model) {
        for (name, st) in self.groups.iter_mut() {
            if is_gaussian_group(name) {
                *st = AdamState::new(group_len(model, name));
            }
        }
    }
}

fn group_lr(name: &str, lrs: &LearningRates, iter: usize, total: usize) -> f64 {
    match name {
        "positions" => expon_lr(lrs.position_init, lrs.position_final, iter as u64, total as u64),
        "rotations" => lrs.rotation,
        "log_scales" => lrs.scale,
        "raw_opacities" => lrs.opacity,
        "sh0" | "sh_hi" => lrs.sh,
        "specular_tints" | "raw_roughness" => lrs.tint,
        "normal_residuals" => lrs.normal_residual,
        "theta_g" | "theta_r" => expon_lr(lrs.mlp_init, lrs.mlp_final, iter as u64, total as u64),
        "env" => lrs.cubemap,
        _ => unreachable!("unknown parameter group"),
    }
}

/// The parameter groups that receive updates at this iteration under the
/// staged freeze rules.
fn active_groups(cfg: &TrainConfig, iter: usize) -> Vec<&'static str> {
    let s = &cfg.schedule;
    let stage = s.stage_at(iter);
    let mut active: Vec<&'static str> = Vec::new();
    if s.frozen(iter) {
        // Frozen specular window: degree-0 SH, tint, roughness, cubemap
        // only; theta_R joins after the canonical-env-only lead-in.
        active.extend(["sh0", "specular_tints", "raw_roughness"]);
    } else {
        active.extend([
            "positions",
            "rotations",
            "log_scales",
            "raw_opacities",
            "sh0",
            "sh_hi",
            "normal_residuals",
        ]);
        if s.deformation_active(iter) {
            active.push("theta_g");
        }
        if stage == Stage::Specular {
            active.extend(["specular_tints", "raw_roughness"]);
        }
    }
    if stage == Stage::Specular && cfg.env_mode != EnvMode::ShOnly {
        active.push("env");
        if s.theta_r_active(iter) && cfg.env_mode == EnvMode::DeformableEnv {
            active.push("theta_r");
        }
    }
    active
}

fn render_options(cfg: &TrainConfig, iter: usize) -> RenderOptions {
    let s = &cfg.schedule;
    RenderOptions {
        env_mode: cfg.env_mode,
        normal_mode: cfg.normal_mode,
        deform: s.deformation_active(iter),
        reflect_deform: s.theta_r_active(iter) && cfg.env_mode == EnvMode::DeformableEnv,
        specular: s.stage_at(iter) == Stage::Specular,
        near: cfg.near,
        gamma_k: cfg.gamma_k,
    }
}

/// Build a model from the dataset: one Gaussian per initialization point
/// (or `fallback_points` uniform box samples with the mean image color),
/// identity rotations, near-isotropic scales from nearest-neighbor
/// spacing, and a flat mid-gray environment.
pub fn init_model(
    dataset: &Dataset,
    init: &InitConfig,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<Model> {
    let points: Vec<(Vec3, Vec3)> = match &dataset.points {
        Some(pts) if !pts.is_empty() => pts.iter().map(|p| (p.position, p.color)).collect(),
        _ => {
            let (lo, hi) = dataset.bounding_box();
            let mut mean = Vec3::ZERO;
            let mut count = 0usize;
            for &fi in &dataset.train {
                for px in &dataset.frames[fi].image.pixels {
                    mean += *px;
                    count += 1;
                }
            }
            let mean = if count > 0 { mean / count as f64 } else { Vec3::splat(0.5) };
            (0..init.fallback_points)
                .map(|_| {
                    let p = Vec3::new(
                        rng.gen_range(lo.x..=hi.x),
                        rng.gen_range(lo.y..=hi.y),
                        rng.gen_range(lo.z..=hi.z),
                    );
                    (p, mean)
                })
                .collect()
        }
    };
    if points.is_empty() {
        return Err(Error::Data("no initialization points available".into()));
    }

    // Isotropic base scale from the mean distance to the 3 nearest
    // neighbors, with a slight deterministic anisotropy so shortest /
    // longest axes are defined from the first iteration.
    let n = points.len();
    let mut set = crate::gaussian::GaussianSet::default();
    for i in 0..n {
        let mut d2: Vec<f64> = Vec::with_capacity(n - 1);
        for j in 0..n {
            if i != j {
                d2.push((points[i].0 - points[j].0).norm_sq());
            }
        }
        d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = d2.len().min(3);
        let mean_d2 = if k > 0 { d2[..k].iter().sum::<f64>() / k as f64 } else { 1.0 };
        let base = mean_d2.max(1e-10).sqrt().ln();
        let mut sh = [Vec3::ZERO; 16];
        sh[0] = (points[i].1 - Vec3::splat(0.5)) / SH_C0;
        set.push(Gaussian {
            position: points[i].0,
            rotation: Quat::IDENTITY,
            log_scale: Vec3::new(base + 0.05, base, base - 0.05),
            raw_opacity: inverse_sigmoid(init.init_opacity),
            sh,
            specular_tint: Vec3::splat(0.5),
            raw_roughness: 0.0,
            normal_residual: Vec3::ZERO,
        });
    }

    let env = EnvironmentCubemap::new(init.env_res, init.env_mips, init.env_spp, seed, 0.5)?;
    Model::new(set, init.freqs, init.mlp_width, init.mlp_layers, env, rng)
}

fn holdout_frame(dataset: &Dataset) -> usize {
    if let Some(&fi) = dataset.test.first() {
        fi
    } else {
        dataset.train[0]
    }
}

/// Run the schedule from `start_iter` to `total_iters`. The observer fires
/// after every completed iteration (for checksum audits and progress).
pub fn run_schedule(
    dataset: &Dataset,
    model: &mut Model,
    cfg: &TrainConfig,
    start_iter: usize,
    resume: Option<OptimizerSnapshot>,
    rng: &mut impl Rng,
    mut observer: impl FnMut(usize, &Model),
) -> Result<TrainOutcome> {
    cfg.schedule.validate()?;
    cfg.densify.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Data("dataset has no training frames".into()));
    }
    if model.gaussians.is_empty() {
        return Err(Error::Data("model has no Gaussians".into()));
    }
    let mut opt = match resume {
        Some(s) => Optimizer::from_snapshot(model, s)?,
        None => Optimizer::new(model),
    };
    let lut = if cfg.env_mode == EnvMode::ShOnly {
        None
    } else {
        Some(build_env_brdf_lut(cfg.lut_res, cfg.lut_samples, cfg.lut_seed))
    };
    let mut accum = DensifyAccum::new(model.gaussians.len());
    let mut metrics = Vec::new();
    let holdout = holdout_frame(dataset);

    for iter in start_iter..cfg.schedule.total_iters {
        let stage = cfg.schedule.stage_at(iter);
        let opts = render_options(cfg, iter);
        let frame_idx = dataset.train[rng.gen_range(0..dataset.train.len())];
        let frame = &dataset.frames[frame_idx];

        if opts.specular && cfg.env_mode != EnvMode::ShOnly {
            model.env.ensure_prefiltered();
        }
        let fr = render(model, lut.as_ref(), &frame.camera, &opts)?;

        // Photometric loss on the raw composited color.
        let (l_color, color_adj) =
            photometric_loss(&fr.buffers.color, &frame.image.pixels, fr.width, fr.height)?;
        let mut adj = PixelAdjoints::zeros(fr.width, fr.height);
        adj.color = color_adj;

        // Normal + regularizer terms once the dynamic warmup has passed.
        let normal_active = cfg.schedule.normal_loss_active(iter);
        let mut terms = LossTerms { color: l_color, normal: 0.0, reg: 0.0 };
        let mut reg_adj: Vec<Vec3> = Vec::new();
        if normal_active {
            let (pseudo, depth_valid) =
                depth_to_normal(&fr.buffers.depth, &fr.buffers.alpha, &frame.camera);
            let npix = fr.buffers.normal.len();
            let mut unit = vec![Vec3::ZERO; npix];
            let mut valid = vec![false; npix];
            for i in 0..npix {
                if let Some(u) = fr.buffers.unit_normal(i) {
                    if depth_valid[i] {
                        unit[i] = u;
                        valid[i] = true;
                    }
                }
            }
            let (l_n, n_adj) = normal_loss(&unit, &pseudo, &valid);
            terms.normal = l_n;
            let scaled: Vec<Vec3> =
                n_adj.iter().map(|g| *g * cfg.lambda_normal).collect();
            fr.add_unit_normal_adjoint(&scaled, &mut adj);

            let (dn, gamma) = fr.reg_terms(model);
            let (l_r, r_adj) = reg_loss(&dn, &gamma);
            terms.reg = l_r;
            reg_adj = r_adj;
        }
        let total =
            terms.color + if normal_active { cfg.lambda_normal * terms.normal + terms.reg } else { 0.0 };

        let grads = render_backward(&fr, model, lut.as_ref(), &adj, &reg_adj)?;

        // Densification statistics from the screen-space center gradients.
        for gi in fr.visible() {
            accum.add(gi, grads.screen[gi]);
        }

        // Parameter updates for the active groups only; frozen groups keep
        // parameters and moments bit-identical.
        for name in active_groups(cfg, iter) {
            let mut params = gather_params(model, name);
            let g = gather_grads(&grads, name);
            let lr = group_lr(name, &cfg.lrs, iter, cfg.schedule.total_iters);
            adam_step(opt.state_mut(name), &mut params, &g, lr, &cfg.adam)?;
            scatter_params(model, name, &params)?;
        }

        // Densification / pruning on the fixed interval.
        if iter > 0 && iter % cfg.densify.interval == 0 {
            let enabled = cfg.schedule.densify_enabled(iter);
            let before = model.gaussians.len();
            densify_and_prune(&mut model.gaussians, &mut accum, &cfg.densify, enabled, rng)?;
            if model.gaussians.len() != before {
                opt.reset_gaussian_groups(model);
            }
        }

        if iter % cfg.metrics_every == 0 || iter + 1 == cfg.schedule.total_iters {
            let hf = &dataset.frames[holdout];
            if opts.specular && cfg.env_mode != EnvMode::ShOnly {
                model.env.ensure_prefiltered();
            }
            let hr = render(model, lut.as_ref(), &hf.camera, &opts)?;
            let p = psnr(&hr.buffers.color, &hf.image.pixels)?;
            metrics.push(MetricsRow {
                iteration: iter,
                stage,
                color: terms.color,
                normal: terms.normal,
                reg: terms.reg,
                total,
                psnr: p,
                gaussians: model.gaussians.len(),
            });
        }
        observer(iter, model);
    }
    Ok(TrainOutcome { metrics, optimizer: opt.snapshot() })
}
