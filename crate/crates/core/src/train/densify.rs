//! Adaptive density control: clone small high-gradient Gaussians, split
//! large ones, prune transparent ones.

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{quat_to_rotmat, Vec3};
use rand::Rng;

pub const SPLIT_SCALE_DIV: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DensifyConfig {
    /// Mean screen-space positional gradient norm (px) above which a
    /// Gaussian densifies.
    pub grad_threshold: f64,
    /// Opacity below which a Gaussian is pruned.
    pub opacity_floor: f64,
    /// World-space scale above which densification splits instead of
    /// cloning.
    pub scale_split_threshold: f64,
    /// Iterations between densification passes.
    pub interval: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            grad_threshold: 2e-4,
            opacity_floor: 0.005,
            scale_split_threshold: 0.01,
            interval: 100,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_threshold <= 0.0
            || self.opacity_floor <= 0.0
            || self.scale_split_threshold <= 0.0
            || self.interval == 0
        {
            return Err(Error::Config("densify parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Screen-gradient accumulators, one slot per Gaussian.
#[derive(Debug, Clone)]
pub struct DensifyAccum {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyAccum {
    pub fn new(len: usize) -> DensifyAccum {
        DensifyAccum { grad_sum: vec![0.0; len], count: vec![0; len] }
    }

    pub fn reset(&mut self, len: usize) {
        self.grad_sum.clear();
        self.grad_sum.resize(len, 0.0);
        self.count.clear();
        self.count.resize(len, 0);
    }

    /// Record one view's screen-space positional gradient norm.
    pub fn add(&mut self, i: usize, grad_px_norm: f64) {
        self.grad_sum[i] += grad_px_norm;
        self.count[i] += 1;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DensifyStats {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

fn gauss_pair(rng: &mut impl Rng) -> (f64, f64) {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * u2;
    (r * a.cos(), r * a.sin())
}

fn sample_in_gaussian(set: &GaussianSet, i: usize, rng: &mut impl Rng) -> Vec3 {
    let (a, b) = gauss_pair(rng);
    let (c, _) = gauss_pair(rng);
    let local = set.log_scales[i].exp().mul_elem(Vec3::new(a, b, c));
    let r = quat_to_rotmat(set.rotations[i]).expect("stored rotation is valid");
    set.positions[i] + r * local
}

/// One densification pass. When disabled, only the accumulators reset.
/// Clone keeps the original and adds an offset copy; split replaces the
/// Gaussian with two children at scale / 1.6 sampled from its footprint;
/// prune drops opacity below the floor. Errors if everything prunes.
pub fn densify_and_prune(
    set: &mut GaussianSet,
    accum: &mut DensifyAccum,
    cfg: &DensifyConfig,
    enabled: bool,
    rng: &mut impl Rng,
) -> Result<DensifyStats> {
    cfg.validate()?;
    if accum.grad_sum.len() != set.len() {
        return Err(Error::Contract(format!(
            "densify accumulators cover {} Gaussians, set has {}",
            accum.grad_sum.len(),
            set.len()
        )));
    }
    let mut stats = DensifyStats::default();
    if !enabled {
        accum.reset(set.len());
        return Ok(stats);
    }
    let n = set.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        let mean_grad =
            if accum.count[i] > 0 { accum.grad_sum[i] / accum.count[i] as f64 } else { 0.0 };
        let opacity = crate::math::sigmoid(set.raw_opacities[i]);
        if opacity < cfg.opacity_floor {
            keep[i] = false;
            stats.pruned += 1;
            continue;
        }
        if mean_grad <= cfg.grad_threshold {
            continue;
        }
        let max_scale = set.log_scales[i].exp().max_component();
        if max_scale > cfg.scale_split_threshold {
            // Split: two children, scale divided, sampled positions.
            let mut child = set.get(i);
            child.log_scale = child.log_scale - Vec3::splat(SPLIT_SCALE_DIV.ln());
            let mut a = child;
            a.position = sample_in_gaussian(set, i, rng);
            let mut b = child;
            b.position = sample_in_gaussian(set, i, rng);
            set.push(a);
            set.push(b);
            keep[i] = false;
            stats.split += 1;
        } else {
            // Clone: shifted copy alongside the original.
            let mut c = set.get(i);
            c.position = sample_in_gaussian(set, i, rng);
            set.push(c);
            stats.cloned += 1;
        }
    }
    keep.resize(set.len(), true);
    set.retain_indices(&keep);
    if set.is_empty() {
        return Err(Error::Numerical("densification pruned every Gaussian".into()));
    }
    accum.reset(set.len());
    Ok(stats)
}
