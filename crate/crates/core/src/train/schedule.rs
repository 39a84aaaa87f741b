//! Three-stage coarse-to-fine schedule: static warmup, dynamic
//! deformation, specular refinement with freeze/unfreeze events.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    Static,
    Dynamic,
    Specular,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Static => "static",
            Stage::Dynamic => "dynamic",
            Stage::Specular => "specular",
        })
    }
}

/// Stage lengths in iterations. Scale-1 defaults follow the full
/// training timeline; `scaled` divides everything uniformly for
/// desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageSchedule {
    pub static_iters: usize,
    pub dynamic_warmup_iters: usize,
    pub dynamic_normal_iters: usize,
    /// Specular-stage window with theta_G and most attributes frozen.
    pub specular_frozen_iters: usize,
    /// Leading part of the frozen window optimizing the canonical
    /// cubemap only (theta_R still off).
    pub canonical_env_only_iters: usize,
    /// Densification window after the unfreeze.
    pub densify_resume_len: usize,
    pub total_iters: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            static_iters: 3000,
            dynamic_warmup_iters: 3000,
            dynamic_normal_iters: 3000,
            specular_frozen_iters: 6000,
            canonical_env_only_iters: 2000,
            densify_resume_len: 3000,
            total_iters: 40000,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        let dynamic_end =
            self.static_iters + self.dynamic_warmup_iters + self.dynamic_normal_iters;
        if self.total_iters < dynamic_end {
            return Err(Error::Config(
                "total_iters must cover the static and dynamic stages".into(),
            ));
        }
        if self.canonical_env_only_iters > self.specular_frozen_iters {
            return Err(Error::Config(
                "canonical_env_only_iters cannot exceed the frozen window".into(),
            ));
        }
        if dynamic_end + self.specular_frozen_iters + self.densify_resume_len > self.total_iters
            && self.total_iters > 0
        {
            return Err(Error::Config(
                "frozen window plus densify resume overruns total_iters".into(),
            ));
        }
        Ok(())
    }

    /// Uniformly divide all lengths by `divisor` (floor, minimum left to
    /// the caller to validate).
    pub fn scaled(&self, divisor: usize) -> StageSchedule {
        let d = divisor.max(1);
        StageSchedule {
            static_iters: self.static_iters / d,
            dynamic_warmup_iters: self.dynamic_warmup_iters / d,
            dynamic_normal_iters: self.dynamic_normal_iters / d,
            specular_frozen_iters: self.specular_frozen_iters / d,
            canonical_env_only_iters: self.canonical_env_only_iters / d,
            densify_resume_len: self.densify_resume_len / d,
            total_iters: self.total_iters / d,
        }
    }

    pub fn dynamic_start(&self) -> usize {
        self.static_iters
    }

    /// Iteration where the normal and regularizer losses activate.
    pub fn normal_loss_start(&self) -> usize {
        self.static_iters + self.dynamic_warmup_iters
    }

    pub fn specular_start(&self) -> usize {
        self.static_iters + self.dynamic_warmup_iters + self.dynamic_normal_iters
    }

    /// Iteration where theta_R starts receiving updates.
    pub fn theta_r_start(&self) -> usize {
        self.specular_start() + self.canonical_env_only_iters
    }

    /// Iteration where theta_G and the frozen attributes resume.
    pub fn unfreeze_at(&self) -> usize {
        self.specular_start() + self.specular_frozen_iters
    }

    /// Iteration where densification stops permanently.
    pub fn densify_stop(&self) -> usize {
        self.unfreeze_at() + self.densify_resume_len
    }

    pub fn stage_at(&self, iter: usize) -> Stage {
        if iter < self.static_iters {
            Stage::Static
        } else if iter < self.specular_start() {
            Stage::Dynamic
        } else {
            Stage::Specular
        }
    }

    pub fn normal_loss_active(&self, iter: usize) -> bool {
        iter >= self.normal_loss_start()
    }

    pub fn deformation_active(&self, iter: usize) -> bool {
        iter >= self.dynamic_start()
    }

    pub fn theta_r_active(&self, iter: usize) -> bool {
        iter >= self.theta_r_start()
    }

    /// Frozen specular window: theta_G and all Gaussian attributes except
    /// degree-0 SH, specular tint, and roughness fixed.
    pub fn frozen(&self, iter: usize) -> bool {
        iter >= self.specular_start() && iter < self.unfreeze_at()
    }

    pub fn densify_enabled(&self, iter: usize) -> bool {
        if iter < self.specular_start() {
            true
        } else {
            iter >= self.unfreeze_at() && iter < self.densify_stop()
        }
    }
}
