//! The trainable model bundle: canonical Gaussians, the two deformation
//! networks, and the environment cubemap.

use crate::deform::{gaussian_mlp_config, reflection_mlp_config, EncodingFreqs};
use crate::env::EnvironmentCubemap;
use crate::error::Result;
use crate::gaussian::GaussianSet;
use crate::mlp::Mlp;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Model {
    pub gaussians: GaussianSet,
    /// Gaussian deformation network (position / rotation / scale heads).
    pub theta_g: Mlp,
    /// Reflection deformation network.
    pub theta_r: Mlp,
    pub env: EnvironmentCubemap,
    pub freqs: EncodingFreqs,
}

impl Model {
    pub fn new(
        gaussians: GaussianSet,
        freqs: EncodingFreqs,
        mlp_width: usize,
        mlp_layers: usize,
        env: EnvironmentCubemap,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        Ok(Model {
            gaussians,
            theta_g: Mlp::init(gaussian_mlp_config(freqs, mlp_width, mlp_layers), rng)?,
            theta_r: Mlp::init(reflection_mlp_config(freqs, mlp_width, mlp_layers), rng)?,
            env,
            freqs,
        })
    }
}
