//! Fully connected network with ReLU hidden layers, an input skip
//! connection, and one or more linear output heads. Parameters live in a
//! single flat buffer so the optimizer and serialization can treat the
//! network as one parameter group.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Hidden layer whose input is the previous feature concatenated with
    /// the raw network input. `None` disables the skip.
    pub skip_layer: Option<usize>,
    /// Output head widths (each head is a linear map from the final feature).
    pub head_dims: Vec<usize>,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("MLP dimensions must be positive".into()));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.hidden_layers {
                return Err(Error::Config(format!(
                    "skip layer {s} out of range 1..{}",
                    self.hidden_layers
                )));
            }
        }
        if self.head_dims.is_empty() {
            return Err(Error::Config("MLP needs at least one output head".into()));
        }
        Ok(())
    }

    fn layer_in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else if Some(layer) == self.skip_layer {
            self.hidden_width + self.input_dim
        } else {
            self.hidden_width
        }
    }
}

/// (weight offset, bias offset, in dim, out dim) for one linear layer.
#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    cfg: MlpConfig,
    params: Vec<f64>,
    hidden: Vec<LayerSpec>,
    heads: Vec<LayerSpec>,
    /// Bumped on every parameter mutation; guards cached forward state.
    version: u64,
}

/// Cached forward state consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Actual input vector fed to each hidden layer (post-concat for skip).
    layer_inputs: Vec<Vec<f64>>,
    /// Post-ReLU output of each hidden layer.
    layer_outputs: Vec<Vec<f64>>,
    version: u64,
}

impl Mlp {
    pub fn new(cfg: MlpConfig) -> Result<Mlp> {
        cfg.validate()?;
        let mut hidden = Vec::with_capacity(cfg.hidden_layers);
        let mut off = 0;
        for l in 0..cfg.hidden_layers {
            let in_dim = cfg.layer_in_dim(l);
            let out_dim = cfg.hidden_width;
            hidden.push(LayerSpec { w_off: off, b_off: off + in_dim * out_dim, in_dim, out_dim });
            off += in_dim * out_dim + out_dim;
        }
        let mut heads = Vec::with_capacity(cfg.head_dims.len());
        for &d in &cfg.head_dims {
            let in_dim = cfg.hidden_width;
            heads.push(LayerSpec { w_off: off, b_off: off + in_dim * d, in_dim, out_dim: d });
            off += in_dim * d + d;
        }
        Ok(Mlp { cfg, params: vec![0.0; off], hidden, heads, version: 0 })
    }

    /// Xavier-uniform hidden layers, zero-initialized heads so the network
    /// starts as the identity deformation.
    pub fn init<R: Rng>(cfg: MlpConfig, rng: &mut R) -> Result<Mlp> {
        let mut mlp = Mlp::new(cfg)?;
        for spec in mlp.hidden.clone() {
            let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for i in 0..spec.in_dim * spec.out_dim {
                mlp.params[spec.w_off + i] = rng.gen_range(-bound..bound);
            }
        }
        mlp.version = 1;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameter buffer; invalidates caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "parameter buffer length {} does not match network size {}",
                p.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(p);
        self.version += 1;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Layer shapes (in, out) for hidden layers followed by heads; the
    /// serialization header is built from this.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden.iter().chain(self.heads.iter()).map(|s| (s.in_dim, s.out_dim)).collect()
    }

    fn apply_linear(&self, spec: &LayerSpec, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), spec.in_dim);
        out.clear();
        out.reserve(spec.out_dim);
        let w = &self.params[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim];
        let b = &self.params[spec.b_off..spec.b_off + spec.out_dim];
        for o in 0..spec.out_dim {
            let row = &w[o * spec.in_dim..(o + 1) * spec.in_dim];
            let mut acc = b[o];
            for (x, wv) in input.iter().zip(row.iter()) {
                acc += x * wv;
            }
            out.push(acc);
        }
    }

    /// Forward pass; returns one output vector per head plus the cache
    /// needed for the exact backward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<Vec<f64>>, MlpCache)> {
        if input.len() != self.cfg.input_dim {
            return Err(Error::Usage(format!(
                "input length {} does not match configured dim {}",
                input.len(),
                self.cfg.input_dim
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.hidden.len());
        let mut layer_outputs: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        let mut feat: Vec<f64> = input.to_vec();
        for (l, spec) in self.hidden.iter().enumerate() {
            let layer_in = if Some(l) == self.cfg.skip_layer {
                let mut v = feat.clone();
                v.extend_from_slice(input);
                v
            } else {
                feat
            };
            let mut out = Vec::new();
            self.apply_linear(spec, &layer_in, &mut out);
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            layer_inputs.push(layer_in);
            layer_outputs.push(out.clone());
            feat = out;
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        for spec in &self.heads {
            let mut out = Vec::new();
            self.apply_linear(spec, &feat, &mut out);
            heads.push(out);
        }
        Ok((heads, MlpCache { layer_inputs, layer_outputs, version: self.version }))
    }

    /// Exact reverse-mode gradients. Accumulates parameter gradients into
    /// `grad_params` (same layout as the flat buffer) and writes the input
    /// adjoint into `grad_input`.
    pub fn backward(
        &self,
        cache: &MlpCache,
        head_grads: &[Vec<f64>],
        grad_params: &mut [f64],
        grad_input: &mut [f64],
    ) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Contract(
                "stale MLP cache: parameters changed since the forward pass".into(),
            ));
        }
        if head_grads.len() != self.heads.len() {
            return Err(Error::Usage("head adjoint count mismatch".into()));
        }
        if grad_params.len() != self.params.len() {
            return Err(Error::Usage("gradient buffer size mismatch".into()));
        }
        if grad_input.len() != self.cfg.input_dim {
            return Err(Error::Usage("input gradient size mismatch".into()));
        }
        let feat = cache.layer_outputs.last().expect("at least one hidden layer");
        let mut g_feat = vec![0.0; self.cfg.hidden_width];
        for (spec, g_head) in self.heads.iter().zip(head_grads.iter()) {
            debug_assert_eq!(g_head.len(), spec.out_dim);
            let w = &self.params[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim];
            for o in 0..spec.out_dim {
                let g = g_head[o];
                if g == 0.0 {
                    continue;
                }
                let row_off = spec.w_off + o * spec.in_dim;
                for i in 0..spec.in_dim {
                    grad_params[row_off + i] += g * feat[i];
                    g_feat[i] += g * w[o * spec.in_dim + i];
                }
                grad_params[spec.b_off + o] += g;
            }
        }
        for i in 0..self.cfg.input_dim {
            grad_input[i] = 0.0;
        }
        let mut g_out = g_feat;
        for l in (0..self.hidden.len()).rev() {
            let spec = &self.hidden[l];
            let out = &cache.layer_outputs[l];
            let layer_in = &cache.layer_inputs[l];
            let w = &self.params[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim];
            let mut g_in = vec![0.0; spec.in_dim];
            for o in 0..spec.out_dim {
                // ReLU: gradient flows only through active units.
                if out[o] <= 0.0 || g_out[o] == 0.0 {
                    continue;
                }
                let g = g_out[o];
                let row_off = spec.w_off + o * spec.in_dim;
                for i in 0..spec.in_dim {
                    grad_params[row_off + i] += g * layer_in[i];
                    g_in[i] += g * w[o * spec.in_dim + i];
                }
                grad_params[spec.b_off + o] += g;
            }
            if Some(l) == self.cfg.skip_layer {
                let w_dim = self.cfg.hidden_width;
                for i in 0..self.cfg.input_dim {
                    grad_input[i] += g_in[w_dim + i];
                }
                g_in.truncate(w_dim);
                g_out = g_in;
            } else if l == 0 {
                for i in 0..self.cfg.input_dim {
                    grad_input[i] += g_in[i];
                }
            } else {
                g_out = g_in;
            }
        }
        Ok(())
    }
}
