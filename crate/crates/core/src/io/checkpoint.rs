//! SPMO checkpoint format and standalone MLP weight blobs.
//!
//! SPMO layout (all integers and floats little-endian):
//!   magic "SPMO" (4 bytes)
//!   u32 format version
//!   u64 payload length (bytes after this field; integrity check)
//!   payload sections, fixed order, each length-prefixed:
//!     gaussians, theta_g, theta_r, cubemap, encoding freqs,
//!     optimizer snapshot (optional), iteration counter
//!
//! Gaussian attributes and network parameters are stored as f64, so the
//! round trip is bit-exact. The standalone weight-blob format ("MLPW")
//! deliberately stores f32 for compact interchange and is therefore lossy;
//! checkpoints never go through it.

use crate::deform::EncodingFreqs;
use crate::env::EnvironmentCubemap;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::math::{Quat, Vec3};
use crate::mlp::{Mlp, MlpConfig};
use crate::model::Model;
use crate::train::AdamState;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"SPMO";
const WEIGHTS_MAGIC: &[u8; 4] = b"MLPW";

/// Adam moments per named parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerSnapshot {
    pub groups: Vec<(String, AdamState)>,
}

#[derive(Debug, Clone)]
pub struct TrainCheckpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerSnapshot>,
    pub iteration: u64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    fn vec3_slice(&mut self, vs: &[Vec3]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(v.x);
            self.f64(v.y);
            self.f64(v.z);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::Data(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        // Cheap sanity bound: a length can never exceed the remaining bytes.
        if n > (self.data.len() - self.pos) as u64 {
            return Err(Error::Data(format!("checkpoint {what} length {n} exceeds file size")));
        }
        Ok(n as usize)
    }

    fn f64_slice(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.len(what)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec3_slice(&mut self, what: &str) -> Result<Vec<Vec3>> {
        let n = self.len(what)?;
        (0..n).map(|_| Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Data("checkpoint group name is not UTF-8".into()))
    }
}

fn write_gaussians(w: &mut Writer, g: &GaussianSet) {
    w.u64(g.len() as u64);
    w.vec3_slice(&g.positions);
    w.u64(g.rotations.len() as u64);
    for q in &g.rotations {
        w.f64(q.w);
        w.f64(q.x);
        w.f64(q.y);
        w.f64(q.z);
    }
    w.vec3_slice(&g.log_scales);
    w.f64_slice(&g.raw_opacities);
    w.u64(g.sh.len() as u64);
    for sh in &g.sh {
        for c in sh {
            w.f64(c.x);
            w.f64(c.y);
            w.f64(c.z);
        }
    }
    w.vec3_slice(&g.specular_tints);
    w.f64_slice(&g.raw_roughness);
    w.vec3_slice(&g.normal_residuals);
}

fn read_gaussians(r: &mut Reader) -> Result<GaussianSet> {
    let n = r.len("gaussian count")?;
    let positions = r.vec3_slice("positions")?;
    let nq = r.len("rotations")?;
    let rotations: Vec<Quat> =
        (0..nq).map(|_| Ok(Quat::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?))).collect::<Result<_>>()?;
    let log_scales = r.vec3_slice("log_scales")?;
    let raw_opacities = r.f64_slice("opacities")?;
    let nsh = r.len("sh")?;
    let mut sh = Vec::with_capacity(nsh);
    for _ in 0..nsh {
        let mut coeffs = [Vec3::ZERO; 16];
        for c in &mut coeffs {
            *c = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        }
        sh.push(coeffs);
    }
    let specular_tints = r.vec3_slice("tints")?;
    let raw_roughness = r.f64_slice("roughness")?;
    let normal_residuals = r.vec3_slice("normal_residuals")?;
    let set = GaussianSet {
        positions,
        rotations,
        log_scales,
        raw_opacities,
        sh,
        specular_tints,
        raw_roughness,
        normal_residuals,
    };
    let lens = [
        set.positions.len(),
        set.rotations.len(),
        set.log_scales.len(),
        set.raw_opacities.len(),
        set.sh.len(),
        set.specular_tints.len(),
        set.raw_roughness.len(),
        set.normal_residuals.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Data(format!(
            "checkpoint gaussian arrays disagree with header count {n}: {lens:?}"
        )));
    }
    Ok(set)
}

fn write_mlp(w: &mut Writer, mlp: &Mlp) {
    let cfg = mlp.config();
    w.u32(cfg.input_dim as u32);
    w.u32(cfg.hidden_width as u32);
    w.u32(cfg.hidden_layers as u32);
    w.u32(cfg.skip_layer.map_or(0, |l| l as u32 + 1));
    w.u32(cfg.head_dims.len() as u32);
    for d in &cfg.head_dims {
        w.u32(*d as u32);
    }
    w.f64_slice(mlp.params());
}

fn read_mlp(r: &mut Reader) -> Result<Mlp> {
    let input_dim = r.u32()? as usize;
    let hidden_width = r.u32()? as usize;
    let hidden_layers = r.u32()? as usize;
    let skip = r.u32()?;
    let heads = r.u32()? as usize;
    let head_dims: Vec<usize> =
        (0..heads).map(|_| Ok(r.u32()? as usize)).collect::<Result<_>>()?;
    let cfg = MlpConfig {
        input_dim,
        hidden_width,
        hidden_layers,
        skip_layer: if skip == 0 { None } else { Some(skip as usize - 1) },
        head_dims,
    };
    let params = r.f64_slice("mlp params")?;
    let mut mlp = Mlp::new(cfg)?;
    if params.len() != mlp.params().len() {
        return Err(Error::Data(format!(
            "checkpoint MLP shape header implies {} parameters, blob has {}",
            mlp.params().len(),
            params.len()
        )));
    }
    mlp.set_params(&params)?;
    Ok(mlp)
}

fn write_env(w: &mut Writer, env: &EnvironmentCubemap) {
    w.u32(env.res() as u32);
    w.u32(env.mips() as u32);
    w.u32(env.spp() as u32);
    w.u64(env.seed());
    w.f64_slice(env.params());
}

fn read_env(r: &mut Reader) -> Result<EnvironmentCubemap> {
    let res = r.u32()? as usize;
    let mips = r.u32()? as usize;
    let spp = r.u32()? as usize;
    let seed = r.u64()?;
    let params = r.f64_slice("cubemap params")?;
    let mut env = EnvironmentCubemap::new(res, mips, spp, seed, 0.5)?;
    env.set_params(&params).map_err(|_| {
        Error::Data(format!(
            "checkpoint cubemap shape mismatch: header says {res}^2 x6x3, blob has {} values",
            params.len()
        ))
    })?;
    Ok(env)
}

pub fn checkpoint_bytes(ckpt: &TrainCheckpoint) -> Vec<u8> {
    let mut w = Writer::new();
    write_gaussians(&mut w, &ckpt.model.gaussians);
    write_mlp(&mut w, &ckpt.model.theta_g);
    write_mlp(&mut w, &ckpt.model.theta_r);
    write_env(&mut w, &ckpt.model.env);
    w.u32(ckpt.model.freqs.position as u32);
    w.u32(ckpt.model.freqs.time as u32);
    w.u32(ckpt.model.freqs.direction as u32);
    match &ckpt.optimizer {
        None => w.u32(0),
        Some(opt) => {
            w.u32(1);
            w.u32(opt.groups.len() as u32);
            for (name, state) in &opt.groups {
                w.str(name);
                w.f64_slice(&state.m);
                w.f64_slice(&state.v);
                w.u64(state.step);
            }
        }
    }
    w.u64(ckpt.iteration);

    let payload = w.buf;
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn checkpoint_from_bytes(data: &[u8]) -> Result<TrainCheckpoint> {
    if data.len() < 16 || &data[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Data("not an SPMO checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let payload_len = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    if data.len() - 16 != payload_len {
        return Err(Error::Data(format!(
            "checkpoint payload is {} bytes, header declares {payload_len}",
            data.len() - 16
        )));
    }
    let mut r = Reader { data: &data[16..], pos: 0 };
    let gaussians = read_gaussians(&mut r)?;
    let theta_g = read_mlp(&mut r)?;
    let theta_r = read_mlp(&mut r)?;
    let env = read_env(&mut r)?;
    let freqs = EncodingFreqs {
        position: r.u32()? as usize,
        time: r.u32()? as usize,
        direction: r.u32()? as usize,
    };
    let optimizer = match r.u32()? {
        0 => None,
        1 => {
            let n = r.u32()? as usize;
            let mut groups = Vec::with_capacity(n);
            for _ in 0..n {
                let name = r.str()?;
                let m = r.f64_slice("adam m")?;
                let v = r.f64_slice("adam v")?;
                let step = r.u64()?;
                if m.len() != v.len() {
                    return Err(Error::Data(format!(
                        "checkpoint optimizer group {name}: moment shapes disagree"
                    )));
                }
                groups.push((name, AdamState { m, v, step }));
            }
            Some(OptimizerSnapshot { groups })
        }
        other => return Err(Error::Data(format!("checkpoint optimizer flag {other} invalid"))),
    };
    let iteration = r.u64()?;
    if r.pos != r.data.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} trailing bytes",
            r.data.len() - r.pos
        )));
    }
    Ok(TrainCheckpoint {
        model: Model { gaussians, theta_g, theta_r, env, freqs },
        optimizer,
        iteration,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &TrainCheckpoint) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainCheckpoint> {
    let data =
        std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&data)
}

/// Standalone f32 weight blob: "MLPW", u32 version, u32 layer count,
/// (u32 in, u32 out) per layer, u64 value count, f32 values. Lossy vs the
/// f64 checkpoint; meant for interchange with external tooling.
pub fn save_weights(path: &Path, mlp: &Mlp) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    let shapes = mlp.layer_shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (i, o) in &shapes {
        out.extend_from_slice(&(*i as u32).to_le_bytes());
        out.extend_from_slice(&(*o as u32).to_le_bytes());
    }
    out.extend_from_slice(&(mlp.params().len() as u64).to_le_bytes());
    for p in mlp.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads an f32 weight blob into an existing network of matching shape.
pub fn load_weights_into(path: &Path, mlp: &mut Mlp) -> Result<()> {
    let data =
        std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Data("not an MLPW weight blob (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(Error::Data(format!("weight blob version {version} unsupported")));
    }
    let n_layers = r.u32()? as usize;
    let shapes: Vec<(usize, usize)> = (0..n_layers)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect::<Result<_>>()?;
    let want = mlp.layer_shapes();
    if shapes != want {
        return Err(Error::Data(format!(
            "weight blob layer shapes {shapes:?} do not match network {want:?}"
        )));
    }
    let count = r.u64()? as usize;
    if count != mlp.params().len() {
        return Err(Error::Data(format!(
            "weight blob has {count} values, network expects {}",
            mlp.params().len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let b = r.take(4)?;
        params.push(f32::from_le_bytes(b.try_into().unwrap()) as f64);
    }
    if r.pos != data.len() {
        return Err(Error::Data("weight blob has trailing bytes".into()));
    }
    mlp.set_params(&params)
}
