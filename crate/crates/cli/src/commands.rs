//! The six `dsgs` subcommands. Each declares its flat dotted-key schema,
//! builds a layered config (flag > file > default), and delegates to the
//! engine crate.

use std::io::Write;
use std::path::Path;

use dsgs_core::env::build_env_brdf_lut;
use dsgs_core::gradcheck;
use dsgs_core::io::{
    generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, write_image,
    write_pfm_gray, write_pfm_rgb, Dataset, ImageBuf, ImageFormat, Recipe, SynthConfig,
    TrainCheckpoint,
};
use dsgs_core::math::softplus;
use dsgs_core::model::Model;
use dsgs_core::render::{render, EnvMode, NormalMode, RenderOptions};
use dsgs_core::train::{
    init_model, psnr, run_schedule, ssim, AdamConfig, DensifyConfig, InitConfig, LearningRates,
    StageSchedule, TrainConfig, METRICS_CSV_HEADER,
};
use dsgs_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::config::{build_config, Config};

fn v(x: f64) -> Value {
    Value::from(x)
}

fn s(x: &str) -> Value {
    Value::from(x)
}

fn parse_format(name: &str) -> Result<ImageFormat> {
    match name {
        "ppm" => Ok(ImageFormat::Ppm),
        "png" => Ok(ImageFormat::Png),
        other => Err(Error::Usage(format!("unknown image format {other:?} (ppm or png)"))),
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn synth_defaults() -> Vec<(&'static str, Value)> {
    vec![
        ("out", s("")),
        ("synth.recipe", s("STATIC_MIRROR_SPHERE")),
        ("synth.views", v(16.0)),
        ("synth.width", v(64.0)),
        ("synth.height", v(64.0)),
        ("synth.seed", v(0.0)),
        ("synth.test_every", v(4.0)),
        ("synth.format", s("ppm")),
        ("synth.point_count", v(2000.0)),
    ]
}

pub fn cmd_synth(args: &[String]) -> Result<()> {
    let cfg = build_config(&synth_defaults(), args)?;
    let out = cfg.path("out")?;
    let sc = SynthConfig {
        recipe: cfg.str("synth.recipe")?.parse::<Recipe>()?,
        views: cfg.usize("synth.views")?,
        width: cfg.usize("synth.width")?,
        height: cfg.usize("synth.height")?,
        seed: cfg.u64("synth.seed")?,
        test_every: cfg.usize("synth.test_every")?,
        image_format: parse_format(cfg.str("synth.format")?)?,
        point_count: cfg.usize("synth.point_count")?,
    };
    generate_synthetic(&sc, &out)?;
    println!(
        "synth: wrote {} {}x{} views ({}) to {}",
        sc.views,
        sc.width,
        sc.height,
        sc.recipe,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn train_defaults() -> Vec<(&'static str, Value)> {
    let sch = StageSchedule::default();
    let den = DensifyConfig::default();
    let adam = AdamConfig::default();
    let lr = LearningRates::default();
    let tc = TrainConfig::default();
    let init = InitConfig::default();
    vec![
        ("dataset", s("")),
        ("out", s("out")),
        ("seed", v(0.0)),
        ("resume", s("")),
        ("precision", s("f64")),
        ("env.mode", s("deformable-env")),
        ("normal.mode", s("physical")),
        ("gamma_k", v(tc.gamma_k as f64)),
        ("lambda_normal", v(tc.lambda_normal)),
        ("near", v(tc.near)),
        ("metrics_every", v(tc.metrics_every as f64)),
        ("schedule.static_iters", v(sch.static_iters as f64)),
        ("schedule.dynamic_warmup_iters", v(sch.dynamic_warmup_iters as f64)),
        ("schedule.dynamic_normal_iters", v(sch.dynamic_normal_iters as f64)),
        ("schedule.specular_frozen_iters", v(sch.specular_frozen_iters as f64)),
        ("schedule.canonical_env_only_iters", v(sch.canonical_env_only_iters as f64)),
        ("schedule.densify_resume_len", v(sch.densify_resume_len as f64)),
        ("schedule.total_iters", v(sch.total_iters as f64)),
        ("schedule.divisor", v(1.0)),
        ("densify.grad_threshold", v(den.grad_threshold)),
        ("densify.opacity_floor", v(den.opacity_floor)),
        ("densify.scale_split_threshold", v(den.scale_split_threshold)),
        ("densify.interval", v(den.interval as f64)),
        ("adam.beta1", v(adam.beta1)),
        ("adam.beta2", v(adam.beta2)),
        ("adam.eps", v(adam.eps)),
        ("lr.position_init", v(lr.position_init)),
        ("lr.position_final", v(lr.position_final)),
        ("lr.sh", v(lr.sh)),
        ("lr.opacity", v(lr.opacity)),
        ("lr.scale", v(lr.scale)),
        ("lr.rotation", v(lr.rotation)),
        ("lr.mlp_init", v(lr.mlp_init)),
        ("lr.mlp_final", v(lr.mlp_final)),
        ("lr.cubemap", v(lr.cubemap)),
        ("lr.tint", v(lr.tint)),
        ("lr.normal_residual", v(lr.normal_residual)),
        ("lut.res", v(tc.lut_res as f64)),
        ("lut.samples", v(tc.lut_samples as f64)),
        ("lut.seed", v(tc.lut_seed as f64)),
        ("init.mlp_width", v(init.mlp_width as f64)),
        ("init.mlp_layers", v(init.mlp_layers as f64)),
        ("init.env_res", v(init.env_res as f64)),
        ("init.env_mips", v(init.env_mips as f64)),
        ("init.env_spp", v(init.env_spp as f64)),
        ("init.freq_position", v(init.freqs.position as f64)),
        ("init.freq_time", v(init.freqs.time as f64)),
        ("init.freq_direction", v(init.freqs.direction as f64)),
        ("init.fallback_points", v(init.fallback_points as f64)),
        ("init.opacity", v(init.init_opacity)),
    ]
}

fn parse_train_config(cfg: &Config) -> Result<TrainConfig> {
    let schedule = StageSchedule {
        static_iters: cfg.usize("schedule.static_iters")?,
        dynamic_warmup_iters: cfg.usize("schedule.dynamic_warmup_iters")?,
        dynamic_normal_iters: cfg.usize("schedule.dynamic_normal_iters")?,
        specular_frozen_iters: cfg.usize("schedule.specular_frozen_iters")?,
        canonical_env_only_iters: cfg.usize("schedule.canonical_env_only_iters")?,
        densify_resume_len: cfg.usize("schedule.densify_resume_len")?,
        total_iters: cfg.usize("schedule.total_iters")?,
    }
    .scaled(cfg.usize("schedule.divisor")?.max(1));
    Ok(TrainConfig {
        schedule,
        densify: DensifyConfig {
            grad_threshold: cfg.f64("densify.grad_threshold")?,
            opacity_floor: cfg.f64("densify.opacity_floor")?,
            scale_split_threshold: cfg.f64("densify.scale_split_threshold")?,
            interval: cfg.usize("densify.interval")?,
        },
        adam: AdamConfig {
            beta1: cfg.f64("adam.beta1")?,
            beta2: cfg.f64("adam.beta2")?,
            eps: cfg.f64("adam.eps")?,
        },
        lrs: LearningRates {
            position_init: cfg.f64("lr.position_init")?,
            position_final: cfg.f64("lr.position_final")?,
            sh: cfg.f64("lr.sh")?,
            opacity: cfg.f64("lr.opacity")?,
            scale: cfg.f64("lr.scale")?,
            rotation: cfg.f64("lr.rotation")?,
            mlp_init: cfg.f64("lr.mlp_init")?,
            mlp_final: cfg.f64("lr.mlp_final")?,
            cubemap: cfg.f64("lr.cubemap")?,
            tint: cfg.f64("lr.tint")?,
            normal_residual: cfg.f64("lr.normal_residual")?,
        },
        env_mode: cfg.str("env.mode")?.parse::<EnvMode>()?,
        normal_mode: cfg.str("normal.mode")?.parse::<NormalMode>()?,
        gamma_k: cfg.u32("gamma_k")?,
        lambda_normal: cfg.f64("lambda_normal")?,
        near: cfg.f64("near")?,
        metrics_every: cfg.usize("metrics_every")?.max(1),
        lut_res: cfg.usize("lut.res")?,
        lut_samples: cfg.usize("lut.samples")?,
        lut_seed: cfg.u64("lut.seed")?,
    })
}

fn parse_init_config(cfg: &Config) -> Result<InitConfig> {
    Ok(InitConfig {
        mlp_width: cfg.usize("init.mlp_width")?,
        mlp_layers: cfg.usize("init.mlp_layers")?,
        env_res: cfg.usize("init.env_res")?,
        env_mips: cfg.usize("init.env_mips")?,
        env_spp: cfg.usize("init.env_spp")?,
        freqs: dsgs_core::deform::EncodingFreqs {
            position: cfg.usize("init.freq_position")?,
            time: cfg.usize("init.freq_time")?,
            direction: cfg.usize("init.freq_direction")?,
        },
        fallback_points: cfg.usize("init.fallback_points")?,
        init_opacity: cfg.f64("init.opacity")?,
    })
}

fn check_precision(cfg: &Config) -> Result<()> {
    let p = cfg.str("precision")?;
    if p != "f64" {
        return Err(Error::Usage(format!(
            "precision {p:?} is not supported; the engine is double-precision only (use \"f64\")"
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &[String]) -> Result<()> {
    let cfg = build_config(&train_defaults(), args)?;
    check_precision(&cfg)?;
    let dataset_dir = cfg.path("dataset")?;
    let out = cfg.path("out")?;
    let seed = cfg.u64("seed")?;
    let tc = parse_train_config(&cfg)?;

    let dataset = load_dataset(&dataset_dir)?;
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut model, start_iter, resume_opt) = match cfg.opt_path("resume")? {
        Some(path) => {
            let ckpt = load_checkpoint(&path)?;
            eprintln!("train: resuming from {} at iteration {}", path.display(), ckpt.iteration);
            (ckpt.model, ckpt.iteration as usize, ckpt.optimizer)
        }
        None => {
            let init = parse_init_config(&cfg)?;
            (init_model(&dataset, &init, seed, &mut rng)?, 0, None)
        }
    };

    let total = tc.schedule.total_iters;
    let progress_every = (total / 20).max(1);
    let outcome = run_schedule(
        &dataset,
        &mut model,
        &tc,
        start_iter,
        resume_opt,
        &mut rng,
        |iter, m| {
            if iter % progress_every == 0 || iter == total {
                eprintln!("train: iter {iter}/{total} gaussians {}", m.gaussians.len());
            }
        },
    )?;

    let csv_path = out.join("metrics.csv");
    let mut f = std::fs::File::create(&csv_path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", csv_path.display())))?;
    writeln!(f, "{METRICS_CSV_HEADER}").map_err(Error::Io)?;
    for row in &outcome.metrics {
        writeln!(f, "{}", row.to_csv()).map_err(Error::Io)?;
    }

    let ckpt_path = out.join("model.spmo");
    save_checkpoint(
        &ckpt_path,
        &TrainCheckpoint {
            model,
            optimizer: Some(outcome.optimizer),
            iteration: total as u64,
        },
    )?;
    println!(
        "train: finished {total} iterations; wrote {} and {}",
        ckpt_path.display(),
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// render / eval (shared frame rendering)
// ---------------------------------------------------------------------------

fn render_defaults() -> Vec<(&'static str, Value)> {
    vec![
        ("checkpoint", s("")),
        ("dataset", s("")),
        ("out", s("renders")),
        ("split", s("test")),
        ("format", s("ppm")),
        ("env.mode", s("deformable-env")),
        ("normal.mode", s("physical")),
        ("near", v(dsgs_core::render::DEFAULT_NEAR)),
        ("gamma_k", v(dsgs_core::render::DEFAULT_GAMMA_K as f64)),
        ("lut.res", v(32.0)),
        ("lut.samples", v(256.0)),
        ("lut.seed", v(97.0)),
    ]
}

struct RenderSetup {
    model: Model,
    dataset: Dataset,
    opts: RenderOptions,
    lut: Option<dsgs_core::env::EnvBrdfLut>,
    frames: Vec<usize>,
}

fn render_setup(cfg: &Config) -> Result<RenderSetup> {
    let ckpt = load_checkpoint(&cfg.path("checkpoint")?)?;
    let dataset = load_dataset(&cfg.path("dataset")?)?;
    let opts = RenderOptions {
        env_mode: cfg.str("env.mode")?.parse::<EnvMode>()?,
        normal_mode: cfg.str("normal.mode")?.parse::<NormalMode>()?,
        deform: true,
        reflect_deform: true,
        specular: true,
        near: cfg.f64("near")?,
        gamma_k: cfg.u32("gamma_k")?,
    };
    let mut model = ckpt.model;
    let lut = if opts.specular_active() {
        model.env.ensure_prefiltered();
        Some(build_env_brdf_lut(
            cfg.usize("lut.res")?,
            cfg.usize("lut.samples")?,
            cfg.u64("lut.seed")?,
        ))
    } else {
        None
    };
    let frames: Vec<usize> = match cfg.str("split")? {
        "train" => dataset.train.clone(),
        "test" => dataset.test.clone(),
        "all" => (0..dataset.frames.len()).collect(),
        other => return Err(Error::Usage(format!("unknown split {other:?} (train|test|all)"))),
    };
    if frames.is_empty() {
        return Err(Error::Data("selected split contains no frames".into()));
    }
    Ok(RenderSetup { model, dataset, opts, lut, frames })
}

fn frame_stem(path: &Path, index: usize) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("frame_{index:04}"))
}

pub fn cmd_render(args: &[String]) -> Result<()> {
    let cfg = build_config(&render_defaults(), args)?;
    let format = parse_format(cfg.str("format")?)?;
    let out = cfg.path("out")?;
    let setup = render_setup(&cfg)?;
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;

    for &fi in &setup.frames {
        let frame = &setup.dataset.frames[fi];
        let fr = render(&setup.model, setup.lut.as_ref(), &frame.camera, &setup.opts)?;
        let b = &fr.buffers;
        let stem = frame_stem(&frame.image_path, fi);

        let mut img = ImageBuf::new(b.width, b.height);
        for y in 0..b.height {
            for x in 0..b.width {
                img.set(x, y, b.color[y * b.width + x]);
            }
        }
        write_image(&out.join(format!("{stem}_color.{}", format.extension())), &img, format)?;
        write_pfm_gray(&out.join(format!("{stem}_depth.pfm")), b.width, b.height, &b.depth)?;
        let mut nrm = ImageBuf::new(b.width, b.height);
        for i in 0..b.width * b.height {
            nrm.pixels[i] = b.unit_normal(i).unwrap_or_default();
        }
        write_pfm_rgb(&out.join(format!("{stem}_normal.pfm")), &nrm)?;
        println!("render: {stem} ({}x{}, t={:.3})", b.width, b.height, frame.time);
    }
    Ok(())
}

pub fn cmd_eval(args: &[String]) -> Result<()> {
    let cfg = build_config(&render_defaults(), args)?;
    let setup = render_setup(&cfg)?;
    let mut sum_psnr = 0.0;
    let mut sum_ssim = 0.0;
    for &fi in &setup.frames {
        let frame = &setup.dataset.frames[fi];
        let fr = render(&setup.model, setup.lut.as_ref(), &frame.camera, &setup.opts)?;
        let b = &fr.buffers;
        if frame.image.width != b.width || frame.image.height != b.height {
            return Err(Error::Data(format!(
                "frame {} ground truth is {}x{} but camera renders {}x{}",
                frame_stem(&frame.image_path, fi),
                frame.image.width,
                frame.image.height,
                b.width,
                b.height
            )));
        }
        // Metrics are computed on displayable [0,1] images, matching what
        // the render command writes to disk.
        let clamped: Vec<_> = b.color.iter().map(|c| c.clamped01()).collect();
        let p = psnr(&clamped, &frame.image.pixels)?;
        let sv = ssim(&clamped, &frame.image.pixels, b.width, b.height)?;
        sum_psnr += p;
        sum_ssim += sv;
        println!("frame {}: psnr {p:.4} ssim {sv:.6}", frame_stem(&frame.image_path, fi));
    }
    let n = setup.frames.len() as f64;
    println!("mean: psnr {:.4} ssim {:.6}", sum_psnr / n, sum_ssim / n);
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn gradcheck_defaults() -> Vec<(&'static str, Value)> {
    vec![
        ("seed", v(0.0)),
        ("instances", v(100.0)),
        // Test-fixture hook: injects a bias into the named op's analytic
        // gradients so the harness self-test can prove failures are caught.
        ("inject_fault", s("")),
    ]
}

pub fn cmd_gradcheck(args: &[String]) -> Result<()> {
    let cfg = build_config(&gradcheck_defaults(), args)?;
    let fault = cfg.str("inject_fault")?;
    let fault = if fault.is_empty() { None } else { Some(fault) };
    let reports = gradcheck::run_all(cfg.u64("seed")?, cfg.usize("instances")?, fault);
    let mut failed: Vec<&str> = Vec::new();
    for r in &reports {
        let status = if r.pass() { "pass" } else { "FAIL" };
        println!(
            "{:<13} {status}  max_rel {:.3e}  tol {:.0e}  ({} instances, {} probes)",
            r.op, r.max_rel, r.tol, r.instances, r.probes
        );
        if !r.pass() {
            failed.push(r.op);
        }
    }
    if !failed.is_empty() {
        return Err(Error::Numerical(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

fn inspect_defaults() -> Vec<(&'static str, Value)> {
    vec![("checkpoint", s(""))]
}

pub fn cmd_inspect(args: &[String]) -> Result<()> {
    let cfg = build_config(&inspect_defaults(), args)?;
    let ckpt = load_checkpoint(&cfg.path("checkpoint")?)?;
    let g = &ckpt.model.gaussians;
    println!("iteration: {}", ckpt.iteration);
    println!("gaussians: {}", g.len());

    // Histogram of per-Gaussian mean world-space scale, log-spaced buckets.
    let scales: Vec<f64> = g
        .log_scales
        .iter()
        .map(|ls| (ls.x.exp() + ls.y.exp() + ls.z.exp()) / 3.0)
        .collect();
    let edges = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let mut buckets = vec![0usize; edges.len() + 1];
    for &sc in &scales {
        let mut b = edges.len();
        for (i, &e) in edges.iter().enumerate() {
            if sc < e {
                b = i;
                break;
            }
        }
        buckets[b] += 1;
    }
    println!("scale histogram (mean exp(log_scale)):");
    let mut lo = String::from("0");
    for (i, &e) in edges.iter().enumerate() {
        println!("  [{lo}, {e:.0e}): {}", buckets[i]);
        lo = format!("{e:.0e}");
    }
    println!("  [{lo}, inf): {}", buckets[edges.len()]);

    let params = ckpt.model.env.params();
    let energy = params.iter().map(|&p| softplus(p)).sum::<f64>() / params.len() as f64;
    println!("cubemap: {} parameters, mean radiance {energy:.6}", params.len());
    println!(
        "networks: theta_G {} params, theta_R {} params",
        ckpt.model.theta_g.param_count(),
        ckpt.model.theta_r.param_count()
    );
    Ok(())
}
