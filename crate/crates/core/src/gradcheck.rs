//! Finite-difference gradient audit over every hand-derived adjoint,
//! runnable from the CLI and the acceptance suite. Each operation is
//! checked on many independently seeded random instances against central
//! differences; analytic gradients of MLPs, the normal chain, shading,
//! and losses must agree to 1e-5 relative, the rasterizer backward and
//! cubemap query/prefilter to 1e-4.

use crate::deform::{deform_gaussian, deform_gaussian_backward, EncodingFreqs};
use crate::env::{
    build_env_brdf_lut, shade, shade_backward, EnvironmentCubemap, ShadeInput,
};
use crate::math::{Quat, Vec3};
use crate::mlp::{Mlp, MlpConfig};
use crate::normals::{normal_chain, normal_chain_backward, NormalChainInput};
use crate::raster::{bin_and_sort, composite_backward, composite_forward, PixelAdjoints, Splat2D};
use crate::train::loss::{normal_loss, photometric_loss, reg_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one operation's check across all instances.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub op: &'static str,
    pub instances: usize,
    pub probes: usize,
    pub max_rel: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel <= self.tol
    }
}

pub const OPS: [&str; 7] =
    ["mlp", "deformation", "normal-chain", "shading", "losses", "rasterizer", "cubemap"];

/// Relative error with an absolute floor so FD noise on near-zero
/// gradients does not dominate.
fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-2)
}

fn rand_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v =
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 1e-2 {
            return v.normalized();
        }
    }
}

/// Orthonormal (short, long) axis pair.
fn rand_axis_pair(rng: &mut impl Rng) -> (Vec3, Vec3) {
    loop {
        let a = rand_unit(rng);
        let b = rand_unit(rng);
        let b = b - a * a.dot(b);
        if b.norm() > 0.3 {
            return (a, b.normalized());
        }
    }
}

struct Tally {
    max_rel: f64,
    probes: usize,
    fault: f64,
}

impl Tally {
    fn new(fault: f64) -> Tally {
        Tally { max_rel: 0.0, probes: 0, fault }
    }

    fn probe(&mut self, fd: f64, analytic: f64) {
        self.probes += 1;
        let r = rel_err(fd, analytic + self.fault);
        if r > self.max_rel {
            self.max_rel = r;
        }
    }
}

fn check_mlp(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-6;
    for _ in 0..instances {
        let cfg = MlpConfig {
            input_dim: rng.gen_range(2..6),
            hidden_width: rng.gen_range(4..10),
            hidden_layers: rng.gen_range(2..4),
            skip_layer: if rng.gen() { Some(1) } else { None },
            head_dims: vec![rng.gen_range(1..4), rng.gen_range(1..4)],
        };
        let mut mlp = Mlp::init(cfg.clone(), &mut rng).unwrap();
        // Heads are zero-initialized; randomize every parameter so the
        // probes exercise genuinely nonzero gradients.
        let randomized: Vec<f64> =
            mlp.params().iter().map(|&p| p + rng.gen_range(-0.5..0.5)).collect();
        mlp.set_params(&randomized).unwrap();
        let mlp = mlp;
        let input: Vec<f64> = (0..cfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<Vec<f64>> = cfg
            .head_dims
            .iter()
            .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let loss = |mlp: &Mlp, input: &[f64]| -> f64 {
            let (heads, _) = mlp.forward(input).unwrap();
            heads.iter().zip(&w).map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let (_, cache) = mlp.forward(&input).unwrap();
        let mut g_params = vec![0.0; mlp.param_count()];
        let mut g_input = vec![0.0; input.len()];
        mlp.backward(&cache, &w, &mut g_params, &mut g_input).unwrap();
        // Sampled parameter probes plus every input dimension.
        let np = mlp.param_count();
        for idx in [0, np / 3, np / 2, 2 * np / 3, np - 1] {
            let mut mp = mlp.clone();
            let mut p = mp.params().to_vec();
            p[idx] += h;
            mp.set_params(&p).unwrap();
            let mut mm = mlp.clone();
            p[idx] -= 2.0 * h;
            mm.set_params(&p).unwrap();
            t.probe((loss(&mp, &input) - loss(&mm, &input)) / (2.0 * h), g_params[idx]);
        }
        for i in 0..input.len() {
            let mut ip = input.clone();
            ip[i] += h;
            let mut im = input.clone();
            im[i] -= h;
            t.probe((loss(&mlp, &ip) - loss(&mlp, &im)) / (2.0 * h), g_input[i]);
        }
    }
    CheckReport { op: "mlp", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-5 }
}

fn check_deformation(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-6;
    let freqs = EncodingFreqs { position: 3, time: 2, direction: 2 };
    for _ in 0..instances {
        let mlp =
            Mlp::init(crate::deform::gaussian_mlp_config(freqs, 8, 2), &mut rng).unwrap();
        // Zero-initialized heads give zero outputs; perturb all params.
        let mut mlp = mlp;
        let p: Vec<f64> = mlp.params().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        mlp.set_params(&p).unwrap();
        let pos = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let time = rng.gen_range(0.0..1.0);
        let wq = Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let (wp, ws) = (rand_unit(&mut rng), rand_unit(&mut rng));
        let loss = |mlp: &Mlp| -> f64 {
            let (out, _) = deform_gaussian(mlp, freqs, pos, time).unwrap();
            out.d_position.dot(wp) + out.d_rotation.dot(wq) + out.d_log_scale.dot(ws)
        };
        let (out, cache) = deform_gaussian(&mlp, freqs, pos, time).unwrap();
        let _ = out;
        let mut g = vec![0.0; mlp.param_count()];
        deform_gaussian_backward(
            &mlp,
            &cache,
            &crate::deform::DeformOutput { d_position: wp, d_rotation: wq, d_log_scale: ws },
            &mut g,
        )
        .unwrap();
        let np = mlp.param_count();
        for idx in [1, np / 4, np / 2, np - 1] {
            let mut mp = mlp.clone();
            let mut p = mp.params().to_vec();
            p[idx] += h;
            mp.set_params(&p).unwrap();
            let mut mm = mlp.clone();
            p[idx] -= 2.0 * h;
            mm.set_params(&p).unwrap();
            t.probe((loss(&mp) - loss(&mm)) / (2.0 * h), g[idx]);
        }
    }
    CheckReport { op: "deformation", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-5 }
}

fn check_normal_chain(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-6;
    let mut done = 0;
    while done < instances {
        let (v_s, v_l) = rand_axis_pair(&mut rng);
        let (v_s_t, v_l_t) = rand_axis_pair(&mut rng);
        let len_s = rng.gen_range(0.05..0.3);
        let len_l = len_s + rng.gen_range(0.1..0.5);
        let len_s_t = rng.gen_range(0.05..0.3);
        let len_l_t = len_s_t + rng.gen_range(0.1..0.5);
        let inp = NormalChainInput {
            delta_n: Vec3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ),
            v_s,
            v_l,
            len_s,
            len_l,
            v_s_t,
            v_l_t,
            len_s_t,
            len_l_t,
            omega_o: rand_unit(&mut rng),
        };
        let fwd = match normal_chain(&inp) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let g_n = rand_unit(&mut rng);
        let g = normal_chain_backward(&inp, &fwd, g_n);
        let loss = |inp: &NormalChainInput| normal_chain(inp).map(|f| f.normal.dot(g_n));
        let mut ok = true;
        let mut pending: Vec<(f64, f64)> = Vec::new();
        let mut slot = |perturb: &dyn Fn(&mut NormalChainInput, f64), want: f64| {
            if !ok {
                return;
            }
            let mut ip = inp;
            perturb(&mut ip, h);
            let mut im = inp;
            perturb(&mut im, -h);
            match (loss(&ip), loss(&im)) {
                (Ok(lp), Ok(lm)) => pending.push(((lp - lm) / (2.0 * h), want)),
                // Perturbation crossed a sign/flip boundary; skip instance.
                _ => ok = false,
            }
        };
        for i in 0..3 {
            slot(&|x, d| { let v = x.delta_n.get(i); x.delta_n.set(i, v + d) }, g.d_delta_n.get(i));
            slot(&|x, d| { let v = x.v_s.get(i); x.v_s.set(i, v + d) }, g.d_v_s.get(i));
            slot(&|x, d| { let v = x.v_l.get(i); x.v_l.set(i, v + d) }, g.d_v_l.get(i));
            slot(&|x, d| { let v = x.v_s_t.get(i); x.v_s_t.set(i, v + d) }, g.d_v_s_t.get(i));
            slot(&|x, d| { let v = x.v_l_t.get(i); x.v_l_t.set(i, v + d) }, g.d_v_l_t.get(i));
        }
        slot(&|x, d| x.len_s += d, g.d_len_s);
        slot(&|x, d| x.len_l += d, g.d_len_l);
        slot(&|x, d| x.len_s_t += d, g.d_len_s_t);
        slot(&|x, d| x.len_l_t += d, g.d_len_l_t);
        if !ok {
            continue;
        }
        for (fd, want) in pending {
            t.probe(fd, want);
        }
        done += 1;
    }
    CheckReport {
        op: "normal-chain",
        instances,
        probes: t.probes,
        max_rel: t.max_rel,
        tol: 1e-5,
    }
}

fn check_shading(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-6;
    let lut = build_env_brdf_lut(8, 64, seed ^ 0x11);
    let mut env = EnvironmentCubemap::new(8, 2, 8, seed ^ 0x22, 0.4).unwrap();
    {
        let p = env.params_mut();
        for v in p.iter_mut() {
            *v = rng.gen_range(0.1..1.0);
        }
    }
    env.ensure_prefiltered();
    for _ in 0..instances {
        let inp = ShadeInput {
            sh0: Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            s_tint: Vec3::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)),
            roughness: rng.gen_range(0.15..0.85),
            normal: rand_unit(&mut rng),
            omega_o: rand_unit(&mut rng),
            t: rng.gen_range(0.0..1.0),
        };
        let w = rand_unit(&mut rng);
        let loss = |inp: &ShadeInput| shade(inp, &env, &lut, None).unwrap().0.dot(w);
        let (_, cache) = shade(&inp, &env, &lut, None).unwrap();
        let mut env_grad = env.zero_grad();
        let g = shade_backward(&inp, &cache, &env, &lut, None, w, &mut env_grad, None).unwrap();
        let mut slots: Vec<(Box<dyn Fn(&mut ShadeInput, f64)>, f64)> = Vec::new();
        for i in 0..3 {
            let gi = g.d_sh0.get(i);
            slots.push((Box::new(move |x: &mut ShadeInput, d: f64| { let v = x.sh0.get(i); x.sh0.set(i, v + d) }), gi));
            let gi = g.d_s_tint.get(i);
            slots.push((Box::new(move |x: &mut ShadeInput, d: f64| { let v = x.s_tint.get(i); x.s_tint.set(i, v + d) }), gi));
            let gi = g.d_normal.get(i);
            slots.push((Box::new(move |x: &mut ShadeInput, d: f64| { let v = x.normal.get(i); x.normal.set(i, v + d) }), gi));
            let gi = g.d_omega_o.get(i);
            slots.push((Box::new(move |x: &mut ShadeInput, d: f64| { let v = x.omega_o.get(i); x.omega_o.set(i, v + d) }), gi));
        }
        slots.push((Box::new(|x: &mut ShadeInput, d: f64| x.roughness += d), g.d_roughness));
        for (perturb, want) in &slots {
            let mut ip = inp;
            perturb(&mut ip, h);
            let mut im = inp;
            perturb(&mut im, -h);
            t.probe((loss(&ip) - loss(&im)) / (2.0 * h), *want);
        }
    }
    CheckReport { op: "shading", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-5 }
}

fn check_losses(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-6;
    for _ in 0..instances {
        // Photometric on a small random pair.
        let (w, hgt) = (6usize, 6usize);
        let n = w * hgt;
        let a: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let b: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let (_, adj) = photometric_loss(&a, &b, w, hgt).unwrap();
        for _ in 0..4 {
            let i = rng.gen_range(0..n);
            let c = rng.gen_range(0..3);
            let mut ap = a.clone();
            let v = ap[i].get(c); ap[i].set(c, v + h);
            let mut am = a.clone();
            let v = am[i].get(c); am[i].set(c, v - h);
            let lp = photometric_loss(&ap, &b, w, hgt).unwrap().0;
            let lm = photometric_loss(&am, &b, w, hgt).unwrap().0;
            t.probe((lp - lm) / (2.0 * h), adj[i].get(c));
        }
        // Normal loss (N free, N-hat detached).
        let nn: Vec<Vec3> = (0..8).map(|_| rand_unit(&mut rng)).collect();
        let nh: Vec<Vec3> = (0..8).map(|_| rand_unit(&mut rng)).collect();
        let valid: Vec<bool> = (0..8).map(|_| rng.gen()).collect();
        let (_, nadj) = normal_loss(&nn, &nh, &valid);
        let i = rng.gen_range(0..8);
        let c = rng.gen_range(0..3);
        let mut np = nn.clone();
        let v = np[i].get(c); np[i].set(c, v + h);
        let mut nm = nn.clone();
        let v = nm[i].get(c); nm[i].set(c, v - h);
        let lp = normal_loss(&np, &nh, &valid).0;
        let lm = normal_loss(&nm, &nh, &valid).0;
        if valid.iter().any(|&v| v) {
            t.probe((lp - lm) / (2.0 * h), nadj[i].get(c));
        }
        // Regularizer (gamma detached).
        let dn: Vec<Vec3> = (0..6)
            .map(|_| Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)))
            .collect();
        let gam: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (_, radj) = reg_loss(&dn, &gam);
        let i = rng.gen_range(0..6);
        let c = rng.gen_range(0..3);
        let mut dp = dn.clone();
        let v = dp[i].get(c); dp[i].set(c, v + h);
        let mut dm = dn.clone();
        let v = dm[i].get(c); dm[i].set(c, v - h);
        t.probe(
            (reg_loss(&dp, &gam).0 - reg_loss(&dm, &gam).0) / (2.0 * h),
            radj[i].get(c),
        );
    }
    CheckReport { op: "losses", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-5 }
}

fn rand_splat(rng: &mut impl Rng, w: f64, h: f64, index: usize) -> Splat2D {
    let sx: f64 = rng.gen_range(1.0..3.0);
    let sy: f64 = rng.gen_range(1.0..3.0);
    let rho: f64 = rng.gen_range(-0.5..0.5);
    // Build a positive-definite covariance, then invert.
    let cov = crate::gaussian::Sym2 { xx: sx * sx, xy: rho * sx * sy, yy: sy * sy };
    Splat2D {
        center: (rng.gen_range(2.0..w - 2.0), rng.gen_range(2.0..h - 2.0)),
        inv_cov: cov.inverse().unwrap(),
        depth: rng.gen_range(1.0..5.0),
        opacity: rng.gen_range(0.2..0.7),
        color: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
        normal: rand_unit(rng),
        index,
    }
}

fn check_rasterizer(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-5;
    let (w, hgt) = (12usize, 12usize);
    for _ in 0..instances {
        let count = rng.gen_range(3..9);
        let splats: Vec<Splat2D> =
            (0..count).map(|i| rand_splat(&mut rng, w as f64, hgt as f64, i)).collect();
        let tiles = bin_and_sort(&splats, w, hgt, 16);
        let buf = composite_forward(&splats, &tiles, w, hgt);
        let mut adj = PixelAdjoints::zeros(w, hgt);
        for i in 0..adj.color.len() {
            adj.color[i] =
                Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            adj.depth[i] = rng.gen_range(-0.3..0.3);
            adj.normal[i] =
                Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            adj.alpha[i] = rng.gen_range(-0.5..0.5);
        }
        let grads = composite_backward(&splats, &tiles, &buf, &adj).unwrap();
        let loss = |splats: &[Splat2D]| -> f64 {
            let tiles = bin_and_sort(splats, w, hgt, 16);
            let b = composite_forward(splats, &tiles, w, hgt);
            let mut l = 0.0;
            for i in 0..b.color.len() {
                l += b.color[i].dot(adj.color[i])
                    + b.depth[i] * adj.depth[i]
                    + b.normal[i].dot(adj.normal[i])
                    + b.alpha[i] * adj.alpha[i];
            }
            l
        };
        let si = rng.gen_range(0..count);
        let g = &grads[si];
        let slots: Vec<(Box<dyn Fn(&mut Splat2D, f64)>, f64)> = vec![
            (Box::new(|s: &mut Splat2D, d: f64| s.color.x += d), g.d_color.x),
            (Box::new(|s: &mut Splat2D, d: f64| s.opacity += d), g.d_opacity),
            (Box::new(|s: &mut Splat2D, d: f64| s.center.0 += d), g.d_center.0),
            (Box::new(|s: &mut Splat2D, d: f64| s.center.1 += d), g.d_center.1),
            (Box::new(|s: &mut Splat2D, d: f64| s.inv_cov.xx += d), g.d_inv_cov.xx),
            (
                Box::new(|s: &mut Splat2D, d: f64| {
                    s.inv_cov.xy += d;
                }),
                // Off-diagonal adjoint is packed combined (both slots).
                g.d_inv_cov.xy,
            ),
            (Box::new(|s: &mut Splat2D, d: f64| s.depth += d), g.d_depth),
            (Box::new(|s: &mut Splat2D, d: f64| s.normal.y += d), g.d_normal.y),
        ];
        for (perturb, want) in &slots {
            let mut p = splats.clone();
            perturb(&mut p[si], h);
            let mut m = splats.clone();
            perturb(&mut m[si], -h);
            t.probe((loss(&p) - loss(&m)) / (2.0 * h), *want);
        }
    }
    CheckReport { op: "rasterizer", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-4 }
}

fn check_cubemap(seed: u64, instances: usize, fault: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(fault);
    let h = 1e-5;
    for _ in 0..instances {
        let mut env = EnvironmentCubemap::new(8, 2, 8, seed ^ 0x33, 0.4).unwrap();
        {
            let p = env.params_mut();
            for v in p.iter_mut() {
                *v = rng.gen_range(0.1..1.0);
            }
        }
        env.ensure_prefiltered();
        let dir = rand_unit(&mut rng);
        let rough = rng.gen_range(0.1..0.9);
        let w = rand_unit(&mut rng);
        let loss = |env: &mut EnvironmentCubemap, dir: Vec3, rough: f64| -> f64 {
            env.ensure_prefiltered();
            env.query(dir, rough).unwrap().dot(w)
        };
        let mut grad = env.zero_grad();
        let (g_dir, g_rough) = env.query_backward(dir, rough, w, &mut grad).unwrap();
        let mut g_params = vec![0.0; env.params().len()];
        env.backward_to_params(&grad, &mut g_params).unwrap();
        // Base parameter probes go through the full prefilter chain.
        let np = g_params.len();
        for idx in [0, np / 3, np / 2, np - 1] {
            let mut ep = env.clone();
            ep.params_mut()[idx] += h;
            let mut em = env.clone();
            em.params_mut()[idx] -= h;
            t.probe(
                (loss(&mut ep, dir, rough) - loss(&mut em, dir, rough)) / (2.0 * h),
                g_params[idx],
            );
        }
        // Direction and roughness through the query interpolation.
        for c in 0..3 {
            let mut dp = dir;
            dp.set(c, dp.get(c) + h);
            let mut dm = dir;
            dm.set(c, dm.get(c) - h);
            let mut e = env.clone();
            t.probe((loss(&mut e, dp, rough) - loss(&mut e, dm, rough)) / (2.0 * h), g_dir.get(c));
        }
        let mut e = env.clone();
        t.probe(
            (loss(&mut e, dir, rough + h) - loss(&mut e, dir, rough - h)) / (2.0 * h),
            g_rough,
        );
    }
    CheckReport { op: "cubemap", instances, probes: t.probes, max_rel: t.max_rel, tol: 1e-4 }
}

/// Run the whole audit. `fault` names an operation whose analytic
/// gradients are deliberately corrupted (harness self-test: the named
/// operation must then fail).
pub fn run_all(seed: u64, instances: usize, fault: Option<&str>) -> Vec<CheckReport> {
    let f = |op: &str| if fault == Some(op) { 0.37 } else { 0.0 };
    vec![
        check_mlp(seed, instances, f("mlp")),
        check_deformation(seed.wrapping_add(1), instances, f("deformation")),
        check_normal_chain(seed.wrapping_add(2), instances, f("normal-chain")),
        check_shading(seed.wrapping_add(3), instances, f("shading")),
        check_losses(seed.wrapping_add(4), instances, f("losses")),
        check_rasterizer(seed.wrapping_add(5), instances, f("rasterizer")),
        check_cubemap(seed.wrapping_add(6), instances, f("cubemap")),
    ]
}
