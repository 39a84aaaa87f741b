//! Tile-based differentiable splatting: binning, front-to-back alpha
//! compositing of color/depth/normal/alpha, the matching adjoint pass,
//! and the depth-gradient pseudo-normal map.

use crate::error::{Error, Result};
use crate::gaussian::{Camera, Sym2};
use crate::math::Vec3;
use rayon::prelude::*;

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;
pub const T_MIN: f64 = 1.0 / 255.0;

/// One screen-space splat ready for compositing.
#[derive(Debug, Clone, Copy)]
pub struct Splat2D {
    /// Pixel coordinates of the projected center.
    pub center: (f64, f64),
    /// Inverse of the (low-passed) 2D covariance.
    pub inv_cov: Sym2,
    pub depth: f64,
    /// Base opacity (post-sigmoid), before the Gaussian falloff.
    pub opacity: f64,
    pub color: Vec3,
    /// Camera-space unit normal.
    pub normal: Vec3,
    /// Source Gaussian index (also the depth tie-break key).
    pub index: usize,
}

impl Splat2D {
    /// 3-sigma footprint radius in pixels, from the largest eigenvalue
    /// of the 2D covariance (inverse of the smallest of inv_cov).
    pub fn radius(&self) -> f64 {
        let half_tr = 0.5 * (self.inv_cov.xx + self.inv_cov.yy);
        let d = (0.25 * (self.inv_cov.xx - self.inv_cov.yy).powi(2)
            + self.inv_cov.xy * self.inv_cov.xy)
            .sqrt();
        let min_eig = (half_tr - d).max(1e-12);
        3.0 * (1.0 / min_eig).sqrt()
    }
}

/// Per-tile splat lists, each sorted front to back.
pub struct TileLists {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_size: usize,
    pub lists: Vec<Vec<u32>>,
}

/// Bin splats into tiles by the 3-sigma bounding box and sort each list
/// ascending by depth with the Gaussian index as tie-break.
pub fn bin_and_sort(splats: &[Splat2D], width: usize, height: usize, tile_size: usize) -> TileLists {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let r = s.radius();
        let x0 = ((s.center.0 - r) / tile_size as f64).floor().max(0.0) as usize;
        let y0 = ((s.center.1 - r) / tile_size as f64).floor().max(0.0) as usize;
        let x1 = (((s.center.0 + r) / tile_size as f64).floor() as isize).min(tiles_x as isize - 1);
        let y1 = (((s.center.1 + r) / tile_size as f64).floor() as isize).min(tiles_y as isize - 1);
        if s.center.0 + r < 0.0 || s.center.1 + r < 0.0 || x0 >= tiles_x || y0 >= tiles_y {
            continue;
        }
        for ty in y0..=(y1.max(0) as usize) {
            for tx in x0..=(x1.max(0) as usize) {
                if (ty as isize) <= y1 && (tx as isize) <= x1 {
                    lists[ty * tiles_x + tx].push(si as u32);
                }
            }
        }
    }
    for l in &mut lists {
        l.sort_by(|&a, &b| {
            let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
            sa.depth.partial_cmp(&sb.depth).unwrap().then(sa.index.cmp(&sb.index))
        });
    }
    TileLists { tiles_x, tiles_y, tile_size, lists }
}

/// Forward compositing outputs. `normal` holds the raw alpha-weighted
/// sum; `unit_normal` is the renormalized copy, valid where alpha > 0.5.
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Vec3>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub alpha: Vec<f64>,
    pub frag_count: Vec<u32>,
}

impl RenderBuffers {
    /// Per-pixel renormalized normals where alpha > 0.5.
    pub fn unit_normal(&self, i: usize) -> Option<Vec3> {
        if self.alpha[i] > 0.5 && self.normal[i].norm() > 1e-12 {
            Some(self.normal[i].normalized())
        } else {
            None
        }
    }
}

// Per-pixel front-to-back walk shared by forward and backward. Calls
// `visit(splat index, alpha, transmittance-before)` for every blended
// fragment, in order.
fn walk_pixel<F: FnMut(u32, f64, f64)>(
    splats: &[Splat2D],
    list: &[u32],
    px: f64,
    py: f64,
    mut visit: F,
) {
    let mut t = 1.0;
    for &si in list {
        let s = &splats[si as usize];
        let dx = px - s.center.0;
        let dy = py - s.center.1;
        let q = s.inv_cov.xx * dx * dx + 2.0 * s.inv_cov.xy * dx * dy + s.inv_cov.yy * dy * dy;
        let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        visit(si, alpha, t);
        t *= 1.0 - alpha;
        if t < T_MIN {
            break;
        }
    }
}

/// Front-to-back alpha compositing per Eq. 2 semantics: weights T_i a_i,
/// early stop at T < 1/255, alpha clipped to [1/255, 0.99].
pub fn composite_forward(
    splats: &[Splat2D],
    tiles: &TileLists,
    width: usize,
    height: usize,
) -> RenderBuffers {
    let n = width * height;
    let mut buf = RenderBuffers {
        width,
        height,
        color: vec![Vec3::ZERO; n],
        depth: vec![0.0; n],
        normal: vec![Vec3::ZERO; n],
        alpha: vec![0.0; n],
        frag_count: vec![0; n],
    };
    let ts = tiles.tile_size;
    // Tiles own disjoint pixel ranges; render them in parallel by
    // splitting the output rows per tile row.
    let tiles_x = tiles.tiles_x;
    let row_chunks: Vec<(usize, Vec<(usize, usize, Vec3, f64, Vec3, f64, u32)>)> = (0..tiles
        .lists
        .len())
        .into_par_iter()
        .map(|ti| {
            let (ty, tx) = (ti / tiles_x, ti % tiles_x);
            let list = &tiles.lists[ti];
            let mut out = Vec::new();
            if list.is_empty() {
                return (ti, out);
            }
            for y in (ty * ts)..((ty + 1) * ts).min(height) {
                for x in (tx * ts)..((tx + 1) * ts).min(width) {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut c = Vec3::ZERO;
                    let mut d = 0.0;
                    let mut nrm = Vec3::ZERO;
                    let mut a = 0.0;
                    let mut frags = 0u32;
                    walk_pixel(splats, list, px, py, |si, alpha, t| {
                        let s = &splats[si as usize];
                        let w = t * alpha;
                        c = c + s.color * w;
                        d += s.depth * w;
                        nrm = nrm + s.normal * w;
                        a += w;
                        frags += 1;
                    });
                    if frags > 0 {
                        out.push((x, y, c, d, nrm, a, frags));
                    }
                }
            }
            (ti, out)
        })
        .collect();
    for (_, px) in row_chunks {
        for (x, y, c, d, nrm, a, frags) in px {
            let i = y * width + x;
            buf.color[i] = c;
            buf.depth[i] = d;
            buf.normal[i] = nrm;
            buf.alpha[i] = a;
            buf.frag_count[i] = frags;
        }
    }
    buf
}

/// Per-pixel adjoints fed into `composite_backward`, all w.r.t. the raw
/// composited sums.
pub struct PixelAdjoints {
    pub color: Vec<Vec3>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub alpha: Vec<f64>,
}

impl PixelAdjoints {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        PixelAdjoints {
            color: vec![Vec3::ZERO; n],
            depth: vec![0.0; n],
            normal: vec![Vec3::ZERO; n],
            alpha: vec![0.0; n],
        }
    }
}

/// Per-splat adjoints produced by the backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplatGrads {
    pub d_color: Vec3,
    pub d_opacity: f64,
    pub d_center: (f64, f64),
    /// Off-diagonal combined (matches `Sym2` packing).
    pub d_inv_cov: Sym2,
    pub d_depth: f64,
    pub d_normal: Vec3,
}

impl std::ops::AddAssign for SplatGrads {
    fn add_assign(&mut self, o: SplatGrads) {
        self.d_color = self.d_color + o.d_color;
        self.d_opacity += o.d_opacity;
        self.d_center.0 += o.d_center.0;
        self.d_center.1 += o.d_center.1;
        self.d_inv_cov.xx += o.d_inv_cov.xx;
        self.d_inv_cov.xy += o.d_inv_cov.xy;
        self.d_inv_cov.yy += o.d_inv_cov.yy;
        self.d_depth += o.d_depth;
        self.d_normal = self.d_normal + o.d_normal;
    }
}

/// Exact adjoints of `composite_forward`. Recomputes the per-pixel walk;
/// per-tile partial gradients are folded in tile order so the result is
/// deterministic under parallelism.
pub fn composite_backward(
    splats: &[Splat2D],
    tiles: &TileLists,
    buffers: &RenderBuffers,
    adj: &PixelAdjoints,
) -> Result<Vec<SplatGrads>> {
    if adj.color.len() != buffers.width * buffers.height
        || adj.depth.len() != adj.color.len()
        || adj.normal.len() != adj.color.len()
        || adj.alpha.len() != adj.color.len()
    {
        return Err(Error::Contract("pixel adjoint shape does not match forward buffers".into()));
    }
    let (width, height, ts) = (buffers.width, buffers.height, tiles.tile_size);
    let tiles_x = tiles.tiles_x;
    let partials: Vec<Vec<(u32, SplatGrads)>> = (0..tiles.lists.len())
        .into_par_iter()
        .map(|ti| {
            let (ty, tx) = (ti / tiles_x, ti % tiles_x);
            let list = &tiles.lists[ti];
            let mut local: Vec<SplatGrads> = vec![SplatGrads::default(); list.len()];
            if list.is_empty() {
                return Vec::new();
            }
            // Map splat id -> slot in `local`.
            let slot: std::collections::HashMap<u32, usize> =
                list.iter().enumerate().map(|(k, &v)| (v, k)).collect();
            let mut frags: Vec<(u32, f64, f64)> = Vec::new();
            for y in (ty * ts)..((ty + 1) * ts).min(height) {
                for x in (tx * ts)..((tx + 1) * ts).min(width) {
                    let i = y * width + x;
                    let (gc, gd, gn, ga) =
                        (adj.color[i], adj.depth[i], adj.normal[i], adj.alpha[i]);
                    if gc == Vec3::ZERO && gd == 0.0 && gn == Vec3::ZERO && ga == 0.0 {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    frags.clear();
                    walk_pixel(splats, list, px, py, |si, alpha, t| {
                        frags.push((si, alpha, t));
                    });
                    // Suffix pass: dL/da_i = T_i s_i - sum_{j>i} w_j s_j / (1 - a_i)
                    // with s_i the per-splat pixel sensitivity.
                    let mut suffix = 0.0;
                    for &(si, alpha, t) in frags.iter().rev() {
                        let s = &splats[si as usize];
                        let sens = s.color.dot(gc) + s.depth * gd + s.normal.dot(gn) + ga;
                        let w = t * alpha;
                        let d_alpha = t * sens - suffix / (1.0 - alpha);
                        suffix += w * sens;
                        let g = &mut local[slot[&si]];
                        g.d_color = g.d_color + gc * w;
                        g.d_depth += gd * w;
                        g.d_normal = g.d_normal + gn * w;
                        // alpha = min(opacity * gauss, ALPHA_MAX): clamp gate.
                        let dx = px - s.center.0;
                        let dy = py - s.center.1;
                        let q = s.inv_cov.xx * dx * dx
                            + 2.0 * s.inv_cov.xy * dx * dy
                            + s.inv_cov.yy * dy * dy;
                        let gauss = (-0.5 * q).exp();
                        if s.opacity * gauss < ALPHA_MAX {
                            g.d_opacity += d_alpha * gauss;
                            let d_gauss = d_alpha * s.opacity;
                            let d_q = -0.5 * gauss * d_gauss;
                            // q as a function of center and inv_cov.
                            let d_dx = 2.0 * (s.inv_cov.xx * dx + s.inv_cov.xy * dy) * d_q;
                            let d_dy = 2.0 * (s.inv_cov.yy * dy + s.inv_cov.xy * dx) * d_q;
                            g.d_center.0 -= d_dx;
                            g.d_center.1 -= d_dy;
                            g.d_inv_cov.xx += dx * dx * d_q;
                            g.d_inv_cov.xy += 2.0 * dx * dy * d_q;
                            g.d_inv_cov.yy += dy * dy * d_q;
                        }
                    }
                }
            }
            list.iter().zip(local).map(|(&si, g)| (si, g)).collect()
        })
        .collect();
    let mut out = vec![SplatGrads::default(); splats.len()];
    for tile in partials {
        for (si, g) in tile {
            out[si as usize] += g;
        }
    }
    Ok(out)
}

/// Pseudo-normals from the depth map via central differences of
/// back-projected camera-space points, oriented toward the camera
/// (z <= 0). Pixels with alpha < 0.5 anywhere in the stencil are invalid.
pub fn depth_to_normal(
    depth: &[f64],
    alpha: &[f64],
    cam: &Camera,
) -> (Vec<Vec3>, Vec<bool>) {
    let (w, h) = (cam.width, cam.height);
    let mut normals = vec![Vec3::ZERO; w * h];
    let mut valid = vec![false; w * h];
    let point = |x: usize, y: usize| -> Vec3 {
        let z = depth[y * w + x];
        Vec3::new(
            (x as f64 + 0.5 - cam.cx) / cam.fx * z,
            (y as f64 + 0.5 - cam.cy) / cam.fy * z,
            z,
        )
    };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let stencil = [i, i - 1, i + 1, i - w, i + w];
            if stencil.iter().any(|&j| alpha[j] < 0.5 || depth[j] <= 0.0) {
                continue;
            }
            let dpdu = (point(x + 1, y) - point(x - 1, y)) * 0.5;
            let dpdv = (point(x, y + 1) - point(x, y - 1)) * 0.5;
            let n = dpdu.cross(dpdv);
            if n.norm() < 1e-12 {
                continue;
            }
            let mut n = n.normalized();
            if n.z > 0.0 {
                n = -n;
            }
            normals[i] = n;
            valid[i] = true;
        }
    }
    (normals, valid)
}
