//! Analytic synthetic-scene generator: ray-traced ground truth for a
//! Lambertian checker floor plus a reflective sphere under a procedural sky.
//!
//! Recipes:
//!   STATIC_MIRROR_SPHERE  fixed sphere, static environment
//!   MOVING_SPHERE         sphere center translates by amplitude*sin(pi t/2)
//!   ROTATING_LIGHT        fixed sphere, environment rotates about +y over t
//!
//! Output directory layout:
//!   cameras.json                      dataset metadata (see dataset module)
//!   frame_NNN.{ppm|pfm|png}           color images
//!   normal_NNN.pfm                    camera-space unit normals (RGB PFM)
//!   depth_NNN.pfm                     camera-space depth (gray PFM, 0 = miss)
//!   gt_env_{px,nx,py,ny,pz,nz}.pfm    ground-truth cubemap faces at t = 0
//!   points.json                       surface samples for initialization

use crate::env::face_uv_to_dir;
use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::io::dataset::{save_cameras_json, save_points, CamerasJson, FrameJson, PointSample};
use crate::io::image::{write_image, write_pfm_gray, write_pfm_rgb, ImageBuf, ImageFormat};
use crate::math::{Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    StaticMirrorSphere,
    MovingSphere,
    RotatingLight,
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Recipe> {
        match s {
            "STATIC_MIRROR_SPHERE" => Ok(Recipe::StaticMirrorSphere),
            "MOVING_SPHERE" => Ok(Recipe::MovingSphere),
            "ROTATING_LIGHT" => Ok(Recipe::RotatingLight),
            other => Err(Error::Usage(format!("unknown recipe {other:?}"))),
        }
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Recipe::StaticMirrorSphere => "STATIC_MIRROR_SPHERE",
            Recipe::MovingSphere => "MOVING_SPHERE",
            Recipe::RotatingLight => "ROTATING_LIGHT",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub recipe: Recipe,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Every `test_every`-th view goes to the test split; 0 disables.
    pub test_every: usize,
    pub image_format: ImageFormat,
    /// Surface samples written to points.json.
    pub point_count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            recipe: Recipe::StaticMirrorSphere,
            views: 16,
            width: 64,
            height: 64,
            seed: 0,
            test_every: 4,
            image_format: ImageFormat::Ppm,
            point_count: 2000,
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;
pub const SPHERE_BASE_CENTER: Vec3 = Vec3 { x: 0.0, y: 0.5, z: 0.0 };
/// MOVING_SPHERE displacement along +x between t = 0 and t = 1.
pub const MOVE_AMPLITUDE: f64 = 0.6;
/// ROTATING_LIGHT total environment rotation about +y over t in [0,1].
pub const LIGHT_ROTATION: f64 = std::f64::consts::FRAC_PI_2;
const FLOOR_EXTENT: f64 = 4.0;
const CHECKER_CELL: f64 = 0.5;
const MIRROR_TINT: f64 = 0.88;

fn sun_direction() -> Vec3 {
    Vec3::new(0.35, 0.70, 0.25).normalized()
}

fn accent_direction() -> Vec3 {
    Vec3::new(-0.55, 0.30, -0.45).normalized()
}

/// Procedural sky in canonical (t = 0) orientation: a vertical gradient plus
/// a tight sun lobe and a broader colored accent lobe.
pub fn sky_radiance(dir: Vec3) -> Vec3 {
    let up = ((dir.y + 1.0) * 0.5).clamp(0.0, 1.0);
    let base = Vec3::new(0.20, 0.22, 0.30) * (1.0 - up) + Vec3::new(0.45, 0.60, 0.95) * up;
    let sun = Vec3::new(1.5, 1.4, 1.1) * (48.0 * (dir.dot(sun_direction()) - 1.0)).exp();
    let accent = Vec3::new(0.9, 0.25, 0.1) * (20.0 * (dir.dot(accent_direction()) - 1.0)).exp();
    base + sun + accent
}

fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::from_rows(Vec3::new(c, 0.0, s), Vec3::new(0.0, 1.0, 0.0), Vec3::new(-s, 0.0, c))
}

/// Environment rotation angle at time t for the recipe.
pub fn light_angle(recipe: Recipe, t: f64) -> f64 {
    match recipe {
        Recipe::RotatingLight => LIGHT_ROTATION * t,
        _ => 0.0,
    }
}

/// Time-dependent environment radiance: the canonical sky queried through
/// the recipe's rotation.
pub fn env_radiance(recipe: Recipe, dir: Vec3, t: f64) -> Vec3 {
    sky_radiance(rot_y(light_angle(recipe, t)) * dir)
}

/// Sphere center at time t.
pub fn sphere_center(recipe: Recipe, t: f64) -> Vec3 {
    match recipe {
        Recipe::MovingSphere => {
            SPHERE_BASE_CENTER
                + Vec3::new(MOVE_AMPLITUDE * (std::f64::consts::FRAC_PI_2 * t).sin(), 0.0, 0.0)
        }
        _ => SPHERE_BASE_CENTER,
    }
}

fn checker_albedo(x: f64, z: f64) -> f64 {
    let cell = (x / CHECKER_CELL).floor() + (z / CHECKER_CELL).floor();
    if (cell as i64).rem_euclid(2) == 0 {
        0.75
    } else {
        0.25
    }
}

fn floor_color(recipe: Recipe, p: Vec3, t: f64) -> Vec3 {
    let sun = rot_y(-light_angle(recipe, t)) * sun_direction();
    let shade = 0.35 + 0.65 * sun.y.max(0.0);
    Vec3::new(1.0, 0.97, 0.90) * (checker_albedo(p.x, p.z) * shade)
}

fn hit_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    for root in [-b - s, -b + s] {
        if root > 1e-9 {
            return Some(root);
        }
    }
    None
}

fn hit_floor(origin: Vec3, dir: Vec3) -> Option<f64> {
    if dir.y.abs() < 1e-12 {
        return None;
    }
    let s = -origin.y / dir.y;
    if s <= 1e-9 {
        return None;
    }
    let p = origin + dir * s;
    if p.x.abs() > FLOOR_EXTENT || p.z.abs() > FLOOR_EXTENT {
        return None;
    }
    Some(s)
}

/// Per-pixel analytic ground truth.
#[derive(Debug, Clone, Copy)]
pub struct TraceSample {
    pub color: Vec3,
    /// World-space unit surface normal; zero when the ray escapes.
    pub normal: Vec3,
    /// Distance along the (unit) ray; 0 when the ray escapes.
    pub range: f64,
}

/// Traces one primary ray at time t.
pub fn trace(recipe: Recipe, origin: Vec3, dir: Vec3, t: f64) -> TraceSample {
    let center = sphere_center(recipe, t);
    let s_sphere = hit_sphere(origin, dir, center, SPHERE_RADIUS);
    let s_floor = hit_floor(origin, dir);
    let (range, on_sphere) = match (s_sphere, s_floor) {
        (Some(a), Some(b)) if a <= b => (a, true),
        (Some(a), None) => (a, true),
        (_, Some(b)) => (b, false),
        (None, None) => {
            return TraceSample {
                color: env_radiance(recipe, dir, t).clamped01(),
                normal: Vec3::ZERO,
                range: 0.0,
            }
        }
    };
    let p = origin + dir * range;
    if on_sphere {
        let n = ((p - center) / SPHERE_RADIUS).normalized();
        let r = dir - n * (2.0 * dir.dot(n));
        // One secondary bounce: the mirror sees the floor or the sky.
        let bounce = match hit_floor(p, r) {
            Some(s) => floor_color(recipe, p + r * s, t),
            None => env_radiance(recipe, r, t),
        };
        TraceSample { color: (bounce * MIRROR_TINT).clamped01(), normal: n, range }
    } else {
        TraceSample {
            color: floor_color(recipe, p, t).clamped01(),
            normal: Vec3::new(0.0, 1.0, 0.0),
            range,
        }
    }
}

/// World-to-camera pose looking from `eye` toward `target`, +z forward and
/// +y down (image row direction) for a y-up world.
pub fn look_at(eye: Vec3, target: Vec3) -> Result<(Mat3, Vec3)> {
    let up = Vec3::new(0.0, 1.0, 0.0);
    let fwd = target - eye;
    if fwd.norm() < 1e-12 {
        return Err(Error::Geometry("look_at: eye coincides with target".into()));
    }
    let z = fwd.normalized();
    let x_raw = z.cross(up);
    if x_raw.norm() < 1e-9 {
        return Err(Error::Geometry("look_at: view direction is parallel to world up".into()));
    }
    let x = x_raw.normalized();
    let y = z.cross(x);
    let rot = Mat3::from_rows(x, y, z);
    Ok((rot, -(rot * eye)))
}

fn orbit_camera(cfg: &SynthConfig, view: usize, time: f64) -> Result<Camera> {
    let az = 2.0 * std::f64::consts::PI * view as f64 / cfg.views as f64;
    let eye = Vec3::new(2.3 * az.cos(), 1.3, 2.3 * az.sin());
    let target = Vec3::new(0.0, 0.45, 0.0);
    let (rot, trans) = look_at(eye, target)?;
    // ~50 degree horizontal field of view.
    let fx = 0.5 * cfg.width as f64 / (25.0f64).to_radians().tan();
    Ok(Camera {
        rot,
        trans,
        fx,
        fy: fx,
        cx: cfg.width as f64 * 0.5,
        cy: cfg.height as f64 * 0.5,
        width: cfg.width,
        height: cfg.height,
        time,
    })
}

/// Primary ray through pixel center (x+0.5, y+0.5) in world space.
pub fn pixel_ray(cam: &Camera, x: usize, y: usize) -> (Vec3, Vec3) {
    let d_cam = Vec3::new(
        (x as f64 + 0.5 - cam.cx) / cam.fx,
        (y as f64 + 0.5 - cam.cy) / cam.fy,
        1.0,
    );
    let dir = (cam.rot.transpose() * d_cam).normalized();
    (cam.center(), dir)
}

/// Renders one frame: color, camera-space normals, camera-space depth.
pub fn render_frame(
    recipe: Recipe,
    cam: &Camera,
    width: usize,
    height: usize,
    t: f64,
) -> (ImageBuf, Vec<Vec3>, Vec<f64>) {
    let rows: Vec<(Vec<Vec3>, Vec<Vec3>, Vec<f64>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut color = Vec::with_capacity(width);
            let mut normal = Vec::with_capacity(width);
            let mut depth = Vec::with_capacity(width);
            for x in 0..width {
                let (origin, dir) = pixel_ray(cam, x, y);
                let s = trace(recipe, origin, dir, t);
                color.push(s.color);
                normal.push(if s.range > 0.0 { cam.rot * s.normal } else { Vec3::ZERO });
                // Depth maps store the camera-space z of the hit point.
                depth.push(if s.range > 0.0 {
                    cam.to_camera(origin + dir * s.range).z
                } else {
                    0.0
                });
            }
            (color, normal, depth)
        })
        .collect();
    let mut img = ImageBuf::new(width, height);
    let mut normals = Vec::with_capacity(width * height);
    let mut depths = Vec::with_capacity(width * height);
    for (y, (c, n, d)) in rows.into_iter().enumerate() {
        img.pixels[y * width..(y + 1) * width].copy_from_slice(&c);
        normals.extend_from_slice(&n);
        depths.extend_from_slice(&d);
    }
    (img, normals, depths)
}

fn surface_points(cfg: &SynthConfig) -> Vec<PointSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut points = Vec::with_capacity(cfg.point_count);
    let center = sphere_center(cfg.recipe, 0.0);
    let n_sphere = cfg.point_count / 2;
    // Fibonacci-spiral sphere coverage.
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for i in 0..n_sphere {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_sphere as f64;
        let r = (1.0 - y * y).sqrt();
        let az = golden * i as f64;
        let n = Vec3::new(r * az.cos(), y, r * az.sin());
        let p = center + n * SPHERE_RADIUS;
        if p.y < 0.0 {
            continue;
        }
        // Seed color: the mirror reflecting the sky along the normal.
        let color = (env_radiance(cfg.recipe, n, 0.0) * MIRROR_TINT).clamped01();
        points.push(PointSample { position: p, color });
    }
    // Distant sky-dome shell so the background is representable; the
    // renderer has no separate background term.
    let n_sky = cfg.point_count / 4;
    let sky_radius = 12.0;
    for i in 0..n_sky {
        // Upper hemisphere only; the floor occludes everything below.
        let y = (i as f64 + 0.5) / n_sky as f64;
        let r = (1.0 - y * y).sqrt();
        let az = golden * i as f64;
        let d = Vec3::new(r * az.cos(), y, r * az.sin());
        points.push(PointSample {
            position: d * sky_radius,
            color: env_radiance(cfg.recipe, d, 0.0).clamped01(),
        });
    }
    while points.len() < cfg.point_count {
        let p = Vec3::new(
            rng.gen_range(-FLOOR_EXTENT..FLOOR_EXTENT),
            0.0,
            rng.gen_range(-FLOOR_EXTENT..FLOOR_EXTENT),
        );
        points.push(PointSample {
            position: p,
            color: floor_color(cfg.recipe, p, 0.0).clamped01(),
        });
    }
    points
}

fn write_gt_cubemap(dir: &Path, recipe: Recipe) -> Result<()> {
    const RES: usize = 128;
    let names = ["px", "nx", "py", "ny", "pz", "nz"];
    for (face, name) in names.iter().enumerate() {
        let mut img = ImageBuf::new(RES, RES);
        for j in 0..RES {
            for i in 0..RES {
                let u = (i as f64 + 0.5) / RES as f64;
                let v = (j as f64 + 0.5) / RES as f64;
                img.set(i, j, env_radiance(recipe, face_uv_to_dir(face, u, v), 0.0));
            }
        }
        write_pfm_rgb(&dir.join(format!("gt_env_{name}.pfm")), &img)?;
    }
    Ok(())
}

pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    if cfg.views == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Usage("generator needs at least one view and nonzero size".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut frames = Vec::with_capacity(cfg.views);
    for view in 0..cfg.views {
        let t = if cfg.views > 1 { view as f64 / (cfg.views - 1) as f64 } else { 0.0 };
        let cam = orbit_camera(cfg, view, t)?;
        let (img, normals, depths) = render_frame(cfg.recipe, &cam, cfg.width, cfg.height, t);

        let image_name = format!("frame_{view:03}.{}", cfg.image_format.extension());
        let normal_name = format!("normal_{view:03}.pfm");
        let depth_name = format!("depth_{view:03}.pfm");
        write_image(&out_dir.join(&image_name), &img, cfg.image_format)?;
        let normal_img =
            ImageBuf { width: cfg.width, height: cfg.height, pixels: normals };
        write_pfm_rgb(&out_dir.join(&normal_name), &normal_img)?;
        write_pfm_gray(&out_dir.join(&depth_name), cfg.width, cfg.height, &depths)?;

        let test = cfg.test_every > 0 && (view + 1) % cfg.test_every == 0;
        frames.push(FrameJson {
            intrinsics: [
                [cam.fx, 0.0, cam.cx],
                [0.0, cam.fy, cam.cy],
                [0.0, 0.0, 1.0],
            ],
            world_to_camera: [
                [cam.rot.at(0, 0), cam.rot.at(0, 1), cam.rot.at(0, 2), cam.trans.x],
                [cam.rot.at(1, 0), cam.rot.at(1, 1), cam.rot.at(1, 2), cam.trans.y],
                [cam.rot.at(2, 0), cam.rot.at(2, 1), cam.rot.at(2, 2), cam.trans.z],
                [0.0, 0.0, 0.0, 1.0],
            ],
            time: t,
            image: image_name,
            normal: Some(normal_name),
            depth: Some(depth_name),
            split: Some(if test { "test".into() } else { "train".into() }),
        });
    }

    save_cameras_json(
        &out_dir.join("cameras.json"),
        &CamerasJson { width: cfg.width, height: cfg.height, frames },
    )?;
    save_points(&out_dir.join("points.json"), &surface_points(cfg))?;
    write_gt_cubemap(out_dir, cfg.recipe)?;
    Ok(())
}
