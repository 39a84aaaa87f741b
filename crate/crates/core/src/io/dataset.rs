//! cameras.json dataset loading.
//!
//! Schema (all arrays row-major):
//!   width, height          image dimensions shared by every frame
//!   frames[].intrinsics    3x3 pinhole matrix [[fx,0,cx],[0,fy,cy],[0,0,1]]
//!   frames[].world_to_camera  4x4 rigid transform, +z forward, +y down
//!   frames[].time          scalar; normalized to [0,1] on load if needed
//!   frames[].image         color image filename relative to the directory
//!   frames[].normal/depth  optional ground-truth PFM filenames
//!   frames[].split         optional "train" | "test" (default train)
//!
//! An optional sibling points.json ([[x,y,z,r,g,b], ...]) provides the
//! initialization point cloud.

use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::io::image::{read_image, ImageBuf};
use crate::math::{Mat3, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameJson {
    pub intrinsics: [[f64; 3]; 3],
    pub world_to_camera: [[f64; 4]; 4],
    pub time: f64,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CamerasJson {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameJson>,
}

#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub camera: Camera,
    pub time: f64,
    pub image_path: PathBuf,
    pub normal_path: Option<PathBuf>,
    pub depth_path: Option<PathBuf>,
    pub image: ImageBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    pub color: Vec3,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<CameraFrame>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub points: Option<Vec<PointSample>>,
}

impl Dataset {
    pub fn train_frames(&self) -> impl Iterator<Item = &CameraFrame> {
        self.train.iter().map(|&i| &self.frames[i])
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &CameraFrame> {
        self.test.iter().map(|&i| &self.frames[i])
    }

    /// Axis-aligned bounds over all camera positions and point samples,
    /// padded so it always has positive volume.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        let mut absorb = |p: Vec3| {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        };
        for f in &self.frames {
            absorb(f.camera.center());
        }
        if let Some(points) = &self.points {
            for p in points {
                absorb(p.position);
            }
        }
        let pad = Vec3::splat(0.1);
        (lo - pad, hi + pad)
    }
}

fn frame_camera(f: &FrameJson, idx: usize, width: usize, height: usize, time: f64) -> Result<Camera> {
    let k = &f.intrinsics;
    let off = [k[0][1], k[1][0], k[2][0], k[2][1]];
    if off.iter().any(|v| v.abs() > 1e-12) || (k[2][2] - 1.0).abs() > 1e-12 {
        return Err(Error::Data(format!(
            "frame {idx} ({}): intrinsics are not a pinhole matrix",
            f.image
        )));
    }
    let m = &f.world_to_camera;
    let bottom = [m[3][0], m[3][1], m[3][2], m[3][3] - 1.0];
    if bottom.iter().any(|v| v.abs() > 1e-9) {
        return Err(Error::Data(format!(
            "frame {idx} ({}): world_to_camera bottom row is not [0,0,0,1]",
            f.image
        )));
    }
    let rot = Mat3::from_rows(
        Vec3::new(m[0][0], m[0][1], m[0][2]),
        Vec3::new(m[1][0], m[1][1], m[1][2]),
        Vec3::new(m[2][0], m[2][1], m[2][2]),
    );
    Ok(Camera {
        rot,
        trans: Vec3::new(m[0][3], m[1][3], m[2][3]),
        fx: k[0][0],
        fy: k[1][1],
        cx: k[0][2],
        cy: k[1][2],
        width,
        height,
        time,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("cameras.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    let meta: CamerasJson = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: malformed JSON: {e}", meta_path.display())))?;
    if meta.frames.is_empty() {
        return Err(Error::Data(format!("{}: no frames", meta_path.display())));
    }

    for w in meta.frames.windows(2) {
        if w[1].time < w[0].time {
            return Err(Error::Data(format!(
                "frame {}: times must be non-decreasing",
                w[1].image
            )));
        }
    }

    // Affine time normalization into [0,1] when the raw range leaves it.
    let t_min = meta.frames.iter().map(|f| f.time).fold(f64::INFINITY, f64::min);
    let t_max = meta.frames.iter().map(|f| f.time).fold(f64::NEG_INFINITY, f64::max);
    let normalize = |t: f64| {
        if t_min >= 0.0 && t_max <= 1.0 {
            t
        } else if t_max > t_min {
            (t - t_min) / (t_max - t_min)
        } else {
            0.0
        }
    };

    let frames: Vec<CameraFrame> = meta
        .frames
        .par_iter()
        .enumerate()
        .map(|(idx, f)| -> Result<CameraFrame> {
            let camera = frame_camera(f, idx, meta.width, meta.height, normalize(f.time))?;
            let image_path = dir.join(&f.image);
            let image = read_image(&image_path)
                .map_err(|e| Error::Data(format!("frame {idx} ({}): {e}", f.image)))?;
            if image.width != meta.width || image.height != meta.height {
                return Err(Error::Data(format!(
                    "frame {idx} ({}): image is {}x{}, dataset is {}x{}",
                    f.image, image.width, image.height, meta.width, meta.height
                )));
            }
            Ok(CameraFrame {
                camera,
                time: normalize(f.time),
                image_path,
                normal_path: f.normal.as_ref().map(|n| dir.join(n)),
                depth_path: f.depth.as_ref().map(|d| dir.join(d)),
                image,
            })
        })
        .collect::<Result<_>>()?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (idx, f) in meta.frames.iter().enumerate() {
        match f.split.as_deref() {
            None | Some("train") => train.push(idx),
            Some("test") => test.push(idx),
            Some(other) => {
                return Err(Error::Data(format!(
                    "frame {idx} ({}): unknown split {other:?}",
                    f.image
                )))
            }
        }
    }
    if train.is_empty() {
        return Err(Error::Data("dataset has no training frames".into()));
    }

    let points = load_points(&dir.join("points.json"))?;
    Ok(Dataset { width: meta.width, height: meta.height, frames, train, test, points })
}

fn load_points(path: &Path) -> Result<Option<Vec<PointSample>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<[f64; 6]> = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: malformed JSON: {e}", path.display())))?;
    Ok(Some(
        raw.iter()
            .map(|p| PointSample {
                position: Vec3::new(p[0], p[1], p[2]),
                color: Vec3::new(p[3], p[4], p[5]),
            })
            .collect(),
    ))
}

pub fn save_points(path: &Path, points: &[PointSample]) -> Result<()> {
    let raw: Vec<[f64; 6]> = points
        .iter()
        .map(|p| [p.position.x, p.position.y, p.position.z, p.color.x, p.color.y, p.color.z])
        .collect();
    std::fs::write(path, serde_json::to_string(&raw).expect("serializable"))?;
    Ok(())
}

pub fn save_cameras_json(path: &Path, meta: &CamerasJson) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(meta).expect("serializable"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::image::{write_ppm, ImageBuf};

    fn frame(image: &str, time: f64, split: Option<&str>) -> FrameJson {
        FrameJson {
            intrinsics: [[50.0, 0.0, 8.0], [0.0, 50.0, 8.0], [0.0, 0.0, 1.0]],
            world_to_camera: [
                [1.0, 0.0, 0.0, 0.1],
                [0.0, -1.0, 0.0, 0.2],
                [0.0, 0.0, -1.0, 3.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            time,
            image: image.into(),
            normal: None,
            depth: None,
            split: split.map(|s| s.into()),
        }
    }

    fn write_frame_image(dir: &Path, name: &str) {
        write_ppm(&dir.join(name), &ImageBuf::new(16, 16)).unwrap();
    }

    #[test]
    fn loads_and_normalizes_seconds_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let meta = CamerasJson {
            width: 16,
            height: 16,
            frames: vec![
                frame("a.ppm", 0.0, None),
                frame("b.ppm", 2.5, Some("test")),
                frame("c.ppm", 5.0, Some("train")),
            ],
        };
        save_cameras_json(&dir.path().join("cameras.json"), &meta).unwrap();
        for n in ["a.ppm", "b.ppm", "c.ppm"] {
            write_frame_image(dir.path(), n);
        }
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.frames.len(), 3);
        assert_eq!(ds.train, vec![0, 2]);
        assert_eq!(ds.test, vec![1]);
        let times: Vec<f64> = ds.frames.iter().map(|f| f.time).collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0]);
        assert!(ds.points.is_none());
        // Camera fields survive the 4x4/3x3 unpacking.
        let cam = &ds.frames[0].camera;
        assert_eq!((cam.fx, cam.cy), (50.0, 8.0));
        assert_eq!(cam.trans, Vec3::new(0.1, 0.2, 3.0));
    }

    #[test]
    fn missing_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let meta = CamerasJson { width: 16, height: 16, frames: vec![frame("gone.ppm", 0.0, None)] };
        save_cameras_json(&dir.path().join("cameras.json"), &meta).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("gone.ppm"), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let meta = CamerasJson { width: 32, height: 32, frames: vec![frame("a.ppm", 0.0, None)] };
        save_cameras_json(&dir.path().join("cameras.json"), &meta).unwrap();
        write_frame_image(dir.path(), "a.ppm");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame 0") && err.contains("16x16"), "{err}");
    }

    #[test]
    fn decreasing_times_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let meta = CamerasJson {
            width: 16,
            height: 16,
            frames: vec![frame("a.ppm", 1.0, None), frame("b.ppm", 0.5, None)],
        };
        save_cameras_json(&dir.path().join("cameras.json"), &meta).unwrap();
        for n in ["a.ppm", "b.ppm"] {
            write_frame_image(dir.path(), n);
        }
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            PointSample { position: Vec3::new(1.0, 2.0, 3.0), color: Vec3::new(0.1, 0.2, 0.3) },
            PointSample { position: Vec3::new(-1.0, 0.0, 0.5), color: Vec3::splat(0.7) },
        ];
        save_points(&dir.path().join("points.json"), &pts).unwrap();
        let back = load_points(&dir.path().join("points.json")).unwrap().unwrap();
        assert_eq!(pts, back);
    }
}
