//! Image I/O: PPM (8-bit, sRGB-encoded), PFM (32-bit float, linear), and PNG.
//!
//! PPM/PNG hold display-referred values: linear radiance is clamped to [0,1]
//! and passed through the sRGB transfer curve on write, inverted on read.
//! PFM holds raw linear values and round-trips f32 payloads bit-exactly.

use crate::error::{Error, Result};
use crate::math::Vec3;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Row-major linear-RGB image; row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize) -> ImageBuf {
        ImageBuf { width, height, pixels: vec![Vec3::ZERO; width * height] }
    }

    pub fn at(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vec3) {
        self.pixels[y * self.width + x] = v;
    }
}

/// On-disk encoding for generated color frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Pfm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Pfm => "pfm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn srgb_encode(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(x: f64) -> f64 {
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

fn to_srgb_bytes(img: &ImageBuf) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(img.pixels.len() * 3);
    for p in &img.pixels {
        for c in [p.x, p.y, p.z] {
            bytes.push((srgb_encode(c) * 255.0).round() as u8);
        }
    }
    bytes
}

fn from_srgb_bytes(width: usize, height: usize, bytes: &[u8]) -> ImageBuf {
    let pixels = bytes
        .chunks_exact(3)
        .map(|c| {
            Vec3::new(
                srgb_decode(c[0] as f64 / 255.0),
                srgb_decode(c[1] as f64 / 255.0),
                srgb_decode(c[2] as f64 / 255.0),
            )
        })
        .collect();
    ImageBuf { width, height, pixels }
}

pub fn write_ppm(path: &Path, img: &ImageBuf) -> Result<()> {
    let mut out = Vec::new();
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.extend_from_slice(&to_srgb_bytes(img));
    fs::write(path, out)?;
    Ok(())
}

/// Reads whitespace/comment-separated header tokens, returning the byte
/// offset where the binary payload starts (one whitespace after the last
/// token).
fn ppm_header(data: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Data(format!("{}: truncated PPM header", path.display())));
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    if i >= data.len() {
        return Err(Error::Data(format!("{}: truncated PPM header", path.display())));
    }
    Ok((tokens, i + 1))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuf> {
    let data = fs::read(path)?;
    let (tokens, body) = ppm_header(&data, 4, path)?;
    if tokens[0] != "P6" {
        return Err(Error::Data(format!("{}: expected P6 PPM, got {}", path.display(), tokens[0])));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PPM width", path.display())))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PPM height", path.display())))?;
    if tokens[3] != "255" {
        return Err(Error::Data(format!("{}: only maxval 255 supported", path.display())));
    }
    let need = width * height * 3;
    let payload = data
        .get(body..body + need)
        .ok_or_else(|| Error::Data(format!("{}: truncated PPM payload", path.display())))?;
    Ok(from_srgb_bytes(width, height, payload))
}

fn write_pfm(path: &Path, header: &str, width: usize, height: usize, chans: &[f64]) -> Result<()> {
    let per_row = chans.len() / height;
    let mut out = Vec::new();
    write!(out, "{header}\n{width} {height}\n-1.0\n")?;
    // PFM stores rows bottom-to-top.
    for y in (0..height).rev() {
        for v in &chans[y * per_row..(y + 1) * per_row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_pfm(path: &Path, want_header: &str) -> Result<(usize, usize, Vec<f64>)> {
    let data = fs::read(path)?;
    let (tokens, body) = ppm_header(&data, 4, path)?;
    if tokens[0] != want_header {
        return Err(Error::Data(format!(
            "{}: expected {} PFM, got {}",
            path.display(),
            want_header,
            tokens[0]
        )));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PFM width", path.display())))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PFM height", path.display())))?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Data(format!("{}: bad PFM scale", path.display())))?;
    if scale >= 0.0 {
        return Err(Error::Data(format!(
            "{}: big-endian PFM not supported",
            path.display()
        )));
    }
    let per_pix = if want_header == "PF" { 3 } else { 1 };
    let need = width * height * per_pix * 4;
    let payload = data
        .get(body..body + need)
        .ok_or_else(|| Error::Data(format!("{}: truncated PFM payload", path.display())))?;
    let per_row = width * per_pix;
    let mut chans = vec![0.0; width * height * per_pix];
    for (row_idx, row) in payload.chunks_exact(per_row * 4).enumerate() {
        let y = height - 1 - row_idx;
        for (i, b) in row.chunks_exact(4).enumerate() {
            chans[y * per_row + i] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    Ok((width, height, chans))
}

pub fn write_pfm_rgb(path: &Path, img: &ImageBuf) -> Result<()> {
    let mut chans = Vec::with_capacity(img.pixels.len() * 3);
    for p in &img.pixels {
        chans.extend_from_slice(&[p.x, p.y, p.z]);
    }
    write_pfm(path, "PF", img.width, img.height, &chans)
}

pub fn read_pfm_rgb(path: &Path) -> Result<ImageBuf> {
    let (width, height, chans) = read_pfm(path, "PF")?;
    let pixels = chans.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    Ok(ImageBuf { width, height, pixels })
}

pub fn write_pfm_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Usage(format!(
            "PFM payload has {} values for {}x{}",
            values.len(),
            width,
            height
        )));
    }
    write_pfm(path, "Pf", width, height, values)
}

pub fn read_pfm_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    read_pfm(path, "Pf")
}

pub fn write_png(path: &Path, img: &ImageBuf) -> Result<()> {
    image::save_buffer(
        path,
        &to_srgb_bytes(img),
        img.width as u32,
        img.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .into_rgb8();
    Ok(from_srgb_bytes(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// Dispatches on file extension: .ppm, .png, or .pfm (linear RGB).
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("png") => read_png(path),
        Some("pfm") => read_pfm_rgb(path),
        other => Err(Error::Data(format!(
            "{}: unsupported image extension {:?}",
            path.display(),
            other
        ))),
    }
}

pub fn write_image(path: &Path, img: &ImageBuf, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Ppm => write_ppm(path, img),
        ImageFormat::Pfm => write_pfm_rgb(path, img),
        ImageFormat::Png => write_png(path, img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageBuf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageBuf::new(w, h);
        for p in &mut img.pixels {
            *p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        }
        img
    }

    #[test]
    fn srgb_curve_round_trips_and_hits_known_points() {
        assert!((srgb_encode(0.0)).abs() < 1e-12);
        assert!((srgb_encode(1.0) - 1.0).abs() < 1e-12);
        // Mid-grey: linear 0.2140 maps near display 0.5.
        assert!((srgb_decode(0.5) - 0.214_041).abs() < 1e-5);
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn ppm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = random_image(13, 7, 3);
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height), (13, 7));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            // 8-bit quantization in sRGB space: at most half a code in
            // display space, which the decode slope bounds in linear space.
            for (x, y) in [(a.x, b.x), (a.y, b.y), (a.z, b.z)] {
                assert!((srgb_encode(x) - srgb_encode(y)).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn png_matches_ppm_pixel_for_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(9, 11, 4);
        let p_ppm = dir.path().join("img.ppm");
        let p_png = dir.path().join("img.png");
        write_ppm(&p_ppm, &img).unwrap();
        write_png(&p_png, &img).unwrap();
        assert_eq!(read_image(&p_ppm).unwrap(), read_image(&p_png).unwrap());
    }

    #[test]
    fn pfm_rgb_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let mut img = random_image(8, 5, 5);
        for p in &mut img.pixels {
            *p = *p * 3.7 - Vec3::splat(1.0); // values outside [0,1] survive
        }
        write_pfm_rgb(&path, &img).unwrap();
        let back = read_pfm_rgb(&path).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert_eq!(a.x as f32, b.x as f32);
            assert_eq!(a.y as f32, b.y as f32);
            assert_eq!(a.z as f32, b.z as f32);
        }
        // A second write of the loaded image is byte-identical.
        let path2 = dir.path().join("img2.pfm");
        write_pfm_rgb(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn pfm_gray_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pfm");
        let vals: Vec<f64> = (0..24).map(|i| i as f64 * 0.37 - 2.0).collect();
        write_pfm_gray(&path, 6, 4, &vals).unwrap();
        let (w, h, back) = read_pfm_gray(&path).unwrap();
        assert_eq!((w, h), (6, 4));
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn truncated_and_mislabeled_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nxx").unwrap();
        assert!(matches!(read_ppm(&path), Err(Error::Data(_))));
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"PF\n2 2\n1.0\n").unwrap();
        assert!(matches!(read_pfm_rgb(&path), Err(Error::Data(_))));
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut data = b"P6 # comment\n1 1 # another\n255\n".to_vec();
        data.extend_from_slice(&[255, 0, 0]);
        std::fs::write(&path, data).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (1, 1));
        assert!((img.at(0, 0).x - 1.0).abs() < 1e-12);
    }
}
