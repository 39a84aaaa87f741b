use super::vec3::Vec3;
use std::ops::{Add, Mul, Sub};

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat3 {
    pub m: [f64; 9],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] };
    pub const ZERO: Mat3 = Mat3 { m: [0.0; 9] };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3 { m: [r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z] }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 { m: [c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z] }
    }

    pub fn diag(d: Vec3) -> Mat3 {
        Mat3 { m: [d.x, 0.0, 0.0, 0.0, d.y, 0.0, 0.0, 0.0, d.z] }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.m[r * 3 + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.m[r * 3 + c] = v;
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::new(self.m[r * 3], self.m[r * 3 + 1], self.m[r * 3 + 2])
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.m[c], self.m[3 + c], self.m[6 + c])
    }

    pub fn transpose(&self) -> Mat3 {
        Mat3::from_rows(self.col(0), self.col(1), self.col(2))
    }

    pub fn det(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Outer product a b^T.
    pub fn outer(a: Vec3, b: Vec3) -> Mat3 {
        Mat3::from_rows(b * a.x, b * a.y, b * a.z)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.row(r).dot(o.col(c));
            }
        }
        Mat3 { m: out }
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut m = self.m;
        for v in &mut m {
            *v *= s;
        }
        Mat3 { m }
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self.m;
        for (a, b) in m.iter_mut().zip(o.m.iter()) {
            *a += b;
        }
        Mat3 { m }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut m = self.m;
        for (a, b) in m.iter_mut().zip(o.m.iter()) {
            *a -= b;
        }
        Mat3 { m }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_identity() {
        assert_eq!(Mat3::IDENTITY.det(), 1.0);
    }

    #[test]
    fn mul_transpose_roundtrip() {
        let a = Mat3 { m: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0] };
        let t = a.transpose().transpose();
        assert_eq!(a, t);
    }
}
