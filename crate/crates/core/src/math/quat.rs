use super::mat3::Mat3;
use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Rotation quaternion stored as (w, x, y, z). Not forced to unit norm:
/// residual deformation adds raw components, so normalization happens
/// lazily at matrix-conversion time.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Result<Quat> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::Domain("cannot normalize zero-norm quaternion".into()));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Quat {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Rotation matrix of a (lazily normalized) quaternion. Columns are the
/// rotated local axes. `q` and `-q` produce the same matrix.
pub fn quat_to_rotmat(q: Quat) -> Result<Mat3> {
    let qn = q.normalized()?;
    let (w, x, y, z) = (qn.w, qn.x, qn.y, qn.z);
    Ok(Mat3::from_rows(
        Vec3::new(1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)),
        Vec3::new(2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)),
        Vec3::new(2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)),
    ))
}

/// Adjoint of `quat_to_rotmat`: grad w.r.t. the *raw* quaternion, i.e. the
/// internal normalization is part of the differentiated map.
pub fn quat_to_rotmat_backward(q: Quat, grad_r: &Mat3) -> Result<Quat> {
    let n = q.norm();
    if n < 1e-12 {
        return Err(Error::Domain("cannot normalize zero-norm quaternion".into()));
    }
    let qn = Quat::new(q.w / n, q.x / n, q.y / n, q.z / n);
    let (w, x, y, z) = (qn.w, qn.x, qn.y, qn.z);
    let g = grad_r;
    // dL/d(qn) from the polynomial entries of R.
    let gw = 2.0
        * (-z * g.at(0, 1) + y * g.at(0, 2) + z * g.at(1, 0) - x * g.at(1, 2) - y * g.at(2, 0)
            + x * g.at(2, 1));
    let gx = 2.0
        * (y * g.at(0, 1) + z * g.at(0, 2) + y * g.at(1, 0) - 2.0 * x * g.at(1, 1)
            - w * g.at(1, 2)
            + z * g.at(2, 0)
            + w * g.at(2, 1)
            - 2.0 * x * g.at(2, 2));
    let gy = 2.0
        * (-2.0 * y * g.at(0, 0) + x * g.at(0, 1) + w * g.at(0, 2) + x * g.at(1, 0)
            + z * g.at(1, 2)
            - w * g.at(2, 0)
            + z * g.at(2, 1)
            - 2.0 * y * g.at(2, 2));
    let gz = 2.0
        * (-2.0 * z * g.at(0, 0) - w * g.at(0, 1) + x * g.at(0, 2) + w * g.at(1, 0)
            - 2.0 * z * g.at(1, 1)
            + y * g.at(1, 2)
            + x * g.at(2, 0)
            + y * g.at(2, 1));
    let gqn = Quat::new(gw, gx, gy, gz);
    // Chain through qn = q / |q|.
    let proj = gqn.dot(qn);
    Ok(Quat::new(
        (gqn.w - qn.w * proj) / n,
        (gqn.x - qn.x * proj) / n,
        (gqn.y - qn.y * proj) / n,
        (gqn.z - qn.z * proj) / n,
    ))
}
