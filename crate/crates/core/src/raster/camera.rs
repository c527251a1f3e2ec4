use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const DEFAULT_NEAR: f64 = 0.01;

/// Pinhole camera; `rotation`/`translation` map world to camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// JSON form used by camera manifests: rotation stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`; image y points along -`up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
            near: DEFAULT_NEAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "image size must be non-zero"));
        }
        let r = &self.rotation;
        if (r.transpose() * r - Mat3::identity()).abs().max() > 1e-6 {
            return Err(Error::invalid("camera", "rotation is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera", "rotation determinant is not +1"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_record(&self) -> CameraRecord {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = self.rotation[(i, j)];
            }
        }
        CameraRecord {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            r,
            t: [self.translation.x, self.translation.y, self.translation.z],
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self> {
        let cam = Self {
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            rotation: Mat3::from_row_slice(&rec.r),
            translation: Vec3::from_column_slice(&rec.t),
            width: rec.width,
            height: rec.height,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Rounds every field to f32 precision, the precision of the manifest.
    pub fn snapped_to_f32(&self) -> Self {
        let s = |x: f64| x as f32 as f64;
        Self {
            fx: s(self.fx),
            fy: s(self.fy),
            cx: s(self.cx),
            cy: s(self.cy),
            rotation: self.rotation.map(s),
            translation: self.translation.map(s),
            ..self.clone()
        }
    }
}
