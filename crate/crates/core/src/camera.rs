//! Pinhole camera, grayscale images and their half-resolution pyramids.

use nalgebra::{Matrix2x3, Matrix3, Point3, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::longterm::{PatchPyramid, PATCH_AREA, PATCH_SIZE, PYRAMID_LEVELS};
use crate::pose::Pose;

/// Closest depth accepted by [`CameraModel::project`].
pub const MIN_DEPTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Extrinsic: maps IMU-frame points into the camera frame.
    pub cam_from_imu: Pose,
}

/// Camera looking along body +x with image rows pointing down body −z.
pub fn forward_looking_extrinsic() -> Pose {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    Pose::new(Rotation3::from_matrix_unchecked(r), Vector3::zeros())
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 180.0,
            fy: 180.0,
            cx: 119.5,
            cy: 89.5,
            width: 240,
            height: 180,
            cam_from_imu: forward_looking_extrinsic(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid camera model {self:?}")))
        }
    }

    /// World-from-camera pose for a world-from-IMU pose.
    pub fn camera_pose(&self, imu_pose: &Pose) -> Pose {
        imu_pose.compose(&self.cam_from_imu.inverse())
    }

    #[inline]
    pub fn project(&self, pc: &Point3<f64>) -> Option<Vector2<f64>> {
        if pc.z < MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }

    /// `∂π/∂ρ` at a camera-frame point.
    #[inline]
    pub fn projection_jacobian(&self, pc: &Point3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz, 0.0, -self.fx * pc.x * iz2,
            0.0, self.fy * iz, -self.fy * pc.y * iz2,
        )
    }

    /// Unit-depth ray through a pixel.
    pub fn unproject(&self, uv: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy, 1.0)
    }

    pub fn in_image(&self, uv: &Vector2<f64>, margin: f64) -> bool {
        uv.x >= margin
            && uv.y >= margin
            && uv.x <= self.width as f64 - 1.0 - margin
            && uv.y <= self.height as f64 - 1.0 - margin
    }
}

/// Row-major grayscale image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub timestamp: f64,
}

impl Image {
    pub fn new(width: usize, height: usize, timestamp: f64) -> Self {
        Self { width, height, data: vec![0.0; width * height], timestamp }
    }

    pub fn from_fn(width: usize, height: usize, timestamp: f64, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data, timestamp }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Bilinear sample and its exact gradient; `None` outside the interior.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> Option<(f64, Vector2<f64>)> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (u0, v0) = (u.floor(), v.floor());
        let (iu, iv) = (u0 as usize, v0 as usize);
        if iu + 1 >= self.width || iv + 1 >= self.height {
            // Exactly on the last row/column is still inside.
            if (iu + 1 == self.width && u == u0) || (iv + 1 == self.height && v == v0) {
                let iu = iu.min(self.width - 2);
                let iv = iv.min(self.height - 2);
                return Some(self.bilinear(iu, iv, u - iu as f64, v - iv as f64));
            }
            return None;
        }
        Some(self.bilinear(iu, iv, u - u0, v - v0))
    }

    #[inline]
    fn bilinear(&self, iu: usize, iv: usize, a: f64, b: f64) -> (f64, Vector2<f64>) {
        let i = iv * self.width + iu;
        let (p00, p10) = (self.data[i], self.data[i + 1]);
        let (p01, p11) = (self.data[i + self.width], self.data[i + self.width + 1]);
        let top = p00 + a * (p10 - p00);
        let bot = p01 + a * (p11 - p01);
        let value = top + b * (bot - top);
        let du = (1.0 - b) * (p10 - p00) + b * (p11 - p01);
        let dv = bot - top;
        (value, Vector2::new(du, dv))
    }

    /// 2×2 box-filtered half-resolution image.
    pub fn half(&self) -> Image {
        let (w, h) = (self.width / 2, self.height / 2);
        Image::from_fn(w, h, self.timestamp, |u, v| {
            0.25 * (self.at(2 * u, 2 * v)
                + self.at(2 * u + 1, 2 * v)
                + self.at(2 * u, 2 * v + 1)
                + self.at(2 * u + 1, 2 * v + 1))
        })
    }

    /// Central-difference gradient magnitude at an integer pixel.
    pub fn gradient_magnitude(&self, u: usize, v: usize) -> f64 {
        if u == 0 || v == 0 || u + 1 >= self.width || v + 1 >= self.height {
            return 0.0;
        }
        let gx = 0.5 * (self.at(u + 1, v) - self.at(u - 1, v));
        let gy = 0.5 * (self.at(u, v + 1) - self.at(u, v - 1));
        gx.hypot(gy)
    }
}

/// Margin (in pixels of the level) kept around a patch: half a patch plus two.
pub const PATCH_MARGIN: f64 = PATCH_SIZE as f64 / 2.0 + 2.0;

/// Three-level image pyramid; level `l` has `1/2^l` resolution.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: [Image; PYRAMID_LEVELS],
}

impl ImagePyramid {
    pub fn new(image: &Image) -> Self {
        let l1 = image.half();
        let l2 = l1.half();
        Self { levels: [image.clone(), l1, l2] }
    }

    pub fn level(&self, l: usize) -> &Image {
        &self.levels[l]
    }

    pub fn timestamp(&self) -> f64 {
        self.levels[0].timestamp
    }

    /// Maps a level-0 pixel coordinate to level `l`.
    #[inline]
    pub fn to_level(uv: &Vector2<f64>, l: usize) -> Vector2<f64> {
        let s = (1usize << l) as f64;
        Vector2::new((uv.x + 0.5) / s - 0.5, (uv.y + 0.5) / s - 0.5)
    }

    /// True when a patch centred at `uv` fits at every level.
    pub fn patch_fits(&self, uv: &Vector2<f64>) -> bool {
        (0..PYRAMID_LEVELS).all(|l| {
            let p = Self::to_level(uv, l);
            let img = &self.levels[l];
            p.x >= PATCH_MARGIN
                && p.y >= PATCH_MARGIN
                && p.x <= img.width as f64 - 1.0 - PATCH_MARGIN
                && p.y <= img.height as f64 - 1.0 - PATCH_MARGIN
        })
    }

    /// Sample offsets of patch entry `k` in level pixels.
    #[inline]
    pub fn patch_offset(k: usize) -> Vector2<f64> {
        let half = PATCH_SIZE as f64 / 2.0 - 0.5;
        Vector2::new((k % PATCH_SIZE) as f64 - half, (k / PATCH_SIZE) as f64 - half)
    }

    /// Extracts the three-level patch pyramid centred at level-0 pixel `uv`.
    pub fn extract_patch_pyramid(&self, uv: &Vector2<f64>) -> Result<PatchPyramid> {
        if !self.patch_fits(uv) {
            return Err(Error::PatchOutOfBounds { u: uv.x, v: uv.y });
        }
        let mut out = [[0.0; PATCH_AREA]; PYRAMID_LEVELS];
        for (l, patch) in out.iter_mut().enumerate() {
            let c = Self::to_level(uv, l);
            let img = &self.levels[l];
            for (k, slot) in patch.iter_mut().enumerate() {
                let p = c + Self::patch_offset(k);
                *slot = img.sample(p.x, p.y).expect("inside by margin").0;
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper building the pyramid on the fly.
pub fn extract_patch_pyramid(image: &Image, uv: &Vector2<f64>) -> Result<PatchPyramid> {
    ImagePyramid::new(image).extract_patch_pyramid(uv)
}
