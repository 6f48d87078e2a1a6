//! Image containers and RGB-D frames.

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeError {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect()
    }
}

/// Row-major depth in meters; 0 marks an invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeError {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Depth at continuous pixel coordinates (pixel centers at `i + 0.5`).
    ///
    /// Inverse depth is interpolated bilinearly between the surrounding pixel
    /// centers, which is exact on planar surfaces. Falls back to the nearest
    /// pixel when a neighbour with non-zero weight is invalid or the
    /// neighbourhood straddles a depth discontinuity.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64) {
            return None;
        }
        let nearest = {
            let d = self.get(u as usize, v as usize);
            (d > 0.0 && d.is_finite()).then_some(d)
        };
        let x = u - 0.5;
        let y = v - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut inv = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            if w == 0.0 {
                continue;
            }
            let xi = x0 as i64 + dx;
            let yi = y0 as i64 + dy;
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                return nearest;
            }
            let d = self.get(xi as usize, yi as usize);
            if !(d > 0.0 && d.is_finite()) {
                return nearest;
            }
            lo = lo.min(d);
            hi = hi.max(d);
            inv += w / d;
        }
        if hi > lo * 1.05 || !(inv > 0.0) {
            return nearest;
        }
        Some(1.0 / inv)
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: usize,
    pub timestamp: f64,
    pub color: ColorImage,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn new(
        id: usize,
        timestamp: f64,
        color: ColorImage,
        depth: DepthImage,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        let frame = Self {
            id,
            timestamp,
            color,
            depth,
            intrinsics,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        k.validate()?;
        for dims in [self.color.dims(), self.depth.dims()] {
            if dims != (k.width, k.height) {
                return Err(Error::ShapeError {
                    expected: (k.width, k.height),
                    got: dims,
                });
            }
        }
        if self.depth.data.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::invalid("depth must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}
