//! Dense image-plane support map.
//!
//! Each observed correspondence contributes its score `a`, spread by an
//! isotropic Gaussian kernel of width `sigma` around its projected pixel, to a
//! grid of `downsample × downsample` pixel cells. The kernel is truncated at
//! `3·sigma`. After all frames are accumulated the grid is divided by its
//! maximum, so evidence lies in `[0, 1]` and the best-supported cell is 1.
//!
//! Cell `(i, j)` is centred at pixel `((i + 0.5)·d, (j + 0.5)·d)`.

use std::io::ErrorKind;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::geometry::Pixel;
use crate::scene_sim::ResidualSample;

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8 + 1;

/// Kernel support radius in units of sigma.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SupportMapError {
    #[error("score scale tau must be positive, got {0}")]
    InvalidTau(f64),
    #[error("invalid support map parameters: {0}")]
    InvalidParams(String),
    #[error("score must be finite and non-negative, got {0}")]
    InvalidScore(f64),
    #[error("map is already normalized")]
    AlreadyNormalized,
    #[error("map is not normalized")]
    NotNormalized,
    #[error("support map holds no evidence (all cells are zero)")]
    AllZeroMap,
    #[error("maps differ in shape or parameters")]
    ShapeMismatch,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("file is not a support map (bad magic)")]
    BadMagic,
    #[error("unsupported support map version {0}")]
    VersionMismatch(u32),
    #[error("image export failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, SupportMapError>;

/// Converts a residual into a score in `(0, 1]`: `exp(-‖f‖² / 2τ²)`.
pub fn score_residual(f: &Vector2<f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SupportMapError::InvalidTau(tau));
    }
    Ok((-f.norm_squared() / (2.0 * tau * tau)).exp())
}

/// A score placed at an image location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub u: Pixel,
    pub a: f64,
}

impl ScoredSample {
    pub fn new(u: Pixel, a: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(SupportMapError::InvalidScore(a));
        }
        Ok(Self { u, a })
    }
}

/// Scores every residual of a frame with [`score_residual`].
pub fn score_frame<S: ResidualSample>(samples: &[S], tau: f64) -> Result<Vec<ScoredSample>> {
    samples
        .iter()
        .map(|s| ScoredSample::new(s.pixel(), score_residual(&s.residual(), tau)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupportMapParams {
    /// Kernel width in pixels.
    pub sigma: f64,
    /// Score scale in pixels.
    pub tau: f64,
    /// Pixels per cell side.
    pub downsample: u32,
}

impl Default for SupportMapParams {
    fn default() -> Self {
        Self {
            sigma: 8.0,
            tau: 2.0,
            downsample: 4,
        }
    }
}

impl SupportMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SupportMapError::InvalidTau(self.tau));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || self.downsample == 0 {
            return Err(SupportMapError::InvalidParams(format!(
                "sigma must be positive and downsample >= 1 (sigma={}, downsample={})",
                self.sigma, self.downsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMap {
    cells_x: usize,
    cells_y: usize,
    params: SupportMapParams,
    normalized: bool,
    /// Row-major, `cells_x` values per row.
    grid: Vec<f64>,
}

impl SupportMap {
    /// Empty (all-zero, unnormalized) map covering a `width × height` image.
    pub fn new(width: u32, height: u32, params: SupportMapParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(SupportMapError::InvalidParams(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        let d = params.downsample;
        let cells_x = width.div_ceil(d) as usize;
        let cells_y = height.div_ceil(d) as usize;
        Ok(Self {
            cells_x,
            cells_y,
            params,
            normalized: false,
            grid: vec![0.0; cells_x * cells_y],
        })
    }

    pub fn cells_x(&self) -> usize {
        self.cells_x
    }

    pub fn cells_y(&self) -> usize {
        self.cells_y
    }

    pub fn params(&self) -> &SupportMapParams {
        &self.params
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn cells(&self) -> &[f64] {
        &self.grid
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.grid[j * self.cells_x + i]
    }

    pub fn max_value(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Pixel {
        let d = self.params.downsample as f64;
        Pixel::new((i as f64 + 0.5) * d, (j as f64 + 0.5) * d)
    }

    /// Inclusive cell index range whose centres lie within `radius` of `x` along one axis.
    fn cell_span(&self, x: f64, radius: f64, n: usize) -> Option<(usize, usize)> {
        let d = self.params.downsample as f64;
        let lo = ((x - radius) / d - 0.5).ceil().max(0.0);
        let hi = ((x + radius) / d - 0.5).floor().min(n as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Adds one frame of scored samples.
    pub fn accumulate(&mut self, samples: &[ScoredSample]) -> Result<()> {
        if self.normalized {
            return Err(SupportMapError::AlreadyNormalized);
        }
        let sigma = self.params.sigma;
        let radius = TRUNCATION_SIGMAS * sigma;
        let radius_sq = radius * radius;
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        for s in samples {
            if !(s.a >= 0.0 && s.a.is_finite()) {
                return Err(SupportMapError::InvalidScore(s.a));
            }
            if s.a == 0.0 || !s.u.u.is_finite() || !s.u.v.is_finite() {
                continue;
            }
            let (Some((i0, i1)), Some((j0, j1))) = (
                self.cell_span(s.u.u, radius, self.cells_x),
                self.cell_span(s.u.v, radius, self.cells_y),
            ) else {
                continue;
            };
            for j in j0..=j1 {
                let dy = self.cell_center(0, j).v - s.u.v;
                for i in i0..=i1 {
                    let dx = self.cell_center(i, 0).u - s.u.u;
                    let r2 = dx * dx + dy * dy;
                    if r2 <= radius_sq {
                        self.grid[j * self.cells_x + i] += s.a * (-r2 * inv_two_var).exp();
                    }
                }
            }
        }
        Ok(())
    }

    /// Divides by the global maximum. A no-op on an already normalized map.
    pub fn normalize(&mut self) -> Result<()> {
        if self.normalized {
            return Ok(());
        }
        let max = self.max_value();
        if max <= 0.0 {
            return Err(SupportMapError::AllZeroMap);
        }
        for c in &mut self.grid {
            *c /= max;
        }
        self.normalized = true;
        Ok(())
    }

    /// Bilinear interpolation between cell centres; clamps to the border outside the grid.
    pub fn lookup(&self, u: &Pixel) -> Result<f64> {
        if !self.normalized {
            return Err(SupportMapError::NotNormalized);
        }
        let d = self.params.downsample as f64;
        let axis = |x: f64, n: usize| {
            let g = (x / d - 0.5).clamp(0.0, (n - 1) as f64);
            let g = if g.is_nan() { 0.0 } else { g };
            let i0 = g.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, g - i0 as f64)
        };
        let (i0, i1, fx) = axis(u.u, self.cells_x);
        let (j0, j1, fy) = axis(u.v, self.cells_y);
        let top = self.value(i0, j0) * (1.0 - fx) + self.value(i1, j0) * fx;
        let bottom = self.value(i0, j1) * (1.0 - fx) + self.value(i1, j1) * fx;
        Ok(top * (1.0 - fy) + bottom * fy)
    }

    /// Cell-wise sum of two unnormalized maps with identical shape and parameters.
    pub fn merge(&self, other: &SupportMap) -> Result<SupportMap> {
        if self.normalized || other.normalized {
            return Err(SupportMapError::AlreadyNormalized);
        }
        let same_params = self.params.sigma.to_bits() == other.params.sigma.to_bits()
            && self.params.tau.to_bits() == other.params.tau.to_bits()
            && self.params.downsample == other.params.downsample;
        if self.cells_x != other.cells_x || self.cells_y != other.cells_y || !same_params {
            return Err(SupportMapError::ShapeMismatch);
        }
        let mut out = self.clone();
        for (a, b) in out.grid.iter_mut().zip(&other.grid) {
            *a += b;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.grid.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.cells_x as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cells_y as u32).to_le_bytes());
        buf.extend_from_slice(&self.params.downsample.to_le_bytes());
        buf.extend_from_slice(&self.params.sigma.to_le_bytes());
        buf.extend_from_slice(&self.params.tau.to_le_bytes());
        buf.push(self.normalized as u8);
        for v in &self.grid {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || SupportMapError::IoFailure(std::io::Error::new(ErrorKind::UnexpectedEof, "truncated support map"));
        let invalid = |what: &str| SupportMapError::IoFailure(std::io::Error::new(ErrorKind::InvalidData, what.to_string()));
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(SupportMapError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(SupportMapError::VersionMismatch(version));
        }
        let cells_x = u32_at(8) as usize;
        let cells_y = u32_at(12) as usize;
        let params = SupportMapParams {
            downsample: u32_at(16),
            sigma: f64_at(20),
            tau: f64_at(28),
        };
        let normalized = match bytes[36] {
            0 => false,
            1 => true,
            _ => return Err(invalid("normalized flag must be 0 or 1")),
        };
        params.validate().map_err(|_| invalid("invalid map parameters"))?;
        if cells_x == 0 || cells_y == 0 {
            return Err(invalid("empty grid"));
        }
        let n = cells_x.checked_mul(cells_y).ok_or_else(|| invalid("grid too large"))?;
        let expected = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| invalid("grid too large"))?;
        if bytes.len() < expected {
            return Err(truncated());
        }
        if bytes.len() > expected {
            return Err(invalid("trailing bytes after grid"));
        }
        let grid: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("cells must be finite and non-negative"));
        }
        Ok(Self {
            cells_x,
            cells_y,
            params,
            normalized,
            grid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// One 8-bit pixel per cell, `round(255·value)`.
    pub fn to_grayscale(&self) -> Result<image::GrayImage> {
        if !self.normalized {
            return Err(SupportMapError::NotNormalized);
        }
        let pixels = self
            .grid
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(image::GrayImage::from_raw(self.cells_x as u32, self.cells_y as u32, pixels)
            .expect("grid size matches image size"))
    }

    /// Writes the grayscale visualization as PNG.
    pub fn export_grayscale(&self, path: &Path) -> Result<()> {
        let img = self.to_grayscale()?;
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        write_atomic(path, buf.get_ref())?;
        Ok(())
    }
}

/// Accumulates several frames of residuals into one unnormalized map.
pub fn build_from_frames<S: ResidualSample>(
    frames: &[Vec<S>],
    width: u32,
    height: u32,
    params: SupportMapParams,
) -> Result<SupportMap> {
    let mut map = SupportMap::new(width, height, params)?;
    for frame in frames {
        map.accumulate(&score_frame(frame, params.tau)?)?;
    }
    Ok(map)
}
