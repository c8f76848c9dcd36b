//! En-face projection of the RPE band and vessel-shadow segmentation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::components::{dilate_square, remove_small_2d};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Boundary, BoundarySet, EnFaceImage, OctVolume, PixelMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    /// Background box size as (slices, columns); both odd and >= 3.
    pub background_window: (usize, usize),
    pub contrast_threshold: f64,
    pub min_component_px: usize,
    /// Chebyshev dilation applied to the final mask.
    pub dilation_radius: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            background_window: (9, 15),
            contrast_threshold: 0.15,
            min_component_px: 10,
            dilation_radius: 0,
        }
    }
}

impl ShadowConfig {
    pub fn validate(&self) -> Result<()> {
        let (ws, wx) = self.background_window;
        for w in [ws, wx] {
            if w < 3 || w % 2 == 0 {
                return Err(Error::Config(format!(
                    "background window {w} must be odd and >= 3"
                )));
            }
        }
        // contrast never exceeds 1, so thresholds >= 1 are legal and select nothing
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "contrast threshold {} must be positive",
                self.contrast_threshold
            )));
        }
        if self.min_component_px < 1 {
            return Err(Error::Config("min_component_px must be positive".into()));
        }
        Ok(())
    }
}

/// Mean intensity of the voxelized RPE band `ceil(RPE_UPPER)..=floor(BM)`
/// per (slice, column); an empty band falls back to the voxel at
/// `round(RPE_UPPER)`.
pub fn project_rpe(v: &OctVolume, b: &BoundarySet) -> Result<EnFaceImage> {
    let dims = v.dims();
    b.check_dims(dims)?;
    let data = v.data();
    let last = dims.height - 1;
    let img = Array2::from_shape_fn((dims.n_slices, dims.width), |(s, x)| {
        let top = b.depth(Boundary::RpeUpper, s, x);
        let lo = top.ceil() as usize;
        let hi = b.depth(Boundary::Bm, s, x).floor() as usize;
        if lo <= hi && lo <= last {
            let hi = hi.min(last);
            let sum: f64 = (lo..=hi).map(|z| data[[s, z, x]] as f64).sum();
            (sum / (hi - lo + 1) as f64) as f32
        } else {
            data[[s, (top.round() as usize).min(last), x]]
        }
    });
    EnFaceImage::new(img)
}

/// Box mean over a `(ws, wx)` window, replicating edge pixels.
pub fn box_mean(img: &Array2<f32>, window: (usize, usize)) -> Array2<f64> {
    let (h, w) = img.dim();
    let (rs, rx) = (window.0 / 2, window.1 / 2);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let sum: f64 = (-(rx as isize)..=rx as isize)
                .map(|o| img[[i, clamp(j as isize + o, w)]] as f64)
                .sum();
            rows[[i, j]] = sum / window.1 as f64;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let sum: f64 = (-(rs as isize)..=rs as isize)
                .map(|o| rows[[clamp(i as isize + o, h), j]])
                .sum();
            out[[i, j]] = sum / window.0 as f64;
        }
    }
    out
}

/// Normalized darkness relative to the local background,
/// `max(0, (B - e) / max(B, 1e-6))`.
pub fn shadow_contrast(e: &EnFaceImage, window: (usize, usize)) -> Array2<f64> {
    let bg = box_mean(e.data(), window);
    let mut c = bg.clone();
    ndarray::Zip::from(&mut c)
        .and(&bg)
        .and(e.data())
        .for_each(|c, &b, &v| *c = ((b - v as f64) / b.max(1e-6)).max(0.0));
    c
}

/// Thresholds the shadow contrast, removes small 8-connected components and
/// optionally dilates. Returns the mask and the contrast map.
pub fn segment_shadows(e: &EnFaceImage, cfg: &ShadowConfig) -> Result<(PixelMask, Array2<f64>)> {
    cfg.validate()?;
    let c = shadow_contrast(e, cfg.background_window);
    let raw = c.mapv(|v| v > cfg.contrast_threshold);
    let (cleaned, _) = remove_small_2d(&raw, cfg.min_component_px);
    let mask = dilate_square(&cleaned, cfg.dilation_radius);
    Ok((PixelMask::new(mask), c))
}

/// Loads an externally computed shadow mask.
pub fn import_shadow_mask(path: &std::path::Path) -> Result<PixelMask> {
    io::read_pixel_mask(path)
}
