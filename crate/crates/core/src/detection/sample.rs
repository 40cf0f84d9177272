use nalgebra::DMatrix;

use super::{Keypoint, Raster};
use crate::descriptor::{l2_normalize_rows, DescriptorSet};
use crate::error::{Error, Result};

/// What to do with keypoints whose scaled position falls outside the map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BorderMode {
    #[default]
    Error,
    Clamp,
}

/// Samples a `C`-channel description map at keypoint locations.
///
/// Keypoints are in full-resolution pixels; the map is downscaled by
/// `scale`. Cell `i` of the map holds the value at continuous coordinate `i`
/// (no half-pixel offset), so a keypoint maps to `(x / scale, y / scale)`.
/// Each sampled vector is L2-normalized.
pub fn bilinear_sample(
    desc_map: &[Raster],
    kps: &[Keypoint],
    scale: usize,
    border: BorderMode,
) -> Result<DescriptorSet> {
    if !matches!(scale, 1 | 2 | 4) {
        return Err(Error::InvalidConfig(format!("scale must be 1, 2 or 4, got {scale}")));
    }
    let Some(first) = desc_map.first() else {
        return Err(Error::BadDimension("description map has no channels".into()));
    };
    let (h, w) = first.shape();
    if let Some(bad) = desc_map.iter().find(|c| c.shape() != (h, w)) {
        return Err(Error::ShapeMismatch {
            left: (h, w),
            right: bad.shape(),
        });
    }
    if kps.is_empty() {
        return Err(Error::BadDimension("no keypoints to sample".into()));
    }

    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;
    let mut out = DMatrix::zeros(kps.len(), desc_map.len());
    for (index, k) in kps.iter().enumerate() {
        let mut u = k.x / scale as f64;
        let mut v = k.y / scale as f64;
        let inside = (0.0..=max_u).contains(&u) && (0.0..=max_v).contains(&v);
        if !inside {
            match border {
                BorderMode::Error => return Err(Error::OutOfBounds { index }),
                BorderMode::Clamp if u.is_finite() && v.is_finite() => {
                    u = u.clamp(0.0, max_u);
                    v = v.clamp(0.0, max_v);
                }
                BorderMode::Clamp => return Err(Error::OutOfBounds { index }),
            }
        }
        let x0 = (u.floor() as usize).min(w - 1);
        let y0 = (v.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        for (c, channel) in desc_map.iter().enumerate() {
            let top = channel.get(y0, x0) * (1.0 - fx) + channel.get(y0, x1) * fx;
            let bottom = channel.get(y1, x0) * (1.0 - fx) + channel.get(y1, x1) * fx;
            out[(index, c)] = top * (1.0 - fy) + bottom * fy;
        }
    }
    l2_normalize_rows(&out)
}
