use std::collections::HashMap;

use super::{check_bounds, BinaryHeatmap, Keypoint, KeypointList, Raster};
use crate::error::Result;

/// Indices of `kps` ordered by descending score; equal scores keep input
/// order.
fn score_order(kps: &[Keypoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..kps.len()).collect();
    order.sort_by(|&a, &b| kps[b].score.total_cmp(&kps[a].score));
    order
}

/// Greedy non-maximum suppression with a square (Chebyshev) window.
///
/// Points are visited in descending score order and kept when no already
/// kept point lies within `radius` on both axes. Output is score-descending.
pub fn nms(kps: &[Keypoint], radius: f64) -> KeypointList {
    let cell = radius.max(1.0);
    let key = |k: &Keypoint| ((k.x / cell).floor() as i64, (k.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();

    for idx in score_order(kps) {
        let p = kps[idx];
        let (cx, cy) = key(&p);
        let suppressed = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|bucket| {
                    bucket.iter().any(|&j| {
                        let q: &Keypoint = &kept[j];
                        (p.x - q.x).abs().max((p.y - q.y).abs()) <= radius
                    })
                })
            })
        });
        if !suppressed {
            grid.entry((cx, cy)).or_default().push(kept.len());
            kept.push(p);
        }
    }
    kept
}

/// Maps keypoints detected on a horizontally flipped image back to the
/// original orientation: `x -> width - 1 - x`.
pub fn unflip(kps: &[Keypoint], width: usize) -> KeypointList {
    let w = width as f64;
    kps.iter()
        .map(|k| Keypoint::new(w - 1.0 - k.x, k.y, k.score))
        .collect()
}

/// Marks the rounded location of every keypoint.
pub fn rasterize(kps: &[Keypoint], width: usize, height: usize) -> Result<BinaryHeatmap> {
    let mut map = BinaryHeatmap::zeros(height, width)?;
    for k in kps {
        let x = (k.x.round().max(0.0) as usize).min(width - 1);
        let y = (k.y.round().max(0.0) as usize).min(height - 1);
        map.set(y, x);
    }
    Ok(map)
}

/// Builds a keypoint cache from detections on an image (`primary`) and on its
/// horizontal mirror (`flipped`): un-flip, concatenate, suppress, rasterize.
///
/// Out-of-bounds points are reported by their index in the concatenated
/// list (`primary` first).
pub fn merge_flip_cache(
    primary: &[Keypoint],
    flipped: &[Keypoint],
    width: usize,
    height: usize,
    radius: f64,
) -> Result<(KeypointList, BinaryHeatmap)> {
    check_bounds(primary, width, height)?;
    let restored = unflip(flipped, width);
    check_bounds(&restored, width, height).map_err(|e| match e {
        crate::Error::OutOfBounds { index } => crate::Error::OutOfBounds {
            index: index + primary.len(),
        },
        other => other,
    })?;

    let mut combined = Vec::with_capacity(primary.len() + restored.len());
    combined.extend_from_slice(primary);
    combined.extend(restored);
    let kept = nms(&combined, radius);
    let heatmap = rasterize(&kept, width, height)?;
    Ok((kept, heatmap))
}

/// Inference-time extraction: strict local maxima in a
/// `(2 * nms_size + 1)^2` window scoring above `threshold`, best first,
/// truncated to `top_k`.
pub fn extract_keypoints(score_map: &Raster, threshold: f64, nms_size: usize, top_k: usize) -> KeypointList {
    let (h, w) = score_map.shape();
    let mut found = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = score_map.get(y, x);
            if !(v > threshold) {
                continue;
            }
            let is_max = (y.saturating_sub(nms_size)..=(y + nms_size).min(h - 1)).all(|yy| {
                (x.saturating_sub(nms_size)..=(x + nms_size).min(w - 1))
                    .all(|xx| (yy, xx) == (y, x) || score_map.get(yy, xx) < v)
            });
            if is_max {
                found.push(Keypoint::new(x as f64, y as f64, v));
            }
        }
    }
    let mut out: KeypointList = score_order(&found).into_iter().map(|i| found[i]).collect();
    out.truncate(top_k);
    out
}
