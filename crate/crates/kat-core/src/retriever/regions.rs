use serde::{Deserialize, Serialize};

/// A square (or full-image) crop in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub region_id: String,
}

/// Sliding-window parameters, as fractions of the image's shorter side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_fraction: f64,
    pub stride_fraction: f64,
    pub include_full: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_fraction: 0.5, stride_fraction: 0.5, include_full: true }
    }
}

/// Start offsets along one axis: multiples of `stride`, plus one final
/// position flush with the far edge when the grid does not reach it.
fn axis_positions(len: u32, side: u32, stride: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut p = 0u32;
    while p + side <= len {
        out.push(p);
        p += stride;
    }
    let last = len - side;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Generates sliding-window regions in row-major order. When `include_full`
/// is set and the grid does not already cover the whole image with a single
/// window, the full image is appended as the last region.
pub fn generate_regions(image_id: &str, width: u32, height: u32, cfg: &WindowConfig) -> Vec<RegionSpec> {
    assert!(width >= 1 && height >= 1, "image must be at least 1x1");
    assert!(
        cfg.window_fraction > 0.0 && cfg.window_fraction <= 1.0 && cfg.stride_fraction > 0.0 && cfg.stride_fraction <= 1.0,
        "window and stride fractions must lie in (0, 1]"
    );
    let short = width.min(height);
    let side = ((cfg.window_fraction * short as f64).floor() as u32).max(1);
    let stride = ((cfg.stride_fraction * side as f64).floor() as u32).max(1);
    let xs = axis_positions(width, side, stride);
    let ys = axis_positions(height, side, stride);

    let mut rects: Vec<(u32, u32, u32, u32)> = Vec::with_capacity(xs.len() * ys.len() + 1);
    for &y in &ys {
        for &x in &xs {
            rects.push((x, y, side, side));
        }
    }
    let full = (0, 0, width, height);
    if cfg.include_full && !rects.contains(&full) {
        rects.push(full);
    }
    rects
        .into_iter()
        .enumerate()
        .map(|(i, (x, y, w, h))| RegionSpec { x, y, w, h, region_id: format!("{image_id}#r{i}") })
        .collect()
}
