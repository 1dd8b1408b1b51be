//! Heatmap export: binary PPM through a fixed 256-entry colormap plus a CSV twin.

use std::io::Write;
use std::path::Path;

/// Anchor colours of a viridis-like ramp, evenly spaced on [0,1].
const ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Colour drawn for cells without a value (inside a structure).
pub const MISSING: [u8; 3] = [0, 0, 0];

pub fn colormap() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let segs = (ANCHORS.len() - 1) as f64;
    for (i, c) in lut.iter_mut().enumerate() {
        let t = i as f64 / 255.0 * segs;
        let k = (t.floor() as usize).min(ANCHORS.len() - 2);
        let f = t - k as f64;
        for ch in 0..3 {
            let (a, b) = (ANCHORS[k][ch] as f64, ANCHORS[k + 1][ch] as f64);
            c[ch] = (a + (b - a) * f).round() as u8;
        }
    }
    lut
}

/// Index into the colormap for a value in [0,1]; out-of-range values clamp.
pub fn level(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Row-major `w×h` values; `NaN` marks missing cells.
pub fn ppm_bytes(values: &[f64], w: usize, h: usize) -> Vec<u8> {
    let lut = colormap();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for &v in &values[..w * h] {
        let c = if v.is_nan() { MISSING } else { lut[level(v)] };
        out.extend_from_slice(&c);
    }
    out
}

pub fn csv_text(values: &[f64], w: usize) -> String {
    let mut s = String::new();
    for row in values.chunks(w) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| if v.is_nan() { "nan".to_string() } else { format!("{v:.6}") })
            .collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_slice(dir: &Path, stem: &str, values: &[f64], w: usize, h: usize) -> std::io::Result<()> {
    std::fs::File::create(dir.join(format!("{stem}.ppm")))?.write_all(&ppm_bytes(values, w, h))?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv_text(values, w))
}
