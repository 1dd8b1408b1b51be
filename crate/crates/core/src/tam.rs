//! Terminal attention: Gaussian masks centred on the LAV's horizontal projection.

use cf3d_autodiff::Tensor;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TamMasks {
    pub m_g: Tensor,
    pub m_e: Tensor,
    pub sigma: f64,
}

/// Centre of the grid cell containing `xy`, clamped to the grid.
pub fn cell_centre(xy: [f64; 2], w: usize, h: usize) -> [f64; 2] {
    let col = (xy[0].floor().max(0.0) as usize).min(w - 1);
    let row = (xy[1].floor().max(0.0) as usize).min(h - 1);
    [col as f64 + 0.5, row as f64 + 0.5]
}

/// Row-major `h×w` mask values. The cell holding the projection gets exactly 1.
pub fn tam_values(xy: [f64; 2], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let c = cell_centre(xy, w, h);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        let dy = row as f64 + 0.5 - c[1];
        for col in 0..w {
            let dx = col as f64 + 0.5 - c[0];
            out.push((-(dx * dx + dy * dy) * inv).exp());
        }
    }
    out
}

pub fn tam_masks(xy: [f64; 2], w: usize, h: usize, sigma: f64) -> Result<TamMasks> {
    if !(sigma > 0.0) || w == 0 || h == 0 {
        return Err(CoreError::Config(format!("TAM needs sigma > 0 and a non-empty grid, got {sigma}")));
    }
    let m = Tensor::new(&[h, w, 1], tam_values(xy, w, h, sigma))?;
    Ok(TamMasks {
        m_g: m.clone(),
        m_e: m,
        sigma,
    })
}
