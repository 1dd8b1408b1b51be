//! Static per-scene map modalities as dense row-major grids.

use cf3d_radio::{GroundMeasurementGrid, Scenario};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneViews {
    pub w: usize,
    pub h: usize,
    /// Normalized near-ground RSS, 0 on building cells.
    pub ground: Vec<f64>,
    /// Building footprint indicator.
    pub footprint: Vec<f64>,
    /// Building heights in metres.
    pub height: Vec<f64>,
}

impl SceneViews {
    pub fn new(scn: &Scenario, grid: &GroundMeasurementGrid) -> Result<Self> {
        if grid.grid_w != scn.grid_w || grid.grid_h != scn.grid_h {
            return Err(CoreError::Usage(format!(
                "ground grid {}x{} does not match scenario {}x{}",
                grid.grid_w, grid.grid_h, scn.grid_w, scn.grid_h
            )));
        }
        Ok(Self {
            w: scn.grid_w,
            h: scn.grid_h,
            ground: grid.values.iter().map(|&v| v as f64).collect(),
            footprint: scn.e_h.iter().map(|&v| v as f64).collect(),
            height: scn.e_v.iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.w, self.h)
    }

    /// The eight symmetries of the square applied to every map. Requires `w == h`.
    pub fn dihedral(&self, k: usize) -> SceneViews {
        let n = self.w;
        let map = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for r in 0..n {
                for c in 0..n {
                    let (mut rr, mut cc) = (r, c);
                    for _ in 0..k % 4 {
                        (rr, cc) = (cc, n - 1 - rr);
                    }
                    if k >= 4 {
                        cc = n - 1 - cc;
                    }
                    out[rr * n + cc] = v[r * n + c];
                }
            }
            out
        };
        SceneViews {
            w: self.w,
            h: self.h,
            ground: map(&self.ground),
            footprint: map(&self.footprint),
            height: map(&self.height),
        }
    }
}
