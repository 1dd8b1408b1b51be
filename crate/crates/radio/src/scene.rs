//! Synthetic urban scenes: a footprint map, a per-cell height map and one base station.

use cf3d_autodiff::RngState;
use serde::{Deserialize, Serialize};

use crate::error::{RadioError, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const MAX_HEIGHT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub x: f64,
    pub y: f64,
    pub mast_height: f64,
    pub n_bs: usize,
    pub spacing_over_lambda: f64,
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
}

impl BsConfig {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            mast_height: 25.0,
            n_bs: 64,
            spacing_over_lambda: 0.5,
            carrier_hz: 3.5e9,
            tx_power_dbm: 23.0,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.mast_height]
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn tx_power_w(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0) / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bs == 0 || self.spacing_over_lambda <= 0.0 || self.carrier_hz <= 0.0 {
            return Err(RadioError::Config(format!("invalid base station {:?}", self)));
        }
        Ok(())
    }
}

/// Axis-aligned block covering cells `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Building {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major footprint, 1 where a structure stands.
    pub e_h: Vec<u8>,
    /// Row-major structure heights in meters.
    pub e_v: Vec<f32>,
    pub bs: BsConfig,
    pub seed: u64,
    buildings: Vec<Building>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub grid_w: usize,
    pub grid_h: usize,
    pub density: f64,
    pub height_range: (f64, f64),
    pub side_range: (usize, usize),
    pub street_gap: usize,
    pub max_attempts: usize,
}

impl SceneConfig {
    pub fn new(seed: u64, size: usize, density: f64) -> Self {
        Self {
            seed,
            grid_w: size,
            grid_h: size,
            density,
            height_range: (10.0, 50.0),
            side_range: (6, 20),
            street_gap: 2,
            max_attempts: 200_000,
        }
    }
}

impl Scenario {
    /// Builds a scenario from raw maps, checking the map invariants.
    pub fn from_maps(
        grid_w: usize,
        grid_h: usize,
        e_h: Vec<u8>,
        e_v: Vec<f32>,
        bs: BsConfig,
        seed: u64,
    ) -> Result<Self> {
        let n = grid_w * grid_h;
        if e_h.len() != n || e_v.len() != n {
            return Err(RadioError::Format(format!(
                "map sizes {} / {} do not match {}x{}",
                e_h.len(),
                e_v.len(),
                grid_w,
                grid_h
            )));
        }
        for (i, (&f, &h)) in e_h.iter().zip(&e_v).enumerate() {
            let bad = f > 1
                || !h.is_finite()
                || h < 0.0
                || h as f64 > MAX_HEIGHT
                || (h > 0.0 && f == 0)
                || (f == 0 && h != 0.0);
            if bad {
                return Err(RadioError::Format(format!(
                    "cell {} violates the footprint/height invariant (e_h={}, e_v={})",
                    i, f, h
                )));
            }
        }
        bs.validate()?;
        if !(0.0..grid_w as f64).contains(&bs.x) || !(0.0..grid_h as f64).contains(&bs.y) {
            return Err(RadioError::Config("base station outside the scenario".into()));
        }
        let buildings = components(grid_w, grid_h, &e_h, &e_v);
        Ok(Self {
            grid_w,
            grid_h,
            e_h,
            e_v,
            bs,
            seed,
            buildings,
        })
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.grid_w + col
    }

    /// Height of the structure under horizontal point `(x, y)`, 0 outside the grid.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 || y < 0.0 {
            return 0.0;
        }
        let (c, r) = (x as usize, y as usize);
        if c >= self.grid_w || r >= self.grid_h {
            return 0.0;
        }
        self.e_v[self.index(c, r)] as f64
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p[0] >= 0.0
            && p[1] >= 0.0
            && p[0] <= self.grid_w as f64
            && p[1] <= self.grid_h as f64
            && p[2] >= 0.0
            && p[2] <= MAX_HEIGHT
    }

    pub fn inside_building(&self, p: [f64; 3]) -> bool {
        p[2] < self.height_at(p[0], p[1])
    }

    pub fn footprint_fraction(&self) -> f64 {
        self.e_h.iter().map(|&v| v as usize).sum::<usize>() as f64 / self.e_h.len() as f64
    }
}

fn components(w: usize, h: usize, e_h: &[u8], e_v: &[f32]) -> Vec<Building> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if e_h[start] == 0 || seen[start] {
            continue;
        }
        let mut b = Building {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
            height: 0.0,
        };
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            b.x0 = b.x0.min(c);
            b.y0 = b.y0.min(r);
            b.x1 = b.x1.max(c + 1);
            b.y1 = b.y1.max(r + 1);
            b.height = b.height.max(e_v[i] as f64);
            let mut visit = |j: usize| {
                if e_h[j] == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        out.push(b);
    }
    out
}

/// Places non-overlapping rectangular buildings separated by streets until the
/// footprint reaches `cfg.density`, then puts the base station on a street cell.
pub fn generate_scenario(cfg: &SceneConfig) -> Result<Scenario> {
    let (w, h) = (cfg.grid_w, cfg.grid_h);
    if w < 32 || h < 32 {
        return Err(RadioError::Config(format!("grid {}x{} is below 32x32", w, h)));
    }
    if !(0.0..1.0).contains(&cfg.density) {
        return Err(RadioError::Config(format!("density {} outside [0, 1)", cfg.density)));
    }
    let (h_lo, h_hi) = cfg.height_range;
    if !(0.0 < h_lo && h_lo <= h_hi && h_hi <= MAX_HEIGHT) {
        return Err(RadioError::Config(format!("invalid height range {:?}", cfg.height_range)));
    }
    let (s_lo, s_hi) = cfg.side_range;
    if s_lo == 0 || s_lo > s_hi || s_hi + 2 * cfg.street_gap > w.min(h) {
        return Err(RadioError::Config(format!("invalid side range {:?}", cfg.side_range)));
    }

    let mut rng = RngState::stream(cfg.seed, 0x5ce0e);
    let mut e_h = vec![0u8; w * h];
    let mut e_v = vec![0f32; w * h];
    let target = (cfg.density * (w * h) as f64).ceil() as usize;
    let mut filled = 0usize;
    let gap = cfg.street_gap;
    let mut attempts = 0;
    while filled < target {
        if attempts == cfg.max_attempts {
            return Err(RadioError::Generation {
                achieved: filled as f64 / (w * h) as f64,
                target: cfg.density,
            });
        }
        attempts += 1;
        let bw = s_lo + rng.below(s_hi - s_lo + 1);
        let bh = s_lo + rng.below(s_hi - s_lo + 1);
        // one street-width margin to the border keeps every building reachable
        let x0 = gap + rng.below(w - bw - 2 * gap + 1);
        let y0 = gap + rng.below(h - bh - 2 * gap + 1);
        let free = (y0 - gap..(y0 + bh + gap).min(h))
            .all(|r| (x0 - gap..(x0 + bw + gap).min(w)).all(|c| e_h[r * w + c] == 0));
        if !free {
            continue;
        }
        let height = rng.uniform_range(h_lo, h_hi) as f32;
        for r in y0..y0 + bh {
            for c in x0..x0 + bw {
                e_h[r * w + c] = 1;
                e_v[r * w + c] = height;
            }
        }
        filled += bw * bh;
    }

    let streets: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (c, r) = (i % w, i / w);
            e_h[i] == 0 && c > 0 && r > 0 && c + 1 < w && r + 1 < h
        })
        .collect();
    let cell = streets[rng.below(streets.len())];
    let bs = BsConfig::at((cell % w) as f64 + 0.5, (cell / w) as f64 + 0.5);
    Scenario::from_maps(w, h, e_h, e_v, bs, cfg.seed)
}
