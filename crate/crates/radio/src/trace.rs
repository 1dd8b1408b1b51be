//! Ray-trace-lite: line-of-sight tests on the height grid and single-bounce
//! image-source reflections off vertical facades.

use std::f64::consts::{PI, TAU};

use cf3d_autodiff::RngState;

use crate::channel::free_space_amplitude;
use crate::scene::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Departure azimuth at the base station, in `[-pi, pi)`.
    pub azimuth: f64,
    /// Departure elevation from zenith, in `[0, pi]`.
    pub elevation: f64,
    pub phase: f64,
    pub amplitude: f64,
    pub length: f64,
    pub bounces: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSet {
    pub los: Option<Path>,
    pub nlos: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.nlos.len() + self.los.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub max_paths: usize,
    /// Reflection coefficient applied once per bounce.
    pub gamma: f64,
    pub wavelength: f64,
}

const NUDGE: f64 = 1e-6;

/// True when the segment `p1 -> p2` dips below the structure height of any
/// cell it crosses. Cells are visited with a 2D DDA and the segment height is
/// taken as its minimum over the crossed part of each cell.
pub fn los_blocked(scn: &Scenario, p1: [f64; 3], p2: [f64; 3]) -> bool {
    let (dx, dy, dz) = (p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2]);
    let mut cx = p1[0].floor() as i64;
    let mut cy = p1[1].floor() as i64;
    let (step_x, mut t_max_x, t_delta_x) = axis_setup(p1[0], dx);
    let (step_y, mut t_max_y, t_delta_y) = axis_setup(p1[1], dy);
    let mut t = 0.0;
    loop {
        let t_next = t_max_x.min(t_max_y).min(1.0);
        if cx >= 0 && cy >= 0 && (cx as usize) < scn.grid_w && (cy as usize) < scn.grid_h {
            let h = scn.e_v[cy as usize * scn.grid_w + cx as usize] as f64;
            if h > 0.0 {
                let z_min = (p1[2] + dz * t).min(p1[2] + dz * t_next);
                if z_min < h {
                    return true;
                }
            }
        }
        if t_next >= 1.0 {
            return false;
        }
        if t_max_x < t_max_y {
            cx += step_x;
            t = t_max_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t = t_max_y;
            t_max_y += t_delta_y;
        }
    }
}

fn axis_setup(origin: f64, d: f64) -> (i64, f64, f64) {
    if d > 0.0 {
        (1, (origin.floor() + 1.0 - origin) / d, 1.0 / d)
    } else if d < 0.0 {
        (-1, (origin.floor() - origin) / d, -1.0 / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

fn departure(from: [f64; 3], to: [f64; 3]) -> (f64, f64, f64) {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let mut az = d[1].atan2(d[0]);
    if az >= PI {
        az -= TAU;
    }
    let el = if len > 0.0 { (d[2] / len).clamp(-1.0, 1.0).acos() } else { 0.0 };
    (az, el, len)
}

/// One vertical reflecting plane: `axis` 0 means the plane `x = coord`, 1 means `y = coord`.
struct Facade {
    axis: usize,
    coord: f64,
    outward: f64,
    span: (f64, f64),
    height: f64,
}

fn facades(scn: &Scenario) -> impl Iterator<Item = Facade> + '_ {
    scn.buildings().iter().flat_map(|b| {
        let (x0, x1, y0, y1) = (b.x0 as f64, b.x1 as f64, b.y0 as f64, b.y1 as f64);
        [
            Facade { axis: 0, coord: x0, outward: -1.0, span: (y0, y1), height: b.height },
            Facade { axis: 0, coord: x1, outward: 1.0, span: (y0, y1), height: b.height },
            Facade { axis: 1, coord: y0, outward: -1.0, span: (x0, x1), height: b.height },
            Facade { axis: 1, coord: y1, outward: 1.0, span: (x0, x1), height: b.height },
        ]
    })
}

fn reflect(scn: &Scenario, f: &Facade, bs: [f64; 3], lav: [f64; 3]) -> Option<([f64; 3], f64)> {
    let a = f.axis;
    let side = |p: [f64; 3]| (p[a] - f.coord) * f.outward;
    if side(bs) <= 0.0 || side(lav) <= 0.0 {
        return None;
    }
    let mut image = bs;
    image[a] = 2.0 * f.coord - bs[a];
    let t = (f.coord - image[a]) / (lav[a] - image[a]);
    let mut r = [0.0; 3];
    for k in 0..3 {
        r[k] = image[k] + t * (lav[k] - image[k]);
    }
    let other = 1 - a;
    if r[other] < f.span.0 || r[other] > f.span.1 || r[2] < 0.0 || r[2] > f.height {
        return None;
    }
    r[a] += f.outward * NUDGE;
    if los_blocked(scn, bs, r) || los_blocked(scn, r, lav) {
        return None;
    }
    let len = ((image[0] - lav[0]).powi(2) + (image[1] - lav[1]).powi(2) + (image[2] - lav[2]).powi(2)).sqrt();
    Some((r, len))
}

/// Traces the LOS path and the strongest `max_paths - 1` valid facade
/// reflections from the base station to `lav`. Path phases are drawn from `rng`.
pub fn trace_paths(scn: &Scenario, lav: [f64; 3], cfg: &TraceConfig, rng: &mut RngState) -> PathSet {
    assert!(cfg.max_paths >= 1, "max_paths must be at least 1");
    let bs = scn.bs.position();
    let los = (!los_blocked(scn, bs, lav)).then(|| {
        let (azimuth, elevation, length) = departure(bs, lav);
        Path {
            azimuth,
            elevation,
            phase: 0.0,
            amplitude: free_space_amplitude(cfg.wavelength, length),
            length,
            bounces: 0,
        }
    });

    let mut nlos: Vec<Path> = facades(scn)
        .filter_map(|f| reflect(scn, &f, bs, lav))
        .map(|(r, length)| {
            let (azimuth, elevation, _) = departure(bs, r);
            Path {
                azimuth,
                elevation,
                phase: 0.0,
                amplitude: free_space_amplitude(cfg.wavelength, length) * cfg.gamma,
                length,
                bounces: 1,
            }
        })
        .collect();
    nlos.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    nlos.truncate(cfg.max_paths - 1);

    let mut set = PathSet { los, nlos };
    if let Some(p) = set.los.as_mut() {
        p.phase = rng.uniform_range(0.0, TAU);
    }
    for p in &mut set.nlos {
        p.phase = rng.uniform_range(0.0, TAU);
    }
    set
}
