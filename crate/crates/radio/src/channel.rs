//! Correlated Rician ground-to-LAV channel on a uniform linear array.

use std::f64::consts::{PI, TAU};

use cf3d_autodiff::RngState;
use num_complex::Complex64;

use crate::error::{RadioError, Result};
use crate::trace::PathSet;

/// Rician factors at or above this value are treated as pure LOS.
pub const K_CAP: f64 = 1e12;
/// dB value reported for a zero channel.
pub const DB_FLOOR: f64 = -200.0;

/// ULA response `exp(j 2 pi i (d/lambda) cos(theta) sin(phi))`, `i = 0..n_bs`.
pub fn steering_vector(phi: f64, theta: f64, n_bs: usize, spacing_over_lambda: f64) -> Vec<Complex64> {
    let zeta = theta.cos() * phi.sin();
    (0..n_bs)
        .map(|i| Complex64::from_polar(1.0, TAU * i as f64 * spacing_over_lambda * zeta))
        .collect()
}

/// Unit vector for elevation `phi` (from zenith) and azimuth `theta`.
pub fn unit_vector(phi: f64, theta: f64) -> [f64; 3] {
    [theta.cos() * phi.sin(), theta.sin() * phi.sin(), phi.cos()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LavState {
    pub position: [f64; 3],
    pub speed: f64,
    pub azimuth_v: f64,
    pub elevation_v: f64,
    /// Maximum Doppler shift in Hz.
    pub doppler: f64,
    pub symbol_period: f64,
}

impl LavState {
    pub fn new(position: [f64; 3], speed: f64, azimuth_v: f64, elevation_v: f64, wavelength: f64, symbol_period: f64) -> Self {
        Self {
            position,
            speed,
            azimuth_v,
            elevation_v,
            doppler: speed / wavelength,
            symbol_period,
        }
    }

    pub fn unit_velocity(&self) -> [f64; 3] {
        unit_vector(self.elevation_v, self.azimuth_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub rician_k: f64,
    pub beta: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Complex64>,
    pub symbol_index: u64,
    pub beta: f64,
    pub los: Vec<Complex64>,
    pub nlos: Vec<Complex64>,
}

impl ChannelRealization {
    /// `sqrt(beta) (h_los + h_nlos)` from the stored decomposition.
    pub fn reassemble(&self) -> Vec<Complex64> {
        let s = self.beta.sqrt();
        self.los.iter().zip(&self.nlos).map(|(a, b)| (a + b) * s).collect()
    }
}

fn doppler_phase(lav: &LavState, phi: f64, theta: f64, n: u64) -> f64 {
    let v = lav.unit_velocity();
    let k = unit_vector(phi, theta);
    let xi = v[0] * k[0] + v[1] * k[1] + v[2] * k[2];
    TAU * lav.doppler * xi * lav.symbol_period * n as f64
}

fn add_path(acc: &mut [Complex64], weight: f64, phi: f64, theta: f64, phase: f64, spacing: f64) {
    let rot = Complex64::from_polar(weight, phase);
    let alpha = steering_vector(phi, theta, acc.len(), spacing);
    for (a, s) in acc.iter_mut().zip(alpha) {
        *a += s * rot;
    }
}

/// One channel draw at symbol `n`. The NLOS sum uses the traced reflections
/// when `params.n_paths` does not exceed their count, otherwise `n_paths`
/// statistical paths with angles and phases drawn from `rng`.
pub fn channel_realization(
    params: &ChannelParams,
    paths: &PathSet,
    lav: &LavState,
    n: u64,
    n_bs: usize,
    spacing_over_lambda: f64,
    rng: &mut RngState,
) -> Result<ChannelRealization> {
    if params.n_paths == 0 && paths.los.is_none() {
        return Err(RadioError::Degenerate("no LOS path and zero NLOS paths".into()));
    }
    if params.rician_k < 0.0 || params.beta < 0.0 {
        return Err(RadioError::Config(format!("invalid channel params {:?}", params)));
    }
    let k = if paths.los.is_some() { params.rician_k } else { 0.0 };
    let (w_los, w_nlos) = if k >= K_CAP {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };

    let mut los = vec![Complex64::new(0.0, 0.0); n_bs];
    if let Some(p) = &paths.los {
        let phase = doppler_phase(lav, p.elevation, p.azimuth, n) + p.phase;
        add_path(&mut los, w_los, p.elevation, p.azimuth, phase, spacing_over_lambda);
    }

    let mut nlos = vec![Complex64::new(0.0, 0.0); n_bs];
    let l = params.n_paths;
    if l > 0 && w_nlos > 0.0 {
        let w = w_nlos / (l as f64).sqrt();
        if l <= paths.nlos.len() {
            for p in &paths.nlos[..l] {
                let phase = doppler_phase(lav, p.elevation, p.azimuth, n) + p.phase;
                add_path(&mut nlos, w, p.elevation, p.azimuth, phase, spacing_over_lambda);
            }
        } else {
            for _ in 0..l {
                let theta = rng.uniform_range(-PI, PI);
                let phi = rng.uniform_range(0.0, PI);
                let phase = rng.uniform_range(0.0, TAU) + doppler_phase(lav, phi, theta, n);
                add_path(&mut nlos, w, phi, theta, phase, spacing_over_lambda);
            }
        }
    }

    let s = params.beta.sqrt();
    let h = los.iter().zip(&nlos).map(|(a, b)| (a + b) * s).collect();
    Ok(ChannelRealization {
        h,
        symbol_index: n,
        beta: params.beta,
        los,
        nlos,
    })
}

/// Received power `p_w * ||h||^2` in linear units.
pub fn rss(h: &[Complex64], p_w: f64) -> f64 {
    p_w * h.iter().map(|c| c.norm_sqr()).sum::<f64>()
}

pub fn to_db(g: f64) -> f64 {
    if g > 0.0 {
        (10.0 * g.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScale {
    pub beta: f64,
    pub rician_k: f64,
    pub deep_shadow: bool,
}

/// `beta` as the summed path power and `K` as the LOS to NLOS power ratio.
pub fn compute_large_scale(paths: &PathSet) -> LargeScale {
    if paths.is_empty() {
        return LargeScale {
            beta: 0.0,
            rician_k: 0.0,
            deep_shadow: true,
        };
    }
    let p_los = paths.los.map_or(0.0, |p| p.amplitude * p.amplitude);
    let p_nlos: f64 = paths.nlos.iter().map(|p| p.amplitude * p.amplitude).sum();
    let rician_k = if paths.los.is_none() {
        0.0
    } else if p_nlos == 0.0 {
        K_CAP
    } else {
        (p_los / p_nlos).min(K_CAP)
    };
    LargeScale {
        beta: p_los + p_nlos,
        rician_k,
        deep_shadow: false,
    }
}

/// Free-space amplitude `lambda / (4 pi d)` with `d` clamped to 1 m.
pub fn free_space_amplitude(wavelength: f64, d: f64) -> f64 {
    wavelength / (4.0 * PI * d.max(1.0))
}
