//! CSI-tuple fingerprints: simulation of RSS at arbitrary positions, the
//! near-ground measurement grid, max-min normalization, splits and metrics.

use std::f64::consts::PI;

use cf3d_autodiff::rng::mix_seed;
use cf3d_autodiff::RngState;

use crate::channel::{channel_realization, compute_large_scale, rss, to_db, ChannelParams, LavState};
use crate::error::{RadioError, Result};
use crate::scene::Scenario;
use crate::trace::{trace_paths, TraceConfig};

pub const G_THR_DB: f64 = -147.0;
pub const GROUND_Z: f64 = 1.5;
pub const Z_MIN: f64 = 25.0;
pub const Z_MAX: f64 = 80.0;

const GROUND_STREAM: u64 = 0x67;
const AERIAL_STREAM: u64 = 0xa1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub g_thr: f64,
    pub g_max: f64,
}

impl Normalization {
    pub fn new(g_thr: f64, g_max: f64) -> Result<Self> {
        if !(g_max > g_thr) {
            return Err(RadioError::Config(format!(
                "g_max {} dB must exceed g_thr {} dB",
                g_max, g_thr
            )));
        }
        Ok(Self { g_thr, g_max })
    }

    pub fn normalize(&self, g_db: f64) -> f64 {
        ((g_db - self.g_thr) / (self.g_max - self.g_thr)).max(0.0)
    }

    pub fn denormalize(&self, g_norm: f64) -> f64 {
        self.g_thr + g_norm * (self.g_max - self.g_thr)
    }
}

pub fn normalize_rss(g_db: f64, g_thr: f64, g_max: f64) -> Result<f64> {
    Ok(Normalization::new(g_thr, g_max)?.normalize(g_db))
}

pub fn denormalize_rss(g_norm: f64, g_thr: f64, g_max: f64) -> Result<f64> {
    Ok(Normalization::new(g_thr, g_max)?.denormalize(g_norm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub max_paths: usize,
    pub gamma: f64,
    pub lav_speed: f64,
    pub symbol_period: f64,
    /// Symbol indices are drawn uniformly below this bound.
    pub max_symbol: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            max_paths: 5,
            gamma: 0.6,
            lav_speed: 10.0,
            symbol_period: 10.0 / 30720.0,
            max_symbol: 1024,
        }
    }
}

/// RSS in dBW for one receiver position. `rng` drives path phases,
/// LAV heading and symbol index.
pub fn simulate_point(scn: &Scenario, cfg: &ChannelConfig, position: [f64; 3], rng: &mut RngState) -> Result<f64> {
    let bs = &scn.bs;
    let tc = TraceConfig {
        max_paths: cfg.max_paths,
        gamma: cfg.gamma,
        wavelength: bs.wavelength(),
    };
    let paths = trace_paths(scn, position, &tc, rng);
    let ls = compute_large_scale(&paths);
    if ls.deep_shadow {
        return Ok(to_db(0.0));
    }
    let lav = LavState::new(
        position,
        cfg.lav_speed,
        rng.uniform_range(-PI, PI),
        rng.uniform_range(0.0, PI),
        bs.wavelength(),
        cfg.symbol_period,
    );
    let n = rng.below(cfg.max_symbol.max(1) as usize) as u64;
    let params = ChannelParams {
        rician_k: ls.rician_k,
        beta: ls.beta,
        n_paths: paths.nlos.len().max(1),
    };
    let h = channel_realization(&params, &paths, &lav, n, bs.n_bs, bs.spacing_over_lambda, rng)?;
    Ok(to_db(rss(&h.h, bs.tx_power_w())))
}

/// Runs `f(i)` for `0..n` over `jobs` threads, keeping results in index order.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j * chunk..((j + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn check_positions(scn: &Scenario, positions: &[[f64; 3]]) -> Result<()> {
    for (index, &p) in positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) || !scn.contains(p) {
            return Err(RadioError::OutOfBounds { index });
        }
        if scn.inside_building(p) {
            return Err(RadioError::InsideBuilding { index });
        }
    }
    Ok(())
}

/// Raw RSS in dBW at each position; record `i` uses stream `i` of `seed`.
pub fn simulate_db(
    scn: &Scenario,
    cfg: &ChannelConfig,
    positions: &[[f64; 3]],
    seed: u64,
    jobs: usize,
) -> Result<Vec<f64>> {
    check_positions(scn, positions)?;
    let base = mix_seed(&[seed, AERIAL_STREAM]);
    par_map(positions.len(), jobs, |i| {
        simulate_point(scn, cfg, positions[i], &mut RngState::stream(base, i as u64))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiTuple {
    pub position: [f64; 3],
    pub rss_db: f64,
    pub rss_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfStore {
    pub tuples: Vec<CsiTuple>,
    pub scenario_id: u64,
    pub norm: Normalization,
}

impl CfStore {
    pub fn from_db(scenario_id: u64, norm: Normalization, positions: &[[f64; 3]], db: &[f64]) -> Self {
        let tuples = positions
            .iter()
            .zip(db)
            .map(|(&position, &rss_db)| CsiTuple {
                position,
                rss_db,
                rss_norm: norm.normalize(rss_db),
            })
            .collect();
        Self {
            tuples,
            scenario_id,
            norm,
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.tuples.iter().map(|t| t.position).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.tuples.iter().map(|t| t.rss_norm).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> CfStore {
        CfStore {
            tuples: idx.iter().map(|&i| self.tuples[i]).collect(),
            scenario_id: self.scenario_id,
            norm: self.norm,
        }
    }
}

/// One tuple per position, at exactly that position.
pub fn build_cf(
    scn: &Scenario,
    cfg: &ChannelConfig,
    positions: &[[f64; 3]],
    norm: Normalization,
    seed: u64,
    jobs: usize,
) -> Result<CfStore> {
    let db = simulate_db(scn, cfg, positions, seed, jobs)?;
    Ok(CfStore::from_db(scn.seed, norm, positions, &db))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundMeasurementGrid {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major normalized RSS, 0 on invalid cells.
    pub values: Vec<f32>,
    /// 1 for street cells, 0 for building cells.
    pub mask: Vec<u8>,
}

impl GroundMeasurementGrid {
    pub fn value(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.grid_w + col]
    }
}

/// Raw dBW at every street cell centre at the measurement height, `None` on building cells.
pub fn ground_db(scn: &Scenario, cfg: &ChannelConfig, seed: u64, jobs: usize) -> Result<Vec<Option<f64>>> {
    let base = mix_seed(&[seed, GROUND_STREAM]);
    par_map(scn.grid_w * scn.grid_h, jobs, |i| {
        if scn.e_h[i] == 1 {
            return Ok(None);
        }
        let p = [(i % scn.grid_w) as f64 + 0.5, (i / scn.grid_w) as f64 + 0.5, GROUND_Z];
        simulate_point(scn, cfg, p, &mut RngState::stream(base, i as u64)).map(Some)
    })
    .into_iter()
    .collect()
}

pub fn grid_from_db(scn: &Scenario, db: &[Option<f64>], norm: Normalization) -> GroundMeasurementGrid {
    GroundMeasurementGrid {
        grid_w: scn.grid_w,
        grid_h: scn.grid_h,
        values: db.iter().map(|g| g.map_or(0.0, |g| norm.normalize(g) as f32)).collect(),
        mask: db.iter().map(|g| g.is_some() as u8).collect(),
    }
}

pub fn sample_ground_grid(
    scn: &Scenario,
    cfg: &ChannelConfig,
    norm: Normalization,
    seed: u64,
    jobs: usize,
) -> Result<GroundMeasurementGrid> {
    Ok(grid_from_db(scn, &ground_db(scn, cfg, seed, jobs)?, norm))
}

/// Uniform positions over the free volume with `z` in `[Z_MIN, Z_MAX]`.
pub fn sample_aerial_positions(scn: &Scenario, n: usize, rng: &mut RngState) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [
            rng.uniform_range(0.0, scn.grid_w as f64),
            rng.uniform_range(0.0, scn.grid_h as f64),
            rng.uniform_range(Z_MIN, Z_MAX),
        ];
        if !scn.inside_building(p) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Deterministic shuffle-split of `0..n` by `fractions` (train, val, test).
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(RadioError::Config(format!("split fractions {:?} must sum to 1", fractions)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::stream(seed, 0x5b1).shuffle(&mut idx);
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(DatasetSplit {
        train: idx,
        val,
        test,
        seed,
    })
}

impl DatasetSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self.train.iter().chain(&self.val).chain(&self.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(RadioError::Usage(format!(
            "metrics need equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

/// Everything one scenario contributes to training and evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: GroundMeasurementGrid,
    pub store: CfStore,
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_aerial: usize,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub jobs: usize,
}

/// Simulates the ground grid and `n_aerial` random aerial tuples, fixing
/// `g_max` as the largest RSS seen in either set.
pub fn generate_dataset(scn: &Scenario, ch: &ChannelConfig, cfg: &DatasetConfig) -> Result<Dataset> {
    let ground = ground_db(scn, ch, cfg.seed, cfg.jobs)?;
    let mut rng = RngState::stream(cfg.seed, 0xae);
    let positions = sample_aerial_positions(scn, cfg.n_aerial, &mut rng);
    let aerial = simulate_db(scn, ch, &positions, cfg.seed, cfg.jobs)?;
    let g_max = ground
        .iter()
        .flatten()
        .chain(&aerial)
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let norm = Normalization::new(G_THR_DB, g_max)?;
    Ok(Dataset {
        grid: grid_from_db(scn, &ground, norm),
        store: CfStore::from_db(scn.seed, norm, &positions, &aerial),
        split: split(cfg.n_aerial, cfg.fractions, cfg.seed)?,
    })
}

