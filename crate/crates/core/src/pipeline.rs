//! Staged training, inference and evaluation of the full method.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use cf3d_autodiff::rng::mix_seed;
use cf3d_autodiff::Tensor;
use cf3d_interp::{idw_predict, nn_predict, GprModel, Interpolator, Kriging, KrigingOptions, Samples};
use cf3d_radio::{metrics, CfStore, CsiTuple, Dataset, Normalization, Scenario};

use crate::config::PipelineConfig;
use crate::corr_mmf::{self, CorrMmf};
use crate::csi_r::{self, normalize_coords, CsiR, RegressionSet};
use crate::error::{CoreError, Result};
use crate::mmr::{self, Mmr};
use crate::report::{EvalReport, MethodRow, SweepRow};
use crate::tam::cell_centre;
use crate::views::SceneViews;

pub const METHODS: [&str; 5] = ["mmf", "idw", "nn", "kriging", "gpr"];

pub const GPR_LENGTH_SCALES: [f64; 4] = [5.0, 10.0, 20.0, 40.0];
pub const GPR_SIGNAL_VARS: [f64; 3] = [0.05, 0.1, 0.5];
pub const GPR_NOISE_VAR: f64 = 1e-4;
pub const IDW_POWER: f64 = 2.0;

/// One scenario with its simulated measurements.
#[derive(Debug, Clone)]
pub struct SceneAssets {
    pub scenario: Scenario,
    pub dataset: Dataset,
    pub views: SceneViews,
}

impl SceneAssets {
    pub fn new(scenario: Scenario, dataset: Dataset) -> Result<Self> {
        let views = SceneViews::new(&scenario, &dataset.grid)?;
        if !dataset.split.is_disjoint() {
            return Err(CoreError::Usage("train/val/test splits overlap".into()));
        }
        Ok(Self {
            scenario,
            dataset,
            views,
        })
    }

    fn tuples(&self, idx: &[usize]) -> Vec<CsiTuple> {
        idx.iter().map(|&i| self.dataset.store.tuples[i]).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainLogs {
    pub corr_mmf: Vec<corr_mmf::EpochLog>,
    pub mmr: Vec<mmr::MmrEpoch>,
    pub csi_r: Vec<csi_r::CsiEpoch>,
}

impl TrainLogs {
    pub fn corr_mmf_csv(&self) -> String {
        corr_mmf::loss_csv(&self.corr_mmf)
    }
    pub fn mmr_csv(&self) -> String {
        mmr::loss_csv(&self.mmr)
    }
    pub fn csi_r_csv(&self) -> String {
        csi_r::loss_csv(&self.csi_r)
    }
}

/// Distinct fusion latents for a set of positions, one per containing cell.
#[derive(Debug, Clone)]
pub struct LatentTable {
    pub codes: Tensor,
    pub index: Vec<usize>,
}

pub fn latent_table(corr: &CorrMmf, views: &SceneViews, positions: &[[f64; 3]]) -> Result<LatentTable> {
    let (w, h) = views.dims();
    let mut cells: HashMap<(u64, u64), usize> = HashMap::new();
    let mut centres = Vec::new();
    let index = positions
        .iter()
        .map(|p| {
            let c = cell_centre([p[0], p[1]], w, h);
            *cells.entry((c[0].to_bits(), c[1].to_bits())).or_insert_with(|| {
                centres.push(c);
                centres.len() - 1
            })
        })
        .collect();
    Ok(LatentTable {
        codes: corr.encode(views, &centres)?,
        index,
    })
}

#[derive(Debug)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub corr_mmf: CorrMmf,
    pub mmr: Mmr,
    pub csi_r: CsiR,
    pub logs: TrainLogs,
    /// Validation correlation of the single-view probes after Corr-MMF training.
    pub final_corr: f64,
    env_cache: OnceLock<Tensor>,
}

/// Mask centres for Corr-MMF: the horizontal positions of the leading
/// training and validation tuples.
pub fn mmf_centres(assets: &SceneAssets, config: &PipelineConfig) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let xy = |idx: &[usize], n: usize| {
        assets
            .tuples(&idx[..n.min(idx.len())])
            .iter()
            .map(|t| [t.position[0], t.position[1]])
            .collect::<Vec<_>>()
    };
    let s = &assets.dataset.split;
    (xy(&s.train, config.mmf_train_centres), xy(&s.val, config.mmf_val_centres))
}

/// The scene's height map under the eight square symmetries (only the
/// identity for non-square grids).
pub fn mmr_training_maps(views: &SceneViews) -> Vec<Vec<f64>> {
    if views.w == views.h {
        (0..8).map(|k| views.dihedral(k).height).collect()
    } else {
        vec![views.height.clone(), views.height.iter().rev().copied().collect()]
    }
}

pub fn train_mmr(assets: &SceneAssets, config: &PipelineConfig) -> Result<(Mmr, Vec<mmr::MmrEpoch>)> {
    config.validate(assets.views.dims())?;
    let seed = mix_seed(&[config.seed, 0x3]);
    let mut m = Mmr::new(config.mmr.clone(), assets.views.dims(), seed)?;
    let maps = mmr_training_maps(&assets.views);
    let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
    let log = m.train(&refs, seed)?;
    Ok((m, log))
}

fn regression_set<'a>(
    assets: &SceneAssets,
    table: &'a LatentTable,
    tuples: &[CsiTuple],
) -> Result<RegressionSet<'a>> {
    let (w, h) = assets.views.dims();
    Ok(RegressionSet {
        codes: &table.codes,
        code_index: table.index.clone(),
        coords: tuples
            .iter()
            .map(|t| normalize_coords(t.position, w, h))
            .collect::<Result<_>>()?,
        targets: tuples.iter().map(|t| t.rss_norm).collect(),
    })
}

/// Corr-MMF then CSI-R on top of an already trained MMR.
pub fn train_with_mmr(
    assets: &SceneAssets,
    config: &PipelineConfig,
    mmr: Mmr,
    mmr_log: Vec<mmr::MmrEpoch>,
) -> Result<TrainedPipeline> {
    let dims = assets.views.dims();
    config.validate(dims)?;
    let seed = mix_seed(&[config.seed, 0x1]);
    let mut corr = CorrMmf::new(config.corr_mmf.clone(), dims, seed)?;
    let (tc, vc) = mmf_centres(assets, config);
    let corr_log = corr.train(&assets.views, &tc, &vc, seed)?;
    let final_corr = corr.evaluate(&assets.views, &vc)?.corr;

    let env = mmr.encode(&assets.views.height)?;
    let train_t = assets.tuples(&assets.dataset.split.train);
    let val_t = assets.tuples(&assets.dataset.split.val);
    let pos = |t: &[CsiTuple]| t.iter().map(|t| t.position).collect::<Vec<_>>();
    let train_tab = latent_table(&corr, &assets.views, &pos(&train_t))?;
    let val_tab = latent_table(&corr, &assets.views, &pos(&val_t))?;
    let seed_r = mix_seed(&[config.seed, 0x2]);
    let mut csi = CsiR::new(config.csi_r.clone(), corr.latent_shape(), seed_r)?;
    let env_ref = config.csi_r.use_mmr.then_some(&env);
    let csi_log = csi.train(
        &regression_set(assets, &train_tab, &train_t)?,
        &regression_set(assets, &val_tab, &val_t)?,
        env_ref,
        seed_r,
    )?;
    let env_cache = OnceLock::new();
    let _ = env_cache.set(env);
    Ok(TrainedPipeline {
        config: config.clone(),
        corr_mmf: corr,
        mmr,
        csi_r: csi,
        logs: TrainLogs {
            corr_mmf: corr_log,
            mmr: mmr_log,
            csi_r: csi_log,
        },
        final_corr,
        env_cache,
    })
}

/// MMR, Corr-MMF and CSI-R in turn, each on its own schedule.
pub fn train_pipeline(assets: &SceneAssets, config: &PipelineConfig) -> Result<TrainedPipeline> {
    let (m, log) = train_mmr(assets, config)?;
    train_with_mmr(assets, config, m, log)
}

impl TrainedPipeline {
    /// Drops the cached environment latent; the next query re-encodes it.
    pub fn clear_cache(&mut self) {
        self.env_cache = OnceLock::new();
    }

    pub fn env_latent(&self, views: &SceneViews) -> Result<&Tensor> {
        if let Some(t) = self.env_cache.get() {
            return Ok(t);
        }
        let t = self.mmr.encode(&views.height)?;
        Ok(self.env_cache.get_or_init(|| t))
    }

    /// Normalized RSS predictions in `[0,1]` at arbitrary positions.
    pub fn predict(&self, views: &SceneViews, positions: &[[f64; 3]]) -> Result<Vec<f64>> {
        if positions.is_empty() {
            return Ok(Vec::new());
        }
        let (w, h) = views.dims();
        let coords = positions
            .iter()
            .map(|&p| normalize_coords(p, w, h))
            .collect::<Result<Vec<_>>>()?;
        let env = if self.config.csi_r.use_mmr {
            Some(self.env_latent(views)?)
        } else {
            None
        };
        let table = latent_table(&self.corr_mmf, views, positions)?;
        let set = RegressionSet {
            codes: &table.codes,
            code_index: table.index,
            coords,
            targets: Vec::new(),
        };
        self.csi_r.predict(&set, env)
    }

    /// One tuple per requested position, carrying that position bit for bit.
    pub fn construct_cf(
        &self,
        views: &SceneViews,
        positions: &[[f64; 3]],
        norm: Normalization,
        scenario_id: u64,
    ) -> Result<CfStore> {
        let pred = self.predict(views, positions)?;
        Ok(CfStore {
            tuples: positions
                .iter()
                .zip(pred)
                .map(|(&position, g)| CsiTuple {
                    position,
                    rss_db: norm.denormalize(g),
                    rss_norm: g,
                })
                .collect(),
            scenario_id,
            norm,
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.corr_mmf.save(&dir.join("corr_mmf.ckpt"))?;
        self.mmr.save(&dir.join("mmr.ckpt"))?;
        self.csi_r.save(&dir.join("csi_r.ckpt"))?;
        let cfg = serde_json::to_string_pretty(&self.config).map_err(|e| CoreError::Config(e.to_string()))?;
        std::fs::write(dir.join("pipeline.json"), cfg)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path, grid: (usize, usize)) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("pipeline.json"))?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| CoreError::Config(e.to_string()))?;
        config.validate(grid)?;
        let corr = CorrMmf::load(config.corr_mmf.clone(), grid, &dir.join("corr_mmf.ckpt"))?;
        let mmr = Mmr::load(config.mmr.clone(), grid, &dir.join("mmr.ckpt"))?;
        let csi = CsiR::load(config.csi_r.clone(), corr.latent_shape(), &dir.join("csi_r.ckpt"))?;
        Ok(Self {
            config,
            corr_mmf: corr,
            mmr,
            csi_r: csi,
            logs: TrainLogs::default(),
            final_corr: f64::NAN,
            env_cache: OnceLock::new(),
        })
    }
}

/// The leading `ceil(fraction · |store|)` training tuples as interpolation samples.
pub fn baseline_samples(assets: &SceneAssets, fraction: f64) -> Result<Samples> {
    let n = ((fraction * assets.dataset.store.len() as f64).ceil() as usize).min(assets.dataset.split.train.len());
    let t = assets.tuples(&assets.dataset.split.train[..n]);
    Ok(Samples::new(
        t.iter().map(|t| t.position).collect(),
        t.iter().map(|t| t.rss_norm).collect(),
    )?)
}

/// A fitted classical interpolator.
pub enum Baseline {
    Idw(Samples),
    Nearest(Samples),
    Kriging(Kriging),
    Gpr(GprModel),
}

impl Baseline {
    pub fn fit(method: &str, samples: Samples) -> Result<Self> {
        Ok(match method {
            "idw" => Baseline::Idw(samples),
            "nn" => Baseline::Nearest(samples),
            "kriging" => Baseline::Kriging(Kriging::fit(samples, &KrigingOptions::default())?),
            "gpr" => Baseline::Gpr(GprModel::fit_grid(
                samples,
                &GPR_LENGTH_SCALES,
                &GPR_SIGNAL_VARS,
                GPR_NOISE_VAR,
            )?),
            other => return Err(CoreError::Usage(format!("unknown baseline method {other}"))),
        })
    }

    pub fn predict(&self, q: [f64; 3]) -> f64 {
        match self {
            Baseline::Idw(s) => idw_predict(s, q, IDW_POWER),
            Baseline::Nearest(s) => nn_predict(s, q),
            Baseline::Kriging(k) => k.predict(q),
            Baseline::Gpr(g) => g.predict(q),
        }
    }
}

/// MAE and RMSE of every requested method on the held-out test split.
pub fn evaluate(assets: &SceneAssets, trained: Option<&TrainedPipeline>, methods: &[&str], fraction: f64) -> Result<EvalReport> {
    let split = &assets.dataset.split;
    if !split.is_disjoint() {
        return Err(CoreError::Usage("test split overlaps the training data".into()));
    }
    let test = assets.tuples(&split.test);
    if test.is_empty() {
        return Err(CoreError::Usage("empty test split".into()));
    }
    let pos: Vec<[f64; 3]> = test.iter().map(|t| t.position).collect();
    let truth: Vec<f64> = test.iter().map(|t| t.rss_norm).collect();
    let mut rows = Vec::new();
    for &m in methods {
        let pred = if m == "mmf" {
            let t = trained.ok_or_else(|| CoreError::Usage("mmf evaluation needs a trained pipeline".into()))?;
            t.predict(&assets.views, &pos)?
        } else {
            let b = Baseline::fit(m, baseline_samples(assets, fraction)?)?;
            pos.iter().map(|&q| b.predict(q)).collect()
        };
        let r = metrics(&pred, &truth)?;
        rows.push(MethodRow {
            method: m.to_string(),
            mae: r.mae,
            rmse: r.rmse,
            n: truth.len(),
        });
    }
    Ok(EvalReport {
        scenario_id: assets.scenario.seed,
        rows,
        sweep: Vec::new(),
        seeds: trained.map(|t| vec![t.config.seed]).unwrap_or_default(),
    })
}

/// Reruns the full pipeline for every `(λ, seed)` pair. MMR does not depend
/// on λ, so it is trained once per seed and reused.
pub fn lambda_sweep(
    assets: &SceneAssets,
    base: &PipelineConfig,
    lambdas: &[f64],
    seeds: &[u64],
    mut on_run: impl FnMut(&SweepRow, &TrainedPipeline),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let (m, log) = train_mmr(assets, &cfg)?;
        for &lambda in lambdas {
            cfg.corr_mmf.lambda = lambda;
            let t = train_with_mmr(assets, &cfg, m.clone(), log.clone())?;
            let r = evaluate(assets, Some(&t), &["mmf"], cfg.baseline_fraction)?.rows[0].clone();
            let row = SweepRow {
                lambda,
                seed,
                mae: r.mae,
                rmse: r.rmse,
                corr: t.final_corr,
            };
            on_run(&row, &t);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub seconds: f64,
    /// Wall clock relative to the learned pipeline.
    pub ratio: f64,
}

/// Wall clock of each method over the same `queries`, reported relative to
/// the learned pipeline. Fitting the classical interpolators is included.
pub fn bench(
    assets: &SceneAssets,
    trained: &TrainedPipeline,
    queries: &[[f64; 3]],
    methods: &[&str],
    fraction: f64,
) -> Result<Vec<BenchRow>> {
    let mut out = Vec::new();
    for &m in methods {
        let t0 = Instant::now();
        if m == "mmf" {
            trained.predict(&assets.views, queries)?;
        } else {
            let b = Baseline::fit(m, baseline_samples(assets, fraction)?)?;
            let s: f64 = queries.iter().map(|&q| b.predict(q)).sum();
            std::hint::black_box(s);
        }
        out.push(BenchRow {
            method: m.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            ratio: 0.0,
        });
    }
    let base = out
        .iter()
        .find(|r| r.method == "mmf")
        .map(|r| r.seconds)
        .unwrap_or_else(|| out.first().map_or(1.0, |r| r.seconds));
    for r in &mut out {
        r.ratio = r.seconds / base.max(f64::MIN_POSITIVE);
    }
    Ok(out)
}
