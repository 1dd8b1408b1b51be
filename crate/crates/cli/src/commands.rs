use std::path::{Path, PathBuf};

use cf3d_autodiff::rng::mix_seed;
use cf3d_autodiff::RngState;
use cf3d_core::complexity::complexity_report;
use cf3d_core::pipeline::{self, Baseline, SceneAssets, TrainedPipeline, METHODS};
use cf3d_core::report::{median, sweep_csv, EvalReport, MethodRow};
use cf3d_core::PipelineConfig;
use cf3d_radio::dataset::{par_map, sample_aerial_positions, simulate_point};
use cf3d_radio::{generate_dataset, metrics, persist, ChannelConfig, Dataset, DatasetConfig, DatasetSplit, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::heatmap;

const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

const SCENARIO_FILE: &str = "scenario.bin";
const GROUND_FILE: &str = "ground.bin";
const STORE_FILE: &str = "store.bin";
const SPLIT_FILE: &str = "split.json";
const RECEIPT_FILE: &str = "config.json";

/// Root for default input and output directories.
pub fn data_root() -> PathBuf {
    std::env::var_os("CF3D_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cf3d-data"))
}

fn or_default(p: &Option<PathBuf>, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| data_root().join(name))
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay(a),
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Creates the output directory after checking it is none of the inputs.
fn prepare_out(out: &Path, inputs: &[&Path]) -> Result<()> {
    if let Some(i) = inputs.iter().find(|i| same_dir(out, i)) {
        return Err(CliError::usage(format!(
            "output directory {} is also an input; choose another --out",
            i.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_receipt(out: &Path, cmd: &Command) -> Result<()> {
    let mut v = serde_json::to_value(cmd)?;
    if let Some(m) = v.as_object_mut() {
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    }
    std::fs::write(out.join(RECEIPT_FILE), serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

fn require_dir(p: &Path, what: &str) -> Result<()> {
    if !p.is_dir() {
        return Err(CliError::data(format!("{what} directory {} not found", p.display())));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    seed: u64,
}

/// Reads a directory written by `sample`.
pub fn load_assets(dir: &Path) -> Result<SceneAssets> {
    require_dir(dir, "samples")?;
    let scenario = persist::load_scenario(&dir.join(SCENARIO_FILE))?;
    let grid = persist::load_grid(&dir.join(GROUND_FILE))?;
    let store = persist::load_store(&dir.join(STORE_FILE))?;
    let text = std::fs::read_to_string(dir.join(SPLIT_FILE))?;
    let s: SplitFile = serde_json::from_str(&text)?;
    if s.train.iter().chain(&s.val).chain(&s.test).any(|&i| i >= store.len()) {
        return Err(CliError::data(format!("{SPLIT_FILE} indexes past the store")));
    }
    let split = DatasetSplit {
        train: s.train,
        val: s.val,
        test: s.test,
        seed: s.seed,
    };
    Ok(SceneAssets::new(scenario, Dataset { grid, store, split })?)
}

fn load_model(dir: &Path, assets: &SceneAssets) -> Result<TrainedPipeline> {
    require_dir(dir, "model")?;
    Ok(TrainedPipeline::load_dir(dir, assets.views.dims())?)
}

fn generate(mut a: GenerateArgs) -> Result<()> {
    let out = or_default(&a.out, "scene");
    a.out = Some(out.clone());
    prepare_out(&out, &[])?;
    let scn = cf3d_radio::generate_scenario(&SceneConfig::new(a.seed, a.size, a.density))?;
    persist::save_scenario(&scn, &out.join(SCENARIO_FILE))?;
    write_receipt(&out, &Command::Generate(a))?;
    println!(
        "scenario {}: {}x{}, {} buildings, footprint {:.3} -> {}",
        scn.seed,
        scn.grid_w,
        scn.grid_h,
        scn.buildings().len(),
        scn.footprint_fraction(),
        out.display()
    );
    Ok(())
}

fn sample(mut a: SampleArgs) -> Result<()> {
    let scene = or_default(&a.scene, "scene");
    let out = or_default(&a.out, "samples");
    a.scene = Some(scene.clone());
    a.out = Some(out.clone());
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    require_dir(&scene, "scene")?;
    let scn = persist::load_scenario(&scene.join(SCENARIO_FILE))?;
    prepare_out(&out, &[&scene])?;
    let ds = generate_dataset(
        &scn,
        &ChannelConfig::default(),
        &DatasetConfig {
            n_aerial: a.n_aerial,
            fractions: SPLIT_FRACTIONS,
            seed: a.seed,
            jobs: a.jobs,
        },
    )?;
    persist::save_scenario(&scn, &out.join(SCENARIO_FILE))?;
    persist::save_grid(&ds.grid, &out.join(GROUND_FILE))?;
    persist::save_store(&ds.store, &out.join(STORE_FILE))?;
    let split = SplitFile {
        train: ds.split.train.clone(),
        val: ds.split.val.clone(),
        test: ds.split.test.clone(),
        seed: ds.split.seed,
    };
    std::fs::write(out.join(SPLIT_FILE), serde_json::to_string(&split)?)?;
    write_receipt(&out, &Command::Sample(a))?;
    println!(
        "{} aerial tuples ({} train / {} val / {} test), g_max {:.2} dB -> {}",
        ds.store.len(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        ds.store.norm.g_max,
        out.display()
    );
    Ok(())
}

/// The preset or JSON config with command-line overrides applied.
fn resolve_config(m: &ModelArgs, seed: u64) -> Result<PipelineConfig> {
    let mut cfg = match &m.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?
        }
        None => match m.preset {
            Preset::Desk => PipelineConfig::desk(),
            Preset::Full => PipelineConfig::default(),
        },
    };
    cfg.seed = seed;
    if let Some(l) = m.lambda {
        cfg.corr_mmf.lambda = l;
    }
    if let Some(s) = m.sigma_tam {
        cfg.corr_mmf.sigma_tam = s;
    }
    let epochs = |s: &mut cf3d_core::Schedule, e: Option<usize>| {
        if let Some(e) = e {
            s.delay = s.delay.min(e);
            s.epochs = e;
        }
    };
    epochs(&mut cfg.corr_mmf.schedule, m.epochs_mmf);
    epochs(&mut cfg.mmr.schedule, m.epochs_mmr);
    epochs(&mut cfg.csi_r.schedule, m.epochs_csi);
    Ok(cfg)
}

fn train(mut a: TrainArgs) -> Result<()> {
    let samples = or_default(&a.samples, "samples");
    let out = or_default(&a.out, "model");
    a.samples = Some(samples.clone());
    a.out = Some(out.clone());
    let cfg = resolve_config(&a.model, a.seed)?;
    let assets = load_assets(&samples)?;
    cfg.validate(assets.views.dims())?;
    prepare_out(&out, &[&samples])?;
    let t = pipeline::train_pipeline(&assets, &cfg)?;
    t.save_dir(&out)?;
    std::fs::write(out.join("corr_mmf_loss.csv"), t.logs.corr_mmf_csv())?;
    std::fs::write(out.join("mmr_loss.csv"), t.logs.mmr_csv())?;
    std::fs::write(out.join("csi_r_loss.csv"), t.logs.csi_r_csv())?;
    let cx = complexity_report(&t.corr_mmf, &t.mmr, &t.csi_r);
    std::fs::write(out.join("complexity.csv"), cx.to_csv())?;
    write_receipt(&out, &Command::Train(a))?;
    println!(
        "trained (lambda {}, seed {}): probe corr {:.4}, inference {} MACs -> {}",
        cfg.corr_mmf.lambda,
        cfg.seed,
        t.final_corr,
        cx.inference_total(),
        out.display()
    );
    Ok(())
}

fn parse_methods(m: &Option<Vec<String>>) -> Result<Vec<String>> {
    let list: Vec<String> = match m {
        Some(v) => v.iter().map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect(),
        None => METHODS.iter().map(|s| s.to_string()).collect(),
    };
    if list.is_empty() {
        return Err(CliError::usage("no methods given"));
    }
    if let Some(bad) = list.iter().find(|m| !METHODS.contains(&m.as_str())) {
        return Err(CliError::usage(format!(
            "unknown method {bad}; expected one of {}",
            METHODS.join(",")
        )));
    }
    Ok(list)
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(CliError::usage(format!("--fraction {f} outside (0, 1]")));
    }
    Ok(())
}

fn eval(mut a: EvalArgs) -> Result<()> {
    let samples = or_default(&a.samples, "samples");
    let out = or_default(&a.out, "eval");
    a.samples = Some(samples.clone());
    a.out = Some(out.clone());
    let methods = parse_methods(&a.method)?;
    a.method = Some(methods.clone());
    check_fraction(a.fraction)?;
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let needs_model = methods.iter().any(|m| m == "mmf");
    let model_dir = needs_model.then(|| or_default(&a.model, "model"));
    if needs_model {
        a.model = model_dir.clone();
    }
    let assets = load_assets(&samples)?;
    let trained = match &model_dir {
        Some(d) => Some(load_model(d, &assets)?),
        None => None,
    };
    let mut inputs: Vec<&Path> = vec![&samples];
    if let Some(d) = &model_dir {
        inputs.push(d);
    }
    prepare_out(&out, &inputs)?;

    let base = pipeline::baseline_samples(&assets, a.fraction)?;
    let (pos, truth): (Vec<[f64; 3]>, Vec<f64>) = if a.at_samples {
        (base.points.clone(), base.values.clone())
    } else {
        let st = &assets.dataset.store;
        assets.dataset.split.test.iter().map(|&i| (st.tuples[i].position, st.tuples[i].rss_norm)).unzip()
    };
    if pos.is_empty() {
        return Err(CliError::usage("no evaluation points"));
    }
    let mut rows = Vec::new();
    for m in &methods {
        let pred = if m == "mmf" {
            trained.as_ref().expect("model loaded").predict(&assets.views, &pos)?
        } else {
            let b = Baseline::fit(m, base.clone())?;
            par_map(pos.len(), a.jobs, |i| b.predict(pos[i]))
        };
        let r = metrics(&pred, &truth)?;
        rows.push(MethodRow {
            method: m.clone(),
            mae: r.mae,
            rmse: r.rmse,
            n: truth.len(),
        });
    }
    let report = EvalReport {
        scenario_id: assets.scenario.seed,
        rows,
        sweep: Vec::new(),
        seeds: trained.as_ref().map(|t| vec![t.config.seed]).unwrap_or_default(),
    };
    std::fs::write(out.join("eval.csv"), report.to_csv())?;
    let table = report.to_table();
    std::fs::write(out.join("eval.txt"), &table)?;
    write_receipt(&out, &Command::Eval(a))?;
    print!("{table}");
    Ok(())
}

fn sweep(mut a: SweepArgs) -> Result<()> {
    let samples = or_default(&a.samples, "samples");
    let out = or_default(&a.out, "sweep");
    a.samples = Some(samples.clone());
    a.out = Some(out.clone());
    if a.lambdas.is_empty() || a.seeds.is_empty() {
        return Err(CliError::usage("--lambdas and --seeds must be non-empty"));
    }
    if let Some(l) = a.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::usage(format!("lambda {l} must be finite and non-negative")));
    }
    let cfg = resolve_config(&a.model, a.seeds[0])?;
    let assets = load_assets(&samples)?;
    cfg.validate(assets.views.dims())?;
    prepare_out(&out, &[&samples])?;
    let rows = pipeline::lambda_sweep(&assets, &cfg, &a.lambdas, &a.seeds, |r, _| {
        eprintln!(
            "lambda {} seed {}: mae {:.5} rmse {:.5} corr {:.4}",
            r.lambda, r.seed, r.mae, r.rmse, r.corr
        );
    })?;
    std::fs::write(out.join("sweep.csv"), sweep_csv(&rows))?;
    let mut table = format!(
        "{:>8} {:>10} {:>10} {:>8}   (medians over {} seeds)\n",
        "lambda",
        "MAE",
        "RMSE",
        "corr",
        a.seeds.len()
    );
    for &l in &a.lambdas {
        let sel: Vec<_> = rows.iter().filter(|r| r.lambda == l).collect();
        let med = |f: fn(&cf3d_core::report::SweepRow) -> f64| median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        table.push_str(&format!(
            "{:>8} {:>10.5} {:>10.5} {:>8.4}\n",
            l,
            med(|r| r.mae),
            med(|r| r.rmse),
            med(|r| r.corr)
        ));
    }
    std::fs::write(out.join("sweep.txt"), &table)?;
    write_receipt(&out, &Command::Sweep(a))?;
    print!("{table}");
    Ok(())
}

fn plot(mut a: PlotArgs) -> Result<()> {
    let samples = or_default(&a.samples, "samples");
    let out = or_default(&a.out, "plot");
    a.samples = Some(samples.clone());
    a.out = Some(out.clone());
    if a.z.is_empty() {
        return Err(CliError::usage("--z needs at least one height"));
    }
    if let Some(z) = a.z.iter().find(|z| !(z.is_finite() && **z >= 0.0)) {
        return Err(CliError::usage(format!("height {z} must be finite and non-negative")));
    }
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let model_dir = (a.source == Source::Model).then(|| or_default(&a.model, "model"));
    if model_dir.is_some() {
        a.model = model_dir.clone();
        let (lo, hi) = (cf3d_radio::dataset::Z_MIN, cf3d_radio::dataset::Z_MAX);
        if let Some(z) = a.z.iter().find(|z| !(lo..=hi).contains(*z)) {
            return Err(CliError::usage(format!(
                "the model covers heights {lo}..{hi} m; got --z {z}"
            )));
        }
    }
    let assets = load_assets(&samples)?;
    let trained = match &model_dir {
        Some(d) => Some(load_model(d, &assets)?),
        None => None,
    };
    let mut inputs: Vec<&Path> = vec![&samples];
    if let Some(d) = &model_dir {
        inputs.push(d);
    }
    prepare_out(&out, &inputs)?;

    let scn = &assets.scenario;
    let (w, h) = (scn.grid_w, scn.grid_h);
    let norm = assets.dataset.store.norm;
    let ch = ChannelConfig::default();
    for (k, &z) in a.z.iter().enumerate() {
        let cells: Vec<[f64; 3]> = (0..w * h)
            .map(|i| [(i % w) as f64 + 0.5, (i / w) as f64 + 0.5, z])
            .collect();
        let free: Vec<bool> = cells.iter().map(|&p| !scn.inside_building(p)).collect();
        let values: Vec<f64> = match &trained {
            Some(t) => {
                let q: Vec<[f64; 3]> = cells.iter().zip(&free).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
                let mut pred = t.predict(&assets.views, &q)?.into_iter();
                free.iter().map(|&f| if f { pred.next().unwrap_or(f64::NAN) } else { f64::NAN }).collect()
            }
            None => {
                let sim = par_map(cells.len(), a.jobs, |i| {
                    if !free[i] {
                        return Ok(f64::NAN);
                    }
                    let mut rng = RngState::new(mix_seed(&[a.seed, k as u64, i as u64]));
                    simulate_point(scn, &ch, cells[i], &mut rng).map(|db| norm.normalize(db))
                });
                sim.into_iter().collect::<std::result::Result<Vec<_>, _>>()?
            }
        };
        let stem = format!("rss_z{}", z);
        heatmap::write_slice(&out, &stem, &values, w, h)?;
        println!("{stem}: {w}x{h}");
    }
    write_receipt(&out, &Command::Plot(a))?;
    Ok(())
}

fn bench(mut a: BenchArgs) -> Result<()> {
    let samples = or_default(&a.samples, "samples");
    let model = or_default(&a.model, "model");
    let out = or_default(&a.out, "bench");
    a.samples = Some(samples.clone());
    a.model = Some(model.clone());
    a.out = Some(out.clone());
    let methods = parse_methods(&a.method)?;
    a.method = Some(methods.clone());
    check_fraction(a.fraction)?;
    if a.queries == 0 {
        return Err(CliError::usage("--queries must be at least 1"));
    }
    let assets = load_assets(&samples)?;
    let trained = load_model(&model, &assets)?;
    prepare_out(&out, &[&samples, &model])?;
    let mut rng = RngState::new(a.seed);
    let queries = sample_aerial_positions(&assets.scenario, a.queries, &mut rng);
    let names: Vec<&str> = methods.iter().map(|s| s.as_str()).collect();
    let rows = pipeline::bench(&assets, &trained, &queries, &names, a.fraction)?;
    let mut csv = String::from("method,seconds,ratio\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.method, r.seconds, r.ratio));
        println!("{:<8} {:>10.4}s {:>8.2}x", r.method, r.seconds, r.ratio);
    }
    std::fs::write(out.join("bench.csv"), csv)?;
    write_receipt(&out, &Command::Bench(a))?;
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.receipt)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", a.receipt.display())))?;
    let mut v: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("version");
        if let Some(out) = &a.out {
            m.insert("out".into(), serde_json::to_value(out)?);
        }
    }
    let cmd: Command = serde_json::from_value(v)?;
    if matches!(cmd, Command::Replay(_)) {
        return Err(CliError::usage("a receipt cannot replay another replay"));
    }
    dispatch(cmd)
}
