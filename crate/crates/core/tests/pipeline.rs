mod common;

use std::sync::OnceLock;
use std::time::Instant;

use cf3d_core::pipeline::*;
use cf3d_core::*;
use common::*;

fn assets() -> &'static SceneAssets {
    static A: OnceLock<SceneAssets> = OnceLock::new();
    A.get_or_init(small_assets)
}

fn trained() -> &'static TrainedPipeline {
    static T: OnceLock<TrainedPipeline> = OnceLock::new();
    T.get_or_init(|| train_pipeline(assets(), &small_pipeline()).unwrap())
}

fn test_positions() -> Vec<[f64; 3]> {
    let a = assets();
    a.dataset.split.test.iter().map(|&i| a.dataset.store.tuples[i].position).collect()
}

#[test]
fn construct_cf_keeps_positions_and_predicts_in_range() {
    let a = assets();
    let t = trained();
    let pos = test_positions();
    let cf = t.construct_cf(&a.views, &pos, a.dataset.store.norm, 77).unwrap();
    assert_eq!(cf.scenario_id, 77);
    assert_eq!(cf.len(), pos.len());
    for (tuple, p) in cf.tuples.iter().zip(&pos) {
        assert_eq!(tuple.position.map(f64::to_bits), p.map(f64::to_bits));
        assert!((0.0..=1.0).contains(&tuple.rss_norm));
        assert_eq!(tuple.rss_db, a.dataset.store.norm.denormalize(tuple.rss_norm));
    }
    assert_eq!(t.predict(&a.views, &pos).unwrap(), cf.values());
    assert!(t.predict(&a.views, &[]).unwrap().is_empty());

    // duplicates are allowed and predicted identically
    let dup = vec![pos[0], pos[0], pos[1]];
    let p = t.predict(&a.views, &dup).unwrap();
    assert_eq!(p[0], p[1]);

    assert!(matches!(
        t.predict(&a.views, &[[10.0, 10.0, 100.0]]),
        Err(CoreError::Range { .. })
    ));
}

#[test]
fn latent_table_shares_codes_within_a_cell() {
    let a = assets();
    let t = trained();
    let pos = [[3.2, 4.9, 30.0], [3.8, 4.1, 70.0], [5.5, 4.5, 30.0]];
    let tab = latent_table(&t.corr_mmf, &a.views, &pos).unwrap();
    assert_eq!(tab.index, vec![0, 0, 1]);
    assert_eq!(tab.codes.shape()[0], 2);
}

#[test]
fn upstream_models_stay_frozen_during_regression_training() {
    let a = assets();
    let cfg = small_pipeline();
    let (mmr, log) = train_mmr(a, &cfg).unwrap();
    let mmr_before = mmr.store.fingerprint();
    let t = train_with_mmr(a, &cfg, mmr, log).unwrap();
    assert_eq!(t.mmr.store.fingerprint(), mmr_before);

    let seed = cf3d_autodiff::rng::mix_seed(&[cfg.seed, 1]);
    let mut corr = CorrMmf::new(cfg.corr_mmf.clone(), a.views.dims(), seed).unwrap();
    let (tc, vc) = mmf_centres(a, &cfg);
    corr.train(&a.views, &tc, &vc, seed).unwrap();
    assert_eq!(t.corr_mmf.store.fingerprint(), corr.store.fingerprint());
}

#[test]
fn environment_latent_is_cached_and_recomputed_identically() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    trained().save_dir(dir.path()).unwrap();
    let mut t = TrainedPipeline::load_dir(dir.path(), a.views.dims()).unwrap();
    let q = [test_positions()[0]];
    let (mut cold, mut warm) = (f64::INFINITY, f64::INFINITY);
    let mut outs = Vec::new();
    for _ in 0..5 {
        t.clear_cache();
        let t0 = Instant::now();
        outs.push(t.predict(&a.views, &q).unwrap());
        cold = cold.min(t0.elapsed().as_secs_f64());
        let t1 = Instant::now();
        outs.push(t.predict(&a.views, &q).unwrap());
        warm = warm.min(t1.elapsed().as_secs_f64());
    }
    assert!(warm < cold, "warm {warm} cold {cold}");
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn saved_pipeline_reloads_exactly() {
    let a = assets();
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    t.save_dir(dir.path()).unwrap();
    let back = TrainedPipeline::load_dir(dir.path(), a.views.dims()).unwrap();
    let pos = test_positions();
    assert_eq!(back.predict(&a.views, &pos).unwrap(), t.predict(&a.views, &pos).unwrap());
    let dir2 = tempfile::tempdir().unwrap();
    back.save_dir(dir2.path()).unwrap();
    for f in ["corr_mmf.ckpt", "mmr.ckpt", "csi_r.ckpt", "pipeline.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(dir2.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(TrainedPipeline::load_dir(dir.path(), (32, 32)).is_err());
}

#[test]
fn training_is_deterministic() {
    let a = assets();
    let t = trained();
    let again = train_pipeline(a, &small_pipeline()).unwrap();
    assert_eq!(again.logs.corr_mmf_csv(), t.logs.corr_mmf_csv());
    assert_eq!(again.logs.mmr_csv(), t.logs.mmr_csv());
    assert_eq!(again.logs.csi_r_csv(), t.logs.csi_r_csv());
    assert_eq!(again.csi_r.store.fingerprint(), t.csi_r.store.fingerprint());
    assert_eq!(t.logs.mmr.len(), 3);
    assert_eq!(t.logs.csi_r.len(), 3);
    assert!(t.final_corr.abs() <= 1.0);
}

#[test]
fn evaluation_reports_every_method() {
    let a = assets();
    let rep = evaluate(a, Some(trained()), &METHODS, 0.05).unwrap();
    assert_eq!(rep.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), METHODS.to_vec());
    for r in &rep.rows {
        assert_eq!(r.n, a.dataset.split.test.len());
        assert!(r.rmse >= r.mae && r.mae >= 0.0, "{r:?}");
    }
    assert!(rep.to_csv().starts_with("scenario,method,"));
    assert!(rep.to_table().contains("kriging"));

    assert!(matches!(evaluate(a, None, &["mmf"], 0.05), Err(CoreError::Usage(_))));
    assert!(evaluate(a, None, &["spline"], 0.05).is_err());
    let n = baseline_samples(a, 0.05).unwrap();
    assert_eq!(n.values.len(), 15);

    let mut leaky = a.clone();
    let first = leaky.dataset.split.train[0];
    leaky.dataset.split.test.push(first);
    assert!(matches!(evaluate(&leaky, None, &["idw"], 0.05), Err(CoreError::Usage(_))));
    assert!(SceneAssets::new(leaky.scenario.clone(), leaky.dataset.clone()).is_err());
}

#[test]
fn sweep_and_bench() {
    let a = assets();
    let mut cfg = small_pipeline();
    cfg.csi_r.schedule.epochs = 1;
    let mut seen = 0;
    let rows = lambda_sweep(a, &cfg, &[0.0, 1.0], &[5], |_, _| seen += 1).unwrap();
    assert_eq!(seen, 2);
    assert_eq!(rows.iter().map(|r| (r.lambda, r.seed)).collect::<Vec<_>>(), vec![(0.0, 5), (1.0, 5)]);
    assert!(rows.iter().all(|r| r.rmse >= r.mae && r.corr.abs() <= 1.0));

    let b = bench(a, trained(), &test_positions(), &["mmf", "idw", "nn"], 0.05).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b[0].ratio, 1.0);
    assert!(b.iter().all(|r| r.seconds >= 0.0));
}
