mod common;

use cf3d_autodiff::gradcheck::random_tensor;
use cf3d_autodiff::RngState;
use cf3d_core::corr_mmf::{batches, loss_csv};
use cf3d_core::*;
use common::*;

fn toy_mmr(epochs: usize) -> MmrConfig {
    MmrConfig {
        channels: vec![4, 6, 8],
        decoder_channels: vec![6, 4],
        sam_kernel: 3,
        schedule: schedule(epochs, 0.01, 4),
        ..MmrConfig::default()
    }
}

fn building_map(w: usize, rng: &mut RngState) -> Vec<f64> {
    let mut m = vec![0.0; w * w];
    for _ in 0..4 {
        let (x0, y0) = (rng.below(w - 6), rng.below(w - 6));
        let (bw, bh, z) = (2 + rng.below(5), 2 + rng.below(5), rng.uniform_range(10.0, 60.0));
        for r in y0..y0 + bh {
            for c in x0..x0 + bw {
                m[r * w + c] = z;
            }
        }
    }
    m
}

/// Rectangular buildings and a smooth ground field decaying from one corner.
fn structured_views(w: usize, rng: &mut RngState) -> SceneViews {
    let height = building_map(w, rng);
    let footprint: Vec<f64> = height.iter().map(|&z| (z > 0.0) as u8 as f64).collect();
    let ground = (0..w * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            (1.0 - footprint[i]) * (-(r * r + c * c).sqrt() / 8.0).exp()
        })
        .collect();
    SceneViews {
        w,
        h: w,
        ground,
        footprint,
        height,
    }
}

#[test]
fn batches_merge_a_trailing_singleton() {
    let order: Vec<usize> = (0..9).collect();
    let b = batches(&order, 4);
    assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7, 8]]);
    assert_eq!(batches(&order, 3).len(), 3);
    assert_eq!(batches(&order[..1], 4), vec![vec![0]]);
}

#[test]
fn mmr_shapes_and_input_contracts() {
    let m = Mmr::new(toy_mmr(1), (16, 16), 0).unwrap();
    assert_eq!(m.latent_shape(), [2, 2, 8]);
    assert_eq!(m.encode(&vec![0.0; 256]).unwrap().shape(), &[1, 2, 2, 8]);
    assert!(matches!(m.encode(&[0.0; 10]), Err(CoreError::Usage(_))));
    let x = m.input(&[&[50.0; 256]]).unwrap();
    assert!(x.data().iter().all(|&v| v == 0.5));

    let mut m = m;
    assert!(matches!(m.train(&[&[0.0; 256]], 0), Err(CoreError::Usage(_))));
    assert!(Mmr::new(toy_mmr(1), (12, 12), 0).is_err());

    let small = small_pipeline();
    let corr = CorrMmf::new(small.corr_mmf.clone(), (64, 64), 0).unwrap();
    let mmr = Mmr::new(small.mmr.clone(), (64, 64), 0).unwrap();
    assert_eq!(corr.latent_shape(), mmr.latent_shape());
}

#[test]
fn mmr_learns_a_flat_scene_and_reduces_loss_on_buildings() {
    let zero = vec![0.0; 256];
    let mut m = Mmr::new(toy_mmr(5), (16, 16), 1).unwrap();
    m.train(&[&zero, &zero], 1).unwrap();
    assert!(m.eval_loss(&[&zero]).unwrap() < 1e-2);

    let mut rng = RngState::new(2);
    let maps: Vec<Vec<f64>> = (0..8).map(|_| building_map(16, &mut rng)).collect();
    let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
    let mut m = Mmr::new(toy_mmr(40), (16, 16), 3).unwrap();
    let log = m.train(&refs, 3).unwrap();
    assert_eq!(log.len(), 40);
    assert!(log.last().unwrap().loss < log[0].loss, "{:?}", log);

    let mut again = Mmr::new(toy_mmr(40), (16, 16), 3).unwrap();
    assert_eq!(again.train(&refs, 3).unwrap(), log);
    assert_eq!(again.store.fingerprint(), m.store.fingerprint());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mmr.ckpt");
    m.save(&p).unwrap();
    let back = Mmr::load(toy_mmr(40), (16, 16), &p).unwrap();
    assert_eq!(back.encode(&maps[0]).unwrap(), m.encode(&maps[0]).unwrap());
    let p2 = dir.path().join("again.ckpt");
    again.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn corr_mmf_training_is_deterministic_and_persists() {
    let mut rng = RngState::new(3);
    let views = structured_views(16, &mut rng);
    let train = random_centres(12, 16, 16, &mut rng);
    let val = random_centres(4, 16, 16, &mut rng);
    let mut cfg = toy_corr(1.0);
    cfg.view_channels = vec![3, 4];
    cfg.fused_channels = vec![4, 4];
    cfg.decoder_channels = vec![4, 4, 3];
    cfg.schedule = schedule(12, 0.01, 4);

    let mut a = CorrMmf::new(cfg.clone(), (16, 16), 7).unwrap();
    let log = a.train(&views, &train, &val, 7).unwrap();
    assert_eq!(log.len(), 12);
    assert_eq!(log.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
    assert!(log.last().unwrap().val_l_obj < log[0].val_l_obj, "{:?}", log);
    for r in &log {
        assert!((r.l_obj - (r.l_fusion + r.l_cross + r.l_corr)).abs() < 1e-9);
    }
    let mut b = CorrMmf::new(cfg.clone(), (16, 16), 7).unwrap();
    assert_eq!(loss_csv(&b.train(&views, &train, &val, 7).unwrap()), loss_csv(&log));
    assert!(loss_csv(&log).starts_with("epoch,L_fusion,L_cross,L_corr,L_obj,val_L_obj\n"));

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let back = CorrMmf::load(cfg.clone(), (16, 16), &pa).unwrap();
    assert_eq!(back.encode(&views, &val).unwrap(), a.encode(&views, &val).unwrap());
    assert_eq!(back.evaluate(&views, &val).unwrap(), a.evaluate(&views, &val).unwrap());

    let mut other = cfg;
    other.fused_channels = vec![4, 5];
    assert!(CorrMmf::load(other, (16, 16), &pa).is_err());
}

#[test]
fn csi_r_fits_a_smooth_field() {
    let mut rng = RngState::new(4);
    let codes = random_tensor(&[6, 4, 4, 2], -1.0, 1.0, &mut rng);
    let env = random_tensor(&[1, 4, 4, 2], -1.0, 1.0, &mut rng);
    let make = |n: usize, rng: &mut RngState| {
        let coords: Vec<[f64; 3]> = (0..n).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        let code_index: Vec<usize> = (0..n).map(|_| rng.below(6)).collect();
        let targets = coords
            .iter()
            .zip(&code_index)
            .map(|(c, &k)| 0.2 + 0.5 * c[0] * c[2] + 0.05 * k as f64)
            .collect();
        (coords, code_index, targets)
    };
    let (tc, ti, tt) = make(400, &mut rng);
    let (vc, vi, vt) = make(100, &mut rng);
    let train = RegressionSet {
        codes: &codes,
        code_index: ti,
        coords: tc,
        targets: tt,
    };
    let val = RegressionSet {
        codes: &codes,
        code_index: vi,
        coords: vc,
        targets: vt,
    };
    let cfg = CsiRConfig {
        d_embed: 4,
        hidden: vec![32, 16],
        schedule: schedule(30, 0.003, 32),
        ..CsiRConfig::default()
    };
    let mut csi = CsiR::new(cfg.clone(), [4, 4, 2], 9).unwrap();
    let before = csi.mse(&val, Some(&env)).unwrap();
    let log = csi.train(&train, &val, Some(&env), 9).unwrap();
    assert_eq!(log.len(), 30);
    let after = csi.mse(&val, Some(&env)).unwrap();
    assert!((after - log.last().unwrap().val_mse).abs() < 1e-12);
    assert!(after < 0.5 * before, "{before} -> {after}");
    let pred = csi.predict(&val, Some(&env)).unwrap();
    assert_eq!(pred.len(), 100);
    assert!(pred.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(pred, csi.predict(&val, Some(&env)).unwrap());

    let mut again = CsiR::new(cfg.clone(), [4, 4, 2], 9).unwrap();
    assert_eq!(again.train(&train, &val, Some(&env), 9).unwrap(), log);
    assert_eq!(again.store.fingerprint(), csi.store.fingerprint());

    let no_env = CsiR::new(CsiRConfig { use_mmr: false, ..cfg }, [4, 4, 2], 9).unwrap();
    assert_eq!(no_env.predict(&val, None).unwrap().len(), 100);
}
