mod common;

use cf3d_autodiff::gradcheck::{check, random_tensor};
use cf3d_autodiff::{centered_cosine, Graph, Mode, Norm, ParamStore, RngState, Tensor};
use cf3d_core::layers::{Cam, ConvBlock, Sam};
use cf3d_core::tam::{cell_centre, tam_values};
use cf3d_core::*;
use common::*;

fn at(v: &[f64], w: usize, col: usize, row: usize) -> f64 {
    v[row * w + col]
}

#[test]
fn tam_peaks_at_the_cell_and_decays_radially() {
    let (w, h, sigma) = (24, 20, 3.0);
    let xy = [10.2, 10.7];
    assert_eq!(cell_centre(xy, w, h), [10.5, 10.5]);
    let v = tam_values(xy, w, h, sigma);
    assert_eq!(v.len(), w * h);
    assert_eq!(at(&v, w, 10, 10), 1.0);
    let e = (-0.5f64).exp();
    for (c, r) in [(13, 10), (7, 10), (10, 13), (10, 7)] {
        assert!((at(&v, w, c, r) - e).abs() < 1e-12);
        assert!((at(&v, w, c, r) - 0.60653).abs() < 1e-5);
    }
    assert!(v.iter().all(|&m| m > 0.0 && m <= 1.0));
    for d in 0..9 {
        assert!(at(&v, w, 10 + d + 1, 10) < at(&v, w, 10 + d, 10));
    }
    assert_eq!(at(&v, w, 12, 12), at(&v, w, 8, 8));

    let clamped = cell_centre([-3.0, 99.0], w, h);
    assert_eq!(clamped, [0.5, h as f64 - 0.5]);

    let m = tam_masks(xy, w, h, sigma).unwrap();
    assert_eq!(m.m_g.shape(), &[h, w, 1]);
    assert_eq!(m.m_g.data(), v.as_slice());
    assert!(matches!(tam_masks(xy, w, h, 0.0), Err(CoreError::Config(_))));
    assert!(matches!(tam_masks(xy, w, h, -1.0), Err(CoreError::Config(_))));
}

#[test]
fn cam_gate_is_a_bounded_channel_weighting() {
    let mut rng = RngState::new(11);
    let mut store = ParamStore::new();
    let c = 5;
    let cam = Cam::new(&mut store, "cam", c, &mut rng);
    let x = random_tensor(&[2, 6, 6, c], -2.0, 2.0, &mut rng);

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gate = cam.gate(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(gate).shape(), &[2, 1, 1, c]);
    assert!(g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));

    // permuting channels together with the shared weights permutes the gate
    let perm = [3, 0, 4, 1, 2];
    let mut permuted = store.clone();
    let k = store.value(cam.shared.kernel).clone();
    let b = store.value(cam.shared.bias.unwrap()).clone();
    for i in 0..c {
        for o in 0..c {
            permuted.value_mut(cam.shared.kernel).data_mut()[i * c + o] = k.data()[perm[i] * c + perm[o]];
        }
        permuted.value_mut(cam.shared.bias.unwrap()).data_mut()[i] = b.data()[perm[i]];
    }
    let xp: Vec<f64> = x.data().chunks(c).flat_map(|px| perm.iter().map(|&p| px[p]).collect::<Vec<_>>()).collect();
    let mut g2 = Graph::new();
    let xpv = g2.constant(Tensor::new(x.shape(), xp).unwrap());
    let gate_p = cam.gate(&mut g2, &permuted, xpv).unwrap();
    let (a, bp) = (g.value(gate).data(), g2.value(gate_p).data());
    for n in 0..2 {
        for i in 0..c {
            assert!((bp[n * c + i] - a[n * c + perm[i]]).abs() < 1e-12);
        }
    }

    zero_params(&mut store);
    let mut g3 = Graph::new();
    let xv = g3.constant(x.clone());
    let gate = cam.gate(&mut g3, &store, xv).unwrap();
    assert!(g3.value(gate).data().iter().all(|&v| v == 0.5));
    let out = cam.forward(&mut g3, &store, xv).unwrap();
    for (o, i) in g3.value(out).data().iter().zip(x.data()) {
        assert_eq!(*o, i / 2.0);
    }
}

#[test]
fn sam_gate_is_bounded_and_shift_equivariant() {
    let mut rng = RngState::new(12);
    let mut store = ParamStore::new();
    let sam = Sam::new(&mut store, "sam", 3, &mut rng);
    let (n, c) = (12, 3);
    let x = random_tensor(&[1, n, n, c], -1.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gate = sam.gate(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(gate).shape(), &[1, n, n, 1]);
    let gv = g.value(gate).data().to_vec();
    assert!(gv.iter().all(|&v| v > 0.0 && v < 1.0));
    let out = sam.forward(&mut g, &store, xv).unwrap();
    for (o, i) in g.value(out).data().iter().zip(x.data()) {
        assert!(o.abs() <= i.abs());
    }

    // shift the input two pixels right; interior gates shift with it
    let mut shifted = vec![0.0; x.len()];
    for r in 0..n {
        for col in 0..n - 2 {
            for ch in 0..c {
                shifted[(r * n + col + 2) * c + ch] = x.data()[(r * n + col) * c + ch];
            }
        }
    }
    let mut g2 = Graph::new();
    let sv = g2.constant(Tensor::new(x.shape(), shifted).unwrap());
    let gs = sam.gate(&mut g2, &store, sv).unwrap();
    let gs = g2.value(gs).data();
    for r in 1..n - 1 {
        for col in 1..n - 3 {
            assert!((gs[r * n + col + 2] - gv[r * n + col]).abs() < 1e-12);
        }
    }

    zero_params(&mut store);
    let mut g3 = Graph::new();
    let xv = g3.constant(x);
    let gate = sam.gate(&mut g3, &store, xv).unwrap();
    assert!(g3.value(gate).data().iter().all(|&v| v == 0.5));
}

#[test]
fn correlation_examples() {
    let c = |a: &[f64], b: &[f64]| centered_cosine(a, b).unwrap();
    assert!((c(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
    let x = [0.3, -1.2, 2.5, 0.7, -0.1];
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((c(&x, &x) - 1.0).abs() < 1e-12);
    assert!((c(&x, &neg) + 1.0).abs() < 1e-12);
    let y = [1.0, 0.2, -0.4, 2.2, 0.9];
    let y2: Vec<f64> = y.iter().map(|v| 3.5 * v - 7.0).collect();
    assert!((c(&x, &y) - c(&x, &y2)).abs() < 1e-12);
    assert!(centered_cosine(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_none());

    // batched op: a constant row is flagged and contributes 0
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 4.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 3], vec![2.0, 4.0, 6.0, 1.0, 0.0, 2.0]).unwrap());
    let (cos, flags) = g.centered_cosine(a, b).unwrap();
    assert_eq!(flags, vec![false, true]);
    let v = g.value(cos).data();
    assert!((v[0] - 1.0).abs() < 1e-12);
    assert_eq!(v[1], 0.0);
}

fn loss_values(model: &CorrMmf, views: &SceneViews, centres: &[[f64; 2]], train: bool) -> [f64; 5] {
    let mut g = Graph::new();
    let mut rec = Vec::new();
    let l = if train {
        model.losses_train(&mut g, views, centres, &mut rec).unwrap()
    } else {
        model.losses_eval(&mut g, views, centres).unwrap()
    };
    [
        g.value(l.l_fusion).item(),
        g.value(l.l_cross).item(),
        g.value(l.l_corr).item(),
        g.value(l.l_obj).item(),
        l.corr,
    ]
}

#[test]
fn correlation_loss_stays_in_range_and_objective_composes() {
    let mut rng = RngState::new(5);
    for draw in 0..1000u64 {
        let model = CorrMmf::new(toy_corr(0.0), (8, 8), draw).unwrap();
        let views = random_views(8, 8, &mut rng);
        let centres = random_centres(3, 8, 8, &mut rng);
        let [lf, lc, lr, lo, corr] = loss_values(&model, &views, &centres, draw % 2 == 0);
        assert!((0.0..=2.0).contains(&lr), "L_corr {lr}");
        assert!((-1.0..=1.0).contains(&corr));
        assert!((lr - (1.0 - corr)).abs() < 1e-12);
        assert!(lf >= 0.0 && lc >= 0.0);
        assert_eq!(lo, lf + lc);
    }
}

#[test]
fn objective_is_monotone_in_lambda() {
    let mut rng = RngState::new(6);
    let views = random_views(8, 8, &mut rng);
    let centres = random_centres(4, 8, 8, &mut rng);
    let mut last = f64::NEG_INFINITY;
    let mut base = None;
    for lambda in [0.0, 0.5, 1.0, 3.0, 10.0] {
        let model = CorrMmf::new(toy_corr(lambda), (8, 8), 9).unwrap();
        let [lf, lc, lr, lo, _] = loss_values(&model, &views, &centres, true);
        let b = *base.get_or_insert((lf, lc, lr));
        assert_eq!((lf, lc, lr), b);
        assert!((lo - (lf + lc + lambda * lr)).abs() < 1e-12);
        assert!(lo >= last);
        last = lo;
    }
}

#[test]
fn corr_mmf_shapes_and_zero_paths() {
    let mut rng = RngState::new(7);
    let mut model = CorrMmf::new(toy_corr(1.0), (8, 8), 1).unwrap();
    assert_eq!(model.latent_shape(), [1, 1, 4]);
    let views = random_views(8, 8, &mut rng);
    let centres = random_centres(3, 8, 8, &mut rng);
    assert_eq!(model.encode(&views, &centres).unwrap().shape(), &[3, 1, 1, 4]);

    // without TAM the views pass through untouched
    let mut plain = toy_corr(1.0);
    plain.use_tam = false;
    let unmasked = CorrMmf::new(plain, (8, 8), 1).unwrap();
    let (gt, et) = unmasked.masked_views(&views, &centres[..1]).unwrap();
    assert_eq!(gt.data(), views.ground.as_slice());
    assert_eq!(et.data(), views.footprint.as_slice());

    // a zero view gives a zero feature map at initialisation
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[2, 8, 8, 1]));
    let (o1, o2) = model.encode_views(&mut g, z, z, &mut Norm::Eval).unwrap();
    assert!(g.value(o1).data().iter().all(|&v| v == 0.0));
    assert!(g.value(o2).data().iter().all(|&v| v == 0.0));
    let code = g.constant(Tensor::zeros(&[2, 1, 1, 4]));
    let dec = model.virtual_decode(&mut g, code).unwrap();
    assert_eq!(g.value(dec).shape(), &[2, 8, 8, 2]);
    assert!(g.value(dec).data().iter().all(|&v| v == 0.0));

    // fusion is symmetric in its two inputs
    let a = g.constant(random_tensor(&[2, 2, 2, 3], -1.0, 1.0, &mut rng));
    let b = g.constant(random_tensor(&[2, 2, 2, 3], -1.0, 1.0, &mut rng));
    let ab = model.fuse_encode(&mut g, a, b, &mut Norm::Eval).unwrap();
    let ba = model.fuse_encode(&mut g, b, a, &mut Norm::Eval).unwrap();
    assert_eq!(g.value(ab).data(), g.value(ba).data());

    let wrong = random_views(16, 8, &mut rng);
    assert!(matches!(model.masked_views(&wrong, &centres), Err(CoreError::Usage(_))));

    let mut bad = views.clone();
    bad.ground[0] = f64::NAN;
    bad.ground[9] = f64::NAN;
    let all = random_centres(8, 8, 8, &mut rng);
    let err = model.train(&bad, &all, &all[..2], 3).unwrap_err();
    assert!(matches!(err, CoreError::NonFinite { .. }), "{err}");
}

#[test]
fn config_contracts() {
    assert!(matches!(CorrMmf::new(toy_corr(1.0), (12, 8), 0), Err(CoreError::Config(_))));
    let mut c = toy_corr(1.0);
    c.sigma_tam = 0.0;
    assert!(CorrMmf::new(c, (8, 8), 0).is_err());
    let mut c = toy_corr(1.0);
    c.decoder_channels.pop();
    assert!(CorrMmf::new(c, (8, 8), 0).is_err());
    let mut s = toy_corr(1.0);
    s.schedule.epochs = 0;
    assert!(CorrMmf::new(s, (8, 8), 0).is_err());

    let desk = PipelineConfig::desk();
    desk.validate((128, 128)).unwrap();
    let mut p = desk.clone();
    p.csi_r.patch = 3;
    assert!(matches!(p.validate((128, 128)), Err(CoreError::Config(_))));
    let mut p = desk.clone();
    p.mmr.channels[4] = 16;
    assert!(p.validate((128, 128)).is_err());
    PipelineConfig::default().validate((128, 128)).unwrap();
}

#[test]
fn encoder_gradient_reaches_both_views() {
    let mut rng = RngState::new(21);
    let model = CorrMmf::new(toy_corr(1.0), (8, 8), 4).unwrap();
    let gv = random_tensor(&[2, 8, 8, 1], 0.0, 1.0, &mut rng);
    let ev = random_tensor(&[2, 8, 8, 1], 0.0, 1.0, &mut rng);
    let f = |g: &mut Graph, v: &[cf3d_autodiff::Var]| {
        let (o1, o2) = model.encode_views(g, v[0], v[1], &mut Norm::Eval).unwrap();
        let fused = model.fuse_encode(g, o1, o2, &mut Norm::Eval).unwrap();
        Ok(g.sum(fused))
    };
    let r = check(f, &[gv.clone(), ev.clone()], 1e-5).unwrap();
    assert!(r.max_rel_err() < 1e-4, "{:?}", r.rel_err);

    let mut g = Graph::new();
    let a = g.leaf(gv, true);
    let b = g.leaf(ev, true);
    let (o1, o2) = model.encode_views(&mut g, a, b, &mut Norm::Eval).unwrap();
    let s = g.add(o1, o2).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    assert!(g.grad(a).data().iter().any(|&v| v != 0.0));
    assert!(g.grad(b).data().iter().any(|&v| v != 0.0));
}

#[test]
fn objective_parameter_gradient_matches_finite_differences() {
    let mut rng = RngState::new(22);
    let views = random_views(8, 8, &mut rng);
    let centres = random_centres(4, 8, 8, &mut rng);
    let mut model = CorrMmf::new(toy_corr(1.0), (8, 8), 5).unwrap();
    // zero-view probes would otherwise sit exactly on the ReLU kink
    randomize_biases(&mut model.store, &mut rng);
    let probe = model.clone();
    let err = param_gradcheck(
        &mut model.store,
        |store, g| {
            let mut m = probe.clone();
            m.store = store.clone();
            m.losses_eval(g, &views, &centres).unwrap().l_obj
        },
        40,
        1e-5,
        &mut rng,
    );
    assert!(err < 1e-3, "rel err {err}");
}

#[test]
fn attention_block_gradient_matches_finite_differences() {
    let mut rng = RngState::new(23);
    let mut store = ParamStore::new();
    let sam = Sam::new(&mut store, "sam", 3, &mut rng);
    let block = ConvBlock::new(&mut store, "b", 3, 2, 3, &mut rng);
    let x = random_tensor(&[2, 6, 6, 2], -1.0, 1.0, &mut rng);
    let f = |g: &mut Graph, v: &[cf3d_autodiff::Var]| {
        let y = sam.forward(g, &store, v[0]).unwrap();
        let mut rec = Vec::new();
        Ok(block.forward(g, &store, y, &mut Norm::Train(&mut rec)).unwrap())
    };
    let r = check(f, &[x], 1e-5).unwrap();
    assert!(r.max_rel_err() < 1e-4, "{:?}", r.rel_err);
}

#[test]
fn patch_embedding_and_regression_head() {
    let mut rng = RngState::new(24);
    let cfg = CsiRConfig {
        d_embed: 3,
        hidden: vec![5],
        dropout: 0.0,
        ..CsiRConfig::default()
    };
    let csi = CsiR::new(cfg.clone(), [4, 4, 2], 1).unwrap();
    assert_eq!(csi.n_patches(), 4);
    let lat = random_tensor(&[2, 4, 4, 2], -1.0, 1.0, &mut rng);
    let f = |g: &mut Graph, v: &[cf3d_autodiff::Var]| Ok(csi.patch_embed(g, v[0], false).unwrap());
    let r = check(f, &[lat.clone()], 1e-5).unwrap();
    assert!(r.max_rel_err() < 1e-6, "{:?}", r.rel_err);

    let mut g = Graph::new();
    let lv = g.constant(lat.clone());
    let emb = csi.patch_embed(&mut g, lv, false).unwrap();
    assert_eq!(g.value(emb).shape(), &[2, 12]);
    let env = csi.patch_embed(&mut g, lv, true).unwrap();
    let coords = g.constant(Tensor::new(&[2, 3], vec![0.1, 0.5, 0.2, 0.9, 0.3, 1.0]).unwrap());
    let out = csi.regress(&mut g, emb, Some(env), coords, Mode::Eval, &mut rng).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 1]);
    assert!(g.value(out).data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let mut zeroed = csi.clone();
    zero_params(&mut zeroed.store);
    let mut g = Graph::new();
    let lv = g.constant(lat);
    let emb = zeroed.patch_embed(&mut g, lv, false).unwrap();
    let env = zeroed.patch_embed(&mut g, lv, true).unwrap();
    let coords = g.constant(Tensor::new(&[1, 3], vec![0.4, 0.4, 0.4]).unwrap().broadcast_to(&[2, 3]).unwrap());
    let out = zeroed.regress(&mut g, emb, Some(env), coords, Mode::Eval, &mut rng).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.5));

    // one patch covering the whole latent, or one per cell
    let whole = CsiR::new(CsiRConfig { patch: 4, ..cfg.clone() }, [4, 4, 2], 1).unwrap();
    assert_eq!(whole.n_patches(), 1);
    let cells = CsiR::new(CsiRConfig { patch: 1, ..cfg.clone() }, [4, 4, 2], 1).unwrap();
    assert_eq!(cells.n_patches(), 16);
    assert!(matches!(
        CsiR::new(CsiRConfig { patch: 3, ..cfg }, [4, 4, 2], 1),
        Err(CoreError::Config(_))
    ));
}

#[test]
fn coordinate_normalisation() {
    let n = normalize_coords([32.0, 16.0, 25.0], 64, 32).unwrap();
    assert_eq!(n, [0.5, 0.5, 0.0]);
    let top = normalize_coords([64.0, 32.0, 80.0], 64, 32).unwrap();
    assert_eq!(top, [1.0, 1.0, 1.0]);
    assert!(matches!(normalize_coords([10.0, 10.0, 90.0], 64, 32), Err(CoreError::Range { .. })));
    assert!(matches!(normalize_coords([-1.0, 10.0, 30.0], 64, 32), Err(CoreError::Range { .. })));
    assert!(matches!(normalize_coords([10.0, 10.0, 20.0], 64, 32), Err(CoreError::Range { .. })));
}
