#![allow(dead_code)]

use cf3d_autodiff::{Graph, ParamStore, RngState, Tensor, Var};
use cf3d_core::pipeline::SceneAssets;
use cf3d_core::*;
use cf3d_radio::{generate_dataset, generate_scenario, ChannelConfig, DatasetConfig, SceneConfig};

pub fn schedule(epochs: usize, lr: f64, batch: usize) -> Schedule {
    Schedule {
        epochs,
        delay: epochs / 2,
        lr,
        batch,
    }
}

/// Two view blocks and one fused block: an 8×8 grid maps to a 1×1 latent.
pub fn toy_corr(lambda: f64) -> CorrMmfConfig {
    CorrMmfConfig {
        view_channels: vec![2, 3],
        fused_channels: vec![4],
        decoder_channels: vec![3, 2],
        kernel: 3,
        sigma_tam: 2.0,
        lambda,
        use_tam: true,
        use_cam: true,
        drop_ground: false,
        drop_footprint: false,
        schedule: schedule(2, 0.01, 4),
    }
}

/// A 64×64 scene with a 4×4×8 latent and 2×2 patches.
pub fn small_pipeline() -> PipelineConfig {
    PipelineConfig {
        corr_mmf: CorrMmfConfig {
            view_channels: vec![4, 8],
            fused_channels: vec![8, 8],
            decoder_channels: vec![8, 8, 4],
            sigma_tam: 8.0,
            schedule: schedule(2, 0.005, 8),
            ..CorrMmfConfig::default()
        },
        mmr: MmrConfig {
            channels: vec![4, 4, 8, 8],
            decoder_channels: vec![8, 4, 4],
            schedule: schedule(3, 0.005, 4),
            ..MmrConfig::default()
        },
        csi_r: CsiRConfig {
            d_embed: 4,
            hidden: vec![16, 8],
            dropout: 0.1,
            schedule: schedule(3, 0.002, 32),
            ..CsiRConfig::default()
        },
        mmf_train_centres: 12,
        mmf_val_centres: 4,
        baseline_fraction: 0.05,
        seed: 0,
    }
}

pub fn small_assets() -> SceneAssets {
    let scn = generate_scenario(&SceneConfig::new(7, 64, 0.3)).unwrap();
    let ds = generate_dataset(
        &scn,
        &ChannelConfig::default(),
        &DatasetConfig {
            n_aerial: 300,
            fractions: [0.7, 0.1, 0.2],
            seed: 1,
            jobs: 1,
        },
    )
    .unwrap();
    SceneAssets::new(scn, ds).unwrap()
}

/// Random views over a `w×h` grid with a random footprint.
pub fn random_views(w: usize, h: usize, rng: &mut RngState) -> SceneViews {
    let footprint: Vec<f64> = (0..w * h).map(|_| (rng.uniform() < 0.3) as u8 as f64).collect();
    SceneViews {
        w,
        h,
        ground: footprint.iter().map(|&f| if f > 0.0 { 0.0 } else { rng.uniform() }).collect(),
        height: footprint.iter().map(|&f| f * rng.uniform_range(5.0, 60.0)).collect(),
        footprint,
    }
}

pub fn random_centres(n: usize, w: usize, h: usize, rng: &mut RngState) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.uniform_range(0.0, w as f64), rng.uniform_range(0.0, h as f64)])
        .collect()
}

pub fn zero_params(store: &mut ParamStore) {
    for p in store.iter_mut() {
        if p.trainable {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
}

pub fn randomize_biases(store: &mut ParamStore, rng: &mut RngState) {
    for p in store.iter_mut() {
        if p.trainable && p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.uniform_range(0.05, 0.3) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            }
        }
    }
}

/// Largest relative error between the analytic parameter gradient of `loss`
/// and central differences, over `picks` random trainable entries.
pub fn param_gradcheck(
    store: &mut ParamStore,
    loss: impl Fn(&ParamStore, &mut Graph) -> Var,
    picks: usize,
    h: f64,
    rng: &mut RngState,
) -> f64 {
    let mut g = Graph::new();
    let l = loss(store, &mut g);
    store.zero_grad();
    g.backward_params(l, store).unwrap();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(store, &mut g);
        g.value(l).item()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..picks {
        let id = ids[rng.below(ids.len())];
        let j = rng.below(store.value(id).len());
        let x0 = store.value(id).data()[j];
        store.value_mut(id).data_mut()[j] = x0 + h;
        let up = eval(store);
        store.value_mut(id).data_mut()[j] = x0 - h;
        let down = eval(store);
        store.value_mut(id).data_mut()[j] = x0;
        analytic.push(store.grad(id).data()[j]);
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-300)
}
