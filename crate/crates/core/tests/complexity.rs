mod common;

use cf3d_core::complexity::{complexity_report, conv_macs, conv_transpose_macs, dense_macs, LayerKind};
use cf3d_core::*;
use common::*;

fn brute_conv(n: usize, c_in: usize, h_out: usize, w_out: usize, c_out: usize, k: usize) -> u64 {
    let mut count = 0u64;
    for _ in 0..n {
        for _ in 0..h_out {
            for _ in 0..w_out {
                for _ in 0..c_out {
                    for _ in 0..k * k {
                        for _ in 0..c_in {
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    count
}

/// Scatter form: every input pixel touches a `k×k×c_out` footprint.
fn brute_conv_t(c_in: usize, h_in: usize, w_in: usize, c_out: usize, k: usize) -> u64 {
    let mut count = 0u64;
    for _ in 0..h_in * w_in {
        for _ in 0..c_in {
            for _ in 0..k * k {
                for _ in 0..c_out {
                    count += 1;
                }
            }
        }
    }
    count
}

fn brute_dense(d_in: usize, d_out: usize) -> u64 {
    let mut count = 0u64;
    for _ in 0..d_out {
        for _ in 0..d_in {
            count += 1;
        }
    }
    count
}

#[test]
fn layer_formulas_match_loop_counts() {
    assert_eq!(conv_macs(1, 16, 64, 64, 32, 3), 18_874_368);
    assert_eq!(brute_conv(1, 16, 64, 64, 32, 3), 18_874_368);
    for (n, ci, h, w, co, k) in [(1, 1, 64, 64, 8, 3), (2, 3, 5, 7, 4, 1), (1, 2, 16, 16, 1, 7)] {
        assert_eq!(conv_macs(n, ci, h, w, co, k), brute_conv(n, ci, h, w, co, k));
    }
    assert_eq!(conv_transpose_macs(1, 8, 4, 4, 4, 3), brute_conv_t(8, 4, 4, 4, 3));
    assert_eq!(dense_macs(1, 67, 16), brute_dense(67, 16));
    assert_eq!(dense_macs(3, 5, 2), 3 * brute_dense(5, 2));
}

/// Independent walk of the architecture: counts for every layer the model runs.
fn expected(cfg: &PipelineConfig, grid: usize) -> (u64, u64) {
    let (mut total, mut inference) = (0u64, 0u64);
    let mut add = |m: u64, inf: bool| {
        total += m;
        if inf {
            inference += m;
        }
    };
    let c = &cfg.corr_mmf;
    let mut side = grid;
    let mut c_in = 1;
    for &co in &c.view_channels {
        side /= 2;
        add(2 * brute_conv(1, c_in, side, side, co, c.kernel), true);
        c_in = co;
    }
    if c.use_cam {
        add(2 * brute_conv(1, c_in, 1, 1, c_in, 1), true);
    }
    for &co in &c.fused_channels {
        side /= 2;
        add(brute_conv(1, c_in, side, side, co, c.kernel), true);
        c_in = co;
    }
    let lat_side = side;
    let lat_c = c_in;
    for &co in c.decoder_channels.iter().chain([2usize].iter()) {
        add(brute_conv_t(c_in, side, side, co, c.kernel), false);
        side *= 2;
        c_in = co;
    }

    let m = &cfg.mmr;
    let (mut side, mut c_in) = (grid, 1);
    for (i, &co) in m.channels.iter().enumerate() {
        if m.use_sam && (i == 0 || m.sam_every_block) {
            add(brute_conv(1, 2, side, side, 1, m.sam_kernel), true);
        }
        side /= 2;
        add(brute_conv(1, c_in, side, side, co, m.kernel), true);
        c_in = co;
    }
    for &co in m.decoder_channels.iter().chain([1usize].iter()) {
        add(brute_conv_t(c_in, side, side, co, m.kernel), false);
        side *= 2;
        c_in = co;
    }

    let r = &cfg.csi_r;
    let patches = (lat_side / r.patch) * (lat_side / r.patch);
    let views = 1 + r.use_mmr as usize;
    add(views as u64 * brute_conv(1, lat_c, lat_side / r.patch, lat_side / r.patch, r.d_embed, r.patch), true);
    let mut d_in = patches * r.d_embed * views + 3;
    for &d in r.hidden.iter().chain([1usize].iter()) {
        add(brute_dense(d_in, d), true);
        d_in = d;
    }
    (total, inference)
}

#[test]
fn report_matches_an_independent_walk() {
    let base = small_pipeline();
    let mut no_attention = base.clone();
    no_attention.corr_mmf.use_cam = false;
    no_attention.mmr.use_sam = false;
    no_attention.csi_r.use_mmr = false;
    let mut first_sam = base.clone();
    first_sam.mmr.sam_every_block = false;
    first_sam.csi_r.patch = 4;
    for cfg in [base, no_attention, first_sam] {
        let corr = CorrMmf::new(cfg.corr_mmf.clone(), (64, 64), 0).unwrap();
        let mmr = Mmr::new(cfg.mmr.clone(), (64, 64), 0).unwrap();
        let csi = CsiR::new(cfg.csi_r.clone(), corr.latent_shape(), 0).unwrap();
        let rep = complexity_report(&corr, &mmr, &csi);
        let (total, inference) = expected(&cfg, 64);
        assert_eq!(rep.total(), total);
        assert_eq!(rep.inference_total(), inference);
        assert_eq!(
            rep.stage_total("corr-mmf") + rep.stage_total("mmr") + rep.stage_total("csi-r"),
            total
        );
        assert!(rep.layers.iter().any(|l| l.kind == LayerKind::ConvTranspose && !l.inference));
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), rep.layers.len() + 1);
    }
}
