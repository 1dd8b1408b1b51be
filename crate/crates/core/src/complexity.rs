//! Multiply-accumulate counts of the configured networks.
//!
//! A convolution producing an `h×w×c_out` map from `c_in` channels with a
//! `k×k` kernel costs `n·c_in·h·w·c_out·k²`; a transposed convolution is
//! charged on its input grid, and a dense layer costs `n·d_in·d_out`.

use serde::Serialize;

use crate::corr_mmf::CorrMmf;
use crate::csi_r::CsiR;
use crate::mmr::Mmr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub stage: &'static str,
    pub name: String,
    pub kind: LayerKind,
    pub macs: u64,
    /// False for layers that only exist for training feedback.
    pub inference: bool,
}

pub fn conv_macs(n: usize, c_in: usize, h_out: usize, w_out: usize, c_out: usize, k: usize) -> u64 {
    (n * c_in * h_out * w_out * c_out * k * k) as u64
}

pub fn conv_transpose_macs(n: usize, c_in: usize, h_in: usize, w_in: usize, c_out: usize, k: usize) -> u64 {
    (n * c_in * h_in * w_in * c_out * k * k) as u64
}

pub fn dense_macs(n: usize, d_in: usize, d_out: usize) -> u64 {
    (n * d_in * d_out) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub layers: Vec<LayerCost>,
}

impl ComplexityReport {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn inference_total(&self) -> u64 {
        self.layers.iter().filter(|l| l.inference).map(|l| l.macs).sum()
    }

    pub fn stage_total(&self, stage: &str) -> u64 {
        self.layers.iter().filter(|l| l.stage == stage).map(|l| l.macs).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,layer,kind,macs,inference\n");
        for l in &self.layers {
            s.push_str(&format!("{},{},{:?},{},{}\n", l.stage, l.name, l.kind, l.macs, l.inference));
        }
        s
    }
}

struct Walker {
    stage: &'static str,
    layers: Vec<LayerCost>,
}

impl Walker {
    fn push(&mut self, name: String, kind: LayerKind, macs: u64, inference: bool) {
        self.layers.push(LayerCost {
            stage: self.stage,
            name,
            kind,
            macs,
            inference,
        });
    }

    /// Stride-2 encoder blocks starting from an `h×w×c` map; returns the final map.
    fn encoder(&mut self, tag: &str, widths: &[usize], k: usize, mut hwc: [usize; 3]) -> [usize; 3] {
        for (i, &c) in widths.iter().enumerate() {
            let (h, w) = (hwc[0].div_ceil(2), hwc[1].div_ceil(2));
            self.push(format!("{tag}.b{i}"), LayerKind::Conv, conv_macs(1, hwc[2], h, w, c, k), true);
            hwc = [h, w, c];
        }
        hwc
    }

    fn decoder(&mut self, widths: &[usize], k: usize, mut hw: [usize; 2]) {
        for (i, c) in widths.windows(2).enumerate() {
            self.push(
                format!("dec.up{i}"),
                LayerKind::ConvTranspose,
                conv_transpose_macs(1, c[0], hw[0], hw[1], c[1], k),
                false,
            );
            hw = [hw[0] * 2, hw[1] * 2];
        }
    }
}

/// Per-query counts (`N = 1`) of every layer of the three stages.
pub fn complexity_report(corr: &CorrMmf, mmr: &Mmr, csi: &CsiR) -> ComplexityReport {
    let (gw, gh) = corr.grid;
    let cfg = &corr.config;
    let mut w = Walker {
        stage: "corr-mmf",
        layers: Vec::new(),
    };
    w.encoder("e1", &cfg.view_channels, cfg.kernel, [gh, gw, 1]);
    let fused = w.encoder("e2", &cfg.view_channels, cfg.kernel, [gh, gw, 1]);
    if cfg.use_cam {
        let c = fused[2];
        w.push("e3.cam".into(), LayerKind::Conv, 2 * conv_macs(1, c, 1, 1, c, 1), true);
    }
    let lat = w.encoder("e3", &cfg.fused_channels, cfg.kernel, fused);
    let mut widths = vec![lat[2]];
    widths.extend(&cfg.decoder_channels);
    widths.push(2);
    w.decoder(&widths, cfg.kernel, [lat[0], lat[1]]);

    w.stage = "mmr";
    let m = &mmr.config;
    let mut hwc = [gh, gw, 1];
    for (i, &c) in m.channels.iter().enumerate() {
        if m.use_sam && (i == 0 || m.sam_every_block) {
            w.push(
                format!("enc.b{i}.sam"),
                LayerKind::Conv,
                conv_macs(1, 2, hwc[0], hwc[1], 1, m.sam_kernel),
                true,
            );
        }
        hwc = w.encoder(&format!("enc.b{i}"), &[c], m.kernel, hwc);
        w.layers.last_mut().unwrap().name = format!("enc.b{i}");
    }
    let mut widths = vec![hwc[2]];
    widths.extend(&m.decoder_channels);
    widths.push(1);
    w.decoder(&widths, m.kernel, [hwc[0], hwc[1]]);

    w.stage = "csi-r";
    let c = &csi.config;
    let [lh, lw, lc] = csi.latent;
    let (ph, pw) = (lh / c.patch, lw / c.patch);
    let per = ph * pw * c.d_embed;
    w.push("embed_fusion".into(), LayerKind::Conv, conv_macs(1, lc, ph, pw, c.d_embed, c.patch), true);
    if c.use_mmr {
        w.push("embed_env".into(), LayerKind::Conv, conv_macs(1, lc, ph, pw, c.d_embed, c.patch), true);
    }
    let mut d_in = per * (1 + c.use_mmr as usize) + 3;
    for (i, &d) in c.hidden.iter().enumerate() {
        w.push(format!("fc{i}"), LayerKind::Dense, dense_macs(1, d_in, d), true);
        d_in = d;
    }
    w.push("head".into(), LayerKind::Dense, dense_macs(1, d_in, 1), true);
    ComplexityReport { layers: w.layers }
}
