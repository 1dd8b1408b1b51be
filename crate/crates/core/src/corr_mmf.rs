//! Two-view fusion encoder over the ground RSS grid and the footprint map.

use std::path::Path;

use cf3d_autodiff::nn::update_running_stats;
use cf3d_autodiff::{checkpoint, AdamState, BnRecord, Graph, LrSchedule, Norm, ParamStore, RngState, Tensor, Var};

use crate::config::CorrMmfConfig;
use crate::error::{CoreError, Result};
use crate::layers::{Cam, ConvBlock, Upsampler};
use crate::tam::tam_values;
use crate::views::SceneViews;

const BN_MOMENTUM: f64 = 0.9;
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct CorrMmf {
    pub config: CorrMmfConfig,
    pub store: ParamStore,
    pub grid: (usize, usize),
    e1: Vec<ConvBlock>,
    e2: Vec<ConvBlock>,
    cam: Option<Cam>,
    e3: Vec<ConvBlock>,
    decoder: Upsampler,
}

/// Loss terms of one batch, still attached to the graph.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_fusion: Var,
    pub l_cross: Var,
    pub l_corr: Var,
    pub l_obj: Var,
    /// Batch-averaged correlation of the two single-view latents.
    pub corr: f64,
    pub degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub l_fusion: f64,
    pub l_cross: f64,
    pub l_corr: f64,
    pub l_obj: f64,
    pub corr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_fusion: f64,
    pub l_cross: f64,
    pub l_corr: f64,
    pub l_obj: f64,
    pub val_l_obj: f64,
}

pub fn loss_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from("epoch,L_fusion,L_cross,L_corr,L_obj,val_L_obj\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.l_fusion, r.l_cross, r.l_corr, r.l_obj, r.val_l_obj
        ));
    }
    s
}

impl CorrMmf {
    pub fn new(config: CorrMmfConfig, grid: (usize, usize), seed: u64) -> Result<Self> {
        config.validate(grid)?;
        let mut rng = RngState::stream(seed, 0xc0);
        let mut store = ParamStore::new();
        let k = config.kernel;
        let sub = |store: &mut ParamStore, tag: &str, rng: &mut RngState| {
            let mut c_in = 1;
            config
                .view_channels
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let b = ConvBlock::new(store, &format!("{tag}.b{i}"), k, c_in, c, rng);
                    c_in = c;
                    b
                })
                .collect::<Vec<_>>()
        };
        let e1 = sub(&mut store, "e1", &mut rng);
        let e2 = sub(&mut store, "e2", &mut rng);
        let mut c_in = *config.view_channels.last().unwrap();
        let cam = config.use_cam.then(|| Cam::new(&mut store, "e3.cam", c_in, &mut rng));
        let e3 = config
            .fused_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let b = ConvBlock::new(&mut store, &format!("e3.b{i}"), k, c_in, c, &mut rng);
                c_in = c;
                b
            })
            .collect();
        let mut widths = vec![config.latent_channels()];
        widths.extend(&config.decoder_channels);
        widths.push(2);
        let decoder = Upsampler::new(&mut store, "dec", k, &widths, &mut rng);
        Ok(Self {
            config,
            store,
            grid,
            e1,
            e2,
            cam,
            e3,
            decoder,
        })
    }

    /// `[h, w, c]` of one latent code.
    pub fn latent_shape(&self) -> [usize; 3] {
        let f = 1 << self.config.depth();
        [self.grid.1 / f, self.grid.0 / f, self.config.latent_channels()]
    }

    /// Masked ground and footprint views `[n,h,w,1]` for the given centres.
    pub fn masked_views(&self, views: &SceneViews, centres: &[[f64; 2]]) -> Result<(Tensor, Tensor)> {
        if views.dims() != self.grid {
            return Err(CoreError::Usage(format!(
                "views are {:?}, model expects {:?}",
                views.dims(),
                self.grid
            )));
        }
        let (w, h) = self.grid;
        let mut g = Vec::with_capacity(centres.len() * w * h);
        let mut e = Vec::with_capacity(centres.len() * w * h);
        for &c in centres {
            let mask = if self.config.use_tam {
                tam_values(c, w, h, self.config.sigma_tam)
            } else {
                vec![1.0; w * h]
            };
            let keep_g = if self.config.drop_ground { 0.0 } else { 1.0 };
            let keep_e = if self.config.drop_footprint { 0.0 } else { 1.0 };
            g.extend(mask.iter().zip(&views.ground).map(|(m, v)| keep_g * m * v));
            e.extend(mask.iter().zip(&views.footprint).map(|(m, v)| keep_e * m * v));
        }
        let shape = [centres.len(), h, w, 1];
        Ok((Tensor::new(&shape, g)?, Tensor::new(&shape, e)?))
    }

    fn run_blocks(&self, blocks: &[ConvBlock], g: &mut Graph, mut x: Var, norm: &mut Norm) -> Result<Var> {
        for b in blocks {
            x = b.forward(g, &self.store, x, norm)?;
        }
        Ok(x)
    }

    pub fn encode_views(&self, g: &mut Graph, gv: Var, ev: Var, norm: &mut Norm) -> Result<(Var, Var)> {
        let o1 = self.run_blocks(&self.e1, g, gv, norm)?;
        let o2 = self.run_blocks(&self.e2, g, ev, norm)?;
        Ok((o1, o2))
    }

    pub fn fuse_encode(&self, g: &mut Graph, o1: Var, o2: Var, norm: &mut Norm) -> Result<Var> {
        let mut x = g.add(o1, o2)?;
        if let Some(cam) = &self.cam {
            x = cam.forward(g, &self.store, x)?;
        }
        self.run_blocks(&self.e3, g, x, norm)
    }

    pub fn virtual_decode(&self, g: &mut Graph, code: Var) -> Result<Var> {
        self.decoder.forward(g, &self.store, code)
    }

    /// Latent of the probe where one view is replaced by zeros after masking.
    /// The zero view is encoded once at batch size 1 and broadcast.
    fn probe(&self, g: &mut Graph, kept: Var, ground_kept: bool, norm: &mut Norm) -> Result<Var> {
        let s = g.shape(kept).to_vec();
        let zero = g.constant(Tensor::zeros(&[1, s[1], s[2], 1]));
        let (o1, o2) = if ground_kept {
            let o1 = self.run_blocks(&self.e1, g, kept, norm)?;
            let z = self.run_blocks(&self.e2, g, zero, norm)?;
            let zs = g.shape(o1).to_vec();
            (o1, g.broadcast_to(z, &zs)?)
        } else {
            let z = self.run_blocks(&self.e1, g, zero, norm)?;
            let o2 = self.run_blocks(&self.e2, g, kept, norm)?;
            let zs = g.shape(o2).to_vec();
            (g.broadcast_to(z, &zs)?, o2)
        };
        self.fuse_encode(g, o1, o2, norm)
    }

    fn objective(&self, g: &mut Graph, gt: Tensor, et: Tensor, records: Option<&mut Vec<BnRecord>>) -> Result<LossVars> {
        let gv = g.constant(gt);
        let ev = g.constant(et);
        let train = records.is_some();
        let mut unused = Vec::new();
        let records = records.unwrap_or(&mut unused);
        let full = {
            let mut norm = if train { Norm::Train(records) } else { Norm::Eval };
            let (o1, o2) = self.encode_views(g, gv, ev, &mut norm)?;
            self.fuse_encode(g, o1, o2, &mut norm)?
        };
        let stats: &[BnRecord] = records;
        let probe_norm = |g: &mut Graph, kept: Var, ground: bool| -> Result<Var> {
            let mut norm = if train { Norm::replay(stats) } else { Norm::Eval };
            self.probe(g, kept, ground, &mut norm)
        };
        let lat_g = probe_norm(g, gv, true)?;
        let lat_e = probe_norm(g, ev, false)?;

        let target = g.concat(&[gv, ev], 3)?;
        let recon = self.virtual_decode(g, full)?;
        let diff = g.sub(recon, target)?;
        let norms = g.row_norms(diff)?;
        let l_fusion = g.mean(norms);

        // each single-view probe reconstructs the view it never saw
        let from_e = self.virtual_decode(g, lat_e)?;
        let from_e = g.slice(from_e, 3, 0, 1)?;
        let d_g = g.sub(from_e, gv)?;
        let from_g = self.virtual_decode(g, lat_g)?;
        let from_g = g.slice(from_g, 3, 1, 1)?;
        let d_e = g.sub(from_g, ev)?;
        let n_g = g.row_norms(d_g)?;
        let n_g = g.mean(n_g);
        let n_e = g.row_norms(d_e)?;
        let n_e = g.mean(n_e);
        let l_cross = g.add(n_g, n_e)?;

        let a = g.flatten(lat_g)?;
        let b = g.flatten(lat_e)?;
        let (cos, flags) = g.centered_cosine(a, b)?;
        let corr_v = g.mean(cos);
        let corr = g.value(corr_v).item();
        let l_corr = g.affine(corr_v, -1.0, 1.0);

        let rec = g.add(l_fusion, l_cross)?;
        let weighted = g.scale(l_corr, self.config.lambda);
        let l_obj = g.add(rec, weighted)?;
        Ok(LossVars {
            l_fusion,
            l_cross,
            l_corr,
            l_obj,
            corr,
            degenerate: flags.iter().filter(|&&f| f).count(),
        })
    }

    /// Train-mode losses; batch statistics are appended to `records`.
    pub fn losses_train(
        &self,
        g: &mut Graph,
        views: &SceneViews,
        centres: &[[f64; 2]],
        records: &mut Vec<BnRecord>,
    ) -> Result<LossVars> {
        records.clear();
        let (gt, et) = self.masked_views(views, centres)?;
        self.objective(g, gt, et, Some(records))
    }

    pub fn losses_eval(&self, g: &mut Graph, views: &SceneViews, centres: &[[f64; 2]]) -> Result<LossVars> {
        let (gt, et) = self.masked_views(views, centres)?;
        self.objective(g, gt, et, None)
    }

    /// Eval-mode loss values averaged over `centres` in fixed chunks.
    pub fn evaluate(&self, views: &SceneViews, centres: &[[f64; 2]]) -> Result<LossValues> {
        let mut acc = [0.0; 5];
        for chunk in centres.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let l = self.losses_eval(&mut g, views, chunk)?;
            let w = chunk.len() as f64;
            for (a, v) in acc.iter_mut().zip([
                g.value(l.l_fusion).item(),
                g.value(l.l_cross).item(),
                g.value(l.l_corr).item(),
                g.value(l.l_obj).item(),
                l.corr,
            ]) {
                *a += w * v;
            }
        }
        let n = centres.len().max(1) as f64;
        Ok(LossValues {
            l_fusion: acc[0] / n,
            l_cross: acc[1] / n,
            l_corr: acc[2] / n,
            l_obj: acc[3] / n,
            corr: acc[4] / n,
        })
    }

    /// Adam with the configured linear-decay schedule. Returns one log row per epoch.
    pub fn train(
        &mut self,
        views: &SceneViews,
        train: &[[f64; 2]],
        val: &[[f64; 2]],
        seed: u64,
    ) -> Result<Vec<EpochLog>> {
        if train.len() < 2 {
            return Err(CoreError::Usage("corr-mmf training needs at least two mask centres".into()));
        }
        let sch = self.config.schedule;
        let lr = LrSchedule::new(sch.lr, sch.epochs, sch.delay)?;
        let mut adam = AdamState::new(&self.store, sch.lr);
        let mut rng = RngState::stream(seed, 0xc1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut records = Vec::new();
        let mut log = Vec::with_capacity(sch.epochs);
        for epoch in 0..sch.epochs {
            rng.shuffle(&mut order);
            adam.lr = lr.lr(epoch);
            let mut acc = [0.0; 4];
            for (bi, idx) in batches(&order, sch.batch).iter().enumerate() {
                let centres: Vec<[f64; 2]> = idx.iter().map(|&i| train[i]).collect();
                let mut g = Graph::new();
                let l = self.losses_train(&mut g, views, &centres, &mut records)?;
                let vals = [l.l_fusion, l.l_cross, l.l_corr, l.l_obj].map(|v| g.value(v).item());
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::NonFinite {
                        stage: "corr-mmf",
                        epoch,
                        batch: bi,
                        detail: format!(
                            "L_fusion={} L_cross={} L_corr={} L_obj={}",
                            vals[0], vals[1], vals[2], vals[3]
                        ),
                    });
                }
                g.backward_params(l.l_obj, &mut self.store)?;
                adam.step(&mut self.store)?;
                self.store.zero_grad();
                update_running_stats(&mut self.store, &records, BN_MOMENTUM);
                for (a, v) in acc.iter_mut().zip(vals) {
                    *a += v * idx.len() as f64;
                }
            }
            let n = train.len() as f64;
            let val_l_obj = if val.is_empty() {
                f64::NAN
            } else {
                self.evaluate(views, val)?.l_obj
            };
            log.push(EpochLog {
                epoch: epoch + 1,
                l_fusion: acc[0] / n,
                l_cross: acc[1] / n,
                l_corr: acc[2] / n,
                l_obj: acc[3] / n,
                val_l_obj,
            });
        }
        Ok(log)
    }

    /// Eval-mode latent codes `[n, h, w, c]`.
    pub fn encode(&self, views: &SceneViews, centres: &[[f64; 2]]) -> Result<Tensor> {
        let [lh, lw, lc] = self.latent_shape();
        let mut data = Vec::with_capacity(centres.len() * lh * lw * lc);
        for chunk in centres.chunks(EVAL_CHUNK) {
            let (gt, et) = self.masked_views(views, chunk)?;
            let mut g = Graph::new();
            let gv = g.constant(gt);
            let ev = g.constant(et);
            let (o1, o2) = self.encode_views(&mut g, gv, ev, &mut Norm::Eval)?;
            let z = self.fuse_encode(&mut g, o1, o2, &mut Norm::Eval)?;
            data.extend_from_slice(g.value(z).data());
        }
        Ok(Tensor::new(&[centres.len(), lh, lw, lc], data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    /// Rebuilds the architecture from `config` and loads weights from `path`.
    pub fn load(config: CorrMmfConfig, grid: (usize, usize), path: &Path) -> Result<Self> {
        let mut m = Self::new(config, grid, 0)?;
        m.store.load_from(&checkpoint::load(path)?)?;
        Ok(m)
    }
}

/// Index batches of at most `size`; a trailing singleton joins the previous
/// batch because train-mode batch norm needs two samples.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}
