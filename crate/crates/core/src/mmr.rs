//! Autoencoder over the vertical environment map with spatial attention.

use std::path::Path;

use cf3d_autodiff::nn::update_running_stats;
use cf3d_autodiff::{checkpoint, AdamState, Graph, LrSchedule, Norm, ParamStore, RngState, Tensor, Var};

use crate::config::MmrConfig;
use crate::corr_mmf::batches;
use crate::error::{CoreError, Result};
use crate::layers::{ConvBlock, Sam, Upsampler};

const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct Mmr {
    pub config: MmrConfig,
    pub store: ParamStore,
    pub grid: (usize, usize),
    sams: Vec<Option<Sam>>,
    blocks: Vec<ConvBlock>,
    decoder: Upsampler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrEpoch {
    pub epoch: usize,
    pub loss: f64,
}

pub fn loss_csv(rows: &[MmrEpoch]) -> String {
    let mut s = String::from("epoch,loss\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.epoch, r.loss));
    }
    s
}

impl Mmr {
    pub fn new(config: MmrConfig, grid: (usize, usize), seed: u64) -> Result<Self> {
        config.validate(grid)?;
        let mut rng = RngState::stream(seed, 0x33);
        let mut store = ParamStore::new();
        let mut sams = Vec::new();
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            let with_sam = config.use_sam && (i == 0 || config.sam_every_block);
            sams.push(with_sam.then(|| Sam::new(&mut store, &format!("enc.b{i}.sam"), config.sam_kernel, &mut rng)));
            blocks.push(ConvBlock::new(&mut store, &format!("enc.b{i}"), config.kernel, c_in, c, &mut rng));
            c_in = c;
        }
        let mut widths = vec![c_in];
        widths.extend(&config.decoder_channels);
        widths.push(1);
        let decoder = Upsampler::new(&mut store, "dec", config.kernel, &widths, &mut rng);
        Ok(Self {
            config,
            store,
            grid,
            sams,
            blocks,
            decoder,
        })
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        let f = 1 << self.config.channels.len();
        [self.grid.1 / f, self.grid.0 / f, *self.config.channels.last().unwrap()]
    }

    /// Height maps in metres to a scaled `[n,h,w,1]` tensor.
    pub fn input(&self, maps: &[&[f64]]) -> Result<Tensor> {
        let (w, h) = self.grid;
        let mut data = Vec::with_capacity(maps.len() * w * h);
        for m in maps {
            if m.len() != w * h {
                return Err(CoreError::Usage(format!("height map has {} cells, expected {}", m.len(), w * h)));
            }
            data.extend(m.iter().map(|v| v / self.config.height_scale));
        }
        Ok(Tensor::new(&[maps.len(), h, w, 1], data)?)
    }

    pub fn mmr_encode(&self, g: &mut Graph, mut x: Var, norm: &mut Norm) -> Result<Var> {
        for (sam, block) in self.sams.iter().zip(&self.blocks) {
            if let Some(sam) = sam {
                x = sam.forward(g, &self.store, x)?;
            }
            x = block.forward(g, &self.store, x, norm)?;
        }
        Ok(x)
    }

    pub fn mmr_decode(&self, g: &mut Graph, code: Var) -> Result<Var> {
        self.decoder.forward(g, &self.store, code)
    }

    /// Batch-averaged `||decode(encode(x)) - x||_F`.
    pub fn reconstruction_loss(&self, g: &mut Graph, x: Var, norm: &mut Norm) -> Result<Var> {
        let z = self.mmr_encode(g, x, norm)?;
        let r = self.mmr_decode(g, z)?;
        let d = g.sub(r, x)?;
        let n = g.row_norms(d)?;
        Ok(g.mean(n))
    }

    pub fn eval_loss(&self, maps: &[&[f64]]) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(self.input(maps)?);
        let l = self.reconstruction_loss(&mut g, x, &mut Norm::Eval)?;
        Ok(g.value(l).item())
    }

    pub fn train(&mut self, maps: &[&[f64]], seed: u64) -> Result<Vec<MmrEpoch>> {
        if maps.len() < 2 {
            return Err(CoreError::Usage("mmr training needs at least two height maps".into()));
        }
        let sch = self.config.schedule;
        let lr = LrSchedule::new(sch.lr, sch.epochs, sch.delay)?;
        let mut adam = AdamState::new(&self.store, sch.lr);
        let mut rng = RngState::stream(seed, 0x34);
        let mut order: Vec<usize> = (0..maps.len()).collect();
        let mut records = Vec::new();
        let mut log = Vec::with_capacity(sch.epochs);
        for epoch in 0..sch.epochs {
            rng.shuffle(&mut order);
            adam.lr = lr.lr(epoch);
            let mut acc = 0.0;
            for (bi, idx) in batches(&order, sch.batch).iter().enumerate() {
                let batch: Vec<&[f64]> = idx.iter().map(|&i| maps[i]).collect();
                let mut g = Graph::new();
                let x = g.constant(self.input(&batch)?);
                records.clear();
                let l = self.reconstruction_loss(&mut g, x, &mut Norm::Train(&mut records))?;
                let v = g.value(l).item();
                if !v.is_finite() {
                    return Err(CoreError::NonFinite {
                        stage: "mmr",
                        epoch,
                        batch: bi,
                        detail: format!("reconstruction loss {v}"),
                    });
                }
                g.backward_params(l, &mut self.store)?;
                adam.step(&mut self.store)?;
                self.store.zero_grad();
                update_running_stats(&mut self.store, &records, BN_MOMENTUM);
                acc += v * idx.len() as f64;
            }
            log.push(MmrEpoch {
                epoch: epoch + 1,
                loss: acc / maps.len() as f64,
            });
        }
        Ok(log)
    }

    /// Eval-mode latent `[1, h, w, c]` of one height map.
    pub fn encode(&self, heights: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(self.input(&[heights])?);
        let z = self.mmr_encode(&mut g, x, &mut Norm::Eval)?;
        Ok(g.value(z).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    pub fn load(config: MmrConfig, grid: (usize, usize), path: &Path) -> Result<Self> {
        let mut m = Self::new(config, grid, 0)?;
        m.store.load_from(&checkpoint::load(path)?)?;
        Ok(m)
    }
}
