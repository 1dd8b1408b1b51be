//! Coordinate-conditioned regression head over patch-embedded latents.

use std::path::Path;

use cf3d_autodiff::{checkpoint, AdamState, Conv2d, Dense, Graph, LrSchedule, Mode, Padding, ParamStore, RngState, Tensor, Var};
use cf3d_radio::dataset::{Z_MAX, Z_MIN};

use crate::config::CsiRConfig;
use crate::corr_mmf::batches;
use crate::error::{CoreError, Result};

const PREDICT_CHUNK: usize = 256;

/// `(x/W, y/H, (z - z_min)/(z_max - z_min))`, rejecting anything outside `[0,1]³`.
pub fn normalize_coords(p: [f64; 3], w: usize, h: usize) -> Result<[f64; 3]> {
    let c = [p[0] / w as f64, p[1] / h as f64, (p[2] - Z_MIN) / (Z_MAX - Z_MIN)];
    for (axis, &v) in c.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::Range { axis, value: v });
        }
    }
    Ok(c)
}

/// Regression inputs: a table of distinct fusion latents, which latent each
/// tuple uses, its normalized coordinates and (for training) its target.
#[derive(Debug, Clone)]
pub struct RegressionSet<'a> {
    pub codes: &'a Tensor,
    pub code_index: Vec<usize>,
    pub coords: Vec<[f64; 3]>,
    pub targets: Vec<f64>,
}

impl RegressionSet<'_> {
    pub fn len(&self) -> usize {
        self.code_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code_index.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let s = self.codes.shape();
        let per: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut coords = Vec::with_capacity(idx.len() * 3);
        for &i in idx {
            let c = self.code_index[i];
            data.extend_from_slice(&self.codes.data()[c * per..(c + 1) * per]);
            coords.extend_from_slice(&self.coords[i]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        Ok((Tensor::new(&shape, data)?, Tensor::new(&[idx.len(), 3], coords)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

pub fn loss_csv(rows: &[CsiEpoch]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    s
}

#[derive(Debug, Clone)]
pub struct CsiR {
    pub config: CsiRConfig,
    pub store: ParamStore,
    pub latent: [usize; 3],
    embed_fusion: Conv2d,
    embed_env: Option<Conv2d>,
    hidden: Vec<Dense>,
    head: Dense,
}

impl CsiR {
    pub fn new(config: CsiRConfig, latent: [usize; 3], seed: u64) -> Result<Self> {
        config.validate()?;
        let p = config.patch;
        if latent[0] % p != 0 || latent[1] % p != 0 {
            return Err(CoreError::Config(format!(
                "patch {p} does not divide latent {}x{}",
                latent[0], latent[1]
            )));
        }
        let mut rng = RngState::stream(seed, 0x51);
        let mut store = ParamStore::new();
        let embed = |store: &mut ParamStore, name: &str, rng: &mut RngState| {
            Conv2d::new(store, name, p, latent[2], config.d_embed, p, Padding::Valid, true, rng)
        };
        let embed_fusion = embed(&mut store, "embed_fusion", &mut rng);
        let embed_env = config.use_mmr.then(|| embed(&mut store, "embed_env", &mut rng));
        let per = (latent[0] / p) * (latent[1] / p) * config.d_embed;
        let mut n_in = per * (1 + config.use_mmr as usize) + 3;
        let mut hidden = Vec::new();
        for (i, &n) in config.hidden.iter().enumerate() {
            hidden.push(Dense::new(&mut store, &format!("fc{i}"), n_in, n, &mut rng));
            n_in = n;
        }
        let head = Dense::new(&mut store, "head", n_in, 1, &mut rng);
        Ok(Self {
            config,
            store,
            latent,
            embed_fusion,
            embed_env,
            hidden,
            head,
        })
    }

    pub fn n_patches(&self) -> usize {
        (self.latent[0] / self.config.patch) * (self.latent[1] / self.config.patch)
    }

    /// `[n,h,w,c] -> [n, n_patches * d_embed]`
    pub fn patch_embed(&self, g: &mut Graph, latent: Var, env: bool) -> Result<Var> {
        let conv = if env {
            self.embed_env
                .as_ref()
                .ok_or_else(|| CoreError::Usage("model was built without the environment branch".into()))?
        } else {
            &self.embed_fusion
        };
        let e = conv.forward(g, &self.store, latent)?;
        Ok(g.flatten(e)?)
    }

    /// Sigmoid output `[n,1]`. `emb_env` may have batch 1 and is broadcast.
    pub fn regress(
        &self,
        g: &mut Graph,
        emb_fusion: Var,
        emb_env: Option<Var>,
        coords: Var,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Var> {
        let n = g.shape(emb_fusion)[0];
        let mut parts = vec![emb_fusion];
        if let Some(e) = emb_env {
            let d = g.shape(e)[1];
            parts.push(g.broadcast_to(e, &[n, d])?);
        }
        parts.push(coords);
        let mut x = g.concat(&parts, 1)?;
        for d in &self.hidden {
            x = d.forward(g, &self.store, x)?;
            x = g.relu(x);
            x = g.dropout(x, self.config.dropout, rng, mode)?;
        }
        let y = self.head.forward(g, &self.store, x)?;
        Ok(g.sigmoid(y))
    }

    fn forward(
        &self,
        g: &mut Graph,
        set: &RegressionSet,
        env: Option<&Tensor>,
        idx: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Var> {
        let (codes, coords) = set.gather(idx)?;
        let lat = g.constant(codes);
        let emb = self.patch_embed(g, lat, false)?;
        let emb_env = match (env, self.config.use_mmr) {
            (Some(t), true) => {
                let v = g.constant(t.clone());
                Some(self.patch_embed(g, v, true)?)
            }
            (None, true) => return Err(CoreError::Usage("environment latent required".into())),
            _ => None,
        };
        let c = g.constant(coords);
        self.regress(g, emb, emb_env, c, mode, rng)
    }

    pub fn predict(&self, set: &RegressionSet, env: Option<&Tensor>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(set.len());
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut rng = RngState::new(0);
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let y = self.forward(&mut g, set, env, chunk, Mode::Eval, &mut rng)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    pub fn mse(&self, set: &RegressionSet, env: Option<&Tensor>) -> Result<f64> {
        let p = self.predict(set, env)?;
        Ok(p.iter().zip(&set.targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len().max(1) as f64)
    }

    /// Minimizes the mean squared error with the upstream latents held fixed.
    pub fn train(
        &mut self,
        train: &RegressionSet,
        val: &RegressionSet,
        env: Option<&Tensor>,
        seed: u64,
    ) -> Result<Vec<CsiEpoch>> {
        if train.is_empty() || train.targets.len() != train.len() {
            return Err(CoreError::Usage("csi-r training needs targets for every tuple".into()));
        }
        let sch = self.config.schedule;
        let lr = LrSchedule::new(sch.lr, sch.epochs, sch.delay)?;
        let mut adam = AdamState::new(&self.store, sch.lr);
        let mut rng = RngState::stream(seed, 0x52);
        let mut drop_rng = RngState::stream(seed, 0x53);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut log = Vec::with_capacity(sch.epochs);
        for epoch in 0..sch.epochs {
            rng.shuffle(&mut order);
            adam.lr = lr.lr(epoch);
            let mut acc = 0.0;
            for (bi, idx) in batches(&order, sch.batch).iter().enumerate() {
                let mut g = Graph::new();
                let y = self.forward(&mut g, train, env, idx, Mode::Train, &mut drop_rng)?;
                let t = g.constant(Tensor::new(&[idx.len(), 1], idx.iter().map(|&i| train.targets[i]).collect())?);
                let l = g.mse(y, t)?;
                let v = g.value(l).item();
                if !v.is_finite() {
                    return Err(CoreError::NonFinite {
                        stage: "csi-r",
                        epoch,
                        batch: bi,
                        detail: format!("mse {v}"),
                    });
                }
                g.backward_params(l, &mut self.store)?;
                adam.step(&mut self.store)?;
                self.store.zero_grad();
                acc += v * idx.len() as f64;
            }
            let val_mse = if val.is_empty() { f64::NAN } else { self.mse(val, env)? };
            log.push(CsiEpoch {
                epoch: epoch + 1,
                train_mse: acc / train.len() as f64,
                val_mse,
            });
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    pub fn load(config: CsiRConfig, latent: [usize; 3], path: &Path) -> Result<Self> {
        let mut m = Self::new(config, latent, 0)?;
        m.store.load_from(&checkpoint::load(path)?)?;
        Ok(m)
    }
}
