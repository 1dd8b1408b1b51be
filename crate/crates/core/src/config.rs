//! Hyper-parameters of the three learned stages.
//!
//! Defaults are the full-scale training settings. The desk presets used by
//! the acceptance run override the schedules; see [`PipelineConfig::desk`].

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    /// Epochs at constant learning rate before the linear decay starts.
    pub delay: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Schedule {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.delay > self.epochs || !(self.lr > 0.0) {
            return Err(CoreError::Config(format!("{what}: invalid schedule {:?}", self)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrMmfConfig {
    /// Output widths of the per-view stride-2 blocks.
    pub view_channels: Vec<usize>,
    /// Output widths of the stride-2 blocks after the fusion add.
    pub fused_channels: Vec<usize>,
    /// Hidden widths of the virtual decoder, coarse to fine. One fewer than
    /// the number of encoder blocks; the last layer emits both views.
    pub decoder_channels: Vec<usize>,
    pub kernel: usize,
    /// TAM standard deviation in metres.
    pub sigma_tam: f64,
    pub lambda: f64,
    pub use_tam: bool,
    pub use_cam: bool,
    /// Replace the ground view by zeros everywhere (modality ablation).
    pub drop_ground: bool,
    /// Replace the footprint view by zeros everywhere (modality ablation).
    pub drop_footprint: bool,
    pub schedule: Schedule,
}

impl Default for CorrMmfConfig {
    fn default() -> Self {
        Self {
            view_channels: vec![16, 32, 64],
            fused_channels: vec![64, 64],
            decoder_channels: vec![64, 64, 32, 16],
            kernel: 3,
            sigma_tam: 16.0,
            lambda: 1.0,
            use_tam: true,
            use_cam: true,
            drop_ground: false,
            drop_footprint: false,
            schedule: Schedule {
                epochs: 60,
                delay: 35,
                lr: 0.005,
                batch: 128,
            },
        }
    }
}

impl CorrMmfConfig {
    pub fn depth(&self) -> usize {
        self.view_channels.len() + self.fused_channels.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.fused_channels.last().or(self.view_channels.last()).unwrap_or(&1)
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        if self.view_channels.is_empty() || self.kernel == 0 || !(self.sigma_tam > 0.0) || !(self.lambda >= 0.0) {
            return Err(CoreError::Config("corr-mmf: empty encoder, zero kernel, sigma <= 0 or lambda < 0".into()));
        }
        if self.decoder_channels.len() + 1 != self.depth() {
            return Err(CoreError::Config(format!(
                "corr-mmf: {} decoder widths for {} encoder blocks",
                self.decoder_channels.len(),
                self.depth()
            )));
        }
        check_divisible("corr-mmf", grid, self.depth())?;
        self.schedule.validate("corr-mmf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmrConfig {
    pub channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub kernel: usize,
    pub sam_kernel: usize,
    pub use_sam: bool,
    /// SAM before every block rather than only the first.
    pub sam_every_block: bool,
    /// Heights are divided by this before encoding.
    pub height_scale: f64,
    pub schedule: Schedule,
}

impl Default for MmrConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 64, 64],
            decoder_channels: vec![64, 64, 32, 16],
            kernel: 3,
            sam_kernel: 7,
            use_sam: true,
            sam_every_block: true,
            height_scale: 100.0,
            schedule: Schedule {
                epochs: 50,
                delay: 35,
                lr: 0.001,
                batch: 128,
            },
        }
    }
}

impl MmrConfig {
    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        if self.channels.is_empty() || self.kernel == 0 || self.sam_kernel == 0 || !(self.height_scale > 0.0) {
            return Err(CoreError::Config("mmr: empty encoder or zero kernel".into()));
        }
        if self.decoder_channels.len() + 1 != self.channels.len() {
            return Err(CoreError::Config(format!(
                "mmr: {} decoder widths for {} encoder blocks",
                self.decoder_channels.len(),
                self.channels.len()
            )));
        }
        check_divisible("mmr", grid, self.channels.len())?;
        self.schedule.validate("mmr")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiRConfig {
    pub patch: usize,
    pub d_embed: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub use_mmr: bool,
    pub schedule: Schedule,
}

impl Default for CsiRConfig {
    fn default() -> Self {
        Self {
            patch: 2,
            d_embed: 64,
            hidden: vec![256, 64],
            dropout: 0.2,
            use_mmr: true,
            schedule: Schedule {
                epochs: 15,
                delay: 10,
                lr: 0.0001,
                batch: 32,
            },
        }
    }
}

impl CsiRConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.d_embed == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config("csi-r: zero patch/embedding or dropout outside [0,1)".into()));
        }
        self.schedule.validate("csi-r")
    }
}

fn check_divisible(what: &str, (w, h): (usize, usize), depth: usize) -> Result<()> {
    let f = 1usize << depth;
    if w % f != 0 || h % f != 0 {
        return Err(CoreError::Config(format!(
            "{what}: grid {w}x{h} is not divisible by 2^{depth}"
        )));
    }
    Ok(())
}

/// Everything needed to rerun the three training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corr_mmf: CorrMmfConfig,
    pub mmr: MmrConfig,
    pub csi_r: CsiRConfig,
    /// Mask centres drawn from the training tuples for Corr-MMF training.
    pub mmf_train_centres: usize,
    pub mmf_val_centres: usize,
    /// Fraction of the store handed to the classical interpolators.
    pub baseline_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corr_mmf: CorrMmfConfig::default(),
            mmr: MmrConfig::default(),
            csi_r: CsiRConfig::default(),
            mmf_train_centres: 512,
            mmf_val_centres: 64,
            baseline_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Narrower networks and longer, faster regression training sized for a
    /// single CPU core on a 128x128 scene.
    pub fn desk() -> Self {
        Self {
            corr_mmf: CorrMmfConfig {
                view_channels: vec![8, 16, 32],
                fused_channels: vec![32, 32],
                decoder_channels: vec![32, 32, 16, 8],
                schedule: Schedule {
                    epochs: 30,
                    delay: 18,
                    lr: 0.002,
                    batch: 16,
                },
                ..CorrMmfConfig::default()
            },
            mmr: MmrConfig {
                channels: vec![8, 16, 32, 32, 32],
                decoder_channels: vec![32, 32, 16, 8],
                schedule: Schedule {
                    epochs: 50,
                    delay: 35,
                    lr: 0.002,
                    batch: 8,
                },
                ..MmrConfig::default()
            },
            csi_r: CsiRConfig {
                d_embed: 32,
                hidden: vec![256, 64],
                dropout: 0.0,
                schedule: Schedule {
                    epochs: 80,
                    delay: 40,
                    lr: 0.002,
                    batch: 64,
                },
                ..CsiRConfig::default()
            },
            mmf_train_centres: 96,
            mmf_val_centres: 32,
            baseline_fraction: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        self.corr_mmf.validate(grid)?;
        self.mmr.validate(grid)?;
        self.csi_r.validate()?;
        if self.mmr.channels.len() != self.corr_mmf.depth()
            || self.mmr.channels.last() != Some(&self.corr_mmf.latent_channels())
        {
            return Err(CoreError::Config(
                "mmr encoder must match the corr-mmf depth and latent width".into(),
            ));
        }
        let side = 1usize << self.corr_mmf.depth();
        let (lw, lh) = (grid.0 / side, grid.1 / side);
        if lw % self.csi_r.patch != 0 || lh % self.csi_r.patch != 0 {
            return Err(CoreError::Config(format!(
                "patch {} does not divide latent {}x{}",
                self.csi_r.patch, lw, lh
            )));
        }
        if self.mmf_train_centres < 2 || self.mmf_val_centres == 0 || !(0.0..=1.0).contains(&self.baseline_fraction) {
            return Err(CoreError::Config("need >= 2 training centres, >= 1 validation centre".into()));
        }
        Ok(())
    }
}
