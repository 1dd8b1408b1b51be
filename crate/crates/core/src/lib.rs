//! Multimodal 3D channel-fingerprint construction: Corr-MMF fusion of the
//! ground RSS grid with the building footprint, MMR encoding of building
//! heights, and a coordinate-conditioned regression head, plus the pipeline
//! that trains, evaluates and benchmarks them against classical interpolators.

pub mod complexity;
pub mod config;
pub mod corr_mmf;
pub mod csi_r;
pub mod error;
pub mod layers;
pub mod mmr;
pub mod pipeline;
pub mod report;
pub mod tam;
pub mod views;

pub use config::{CorrMmfConfig, CsiRConfig, MmrConfig, PipelineConfig, Schedule};
pub use corr_mmf::CorrMmf;
pub use csi_r::{normalize_coords, CsiR, RegressionSet};
pub use error::{CoreError, Result};
pub use mmr::Mmr;
pub use tam::{tam_masks, TamMasks};
pub use views::SceneViews;
