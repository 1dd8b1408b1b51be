//! Synthetic low-altitude radio scenes, a ray-trace-lite Rician channel
//! simulator and the CSI-tuple fingerprint datasets built on top of it.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod persist;
pub mod scene;
pub mod trace;

pub use channel::{
    channel_realization, compute_large_scale, rss, steering_vector, to_db, ChannelParams, ChannelRealization,
    LargeScale, LavState, DB_FLOOR, K_CAP,
};
pub use dataset::{
    build_cf, generate_dataset, metrics, normalize_rss, denormalize_rss, sample_ground_grid, split, CfStore,
    ChannelConfig, CsiTuple, Dataset, DatasetConfig, DatasetSplit, GroundMeasurementGrid, Metrics, Normalization,
    G_THR_DB,
};
pub use error::{RadioError, Result};
pub use scene::{generate_scenario, BsConfig, Building, SceneConfig, Scenario};
pub use trace::{los_blocked, trace_paths, Path, PathSet, TraceConfig};
