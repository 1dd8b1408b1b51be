//! Classical spatial interpolators for 3D fingerprints: inverse-distance
//! weighting, nearest neighbour, ordinary Kriging and Gaussian-process regression.

pub mod gpr;
pub mod kriging;

use thiserror::Error;

pub use gpr::{GprHyper, GprModel};
pub use kriging::{Kriging, KrigingOptions, VariogramKind, VariogramModel};

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, InterpError>;

pub type Point = [f64; 3];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Anything that maps a 3D position to a fingerprint value.
pub trait Interpolator {
    fn predict(&self, query: Point) -> f64;
}

/// Scattered samples shared by the simple predictors.
#[derive(Debug, Clone)]
pub struct Samples {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl Samples {
    pub fn new(points: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(InterpError::Usage(format!(
                "need matching non-empty samples, got {} points and {} values",
                points.len(),
                values.len()
            )));
        }
        Ok(Self { points, values })
    }
}

/// Inverse-distance weighting with weights `d^-power`; exact at sample points.
pub fn idw_predict(samples: &Samples, query: Point, power: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in samples.points.iter().zip(&samples.values) {
        let d = dist(*p, query);
        if d < 1e-12 {
            return *v;
        }
        let w = d.powf(-power);
        num += w * v;
        den += w;
    }
    num / den
}

/// Value of the Euclidean-nearest sample, ties going to the lowest index.
pub fn nn_predict(samples: &Samples, query: Point) -> f64 {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in samples.points.iter().enumerate() {
        let d = dist(*p, query);
        if d < best.0 {
            best = (d, i);
        }
    }
    samples.values[best.1]
}

#[derive(Debug, Clone)]
pub struct Idw {
    pub samples: Samples,
    pub power: f64,
}

impl Interpolator for Idw {
    fn predict(&self, query: Point) -> f64 {
        idw_predict(&self.samples, query, self.power)
    }
}

#[derive(Debug, Clone)]
pub struct Nearest {
    pub samples: Samples,
}

impl Interpolator for Nearest {
    fn predict(&self, query: Point) -> f64 {
        nn_predict(&self.samples, query)
    }
}
