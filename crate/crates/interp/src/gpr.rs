//! Zero-mean Gaussian-process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{dist, InterpError, Interpolator, Point, Result, Samples};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GprHyper {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GprHyper {
    pub fn kernel(&self, a: Point, b: Point) -> f64 {
        let d = dist(a, b);
        self.signal_var * (-0.5 * d * d / (self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GprModel {
    pub samples: Samples,
    pub hyper: GprHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GprModel {
    /// Factorizes `K + noise I` with jitter `1e-10`, escalating it tenfold
    /// up to three times before giving up.
    pub fn fit(samples: Samples, hyper: GprHyper) -> Result<Self> {
        if !(hyper.length_scale > 0.0) || hyper.signal_var < 0.0 || hyper.noise_var < 0.0 {
            return Err(InterpError::Usage(format!("invalid GP hyperparameters {:?}", hyper)));
        }
        let n = samples.points.len();
        let k = DMatrix::from_fn(n, n, |i, j| hyper.kernel(samples.points[i], samples.points[j]));
        let mut jitter = 1e-10;
        for _ in 0..4 {
            let mut a = k.clone();
            for i in 0..n {
                a[(i, i)] += hyper.noise_var + jitter;
            }
            if let Some(chol) = a.cholesky() {
                let alpha = chol.solve(&DVector::from_column_slice(&samples.values));
                return Ok(Self {
                    samples,
                    hyper,
                    chol,
                    alpha,
                });
            }
            jitter *= 10.0;
        }
        Err(InterpError::Numeric("kernel matrix not positive definite after jitter".into()))
    }

    fn cross(&self, query: Point) -> DVector<f64> {
        DVector::from_iterator(
            self.samples.points.len(),
            self.samples.points.iter().map(|p| self.hyper.kernel(*p, query)),
        )
    }

    /// Posterior mean and variance (variance clamped at 0).
    pub fn predict_var(&self, query: Point) -> (f64, f64) {
        let ks = self.cross(query);
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("non-singular factor");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.samples.values);
        let n = y.len() as f64;
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Fits every combination of the candidate values and keeps the one with
    /// the highest log marginal likelihood.
    pub fn fit_grid(samples: Samples, length_scales: &[f64], signal_vars: &[f64], noise_var: f64) -> Result<Self> {
        let mut best: Option<(f64, GprModel)> = None;
        for &length_scale in length_scales {
            for &signal_var in signal_vars {
                let hyper = GprHyper {
                    length_scale,
                    signal_var,
                    noise_var,
                };
                let Ok(m) = GprModel::fit(samples.clone(), hyper) else {
                    continue;
                };
                let lml = m.log_marginal_likelihood();
                if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                    best = Some((lml, m));
                }
            }
        }
        best.map(|(_, m)| m)
            .ok_or_else(|| InterpError::Numeric("no GP hyperparameter candidate could be fitted".into()))
    }
}

impl Interpolator for GprModel {
    fn predict(&self, query: Point) -> f64 {
        self.cross(query).dot(&self.alpha)
    }
}
