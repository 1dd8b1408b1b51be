//! Ordinary Kriging with a least-squares fitted variogram.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::{dist, InterpError, Interpolator, Point, Result, Samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariogramKind {
    Exponential,
    Spherical,
    Gaussian,
}

/// `gamma(h) = nugget + sill * shape(h / range)` for `h > 0`, 0 at zero lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    fn shape(kind: VariogramKind, r: f64) -> f64 {
        match kind {
            VariogramKind::Exponential => 1.0 - (-3.0 * r).exp(),
            VariogramKind::Gaussian => 1.0 - (-3.0 * r * r).exp(),
            VariogramKind::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    1.5 * r - 0.5 * r * r * r
                }
            }
        }
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.nugget + self.sill * Self::shape(self.kind, h / self.range)
    }
}

pub const N_BINS: usize = 15;

/// Empirical semivariogram `(lag centre, semivariance, pair count)` over
/// `N_BINS` bins up to half the largest pairwise distance. Empty bins are dropped.
pub fn empirical_variogram(samples: &Samples) -> Vec<(f64, f64, usize)> {
    let pts = &samples.points;
    let mut max_d: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            max_d = max_d.max(dist(pts[i], pts[j]));
        }
    }
    let max_lag = max_d / 2.0;
    if max_lag == 0.0 {
        return Vec::new();
    }
    let width = max_lag / N_BINS as f64;
    let mut sums = [0.0; N_BINS];
    let mut counts = [0usize; N_BINS];
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = dist(pts[i], pts[j]);
            let b = (d / width) as usize;
            if b < N_BINS {
                let dv = samples.values[i] - samples.values[j];
                sums[b] += 0.5 * dv * dv;
                counts[b] += 1;
            }
        }
    }
    (0..N_BINS)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * width, sums[b] / counts[b] as f64, counts[b]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingOptions {
    pub kind: VariogramKind,
    /// Pins the nugget instead of fitting it.
    pub fixed_nugget: Option<f64>,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        Self {
            kind: VariogramKind::Exponential,
            fixed_nugget: None,
        }
    }
}

/// Least-squares variogram fit: a geometric scan over the range with the
/// nugget and sill solved in closed form (both kept non-negative).
pub fn fit_variogram(bins: &[(f64, f64, usize)], opts: &KrigingOptions) -> Result<VariogramModel> {
    if bins.len() < 5 {
        return Err(InterpError::Usage(format!(
            "variogram fit needs at least 5 non-empty lag bins, got {}",
            bins.len()
        )));
    }
    let max_lag = bins.last().unwrap().0;
    let lo = bins[0].0 * 0.25;
    let hi = max_lag * 4.0;
    let steps = 80;
    let mut best: Option<(f64, VariogramModel)> = None;
    for s in 0..=steps {
        let range = lo * (hi / lo).powf(s as f64 / steps as f64);
        let f: Vec<f64> = bins
            .iter()
            .map(|b| VariogramModel::shape(opts.kind, b.0 / range))
            .collect();
        let (nugget, sill) = solve_nugget_sill(bins, &f, opts.fixed_nugget);
        let model = VariogramModel {
            kind: opts.kind,
            nugget,
            sill,
            range,
        };
        let sse: f64 = bins.iter().map(|b| (model.gamma(b.0) - b.1).powi(2)).sum();
        if best.as_ref().map_or(true, |(e, _)| sse < *e) {
            best = Some((sse, model));
        }
    }
    let mut model = best.unwrap().1;
    if model.sill <= 0.0 {
        model.sill = 1e-12;
    }
    Ok(model)
}

fn solve_nugget_sill(bins: &[(f64, f64, usize)], f: &[f64], fixed: Option<f64>) -> (f64, f64) {
    let fit_sill = |nugget: f64| {
        let num: f64 = bins.iter().zip(f).map(|(b, fi)| fi * (b.1 - nugget)).sum();
        let den: f64 = f.iter().map(|fi| fi * fi).sum();
        (num / den.max(1e-300)).max(0.0)
    };
    if let Some(n) = fixed {
        return (n, fit_sill(n));
    }
    // unconstrained 2x2 normal equations for y = a + b f
    let n = bins.len() as f64;
    let sf: f64 = f.iter().sum();
    let sff: f64 = f.iter().map(|v| v * v).sum();
    let sy: f64 = bins.iter().map(|b| b.1).sum();
    let sfy: f64 = bins.iter().zip(f).map(|(b, fi)| b.1 * fi).sum();
    let det = n * sff - sf * sf;
    if det.abs() > 1e-300 {
        let a = (sy * sff - sf * sfy) / det;
        let b = (n * sfy - sf * sy) / det;
        if a >= 0.0 && b >= 0.0 {
            return (a, b);
        }
    }
    let zero_nugget = (0.0, fit_sill(0.0));
    let flat = ((sy / n).max(0.0), 0.0);
    let sse = |(a, b): (f64, f64)| -> f64 {
        bins.iter().zip(f).map(|(bin, fi)| (a + b * fi - bin.1).powi(2)).sum()
    };
    if sse(zero_nugget) <= sse(flat) {
        zero_nugget
    } else {
        flat
    }
}

/// Fitted ordinary-Kriging predictor with the system factorized once.
#[derive(Debug, Clone)]
pub struct Kriging {
    pub samples: Samples,
    pub model: VariogramModel,
    lu: LU<f64, Dyn, Dyn>,
}

impl Kriging {
    pub fn fit(samples: Samples, opts: &KrigingOptions) -> Result<Self> {
        if samples.points.len() < 3 {
            return Err(InterpError::Usage("Kriging needs at least 3 samples".into()));
        }
        let model = fit_variogram(&empirical_variogram(&samples), opts)?;
        Self::with_model(samples, model)
    }

    /// Ordinary-Kriging system for a given variogram, with one jittered retry
    /// when the matrix is singular.
    pub fn with_model(samples: Samples, model: VariogramModel) -> Result<Self> {
        let n = samples.points.len();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = model.gamma(dist(samples.points[i], samples.points[j]));
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let lu = a.clone().lu();
        let lu = if is_singular(&lu) {
            for i in 0..n {
                a[(i, i)] += 1e-10;
            }
            let retry = a.lu();
            if is_singular(&retry) {
                return Err(InterpError::Numeric("singular Kriging system after jitter".into()));
            }
            retry
        } else {
            lu
        };
        Ok(Self { samples, model, lu })
    }

    /// Kriging weights for `query` (the Lagrange multiplier is dropped).
    pub fn weights(&self, query: Point) -> Vec<f64> {
        let n = self.samples.points.len();
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = self.model.gamma(dist(self.samples.points[i], query));
        }
        rhs[n] = 1.0;
        let sol = self.lu.solve(&rhs).expect("factorization checked at fit");
        sol.as_slice()[..n].to_vec()
    }
}

fn is_singular(lu: &LU<f64, Dyn, Dyn>) -> bool {
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    u.diagonal().iter().any(|v| !(v.abs() > 1e-14 * scale.max(1e-300)))
}

impl Interpolator for Kriging {
    fn predict(&self, query: Point) -> f64 {
        self.weights(query)
            .iter()
            .zip(&self.samples.values)
            .map(|(w, v)| w * v)
            .sum()
    }
}
