//! Evaluation tables.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    /// Validation correlation of the two single-view latents after training.
    pub corr: f64,
}

/// Reference accuracy of the full-scale method at lambda = 1, shown for context only.
pub const REFERENCE_MAE: f64 = 0.029;
pub const REFERENCE_RMSE: f64 = 0.060;

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EvalReport {
    pub scenario_id: u64,
    pub rows: Vec<MethodRow>,
    pub sweep: Vec<SweepRow>,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,method,mae,rmse,n\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", self.scenario_id, r.method, r.mae, r.rmse, r.n));
        }
        s
    }

    pub fn sweep_csv(&self) -> String {
        sweep_csv(&self.sweep)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("scenario {}  seeds {:?}\n", self.scenario_id, self.seeds);
        s.push_str(&format!("{:<22} {:>10} {:>10} {:>8}\n", "method", "MAE", "RMSE", "n"));
        for r in &self.rows {
            s.push_str(&format!("{:<22} {:>10.5} {:>10.5} {:>8}\n", r.method, r.mae, r.rmse, r.n));
        }
        s.push_str(&format!(
            "{:<22} {:>10.5} {:>10.5} {:>8}\n",
            "reference (lambda=1)", REFERENCE_MAE, REFERENCE_RMSE, "-"
        ));
        if !self.sweep.is_empty() {
            s.push_str(&format!("\n{:>8} {:>6} {:>10} {:>10} {:>8}\n", "lambda", "seed", "MAE", "RMSE", "corr"));
            for r in &self.sweep {
                s.push_str(&format!(
                    "{:>8} {:>6} {:>10.5} {:>10.5} {:>8.4}\n",
                    r.lambda, r.seed, r.mae, r.rmse, r.corr
                ));
            }
        }
        s
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,seed,mae,rmse,corr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.lambda, r.seed, r.mae, r.rmse, r.corr));
    }
    s
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
