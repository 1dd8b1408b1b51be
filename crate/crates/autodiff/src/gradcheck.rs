//! Central finite-difference gradient checker.
//!
//! The numerical side only ever evaluates forward values, so it is an
//! oracle independent of every backward rule it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Relative error per input tensor, `||analytic - numeric|| / (||analytic|| + ||numeric||)`.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub rel_err: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Builds `f(inputs)` and projects it to a scalar with fixed random weights.
fn scalar_loss<F>(f: &F, proj_seed: u64, g: &mut Graph, vars: &[Var]) -> Result<Var>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let y = f(g, vars)?;
    if g.value(y).len() == 1 {
        return Ok(y);
    }
    let mut rng = RngState::stream(proj_seed, 77);
    let shape = g.shape(y).to_vec();
    let w: Vec<f64> = (0..g.value(y).len()).map(|_| rng.uniform_range(0.5, 1.5)).collect();
    let wv = g.constant(Tensor::new(&shape, w)?);
    let prod = g.mul(y, wv)?;
    Ok(g.sum(prod))
}

fn forward_value<F>(f: &F, inputs: &[Tensor], proj_seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let l = scalar_loss(f, proj_seed, &mut g, &vars)?;
    Ok(g.value(l).item())
}

/// Compares analytic gradients of `f` w.r.t. every input against central
/// differences with step `h`.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let proj_seed = 0xC0FFEE;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = scalar_loss(&f, proj_seed, &mut g, &vars)?;
    g.backward(loss)?;

    let mut rel_err = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            *slot = (forward_value(&f, &plus, proj_seed)? - forward_value(&f, &minus, proj_seed)?)
                / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na + nn;
        rel_err.push(if denom < 1e-300 { 0.0 } else { diff / denom });
    }
    Ok(GradReport { rel_err })
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).expect("shape")
}

/// Random tensor whose entries keep at least `gap` away from zero, for ops with
/// a kink at the origin.
pub fn random_tensor_away_from_zero(shape: &[usize], gap: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(gap, 1.0);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Random tensor of pairwise well-separated values (a shuffled grid in
/// `[-1, 1]`), for max-type ops whose gradient switches on ties.
pub fn random_distinct_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64)
        .collect();
    rng.shuffle(&mut data);
    Tensor::new(shape, data).expect("shape")
}

/// Outcome of checking one op over many random configurations.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub configs: usize,
    pub worst_rel_err: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < self.tolerance
    }
}

type Case = Box<dyn Fn(&mut RngState) -> Result<f64>>;

fn case<F, B>(build_inputs: B, f: F) -> Case
where
    B: Fn(&mut RngState) -> Vec<Tensor> + 'static,
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Clone + 'static,
{
    Box::new(move |rng| {
        let inputs = build_inputs(rng);
        Ok(check(f.clone(), &inputs, FD_STEP)?.max_rel_err())
    })
}

/// Step used by the op suite.
pub const FD_STEP: f64 = 1e-4;

/// Runs every differentiable op of the engine through [`check`] on
/// `configs` random configurations each (shapes and values drawn per seed).
pub fn op_suite(configs: usize, seed: u64) -> Result<Vec<OpCheck>> {
    use crate::kernels::{Padding, PoolKind, PoolScope};
    use crate::graph::{BatchStats, Mode};

    let mut cases: Vec<(&'static str, f64, Case)> = Vec::new();
    let dim = |rng: &mut RngState, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);

    cases.push((
        "conv2d",
        1e-5,
        Box::new(move |rng: &mut RngState| {
            let (h, w) = (dim(rng, 3, 6), dim(rng, 3, 6));
            let (ci, co) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let k = [1, 3][rng.below(2)];
            let stride = dim(rng, 1, 2);
            let padding = if rng.uniform() < 0.5 { Padding::Same } else { Padding::Valid };
            let x = random_tensor(&[2, h, w, ci], -1.0, 1.0, rng);
            let kern = random_tensor(&[k, k, ci, co], -1.0, 1.0, rng);
            let b = random_tensor(&[co], -1.0, 1.0, rng);
            Ok(check(
                move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding),
                &[x, kern, b],
                FD_STEP,
            )?
            .max_rel_err())
        }),
    ));
    cases.push((
        "conv_transpose2d",
        1e-5,
        Box::new(move |rng: &mut RngState| {
            let (h, w) = (dim(rng, 2, 4), dim(rng, 2, 4));
            let (ci, co) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let stride = dim(rng, 1, 2);
            let x = random_tensor(&[2, h, w, ci], -1.0, 1.0, rng);
            let kern = random_tensor(&[3, 3, co, ci], -1.0, 1.0, rng);
            let b = random_tensor(&[co], -1.0, 1.0, rng);
            Ok(check(
                move |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), stride),
                &[x, kern, b],
                FD_STEP,
            )?
            .max_rel_err())
        }),
    ));
    cases.push((
        "dense",
        1e-5,
        Box::new(move |rng: &mut RngState| {
            let (n, i, o) = (dim(rng, 1, 4), dim(rng, 1, 6), dim(rng, 1, 5));
            let x = random_tensor(&[n, i], -1.0, 1.0, rng);
            let w = random_tensor(&[i, o], -1.0, 1.0, rng);
            let b = random_tensor(&[o], -1.0, 1.0, rng);
            Ok(check(|g, v| g.dense(v[0], v[1], v[2]), &[x, w, b], FD_STEP)?.max_rel_err())
        }),
    ));
    cases.push((
        "relu",
        1e-5,
        case(
            |rng| vec![random_tensor_away_from_zero(&[3, 4], 1e-2, rng)],
            |g: &mut Graph, v: &[Var]| Ok(g.relu(v[0])),
        ),
    ));
    cases.push((
        "sigmoid",
        1e-5,
        case(
            |rng| vec![random_tensor(&[3, 4], -4.0, 4.0, rng)],
            |g: &mut Graph, v: &[Var]| Ok(g.sigmoid(v[0])),
        ),
    ));
    cases.push((
        "batchnorm_train",
        1e-4,
        Box::new(move |rng: &mut RngState| {
            let (n, h, c) = (dim(rng, 2, 4), dim(rng, 1, 3), dim(rng, 1, 3));
            let x = random_tensor(&[n, h, h, c], -2.0, 2.0, rng);
            let gamma = random_tensor(&[c], 0.5, 1.5, rng);
            let beta = random_tensor(&[c], -1.0, 1.0, rng);
            Ok(check(
                |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0),
                &[x, gamma, beta],
                FD_STEP,
            )?
            .max_rel_err())
        }),
    ));
    cases.push((
        "batchnorm_eval",
        1e-4,
        Box::new(move |rng: &mut RngState| {
            let c = dim(rng, 1, 3);
            let x = random_tensor(&[2, 3, 3, c], -2.0, 2.0, rng);
            let gamma = random_tensor(&[c], 0.5, 1.5, rng);
            let beta = random_tensor(&[c], -1.0, 1.0, rng);
            let stats = BatchStats {
                mean: random_tensor(&[c], -1.0, 1.0, rng).into_data(),
                var: random_tensor(&[c], 0.5, 2.0, rng).into_data(),
            };
            Ok(check(
                move |g, v| g.batch_norm_with_stats(v[0], v[1], v[2], &stats, 1e-5),
                &[x, gamma, beta],
                FD_STEP,
            )?
            .max_rel_err())
        }),
    ));
    for (name, kind, scope) in [
        ("pool_max_window", PoolKind::Max, PoolScope::Window { k: 2, stride: 2 }),
        ("pool_avg_window", PoolKind::Avg, PoolScope::Window { k: 2, stride: 1 }),
        ("pool_max_global_channel", PoolKind::Max, PoolScope::GlobalPerChannel),
        ("pool_avg_global_channel", PoolKind::Avg, PoolScope::GlobalPerChannel),
        ("pool_max_global_pixel", PoolKind::Max, PoolScope::GlobalPerPixel),
        ("pool_avg_global_pixel", PoolKind::Avg, PoolScope::GlobalPerPixel),
    ] {
        cases.push((
            name,
            1e-5,
            case(
                |rng| vec![random_distinct_tensor(&[2, 4, 4, 3], rng)],
                move |g: &mut Graph, v: &[Var]| g.pool(v[0], kind, scope),
            ),
        ));
    }
    cases.push((
        "add_broadcast",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[2, 3, 3, 4], -1.0, 1.0, rng),
                    random_tensor(&[2, 1, 1, 4], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| g.add(v[0], v[1]),
        ),
    ));
    cases.push((
        "sub",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[3, 4], -1.0, 1.0, rng),
                    random_tensor(&[3, 4], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]),
        ),
    ));
    cases.push((
        "hadamard_broadcast",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[2, 3, 3, 4], -1.0, 1.0, rng),
                    random_tensor(&[2, 1, 1, 4], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| g.mul(v[1], v[0]),
        ),
    ));
    cases.push((
        "broadcast_to",
        1e-5,
        case(
            |rng| vec![random_tensor(&[2, 3, 3, 1], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| g.broadcast_to(v[0], &[2, 3, 3, 4]),
        ),
    ));
    cases.push((
        "concat",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[2, 3, 3, 1], -1.0, 1.0, rng),
                    random_tensor(&[2, 3, 3, 2], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], 3),
        ),
    ));
    cases.push((
        "slice_flatten",
        1e-5,
        case(
            |rng| vec![random_tensor(&[2, 3, 3, 4], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| {
                let s = g.slice(v[0], 3, 1, 2)?;
                g.flatten(s)
            },
        ),
    ));
    cases.push((
        "affine_sum_mean",
        1e-5,
        case(
            |rng| vec![random_tensor(&[3, 4], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| {
                let a = g.affine(v[0], -2.5, 0.3);
                let s = g.sum(a);
                let m = g.mean(v[0]);
                g.add(s, m)
            },
        ),
    ));
    cases.push((
        "dropout",
        1e-5,
        case(
            |rng| vec![random_tensor(&[4, 5], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| {
                let mut r = RngState::new(3);
                g.dropout(v[0], 0.3, &mut r, Mode::Train)
            },
        ),
    ));
    cases.push((
        "frobenius_norm",
        1e-5,
        case(
            |rng| vec![random_tensor(&[3, 4], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| Ok(g.frobenius_norm(v[0])),
        ),
    ));
    cases.push((
        "row_norms",
        1e-5,
        case(
            |rng| vec![random_tensor(&[3, 2, 2], -1.0, 1.0, rng)],
            |g: &mut Graph, v: &[Var]| g.row_norms(v[0]),
        ),
    ));
    cases.push((
        "mse",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[3, 4], -1.0, 1.0, rng),
                    random_tensor(&[3, 4], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| g.mse(v[0], v[1]),
        ),
    ));
    cases.push((
        "centered_cosine",
        1e-5,
        case(
            |rng| {
                vec![
                    random_tensor(&[3, 6], -1.0, 1.0, rng),
                    random_tensor(&[3, 6], -1.0, 1.0, rng),
                ]
            },
            |g: &mut Graph, v: &[Var]| Ok(g.centered_cosine(v[0], v[1])?.0),
        ),
    ));

    let mut out = Vec::new();
    for (op_index, (op, tolerance, run)) in cases.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for c in 0..configs {
            let mut rng = RngState::stream(seed, (op_index * 10_000 + c) as u64);
            worst = worst.max(run(&mut rng)?);
        }
        out.push(OpCheck {
            op,
            configs,
            worst_rel_err: worst,
            tolerance,
        });
    }
    Ok(out)
}
