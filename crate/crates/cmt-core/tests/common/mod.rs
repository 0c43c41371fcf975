//! Shared test utilities: a central finite-difference oracle for gradient
//! checking, plus the random per-primitive case suite.
//!
//! The oracle never touches the graph's backward pass: it re-evaluates the
//! forward function at perturbed inputs, so it is an independent reference
//! for every gradient the graph reports.

use cmt_core::autodiff::{GraphError, NodeId};
use cmt_core::rng::RngStream;
use cmt_core::{Graph, Tensor};

pub type BuildFn<'a> = &'a dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, GraphError>;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero gradients compare on
/// an absolute scale of `tol * 1e-3`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn eval_scalar(shapes: &[Vec<usize>], values: &[Vec<f64>], build: BuildFn) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| g.constant(Tensor::from_vec(s, v.clone()).expect("case shape")))
        .collect();
    let root = build(&mut g, &ids).expect("case build");
    g.value(root).item()
}

/// Compare autodiff gradients of a scalar-valued graph function against
/// central finite differences for every element of every input. Returns the
/// maximum relative error seen, or a description of the first violation.
pub fn fd_check(
    label: &str,
    shapes: &[Vec<usize>],
    values: &[Vec<f64>],
    build: BuildFn,
) -> Result<f64, String> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| g.param(Tensor::from_vec(s, v.clone()).expect("case shape")))
        .collect();
    let root = build(&mut g, &ids).map_err(|e| format!("{label}: build failed: {e}"))?;
    if !g.value(root).is_scalar() {
        return Err(format!("{label}: case root is not scalar"));
    }
    g.backward(root).map_err(|e| format!("{label}: backward failed: {e}"))?;
    let ad: Vec<Vec<f64>> = ids
        .iter()
        .zip(values)
        .map(|(&id, v)| {
            g.grad(id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; v.len()])
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut work = values.to_vec();
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = work[i][j];
            work[i][j] = orig + FD_STEP;
            let plus = eval_scalar(shapes, &work, build);
            work[i][j] = orig - FD_STEP;
            let minus = eval_scalar(shapes, &work, build);
            work[i][j] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let r = rel_err(ad[i][j], fd);
            if r > REL_TOL {
                return Err(format!(
                    "{label}: input {i} element {j}: autodiff {} vs finite-diff {fd} (rel {r:.3e})",
                    ad[i][j]
                ));
            }
            max_rel = max_rel.max(r);
        }
    }
    Ok(max_rel)
}

fn rand_vals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

fn rand_shape(rng: &mut RngStream, ndim_max: usize, dim_max: usize) -> Vec<usize> {
    let ndim = 1 + rng.below(ndim_max as u64) as usize;
    (0..ndim).map(|_| 1 + rng.below(dim_max as u64) as usize).collect()
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// One random gradient-check per primitive named by `op`. Each call draws a
/// fresh shape/value configuration from `rng`.
pub fn check_primitive_once(op: &str, rng: &mut RngStream) -> Result<(), String> {
    // Weight tensor used to reduce non-scalar outputs to a scalar with a
    // non-uniform upstream gradient.
    match op {
        "add" | "sub" | "mul" | "mse" => {
            let s = rand_shape(rng, 3, 4);
            let a = rand_vals(rng, numel(&s));
            let b = rand_vals(rng, numel(&s));
            let w = rand_vals(rng, numel(&s));
            let opname = op.to_string();
            fd_check(
                op,
                &[s.clone(), s.clone(), s],
                &[a, b, w],
                &|g, ids| {
                    let y = match opname.as_str() {
                        "add" => g.add(ids[0], ids[1])?,
                        "sub" => g.sub(ids[0], ids[1])?,
                        "mul" => g.mul(ids[0], ids[1])?,
                        "mse" => {
                            let m = g.mse(ids[0], ids[1])?;
                            return g.scale(m, 1.7);
                        }
                        _ => unreachable!(),
                    };
                    let wy = g.mul(y, ids[2])?;
                    g.sum(wy)
                },
            )?;
        }
        "matmul" => {
            let (m, k, n) = (
                1 + rng.below(4) as usize,
                1 + rng.below(4) as usize,
                1 + rng.below(4) as usize,
            );
            let a = rand_vals(rng, m * k);
            let b = rand_vals(rng, k * n);
            let w = rand_vals(rng, m * n);
            fd_check(
                op,
                &[vec![m, k], vec![k, n], vec![m, n]],
                &[a, b, w],
                &|g, ids| {
                    let y = g.matmul(ids[0], ids[1])?;
                    let wy = g.mul(y, ids[2])?;
                    g.sum(wy)
                },
            )?;
        }
        "transpose" => {
            let (m, n) = (1 + rng.below(5) as usize, 1 + rng.below(5) as usize);
            let a = rand_vals(rng, m * n);
            let w = rand_vals(rng, m * n);
            fd_check(op, &[vec![m, n], vec![n, m]], &[a, w], &|g, ids| {
                let y = g.transpose(ids[0])?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "reshape" => {
            let s = rand_shape(rng, 3, 4);
            let n = numel(&s);
            let a = rand_vals(rng, n);
            let w = rand_vals(rng, n);
            fd_check(op, &[s, vec![n]], &[a, w], &|g, ids| {
                let total = g.value(ids[0]).numel();
                let y = g.reshape(ids[0], &[total])?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "broadcast" => {
            let dst = rand_shape(rng, 3, 4);
            // Source: right-aligned suffix with random dims collapsed to 1.
            let keep = 1 + rng.below(dst.len() as u64) as usize;
            let mut src: Vec<usize> = dst[dst.len() - keep..].to_vec();
            for d in src.iter_mut() {
                if rng.chance(0.5) {
                    *d = 1;
                }
            }
            let a = rand_vals(rng, numel(&src));
            let w = rand_vals(rng, numel(&dst));
            let dst2 = dst.clone();
            fd_check(op, &[src, dst], &[a, w], &|g, ids| {
                let y = g.broadcast_to(ids[0], &dst2)?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "concat" => {
            let base = rand_shape(rng, 3, 3);
            let axis = rng.below(base.len() as u64) as usize;
            let mut s1 = base.clone();
            let mut s2 = base.clone();
            s1[axis] = 1 + rng.below(3) as usize;
            s2[axis] = 1 + rng.below(3) as usize;
            let mut out = base.clone();
            out[axis] = s1[axis] + s2[axis];
            let a = rand_vals(rng, numel(&s1));
            let b = rand_vals(rng, numel(&s2));
            let w = rand_vals(rng, numel(&out));
            fd_check(op, &[s1, s2, out], &[a, b, w], &|g, ids| {
                let y = g.concat(&[ids[0], ids[1]], axis)?;
                let wy = g.mul(y, ids[2])?;
                g.sum(wy)
            })?;
        }
        "slice" => {
            let s = rand_shape(rng, 3, 5);
            let axis = rng.below(s.len() as u64) as usize;
            let len = 1 + rng.below(s[axis] as u64) as usize;
            let start = rng.below((s[axis] - len + 1) as u64) as usize;
            let mut out = s.clone();
            out[axis] = len;
            let a = rand_vals(rng, numel(&s));
            let w = rand_vals(rng, numel(&out));
            fd_check(op, &[s, out], &[a, w], &|g, ids| {
                let y = g.slice(ids[0], axis, start, len)?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "softmax" => {
            let s = rand_shape(rng, 3, 4);
            let axis = rng.below(s.len() as u64) as usize;
            let a = rand_vals(rng, numel(&s));
            let w = rand_vals(rng, numel(&s));
            fd_check(op, &[s.clone(), s], &[a, w], &|g, ids| {
                let y = g.softmax(ids[0], axis)?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "layer_norm" => {
            // Feature axis of at least 4; rows regenerated until their
            // variance is healthy, since the finite-difference oracle is
            // unstable near zero variance.
            let rows = 1 + rng.below(3) as usize;
            let feat = 4 + rng.below(5) as usize;
            let s = vec![rows, feat];
            let mut a;
            loop {
                a = rand_vals(rng, rows * feat);
                let ok = (0..rows).all(|r| {
                    let row = &a[r * feat..(r + 1) * feat];
                    let mu: f64 = row.iter().sum::<f64>() / feat as f64;
                    let var: f64 =
                        row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / feat as f64;
                    var > 0.05
                });
                if ok {
                    break;
                }
            }
            let w = rand_vals(rng, rows * feat);
            fd_check(op, &[s.clone(), s], &[a, w], &|g, ids| {
                let y = g.layer_norm(ids[0], 1e-10)?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "gelu" => {
            let s = rand_shape(rng, 2, 6);
            let a: Vec<f64> = (0..numel(&s)).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let w = rand_vals(rng, numel(&s));
            fd_check(op, &[s.clone(), s], &[a, w], &|g, ids| {
                let y = g.gelu(ids[0])?;
                let wy = g.mul(y, ids[1])?;
                g.sum(wy)
            })?;
        }
        "sum" | "mean" => {
            let s = rand_shape(rng, 3, 4);
            let a = rand_vals(rng, numel(&s));
            let is_sum = op == "sum";
            fd_check(op, &[s], &[a], &|g, ids| {
                let y = if is_sum { g.sum(ids[0])? } else { g.mean(ids[0])? };
                g.scale(y, 1.3)
            })?;
        }
        "cross_entropy" => {
            let rows = 1 + rng.below(4) as usize;
            let classes = 2 + rng.below(5) as usize;
            let a: Vec<f64> = (0..rows * classes)
                .map(|_| rng.uniform_in(-2.0, 2.0))
                .collect();
            let targets: Vec<usize> =
                (0..rows).map(|_| rng.below(classes as u64) as usize).collect();
            fd_check(op, &[vec![rows, classes]], &[a], &|g, ids| {
                let y = g.cross_entropy(ids[0], &targets)?;
                g.scale(y, 0.9)
            })?;
        }
        "cosine_sim" => {
            // Regenerate near-zero-norm vectors: the function has a pole at
            // zero norm where finite differences are meaningless.
            let n = 2 + rng.below(8) as usize;
            let mut a;
            let mut b;
            loop {
                a = rand_vals(rng, n);
                b = rand_vals(rng, n);
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na > 0.3 && nb > 0.3 {
                    break;
                }
            }
            fd_check(op, &[vec![n], vec![n]], &[a, b], &|g, ids| {
                let y = g.cosine_sim(ids[0], ids[1])?;
                g.scale(y, 1.1)
            })?;
        }
        other => return Err(format!("unknown primitive {other}")),
    }
    Ok(())
}

pub const ALL_PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "mul",
    "sub",
    "broadcast",
    "transpose",
    "reshape",
    "concat",
    "slice",
    "softmax",
    "layer_norm",
    "gelu",
    "mean",
    "sum",
    "mse",
    "cross_entropy",
    "cosine_sim",
];

/// Run `configs` random gradient checks for every primitive. Returns the
/// total number of configurations checked.
pub fn run_primitive_suite(configs: usize, seed: u64) -> Result<usize, String> {
    let mut total = 0;
    for (k, op) in ALL_PRIMITIVES.iter().enumerate() {
        let mut rng = RngStream::new(seed, k as u64 + 1);
        for _ in 0..configs {
            check_primitive_once(op, &mut rng)?;
            total += 1;
        }
    }
    Ok(total)
}
