//! Reference implementations shared by the integration and acceptance tests.
//! They are written independently of the library code they check.

#![allow(dead_code)]

use rand::Rng;
use sohforge::forest::{Node, Tree};
use sohforge::nn::{Activation, CnnModel, LayerSpec, Shape, Tensor1D};

/// Tie tolerance on SSE decrease, relative to the parent SSE.
pub const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len() as f64
}

fn sse(ys: &[f64]) -> f64 {
    let m = mean(ys);
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Exhaustive CART: tries every feature and every midpoint between distinct
/// sorted values, scoring each candidate by the children's SSE computed from
/// scratch. Earlier candidates (lower feature, then lower threshold) win
/// unless a later one is better by more than the tie tolerance.
pub fn brute_force_cart(x: &[Vec<f64>], y: &[f64], max_depth: usize, min_leaf: usize) -> OracleNode {
    let rows: Vec<usize> = (0..y.len()).collect();
    grow(x, y, &rows, 0, max_depth, min_leaf)
}

fn grow(x: &[Vec<f64>], y: &[f64], rows: &[usize], depth: usize, max_depth: usize, min_leaf: usize) -> OracleNode {
    let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let leaf = OracleNode::Leaf(mean(&ys));
    if depth >= max_depth || rows.len() < 2 * min_leaf || ys.iter().all(|v| *v == ys[0]) {
        return leaf;
    }
    let parent = sse(&ys);
    let tie = TIE_RTOL * parent;
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let threshold = 0.5 * (pair[0] + pair[1]);
            let left: Vec<f64> = rows.iter().filter(|&&r| x[r][f] <= threshold).map(|&r| y[r]).collect();
            let right: Vec<f64> = rows.iter().filter(|&&r| x[r][f] > threshold).map(|&r| y[r]).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let decrease = parent - sse(&left) - sse(&right);
            let better = match best {
                None => decrease > tie,
                Some((_, _, d)) => decrease > d + tie,
            };
            if better {
                best = Some((f, threshold, decrease));
            }
        }
    }
    let Some((feature, threshold, _)) = best else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
    OracleNode::Split {
        feature,
        threshold,
        left: Box::new(grow(x, y, &l, depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(x, y, &r, depth + 1, max_depth, min_leaf)),
    }
}

/// Structural comparison with a fitted tree. Thresholds must match exactly,
/// leaf values to `leaf_rtol`.
pub fn same_tree(oracle: &OracleNode, tree: &Tree, leaf_rtol: f64) -> Result<(), String> {
    fn walk(o: &OracleNode, t: &Tree, i: usize, rtol: f64, path: &mut String) -> Result<(), String> {
        match (o, &t.nodes[i]) {
            (OracleNode::Leaf(a), Node::Leaf { value, .. }) => {
                if (a - value).abs() <= rtol * a.abs().max(1.0) {
                    Ok(())
                } else {
                    Err(format!("leaf at '{path}': oracle {a}, tree {value}"))
                }
            }
            (
                OracleNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                },
                Node::Split {
                    feature: f,
                    threshold: th,
                    left: l,
                    right: r,
                },
            ) => {
                if feature != f || threshold != th {
                    return Err(format!(
                        "split at '{path}': oracle x{feature} <= {threshold}, tree x{f} <= {th}"
                    ));
                }
                path.push('L');
                walk(left, t, *l, rtol, path)?;
                path.pop();
                path.push('R');
                walk(right, t, *r, rtol, path)?;
                path.pop();
                Ok(())
            }
            (o, n) => Err(format!("node kind differs at '{path}': oracle {o:?}, tree {n:?}")),
        }
    }
    walk(oracle, tree, 0, leaf_rtol, &mut String::new())
}

/// Random small network exercising every layer kind, with a random input.
pub fn random_small_model<R: Rng>(rng: &mut R, seed_value: u64) -> (CnnModel, Tensor1D) {
    loop {
        let channels = rng.gen_range(1..=4);
        let length = rng.gen_range(12..=30);
        let act = |rng: &mut R, leaky: bool| {
            LayerSpec::Activation(if leaky {
                Activation::LeakyRelu {
                    slope: rng.gen_range(0.01..0.3),
                }
            } else {
                Activation::Tanh
            })
        };
        let first_leaky = rng.gen_bool(0.5);
        let mut layers = vec![
            LayerSpec::Conv1d {
                filters: rng.gen_range(1..=4),
                kernel: rng.gen_range(1..=4),
                stride: rng.gen_range(1..=2),
            },
            act(rng, first_leaky),
            LayerSpec::pool(rng.gen_range(1..=3), rng.gen_range(1..=3)),
        ];
        if rng.gen_bool(0.6) {
            layers.push(LayerSpec::conv(rng.gen_range(1..=3), rng.gen_range(1..=3)));
            layers.push(act(rng, !first_leaky));
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(rng.gen_range(2..=6)));
        layers.push(act(rng, !first_leaky));
        layers.push(LayerSpec::dense(1));
        let Ok(mut model) = CnnModel::new(Shape::Seq { channels, length }, layers, seed_value) else {
            continue;
        };
        // nonzero biases so every bias gradient is exercised off the origin
        let params: Vec<f64> = model
            .params()
            .iter()
            .map(|p| if *p == 0.0 { rng.gen_range(-0.3..0.3) } else { *p })
            .collect();
        model.set_params(&params).unwrap();
        let input =
            Tensor1D::new(channels, length, (0..channels * length).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        return (model, input);
    }
}

fn loss(model: &CnnModel, x: &Tensor1D, target: f64) -> f64 {
    let f = model.forward(x).unwrap();
    0.5 * (f - target) * (f - target)
}

pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink (a pooling winner or
    /// activation sign changed), where finite differences are meaningless.
    pub skipped: usize,
    pub worst_rel: f64,
    pub worst_at: String,
}

/// Central finite differences of `0.5 (f - t)^2` against the analytic
/// gradients, for every parameter and every input element.
pub fn finite_difference_check(model: &CnnModel, x: &Tensor1D, target: f64, h: f64, floor: f64) -> FdReport {
    let grads = model.backward(x, target).unwrap();
    let pattern = model.decision_pattern(x).unwrap();
    let mut report = FdReport {
        checked: 0,
        skipped: 0,
        worst_rel: 0.0,
        worst_at: String::new(),
    };
    let record = |analytic: f64, numeric: f64, at: String, report: &mut FdReport| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.worst_rel {
            report.worst_rel = rel;
            report.worst_at = at;
        }
    };

    let base = model.params().to_vec();
    let mut probe = model.clone();
    for i in 0..base.len() {
        let mut values = [0.0; 2];
        let mut kink = false;
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut p = base.clone();
            p[i] += sign * h;
            probe.set_params(&p).unwrap();
            kink |= probe.decision_pattern(x).unwrap() != pattern;
            values[k] = loss(&probe, x, target);
        }
        if kink {
            report.skipped += 1;
            continue;
        }
        record(grads.params[i], (values[0] - values[1]) / (2.0 * h), format!("param {i}"), &mut report);
    }

    for i in 0..x.values.len() {
        let mut values = [0.0; 2];
        let mut kink = false;
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut xp = x.clone();
            xp.values[i] += sign * h;
            kink |= model.decision_pattern(&xp).unwrap() != pattern;
            values[k] = loss(model, &xp, target);
        }
        if kink {
            report.skipped += 1;
            continue;
        }
        record(grads.input.values[i], (values[0] - values[1]) / (2.0 * h), format!("input {i}"), &mut report);
    }
    report
}

/// Left-to-right prefix sums starting at `start`.
pub fn prefix_sums(start: f64, increments: &[f64]) -> Vec<f64> {
    let mut out = vec![start];
    let mut acc = start;
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}
