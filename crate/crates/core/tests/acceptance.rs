//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the slow end-to-end runs execute sequentially and share
//! results. Pass criterion names as arguments to run a subset.
//!
//! `SOHFORGE_REAL_DATA` may point at a converted dataset (`.csv`, or a
//! `.json` manifest) to enable the real-data criterion.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sohforge::dataio::{cell_traits, CellTraits, SyntheticSpec, VoltageModel};
use sohforge::forest::{forest_fit, ForestConfig};
use sohforge::ica::{window_ic, IcaConfig};
use sohforge::models::{self, rollout_soh, build_dsoh_cnn, build_soh_cnn};
use sohforge::nn::{Activation, LayerSpec, Shape, TrainConfig};
use sohforge::partial::{sample_window_bounds, truncate, DodInitialDist, UniformDist, WindowSpec};
use sohforge::pipeline::{self, write_evaluation, DataSource, EvaluationReport, ExperimentConfig, RunOptions};
use sohforge::types::{DischargeCurve, Estimator, PartialWindow};

const REAL_DATA_ENV: &str = "SOHFORGE_REAL_DATA";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

/// Reduced schedule for the end-to-end runs so the whole target fits in
/// its time budget on one core.
fn acceptance_train() -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        patience: 8,
        ..TrainConfig::default()
    }
}

fn synthetic_config(seed: u64, window: WindowSpec) -> ExperimentConfig {
    ExperimentConfig {
        train: acceptance_train(),
        master_seed: Some(seed),
        window,
        ..ExperimentConfig::default()
    }
}

fn evaluate(config: &ExperimentConfig) -> Result<EvaluationReport, String> {
    pipeline::run_evaluation(config, &RunOptions::default()).map_err(|e| e.to_string())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let (mut checked, mut skipped, mut worst, mut worst_at) = (0, 0, 0.0f64, String::new());
    let mut kinds = BTreeMap::new();
    let models = 24;
    for m in 0..models {
        let (model, x) = common::random_small_model(&mut rng, m as u64);
        for l in model.layers() {
            let name = match l {
                LayerSpec::Activation(Activation::Tanh) => "TANH",
                LayerSpec::Activation(Activation::LeakyRelu { .. }) => "LEAKY_RELU",
                other => other.kind_name(),
            };
            *kinds.entry(name).or_insert(0) += 1;
        }
        let target = rng.gen_range(-1.0..1.0);
        let r = common::finite_difference_check(&model, &x, target, 1e-5, 1e-6);
        checked += r.checked;
        skipped += r.skipped;
        if r.worst_rel > worst {
            worst = r.worst_rel;
            worst_at = format!("model {m} {}", r.worst_at);
        }
    }
    let all_kinds = kinds.len() == 6;
    check(
        worst <= 1e-4 && all_kinds && skipped * 100 < checked,
        format!(
            "{models} models, {checked} gradients, max rel err {worst:.2e} ({worst_at}), {skipped} at kinks skipped, layer kinds {kinds:?}"
        ),
    )
}

fn window_closure() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc105e);
    let curves: Vec<(f64, DischargeCurve)> = [1.0, 0.95, 0.9, 0.85, 0.8]
        .iter()
        .map(|&soh| {
            let m = VoltageModel::for_soh(soh, 1.1, &CellTraits::nominal());
            (m.cell_capacity, m.sample_curve(120))
        })
        .collect();
    let mut specs: Vec<WindowSpec> = (1..=4).map(WindowSpec::condition).collect();
    specs.push(WindowSpec::low_dod());
    let (mut unclipped, mut clipped, mut worst, mut bad) = (0, 0, 0.0f64, Vec::new());
    for k in 0..10_000 {
        let spec = if k % 3 == 0 {
            let low = rng.gen_range(0.0..1.2);
            WindowSpec {
                dod_initial_dist: DodInitialDist::Gaussian {
                    mean: rng.gen_range(-0.2..1.1),
                    variance: rng.gen_range(0.0..0.05),
                },
                q_max_dist: UniformDist {
                    low,
                    high: low + rng.gen_range(0.0..0.3),
                },
                seed: 0,
            }
        } else {
            specs[k % specs.len()]
        };
        let (cap, curve) = &curves[k % curves.len()];
        let b = sample_window_bounds(&spec, *cap, &mut rng);
        let final_clipped = b.dod_initial + b.q_max / cap > 1.0;
        if final_clipped {
            clipped += 1;
            if b.dod_final != 1.0 {
                bad.push(format!("clipped window {k} has DoD_f {}", b.dod_final));
            }
            continue;
        }
        unclipped += 1;
        let w = truncate(curve, b.dod_initial, b.dod_final, *cap, 0).unwrap();
        for q in [(b.dod_final - b.dod_initial) * cap, w.q_span()] {
            let err = (q - b.q_max).abs();
            worst = worst.max(err);
            if err > 1e-12 {
                bad.push(format!("window {k}: {q} Ah vs Q_max {}", b.q_max));
            }
        }
    }
    check(
        bad.is_empty(),
        format!(
            "{unclipped} unclipped (max |(DoD_f - DoD_i) C - Q_max| = {worst:.1e} Ah), {clipped} clipped{}",
            bad.first().map(|b| format!("; first violation: {b}")).unwrap_or_default()
        ),
    )
}

fn mae_arithmetic() -> Verdict {
    let a = pipeline::mae(0.8, 0.9).unwrap();
    let b = pipeline::mae(1.0, 0.99).unwrap();
    check(a == 12.5 && b == 1.0, format!("mae(0.8, 0.9) = {a}, mae(1.0, 0.99) = {b}"))
}

fn stub_window(cycle: u32) -> PartialWindow {
    PartialWindow {
        dod_initial: 0.2,
        dod_final: 0.7,
        curve: DischargeCurve::new(vec![3.3, 3.2], vec![0.0, 0.55]),
        source_cycle: cycle,
    }
}

fn telescoping() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e1e);
    let mut mismatches = 0;
    let mut longest = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=300);
        longest = longest.max(n);
        let start = rng.gen_range(0.5..1.2);
        let scale = 10f64.powi(rng.gen_range(-12..=0));
        let steps: Vec<f64> = (1..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let windows: Vec<PartialWindow> = (0..n as u32).map(|c| stub_window(c * 3 + 7)).collect();
        let lookup = |present: &PartialWindow, past: &PartialWindow| {
            let t = ((present.source_cycle - 7) / 3) as usize;
            assert_eq!(past.source_cycle + 3, present.source_cycle);
            steps[t - 1]
        };
        let got: Vec<f64> = rollout_soh(&lookup, &windows, start).unwrap().iter().map(|e| e.value).collect();
        let want = common::prefix_sums(start, &steps);
        if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) || got.len() != want.len() {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("1000 sequences up to {longest} cycles, {mismatches} differ from the prefix sums"),
    )
}

fn architecture() -> Verdict {
    let mut problems = Vec::new();
    for (name, model, channels) in [
        ("SOH-CNN", build_soh_cnn(225, 0).unwrap(), 2),
        ("ΔSOH-CNN", build_dsoh_cnn(225, 0).unwrap(), 4),
    ] {
        if model.input_shape() != (Shape::Seq { channels, length: 225 }) {
            problems.push(format!("{name} input {:?}", model.input_shape()));
        }
        let layers = model.layers();
        let convs: Vec<_> = layers.iter().filter(|l| matches!(l, LayerSpec::Conv1d { .. })).collect();
        let pools: Vec<_> = layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool1d { .. })).collect();
        let dense: Vec<usize> = layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::FullyConnected { units } => Some(*units),
                _ => None,
            })
            .collect();
        if convs.len() != 2
            || convs.iter().any(|c| {
                **c != LayerSpec::Conv1d {
                    filters: 50,
                    kernel: 3,
                    stride: 1,
                }
            })
        {
            problems.push(format!("{name} convs {convs:?}"));
        }
        if pools.len() != 2 || pools.iter().any(|p| **p != LayerSpec::pool(3, 3)) {
            problems.push(format!("{name} pools {pools:?}"));
        }
        if dense != [550, 200, 200, 200, 200, 1] {
            problems.push(format!("{name} dense {dense:?}"));
        }
        // every conv and hidden dense layer is followed by an activation
        for (i, l) in layers.iter().enumerate() {
            let hidden = matches!(l, LayerSpec::Conv1d { .. })
                || matches!(l, LayerSpec::FullyConnected { units } if *units != 1);
            if hidden && !matches!(layers.get(i + 1), Some(LayerSpec::Activation(_))) {
                problems.push(format!("{name} layer {i} lacks an activation"));
            }
        }
        if !matches!(layers.last(), Some(LayerSpec::FullyConnected { units: 1 })) {
            problems.push(format!("{name} head is not a linear scalar"));
        }
        let flat = model.shapes().iter().find_map(|s| match s {
            Shape::Flat(n) => Some(*n),
            _ => None,
        });
        if flat != models::flatten_width(225) || flat != Some(24 * 50) {
            problems.push(format!("{name} flatten width {flat:?}"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "conv 50x3/1 x2, pool 3/3 x2, FC 550 + 200 x4 + 1, inputs 2x225 and 4x225".into()
        } else {
            problems.join("; ")
        },
    )
}

fn ica_fidelity() -> Verdict {
    let cfg = IcaConfig::default();
    let spec = SyntheticSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ca);
    let mut worst = 0.0f64;
    let n_curves = 24;
    for i in 0..n_curves {
        let soh = 0.8 + 0.2 * i as f64 / (n_curves - 1) as f64;
        let m = VoltageModel::for_soh(soh, 1.1, &cell_traits(&spec, i));
        let w = truncate(&m.sample_curve(300), 0.0, 1.0, m.cell_capacity, 0).unwrap();
        let ic = match window_ic(&w, &cfg.svr, cfg.grid_size) {
            Ok(ic) => ic,
            Err(e) => return Verdict::Fail(format!("curve {i}: {e}")),
        };
        let (lo, hi) = (ic.voltage_grid[0], *ic.voltage_grid.last().unwrap());
        let margin = 0.1 * (hi - lo);
        let interior: Vec<(f64, f64)> = ic
            .voltage_grid
            .iter()
            .zip(&ic.ic)
            .filter(|(v, _)| **v >= lo + margin && **v <= hi - margin)
            .map(|(v, g)| (*v, *g))
            .collect();
        let scale = interior.iter().map(|(v, _)| m.ic(*v).abs()).fold(0.0, f64::max);
        let err = interior.iter().map(|(v, g)| (g - m.ic(*v)).abs()).fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }

    // windows lying between the second and third transitions
    let n_windows = 40;
    let mut absent = 0;
    for k in 0..n_windows {
        let soh = rng.gen_range(0.8..1.0);
        let m = VoltageModel::for_soh(soh, 1.1, &cell_traits(&spec, 100 + k));
        let d2 = m.dod_at_voltage(m.plateaus[1].center);
        let d3 = m.dod_at_voltage(m.plateaus[2].center);
        let w = truncate(&m.sample_curve(300), d2 + 0.05, d3 - 0.05, m.cell_capacity, 0).unwrap();
        match cfg.features(&w) {
            Ok(None) => absent += 1,
            Ok(Some(_)) => {}
            Err(e) => return Verdict::Fail(format!("window {k}: {e}")),
        }
    }
    let rate = absent as f64 / n_windows as f64;
    check(
        worst < 0.02 && rate > 0.5,
        format!(
            "worst interior IC error {:.2}% over {n_curves} curves, feature absent on {absent}/{n_windows} mid-DoD windows ({:.0}%)",
            100.0 * worst,
            100.0 * rate
        ),
    )
}

fn forest_oracle() -> Verdict {
    let mut fits = 0;
    let mut failures = Vec::new();
    for seed_value in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        for _ in 0..10 {
            let n = rng.gen_range(2..=50);
            let d = rng.gen_range(1..=3);
            let discrete = rng.gen_bool(0.4);
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| if discrete { rng.gen_range(0..5) as f64 } else { rng.gen_range(-1.0..1.0) })
                        .collect()
                })
                .collect();
            let y: Vec<f64> = if rng.gen_bool(0.3) {
                (0..n).map(|_| rng.gen_range(0..3) as f64 * 0.1).collect()
            } else {
                x.iter().map(|r| r[0] * 0.5 + rng.gen_range(-0.2..0.2)).collect()
            };
            let max_depth = rng.gen_range(0..=6);
            let min_leaf = rng.gen_range(1..=(n / 2).clamp(1, 5));
            let model = forest_fit(&x, &y, &ForestConfig::single_tree(max_depth, min_leaf)).unwrap();
            let oracle = common::brute_force_cart(&x, &y, max_depth, min_leaf);
            fits += 1;
            if let Err(e) = common::same_tree(&oracle, &model.trees[0], 1e-12) {
                failures.push(format!("seed {seed_value} n {n} d {d}: {e}"));
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{fits} single-tree fits over 50 seeds, {} differ from brute force{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

struct Runs {
    /// Condition ii reports per master seed.
    fusion: BTreeMap<u64, EvaluationReport>,
}

fn fusion_dominance(runs: &mut Runs) -> Verdict {
    let mut rf = Vec::new();
    let mut best_single = Vec::new();
    let mut lines = Vec::new();
    for seed_value in [0u64, 1, 2] {
        let report = match evaluate(&synthetic_config(seed_value, WindowSpec::condition(2))) {
            Ok(r) => r,
            Err(e) => return Verdict::Fail(format!("seed {seed_value}: {e}")),
        };
        let soh = report.mae(Estimator::SohCnn).unwrap();
        let dsoh = report.mae(Estimator::DsohCnn).unwrap();
        let fused = report.mae(Estimator::RfCnn).unwrap();
        lines.push(format!("seed {seed_value}: SOH {soh:.3}% ΔSOH {dsoh:.3}% RF {fused:.3}%"));
        rf.push(fused);
        best_single.push(soh.min(dsoh));
        runs.fusion.insert(seed_value, report);
    }
    let (m_rf, m_best) = (median(rf.clone()), median(best_single));
    let worst_rf = rf.iter().cloned().fold(0.0, f64::max);
    check(
        m_rf <= m_best && worst_rf < 5.0,
        format!(
            "median RF-CNN {m_rf:.3}% vs median best single {m_best:.3}%, worst RF-CNN {worst_rf:.3}% ({})",
            lines.join(", ")
        ),
    )
}

fn sweep_ordering(runs: &Runs) -> Verdict {
    let mut maes = Vec::new();
    for k in 1..=4 {
        let mae = if k == 2 && runs.fusion.contains_key(&0) {
            runs.fusion[&0].mae(Estimator::RfCnn).unwrap()
        } else {
            match evaluate(&synthetic_config(0, WindowSpec::condition(k))) {
                Ok(r) => r.mae(Estimator::RfCnn).unwrap(),
                Err(e) => return Verdict::Fail(format!("condition {k}: {e}")),
            }
        };
        maes.push(mae);
    }
    let ordered = maes.windows(2).all(|p| p[0] <= p[1]);
    let shown: Vec<String> = ["i", "ii", "iii", "iv"]
        .iter()
        .zip(&maes)
        .map(|(n, m)| format!("{n} {m:.3}%"))
        .collect();
    check(ordered, format!("RF-CNN MAE by condition: {}", shown.join(", ")))
}

fn strip_timings(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    serde_json::to_string_pretty(&v).unwrap()
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "report.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(runs: &Runs) -> Verdict {
    let config = synthetic_config(0, WindowSpec::condition(2));
    let first = match runs.fusion.get(&0) {
        Some(r) => r.clone(),
        None => match evaluate(&config) {
            Ok(r) => r,
            Err(e) => return Verdict::Fail(e),
        },
    };
    let second = match evaluate(&config) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e),
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_evaluation(&a, &first).unwrap();
    write_evaluation(&b, &second).unwrap();
    let same_report = strip_timings(&a.join("report.json")) == strip_timings(&b.join("report.json"));
    let (fa, fb) = (files_under(&a), files_under(&b));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    check(
        same_report && differing.is_empty(),
        format!(
            "report.json {} modulo timings; {} other output files, {} differ",
            if same_report { "identical" } else { "differs" },
            fa.len(),
            differing.len()
        ),
    )
}

fn real_data() -> Verdict {
    let Some(path) = std::env::var_os(REAL_DATA_ENV).map(PathBuf::from) else {
        return Verdict::Skip(format!("set {REAL_DATA_ENV} to a converted dataset to enable"));
    };
    let data = if path.extension().is_some_and(|e| e == "json") {
        DataSource::Manifest(path)
    } else {
        DataSource::Csv(path)
    };
    let base = ExperimentConfig {
        data,
        master_seed: Some(0),
        ..ExperimentConfig::default()
    };
    let cond2 = match evaluate(&base) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("condition ii: {e}")),
    };
    let low = ExperimentConfig {
        window: WindowSpec::low_dod(),
        estimators: vec![Estimator::SohCnn, Estimator::DsohCnn, Estimator::RfCnn, Estimator::RfIca],
        ..base
    };
    let low = match evaluate(&low) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("low DoD: {e}")),
    };
    let rf2 = cond2.mae(Estimator::RfCnn).unwrap();
    let (rf_low, ica_low) = (low.mae(Estimator::RfCnn).unwrap(), low.mae(Estimator::RfIca).unwrap());
    check(
        rf2 <= 2.0 && ica_low > rf_low,
        format!("condition ii RF-CNN {rf2:.3}%; low DoD RF-ICA {ica_low:.3}% vs RF-CNN {rf_low:.3}%"),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut runs = Runs { fusion: BTreeMap::new() };

    type Check<'a> = (&'static str, u64, Box<dyn FnOnce(&mut Runs) -> Verdict + 'a>);
    let checks: Vec<Check> = vec![
        ("gradient_correctness", 10, Box::new(|_| gradient_correctness())),
        ("window_closure", 1, Box::new(|_| window_closure())),
        ("mae_arithmetic", 1, Box::new(|_| mae_arithmetic())),
        ("rollout_telescoping", 1, Box::new(|_| telescoping())),
        ("architecture_conformance", 1, Box::new(|_| architecture())),
        ("svr_ica_fidelity", 60, Box::new(|_| ica_fidelity())),
        ("forest_oracle", 30, Box::new(|_| forest_oracle())),
        ("fusion_dominance", 15 * 60, Box::new(fusion_dominance)),
        ("sweep_ordering", 45 * 60, Box::new(|r| sweep_ordering(r))),
        ("determinism", 15 * 60, Box::new(|r| determinism(r))),
        ("real_data", u64::MAX, Box::new(|_| real_data())),
    ];

    let mut failed = 0;
    for (name, budget, run) in checks {
        if !selected(name) {
            continue;
        }
        let start = Instant::now();
        let verdict = run(&mut runs);
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(budget);
        let timing = if budget == u64::MAX {
            format!("{:.1} s", elapsed.as_secs_f64())
        } else {
            format!("{:.1} s of {budget} s", elapsed.as_secs_f64())
        };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) if over => ("FAIL", format!("{d}; over time budget")),
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("[{tag}] {name}: {detail} [{timing}]");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
