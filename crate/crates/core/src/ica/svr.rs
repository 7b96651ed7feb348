//! Epsilon-insensitive support vector regression on one input variable
//! with an RBF kernel, solved by SMO on the 2n-variable dual (second-order
//! working set selection, precomputed kernel matrix).

use serde::{Deserialize, Serialize};

use super::IcaError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    /// RBF length-scale in volts: `k(a, b) = exp(-(a - b)^2 / (2 l^2))`.
    pub kernel_width: f64,
    pub penalty: f64,
    /// Half-width of the insensitive tube, Ah.
    pub epsilon_tube: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            kernel_width: 0.04,
            penalty: 10.0,
            epsilon_tube: 3e-4,
            max_iter: 200_000,
            tol: 1e-4,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<(), IcaError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(pos(self.kernel_width) && pos(self.penalty) && pos(self.epsilon_tube) && pos(self.tol)) {
            return Err(IcaError::InvalidConfig(
                "kernel_width, penalty, epsilon_tube and tol must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(IcaError::InvalidConfig("max_iter must be positive".into()));
        }
        if self.tol >= 1e-2 {
            return Err(IcaError::InvalidConfig(format!("tol {} must be < 1e-2", self.tol)));
        }
        Ok(())
    }
}

pub const MIN_SVR_SAMPLES: usize = 10;

/// A fitted regression function `f(x) = sum_i coef_i k(x_i, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support: Vec<f64>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub kernel_width: f64,
    pub iterations: usize,
    pub x_range: (f64, f64),
}

impl SvrModel {
    pub fn eval(&self, x: f64) -> f64 {
        let g = 0.5 / (self.kernel_width * self.kernel_width);
        self.bias
            + self
                .support
                .iter()
                .zip(&self.coef)
                .map(|(s, c)| c * (-(x - s) * (x - s) * g).exp())
                .sum::<f64>()
    }
}

const TAU: f64 = 1e-12;

/// Fits `y ~ f(x)`.
pub fn svr_fit_xy(x: &[f64], y: &[f64], config: &SvrConfig) -> Result<SvrModel, IcaError> {
    config.validate()?;
    let n = x.len();
    if n != y.len() {
        return Err(IcaError::DegenerateInput(format!("{n} inputs but {} targets", y.len())));
    }
    if n < MIN_SVR_SAMPLES {
        return Err(IcaError::DegenerateInput(format!(
            "{n} samples, need at least {MIN_SVR_SAMPLES}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(IcaError::DegenerateInput("non-finite sample".into()));
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(IcaError::DegenerateInput("all inputs are equal".into()));
    }

    let g = 0.5 / (config.kernel_width * config.kernel_width);
    let mut kern = vec![0.0; n * n];
    for i in 0..n {
        kern[i * n + i] = 1.0;
        for j in 0..i {
            let d = x[i] - x[j];
            let k = (-d * d * g).exp();
            kern[i * n + j] = k;
            kern[j * n + i] = k;
        }
    }

    // variables 0..n carry y = +1 (alpha), n..2n carry y = -1 (alpha*)
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let c = config.penalty;
    let eps = config.epsilon_tube;
    let mut alpha = vec![0.0; 2 * n];
    let mut grad: Vec<f64> = (0..2 * n)
        .map(|t| if t < n { eps - y[t] } else { eps + y[t - n] })
        .collect();
    let k_of = |a: usize, b: usize| kern[(a % n) * n + (b % n)];

    let mut iterations = 0;
    loop {
        // i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..2 * n {
            if t < n {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            } else if alpha[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = t;
            }
        }
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            for t in 0..2 * n {
                let (in_low, gd, val) = if t < n {
                    (alpha[t] > 0.0, gmax + grad[t], grad[t])
                } else {
                    (alpha[t] < c, gmax - grad[t], -grad[t])
                };
                if !in_low {
                    continue;
                }
                if val >= gmax2 {
                    gmax2 = val;
                }
                if gd > 0.0 {
                    let mut quad = 2.0 - 2.0 * k_of(i_sel, t);
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -gd * gd / quad;
                    if obj <= obj_min {
                        j_sel = t;
                        obj_min = obj;
                    }
                }
            }
        }
        let violation = gmax + gmax2;
        if violation < config.tol || j_sel == usize::MAX {
            break;
        }
        if iterations >= config.max_iter {
            return Err(IcaError::SolverNotConverged { iterations, violation });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (yi, yj) = (sign(i), sign(j));
        let qij = yi * yj * k_of(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let mut quad = 2.0 + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = 2.0 - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..2 * n {
            let yt = sign(t);
            grad[t] += yi * yt * k_of(i, t) * di + yj * yt * k_of(j, t) * dj;
        }
    }

    // bias from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..2 * n {
        let yt = sign(t);
        let yg = yt * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { 0.5 * (ub + lb) };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        let w = alpha[t] - alpha[t + n];
        if w != 0.0 {
            support.push(x[t]);
            coef.push(w);
        }
    }
    Ok(SvrModel {
        support,
        coef,
        bias: -rho,
        kernel_width: config.kernel_width,
        iterations,
        x_range: (lo, hi),
    })
}
