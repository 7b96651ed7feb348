//! Synthetic degradation datasets.
//!
//! The voltage model is defined in the voltage domain: the fraction of
//! capacity discharged above voltage `V` is
//!
//! ```text
//! F(V) = (G(V_hi) - G(V)) / (G(V_hi) - G(V_lo))
//! G(V) = b (V - V_lo) + sum_k w_k * logistic((V - mu_k) / s_k)
//! ```
//!
//! so each logistic term is a voltage plateau (a localized bump in
//! `|dQ/dV|`, i.e. an IC minimum) and the linear term gives the steep
//! initial drop and the end-of-discharge knee. The model is analytic in
//! both directions: `Q(V) = C_cell F(V)` in closed form, `V(Q)` by
//! bisection. Aging shifts the plateaus down in voltage, broadens them and
//! moves capacity out of the high-voltage plateau.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::seed;
use crate::types::{
    CellRecord, CycleRecord, DischargeCurve, CUTOFF_HIGH_V, CUTOFF_LOW_V,
    DEFAULT_NOMINAL_CAPACITY_AH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FadeShape {
    Linear,
    Knee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_cells: usize,
    pub n_cycles_per_cell: usize,
    pub soh_start: f64,
    pub soh_end: f64,
    pub fade_shape: FadeShape,
    pub knee_position: f64,
    pub cell_variation_std: f64,
    pub voltage_noise_std: f64,
    pub samples_per_curve: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_cells: 12,
            n_cycles_per_cell: 120,
            soh_start: 1.0,
            soh_end: 0.82,
            fade_shape: FadeShape::Knee,
            knee_position: 0.6,
            cell_variation_std: 0.15,
            voltage_noise_std: 0.001,
            samples_per_curve: 300,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_cells == 0 || self.n_cycles_per_cell == 0 {
            return bad("n_cells and n_cycles_per_cell must be positive".into());
        }
        if !(self.soh_end < self.soh_start) {
            return bad(format!(
                "soh_end ({}) must be below soh_start ({})",
                self.soh_end, self.soh_start
            ));
        }
        if !(self.soh_end > 0.0) || self.soh_start > 1.2 {
            return bad("soh range must lie within (0, 1.2]".into());
        }
        if !(self.knee_position > 0.0 && self.knee_position < 1.0) {
            return bad(format!("knee_position {} not in (0, 1)", self.knee_position));
        }
        if !(self.cell_variation_std >= 0.0) || !(self.voltage_noise_std >= 0.0) {
            return bad("standard deviations must be >= 0".into());
        }
        if self.samples_per_curve < 50 {
            return bad(format!("samples_per_curve {} < 50", self.samples_per_curve));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub center: f64,
    pub width: f64,
    pub weight: f64,
}

/// Analytic noiseless discharge model for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageModel {
    pub cell_capacity: f64,
    /// Capacity weight per volt spread uniformly over the voltage range.
    pub base: f64,
    pub plateaus: Vec<Plateau>,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-cell perturbations of the aging map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellTraits {
    pub fade_scale: f64,
    pub start_offset: f64,
    pub voltage_offset: f64,
    pub width_scale: f64,
    pub weight_skew: f64,
}

impl CellTraits {
    pub fn nominal() -> Self {
        CellTraits {
            fade_scale: 1.0,
            width_scale: 1.0,
            ..Default::default()
        }
    }
}

impl VoltageModel {
    /// The aging map: plateau geometry as a function of SOH.
    pub fn for_soh(soh: f64, nominal_capacity: f64, traits: &CellTraits) -> Self {
        let fade = 1.0 - soh;
        let shift = 0.15 * fade + traits.voltage_offset;
        let broaden = (1.0 + 2.0 * fade) * traits.width_scale;
        let base_fraction = 0.12 + 0.3 * fade;
        let plateaus = vec![
            Plateau {
                center: 3.36 - shift,
                width: 0.022 * broaden,
                weight: 0.22 * (1.0 - 1.5 * fade).max(0.05) * (1.0 + traits.weight_skew),
            },
            Plateau {
                center: 3.27 - shift,
                width: 0.026 * broaden,
                weight: 0.45,
            },
            Plateau {
                center: 3.08 - shift,
                width: 0.035 * broaden,
                weight: 0.2 * (1.0 - traits.weight_skew),
            },
        ];
        let sum_w: f64 = plateaus.iter().map(|p| p.weight).sum();
        // base carries `base_fraction` of the mass relative to the plateaus
        let base = base_fraction / (1.0 - base_fraction) * sum_w / (CUTOFF_HIGH_V - CUTOFF_LOW_V);
        VoltageModel {
            cell_capacity: soh * nominal_capacity,
            base,
            plateaus,
        }
    }

    fn g(&self, v: f64) -> f64 {
        self.base * (v - CUTOFF_LOW_V)
            + self
                .plateaus
                .iter()
                .map(|p| p.weight * logistic((v - p.center) / p.width))
                .sum::<f64>()
    }

    fn g_prime(&self, v: f64) -> f64 {
        self.base
            + self
                .plateaus
                .iter()
                .map(|p| {
                    let s = logistic((v - p.center) / p.width);
                    p.weight * s * (1.0 - s) / p.width
                })
                .sum::<f64>()
    }

    fn span(&self) -> f64 {
        self.g(CUTOFF_HIGH_V) - self.g(CUTOFF_LOW_V)
    }

    /// Depth of discharge reached when the voltage has fallen to `v`.
    pub fn dod_at_voltage(&self, v: f64) -> f64 {
        (self.g(CUTOFF_HIGH_V) - self.g(v)) / self.span()
    }

    pub fn capacity_at_voltage(&self, v: f64) -> f64 {
        self.cell_capacity * self.dod_at_voltage(v)
    }

    /// Analytic incremental capacity dQ/dV (negative: Q grows as V falls).
    pub fn ic(&self, v: f64) -> f64 {
        -self.cell_capacity * self.g_prime(v) / self.span()
    }

    fn invert(&self, target: f64, f: impl Fn(f64) -> f64) -> f64 {
        // f is decreasing in v on [CUTOFF_LOW_V, CUTOFF_HIGH_V]
        let (mut lo, mut hi) = (CUTOFF_LOW_V, CUTOFF_HIGH_V);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn voltage_at_dod(&self, dod: f64) -> f64 {
        if dod <= 0.0 {
            return CUTOFF_HIGH_V;
        }
        if dod >= 1.0 {
            return CUTOFF_LOW_V;
        }
        self.invert(dod, |v| self.dod_at_voltage(v))
    }

    pub fn voltage_at_capacity(&self, q: f64) -> f64 {
        self.voltage_at_dod(q / self.cell_capacity)
    }

    /// Noiseless curve sampled uniformly in the combined coordinate
    /// `(DoD + normalized voltage drop) / 2`, so steep and flat regions both
    /// receive samples.
    pub fn sample_curve(&self, n: usize) -> DischargeCurve {
        let dv = CUTOFF_HIGH_V - CUTOFF_LOW_V;
        let arc = |v: f64| 0.5 * (self.dod_at_voltage(v) + (CUTOFF_HIGH_V - v) / dv);
        let mut voltage = Vec::with_capacity(n);
        let mut capacity = Vec::with_capacity(n);
        for i in 0..n {
            let (v, q) = if i == 0 {
                (CUTOFF_HIGH_V, 0.0)
            } else if i == n - 1 {
                (CUTOFF_LOW_V, self.cell_capacity)
            } else {
                let u = i as f64 / (n - 1) as f64;
                let v = self.invert(u, arc);
                (v, self.capacity_at_voltage(v))
            };
            voltage.push(v);
            capacity.push(q);
        }
        DischargeCurve::new(voltage, capacity)
    }
}

/// Fraction of the total fade consumed at life fraction `t` in [0, 1].
pub fn fade_progress(shape: FadeShape, knee: f64, t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    match shape {
        FadeShape::Linear => t,
        FadeShape::Knee => {
            if t <= knee {
                0.3 * t / knee
            } else {
                let u = (t - knee) / (1.0 - knee);
                0.3 + 0.7 * u * u
            }
        }
    }
}

fn clipped_normal<R: Rng>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.clamp(-3.0, 3.0)
}

pub fn cell_traits(spec: &SyntheticSpec, cell: usize) -> CellTraits {
    let mut rng = seed::rng(seed::derive(spec.seed, &[seed::hash_str("cell-traits"), cell as u64]));
    let s = spec.cell_variation_std;
    CellTraits {
        fade_scale: (1.0 + s * clipped_normal(&mut rng)).max(0.0),
        start_offset: 0.02 * s * clipped_normal(&mut rng),
        voltage_offset: 0.05 * s * clipped_normal(&mut rng),
        width_scale: (1.0 + 0.5 * s * clipped_normal(&mut rng)).max(0.2),
        weight_skew: (0.5 * s * clipped_normal(&mut rng)).clamp(-0.5, 0.5),
    }
}

/// SOH of cell `traits` at cycle `cycle` of `spec.n_cycles_per_cell`.
pub fn soh_at(spec: &SyntheticSpec, traits: &CellTraits, cycle: usize) -> f64 {
    let t = cycle as f64 / spec.n_cycles_per_cell as f64;
    let start = spec.soh_start + traits.start_offset;
    let total = (spec.soh_start - spec.soh_end) * traits.fade_scale;
    start - total * fade_progress(spec.fade_shape, spec.knee_position, t)
}

pub fn cell_id(index: usize) -> String {
    format!("syn{index:03}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<CellRecord>, DataError> {
    spec.validate()?;
    let nominal = DEFAULT_NOMINAL_CAPACITY_AH;
    let mut cells = Vec::with_capacity(spec.n_cells);
    for c in 0..spec.n_cells {
        let traits = cell_traits(spec, c);
        let mut noise_rng =
            seed::rng(seed::derive(spec.seed, &[seed::hash_str("voltage-noise"), c as u64]));
        let mut cycles = Vec::with_capacity(spec.n_cycles_per_cell);
        for k in 0..spec.n_cycles_per_cell {
            let soh_target = soh_at(spec, &traits, k);
            let model = VoltageModel::for_soh(soh_target, nominal, &traits);
            let mut curve = model.sample_curve(spec.samples_per_curve);
            if spec.voltage_noise_std > 0.0 {
                for v in curve.voltage.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    *v += spec.voltage_noise_std * z;
                }
            }
            let cell_capacity = model.cell_capacity;
            cycles.push(CycleRecord {
                cycle_index: k as u32,
                curve,
                cell_capacity,
                soh: cell_capacity / nominal,
            });
        }
        cells.push(CellRecord {
            cell_id: cell_id(c),
            nominal_capacity: nominal,
            cycles,
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_cell;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_cells: 2,
            n_cycles_per_cell: 10,
            samples_per_curve: 80,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&small(7)).unwrap();
        let b = generate_synthetic(&small(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn linear_fade_midpoint() {
        // fade progress at t = 50/100 is 0.5 -> 1.0 - 0.2 * 0.5
        let spec = SyntheticSpec {
            n_cycles_per_cell: 100,
            fade_shape: FadeShape::Linear,
            soh_start: 1.0,
            soh_end: 0.8,
            cell_variation_std: 0.0,
            ..Default::default()
        };
        let t = CellTraits::nominal();
        assert!((soh_at(&spec, &t, 50) - 0.9).abs() < 1e-12);

        let spec = SyntheticSpec { cell_variation_std: 0.1, n_cells: 4, ..spec };
        for c in 0..spec.n_cells {
            let t = cell_traits(&spec, c);
            // |z| <= 3 bounds both the start offset and the fade-rate perturbation
            let bound = 0.02 * 0.1 * 3.0 + 0.2 * 0.5 * 0.1 * 3.0;
            assert!((soh_at(&spec, &t, 50) - 0.9).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn noiseless_curves_strictly_decrease() {
        let spec = SyntheticSpec { voltage_noise_std: 0.0, ..small(3) };
        for cell in generate_synthetic(&spec).unwrap() {
            for cyc in &cell.cycles {
                assert!(cyc.curve.voltage.windows(2).all(|w| w[1] < w[0]));
                assert!((cyc.curve.voltage[0] - 3.6).abs() < 1e-12);
                assert_eq!(*cyc.curve.capacity.last().unwrap(), cyc.cell_capacity);
            }
        }
    }

    #[test]
    fn noiseless_invariant_trajectories_are_non_increasing() {
        for shape in [FadeShape::Linear, FadeShape::Knee] {
            let spec = SyntheticSpec {
                voltage_noise_std: 0.0,
                cell_variation_std: 0.0,
                fade_shape: shape,
                ..small(1)
            };
            for cell in generate_synthetic(&spec).unwrap() {
                assert!(cell.cycles.windows(2).all(|w| w[1].soh <= w[0].soh));
            }
        }
    }

    #[test]
    fn generated_cells_validate_clean() {
        for seed in 0..5 {
            for cell in generate_synthetic(&small(seed)).unwrap() {
                let v = validate_cell(&cell);
                assert!(v.is_empty(), "seed {seed}: {v:?}");
            }
        }
    }

    #[test]
    fn model_inversion_round_trips() {
        let m = VoltageModel::for_soh(0.9, 1.1, &CellTraits::nominal());
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.99] {
            let v = m.voltage_at_dod(x);
            assert!((m.dod_at_voltage(v) - x).abs() < 1e-12);
        }
        assert!(m.dod_at_voltage(3.6).abs() < 1e-15);
        assert!((m.dod_at_voltage(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_ic_matches_finite_difference() {
        let m = VoltageModel::for_soh(0.95, 1.1, &CellTraits::nominal());
        let h = 1e-6;
        for &v in &[3.4, 3.3, 3.25, 3.1, 2.8] {
            let fd = (m.capacity_at_voltage(v + h) - m.capacity_at_voltage(v - h)) / (2.0 * h);
            assert!((fd - m.ic(v)).abs() < 1e-6 * m.ic(v).abs().max(1.0), "{v}");
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec { soh_end: 1.0, ..small(0) };
        assert!(matches!(generate_synthetic(&spec), Err(DataError::InvalidSpec(_))));
        let spec = SyntheticSpec { samples_per_curve: 10, ..small(0) };
        assert!(matches!(generate_synthetic(&spec), Err(DataError::InvalidSpec(_))));
    }
}
