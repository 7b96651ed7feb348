//! Domain vocabulary shared across the toolkit: cells, cycles, discharge
//! curves, partial windows and SOH estimates.
//!
//! SOH is always stored as a fraction (0.85), never a percentage. Curves
//! store cumulative discharged capacity in Ah; depth of discharge is derived
//! on demand as `Q / C_cell`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Lower cutoff voltage of the cells the toolkit targets.
pub const CUTOFF_LOW_V: f64 = 2.0;
/// Upper cutoff voltage.
pub const CUTOFF_HIGH_V: f64 = 3.6;
/// Ingestion sanity bounds, 0.5 V around the cutoffs.
pub const VOLTAGE_SANITY_MIN: f64 = 1.5;
pub const VOLTAGE_SANITY_MAX: f64 = 4.0;
/// Upper SOH sanity bound; fresh cells can slightly exceed nominal.
pub const SOH_SANITY_MAX: f64 = 1.2;
/// Relative tolerance for the `soh = C_cell / C_nom` identity.
pub const SOH_IDENTITY_RTOL: f64 = 1e-9;
/// Nominal capacity of the reference LFP 18650 cell, in Ah.
pub const DEFAULT_NOMINAL_CAPACITY_AH: f64 = 1.1;

/// Paired voltage / cumulative discharged capacity samples for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DischargeCurve {
    pub voltage: Vec<f64>,
    pub capacity: Vec<f64>,
}

impl DischargeCurve {
    pub fn new(voltage: Vec<f64>, capacity: Vec<f64>) -> Self {
        DischargeCurve { voltage, capacity }
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }

    /// Rule violations of this curve on its own, without cycle context.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.voltage.len() != self.capacity.len() {
            out.push(format!(
                "voltage and capacity lengths differ ({} vs {})",
                self.voltage.len(),
                self.capacity.len()
            ));
        }
        if self.voltage.len() < 2 {
            out.push(format!("curve has {} samples, need at least 2", self.voltage.len()));
        }
        if let Some(i) = self.capacity.windows(2).position(|w| !(w[1] >= w[0])) {
            out.push(format!(
                "capacity not non-decreasing at sample {} ({} -> {})",
                i + 1,
                self.capacity[i],
                self.capacity[i + 1]
            ));
        }
        if let Some((i, v)) = self
            .voltage
            .iter()
            .enumerate()
            .find(|(_, v)| !(VOLTAGE_SANITY_MIN..=VOLTAGE_SANITY_MAX).contains(*v))
        {
            out.push(format!(
                "voltage {v} at sample {i} outside [{VOLTAGE_SANITY_MIN}, {VOLTAGE_SANITY_MAX}] V"
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_index: u32,
    pub curve: DischargeCurve,
    /// Maximum discharge capacity over the cycle, Ah.
    pub cell_capacity: f64,
    pub soh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    pub nominal_capacity: f64,
    pub cycles: Vec<CycleRecord>,
}

impl CellRecord {
    pub fn cycle(&self, index: u32) -> Option<&CycleRecord> {
        self.cycles
            .binary_search_by_key(&index, |c| c.cycle_index)
            .ok()
            .map(|i| &self.cycles[i])
    }
}

/// A truncated slice of a discharge curve between two depths of discharge.
///
/// The capacity axis is re-zeroed, so `curve.capacity[0] == 0` and the last
/// sample equals `(dod_final - dod_initial) * C_cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialWindow {
    pub dod_initial: f64,
    pub dod_final: f64,
    pub curve: DischargeCurve,
    pub source_cycle: u32,
}

impl PartialWindow {
    /// Width of the window in Ah.
    pub fn q_span(&self) -> f64 {
        match (self.curve.capacity.first(), self.curve.capacity.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "SOH_CNN")]
    SohCnn,
    #[serde(rename = "DSOH_CNN")]
    DsohCnn,
    #[serde(rename = "RF_CNN")]
    RfCnn,
    #[serde(rename = "RF_ICA")]
    RfIca,
}

impl Estimator {
    pub const ALL: [Estimator; 4] =
        [Estimator::SohCnn, Estimator::DsohCnn, Estimator::RfCnn, Estimator::RfIca];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::SohCnn => "SOH_CNN",
            Estimator::DsohCnn => "DSOH_CNN",
            Estimator::RfCnn => "RF_CNN",
            Estimator::RfIca => "RF_ICA",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SohEstimate {
    pub cycle_index: u32,
    pub value: f64,
    pub source: Estimator,
}

/// One broken rule found by [`validate_cell`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub cell_id: String,
    pub cycle_index: Option<u32>,
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cycle_index {
            Some(c) => write!(f, "cell {} cycle {}: {}: {}", self.cell_id, c, self.field, self.rule),
            None => write!(f, "cell {}: {}: {}", self.cell_id, self.field, self.rule),
        }
    }
}

/// Checks every record invariant and reports each broken rule. Never fails.
pub fn validate_cell(record: &CellRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |cycle: Option<u32>, field: &'static str, rule: String| {
        out.push(Violation {
            cell_id: record.cell_id.clone(),
            cycle_index: cycle,
            field,
            rule,
        })
    };

    if !(record.nominal_capacity > 0.0) || !record.nominal_capacity.is_finite() {
        push(None, "nominal_capacity", format!("must be > 0, got {}", record.nominal_capacity));
    }
    for pair in record.cycles.windows(2) {
        if pair[1].cycle_index <= pair[0].cycle_index {
            push(
                Some(pair[1].cycle_index),
                "cycle_index",
                format!(
                    "cycles must be strictly increasing ({} follows {})",
                    pair[1].cycle_index, pair[0].cycle_index
                ),
            );
        }
    }

    for cycle in &record.cycles {
        let c = Some(cycle.cycle_index);
        if !(cycle.soh > 0.0 && cycle.soh <= SOH_SANITY_MAX) {
            push(c, "soh", format!("{} outside bound (0, {SOH_SANITY_MAX}]", cycle.soh));
        }
        if record.nominal_capacity > 0.0 {
            let expected = cycle.cell_capacity / record.nominal_capacity;
            let scale = expected.abs().max(cycle.soh.abs()).max(f64::MIN_POSITIVE);
            if !((cycle.soh - expected).abs() <= SOH_IDENTITY_RTOL * scale) {
                push(
                    c,
                    "soh",
                    format!(
                        "{} differs from cell_capacity / nominal_capacity = {expected}",
                        cycle.soh
                    ),
                );
            }
        }
        for rule in cycle.curve.violations() {
            push(c, "curve", rule);
        }
    }
    out
}
