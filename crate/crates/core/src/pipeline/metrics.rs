use super::PipelineError;

/// `(mantissa, exponent)` with `x == mantissa * 10^exponent`, taken from the
/// shortest decimal that round-trips to `x`.
fn shortest_decimal(x: f64) -> (u128, i32) {
    let s = format!("{:e}", x.abs());
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let mut exp: i32 = exp.parse().expect("exponent digits");
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    exp -= frac.len() as i32;
    let digits = format!("{int}{frac}");
    (digits.parse().expect("mantissa digits"), exp)
}

/// Per-cycle relative error in percent, `|t - e| / t * 100`.
///
/// Evaluated on the shortest decimal forms of the two inputs, so values
/// written as decimals give the decimal answer (`mae(0.8, 0.9) == 12.5`).
/// Falls back to plain floating point when the magnitudes are too far apart
/// for exact alignment.
pub fn mae(soh_true: f64, soh_est: f64) -> Result<f64, PipelineError> {
    if !(soh_true > 0.0) || !soh_true.is_finite() {
        return Err(PipelineError::NonPositiveTruth(soh_true));
    }
    if !soh_est.is_finite() {
        return Err(PipelineError::NonFiniteEstimate(soh_est));
    }
    let float = || (soh_true - soh_est).abs() / soh_true * 100.0;
    let (mt, et) = shortest_decimal(soh_true);
    let (me, ee) = shortest_decimal(soh_est);
    let common = et.min(ee);
    let scale = |m: u128, e: i32| -> Option<u128> { m.checked_mul(10u128.checked_pow((e - common) as u32)?) };
    let (Some(a), Some(b)) = (scale(mt, et), scale(me, ee)) else {
        return Ok(float());
    };
    let diff = if soh_est < 0.0 { a.checked_add(b) } else { Some(a.abs_diff(b)) };
    match diff.and_then(|d| d.checked_mul(100)) {
        Some(num) if num < (1u128 << 100) && a < (1u128 << 100) => Ok(num as f64 / a as f64),
        _ => Ok(float()),
    }
}

/// Arithmetic mean of per-cycle errors.
pub fn aggregate_mae(errors: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = errors.into_iter().fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    (n > 0).then(|| sum / n as f64)
}
