//! Numeric serialization helpers: all report output carries 12 significant
//! digits so repeated runs are byte-comparable.

/// Round to 12 significant digits.
pub fn round_sig12(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let magnitude = v.abs().log10().floor();
    let scale = 10f64.powf(11.0 - magnitude);
    (v * scale).round() / scale
}

/// Fixed-width decimal string with 12 significant digits; empty for NaN so
/// CSV cells stay clean.
pub fn fmt_sig12(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if !v.is_finite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let rounded = round_sig12(v);
    // Display already prints the shortest exact form of the rounded value.
    format!("{rounded}")
}

/// JSON number rounded to 12 significant digits; NaN becomes null.
pub fn json_num(v: f64) -> serde_json::Value {
    if v.is_nan() || v.is_infinite() {
        return serde_json::Value::Null;
    }
    serde_json::Number::from_f64(round_sig12(v))
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

pub fn json_num_opt(v: Option<f64>) -> serde_json::Value {
    match v {
        Some(x) => json_num(x),
        None => serde_json::Value::Null,
    }
}
