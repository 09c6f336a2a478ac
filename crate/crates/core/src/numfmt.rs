//! Decimal formatting used by every text artifact the crate writes.

/// Formats with 17 significant digits so that parsing the text back yields the
/// identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of -0.0 out of output files
        return "0".to_string();
    }
    format!("{:.16e}", x)
}

pub fn join_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(",")
}
