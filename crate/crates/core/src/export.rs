//! Deterministic number formatting for CSV and JSON output.

/// Nine significant digits in scientific notation, e.g. `1.23456789e-3`.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // Normalize negative zero so output does not depend on rounding paths.
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.8e}")
}

/// Nine significant digits in the shortest plain form: fixed notation for
/// moderate magnitudes with trailing zeros trimmed, scientific otherwise.
pub fn fmt_short(v: f64) -> String {
    if !v.is_finite() {
        return fmt_sig(v);
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{exp}");
    }
    // Re-render the rounded value so the digit count follows the rounding.
    let rounded: f64 = sci.parse().expect("round trip");
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{rounded:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_forms() {
        assert_eq!(fmt_short(0.5), "0.5");
        assert_eq!(fmt_short(2.0), "2");
        assert_eq!(fmt_short(-0.0), "0");
        assert_eq!(fmt_short(3f64.sqrt()), "1.73205081");
        assert_eq!(fmt_short(9.9999999996), "10");
        assert_eq!(fmt_short(1234.5), "1234.5");
        assert_eq!(fmt_short(1.5e-7), "1.5e-7");
        assert_eq!(fmt_short(-2.5e12), "-2.5e12");
        assert_eq!(fmt_short(1.0 / 3.0), "0.333333333");
    }

    #[test]
    fn formats() {
        assert_eq!(fmt_sig(0.0), "0.00000000e0");
        assert_eq!(fmt_sig(-0.0), "0.00000000e0");
        assert_eq!(fmt_sig(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_sig(-12345.6789), "-1.23456789e4");
        assert_eq!(fmt_sig(f64::NAN), "NaN");
    }
}
