//! Number formatting of API responses.

use serde_json::Value;

/// `x` rounded to six significant digits; `null` when not finite.
pub fn sig6(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

pub fn opt_sig6(x: Option<f64>) -> Value {
    x.map_or(Value::Null, sig6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_six_significant_digits() {
        assert_eq!(sig6(0.123456789).to_string(), "0.123457");
        assert_eq!(sig6(1234567.0).to_string(), "1234570.0");
        assert_eq!(sig6(-2.5e-9).to_string(), "-2.5e-9");
        assert_eq!(sig6(0.0).to_string(), "0.0");
        assert_eq!(sig6(f64::NAN), Value::Null);
        assert_eq!(opt_sig6(None), Value::Null);
    }
}
