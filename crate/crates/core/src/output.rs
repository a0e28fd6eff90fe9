//! Plain-text number formatting shared by the CSV writers.

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros
/// removed, exponent form when the decimal exponent is below -4 or at
/// least 17.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        strip_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa.to_string()), exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[cfg(test)]
mod tests {
    use super::format_g17;

    #[test]
    fn matches_printf() {
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.5, "0.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1.5e-4, "0.00014999999999999999"),
            (1e17, "1e+17"),
            (12345678901234567.0, "12345678901234568"),
            (1e100, "1e+100"),
            (-7.3e-300, "-7.2999999999999996e-300"),
            (0.0, "0"),
        ];
        for (v, s) in cases {
            assert_eq!(format_g17(v), s, "{v}");
        }
    }

    #[test]
    fn round_trips() {
        for v in [std::f64::consts::PI, 1.0 / 3.0, 6.02214076e23, -7.3e-300, 0.015625] {
            assert_eq!(format_g17(v).parse::<f64>().unwrap(), v);
        }
    }
}
