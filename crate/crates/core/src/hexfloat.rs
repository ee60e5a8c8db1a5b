//! Lossless hexadecimal text encoding for `f64`, in the C99 `%a` style
//! (`-0x1.999999999999ap-4`). Only finite values are accepted.

use crate::error::{Error, Result};

const MANTISSA_BITS: u32 = 52;
const EXP_BIAS: i64 = 1023;

/// Formats a finite `f64` as a hex-float literal. Trailing zero nibbles of
/// the fraction are trimmed.
pub fn format(value: f64) -> String {
    assert!(value.is_finite(), "hex-float encoding requires a finite value");
    let bits = value.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let frac = bits & ((1u64 << MANTISSA_BITS) - 1);
    if biased == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, 1 - EXP_BIAS) } else { (1, biased - EXP_BIAS) };
    let mut digits = format!("{frac:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let exp_sign = if exp >= 0 { "+" } else { "-" };
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{}", exp.abs())
    } else {
        format!("{sign}0x{lead}.{digits}p{exp_sign}{}", exp.abs())
    }
}

/// Parses a literal produced by [`format`]. Rejects anything that does not
/// denote a finite double exactly.
pub fn parse(text: &str) -> Result<f64> {
    let bad = || Error::Format(format!("invalid hex-float literal `{text}`"));
    let (negative, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mantissa, exp) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, digits) = match mantissa.split_once('.') {
        Some((l, d)) => (l, d),
        None => (mantissa, ""),
    };
    if digits.len() > 13 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let lead: u64 = match lead {
        "0" => 0,
        "1" => 1,
        _ => return Err(bad()),
    };
    let frac = if digits.is_empty() {
        0
    } else {
        u64::from_str_radix(digits, 16).map_err(|_| bad())? << (4 * (13 - digits.len()))
    };
    let sign_bit = (negative as u64) << 63;
    let bits = match lead {
        0 if frac == 0 => sign_bit,
        0 => {
            if exp != 1 - EXP_BIAS {
                return Err(bad());
            }
            sign_bit | frac
        }
        _ => {
            let biased = exp + EXP_BIAS;
            if !(1..=2046).contains(&biased) {
                return Err(bad());
            }
            sign_bit | ((biased as u64) << MANTISSA_BITS) | frac
        }
    };
    Ok(f64::from_bits(bits))
}

/// Space-separated hex-float row.
pub fn format_row(values: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format(v));
    }
    out
}

/// Parses a row written by [`format_row`], requiring exactly `expected` values.
pub fn parse_row(text: &str, expected: usize) -> Result<Vec<f64>> {
    let values = if text.is_empty() {
        Vec::new()
    } else {
        text.split(' ').map(parse).collect::<Result<Vec<_>>>()?
    };
    if values.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} components, found {}",
            values.len()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(-2.5), "-0x1.4p+1");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(f64::MIN_POSITIVE / 4.0), "0x0.4p-1022");
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "1.0", "0x2p+0", "0x1.gp+0", "0x1p+5000", "nan", "0x1.0000000000000p"] {
            assert!(parse(s).is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
