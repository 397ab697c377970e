//! C99-style hexadecimal float strings (`%a`), used wherever binary64 values
//! must survive a text round trip bit for bit.

use crate::error::{Error, Result};

/// Formats a finite `f64` as a hex-float string such as `0x1.8p+1`.
///
/// Non-finite values are written as `inf`, `-inf` and `nan`.
pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let exp_sign = if exp < 0 { '-' } else { '+' };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{}", exp.abs())
    } else {
        format!("{sign}0x{lead}.{frac}p{exp_sign}{}", exp.abs())
    }
}

/// Parses a hex-float string produced by [`format`] (or any `%a` output
/// with at most 15 significant hex digits).
pub fn parse(s: &str) -> Result<f64> {
    let err = || Error::Parse(format!("invalid hex float {s:?}"));
    let t = s.trim();
    match t {
        "nan" => return Ok(f64::NAN),
        "inf" | "+inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match t.as_bytes().first() {
        Some(b'-') => (true, &t[1..]),
        Some(b'+') => (false, &t[1..]),
        _ => (false, t),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(err)?;
    let (mant_str, exp_str) = rest.split_once(['p', 'P']).ok_or_else(err)?;
    let exp: i64 = exp_str.parse().map_err(|_| err())?;
    let (int_part, frac_part) = mant_str.split_once('.').unwrap_or((mant_str, ""));
    if int_part.is_empty() || int_part.len() + frac_part.len() > 15 {
        return Err(err());
    }
    let mut mant: u64 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        let d = c.to_digit(16).ok_or_else(err)? as u64;
        mant = (mant << 4) | d;
    }
    let shift = exp - 4 * frac_part.len() as i64;
    if mant >= 1u64 << 53 {
        return Err(err());
    }
    let value = ldexp(mant as f64, shift);
    Ok(if negative { -value } else { value })
}

fn ldexp(mut x: f64, mut k: i64) -> f64 {
    let up = f64::from_bits(((1023 + 1023) as u64) << 52);
    let down = f64::from_bits(1u64 << 52);
    while k > 1023 {
        x *= up;
        k -= 1023;
    }
    while k < -1022 {
        x *= down;
        k += 1022;
    }
    x * f64::from_bits(((k + 1023) as u64) << 52)
}
