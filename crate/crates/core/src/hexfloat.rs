//! C99-style hexadecimal float literals (`0x1.8p+1`), exact for every finite `f64`.

pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut digits = format!("{mantissa:013x}");
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

pub fn parse(s: &str) -> Option<f64> {
    let s = s.trim();
    match s {
        "nan" => return Some(f64::NAN),
        "inf" | "+inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let rest = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
    let (body, exp) = rest.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    // accumulate up to 64 bits of mantissa exactly; our writer never emits more than 53
    let mut mant: u128 = 0;
    let mut scale: i64 = 0;
    for c in int_part.chars() {
        mant = mant.checked_mul(16)? + c.to_digit(16)? as u128;
    }
    for c in frac_part.chars() {
        mant = mant.checked_mul(16)? + c.to_digit(16)? as u128;
        scale -= 4;
    }
    if mant >> 100 != 0 {
        return None;
    }
    let value = ldexp(mant as f64, exp + scale)?;
    Some(if negative { -value } else { value })
}

fn ldexp(m: f64, e: i64) -> Option<f64> {
    // m is exact here (writer mantissas fit in 53 bits); scale in safe steps
    let mut v = m;
    let mut e = e;
    while e > 0 {
        let step = e.min(1000);
        v *= 2f64.powi(step as i32);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(1000);
        v /= 2f64.powi(step as i32);
        e += step;
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(-0.5), "-0x1p-1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(parse("0x1.8p+1"), Some(3.0));
        assert_eq!(parse("-0x1p-1"), Some(-0.5));
        assert_eq!(parse("0x1.8"), None);
    }

    #[test]
    fn subnormals_round_trip() {
        for x in [f64::MIN_POSITIVE / 3.0, 5e-324, -1e-310] {
            assert_eq!(parse(&format(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let y = parse(&format(x)).unwrap();
            prop_assert_eq!(y.to_bits(), x.to_bits());
        }
    }
}
