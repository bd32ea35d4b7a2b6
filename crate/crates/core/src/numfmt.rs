//! Six-significant-digit number formatting for reports.

pub const SIG_DIGITS: usize = 6;

/// Rounds to six significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// `%g`-style rendering with six significant digits.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let r = round_sig(x);
    let exp = if r.abs() >= 10f64.powi(exp + 1) { exp + 1 } else { exp };
    if !(-5..SIG_DIGITS as i32).contains(&exp) {
        let s = format!("{:.*e}", SIG_DIGITS - 1, x);
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = trim_zeros(mantissa);
        let e: i32 = e.parse().unwrap();
        format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, r))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
