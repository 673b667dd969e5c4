//! Number formatting shared by the exporters.

/// Scientific notation with 17 significant digits (round-trips every `f64`).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 3f64.sqrt(), 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
    }
}
