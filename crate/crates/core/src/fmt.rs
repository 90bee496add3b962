//! Shortest round-trip float formatting shared by the text file formats.

pub(crate) fn f64_str(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_owned()
    } else if v.is_nan() {
        "NaN".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

pub(crate) fn join_row<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|v| f64_str(*v)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.0, -0.0, 1.0, 0.1, 1e-17, -3.25e12, std::f64::consts::PI] {
            let s = f64_str(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
