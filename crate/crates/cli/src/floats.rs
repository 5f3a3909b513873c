/// How floats are printed in CSV and `transform` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatStyle {
    /// Shortest representation that parses back to the same `f64`.
    #[default]
    Shortest,
    /// 17 significant digits in scientific notation.
    Exact,
}

impl FloatStyle {
    pub fn format(self, x: f64) -> String {
        match self {
            FloatStyle::Shortest => shortest(x),
            FloatStyle::Exact => format!("{x:.16e}"),
        }
    }

    pub fn join(self, values: impl IntoIterator<Item = f64>, sep: &str) -> String {
        values
            .into_iter()
            .map(|x| self.format(x))
            .collect::<Vec<_>>()
            .join(sep)
    }
}

/// Plain decimal for moderate magnitudes, scientific otherwise. Both forms
/// are Rust's shortest round-trip digits.
pub fn shortest(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
