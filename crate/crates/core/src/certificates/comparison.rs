use std::fmt;

/// Comparison function on `[0, inf)`: zero, or `k * r^p` with `k, p > 0`.
///
/// The linear case is `p = 1`. The family is closed under positive scaling,
/// argument scaling and inversion, which is all the precision pipeline needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComparisonFunction {
    Zero,
    Power { k: f64, p: f64 },
}

impl ComparisonFunction {
    pub const IDENTITY: Self = Self::Power { k: 1.0, p: 1.0 };

    pub fn linear(k: f64) -> Self {
        Self::power(k, 1.0)
    }

    /// `k * r^p`; `k = 0` collapses to [`ComparisonFunction::Zero`].
    pub fn power(k: f64, p: f64) -> Self {
        assert!(k >= 0.0 && k.is_finite(), "gain must be finite and nonnegative, got {k}");
        assert!(p > 0.0 && p.is_finite(), "exponent must be positive, got {p}");
        if k == 0.0 {
            Self::Zero
        } else {
            Self::Power { k, p }
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Power { k, p: 1.0 } => k * r,
            Self::Power { k, p } => k * r.max(0.0).powf(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    /// `c * f`.
    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            Self::Zero => Self::Zero,
            Self::Power { k, p } => Self::power(k * c, p),
        }
    }

    /// `r -> f(c * r)`.
    pub fn with_scaled_argument(&self, c: f64) -> Self {
        match *self {
            Self::Zero => Self::Zero,
            Self::Power { k, p } => Self::power(k * c.powf(p), p),
        }
    }

    /// Inverse function; `None` for the zero function.
    pub fn inverse(&self) -> Option<Self> {
        match *self {
            Self::Zero => None,
            Self::Power { k, p } => Some(Self::power(k.powf(-1.0 / p), 1.0 / p)),
        }
    }
}

impl fmt::Display for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Zero => write!(f, "0"),
            Self::Power { k, p: 1.0 } => write!(f, "{k}*r"),
            Self::Power { k, p } => write!(f, "{k}*r^{p}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_zero() {
        assert_eq!(ComparisonFunction::IDENTITY.eval(3.5), 3.5);
        assert_eq!(ComparisonFunction::Zero.eval(3.5), 0.0);
        assert_eq!(ComparisonFunction::linear(0.0), ComparisonFunction::Zero);
        assert!(ComparisonFunction::Zero.inverse().is_none());
    }

    #[test]
    fn argument_scaling() {
        let f = ComparisonFunction::power(2.0, 2.0).with_scaled_argument(3.0);
        assert!((f.eval(1.5) - 2.0 * 4.5f64.powi(2)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(k in 0.01f64..100.0, p in 0.2f64..5.0, r in 0.0f64..50.0) {
            let f = ComparisonFunction::power(k, p);
            let g = f.inverse().unwrap();
            let back = g.eval(f.eval(r));
            prop_assert!((back - r).abs() <= 1e-9 * (1.0 + r));
        }

        #[test]
        fn increasing(k in 0.01f64..100.0, p in 0.2f64..5.0, r in 0.0f64..50.0, dr in 0.001f64..1.0) {
            let f = ComparisonFunction::power(k, p);
            prop_assert!(f.eval(r + dr) > f.eval(r));
            prop_assert_eq!(f.eval(0.0), 0.0);
        }
    }
}
