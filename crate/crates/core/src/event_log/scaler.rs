use super::{EventLog, LogError};

/// Min-max scaling of durations into `[0, 1]`, fitted on training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub min_seconds: f64,
    pub max_seconds: f64,
}

impl MinMaxScaler {
    pub fn new(min_seconds: f64, max_seconds: f64) -> Result<Self, LogError> {
        if !(min_seconds.is_finite() && max_seconds.is_finite()) || max_seconds < min_seconds {
            return Err(LogError::Scaler(format!(
                "invalid range [{min_seconds}, {max_seconds}]"
            )));
        }
        Ok(Self {
            min_seconds,
            max_seconds,
        })
    }

    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self, LogError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for v in values {
            any = true;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !any {
            return Err(LogError::Scaler("fit on an empty set".into()));
        }
        Self::new(lo, hi)
    }

    /// Fits on every event duration of the (training) log, `[EOS]` zeros included.
    pub fn fit_log(log: &EventLog) -> Result<Self, LogError> {
        Self::fit(
            log.traces
                .iter()
                .flat_map(|t| t.events.iter().map(|e| e.duration)),
        )
    }

    /// All training durations were equal; everything maps to 0.
    pub fn is_degenerate(&self) -> bool {
        self.max_seconds == self.min_seconds
    }

    pub fn apply(&self, seconds: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        ((seconds - self.min_seconds) / (self.max_seconds - self.min_seconds)).clamp(0.0, 1.0)
    }

    /// Affine inverse of [`apply`](Self::apply) (no clamping).
    pub fn invert(&self, scaled: f64) -> f64 {
        self.min_seconds + scaled * (self.max_seconds - self.min_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_midpoint_and_clamp() {
        let s = MinMaxScaler::fit([0.0, 100.0]).unwrap();
        assert_eq!(s.apply(0.0), 0.0);
        assert_eq!(s.apply(100.0), 1.0);
        assert_eq!(s.apply(50.0), 0.5);
        // out-of-range values clamp instead of extrapolating to 1.5
        assert_eq!(s.apply(150.0), 1.0);
        assert_eq!(s.apply(-20.0), 0.0);
        assert_eq!(s.invert(1.5), 150.0);
    }

    #[test]
    fn degenerate_and_empty() {
        let s = MinMaxScaler::fit([7.0, 7.0]).unwrap();
        assert!(s.is_degenerate());
        assert_eq!(s.apply(7.0), 0.0);
        assert_eq!(s.apply(1e6), 0.0);
        assert!(MinMaxScaler::fit(std::iter::empty()).is_err());
    }

    proptest! {
        #[test]
        fn invert_undoes_apply(lo in 0.0f64..1e6, span in 1e-3f64..1e7, t in 0.0f64..=1.0) {
            let s = MinMaxScaler::new(lo, lo + span).unwrap();
            let x = lo + t * span;
            let back = s.invert(s.apply(x));
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
