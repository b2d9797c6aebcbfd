use serde::{Deserialize, Serialize};

/// Confusion counts with malicious (1) as the positive class, and the ratios
/// derived from them. A ratio whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            precision,
            recall,
            f1,
        }
    }

    /// Tallies (prediction, truth) pairs, `true` meaning malicious.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_classifier() {
        let m = Metrics::from_predictions([(true, true), (false, false), (true, true)]);
        assert_eq!((m.accuracy, m.f1), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn worked_counts() {
        let m = Metrics::from_counts(50, 1, 47, 2);
        assert!((m.precision.unwrap() - 0.980_392_156_862_745).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.961_538_461_538_461_5).abs() < 1e-12);
        assert!((m.f1.unwrap() - 0.970_873_786_407_767).abs() < 1e-12);
        assert_eq!(m.accuracy, Some(0.97));
    }

    #[test]
    fn undefined_ratios_are_absent() {
        let m = Metrics::from_counts(0, 0, 10, 3);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        let json = m.to_json();
        assert!(json.contains("\"precision\":null"), "{json}");
        assert!(json.contains("\"fn\":3"), "{json}");
        assert_eq!(Metrics::from_counts(0, 0, 0, 0).accuracy, None);
    }

    proptest! {
        #[test]
        fn identities(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            let m = Metrics::from_counts(tp, fp, tn, fn_);
            let total = tp + fp + tn + fn_;
            if total > 0 {
                prop_assert_eq!(m.accuracy, Some((tp + tn) as f64 / total as f64));
            }
            if tp + fp > 0 {
                prop_assert_eq!(m.precision, Some(tp as f64 / (tp + fp) as f64));
            } else {
                prop_assert_eq!(m.precision, None);
            }
            if tp + fn_ > 0 {
                prop_assert_eq!(m.recall, Some(tp as f64 / (tp + fn_) as f64));
            }
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                prop_assert_eq!(f, 2.0 * p * r / (p + r));
                // same quantity from the counts directly
                prop_assert!((f - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() < 1e-12);
            }
            let back: Metrics = serde_json::from_str(&m.to_json()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
