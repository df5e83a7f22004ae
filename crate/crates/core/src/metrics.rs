//! nuScenes detection score and accuracy-gain helpers.

use crate::error::{Error, Result};

/// Detection quality inputs: mean average precision plus the five true-positive
/// error terms (translation, scale, orientation, velocity, attribute).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScores {
    map: f64,
    mtp: [f64; 5],
}

impl DetectionScores {
    pub fn new(map: f64, mtp: [f64; 5]) -> Result<Self> {
        if !(0.0..=1.0).contains(&map) {
            return Err(Error::domain(format!("mAP must be in [0, 1], got {map}")));
        }
        if let Some(e) = mtp.iter().find(|e| !(**e >= 0.0) || e.is_infinite()) {
            return Err(Error::domain(format!("TP error terms must be finite and >= 0, got {e}")));
        }
        Ok(Self { map, mtp })
    }

    pub fn map(&self) -> f64 {
        self.map
    }

    pub fn mtp(&self) -> [f64; 5] {
        self.mtp
    }
}

/// `(5 mAP + sum(1 - min(1, e))) / 10`; each error term is capped at 1.
pub fn nds(s: &DetectionScores) -> f64 {
    let tp: f64 = s.mtp.iter().map(|e| 1.0 - e.min(1.0)).sum();
    (5.0 * s.map + tp) / 10.0
}

/// Relative accuracy improvement of `dynamic` over `baseline`.
pub fn accuracy_gain(dynamic_mean_nds: f64, baseline_mean_nds: f64) -> Result<f64> {
    if !(baseline_mean_nds > 0.0) {
        return Err(Error::domain(format!(
            "baseline NDS must be > 0, got {baseline_mean_nds}"
        )));
    }
    Ok((dynamic_mean_nds - baseline_mean_nds) / baseline_mean_nds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        let perfect = DetectionScores::new(1.0, [0.0; 5]).unwrap();
        assert_eq!(nds(&perfect), 1.0);
        let worst = DetectionScores::new(0.0, [1.0; 5]).unwrap();
        assert_eq!(nds(&worst), 0.0);
        let mixed = DetectionScores::new(0.4, [0.2, 0.4, 1.2, 0.5, 0.3]).unwrap();
        assert!((nds(&mixed) - 0.46).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(DetectionScores::new(1.1, [0.0; 5]).is_err());
        assert!(DetectionScores::new(-0.1, [0.0; 5]).is_err());
        assert!(DetectionScores::new(0.5, [0.0, -0.1, 0.0, 0.0, 0.0]).is_err());
        assert!(DetectionScores::new(0.5, [f64::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn gain_examples() {
        assert!((accuracy_gain(0.495, 0.43).unwrap() - 0.151_162_790_7).abs() < 1e-9);
        assert_eq!(accuracy_gain(0.43, 0.43).unwrap(), 0.0);
        assert!((accuracy_gain(0.516, 0.43).unwrap() - 0.20).abs() < 1e-12);
        assert!(accuracy_gain(0.5, 0.0).is_err());
    }
}
