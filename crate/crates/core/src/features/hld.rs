//! The six high-level descriptor functionals.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Summary statistics of one LLD series over one segment.
///
/// `var` is the population variance (divide by N); `median` averages the two
/// middle elements for even-length series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HldVector {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub var: f64,
    pub std: f64,
}

impl HldVector {
    pub const DIM: usize = 6;

    pub fn as_array(&self) -> [f64; 6] {
        [self.mean, self.min, self.max, self.median, self.var, self.std]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        HldVector {
            mean: a[0],
            min: a[1],
            max: a[2],
            median: a[3],
            var: a[4],
            std: a[5],
        }
    }
}

/// Functional names in canonical column order.
pub const HLD_NAMES: [&str; 6] = ["Mean", "Min", "Max", "Median", "Var", "Std"];

pub fn hld(series: &[f64]) -> Result<HldVector> {
    if series.is_empty() {
        return Err(Error::Parameter("hld of empty series".into()));
    }
    let n = series.len() as f64;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in series {
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = sum / n;
    let mut var = 0.0;
    for &v in series {
        let d = v - mean;
        var += d * d;
    }
    var /= n;

    let mut sorted: Vec<f64> = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in series"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };

    Ok(HldVector {
        mean,
        min,
        max,
        median,
        var,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_case() {
        let h = hld(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(h.mean, 2.5);
        assert_eq!(h.min, 1.0);
        assert_eq!(h.max, 4.0);
        assert_eq!(h.median, 2.5);
        assert_eq!(h.var, 1.25);
        assert!((h.std - 1.25_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_series() {
        let h = hld(&[7.0, 7.0, 7.0]).unwrap();
        assert_eq!(h.as_array(), [7.0, 7.0, 7.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn single_element() {
        let h = hld(&[3.0]).unwrap();
        assert_eq!(h.as_array(), [3.0, 3.0, 3.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_errors() {
        assert!(hld(&[]).is_err());
    }

    proptest! {
        #[test]
        fn ordering_invariants(series in prop::collection::vec(-1e3_f64..1e3, 1..200)) {
            let h = hld(&series).unwrap();
            prop_assert!(h.min <= h.median + 1e-12);
            prop_assert!(h.median <= h.max + 1e-12);
            prop_assert!(h.min <= h.mean + 1e-12);
            prop_assert!(h.mean <= h.max + 1e-12);
            prop_assert!(h.var >= 0.0);
            prop_assert!((h.std - h.var.sqrt()).abs() < 1e-12);
        }
    }
}
