//! Change scores: vector-distance comparison of a segment's HLD vector
//! against the participant's baseline-condition mean, plus the conventional
//! elementwise-delta variant.

use super::hld::HldVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeScore {
    pub euclid: f64,
    pub cosine: f64,
    /// Set when a zero-norm vector made the cosine undefined (reported as 0).
    pub degenerate: bool,
}

pub fn change_score(post: &HldVector, baseline: &HldVector) -> ChangeScore {
    let p = post.as_array();
    let b = baseline.as_array();
    let mut dist2 = 0.0;
    let mut dot = 0.0;
    let mut np = 0.0;
    let mut nb = 0.0;
    for i in 0..6 {
        let d = p[i] - b[i];
        dist2 += d * d;
        dot += p[i] * b[i];
        np += p[i] * p[i];
        nb += b[i] * b[i];
    }
    let norm = (np * nb).sqrt();
    let (cosine, degenerate) = if norm == 0.0 { (0.0, true) } else { (dot / norm, false) };
    ChangeScore {
        euclid: dist2.sqrt(),
        cosine: cosine.clamp(-1.0, 1.0),
        degenerate,
    }
}

/// Conventional change score: elementwise `post - baseline`.
pub fn delta_change_score(post: &HldVector, baseline: &HldVector) -> [f64; 6] {
    let p = post.as_array();
    let b = baseline.as_array();
    [p[0] - b[0], p[1] - b[1], p[2] - b[2], p[3] - b[3], p[4] - b[4], p[5] - b[5]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: [f64; 6]) -> HldVector {
        HldVector::from_array(a)
    }

    #[test]
    fn identity_is_zero_distance_unit_cosine() {
        let x = v([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cs = change_score(&x, &x);
        assert_eq!(cs.euclid, 0.0);
        assert!((cs.cosine - 1.0).abs() < 1e-12);
        assert!(!cs.degenerate);
    }

    #[test]
    fn collinear_scaling() {
        let b = v([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = v([2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        let cs = change_score(&p, &b);
        assert!((cs.cosine - 1.0).abs() < 1e-12);
        let norm_b = b.as_array().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((cs.euclid - norm_b).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors() {
        let p = v([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = v([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let cs = change_score(&p, &b);
        assert!(cs.cosine.abs() < 1e-12);
        assert!((cs.euclid - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_flagged() {
        let z = v([0.0; 6]);
        let p = v([1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let cs = change_score(&p, &z);
        assert_eq!(cs.cosine, 0.0);
        assert!(cs.degenerate);
    }

    #[test]
    fn delta_arithmetic() {
        let b = v([2.0; 6]);
        let p = v([5.0; 6]);
        assert_eq!(delta_change_score(&p, &b), [3.0; 6]);
        assert_eq!(delta_change_score(&b, &b), [0.0; 6]);
    }
}
