//! Ridge-regression feature ranking.

use crate::features::FeatureMatrix;
use crate::linalg::solve;
use crate::{Error, Result};

/// Fits beta = (X^T X + lambda I)^-1 X^T t with targets t = 2y - 1 and
/// returns (feature index, coefficient) sorted by descending coefficient.
/// Features are expected z-scored by the caller.
pub fn ridge_rank(x: &FeatureMatrix, y: &[u8], lambda: f64) -> Result<Vec<(usize, f64)>> {
    if lambda <= 0.0 {
        return Err(Error::Parameter(format!("ridge lambda must be positive, got {lambda}")));
    }
    let (n, d) = (x.n_rows, x.n_cols);
    if n == 0 {
        return Err(Error::Data("ridge on empty feature matrix".into()));
    }
    if y.len() != n {
        return Err(Error::shape(format!("{n} labels"), format!("{}", y.len())));
    }

    // Normal equations: gram = X^T X + lambda I, rhs = X^T (2y - 1).
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for r in 0..n {
        let row = x.row(r);
        let t = 2.0 * y[r] as f64 - 1.0;
        for i in 0..d {
            rhs[i] += row[i] * t;
            for j in i..d {
                gram[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
        gram[i * d + i] += lambda;
    }
    let beta = solve(gram, rhs)?;

    let mut ranked: Vec<(usize, f64)> = beta.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("NaN ridge coefficient"));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn random_problem(n: usize, d: usize, seed: u64) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = rng_from_seed(seed);
        let x = FeatureMatrix {
            n_rows: n,
            n_cols: d,
            data: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let y = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
        (x, y)
    }

    #[test]
    fn informative_feature_ranks_first() {
        let mut rng = rng_from_seed(8);
        let n = 300;
        let d = 6;
        let mut x = FeatureMatrix::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        for r in 0..n {
            let label = (r % 2) as u8;
            y.push(label);
            let t = 2.0 * label as f64 - 1.0;
            x.set(r, 2, t + rng.gen_range(-0.01..0.01)); // the informative column
            for c in [0, 1, 3, 4, 5] {
                x.set(r, c, rng.gen_range(-1.0..1.0));
            }
        }
        let ranked = ridge_rank(&x, &y, 1.0).unwrap();
        assert_eq!(ranked[0].0, 2);
        // Closed form for x ~= t: beta = n/(n + lambda).
        let expected = n as f64 / (n as f64 + 1.0);
        assert!((ranked[0].1 - expected).abs() < 0.05, "beta={}", ranked[0].1);
    }

    #[test]
    fn huge_lambda_shrinks_everything() {
        let (x, y) = random_problem(50, 8, 9);
        let ranked = ridge_rank(&x, &y, 1e9).unwrap();
        assert!(ranked.iter().all(|(_, b)| b.abs() < 1e-6));
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        for seed in 0..5u64 {
            let (x, y) = random_problem(40, 5, 20 + seed);
            let lambda = 0.7;
            let ranked = ridge_rank(&x, &y, lambda).unwrap();

            // Independent oracle: explicit matrix inverse via nalgebra.
            let xm = nalgebra::DMatrix::from_row_slice(x.n_rows, x.n_cols, &x.data);
            let t = nalgebra::DVector::from_iterator(
                y.len(),
                y.iter().map(|&v| 2.0 * v as f64 - 1.0),
            );
            let gram = xm.transpose() * &xm
                + lambda * nalgebra::DMatrix::<f64>::identity(x.n_cols, x.n_cols);
            let beta = gram.try_inverse().unwrap() * xm.transpose() * t;

            let mut by_index = ranked.clone();
            by_index.sort_by_key(|(i, _)| *i);
            for (i, (_, b)) in by_index.iter().enumerate() {
                assert!((b - beta[i]).abs() < 1e-8, "seed {seed} beta[{i}]");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let (x, y) = random_problem(10, 3, 1);
        assert!(ridge_rank(&x, &y, 0.0).is_err());
        assert!(ridge_rank(&x, &y, -1.0).is_err());
        assert!(ridge_rank(&x, &y[..5], 1.0).is_err());
        let empty = FeatureMatrix { n_rows: 0, n_cols: 3, data: vec![] };
        assert!(ridge_rank(&empty, &[], 1.0).is_err());
    }
}
