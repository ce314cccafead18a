//! KernelSHAP: Shapley-value estimation for any black-box scalar predictor.
//!
//! Features are explained in groups of grid cells. A coalition picks which
//! groups take their observed values; the remaining groups are replaced by the
//! background. Attributions come from a weighted least-squares fit over
//! coalition payoffs with the efficiency constraint eliminated exactly, so
//! `sum(phi) == f(x) - f(background)` holds by construction.

use rand::Rng as _;
use rayon::prelude::*;

use crate::features::FeatureMatrix;
use crate::linalg::solve;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Largest group count for which exact enumeration is allowed (2^20 payoffs).
pub const EXACT_GROUP_LIMIT: usize = 20;

/// How coalition payoffs are gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapMode {
    /// Enumerate every non-trivial coalition. Requires at most
    /// [`EXACT_GROUP_LIMIT`] groups.
    Exact,
    /// Draw coalitions in complement pairs; size distribution follows the
    /// Shapley kernel so the least squares fit uses uniform sample weights.
    Sampled { n_coalitions: usize, seed: u64 },
}

/// Raw attribution output: one value per group, in group order.
#[derive(Debug, Clone)]
pub struct ShapValues {
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub predicted: f64,
}

/// The Shapley kernel weight pi(s) = (M-1) / (C(M,s) * s * (M-s)).
/// Only proper coalitions (0 < s < M) have finite weight; the empty and full
/// coalitions are handled by the constrained regression instead.
pub fn shapley_kernel_weight(m: usize, s: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Parameter(format!(
            "kernel weight needs at least 2 players, got {m}"
        )));
    }
    if s == 0 || s >= m {
        return Err(Error::Parameter(format!(
            "kernel weight is defined for 0 < s < {m}, got s={s}"
        )));
    }
    Ok((m - 1) as f64 / (binomial(m, s) * (s * (m - s)) as f64))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// One singleton group per cell: explain every grid entry independently.
pub fn singleton_groups(n_cells: usize) -> Vec<Vec<usize>> {
    (0..n_cells).map(|i| vec![i]).collect()
}

fn validate_groups(groups: &[Vec<usize>], n_cells: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Parameter("kernel_shap needs at least one group".into()));
    }
    let mut owner = vec![false; n_cells];
    for (g, cells) in groups.iter().enumerate() {
        if cells.is_empty() {
            return Err(Error::Parameter(format!("group {g} is empty")));
        }
        for &c in cells {
            if c >= n_cells {
                return Err(Error::Parameter(format!(
                    "group {g} references cell {c}, grid has {n_cells}"
                )));
            }
            if owner[c] {
                return Err(Error::Parameter(format!(
                    "cell {c} appears in more than one group"
                )));
            }
            owner[c] = true;
        }
    }
    if let Some(orphan) = owner.iter().position(|&o| !o) {
        return Err(Error::Parameter(format!(
            "cell {orphan} is not covered by any group"
        )));
    }
    Ok(())
}

/// Estimates Shapley values of `predict` at `x` against `background`.
///
/// `groups` partitions the flattened grid cells; the result carries one phi
/// per group. `predict` must be a pure function of the grid.
pub fn kernel_shap<F>(
    predict: F,
    x: &FeatureMatrix,
    background: &FeatureMatrix,
    groups: &[Vec<usize>],
    mode: ShapMode,
) -> Result<ShapValues>
where
    F: Fn(&FeatureMatrix) -> Result<f64> + Sync,
{
    if x.n_rows != background.n_rows || x.n_cols != background.n_cols {
        return Err(Error::shape(
            format!("{}x{} background", x.n_rows, x.n_cols),
            format!("{}x{}", background.n_rows, background.n_cols),
        ));
    }
    validate_groups(groups, x.data.len())?;
    let m = groups.len();

    let base_value = predict(background)?;
    let predicted = predict(x)?;
    let excess = predicted - base_value;

    if m == 1 {
        return Ok(ShapValues { phi: vec![excess], base_value, predicted });
    }

    let (masks, weights) = match mode {
        ShapMode::Exact => {
            if m > EXACT_GROUP_LIMIT {
                return Err(Error::Parameter(format!(
                    "exact mode enumerates 2^{m} coalitions; limit is {EXACT_GROUP_LIMIT} groups"
                )));
            }
            exact_coalitions(m)?
        }
        ShapMode::Sampled { n_coalitions, seed } => {
            if n_coalitions < 2 * m + 4 {
                return Err(Error::Parameter(format!(
                    "sampled mode needs at least {} coalitions for {m} groups, got {n_coalitions}",
                    2 * m + 4
                )));
            }
            sampled_coalitions(m, n_coalitions, seed)
        }
    };

    let payoffs = evaluate_coalitions(&predict, x, background, groups, &masks)?;
    match solve_constrained(&masks, &weights, &payoffs, base_value, excess) {
        Ok(phi) => Ok(ShapValues { phi, base_value, predicted }),
        Err(first_err) => {
            // A singular system can happen when sampling never separates two
            // groups. Exact enumeration always separates, so give up there.
            let ShapMode::Sampled { n_coalitions, seed } = mode else {
                return Err(first_err);
            };
            for attempt in 0..3u64 {
                let reseed = derive_seed(seed, &format!("shap-resample/{attempt}"));
                let (masks, weights) = sampled_coalitions(m, n_coalitions, reseed);
                let payoffs = evaluate_coalitions(&predict, x, background, groups, &masks)?;
                if let Ok(phi) = solve_constrained(&masks, &weights, &payoffs, base_value, excess)
                {
                    return Ok(ShapValues { phi, base_value, predicted });
                }
            }
            Err(Error::Numeric(format!(
                "kernel SHAP regression stayed singular after resampling ({first_err})"
            )))
        }
    }
}

/// Every coalition with 0 < |S| < M, weighted by the Shapley kernel.
fn exact_coalitions(m: usize) -> Result<(Vec<Vec<bool>>, Vec<f64>)> {
    let count = (1usize << m) - 2;
    let mut masks = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for bits in 1..(1usize << m) - 1 {
        let mask: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
        let s = bits.count_ones() as usize;
        masks.push(mask);
        weights.push(shapley_kernel_weight(m, s)?);
    }
    Ok((masks, weights))
}

/// Coalitions drawn in complement pairs. Sizes follow p(s) proportional to
/// (M-1)/(s(M-s)) and members are uniform given the size, which makes each
/// coalition's draw probability proportional to its kernel weight. The fit can
/// therefore use uniform weights.
fn sampled_coalitions(m: usize, n_coalitions: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let mut rng = rng_from_seed(derive_seed(seed, "shap-coalitions"));
    let size_weights: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = size_weights.iter().sum();

    let pairs = n_coalitions.div_ceil(2);
    let mut masks = Vec::with_capacity(pairs * 2);
    let mut indices: Vec<usize> = (0..m).collect();
    for _ in 0..pairs {
        let mut u = rng.gen_range(0.0..total);
        let mut s = 1;
        for (i, w) in size_weights.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        // Partial Fisher-Yates: the first s entries become the coalition.
        for i in 0..s {
            let j = rng.gen_range(i..m);
            indices.swap(i, j);
        }
        let mut mask = vec![false; m];
        for &i in &indices[..s] {
            mask[i] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|&b| !b).collect();
        masks.push(mask);
        masks.push(complement);
    }
    let weights = vec![1.0; masks.len()];
    (masks, weights)
}

fn evaluate_coalitions<F>(
    predict: &F,
    x: &FeatureMatrix,
    background: &FeatureMatrix,
    groups: &[Vec<usize>],
    masks: &[Vec<bool>],
) -> Result<Vec<f64>>
where
    F: Fn(&FeatureMatrix) -> Result<f64> + Sync,
{
    masks
        .par_iter()
        .map(|mask| {
            let mut grid = background.clone();
            for (on, cells) in mask.iter().zip(groups) {
                if *on {
                    for &c in cells {
                        grid.data[c] = x.data[c];
                    }
                }
            }
            predict(&grid)
        })
        .collect()
}

/// Weighted least squares over coalition payoffs with the efficiency
/// constraint substituted in: phi[M-1] = excess - sum(phi[..M-1]). Rewriting
/// v(S) - base = sum_i z_i phi_i under that substitution gives a free system
/// in M-1 unknowns with design entries z_i - z_{M-1}.
fn solve_constrained(
    masks: &[Vec<bool>],
    weights: &[f64],
    payoffs: &[f64],
    base_value: f64,
    excess: f64,
) -> Result<Vec<f64>> {
    let m = masks[0].len();
    let d = m - 1;
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut row = vec![0.0; d];
    for ((mask, &w), &v) in masks.iter().zip(weights).zip(payoffs) {
        let z_last = mask[m - 1] as u8 as f64;
        for i in 0..d {
            row[i] = mask[i] as u8 as f64 - z_last;
        }
        let target = v - base_value - z_last * excess;
        for i in 0..d {
            if row[i] == 0.0 {
                continue;
            }
            let wi = w * row[i];
            rhs[i] += wi * target;
            for j in 0..d {
                gram[i * d + j] += wi * row[j];
            }
        }
    }
    let mut phi = solve(gram, rhs)?;
    let sum: f64 = phi.iter().sum();
    phi.push(excess - sum);
    Ok(phi)
}
