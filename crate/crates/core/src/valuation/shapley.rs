use super::game::CoalitionGame;
use super::{Method, ShapleyResult, ValuationError};
use crate::seed;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Subset enumeration needs 2^N utilities; beyond this use [`tmc_shapley`].
pub const EXACT_MAX_PLAYERS: usize = 20;

/// Consecutive stable permutations required before TMC stops early.
pub const STABILITY_WINDOW: usize = 10;

/// Exact Shapley values with normalization `1/N`:
///
/// `v_i = (1/N) Σ_{S ⊆ I∖{i}} C(N-1, |S|)^{-1} [U(S ∪ {i}) - U(S)]`
///
/// All `2^N` utilities are evaluated once (in parallel) up front.
pub fn exact_shapley<G: CoalitionGame + ?Sized>(game: &G) -> Result<ShapleyResult, ValuationError> {
    let n = game.num_players();
    if n > EXACT_MAX_PLAYERS {
        return Err(ValuationError::Capacity {
            what: "exact Shapley enumeration",
            players: n,
            limit: EXACT_MAX_PLAYERS,
        });
    }
    let table: Vec<f64> = (0..1u64 << n).into_par_iter().map(|m| game.value(m)).collect();
    let weights = coalition_weights(n);
    let values = game
        .players()
        .iter()
        .enumerate()
        .map(|(i, &org)| {
            let bit = 1u64 << i;
            let v: f64 = (0..1u64 << n)
                .filter(|m| m & bit == 0)
                .map(|m| weights[m.count_ones() as usize] * (table[(m | bit) as usize] - table[m as usize]))
                .sum();
            (org, v)
        })
        .collect();
    Ok(ShapleyResult {
        values,
        num_evaluations: 1u64 << n,
        method: Method::Exact,
        stderr: BTreeMap::new(),
        permutations: 0,
    })
}

/// `w[s] = 1 / (N * C(N-1, s))` for `s = 0..N-1`.
fn coalition_weights(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut binom = vec![1.0f64; n];
    for s in 1..n {
        binom[s] = binom[s - 1] * (n - s) as f64 / s as f64;
    }
    binom.iter().map(|c| 1.0 / (n as f64 * c)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmcParams {
    /// A permutation walk stops once `|U(I) - U(prefix)|` drops below this.
    pub truncation_tol: f64,
    pub max_permutations: usize,
    /// Stop when the largest change of any running mean stays below this
    /// for [`STABILITY_WINDOW`] consecutive permutations.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for TmcParams {
    fn default() -> Self {
        TmcParams {
            truncation_tol: 1e-4,
            max_permutations: 500,
            convergence_tol: 1e-3,
            seed: 0,
        }
    }
}

/// Truncated Monte-Carlo Shapley estimate.
///
/// Samples seeded uniform permutations and averages marginal contributions
/// along each. Once a prefix is within `truncation_tol` of the grand
/// coalition's utility, the remaining players in that permutation get a zero
/// marginal without further utility queries.
pub fn tmc_shapley<G: CoalitionGame + ?Sized>(
    game: &G,
    params: &TmcParams,
) -> Result<ShapleyResult, ValuationError> {
    if params.truncation_tol.is_nan() || params.truncation_tol < 0.0 {
        return Err(ValuationError::InvalidParam("truncation_tol must be >= 0".into()));
    }
    if params.max_permutations == 0 {
        return Err(ValuationError::InvalidParam(
            "max_permutations must be >= 1".into(),
        ));
    }
    if params.convergence_tol.is_nan() || params.convergence_tol < 0.0 {
        return Err(ValuationError::InvalidParam(
            "convergence_tol must be >= 0".into(),
        ));
    }
    let n = game.num_players();
    let players = game.players();
    let mut rng = seed::rng(params.seed);
    let full = game.value(game.grand_mask());
    let mut evaluations = 1u64;

    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    let mut means = vec![0.0f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut marginal = vec![0.0f64; n];
    let mut stable = 0usize;
    let mut done = 0u64;

    for p in 0..params.max_permutations {
        order.shuffle(&mut rng);
        let mut prefix = 0u64;
        let mut prev = 0.0;
        for &i in &order {
            if (full - prev).abs() < params.truncation_tol {
                marginal[i] = 0.0;
                continue;
            }
            prefix |= 1u64 << i;
            let cur = game.value(prefix);
            evaluations += 1;
            marginal[i] = cur - prev;
            prev = cur;
        }
        done = p as u64 + 1;
        let count = done as f64;
        let mut max_change = 0.0f64;
        for i in 0..n {
            sum[i] += marginal[i];
            sum_sq[i] += marginal[i] * marginal[i];
            let m = sum[i] / count;
            max_change = max_change.max((m - means[i]).abs());
            means[i] = m;
        }
        if p > 0 && max_change < params.convergence_tol {
            stable += 1;
            if stable >= STABILITY_WINDOW {
                break;
            }
        } else {
            stable = 0;
        }
    }

    let count = done as f64;
    let stderr = players
        .iter()
        .enumerate()
        .map(|(i, &org)| {
            let se = if done < 2 {
                0.0
            } else {
                let var = ((sum_sq[i] - sum[i] * sum[i] / count) / (count - 1.0)).max(0.0);
                (var / count).sqrt()
            };
            (org, se)
        })
        .collect();
    Ok(ShapleyResult {
        values: players.iter().copied().zip(means).collect(),
        num_evaluations: evaluations,
        method: Method::Tmc,
        stderr,
        permutations: done,
    })
}
