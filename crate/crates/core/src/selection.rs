//! Per-round organization selection: uniform random sampling, greedy
//! marginal gain over a candidate pool, and contribution ranking with
//! periodic random exploration rounds.

use crate::seed;
use crate::valuation::CoalitionGame;
use crate::OrgId;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("cannot select {k} of {available} organizations")]
    TooMany { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("exploration period must be positive")]
    ZeroPeriod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    Greedy,
    Contribution,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Contribution => "contribution",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "greedy" => Ok(PolicyKind::Greedy),
            "contribution" => Ok(PolicyKind::Contribution),
            other => Err(format!(
                "unknown policy `{other}` (expected random, greedy or contribution)"
            )),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    /// Organizations selected per round.
    pub k: usize,
    /// Contribution mode: rounds with `round % exploration_period == 0`
    /// select at random.
    pub exploration_period: u64,
    pub seed: u64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            kind: PolicyKind::Contribution,
            k: 10,
            exploration_period: 5,
            seed: 0,
        }
    }
}

fn check_k(k: usize, available: usize) -> Result<(), SelectionError> {
    if k == 0 {
        return Err(SelectionError::ZeroK);
    }
    if k > available {
        return Err(SelectionError::TooMany { k, available });
    }
    Ok(())
}

/// Uniform `k`-subset of `orgs` without replacement.
pub fn select_random(orgs: &[OrgId], k: usize, round_seed: u64) -> Result<BTreeSet<OrgId>, SelectionError> {
    check_k(k, orgs.len())?;
    let mut pool: Vec<OrgId> = orgs.to_vec();
    pool.sort_unstable();
    pool.dedup();
    check_k(k, pool.len())?;
    let mut rng = seed::rng(round_seed);
    Ok(pool.choose_multiple(&mut rng, k).copied().collect())
}

/// Greedy marginal-gain selection: starting from the empty coalition, adds
/// `k` times the player maximizing `U(S ∪ {i}) - U(S)`, lower id on ties.
pub fn select_greedy<G: CoalitionGame + ?Sized>(
    game: &G,
    k: usize,
) -> Result<BTreeSet<OrgId>, SelectionError> {
    let n = game.num_players();
    check_k(k, n)?;
    let mut mask = 0u64;
    let mut current = 0.0;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let bit = 1u64 << i;
            if mask & bit != 0 {
                continue;
            }
            let gain = game.value(mask | bit) - current;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, gain) = best.expect("k <= n leaves a candidate");
        mask |= 1u64 << i;
        current += gain;
    }
    Ok((0..n)
        .filter(|i| mask & (1u64 << i) != 0)
        .map(|i| game.players()[i])
        .collect())
}

/// Top-`k` organizations by accumulated contribution (lower id on ties),
/// except in exploration rounds, which fall back to [`select_random`] seeded
/// from `policy.seed` and `round`.
pub fn select_by_contribution(
    scores: &BTreeMap<OrgId, f64>,
    k: usize,
    round: u64,
    policy: &SelectionPolicy,
) -> Result<BTreeSet<OrgId>, SelectionError> {
    check_k(k, scores.len())?;
    if policy.exploration_period == 0 {
        return Err(SelectionError::ZeroPeriod);
    }
    if round.is_multiple_of(policy.exploration_period) {
        let orgs: Vec<OrgId> = scores.keys().copied().collect();
        return select_random(&orgs, k, exploration_seed(policy.seed, round));
    }
    let mut ranked: Vec<(OrgId, f64)> = scores.iter().map(|(&o, &s)| (o, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(o, _)| o).collect())
}

pub(crate) fn exploration_seed(policy_seed: u64, round: u64) -> u64 {
    seed::derive_seed(policy_seed, &[seed::tag::SELECT, round])
}
