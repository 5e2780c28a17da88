//! Checkers for the symmetry, dummy and additivity properties of an exact
//! Shapley result. Every check scans all coalitions, so games are limited
//! to [`AXIOM_MAX_PLAYERS`] players.

use super::game::{full_mask, CoalitionGame, SumGame};
use super::shapley::exact_shapley;
use super::{ShapleyResult, ValuationError};
use crate::OrgId;
use serde::{Deserialize, Serialize};

pub const AXIOM_MAX_PLAYERS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub holds: bool,
    /// Pairs with `U(S ∪ {i}) = U(S ∪ {j})` for every `S` avoiding both.
    pub interchangeable: Vec<(OrgId, OrgId)>,
    /// Interchangeable pairs whose values differ, with `|v_i - v_j|`.
    pub violations: Vec<(OrgId, OrgId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyCheck {
    pub holds: bool,
    /// Players whose marginal contribution is zero for every coalition.
    pub null_players: Vec<OrgId>,
    /// Players whose marginal contribution always equals `U({i})`.
    pub standalone_players: Vec<OrgId>,
    /// Players violating the matching value condition, with the residual.
    pub violations: Vec<(OrgId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityCheck {
    pub holds: bool,
    pub max_residual: f64,
    pub worst_player: Option<OrgId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub symmetry: SymmetryCheck,
    pub dummy: DummyCheck,
    pub additivity: AdditivityCheck,
}

impl AxiomReport {
    pub fn all_hold(&self) -> bool {
        self.symmetry.holds && self.dummy.holds && self.additivity.holds
    }
}

/// Verifies `result` (from [`exact_shapley`] on `game`) against the three
/// axioms. Additivity is checked by comparing the exact values of
/// `game + other` with the sum of the values of both games.
pub fn check_axioms<G, H>(
    game: &G,
    result: &ShapleyResult,
    other: &H,
    tol: f64,
) -> Result<AxiomReport, ValuationError>
where
    G: CoalitionGame + ?Sized,
    H: CoalitionGame + ?Sized,
{
    let n = game.num_players();
    if n > AXIOM_MAX_PLAYERS {
        return Err(ValuationError::Capacity {
            what: "axiom checks",
            players: n,
            limit: AXIOM_MAX_PLAYERS,
        });
    }
    let players = game.players();
    if result.values.len() != n || players.iter().any(|p| !result.values.contains_key(p)) {
        return Err(ValuationError::InvalidGame(
            "result does not cover the game's players".into(),
        ));
    }
    let table: Vec<f64> = (0..1u64 << n).map(|m| game.value(m)).collect();
    let all = full_mask(n);
    let v = |i: usize| result.values[&players[i]];

    let mut interchangeable = Vec::new();
    let mut sym_violations = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (bi, bj) = (1u64 << i, 1u64 << j);
            let swap_ok = (0..=all)
                .filter(|m| m & (bi | bj) == 0)
                .all(|m| (table[(m | bi) as usize] - table[(m | bj) as usize]).abs() <= tol);
            if swap_ok {
                interchangeable.push((players[i], players[j]));
                let d = (v(i) - v(j)).abs();
                if d > tol {
                    sym_violations.push((players[i], players[j], d));
                }
            }
        }
    }

    let mut null_players = Vec::new();
    let mut standalone_players = Vec::new();
    let mut dummy_violations = Vec::new();
    for (i, &player) in players.iter().enumerate() {
        let bit = 1u64 << i;
        let alone = table[bit as usize];
        let marginals = (0..=all)
            .filter(|m| m & bit == 0)
            .map(|m| table[(m | bit) as usize] - table[m as usize]);
        let mut is_null = true;
        let mut is_standalone = true;
        for d in marginals {
            is_null &= d.abs() <= tol;
            is_standalone &= (d - alone).abs() <= tol;
        }
        if is_null {
            null_players.push(player);
            if v(i).abs() > tol {
                dummy_violations.push((player, v(i).abs()));
            }
        } else if is_standalone {
            standalone_players.push(player);
            let r = (v(i) - alone).abs();
            if r > tol {
                dummy_violations.push((player, r));
            }
        }
    }

    let sum_game = SumGame::new(game, other)?;
    let sum_values = exact_shapley(&sum_game)?;
    let other_values = exact_shapley(other)?;
    let mut max_residual = 0.0f64;
    let mut worst_player = None;
    for &p in players {
        let r = (sum_values.get(p) - result.get(p) - other_values.get(p)).abs();
        if r > max_residual || worst_player.is_none() {
            max_residual = max_residual.max(r);
            worst_player = Some(p);
        }
    }

    Ok(AxiomReport {
        symmetry: SymmetryCheck {
            holds: sym_violations.is_empty(),
            interchangeable,
            violations: sym_violations,
        },
        dummy: DummyCheck {
            holds: dummy_violations.is_empty(),
            null_players,
            standalone_players,
            violations: dummy_violations,
        },
        additivity: AdditivityCheck {
            holds: max_residual <= tol,
            max_residual,
            worst_player,
        },
    })
}
