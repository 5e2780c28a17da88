use super::ValuationError;
use crate::data::Dataset;
use crate::model::{self, ModelParams};
use crate::OrgId;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

/// Coalitions are bitmasks over player positions, so games are capped at 64
/// players.
pub const MAX_PLAYERS: usize = 64;

/// A transferable-utility game over a fixed, sorted list of players.
///
/// Bit `i` of a coalition mask stands for `players()[i]`. Implementations
/// must return 0 for the empty coalition and be pure functions of the mask.
pub trait CoalitionGame: Sync {
    fn players(&self) -> &[OrgId];

    fn value(&self, mask: u64) -> f64;

    fn num_players(&self) -> usize {
        self.players().len()
    }

    fn grand_mask(&self) -> u64 {
        full_mask(self.num_players())
    }

    fn position(&self, org: OrgId) -> Option<usize> {
        self.players().binary_search(&org).ok()
    }

    /// Mask for a set of organization ids.
    fn mask_of(&self, coalition: &[OrgId]) -> Result<u64, ValuationError> {
        coalition.iter().try_fold(0u64, |m, &o| {
            self.position(o)
                .map(|p| m | (1u64 << p))
                .ok_or(ValuationError::UnknownOrg(o))
        })
    }

    fn utility_of(&self, coalition: &[OrgId]) -> Result<f64, ValuationError> {
        Ok(self.value(self.mask_of(coalition)?))
    }
}

pub(crate) fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn check_players(players: &[OrgId]) -> Result<(), ValuationError> {
    if players.len() > MAX_PLAYERS {
        return Err(ValuationError::Capacity {
            what: "coalition masks",
            players: players.len(),
            limit: MAX_PLAYERS,
        });
    }
    if players.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ValuationError::InvalidGame(
            "players must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Loss-improvement game over one round's submitted local models:
/// `U(S) = L(w_t, D_s) - L(avg_{k in S} w_k, D_s)`, `U(∅) = 0`.
/// Utilities are memoized per coalition.
pub struct UtilityGame {
    pub round: u64,
    prior_global: ModelParams,
    submissions: Vec<ModelParams>,
    players: Vec<OrgId>,
    server_test: Dataset,
    prior_loss: f64,
    cache: Mutex<HashMap<u64, f64>>,
}

impl UtilityGame {
    pub fn new(
        round: u64,
        prior_global: ModelParams,
        submissions: BTreeMap<OrgId, ModelParams>,
        server_test: Dataset,
    ) -> Result<Self, ValuationError> {
        let players: Vec<OrgId> = submissions.keys().copied().collect();
        check_players(&players)?;
        if submissions.values().any(|m| !m.same_shape(&prior_global)) {
            return Err(ValuationError::InvalidGame(
                "submission architecture differs from the global model".into(),
            ));
        }
        let prior_loss = model::loss(&prior_global, &server_test)?;
        Ok(UtilityGame {
            round,
            prior_global,
            submissions: submissions.into_values().collect(),
            players,
            server_test,
            prior_loss,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn prior_global(&self) -> &ModelParams {
        &self.prior_global
    }

    pub fn server_test(&self) -> &Dataset {
        &self.server_test
    }

    pub fn submission(&self, org: OrgId) -> Option<&ModelParams> {
        self.position(org).map(|p| &self.submissions[p])
    }

    /// Number of cached coalitions.
    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    fn compute(&self, mask: u64) -> f64 {
        let members = (0..self.players.len())
            .filter(|&i| mask & (1u64 << i) != 0)
            .map(|i| &self.submissions[i]);
        let avg = ModelParams::average(members).expect("non-empty coalition of one shape");
        let l = model::loss(&avg, &self.server_test).expect("shape checked at construction");
        self.prior_loss - l
    }
}

impl CoalitionGame for UtilityGame {
    fn players(&self) -> &[OrgId] {
        &self.players
    }

    fn value(&self, mask: u64) -> f64 {
        let mask = mask & self.grand_mask();
        if mask == 0 {
            return 0.0;
        }
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(&mask) {
            return v;
        }
        let v = self.compute(mask);
        // First writer wins; a concurrent writer computed the same value.
        *self
            .cache
            .lock()
            .expect("cache poisoned")
            .entry(mask)
            .or_insert(v)
    }
}

/// A game given by an explicit utility table indexed by coalition mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TableGame {
    players: Vec<OrgId>,
    values: Vec<f64>,
}

impl TableGame {
    /// `values[mask]` is the utility of `mask`; `values[0]` must be 0.
    pub fn new(players: Vec<OrgId>, values: Vec<f64>) -> Result<Self, ValuationError> {
        check_players(&players)?;
        if players.len() > 30 {
            return Err(ValuationError::Capacity {
                what: "explicit utility tables",
                players: players.len(),
                limit: 30,
            });
        }
        if values.len() != 1usize << players.len() {
            return Err(ValuationError::InvalidGame(format!(
                "{} players need {} utilities, got {}",
                players.len(),
                1usize << players.len(),
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(ValuationError::InvalidGame(
                "the empty coalition must have utility 0".into(),
            ));
        }
        Ok(TableGame { players, values })
    }

    /// Players `0..n` with `U(mask) = f(mask)`; `f(0)` is forced to 0.
    pub fn from_fn(n: usize, f: impl Fn(u64) -> f64) -> Result<Self, ValuationError> {
        let players = (0..n as u32).map(OrgId).collect();
        let values = (0..(1u64 << n))
            .map(|m| if m == 0 { 0.0 } else { f(m) })
            .collect();
        TableGame::new(players, values)
    }

    /// The same game with players `i` and `j` (positions) exchanged.
    pub fn swap_players(&self, i: usize, j: usize) -> TableGame {
        let swap = |m: u64| {
            let (bi, bj) = ((m >> i) & 1, (m >> j) & 1);
            let mut out = m & !((1 << i) | (1 << j));
            out |= bj << i;
            out |= bi << j;
            out
        };
        let values = (0..self.values.len() as u64)
            .map(|m| self.values[swap(m) as usize])
            .collect();
        TableGame {
            players: self.players.clone(),
            values,
        }
    }
}

impl CoalitionGame for TableGame {
    fn players(&self) -> &[OrgId] {
        &self.players
    }

    fn value(&self, mask: u64) -> f64 {
        self.values[(mask & self.grand_mask()) as usize]
    }
}

/// A game defined by a closure over coalition masks.
pub struct FnGame<F> {
    players: Vec<OrgId>,
    f: F,
}

impl<F: Fn(u64) -> f64 + Sync> FnGame<F> {
    pub fn new(players: Vec<OrgId>, f: F) -> Result<Self, ValuationError> {
        check_players(&players)?;
        Ok(FnGame { players, f })
    }
}

impl<F: Fn(u64) -> f64 + Sync> CoalitionGame for FnGame<F> {
    fn players(&self) -> &[OrgId] {
        &self.players
    }

    fn value(&self, mask: u64) -> f64 {
        let mask = mask & self.grand_mask();
        if mask == 0 {
            0.0
        } else {
            (self.f)(mask)
        }
    }
}

/// `(U_a + U_b)(S) = U_a(S) + U_b(S)` over a common player list.
pub struct SumGame<'a, A: ?Sized, B: ?Sized> {
    a: &'a A,
    b: &'a B,
}

impl<'a, A: CoalitionGame + ?Sized, B: CoalitionGame + ?Sized> SumGame<'a, A, B> {
    pub fn new(a: &'a A, b: &'a B) -> Result<Self, ValuationError> {
        if a.players() != b.players() {
            return Err(ValuationError::InvalidGame(
                "summed games must share their player list".into(),
            ));
        }
        Ok(SumGame { a, b })
    }
}

impl<A: CoalitionGame + ?Sized, B: CoalitionGame + ?Sized> CoalitionGame for SumGame<'_, A, B> {
    fn players(&self) -> &[OrgId] {
        self.a.players()
    }

    fn value(&self, mask: u64) -> f64 {
        self.a.value(mask) + self.b.value(mask)
    }
}
