//! Cooperative participation strategy that minimizes the number of free
//! riders in one time slot.
//!
//! Starting from the stage equilibrium, every stage free rider `n` below
//! the critical/boundary client gets a pair of bounds on its
//! valuation-computation ratio:
//!
//! * `B_n` — above it, converting to a small positive level strictly
//!   reduces the client's own cost (the cost difference to the stage
//!   equilibrium has negative slope at zero);
//! * `O_n` — above it, even converting to the full cap `D` reduces the
//!   cost. `B_n <= O_n` always.
//!
//! The first (lowest-ratio) free rider `l` whose ratio exceeds `B_l`
//! anchors the conversion: clients `l` and above all convert to a common
//! level `x_coop`, which must stay at or below the cap `x_th(l)`. The cap
//! is the unique nonzero root of the cost-difference function
//!
//! ```text
//! H_l(x) = rho_l/sqrt(G) * (1/sqrt(base + c*x) - 1/sqrt(base)) + E_l * x
//! ```
//!
//! where `base` is the equilibrium total and `c` the number of converted
//! contributors. `H_l` dips negative and recrosses zero exactly once, so
//! bisection on `(0, D]` finds the cap; when the ratio exceeds `O_l` the
//! cap saturates at `D`. Every client's cost strictly drops for
//! `x_coop` in `(0, x_th)`.

use crate::error::{GameError, Result};
use crate::model::{GameConfig, StrategyProfile};
use crate::stage::{EquilibriumCase, StageEquilibrium};

/// Bisection bracket floor and iteration budget for the cap equation.
const BRACKET_EPS_REL: f64 = 1e-12;
const BISECT_MAX_ITER: usize = 200;

/// Conversion bounds `(B_n, O_n)` for the clients that free-ride at the
/// stage equilibrium. Entries are `None` outside the conversion range
/// (and everywhere for an all-contributors equilibrium).
#[derive(Debug, Clone)]
pub struct CooperationBounds {
    entries: Vec<Option<(f64, f64)>>,
    case: EquilibriumCase,
}

impl CooperationBounds {
    /// Lower conversion bound `B_n` for 1-based client `n`.
    pub fn lower(&self, n: usize) -> Option<f64> {
        self.entries.get(n - 1).copied().flatten().map(|(b, _)| b)
    }

    /// Full-contribution bound `O_n` for 1-based client `n`.
    pub fn upper(&self, n: usize) -> Option<f64> {
        self.entries.get(n - 1).copied().flatten().map(|(_, o)| o)
    }

    pub fn case(&self) -> EquilibriumCase {
        self.case
    }

    /// 1-based indices that have bounds.
    pub fn range(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|_| i + 1))
    }
}

/// Geometry of the conversion block, shared by the cap equation and the
/// repeated-game optimizer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConversionShape {
    /// Equilibrium total training data (also the base of every bound).
    pub base: f64,
    /// Number of clients that convert when `l` anchors the block.
    pub converted: usize,
    /// 0-based half-open range of roster indices that convert.
    pub block: (usize, usize),
}

pub(crate) fn conversion_shape(
    eq: &StageEquilibrium,
    cfg: &GameConfig,
    l: usize,
) -> Option<ConversionShape> {
    let n = cfg.len();
    let cap = cfg.uniform_cap()?;
    match eq.case {
        EquilibriumCase::CriticalK(k) => {
            let x_k = eq.profile.levels()[k - 1];
            Some(ConversionShape {
                base: (n - k) as f64 * cap + x_k,
                converted: k - l,
                block: (l - 1, k - 1),
            })
        }
        EquilibriumCase::BoundaryM(m) => Some(ConversionShape {
            base: (n - m) as f64 * cap,
            converted: m - l + 1,
            block: (l - 1, m),
        }),
        EquilibriumCase::AllContributors => None,
    }
}

/// Computes `(B_n, O_n)` for every stage free rider below the critical or
/// boundary client. An all-contributors equilibrium has nothing to
/// convert and yields empty bounds.
pub fn compute_bounds(eq: &StageEquilibrium, cfg: &GameConfig) -> CooperationBounds {
    let n_clients = cfg.len();
    let mut entries = vec![None; n_clients];
    let g = f64::from(cfg.iterations());
    let cap = cfg.uniform_cap().unwrap_or(f64::NAN);

    match eq.case {
        EquilibriumCase::CriticalK(k) => {
            let x_k = eq.profile.levels()[k - 1];
            let base = (n_clients - k) as f64 * cap + x_k;
            for n in 1..k {
                let b = 2.0 * (g * base.powi(3)).sqrt() / (k - n) as f64;
                let reach = (n_clients - n) as f64 * cap + x_k;
                let o = cap * g.sqrt() / (1.0 / base.sqrt() - 1.0 / reach.sqrt());
                entries[n - 1] = Some((b, o));
            }
        }
        EquilibriumCase::BoundaryM(m) => {
            let base = (n_clients - m) as f64 * cap;
            for n in 1..=m {
                let b = 2.0 * (g * base.powi(3)).sqrt() / (m - n + 1) as f64;
                let reach = (n_clients - n + 1) as f64 * cap;
                let o = cap * g.sqrt() / (1.0 / base.sqrt() - 1.0 / reach.sqrt());
                entries[n - 1] = Some((b, o));
            }
        }
        EquilibriumCase::AllContributors => {}
    }
    CooperationBounds {
        entries,
        case: eq.case,
    }
}

/// First free rider whose ratio strictly exceeds its conversion bound, or
/// `None` when no free rider can profitably convert (all keep playing the
/// stage equilibrium).
pub fn find_l(bounds: &CooperationBounds, cfg: &GameConfig) -> Option<usize> {
    bounds.range().find(|&n| {
        let ratio = cfg.clients()[n - 1].valuation_ratio();
        ratio > bounds.lower(n).expect("n is in range")
    })
}

/// Cost difference of client `l` between cooperating at level `x` and the
/// stage equilibrium.
fn cost_gap(eq: &StageEquilibrium, cfg: &GameConfig, l: usize, x: f64) -> f64 {
    let shape = conversion_shape(eq, cfg, l).expect("cap equation needs a conversion case");
    let g = f64::from(cfg.iterations());
    let client = &cfg.clients()[l - 1];
    let with = shape.base + shape.converted as f64 * x;
    client.valuation / g.sqrt() * (1.0 / with.sqrt() - 1.0 / shape.base.sqrt())
        + client.comp_coeff * x
}

/// Maximum common level the converted contributors can choose: `D` when
/// client `l`'s ratio clears the full-contribution bound, otherwise the
/// unique nonzero root of the cost-difference function, found by
/// bisection with residual below `tol` (in cost units).
pub fn solve_x_th(l: usize, eq: &StageEquilibrium, cfg: &GameConfig, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(GameError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let cap = cfg.uniform_cap().ok_or_else(|| {
        GameError::InvalidParameter("cooperation requires a uniform data cap".into())
    })?;
    let bounds = compute_bounds(eq, cfg);
    let upper = bounds
        .upper(l)
        .ok_or_else(|| GameError::InvalidParameter(format!("client {l} has no bounds")))?;
    let ratio = cfg.clients()[l - 1].valuation_ratio();
    if ratio > upper {
        return Ok(cap);
    }

    // H is negative just above zero and recrosses once; if it is still
    // nonpositive at D the cap saturates.
    let mut lo = BRACKET_EPS_REL * cap;
    let mut hi = cap;
    let f_lo = cost_gap(eq, cfg, l, lo);
    let f_hi = cost_gap(eq, cfg, l, hi);
    if f_hi <= 0.0 {
        return Ok(cap);
    }
    if f_lo >= 0.0 {
        return Err(GameError::NoRoot { lo, hi });
    }
    for _ in 0..BISECT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cost_gap(eq, cfg, l, mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    if cost_gap(eq, cfg, l, root).abs() > tol {
        return Err(GameError::NoRoot { lo, hi });
    }
    Ok(root)
}

/// Requested common level for the converted contributors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoopLevel {
    /// A specific level in `(0, x_th]`.
    Level(f64),
    /// The cap `x_th` itself (maximal cooperation).
    Max,
}

/// The assembled cooperative profile for one time slot.
#[derive(Debug, Clone)]
pub struct CooperativeStrategy {
    /// First non-free-rider `l` (1-based), `None` when no client converts.
    pub first_converted: Option<usize>,
    /// Cap `x_th` on the common level, `None` when no client converts.
    pub cap: Option<f64>,
    /// Chosen common level `x_coop`, `None` when no client converts.
    pub level: Option<f64>,
    pub profile: StrategyProfile,
    pub case: EquilibriumCase,
}

impl CooperativeStrategy {
    /// True when the profile strictly improves on the stage equilibrium.
    pub fn is_cooperative(&self) -> bool {
        self.level.is_some_and(|v| v > 0.0)
    }

    pub fn free_rider_count(&self) -> usize {
        self.profile.levels().iter().filter(|&&x| x <= 0.0).count()
    }
}

pub(crate) fn block_levels(
    eq: &StageEquilibrium,
    shape: ConversionShape,
    level: f64,
) -> Vec<f64> {
    let mut levels = eq.profile.levels().to_vec();
    for x in &mut levels[shape.block.0..shape.block.1] {
        *x = level;
    }
    levels
}

/// Builds the cooperative strategy at the given level. Falls back to the
/// stage equilibrium when nobody can convert (either because the
/// equilibrium has no free riders or because every free rider's ratio is
/// below its bound).
pub fn build_coop(
    eq: &StageEquilibrium,
    cfg: &GameConfig,
    level: CoopLevel,
) -> Result<CooperativeStrategy> {
    let fallback = |case| CooperativeStrategy {
        first_converted: None,
        cap: None,
        level: None,
        profile: eq.profile.clone(),
        case,
    };
    if eq.case == EquilibriumCase::AllContributors {
        return Ok(fallback(eq.case));
    }
    let bounds = compute_bounds(eq, cfg);
    let Some(l) = find_l(&bounds, cfg) else {
        return Ok(fallback(eq.case));
    };
    let x_th = solve_x_th(l, eq, cfg, 1e-9)?;
    let x_coop = match level {
        CoopLevel::Max => x_th,
        CoopLevel::Level(v) => {
            if !(v > 0.0) {
                return Err(GameError::InvalidParameter(format!(
                    "cooperative level must be positive, got {v}"
                )));
            }
            if v > x_th * (1.0 + 1e-12) {
                return Err(GameError::LevelAboveCap {
                    level: v,
                    cap: x_th,
                });
            }
            v.min(x_th)
        }
    };
    let shape = conversion_shape(eq, cfg, l).expect("case checked above");
    Ok(CooperativeStrategy {
        first_converted: Some(l),
        cap: Some(x_th),
        level: Some(x_coop),
        profile: StrategyProfile::from_unchecked(block_levels(eq, shape, x_coop)),
        case: eq.case,
    })
}

/// Roster-level cooperation flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorollaryFlags {
    /// Cooperation can eliminate every free rider (client 1 converts).
    pub zero_free_riders: bool,
    /// Cooperation can bring every client to its full cap.
    pub full_contribution: bool,
}

/// Checks whether client 1's ratio clears its own bounds: above `B_1` no
/// client needs to free-ride, above `O_1` everyone can contribute the full
/// cap. An equilibrium without free riders reports the first flag set; the
/// second additionally needs every level at the cap already.
pub fn corollary_checks(cfg: &GameConfig, eq: &StageEquilibrium) -> CorollaryFlags {
    let bounds = compute_bounds(eq, cfg);
    match bounds.lower(1) {
        Some(b1) => {
            let ratio = cfg.clients()[0].valuation_ratio();
            CorollaryFlags {
                zero_free_riders: ratio > b1,
                full_contribution: ratio > bounds.upper(1).expect("paired with lower"),
            }
        }
        // No free riders exist; full contribution means the equilibrium
        // already sits at the cap everywhere.
        None => CorollaryFlags {
            zero_free_riders: true,
            full_contribution: cfg
                .clients()
                .iter()
                .zip(eq.profile.levels())
                .all(|(c, &x)| x >= c.data_cap),
        },
    }
}
