//! Analytic cost model of a single cross-silo federated-learning process.
//!
//! Each client `n` picks an amount of local training data `x_n` in
//! `[0, D_n]`. With `B = sum(x)` the total batch and `G` the iteration
//! count, the model accuracy loss is
//!
//! ```text
//! A(B) = 1 / sqrt(B * G) + 1 / G
//! ```
//!
//! and the per-slot total cost of client `n` is
//!
//! ```text
//! F_n(x) = rho_n * A(B) + E_n * x_n + C_n + p
//! ```
//!
//! i.e. valuation-weighted accuracy loss plus computation cost plus the
//! constant communication cost and server payment. An empty batch means
//! unbounded accuracy loss; the model represents that with `f64::INFINITY`,
//! which propagates through comparisons (any finite cost is preferred).
//!
//! The key per-client quantity is `h_n = cbrt(rho_n^2 / (4 G E_n^2))`: the
//! total batch size at which client `n`'s marginal accuracy gain equals its
//! marginal computation cost. All equilibrium structure is driven by the
//! valuation-computation ratios `rho_n / E_n`, which order the `h_n`.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Economic parameters of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    /// Valuation `rho`: cost units per unit of model accuracy loss.
    #[serde(rename = "rho")]
    pub valuation: f64,
    /// Computation cost coefficient `E`: cost units per trained data sample.
    pub comp_coeff: f64,
    /// Constant communication cost `C` per FL process.
    #[serde(default)]
    pub comm_cost: f64,
    /// Size of the local data set, `D` samples.
    pub data_cap: f64,
    /// Per-slot discount factor `delta` in `[0, 1)`.
    #[serde(default)]
    pub discount: f64,
}

impl ClientProfile {
    /// Validates the parameter domains and builds a profile.
    pub fn new(
        valuation: f64,
        comp_coeff: f64,
        comm_cost: f64,
        data_cap: f64,
        discount: f64,
    ) -> Result<Self> {
        let profile = Self {
            valuation,
            comp_coeff,
            comm_cost,
            data_cap,
            discount,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Re-checks the invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        if !(self.valuation > 0.0) || !self.valuation.is_finite() {
            return Err(GameError::InvalidParameter(format!(
                "valuation must be positive and finite, got {}",
                self.valuation
            )));
        }
        if !(self.comp_coeff > 0.0) || !self.comp_coeff.is_finite() {
            return Err(GameError::InvalidParameter(format!(
                "comp_coeff must be positive and finite, got {}",
                self.comp_coeff
            )));
        }
        if !(self.comm_cost >= 0.0) || !self.comm_cost.is_finite() {
            return Err(GameError::InvalidParameter(format!(
                "comm_cost must be nonnegative, got {}",
                self.comm_cost
            )));
        }
        if !(self.data_cap > 0.0) || !self.data_cap.is_finite() {
            return Err(GameError::InvalidParameter(format!(
                "data_cap must be positive and finite, got {}",
                self.data_cap
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(GameError::InvalidParameter(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        Ok(())
    }

    /// Valuation-computation ratio `rho / E`, the ordering key for all
    /// equilibrium structure.
    pub fn valuation_ratio(&self) -> f64 {
        self.valuation / self.comp_coeff
    }
}

/// Shared scenario parameters: the client roster (kept sorted ascending by
/// valuation-computation ratio), the iteration count `G` and the server
/// payment `p`.
#[derive(Debug, Clone)]
pub struct GameConfig {
    clients: Vec<ClientProfile>,
    iterations: u32,
    payment: f64,
    strict_order: bool,
}

impl GameConfig {
    /// Builds a config. Clients are re-sorted ascending by `rho/E`; ties
    /// keep their input order. `strict_order` records whether all ratios
    /// are strictly increasing, the precondition for equilibrium
    /// uniqueness.
    pub fn new(mut clients: Vec<ClientProfile>, iterations: u32, payment: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(GameError::EmptyRoster);
        }
        if iterations == 0 {
            return Err(GameError::InvalidParameter(
                "iteration count must be at least 1".into(),
            ));
        }
        if !(payment >= 0.0) || !payment.is_finite() {
            return Err(GameError::InvalidParameter(format!(
                "payment must be nonnegative, got {payment}"
            )));
        }
        for client in &clients {
            client.validate()?;
        }
        // Stable sort: tied ratios stay in input order.
        clients.sort_by(|a, b| {
            a.valuation_ratio()
                .partial_cmp(&b.valuation_ratio())
                .expect("ratios are finite")
        });
        let strict_order = clients
            .windows(2)
            .all(|w| w[0].valuation_ratio() < w[1].valuation_ratio());
        Ok(Self {
            clients,
            iterations,
            payment,
            strict_order,
        })
    }

    pub fn clients(&self) -> &[ClientProfile] {
        &self.clients
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn payment(&self) -> f64 {
        self.payment
    }

    /// True iff all valuation-computation ratios are strictly increasing.
    /// When false the stage equilibrium need not be unique.
    pub fn strict_order(&self) -> bool {
        self.strict_order
    }

    /// The common data cap, or `None` when caps are heterogeneous.
    pub fn uniform_cap(&self) -> Option<f64> {
        let cap = self.clients[0].data_cap;
        self.clients
            .iter()
            .all(|c| c.data_cap == cap)
            .then_some(cap)
    }

    /// `h_n` for every client, ascending with the roster order.
    pub fn h_values(&self) -> Vec<f64> {
        self.clients
            .iter()
            .map(|c| h_value(c, self.iterations))
            .collect()
    }
}

/// One participation level per client, kept within `[0, D_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    levels: Vec<f64>,
}

impl StrategyProfile {
    /// Validates the levels against the roster caps. Values within a
    /// `1e-9` relative overshoot of a bound (floating-point residue from
    /// the closed forms) are clamped onto it.
    pub fn new(levels: Vec<f64>, cfg: &GameConfig) -> Result<Self> {
        if levels.len() != cfg.len() {
            return Err(GameError::InvalidParameter(format!(
                "profile has {} levels for {} clients",
                levels.len(),
                cfg.len()
            )));
        }
        let mut clamped = levels;
        for (n, level) in clamped.iter_mut().enumerate() {
            let cap = cfg.clients()[n].data_cap;
            let slack = 1e-9 * cap.max(1.0);
            if !level.is_finite() || *level < -slack || *level > cap + slack {
                return Err(GameError::InvalidParameter(format!(
                    "level {level} for client {n} outside [0, {cap}]"
                )));
            }
            *level = level.clamp(0.0, cap);
        }
        Ok(Self { levels: clamped })
    }

    /// Wraps levels already known to satisfy the caps.
    pub(crate) fn from_unchecked(levels: Vec<f64>) -> Self {
        Self { levels }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        self.levels.get(n).copied()
    }

    /// Total training data `B`.
    pub fn total(&self) -> f64 {
        self.levels.iter().sum()
    }

    /// Largest coordinate-wise distance to another profile.
    pub fn max_distance(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Expected accuracy loss `1/sqrt(total_data * G) + 1/G`; infinite when no
/// data is trained at all.
pub fn accuracy_loss(total_data: f64, iterations: u32) -> Result<f64> {
    if iterations == 0 {
        return Err(GameError::InvalidParameter(
            "iteration count must be at least 1".into(),
        ));
    }
    if !(total_data >= 0.0) {
        return Err(GameError::InvalidParameter(format!(
            "total data must be nonnegative, got {total_data}"
        )));
    }
    Ok(loss_raw(total_data, f64::from(iterations)))
}

#[inline]
pub(crate) fn loss_raw(total_data: f64, iterations: f64) -> f64 {
    if total_data <= 0.0 {
        return f64::INFINITY;
    }
    1.0 / (total_data * iterations).sqrt() + 1.0 / iterations
}

/// Total per-slot cost of client `n` under `profile`:
/// `rho_n * A(B) + E_n * x_n + C_n + p`. Infinite iff `B = 0`.
pub fn total_cost(n: usize, profile: &StrategyProfile, cfg: &GameConfig) -> Result<f64> {
    if n >= cfg.len() {
        return Err(GameError::IndexOutOfRange {
            index: n,
            len: cfg.len(),
        });
    }
    Ok(cost_raw(
        &cfg.clients()[n],
        profile.levels()[n],
        profile.total(),
        f64::from(cfg.iterations()),
        cfg.payment(),
    ))
}

#[inline]
pub(crate) fn cost_raw(
    client: &ClientProfile,
    own_level: f64,
    total_data: f64,
    iterations: f64,
    payment: f64,
) -> f64 {
    client.valuation * loss_raw(total_data, iterations)
        + client.comp_coeff * own_level
        + client.comm_cost
        + payment
}

/// `h_n = cbrt(rho^2 / (4 G E^2))`: the batch size the client would steer
/// the whole process to if it alone chose the total.
pub fn h_value(client: &ClientProfile, iterations: u32) -> f64 {
    let g = f64::from(iterations);
    (client.valuation * client.valuation / (4.0 * g * client.comp_coeff * client.comp_coeff))
        .cbrt()
}

/// Best response of client `n` to the other clients' total:
/// `min(D_n, max(h_n - others_total, 0))`.
pub fn best_response(n: usize, others_total: f64, cfg: &GameConfig) -> Result<f64> {
    if n >= cfg.len() {
        return Err(GameError::IndexOutOfRange {
            index: n,
            len: cfg.len(),
        });
    }
    if !(others_total >= 0.0) {
        return Err(GameError::InvalidParameter(format!(
            "others_total must be nonnegative, got {others_total}"
        )));
    }
    let client = &cfg.clients()[n];
    Ok(clamp_response(
        h_value(client, cfg.iterations()),
        others_total,
        client.data_cap,
    ))
}

#[inline]
pub(crate) fn clamp_response(h: f64, others_total: f64, cap: f64) -> f64 {
    (h - others_total).clamp(0.0, cap)
}

/// Long-term discounted total `sum_t delta^t F_t` of a cost trajectory that
/// is eventually constant: an explicit `prefix` of per-slot costs followed
/// by `tail` repeated forever. `tail = None` truncates the horizon after
/// the prefix. The tail is evaluated in closed form
/// `tail * delta^T / (1 - delta)`, so the infinite horizon is exact.
pub fn discounted_cost(prefix: &[f64], tail: Option<f64>, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(GameError::InvalidParameter(format!(
            "discount factor must lie in [0, 1), got {delta}"
        )));
    }
    let mut sum = 0.0;
    let mut weight = 1.0;
    for &cost in prefix {
        sum += weight * cost;
        weight *= delta;
    }
    if let Some(tail) = tail {
        sum += weight * tail / (1.0 - delta);
    }
    Ok(sum)
}
