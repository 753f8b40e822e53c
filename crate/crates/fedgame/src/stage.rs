//! Closed-form Nash equilibrium of the one-shot participation game, plus
//! best-response dynamics and an equilibrium verifier.
//!
//! With clients sorted ascending by `rho/E` and a uniform cap `D`, the
//! equilibrium takes one of three shapes:
//!
//! * a critical client `k` with `(N-k)D <= h_k <= (N+1-k)D` contributes
//!   the interior amount `h_k - (N-k)D`, everyone below free-rides,
//!   everyone above contributes `D`;
//! * a boundary client `m` with `h_m < (N-m)D < h_{m+1}` splits the roster
//!   into free riders (up to `m`) and full contributors (above `m`);
//! * when even the least-motivated client wants the full cap against
//!   all-`D` opponents (`h_1 >= N D`), everyone contributes `D`.
//!
//! The case scan is exhaustive: if no `k` interval matches, a boundary `m`
//! or the all-contributors corner must. Under strictly increasing ratios
//! the equilibrium is unique; with ties the solver still emits one valid
//! equilibrium but flags it as non-unique.

use crate::error::{GameError, Result};
use crate::model::{clamp_response, ClientProfile, GameConfig, StrategyProfile};

/// Relative tolerance for interval membership at exact case boundaries
/// such as `h_k = (N-k)D`.
const BOUNDARY_REL_TOL: f64 = 1e-12;

/// Which of the three equilibrium shapes applies. Indices are 1-based to
/// match the ascending-ratio ranks used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumCase {
    /// Critical client `k` contributes partially.
    CriticalK(usize),
    /// Boundary client `m`: free riders up to `m`, contributors above.
    BoundaryM(usize),
    /// Every client contributes its full cap.
    AllContributors,
}

impl EquilibriumCase {
    pub fn critical_index(&self) -> Option<usize> {
        match self {
            Self::CriticalK(k) => Some(*k),
            _ => None,
        }
    }

    pub fn boundary_index(&self) -> Option<usize> {
        match self {
            Self::BoundaryM(m) => Some(*m),
            _ => None,
        }
    }
}

/// Behavioural label of one client at a strategy profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Trains nothing (`x = 0`) and still receives the global model.
    FreeRider,
    /// Trains a positive amount strictly below its cap.
    PartialContributor,
    /// Trains with its entire local data set (`x = D`).
    Contributor,
}

/// The stage-game Nash equilibrium with its case tag and role labels.
#[derive(Debug, Clone)]
pub struct StageEquilibrium {
    pub profile: StrategyProfile,
    pub case: EquilibriumCase,
    pub roles: Vec<Role>,
    /// False when tied ratios make other equilibria possible.
    pub unique: bool,
}

impl StageEquilibrium {
    /// Number of clients with `x = 0`.
    pub fn free_rider_count(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::FreeRider).count()
    }
}

/// Computes the closed-form Nash equilibrium. Requires a uniform data cap;
/// use [`best_response_dynamics`] for heterogeneous caps.
pub fn solve_ne(cfg: &GameConfig) -> Result<StageEquilibrium> {
    let n_clients = cfg.len();
    if n_clients == 0 {
        return Err(GameError::EmptyRoster);
    }
    let cap = cfg.uniform_cap().ok_or_else(|| {
        let expected = cfg.clients()[0].data_cap;
        let (index, offending) = cfg
            .clients()
            .iter()
            .enumerate()
            .find(|(_, c)| c.data_cap != expected)
            .map(|(i, c)| (i, c.data_cap))
            .expect("some cap differs");
        GameError::NonUniformCaps {
            index,
            cap: offending,
            expected,
        }
    })?;

    let h = cfg.h_values();
    let n = n_clients as f64;
    let scale = (n * cap).max(1.0);
    let tol = BOUNDARY_REL_TOL * scale;

    // Case I: some k with (N-k)D <= h_k <= (N+1-k)D. Smallest k wins.
    for k in 1..=n_clients {
        let lo = (n - k as f64) * cap;
        let hi = lo + cap;
        if h[k - 1] >= lo - tol && h[k - 1] <= hi + tol {
            let mut levels = vec![0.0; n_clients];
            levels[k - 1] = (h[k - 1] - lo).clamp(0.0, cap);
            for level in levels.iter_mut().skip(k) {
                *level = cap;
            }
            return Ok(finish(levels, EquilibriumCase::CriticalK(k), cfg));
        }
    }

    // Case II: some m with h_m < (N-m)D < h_{m+1}.
    for m in 1..n_clients {
        let gap = (n - m as f64) * cap;
        if h[m - 1] < gap && gap < h[m] {
            let mut levels = vec![0.0; n_clients];
            for level in levels.iter_mut().skip(m) {
                *level = cap;
            }
            return Ok(finish(levels, EquilibriumCase::BoundaryM(m), cfg));
        }
    }

    // Corner: h_1 > N D, so every best response to all-D opponents is D.
    Ok(finish(
        vec![cap; n_clients],
        EquilibriumCase::AllContributors,
        cfg,
    ))
}

fn finish(levels: Vec<f64>, case: EquilibriumCase, cfg: &GameConfig) -> StageEquilibrium {
    let profile = StrategyProfile::from_unchecked(levels);
    let roles = classify_roles(&profile, cfg);
    StageEquilibrium {
        profile,
        case,
        roles,
        unique: cfg.strict_order(),
    }
}

/// Labels each client by its level: zero, interior, or at the cap.
pub fn classify_roles(profile: &StrategyProfile, cfg: &GameConfig) -> Vec<Role> {
    profile
        .levels()
        .iter()
        .zip(cfg.clients())
        .map(|(&x, client)| {
            if x <= 0.0 {
                Role::FreeRider
            } else if x >= client.data_cap {
                Role::Contributor
            } else {
                Role::PartialContributor
            }
        })
        .collect()
}

/// Equilibrium strategy computed from one client's own parameters plus its
/// rank in the ascending-ratio order, the roster size and the common cap.
/// Mirrors the distributed per-client computation: no knowledge of other
/// clients' parameters or decisions is needed, and the result equals the
/// corresponding entry of [`solve_ne`].
pub fn distributed_strategy(
    ratio_rank: usize,
    n_clients: usize,
    own: &ClientProfile,
    iterations: u32,
    cap: f64,
) -> f64 {
    debug_assert!((1..=n_clients).contains(&ratio_rank));
    let h = crate::model::h_value(own, iterations);
    let below = (n_clients - ratio_rank) as f64 * cap;
    let tol = BOUNDARY_REL_TOL * (n_clients as f64 * cap).max(1.0);
    if h < below - tol {
        0.0
    } else if h > below + cap + tol {
        cap
    } else {
        (h - below).clamp(0.0, cap)
    }
}

/// Sequential best-response updates in ascending-ratio order until the
/// largest per-round movement drops below `tol`. Works for heterogeneous
/// caps. Returns the converged profile and the number of full rounds used.
pub fn best_response_dynamics(
    cfg: &GameConfig,
    start: &StrategyProfile,
    tol: f64,
    max_rounds: usize,
) -> Result<(StrategyProfile, usize)> {
    if !(tol > 0.0) {
        return Err(GameError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if start.len() != cfg.len() {
        return Err(GameError::InvalidParameter(format!(
            "start profile has {} levels for {} clients",
            start.len(),
            cfg.len()
        )));
    }
    let h = cfg.h_values();
    let mut levels = start.levels().to_vec();
    let mut total: f64 = levels.iter().sum();
    let mut last_change = f64::INFINITY;
    for round in 1..=max_rounds {
        let mut round_change = 0.0f64;
        for (n, client) in cfg.clients().iter().enumerate() {
            let others = (total - levels[n]).max(0.0);
            let next = clamp_response(h[n], others, client.data_cap);
            round_change = round_change.max((next - levels[n]).abs());
            total += next - levels[n];
            levels[n] = next;
        }
        if round_change < tol {
            return Ok((StrategyProfile::from_unchecked(levels), round));
        }
        last_change = round_change;
    }
    Err(GameError::NoConvergence {
        rounds: max_rounds,
        last_change,
        last_profile: levels,
    })
}

/// Outcome of a grid equilibrium check.
#[derive(Debug, Clone)]
pub struct NeCheck {
    /// True iff no client improves by more than `tol` at any grid point.
    pub is_equilibrium: bool,
    /// Largest observed cost improvement from a unilateral move.
    pub worst_improvement: f64,
    /// Client attaining the worst improvement, with the level that does it.
    pub worst_deviation: Option<(usize, f64)>,
}

/// Checks the equilibrium condition by unilateral deviations to `grid + 1`
/// evenly spaced points in `[0, D_n]` per client. The per-client cost is
/// convex in its own level, so a grid check bounds the continuous one.
pub fn verify_ne(profile: &StrategyProfile, cfg: &GameConfig, grid: usize, tol: f64) -> NeCheck {
    assert!(grid >= 100, "grid must be at least 100 points");
    let g = f64::from(cfg.iterations());
    let total = profile.total();
    let mut worst = 0.0f64;
    let mut worst_deviation = None;
    for (n, client) in cfg.clients().iter().enumerate() {
        let own = profile.levels()[n];
        let others = (total - own).max(0.0);
        let current = crate::model::cost_raw(client, own, total, g, cfg.payment());
        for i in 0..=grid {
            let x = client.data_cap * i as f64 / grid as f64;
            let candidate = crate::model::cost_raw(client, x, others + x, g, cfg.payment());
            let improvement = match (current.is_finite(), candidate.is_finite()) {
                (true, true) => current - candidate,
                (false, true) => f64::INFINITY,
                _ => 0.0,
            };
            if improvement > worst {
                worst = improvement;
                worst_deviation = Some((n, x));
            }
        }
    }
    NeCheck {
        is_equilibrium: worst <= tol,
        worst_improvement: worst,
        worst_deviation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{best_response, ClientProfile};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn client(rho: f64, e: f64, cap: f64) -> ClientProfile {
        ClientProfile::new(rho, e, 0.0, cap, 0.0).unwrap()
    }

    /// Builds a uniform-cap config from target h values (E = 0.5, so
    /// rho = h^(3/2) at G = 1).
    fn config_from_h(h: &[f64], cap: f64) -> GameConfig {
        let clients = h
            .iter()
            .map(|&hv| client(hv.powf(1.5), 0.5, cap))
            .collect();
        GameConfig::new(clients, 1, 0.0).unwrap()
    }

    #[test]
    fn critical_k_example() {
        // h = (5, 15, 25), D = 10: k = 2, x = (0, 5, 10)
        let cfg = config_from_h(&[5.0, 15.0, 25.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert_eq!(eq.case, EquilibriumCase::CriticalK(2));
        let x = eq.profile.levels();
        assert!((x[0] - 0.0).abs() < 1e-9);
        assert!((x[1] - 5.0).abs() < 1e-9);
        assert!((x[2] - 10.0).abs() < 1e-9);
        assert_eq!(
            eq.roles,
            vec![Role::FreeRider, Role::PartialContributor, Role::Contributor]
        );
        assert!(eq.unique);

        // best-response-dynamics oracle from random starts
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let start = StrategyProfile::new(
                (0..3).map(|_| rng.gen_range(0.0..=10.0)).collect(),
                &cfg,
            )
            .unwrap();
            let (converged, _) = best_response_dynamics(&cfg, &start, 1e-9, 10_000).unwrap();
            assert!(converged.max_distance(&eq.profile) < 1e-7);
        }
    }

    #[test]
    fn boundary_m_example() {
        // h = (5, 8, 35), D = 10: m = 2, x = (0, 0, 10)
        let cfg = config_from_h(&[5.0, 8.0, 35.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert_eq!(eq.case, EquilibriumCase::BoundaryM(2));
        assert_eq!(eq.profile.levels(), &[0.0, 0.0, 10.0]);
        assert_eq!(
            eq.roles,
            vec![Role::FreeRider, Role::FreeRider, Role::Contributor]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let start = StrategyProfile::new(
                (0..3).map(|_| rng.gen_range(0.0..=10.0)).collect(),
                &cfg,
            )
            .unwrap();
            let (converged, _) = best_response_dynamics(&cfg, &start, 1e-9, 10_000).unwrap();
            assert!(converged.max_distance(&eq.profile) < 1e-7);
        }
    }

    #[test]
    fn tied_ratios_emit_warning_case() {
        // h1 = h2 = 10, D = 10: the solver picks (0, 10); (4, 6) and (5, 5)
        // are equally valid equilibria, so uniqueness is not claimed.
        let cfg = config_from_h(&[10.0, 10.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert_eq!(eq.profile.levels(), &[0.0, 10.0]);
        assert!(!eq.unique);

        let other = StrategyProfile::new(vec![4.0, 6.0], &cfg).unwrap();
        assert!(verify_ne(&other, &cfg, 10_000, 1e-6).is_equilibrium);
        let other = StrategyProfile::new(vec![5.0, 5.0], &cfg).unwrap();
        assert!(verify_ne(&other, &cfg, 10_000, 1e-6).is_equilibrium);
    }

    #[test]
    fn all_contributors_corner() {
        // h_1 > N*D: everyone contributes the cap.
        let cfg = config_from_h(&[40.0, 50.0, 60.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert_eq!(eq.case, EquilibriumCase::AllContributors);
        assert_eq!(eq.profile.levels(), &[10.0, 10.0, 10.0]);
        assert!(eq.roles.iter().all(|r| *r == Role::Contributor));
        assert!(verify_ne(&eq.profile, &cfg, 1000, 1e-6).is_equilibrium);
    }

    #[test]
    fn single_client() {
        let cfg = config_from_h(&[6.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert_eq!(eq.case, EquilibriumCase::CriticalK(1));
        assert!((eq.profile.levels()[0] - 6.0).abs() < 1e-9);
        assert!(eq.profile.levels()[0] > 0.0);
    }

    #[test]
    fn non_uniform_caps_rejected() {
        let cfg = GameConfig::new(
            vec![client(5.0, 0.5, 10.0), client(50.0, 0.5, 20.0)],
            1,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            solve_ne(&cfg),
            Err(GameError::NonUniformCaps { .. })
        ));
    }

    #[test]
    fn distributed_matches_solver() {
        let cfg = config_from_h(&[5.0, 15.0, 25.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        for (i, c) in cfg.clients().iter().enumerate() {
            let x = distributed_strategy(i + 1, cfg.len(), c, cfg.iterations(), 10.0);
            assert!(
                (x - eq.profile.levels()[i]).abs() < 1e-9,
                "client {i}: distributed {x} vs solver {}",
                eq.profile.levels()[i]
            );
        }
        // threshold branches
        let c = client(11.1803, 0.5, 10.0); // h = 5
        assert_eq!(distributed_strategy(1, 3, &c, 1, 10.0), 0.0); // h < (N-n)D
        let c = client(207.0628, 0.5, 10.0); // h = 35
        assert_eq!(distributed_strategy(3, 3, &c, 1, 10.0), 10.0); // h > (N-n+1)D
    }

    #[test]
    fn dynamics_fixed_point_returns_immediately() {
        let cfg = config_from_h(&[5.0, 15.0, 25.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        let (converged, rounds) = best_response_dynamics(&cfg, &eq.profile, 1e-9, 100).unwrap();
        assert_eq!(rounds, 1);
        assert_eq!(converged.levels(), eq.profile.levels());
    }

    #[test]
    fn dynamics_reports_no_convergence() {
        let cfg = config_from_h(&[5.0, 15.0, 25.0], 10.0);
        let start = StrategyProfile::new(vec![10.0, 10.0, 10.0], &cfg).unwrap();
        match best_response_dynamics(&cfg, &start, 1e-9, 1) {
            Err(GameError::NoConvergence { last_profile, .. }) => {
                assert_eq!(last_profile.len(), 3);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn verify_ne_flags_perturbation() {
        let cfg = config_from_h(&[5.0, 15.0, 25.0], 10.0);
        let eq = solve_ne(&cfg).unwrap();
        assert!(verify_ne(&eq.profile, &cfg, 10_000, 1e-6).is_equilibrium);

        let mut perturbed = eq.profile.levels().to_vec();
        perturbed[1] += 1.0;
        let perturbed = StrategyProfile::new(perturbed, &cfg).unwrap();
        let check = verify_ne(&perturbed, &cfg, 10_000, 1e-6);
        assert!(!check.is_equilibrium);
        assert_eq!(check.worst_deviation.map(|(n, _)| n), Some(1));
    }

    fn random_config(rng: &mut ChaCha8Rng, max_n: usize) -> GameConfig {
        let n = rng.gen_range(1..=max_n);
        let cap = rng.gen_range(5.0..200.0);
        let g = rng.gen_range(1..=100);
        let spread = 1.4 * n as f64 * cap;
        let clients = (0..n)
            .map(|_| {
                let e: f64 = rng.gen_range(0.05..2.0);
                let h: f64 = rng.gen_range(0.0..spread).max(1e-6);
                // invert h = cbrt(rho^2/(4 G E^2))
                let rho = 2.0 * e * f64::from(g).sqrt() * h.powf(1.5);
                ClientProfile::new(rho, e, 0.0, cap, 0.0).unwrap()
            })
            .collect();
        GameConfig::new(clients, g, 0.0).unwrap()
    }

    #[test]
    fn fuzz_solver_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..500 {
            let cfg = random_config(&mut rng, 12);
            let eq = solve_ne(&cfg).expect("existence");
            let n = cfg.len();

            // the top-ratio client always trains a positive amount
            assert!(eq.profile.levels()[n - 1] > 0.0, "x_N must be positive");

            // equilibrium on a grid
            assert!(
                verify_ne(&eq.profile, &cfg, 400, 1e-6).is_equilibrium,
                "{:?} failed verification",
                eq.case
            );

            // per-client distributed computation agrees
            let cap = cfg.uniform_cap().unwrap();
            for (i, c) in cfg.clients().iter().enumerate() {
                let x = distributed_strategy(i + 1, n, c, cfg.iterations(), cap);
                assert!((x - eq.profile.levels()[i]).abs() < 1e-9 * cap.max(1.0));
            }

            // roles are monotone in the ratio order
            let mut seen_non_free = false;
            for role in &eq.roles {
                if *role != Role::FreeRider {
                    seen_non_free = true;
                } else {
                    assert!(!seen_non_free, "free rider above a contributor");
                }
            }

            // at most one partial contributor
            assert!(
                eq.roles
                    .iter()
                    .filter(|r| **r == Role::PartialContributor)
                    .count()
                    <= 1
            );

            // the profile is a fixed point of the best response
            let total = eq.profile.total();
            for (i, &x) in eq.profile.levels().iter().enumerate() {
                let br = best_response(i, (total - x).max(0.0), &cfg).unwrap();
                assert!((br - x).abs() < 1e-7 * cap.max(1.0));
            }
        }
    }

    #[test]
    fn fuzz_case_conditions_mutually_exclusive() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let cfg = random_config(&mut rng, 10);
            if !cfg.strict_order() {
                continue;
            }
            let h = cfg.h_values();
            let n = cfg.len() as f64;
            let cap = cfg.uniform_cap().unwrap();
            let k_matches = (1..=cfg.len())
                .filter(|&k| {
                    let lo = (n - k as f64) * cap;
                    (lo..=lo + cap).contains(&h[k - 1])
                })
                .count();
            let m_matches = (1..cfg.len())
                .filter(|&m| {
                    let gap = (n - m as f64) * cap;
                    h[m - 1] < gap && gap < h[m]
                })
                .count();
            assert!(
                k_matches + m_matches <= 1 || (k_matches <= 1 && m_matches == 0),
                "cases overlap: {k_matches} k-intervals, {m_matches} m-gaps"
            );
        }
    }

    #[test]
    fn dynamics_handles_heterogeneous_caps() {
        let cfg = GameConfig::new(
            vec![client(11.1803, 0.5, 6.0), client(125.0, 0.5, 18.0)],
            1,
            0.0,
        )
        .unwrap();
        let start = StrategyProfile::new(vec![3.0, 3.0], &cfg).unwrap();
        let (profile, _) = best_response_dynamics(&cfg, &start, 1e-10, 10_000).unwrap();
        // fixed point check
        let total = profile.total();
        for (i, &x) in profile.levels().iter().enumerate() {
            let br = best_response(i, (total - x).max(0.0), &cfg).unwrap();
            assert!((br - x).abs() < 1e-8);
        }
    }
}
