//! Value iteration over the countable time-switching MDP.
//!
//! The primary solver treats the problem as an undiscounted stochastic
//! shortest path: every slot before absorption costs 1, so the fixed point
//! `k(s) = 1 + min_a E[k(s')]` is directly the minimum expected number of
//! re-transmissions. A discounted variant (reward 0 on absorbing states, -1
//! elsewhere) is kept for cross-checking; as the discount approaches 1 its
//! negated value converges to `k`. Discounts closer to 1 than one part in
//! 2^52 are rejected outright rather than silently rounding to 1.0.
//!
//! The default sweep is Gauss-Seidel in decreasing information level, then
//! decreasing battery, with the one-state self-loop solved algebraically
//! (harvesting in a BAD slot leaves the state unchanged). Successor states
//! under either action then always lie earlier in the sweep, so the solve
//! effectively finishes in a single pass. A plain Jacobi sweep is provided
//! as well; the fixed point must not depend on the choice, which the tests
//! enforce.

use crate::model::{allowed_actions, Action, LatticeState, LinkConfig, StateSpace};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("value iteration did not converge: residual {residual} after {iterations} iterations")]
    NotConverged { iterations: u64, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("discount {0} not usable: must lie in [0, 1 - 2^-52)")]
    InvalidDiscount(f64),
    #[error("action values are undefined on absorbing states")]
    QueryAbsorbing,
    #[error(
        "k(0,0) changes by {diff:e} (bound {bound:e}) when b_max grows from {b_max} to {extended}"
    )]
    BmaxSensitive {
        b_max: u32,
        extended: u32,
        k_base: f64,
        k_extended: f64,
        diff: f64,
        bound: f64,
    },
}

/// Sweep strategy for the Bellman updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Simultaneous update from the previous iterate.
    Jacobi,
    /// In-place update, decreasing m then decreasing b, self-loops solved
    /// algebraically.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u64,
    pub sweep: Sweep,
    /// Two action values within this distance count as a tie. Kept three
    /// orders of magnitude above `tol` so convergence noise cannot fake a
    /// tie.
    pub tie_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-12,
            max_iter: 100_000,
            sweep: Sweep::GaussSeidel,
            tie_tol: 1e-9,
        }
    }
}

/// Converged value table: expected re-transmissions `k`, per-state action
/// values for both time-switching actions, and the tie set.
#[derive(Debug, Clone)]
pub struct ValueTable {
    space: StateSpace,
    k: Vec<f64>,
    q_harvest: Vec<f64>,
    q_decode: Vec<Option<f64>>,
    tie: Vec<bool>,
    tie_tol: f64,
    iterations: u64,
    residual: f64,
}

impl ValueTable {
    pub fn config(&self) -> &LinkConfig {
        self.space.config()
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Expected slots to absorption under optimal play; 0 on absorbing states.
    pub fn k(&self, s: LatticeState) -> f64 {
        self.k[self.space.index(s)]
    }

    /// `k` at the empty start state `(0, 0)`.
    pub fn k_origin(&self) -> f64 {
        self.k[self.space.index(LatticeState::new(0, 0))]
    }

    /// One-step action values `(harvest, decode)`; decode is `None` where
    /// decoding is not admissible. Errors on absorbing states.
    pub fn action_values(&self, s: LatticeState) -> Result<(f64, Option<f64>), SolverError> {
        if self.space.config().is_absorbing(s) {
            return Err(SolverError::QueryAbsorbing);
        }
        let i = self.space.index(s);
        Ok((self.q_harvest[i], self.q_decode[i]))
    }

    pub fn is_tie(&self, s: LatticeState) -> bool {
        self.tie[self.space.index(s)]
    }

    pub fn tie_states(&self) -> Vec<LatticeState> {
        self.space
            .iter()
            .filter(|s| self.tie[self.space.index(*s)])
            .collect()
    }

    pub fn tie_tol(&self) -> f64 {
        self.tie_tol
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

struct Chain<'a> {
    cfg: &'a LinkConfig,
    space: StateSpace,
    levels: u32,
}

impl<'a> Chain<'a> {
    fn new(cfg: &'a LinkConfig) -> Self {
        Chain {
            cfg,
            space: StateSpace::new(cfg),
            levels: cfg.info_levels(),
        }
    }

    fn idx(&self, b: u32, m: u32) -> usize {
        b as usize * self.levels as usize + m as usize
    }

    fn harvest_up(&self, b: u32) -> u32 {
        (b + self.cfg.harvest_per_good_slot()).min(self.cfg.battery_capacity())
    }

    /// Decode successors `(good, bad)` for a state with `b >= 1`.
    fn decode_next(&self, b: u32, m: u32) -> (usize, usize) {
        let cap = self.cfg.cap_index();
        (self.idx(b - 1, cap), self.idx(b - 1, (m + 1).min(cap)))
    }

    fn decode_allowed(&self, b: u32, m: u32) -> bool {
        b >= 1 && m < self.cfg.cap_index()
    }

    fn is_absorbing(&self, b: u32, m: u32) -> bool {
        self.cfg.is_absorbing(LatticeState::new(b, m))
    }
}

/// Minimum expected re-transmissions by value iteration on the undiscounted
/// shortest-path form. Converges for every valid configuration because
/// harvesting alone already reaches absorption with probability one.
pub fn value_iteration_ssp(
    cfg: &LinkConfig,
    opts: &SolveOptions,
) -> Result<ValueTable, SolverError> {
    if !opts.tol.is_finite() || opts.tol <= 0.0 {
        return Err(SolverError::InvalidTolerance(opts.tol));
    }
    if opts.max_iter == 0 {
        return Err(SolverError::NotConverged {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let chain = Chain::new(cfg);
    let mut k = vec![0.0f64; chain.space.len()];
    let mut scratch = if opts.sweep == Sweep::Jacobi {
        k.clone()
    } else {
        Vec::new()
    };

    for iteration in 1..=opts.max_iter {
        let residual = match opts.sweep {
            Sweep::GaussSeidel => ssp_sweep_gauss_seidel(&chain, &mut k),
            Sweep::Jacobi => {
                let r = ssp_sweep_jacobi(&chain, &k, &mut scratch);
                std::mem::swap(&mut k, &mut scratch);
                r
            }
        };
        if residual <= opts.tol {
            return Ok(finish_table(&chain, k, opts, iteration, residual));
        }
        if iteration == opts.max_iter {
            return Err(SolverError::NotConverged {
                iterations: iteration,
                residual,
            });
        }
    }
    unreachable!("max_iter is at least 1");
}

fn ssp_sweep_gauss_seidel(chain: &Chain, k: &mut [f64]) -> f64 {
    let cfg = chain.cfg;
    let lambda = cfg.lambda();
    let mut residual = 0.0f64;
    for m in (0..chain.levels).rev() {
        for b in (0..=cfg.battery_capacity()).rev() {
            let i = chain.idx(b, m);
            if chain.is_absorbing(b, m) {
                k[i] = 0.0;
                continue;
            }
            let up = chain.harvest_up(b);
            // Fixed point of q = 1 + lambda*k_up + (1-lambda)*q. A saturated
            // battery makes harvesting a pure self-loop with infinite cost.
            let q_harvest = if up == b {
                f64::INFINITY
            } else {
                (1.0 + lambda * k[chain.idx(up, m)]) / lambda
            };
            let value = if chain.decode_allowed(b, m) {
                let (good, bad) = chain.decode_next(b, m);
                let q_decode = 1.0 + lambda * k[good] + (1.0 - lambda) * k[bad];
                q_harvest.min(q_decode)
            } else {
                q_harvest
            };
            residual = residual.max((value - k[i]).abs());
            k[i] = value;
        }
    }
    residual
}

fn ssp_sweep_jacobi(chain: &Chain, k_old: &[f64], k_new: &mut [f64]) -> f64 {
    let cfg = chain.cfg;
    let lambda = cfg.lambda();
    let mut residual = 0.0f64;
    for m in 0..chain.levels {
        for b in 0..=cfg.battery_capacity() {
            let i = chain.idx(b, m);
            if chain.is_absorbing(b, m) {
                k_new[i] = 0.0;
                continue;
            }
            let up = chain.harvest_up(b);
            let q_harvest = 1.0 + lambda * k_old[chain.idx(up, m)] + (1.0 - lambda) * k_old[i];
            let value = if chain.decode_allowed(b, m) {
                let (good, bad) = chain.decode_next(b, m);
                let q_decode = 1.0 + lambda * k_old[good] + (1.0 - lambda) * k_old[bad];
                q_harvest.min(q_decode)
            } else {
                q_harvest
            };
            residual = residual.max((value - k_old[i]).abs());
            k_new[i] = value;
        }
    }
    residual
}

/// One-step lookahead action values from the converged `k`, and the tie set.
fn finish_table(
    chain: &Chain,
    k: Vec<f64>,
    opts: &SolveOptions,
    iterations: u64,
    residual: f64,
) -> ValueTable {
    let cfg = chain.cfg;
    let lambda = cfg.lambda();
    let n = chain.space.len();
    let mut q_harvest = vec![0.0f64; n];
    let mut q_decode: Vec<Option<f64>> = vec![None; n];
    let mut tie = vec![false; n];
    for m in 0..chain.levels {
        for b in 0..=cfg.battery_capacity() {
            let i = chain.idx(b, m);
            if chain.is_absorbing(b, m) {
                continue;
            }
            let up = chain.harvest_up(b);
            q_harvest[i] = 1.0 + lambda * k[chain.idx(up, m)] + (1.0 - lambda) * k[i];
            if chain.decode_allowed(b, m) {
                let (good, bad) = chain.decode_next(b, m);
                let q = 1.0 + lambda * k[good] + (1.0 - lambda) * k[bad];
                q_decode[i] = Some(q);
                tie[i] = (q_harvest[i] - q).abs() <= opts.tie_tol;
            }
        }
    }
    ValueTable {
        space: chain.space,
        k,
        q_harvest,
        q_decode,
        tie,
        tie_tol: opts.tie_tol,
        iterations,
        residual,
    }
}

/// Discounted value table for cross-checking against the shortest-path form.
#[derive(Debug, Clone)]
pub struct DiscountedTable {
    space: StateSpace,
    beta: f64,
    v: Vec<f64>,
    iterations: u64,
    residual: f64,
}

impl DiscountedTable {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Expected discounted reward (non-positive; 0 on absorbing states).
    pub fn v(&self, s: LatticeState) -> f64 {
        self.v[self.space.index(s)]
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// Value iteration for the discounted objective with per-slot reward -1
/// until decoding. Rejects discounts that are not meaningfully below 1 in
/// f64 arithmetic.
pub fn value_iteration_discounted(
    cfg: &LinkConfig,
    beta: f64,
    opts: &SolveOptions,
) -> Result<DiscountedTable, SolverError> {
    const MAX_BETA: f64 = 1.0 - f64::EPSILON; // 1 - 2^-52
    if !(0.0..MAX_BETA).contains(&beta) {
        return Err(SolverError::InvalidDiscount(beta));
    }
    if !opts.tol.is_finite() || opts.tol <= 0.0 {
        return Err(SolverError::InvalidTolerance(opts.tol));
    }
    if opts.max_iter == 0 {
        return Err(SolverError::NotConverged {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let chain = Chain::new(cfg);
    let mut v = vec![0.0f64; chain.space.len()];
    let mut scratch = if opts.sweep == Sweep::Jacobi {
        v.clone()
    } else {
        Vec::new()
    };
    // Residual bound that guarantees the iterate is within tol of the fixed
    // point even for discounts near 1.
    let stop = if beta > 0.5 {
        opts.tol * (1.0 - beta) / beta
    } else {
        opts.tol
    };

    for iteration in 1..=opts.max_iter {
        let residual = match opts.sweep {
            Sweep::GaussSeidel => discounted_sweep_gauss_seidel(&chain, beta, &mut v),
            Sweep::Jacobi => {
                let r = discounted_sweep_jacobi(&chain, beta, &v, &mut scratch);
                std::mem::swap(&mut v, &mut scratch);
                r
            }
        };
        if residual <= stop {
            return Ok(DiscountedTable {
                space: chain.space,
                beta,
                v,
                iterations: iteration,
                residual,
            });
        }
        if iteration == opts.max_iter {
            return Err(SolverError::NotConverged {
                iterations: iteration,
                residual,
            });
        }
    }
    unreachable!("max_iter is at least 1");
}

fn discounted_sweep_gauss_seidel(chain: &Chain, beta: f64, v: &mut [f64]) -> f64 {
    let lambda = chain.cfg.lambda();
    let mut residual = 0.0f64;
    for m in (0..chain.levels).rev() {
        for b in (0..=chain.cfg.battery_capacity()).rev() {
            let i = chain.idx(b, m);
            if chain.is_absorbing(b, m) {
                v[i] = 0.0;
                continue;
            }
            let up = chain.harvest_up(b);
            let v_harvest = if up == b {
                -1.0 / (1.0 - beta)
            } else {
                (-1.0 + beta * lambda * v[chain.idx(up, m)]) / (1.0 - beta * (1.0 - lambda))
            };
            let value = if chain.decode_allowed(b, m) {
                let (good, bad) = chain.decode_next(b, m);
                let v_decode = -1.0 + beta * (lambda * v[good] + (1.0 - lambda) * v[bad]);
                v_harvest.max(v_decode)
            } else {
                v_harvest
            };
            residual = residual.max((value - v[i]).abs());
            v[i] = value;
        }
    }
    residual
}

fn discounted_sweep_jacobi(chain: &Chain, beta: f64, v_old: &[f64], v_new: &mut [f64]) -> f64 {
    let lambda = chain.cfg.lambda();
    let mut residual = 0.0f64;
    for m in 0..chain.levels {
        for b in 0..=chain.cfg.battery_capacity() {
            let i = chain.idx(b, m);
            if chain.is_absorbing(b, m) {
                v_new[i] = 0.0;
                continue;
            }
            let up = chain.harvest_up(b);
            let v_harvest =
                -1.0 + beta * (lambda * v_old[chain.idx(up, m)] + (1.0 - lambda) * v_old[i]);
            let value = if chain.decode_allowed(b, m) {
                let (good, bad) = chain.decode_next(b, m);
                let v_decode = -1.0 + beta * (lambda * v_old[good] + (1.0 - lambda) * v_old[bad]);
                v_harvest.max(v_decode)
            } else {
                v_harvest
            };
            residual = residual.max((value - v_old[i]).abs());
            v_new[i] = value;
        }
    }
    residual
}

/// How to resolve states where both actions are optimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    PreferHarvest,
    PreferDecode,
    MarkTie,
}

/// Per-state decision in an extracted policy grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Absorbing,
    Harvest,
    Decode,
    Tie,
}

/// Greedy policy grid read off a converged value table. Ties (to within the
/// table's tie tolerance) are resolved per `tie_break`; `MarkTie` keeps them
/// visible as their own cell kind.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    space: StateSpace,
    decisions: Vec<Decision>,
    tie_break: TieBreak,
}

impl PolicyTable {
    pub fn config(&self) -> &LinkConfig {
        self.space.config()
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn decision(&self, s: LatticeState) -> Decision {
        self.decisions[self.space.index(s)]
    }

    /// Executable action for a transient state. `Tie` cells fall back to
    /// harvesting so that a marked grid still runs.
    pub fn action(&self, s: LatticeState) -> Option<Action> {
        match self.decision(s) {
            Decision::Absorbing => None,
            Decision::Harvest | Decision::Tie => Some(Action::Harvest),
            Decision::Decode => Some(Action::Decode),
        }
    }
}

pub fn extract_policy(vt: &ValueTable, tie_break: TieBreak) -> PolicyTable {
    let cfg = vt.space.config();
    let decisions = vt
        .space
        .iter()
        .map(|s| {
            if cfg.is_absorbing(s) {
                return Decision::Absorbing;
            }
            let i = vt.space.index(s);
            match vt.q_decode[i] {
                None => Decision::Harvest,
                Some(q_decode) => {
                    if vt.tie[i] {
                        match tie_break {
                            TieBreak::PreferHarvest => Decision::Harvest,
                            TieBreak::PreferDecode => Decision::Decode,
                            TieBreak::MarkTie => Decision::Tie,
                        }
                    } else if vt.q_harvest[i] < q_decode {
                        Decision::Harvest
                    } else {
                        Decision::Decode
                    }
                }
            }
        })
        .collect();
    PolicyTable {
        space: vt.space,
        decisions,
        tie_break,
    }
}

/// Result of the battery-capacity truncation check.
#[derive(Debug, Clone, Copy)]
pub struct BmaxReport {
    pub b_max: u32,
    pub extended: u32,
    pub k_base: f64,
    pub k_extended: f64,
    pub diff: f64,
    pub bound: f64,
}

/// Solves with the configured capacity and with `margin` extra harvests of
/// headroom, and reports how much `k(0,0)` moves.
pub fn bmax_report(
    cfg: &LinkConfig,
    margin: u32,
    opts: &SolveOptions,
) -> Result<BmaxReport, SolverError> {
    assert!(margin >= 1, "margin must be at least 1");
    let extended_cfg = cfg
        .with_bmax(cfg.battery_capacity() + margin * cfg.harvest_per_good_slot())
        .expect("enlarging b_max keeps the configuration valid");
    let base = value_iteration_ssp(cfg, opts)?;
    let extended = value_iteration_ssp(&extended_cfg, opts)?;
    Ok(BmaxReport {
        b_max: cfg.battery_capacity(),
        extended: extended_cfg.battery_capacity(),
        k_base: base.k_origin(),
        k_extended: extended.k_origin(),
        diff: (base.k_origin() - extended.k_origin()).abs(),
        bound: 10.0 * opts.tol,
    })
}

/// [`bmax_report`] as an assertion: verifies that enlarging the battery cap
/// leaves `k(0,0)` unchanged to within `10 * tol`, i.e. that the truncation
/// at `b_max` does not distort the answer.
pub fn check_bmax_invariance(
    cfg: &LinkConfig,
    margin: u32,
    opts: &SolveOptions,
) -> Result<BmaxReport, SolverError> {
    let report = bmax_report(cfg, margin, opts)?;
    if report.diff > report.bound {
        return Err(SolverError::BmaxSensitive {
            b_max: report.b_max,
            extended: report.extended,
            k_base: report.k_base,
            k_extended: report.k_extended,
            diff: report.diff,
            bound: report.bound,
        });
    }
    Ok(report)
}

/// Largest Bellman residual of `k` under the one-step lookahead, for
/// post-convergence verification.
pub fn bellman_residual(vt: &ValueTable) -> f64 {
    let cfg = vt.space.config();
    let mut worst = 0.0f64;
    for s in vt.space.iter() {
        if cfg.is_absorbing(s) {
            continue;
        }
        let (q_h, q_d) = vt.action_values(s).expect("transient state");
        let best = match q_d {
            Some(q) => q_h.min(q),
            None => q_h,
        };
        worst = worst.max((vt.k(s) - best).abs());
    }
    worst
}

/// True when the state admits only harvesting (empty battery or complete
/// information).
pub fn harvest_forced(s: LatticeState, cfg: &LinkConfig) -> bool {
    !cfg.is_absorbing(s)
        && allowed_actions(s, cfg)
            .map(|a| a.len() == 1)
            .unwrap_or(false)
}
