//! Exact analysis of the absorbing chain induced by a fixed time-switching
//! policy, plus the one-step split-deviation experiment.
//!
//! For a policy that is stationary on the lattice (possibly randomized, like
//! the coin toss), the mean times to absorption solve the linear system
//! `(I - Q) k = 1` over the transient states, with `Q` the transient-to-
//! transient transition block. The chain sizes here are a few hundred at
//! most, so a dense LU solve is exact enough and simplest. Policies that can
//! never reach absorption from some state are detected by a reachability
//! pass first and reported with the trapped states, rather than surfacing as
//! a cryptic singular matrix.
//!
//! The deviation experiment compares "split this slot, then follow the
//! continuation" against "decode this slot, then follow the continuation".
//! Splitting leaves the lattice, so that arm is evaluated by Monte Carlo
//! rollouts with common random numbers across the two arms; the decode arm
//! and the closed-form pieces stay analytic.

use crate::linalg::{DenseMatrix, LinalgError};
use crate::model::{LatticeState, LinkConfig, SplitRatio, StateSpace};
use crate::montecarlo::{run_episode_from, EpisodeRng, SimError};
use crate::policies::{Policy, SplitOnce};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AbsorptionError {
    #[error("policy is not a stationary lattice rule at state ({0:?}); cannot build its chain")]
    NotLatticeAnalyzable(LatticeState),
    #[error("policy violates a forced-harvest guard at state ({0:?})")]
    GuardViolation(LatticeState),
    #[error("policy returned harvest probability {p} at state ({state:?})")]
    InvalidProbability { state: LatticeState, p: f64 },
    #[error("policy never reaches absorption from {} state(s), e.g. ({:?})", trapped.len(), trapped[0])]
    ImproperPolicy { trapped: Vec<LatticeState> },
    #[error("linear solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("linear solve residual {worst:e} exceeds 1e-10")]
    ResidualTooLarge { worst: f64 },
    #[error("battery {0} already meets the decode threshold; the state is absorbing")]
    StateAbsorbing(u32),
    #[error("ratio {0} is not a strict split; nothing deviates")]
    NotADeviation(f64),
    #[error("state ({0:?}) is not eligible: need a transient state with b >= 1 and incomplete information")]
    NotEligible(LatticeState),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Mean steps to absorption under a fixed policy; zero on absorbing states.
#[derive(Debug, Clone)]
pub struct AbsorptionTable {
    space: StateSpace,
    k: Vec<f64>,
    policy_spec: String,
}

impl AbsorptionTable {
    pub fn config(&self) -> &LinkConfig {
        self.space.config()
    }

    pub fn k(&self, s: LatticeState) -> f64 {
        self.k[self.space.index(s)]
    }

    pub fn k_origin(&self) -> f64 {
        self.k(LatticeState::new(0, 0))
    }

    pub fn policy_spec(&self) -> &str {
        &self.policy_spec
    }
}

/// Transition rows of the lattice chain under a (possibly randomized)
/// time-switching policy: `(next, probability)` with duplicates merged.
fn transition_row(s: LatticeState, p_harvest: f64, cfg: &LinkConfig) -> Vec<(LatticeState, f64)> {
    let lambda = cfg.lambda();
    let up = LatticeState::new(
        (s.b + cfg.harvest_per_good_slot()).min(cfg.battery_capacity()),
        s.m_index,
    );
    let cap = cfg.cap_index();
    let mut row: Vec<(LatticeState, f64)> = Vec::with_capacity(4);
    let mut push = |next: LatticeState, p: f64| {
        if p == 0.0 {
            return;
        }
        if let Some(entry) = row.iter_mut().find(|(t, _)| *t == next) {
            entry.1 += p;
        } else {
            row.push((next, p));
        }
    };
    if p_harvest > 0.0 {
        push(up, p_harvest * lambda);
        push(s, p_harvest * (1.0 - lambda));
    }
    if p_harvest < 1.0 {
        let good = LatticeState::new(s.b - 1, cap);
        let bad = LatticeState::new(s.b - 1, (s.m_index + 1).min(cap));
        push(good, (1.0 - p_harvest) * lambda);
        push(bad, (1.0 - p_harvest) * (1.0 - lambda));
    }
    row
}

/// Mean time to absorption from every state under `policy`, by first-step
/// conditioning: solve `(I - Q) k = 1` over the transient block.
pub fn mean_absorption_times(
    policy: &dyn Policy,
    cfg: &LinkConfig,
) -> Result<AbsorptionTable, AbsorptionError> {
    let space = StateSpace::new(cfg);
    let mut p_harvest = vec![f64::NAN; space.len()];
    let mut transient = Vec::new();
    for s in space.iter() {
        if cfg.is_absorbing(s) {
            continue;
        }
        let p = policy
            .harvest_probability(s)
            .ok_or(AbsorptionError::NotLatticeAnalyzable(s))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(AbsorptionError::InvalidProbability { state: s, p });
        }
        if (s.b < 1 || s.m_index >= cfg.cap_index()) && p != 1.0 {
            return Err(AbsorptionError::GuardViolation(s));
        }
        p_harvest[space.index(s)] = p;
        transient.push(s);
    }

    check_proper(&transient, &p_harvest, cfg, &space)?;

    // Dense transient-to-transient system.
    let n = transient.len();
    let col_of: std::collections::HashMap<LatticeState, usize> =
        transient.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut a = DenseMatrix::zeros(n);
    for (i, &s) in transient.iter().enumerate() {
        a.set(i, i, 1.0);
        for (next, p) in transition_row(s, p_harvest[space.index(s)], cfg) {
            if let Some(&j) = col_of.get(&next) {
                a.set(i, j, a.get(i, j) - p);
            }
        }
    }
    let verify = a.clone();
    let solution = a.solve(&vec![1.0; n])?;

    let residuals = verify.mul_vec(&solution);
    let worst = residuals
        .iter()
        .map(|r| (r - 1.0).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-10 {
        return Err(AbsorptionError::ResidualTooLarge { worst });
    }

    let mut k = vec![0.0; space.len()];
    for (i, &s) in transient.iter().enumerate() {
        k[space.index(s)] = solution[i];
    }
    Ok(AbsorptionTable {
        space,
        k,
        policy_spec: policy.spec_string(),
    })
}

/// Every transient state must be able to reach an absorbing state through
/// transitions the policy actually takes; otherwise `(I - Q)` is singular.
fn check_proper(
    transient: &[LatticeState],
    p_harvest: &[f64],
    cfg: &LinkConfig,
    space: &StateSpace,
) -> Result<(), AbsorptionError> {
    let mut reaches = vec![false; space.len()];
    for s in space.iter() {
        if cfg.is_absorbing(s) {
            reaches[space.index(s)] = true;
        }
    }
    loop {
        let mut changed = false;
        for &s in transient {
            let i = space.index(s);
            if reaches[i] {
                continue;
            }
            let hits = transition_row(s, p_harvest[i], cfg)
                .iter()
                .any(|(next, _)| reaches[space.index(*next)]);
            if hits {
                reaches[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let trapped: Vec<LatticeState> = transient
        .iter()
        .copied()
        .filter(|s| !reaches[space.index(*s)])
        .collect();
    if trapped.is_empty() {
        Ok(())
    } else {
        Err(AbsorptionError::ImproperPolicy { trapped })
    }
}

/// Closed-form mean slots to absorption from battery `b` once the
/// information is complete: `ceil((e_d - b)/e)` GOOD slots are needed and
/// each arrives at rate `lambda`, so the answer is that count over `lambda`.
pub fn full_info_absorption_time(b: u32, cfg: &LinkConfig) -> Result<f64, AbsorptionError> {
    if b >= cfg.decode_threshold() {
        return Err(AbsorptionError::StateAbsorbing(b));
    }
    let needed = (cfg.decode_threshold() - b).div_ceil(cfg.harvest_per_good_slot());
    Ok(f64::from(needed) / cfg.lambda())
}

/// Same closed form extended to a fractional battery level, as produced by a
/// split slot; zero once the threshold is met.
pub fn full_info_absorption_time_real(battery: f64, cfg: &LinkConfig) -> f64 {
    f64::from(good_slots_needed(battery, cfg)) / cfg.lambda()
}

/// Number of GOOD harvest slots required to lift `battery` to the decode
/// threshold.
fn good_slots_needed(battery: f64, cfg: &LinkConfig) -> u32 {
    let deficit = f64::from(cfg.decode_threshold()) - battery;
    if deficit <= 0.0 {
        0
    } else {
        (deficit / f64::from(cfg.harvest_per_good_slot())).ceil() as u32
    }
}

/// Monte Carlo comparison of one split slot against one decode slot, both
/// followed by the same continuation policy.
#[derive(Debug, Clone)]
pub struct DeviationGap {
    pub state: LatticeState,
    pub rho: f64,
    pub n_rollouts: u64,
    /// Sample mean slots to absorption when the first slot splits at `rho`.
    pub mean_split: f64,
    /// Sample mean when the first slot decodes outright.
    pub mean_decode: f64,
    /// `mean_split - mean_decode`.
    pub gap: f64,
    /// Standard error of the paired per-rollout differences.
    pub stderr_gap: f64,
    /// Standard error of the split arm alone.
    pub stderr_split: f64,
}

/// Estimates `k_split(s) - k_decode(s)` with matched random numbers: rollout
/// `i` of either arm uses the same derived seed, so both see the same
/// channel sequence.
pub fn one_step_deviation_gap(
    s: LatticeState,
    rho: SplitRatio,
    continuation: &dyn Policy,
    cfg: &LinkConfig,
    n_rollouts: u64,
    master_seed: u64,
) -> Result<DeviationGap, AbsorptionError> {
    if !rho.is_interior() {
        return Err(AbsorptionError::NotADeviation(rho.value()));
    }
    if cfg.is_absorbing(s) || s.b < 1 || s.m_index >= cfg.cap_index() {
        return Err(AbsorptionError::NotEligible(s));
    }
    let split_arm = SplitOnce::with_any_ratio(rho, continuation, cfg);
    let decode_arm = SplitOnce::with_any_ratio(SplitRatio::DECODE, continuation, cfg);
    let start = s.to_real(cfg);

    // Exact integer accumulators keep the result independent of scheduling.
    let sums = (0..n_rollouts as usize)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| -> Result<(u128, u128, u128, i128, i128), SimError> {
            let mut rng_s = EpisodeRng::from_master(master_seed, i as u64);
            let mut rng_d = rng_s.clone();
            let split = run_episode_from(start, &split_arm, cfg, &mut rng_s)?;
            let decode = run_episode_from(start, &decode_arm, cfg, &mut rng_d)?;
            let diff = split as i128 - decode as i128;
            Ok((
                u128::from(split),
                u128::from(split) * u128::from(split),
                u128::from(decode),
                diff,
                diff * diff,
            ))
        })
        .try_reduce(
            || (0, 0, 0, 0, 0),
            |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3, a.4 + b.4)),
        )?;
    let (sum_s, sum_s2, sum_d, sum_diff, sum_diff2) = sums;

    let n = n_rollouts as f64;
    let mean_split = sum_s as f64 / n;
    let mean_decode = sum_d as f64 / n;
    let mean_diff = sum_diff as f64 / n;
    let sample_var = |sum_sq: f64, mean: f64| {
        if n_rollouts > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        }
    };
    Ok(DeviationGap {
        state: s,
        rho: rho.value(),
        n_rollouts,
        mean_split,
        mean_decode,
        gap: mean_split - mean_decode,
        stderr_gap: (sample_var(sum_diff2 as f64, mean_diff) / n).sqrt(),
        stderr_split: (sample_var(sum_s2 as f64, mean_split) / n).sqrt(),
    })
}

/// Analytic lower bound on the split arm, fully on-lattice: the GOOD branch
/// can at best land at complete information with battery `b - 1 + rho*e`
/// (closed form above), and the BAD branch at one information level up with
/// battery `b - 1` (continuation table). Monotonicity of mean absorption
/// time in the information level makes both replacements lower bounds.
pub fn split_step_lower_bound(
    s: LatticeState,
    rho: SplitRatio,
    continuation: &AbsorptionTable,
) -> f64 {
    let cfg = continuation.config();
    let lambda = cfg.lambda();
    let battery_after_split =
        f64::from(s.b) - 1.0 + rho.value() * f64::from(cfg.harvest_per_good_slot());
    let good = full_info_absorption_time_real(battery_after_split, cfg);
    let bad = continuation.k(LatticeState::new(
        s.b - 1,
        (s.m_index + 1).min(cfg.cap_index()),
    ));
    1.0 + lambda * good + (1.0 - lambda) * bad
}

/// Analytic value of decoding now and following the continuation table.
pub fn decode_step_value(s: LatticeState, continuation: &AbsorptionTable) -> f64 {
    let cfg = continuation.config();
    let lambda = cfg.lambda();
    let cap = cfg.cap_index();
    let good = continuation.k(LatticeState::new(s.b - 1, cap));
    let bad = continuation.k(LatticeState::new(s.b - 1, (s.m_index + 1).min(cap)));
    1.0 + lambda * good + (1.0 - lambda) * bad
}

/// Whether the split's partial harvest `rho*e` carries the battery across a
/// harvest bracket, i.e. reduces the number of GOOD slots still needed at
/// complete information. When it does not, [`split_step_lower_bound`] equals
/// [`decode_step_value`] exactly.
pub fn harvest_bracket_crossed(s: LatticeState, rho: SplitRatio, cfg: &LinkConfig) -> bool {
    let before = f64::from(s.b) - 1.0;
    let after = before + rho.value() * f64::from(cfg.harvest_per_good_slot());
    good_slots_needed(after, cfg) != good_slots_needed(before, cfg)
}

/// One cell of the deviation sweep: the Monte Carlo comparison plus the
/// analytic cross-checks.
#[derive(Debug, Clone)]
pub struct DeviationCell {
    pub mc: DeviationGap,
    pub split_lower_bound: f64,
    pub decode_value: f64,
    pub bracket_crossed: bool,
}

/// Runs the one-step deviation experiment for every eligible state and every
/// ratio in `rhos`, with the information-first rule as the shared
/// continuation. Cell seeds derive from `(master_seed, state, rho index)`,
/// so the sweep is reproducible regardless of execution order.
pub fn deviation_sweep(
    cfg: &LinkConfig,
    rhos: &[f64],
    n_rollouts: u64,
    master_seed: u64,
) -> Result<Vec<DeviationCell>, AbsorptionError> {
    let continuation = crate::policies::InformationFirst::new(cfg);
    let table = mean_absorption_times(&continuation, cfg)?;
    let space = StateSpace::new(cfg);
    let mut cells = Vec::new();
    for s in space.iter() {
        if cfg.is_absorbing(s) || s.b < 1 || s.m_index >= cfg.cap_index() {
            continue;
        }
        for (ri, &rho) in rhos.iter().enumerate() {
            let rho = SplitRatio::new(rho).map_err(SimError::Dynamics)?;
            let cell_seed = master_seed
                ^ ((space.index(s) as u64) << 24)
                ^ (ri as u64 + 1).wrapping_mul(0x9E37);
            let mc = one_step_deviation_gap(s, rho, &continuation, cfg, n_rollouts, cell_seed)?;
            cells.push(DeviationCell {
                mc,
                split_lower_bound: split_step_lower_bound(s, rho, &table),
                decode_value: decode_step_value(s, &table),
                bracket_crossed: harvest_bracket_crossed(s, rho, cfg),
            });
        }
    }
    Ok(cells)
}
