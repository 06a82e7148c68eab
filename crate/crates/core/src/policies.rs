//! Decision rules mapping a state to a power-split ratio.
//!
//! All policies honor two forced-harvest guards: with less than one unit of
//! energy the transceiver cannot run, and with the message already complete
//! there is nothing left to decode. The heuristics only ever emit the pure
//! ratios 0 and 1; [`SplitOnce`] is the exception used by the deviation
//! experiments and emits a strict split on the first slot of an episode.

use crate::model::{LatticeState, LinkConfig, RealState, SplitRatio};
use crate::solver::{extract_policy, PolicyTable, TieBreak, ValueTable};
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("threshold {threshold} outside [1, {b_max}]")]
    InvalidThreshold { threshold: u32, b_max: u32 },
    #[error("split-once ratio must be strictly between 0 and 1, got {0}")]
    NotInterior(f64),
}

/// A decision rule. `slot` is the 0-based slot index within the current
/// episode, which lets one-shot deviation policies stay stateless.
pub trait Policy: Send + Sync {
    /// Short serialized identifier, e.g. `bf:threshold=6`.
    fn spec_string(&self) -> String;

    /// Split ratio for the current slot.
    fn decide(&self, s: RealState, slot: u64, rng: &mut dyn RngCore) -> SplitRatio;

    /// Probability of choosing pure harvest at a lattice state, for policies
    /// that are stationary time-switching rules on the lattice. `None` for
    /// policies that split or depend on the slot index; those cannot be
    /// analyzed as a lattice chain.
    fn harvest_probability(&self, s: LatticeState) -> Option<f64>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn spec_string(&self) -> String {
        (**self).spec_string()
    }

    fn decide(&self, s: RealState, slot: u64, rng: &mut dyn RngCore) -> SplitRatio {
        (**self).decide(s, slot, rng)
    }

    fn harvest_probability(&self, s: LatticeState) -> Option<f64> {
        (**self).harvest_probability(s)
    }
}

/// Harvest until the battery reaches `threshold`, decode otherwise.
///
/// With the default threshold `e_d + 1` this decodes exactly where decoding
/// is strictly optimal and harvests everywhere else.
#[derive(Debug, Clone)]
pub struct BatteryFirst {
    threshold: u32,
    r1: f64,
    cap_index: u32,
}

impl BatteryFirst {
    pub fn new(cfg: &LinkConfig, threshold: u32) -> Result<Self, PolicyError> {
        if threshold < 1 || threshold > cfg.battery_capacity() {
            return Err(PolicyError::InvalidThreshold {
                threshold,
                b_max: cfg.battery_capacity(),
            });
        }
        Ok(BatteryFirst {
            threshold,
            r1: cfg.r1(),
            cap_index: cfg.cap_index(),
        })
    }

    pub fn with_default_threshold(cfg: &LinkConfig) -> Self {
        // b_max >= e_d + e guarantees this threshold is in range.
        BatteryFirst::new(cfg, cfg.decode_threshold() + 1).expect("default threshold is valid")
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }
}

impl Policy for BatteryFirst {
    fn spec_string(&self) -> String {
        format!("bf:threshold={}", self.threshold)
    }

    fn decide(&self, s: RealState, _slot: u64, _rng: &mut dyn RngCore) -> SplitRatio {
        if s.m >= self.r1 || s.b < f64::from(self.threshold) {
            SplitRatio::HARVEST
        } else {
            SplitRatio::DECODE
        }
    }

    fn harvest_probability(&self, s: LatticeState) -> Option<f64> {
        Some(if s.m_index >= self.cap_index || s.b < self.threshold {
            1.0
        } else {
            0.0
        })
    }
}

/// Decode whenever it is possible at all.
#[derive(Debug, Clone)]
pub struct InformationFirst {
    r1: f64,
    cap_index: u32,
}

impl InformationFirst {
    pub fn new(cfg: &LinkConfig) -> Self {
        InformationFirst {
            r1: cfg.r1(),
            cap_index: cfg.cap_index(),
        }
    }
}

impl Policy for InformationFirst {
    fn spec_string(&self) -> String {
        "if".into()
    }

    fn decide(&self, s: RealState, _slot: u64, _rng: &mut dyn RngCore) -> SplitRatio {
        if s.b >= 1.0 && s.m < self.r1 {
            SplitRatio::DECODE
        } else {
            SplitRatio::HARVEST
        }
    }

    fn harvest_probability(&self, s: LatticeState) -> Option<f64> {
        Some(if s.b >= 1 && s.m_index < self.cap_index {
            0.0
        } else {
            1.0
        })
    }
}

/// Forced moves where forced; decode above the decode threshold; a fair coin
/// in between.
#[derive(Debug, Clone)]
pub struct CoinToss {
    e_d: u32,
    r1: f64,
    cap_index: u32,
}

impl CoinToss {
    pub fn new(cfg: &LinkConfig) -> Self {
        CoinToss {
            e_d: cfg.decode_threshold(),
            r1: cfg.r1(),
            cap_index: cfg.cap_index(),
        }
    }
}

impl Policy for CoinToss {
    fn spec_string(&self) -> String {
        "ct".into()
    }

    fn decide(&self, s: RealState, _slot: u64, rng: &mut dyn RngCore) -> SplitRatio {
        use rand::Rng;
        if s.b < 1.0 || s.m >= self.r1 {
            SplitRatio::HARVEST
        } else if s.b >= f64::from(self.e_d + 1) {
            SplitRatio::DECODE
        } else if (*rng).random_bool(0.5) {
            SplitRatio::HARVEST
        } else {
            SplitRatio::DECODE
        }
    }

    fn harvest_probability(&self, s: LatticeState) -> Option<f64> {
        Some(if s.b < 1 || s.m_index >= self.cap_index {
            1.0
        } else if s.b > self.e_d {
            0.0
        } else {
            0.5
        })
    }
}

/// Greedy lookup into a converged value table. Real-valued states are mapped
/// to the lattice by flooring the battery and rounding information down to
/// the nearest level, which only matters for post-split rollouts.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    cfg: LinkConfig,
    table: PolicyTable,
    label: &'static str,
}

impl TabularPolicy {
    pub fn new(vt: &ValueTable, tie_break: TieBreak) -> Self {
        let label = match tie_break {
            TieBreak::PreferHarvest => "via:prefer-eh",
            TieBreak::PreferDecode => "via:prefer-id",
            TieBreak::MarkTie => "via:mark",
        };
        TabularPolicy {
            cfg: *vt.config(),
            table: extract_policy(vt, tie_break),
            label,
        }
    }

    fn nearest_lattice_below(&self, s: RealState) -> LatticeState {
        let b = (s.b.max(0.0).floor() as u32).min(self.cfg.battery_capacity());
        let cap = self.cfg.cap_index();
        let m = if s.m >= self.cfg.r1() {
            cap
        } else {
            (((s.m / self.cfg.r2()).floor()) as u32).min(cap.saturating_sub(1))
        };
        LatticeState::new(b, m)
    }
}

impl Policy for TabularPolicy {
    fn spec_string(&self) -> String {
        self.label.into()
    }

    fn decide(&self, s: RealState, _slot: u64, _rng: &mut dyn RngCore) -> SplitRatio {
        if s.b < 1.0 || s.m >= self.cfg.r1() {
            return SplitRatio::HARVEST;
        }
        match self.table.action(self.nearest_lattice_below(s)) {
            Some(a) => a.ratio(),
            None => SplitRatio::HARVEST,
        }
    }

    fn harvest_probability(&self, s: LatticeState) -> Option<f64> {
        match self.table.action(s) {
            Some(crate::model::Action::Harvest) => Some(1.0),
            Some(crate::model::Action::Decode) => Some(0.0),
            None => Some(1.0),
        }
    }
}

/// Applies a fixed ratio on the first slot of an episode (guards permitting)
/// and delegates to the continuation policy afterwards.
#[derive(Debug, Clone)]
pub struct SplitOnce<P> {
    first: SplitRatio,
    continuation: P,
    r1: f64,
}

impl<P: Policy> SplitOnce<P> {
    /// Strict power split on the first slot; rejects the pure ratios, which
    /// would not be a deviation at all.
    pub fn new(rho0: SplitRatio, continuation: P, cfg: &LinkConfig) -> Result<Self, PolicyError> {
        if !rho0.is_interior() {
            return Err(PolicyError::NotInterior(rho0.value()));
        }
        Ok(SplitOnce {
            first: rho0,
            continuation,
            r1: cfg.r1(),
        })
    }

    /// Any first-slot ratio, including the pure ones. Used internally to
    /// build the decode-now comparison arm.
    pub(crate) fn with_any_ratio(rho0: SplitRatio, continuation: P, cfg: &LinkConfig) -> Self {
        SplitOnce {
            first: rho0,
            continuation,
            r1: cfg.r1(),
        }
    }
}

impl<P: Policy> Policy for SplitOnce<P> {
    fn spec_string(&self) -> String {
        format!(
            "split-once:rho={},then={}",
            self.first.value(),
            self.continuation.spec_string()
        )
    }

    fn decide(&self, s: RealState, slot: u64, rng: &mut dyn RngCore) -> SplitRatio {
        if slot == 0 {
            if s.b < 1.0 || s.m >= self.r1 {
                SplitRatio::HARVEST
            } else {
                self.first
            }
        } else {
            self.continuation.decide(s, slot, rng)
        }
    }

    fn harvest_probability(&self, _s: LatticeState) -> Option<f64> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::enumerate_states;
    use crate::solver::{value_iteration_ssp, SolveOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tie_demo_config() -> LinkConfig {
        LinkConfig::with_default_bmax(0.5, 5.0, 2.0, 2, 5).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0xA11CE)
    }

    #[test]
    fn battery_first_threshold_rules() {
        let cfg = tie_demo_config();
        let bf = BatteryFirst::with_default_threshold(&cfg);
        assert_eq!(bf.threshold(), 6);
        let mut r = rng();
        assert!(bf.decide(RealState::new(0.0, 0.0), 0, &mut r).is_harvest());
        assert!(bf.decide(RealState::new(6.0, 0.0), 0, &mut r).is_decode());
        assert!(bf.decide(RealState::new(5.9, 0.0), 0, &mut r).is_harvest());
        // Full information forces harvesting even above the threshold.
        assert!(bf.decide(RealState::new(7.0, 5.0), 0, &mut r).is_harvest());
        assert!(BatteryFirst::new(&cfg, 0).is_err());
        assert!(BatteryFirst::new(&cfg, 14).is_err());
        assert_eq!(bf.spec_string(), "bf:threshold=6");
    }

    #[test]
    fn information_first_rules() {
        let cfg = tie_demo_config();
        let p = InformationFirst::new(&cfg);
        let mut r = rng();
        assert!(p.decide(RealState::new(1.0, 0.0), 0, &mut r).is_decode());
        assert!(p.decide(RealState::new(0.5, 0.0), 0, &mut r).is_harvest());
        assert!(p.decide(RealState::new(3.0, 5.0), 0, &mut r).is_harvest());
    }

    #[test]
    fn coin_toss_regions() {
        let cfg = tie_demo_config();
        let p = CoinToss::new(&cfg);
        let mut r = rng();
        // Deterministic outside the coin region.
        for _ in 0..50 {
            assert!(p.decide(RealState::new(7.0, 0.0), 0, &mut r).is_decode());
            assert!(p.decide(RealState::new(0.0, 0.0), 0, &mut r).is_harvest());
        }
        assert_eq!(p.harvest_probability(LatticeState::new(2, 0)), Some(0.5));
    }

    #[test]
    fn coin_toss_frequency_is_fair() {
        let cfg = tie_demo_config();
        let p = CoinToss::new(&cfg);
        let mut r = rng();
        let n = 10_000;
        let harvests = (0..n)
            .filter(|_| p.decide(RealState::new(2.0, 0.0), 0, &mut r).is_harvest())
            .count();
        let freq = harvests as f64 / f64::from(n);
        assert!((freq - 0.5).abs() < 0.01, "harvest frequency {freq}");
    }

    #[test]
    fn split_once_first_slot_then_delegates() {
        let cfg = tie_demo_config();
        let rho = SplitRatio::new(0.5).unwrap();
        let p = SplitOnce::new(rho, InformationFirst::new(&cfg), &cfg).unwrap();
        let mut r = rng();
        let s = RealState::new(3.0, 0.0);
        assert_eq!(p.decide(s, 0, &mut r), rho);
        assert!(p.decide(s, 1, &mut r).is_decode());
        // Guard overrides the split when the battery cannot power the radio.
        assert!(p.decide(RealState::new(0.2, 0.0), 0, &mut r).is_harvest());
        assert!(SplitOnce::new(SplitRatio::DECODE, InformationFirst::new(&cfg), &cfg).is_err());
        assert_eq!(p.spec_string(), "split-once:rho=0.5,then=if");
    }

    #[test]
    fn guards_hold_across_random_states() {
        let cfg = tie_demo_config();
        let vt = value_iteration_ssp(&cfg, &SolveOptions::default()).unwrap();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(BatteryFirst::with_default_threshold(&cfg)),
            Box::new(InformationFirst::new(&cfg)),
            Box::new(CoinToss::new(&cfg)),
            Box::new(TabularPolicy::new(&vt, TieBreak::PreferHarvest)),
            Box::new(TabularPolicy::new(&vt, TieBreak::PreferDecode)),
            Box::new(
                SplitOnce::new(
                    SplitRatio::new(0.3).unwrap(),
                    InformationFirst::new(&cfg),
                    &cfg,
                )
                .unwrap(),
            ),
        ];
        let mut r = rng();
        for _ in 0..2_000 {
            use rand::Rng;
            let s = RealState::new(r.random::<f64>() * 13.0, r.random::<f64>() * 5.0);
            for p in &policies {
                for slot in [0, 1, 7] {
                    let rho = p.decide(s, slot, &mut r);
                    if s.b < 1.0 {
                        assert!(rho.is_harvest(), "{} decoded at b={}", p.spec_string(), s.b);
                    }
                    if s.m >= cfg.r1() {
                        assert!(rho.is_harvest(), "{} decoded at m={}", p.spec_string(), s.m);
                    }
                }
            }
        }
    }

    #[test]
    fn heuristics_stay_in_the_optimal_action_class() {
        // Forced harvest at b = 0 or full information; forced decode above
        // the decode threshold; anything in the tie band.
        let cfg = tie_demo_config();
        let vt = value_iteration_ssp(&cfg, &SolveOptions::default()).unwrap();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(BatteryFirst::with_default_threshold(&cfg)),
            Box::new(InformationFirst::new(&cfg)),
            Box::new(CoinToss::new(&cfg)),
            Box::new(TabularPolicy::new(&vt, TieBreak::PreferHarvest)),
            Box::new(TabularPolicy::new(&vt, TieBreak::PreferDecode)),
        ];
        for s in enumerate_states(&cfg) {
            if cfg.is_absorbing(s) {
                continue;
            }
            for p in &policies {
                let ph = p.harvest_probability(s).unwrap();
                if s.b < 1 || s.m_index >= cfg.cap_index() {
                    assert_eq!(ph, 1.0, "{} must harvest at {s:?}", p.spec_string());
                } else if s.b > cfg.decode_threshold() {
                    assert_eq!(ph, 0.0, "{} must decode at {s:?}", p.spec_string());
                }
            }
        }
    }

    #[test]
    fn tabular_policy_floors_real_states() {
        let cfg = tie_demo_config();
        let vt = value_iteration_ssp(&cfg, &SolveOptions::default()).unwrap();
        let p = TabularPolicy::new(&vt, TieBreak::PreferDecode);
        let mut r = rng();
        // (6.7, 1.9) floors to (6, level 0); decode is strictly optimal there.
        assert!(p.decide(RealState::new(6.7, 1.9), 0, &mut r).is_decode());
        // (1.2, 4.9) floors to (1, level 2): tie resolved toward decoding.
        assert!(p.decide(RealState::new(1.2, 4.9), 0, &mut r).is_decode());
    }
}
