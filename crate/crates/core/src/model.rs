//! Link configuration, state types, and the exact one-step dynamics.
//!
//! Two state representations coexist. [`LatticeState`] is the countable-MDP
//! state used by the analytic machinery: battery in whole energy units,
//! accumulated information as an index into the finite lattice
//! `{0, r2, 2*r2, ...} ∪ {r1}`. [`RealState`] carries real-valued battery and
//! information and is what the Monte Carlo engine steps, so that policies
//! with a fractional split ratio can be simulated at all. Information is
//! stored as a lattice *index* on the analytic side and converted to bits
//! only at the boundary, which keeps long recursions free of accumulated
//! rounding.

use thiserror::Error;

/// Errors from configuration validation and the step operators.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid link configuration: {0}")]
    InvalidConfig(String),
    #[error("split ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("information decoding requires at least one energy unit (battery = {0})")]
    DecodeWithoutEnergy(f64),
    #[error("cannot step an absorbing state")]
    StepFromAbsorbing,
    #[error("state ({b}, m_index {m_index}) is outside the lattice")]
    StateOutOfRange { b: u32, m_index: u32 },
}

/// All physical parameters of the link.
///
/// `lambda` is the per-slot probability of the GOOD channel state, `r1`/`r2`
/// the Shannon rates (bits per slot) in the GOOD/BAD states, `e` the maximum
/// harvest per GOOD slot, `e_d` the battery level required for a decoding
/// attempt, and `b_max` the battery capacity. The message rate equals `r1`,
/// so a single GOOD-state decode slot completes the information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    lambda: f64,
    r1: f64,
    r2: f64,
    e: u32,
    e_d: u32,
    b_max: u32,
    /// Index of the top (full-information) lattice level, `ceil(r1/r2)`.
    cap_index: u32,
}

impl LinkConfig {
    pub fn new(
        lambda: f64,
        r1: f64,
        r2: f64,
        e: u32,
        e_d: u32,
        b_max: u32,
    ) -> Result<Self, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(lambda > 0.0 && lambda <= 1.0) {
            return bad(format!("lambda must be in (0, 1], got {lambda}"));
        }
        if !(r1.is_finite() && r2.is_finite() && r2 > 0.0 && r2 <= r1) {
            return bad(format!(
                "rates must satisfy 0 < r2 <= r1, got r1={r1}, r2={r2}"
            ));
        }
        if e < 1 {
            return bad("harvest amount e must be at least 1".into());
        }
        if e_d < 1 {
            return bad("decode threshold e_d must be at least 1".into());
        }
        if b_max < e_d + e {
            return bad(format!(
                "battery capacity b_max={b_max} must be at least e_d + e = {}",
                e_d + e
            ));
        }
        let cap_index = info_cap_index(r1, r2);
        Ok(LinkConfig {
            lambda,
            r1,
            r2,
            e,
            e_d,
            b_max,
            cap_index,
        })
    }

    /// Convenience constructor with the default capacity `e_d + 4*e`.
    pub fn with_default_bmax(
        lambda: f64,
        r1: f64,
        r2: f64,
        e: u32,
        e_d: u32,
    ) -> Result<Self, ModelError> {
        LinkConfig::new(lambda, r1, r2, e, e_d, e_d + 4 * e)
    }

    /// Same parameters with a different battery capacity.
    pub fn with_bmax(&self, b_max: u32) -> Result<Self, ModelError> {
        LinkConfig::new(self.lambda, self.r1, self.r2, self.e, self.e_d, b_max)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn r1(&self) -> f64 {
        self.r1
    }
    pub fn r2(&self) -> f64 {
        self.r2
    }
    pub fn harvest_per_good_slot(&self) -> u32 {
        self.e
    }
    pub fn decode_threshold(&self) -> u32 {
        self.e_d
    }
    pub fn battery_capacity(&self) -> u32 {
        self.b_max
    }

    /// Noise-normalized receive power in the GOOD state, `2^r1 - 1`.
    pub fn snr_good(&self) -> f64 {
        self.r1.exp2() - 1.0
    }

    /// Noise-normalized receive power in the BAD state, `2^r2 - 1`.
    pub fn snr_bad(&self) -> f64 {
        self.r2.exp2() - 1.0
    }

    /// Index of the full-information lattice level.
    pub fn cap_index(&self) -> u32 {
        self.cap_index
    }

    /// Number of information levels on the lattice, `ceil(r1/r2) + 1`.
    pub fn info_levels(&self) -> u32 {
        self.cap_index + 1
    }

    /// Bits of accumulated information at lattice level `m_index`.
    pub fn m_bits(&self, m_index: u32) -> f64 {
        if m_index >= self.cap_index {
            self.r1
        } else {
            f64::from(m_index) * self.r2
        }
    }

    /// Decoding succeeds exactly in these states: enough stored energy and
    /// the full message worth of mutual information.
    pub fn is_absorbing(&self, s: LatticeState) -> bool {
        s.b >= self.e_d && s.m_index >= self.cap_index
    }

    pub fn is_absorbing_real(&self, s: RealState) -> bool {
        s.b >= f64::from(self.e_d) && s.m >= self.r1
    }

    pub fn contains(&self, s: LatticeState) -> bool {
        s.b <= self.b_max && s.m_index <= self.cap_index
    }
}

/// `ceil(r1/r2)` with a guard against division noise when the ratio is meant
/// to be an integer (e.g. 4.8/1.2).
fn info_cap_index(r1: f64, r2: f64) -> u32 {
    let q = r1 / r2;
    let nearest = q.round();
    if (q - nearest).abs() < 1e-9 {
        nearest as u32
    } else {
        q.ceil() as u32
    }
}

/// Per-slot channel state, i.i.d. GOOD with probability `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Good,
    Bad,
}

impl ChannelState {
    pub fn draw(rng: &mut impl rand::Rng, lambda: f64) -> Self {
        if rng.random::<f64>() < lambda {
            ChannelState::Good
        } else {
            ChannelState::Bad
        }
    }
}

/// State of the countable time-switching MDP: whole battery units and an
/// information lattice index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeState {
    pub b: u32,
    pub m_index: u32,
}

impl LatticeState {
    pub fn new(b: u32, m_index: u32) -> Self {
        LatticeState { b, m_index }
    }

    pub fn to_real(self, cfg: &LinkConfig) -> RealState {
        RealState {
            b: f64::from(self.b),
            m: cfg.m_bits(self.m_index),
        }
    }
}

/// Continuous state used by the Monte Carlo engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealState {
    /// Stored energy, in (possibly fractional) energy units.
    pub b: f64,
    /// Accumulated mutual information in bits, capped at `r1`.
    pub m: f64,
}

impl RealState {
    pub const ORIGIN: RealState = RealState { b: 0.0, m: 0.0 };

    pub fn new(b: f64, m: f64) -> Self {
        RealState { b, m }
    }
}

/// Power-split ratio: the fraction of received power fed to the harvester.
/// `1` is pure energy harvesting, `0` pure information decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatio(f64);

impl SplitRatio {
    pub const HARVEST: SplitRatio = SplitRatio(1.0);
    pub const DECODE: SplitRatio = SplitRatio(0.0);

    pub fn new(rho: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&rho) {
            Ok(SplitRatio(rho))
        } else {
            Err(ModelError::RatioOutOfRange(rho))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_harvest(self) -> bool {
        self.0 == 1.0
    }

    pub fn is_decode(self) -> bool {
        self.0 == 0.0
    }

    /// True for a strict power split, `0 < rho < 1`.
    pub fn is_interior(self) -> bool {
        !self.is_harvest() && !self.is_decode()
    }
}

/// The two admissible actions of the reduced (time-switching) MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Feed the whole signal to the harvester (`rho = 1`).
    Harvest,
    /// Feed the whole signal to the decoder (`rho = 0`), spending one unit.
    Decode,
}

impl Action {
    pub fn ratio(self) -> SplitRatio {
        match self {
            Action::Harvest => SplitRatio::HARVEST,
            Action::Decode => SplitRatio::DECODE,
        }
    }
}

const HARVEST_ONLY: &[Action] = &[Action::Harvest];
const BOTH_ACTIONS: &[Action] = &[Action::Harvest, Action::Decode];

/// Achievable per-slot mutual information `(good, bad)` when a fraction
/// `rho` of the received power goes to the harvester:
/// `log2(rho + (1-rho) * 2^r)` for each channel rate `r`.
///
/// The endpoints are pinned exactly: `rho = 0` yields `(r1, r2)` and
/// `rho = 1` yields `(0, 0)`. Both components are continuous and strictly
/// decreasing in `rho`.
pub fn rate_split(rho: SplitRatio, cfg: &LinkConfig) -> (f64, f64) {
    if rho.is_decode() {
        (cfg.r1, cfg.r2)
    } else if rho.is_harvest() {
        (0.0, 0.0)
    } else {
        let r = rho.value();
        let good = (r + (1.0 - r) * cfg.r1.exp2()).log2();
        let bad = (r + (1.0 - r) * cfg.r2.exp2()).log2();
        (good, bad)
    }
}

/// One exact step of the lattice chain under a time-switching action.
///
/// Harvesting adds `e` units in the GOOD state (saturating at `b_max`) and
/// nothing in the BAD state. Decoding spends one unit and moves the
/// information level to the cap in the GOOD state or up one level in the BAD
/// state.
pub fn step_ts(
    s: LatticeState,
    a: Action,
    g: ChannelState,
    cfg: &LinkConfig,
) -> Result<LatticeState, ModelError> {
    if !cfg.contains(s) {
        return Err(ModelError::StateOutOfRange {
            b: s.b,
            m_index: s.m_index,
        });
    }
    if cfg.is_absorbing(s) {
        return Err(ModelError::StepFromAbsorbing);
    }
    match a {
        Action::Harvest => {
            let b = match g {
                ChannelState::Good => (s.b + cfg.e).min(cfg.b_max),
                ChannelState::Bad => s.b,
            };
            Ok(LatticeState::new(b, s.m_index))
        }
        Action::Decode => {
            if s.b < 1 {
                return Err(ModelError::DecodeWithoutEnergy(f64::from(s.b)));
            }
            let m_index = match g {
                ChannelState::Good => cfg.cap_index,
                ChannelState::Bad => (s.m_index + 1).min(cfg.cap_index),
            };
            Ok(LatticeState::new(s.b - 1, m_index))
        }
    }
}

/// One step of the continuous power-splitting dynamics.
///
/// At `rho` strictly inside `(0, 1)` the battery gains `rho * e` while one
/// unit is spent running the transceiver, and the information grows by the
/// [`rate_split`] amount for the realized channel state. At the endpoints
/// this reduces exactly to [`step_ts`].
pub fn step_ps(
    s: RealState,
    rho: SplitRatio,
    g: ChannelState,
    cfg: &LinkConfig,
) -> Result<RealState, ModelError> {
    if cfg.is_absorbing_real(s) {
        return Err(ModelError::StepFromAbsorbing);
    }
    if rho.is_harvest() {
        let b = match g {
            ChannelState::Good => (s.b + f64::from(cfg.e)).min(f64::from(cfg.b_max)),
            ChannelState::Bad => s.b,
        };
        return Ok(RealState::new(b, s.m));
    }
    if s.b < 1.0 {
        return Err(ModelError::DecodeWithoutEnergy(s.b));
    }
    let (rate_good, rate_bad) = rate_split(rho, cfg);
    let (b, m) = match g {
        ChannelState::Good => (
            (s.b - 1.0 + rho.value() * f64::from(cfg.e)).min(f64::from(cfg.b_max)),
            (s.m + rate_good).min(cfg.r1),
        ),
        ChannelState::Bad => (s.b - 1.0, (s.m + rate_bad).min(cfg.r1)),
    };
    Ok(RealState::new(b, m))
}

/// Admissible time-switching actions at a transient state: harvesting is
/// always available; decoding additionally needs a unit of energy and an
/// incomplete message.
pub fn allowed_actions(s: LatticeState, cfg: &LinkConfig) -> Result<&'static [Action], ModelError> {
    if cfg.is_absorbing(s) {
        return Err(ModelError::StepFromAbsorbing);
    }
    if s.b < 1 || s.m_index >= cfg.cap_index {
        Ok(HARVEST_ONLY)
    } else {
        Ok(BOTH_ACTIONS)
    }
}

/// Dense, deterministic enumeration of the lattice: row-major in battery,
/// then information level. Index arithmetic is shared by the solver, the
/// absorbing-chain analysis, and the CSV writers.
#[derive(Debug, Clone, Copy)]
pub struct StateSpace {
    cfg: LinkConfig,
}

impl StateSpace {
    pub fn new(cfg: &LinkConfig) -> Self {
        StateSpace { cfg: *cfg }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        (self.cfg.b_max as usize + 1) * self.cfg.info_levels() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, s: LatticeState) -> usize {
        debug_assert!(self.cfg.contains(s));
        s.b as usize * self.cfg.info_levels() as usize + s.m_index as usize
    }

    pub fn state(&self, index: usize) -> LatticeState {
        let levels = self.cfg.info_levels() as usize;
        LatticeState::new((index / levels) as u32, (index % levels) as u32)
    }

    pub fn iter(&self) -> impl Iterator<Item = LatticeState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    pub fn states(&self) -> Vec<LatticeState> {
        self.iter().collect()
    }
}

/// All lattice states in the canonical order.
pub fn enumerate_states(cfg: &LinkConfig) -> Vec<LatticeState> {
    StateSpace::new(cfg).states()
}
