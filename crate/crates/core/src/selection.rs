//! Crowd-selection policies.
//!
//! Each policy is an online state machine: [`CrowdSelector::select`] picks the
//! crowd for the coming round and [`CrowdSelector::observe`] feeds back the
//! response it produced. Index policies score crowd `i` by its virtual reward
//! `gap_i / sqrt(c_i)`, estimated from the crowd's own responses.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_margin, ProblemInstance, TallySheet};
use crate::seed::SimRng;
use crate::stopping::{threshold_decide, ThresholdRuleConfig};

pub trait CrowdSelector: Send {
    /// Crowd to ask in round `tally.round() + 1`.
    fn select(&mut self, tally: &TallySheet, rng: &mut SimRng) -> usize;

    /// Called after `crowd` answered `option`; `tally` already includes it.
    fn observe(&mut self, _crowd: usize, _option: usize, _tally: &TallySheet, _rng: &mut SimRng) {}

    fn name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Randomized round robin

/// Selection probabilities proportional to `1 / c_i`.
pub fn inverse_cost_weights(costs: &[f64]) -> Vec<f64> {
    let total: f64 = costs.iter().map(|c| 1.0 / c).sum();
    costs.iter().map(|c| (1.0 / c) / total).collect()
}

/// Index drawn from a probability vector by inverse CDF.
pub fn sample_index(weights: &[f64], rng: &mut SimRng) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// One draw of randomized round robin: crowd `i` with probability
/// `(1/c_i) / sum_j (1/c_j)`.
pub fn rr_select(costs: &[f64], rng: &mut SimRng) -> usize {
    sample_index(&inverse_cost_weights(costs), rng)
}

#[derive(Debug, Clone)]
pub struct RoundRobin {
    weights: Vec<f64>,
}

impl RoundRobin {
    pub fn new(costs: &[f64]) -> Self {
        Self {
            weights: inverse_cost_weights(costs),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl CrowdSelector for RoundRobin {
    fn select(&mut self, _tally: &TallySheet, rng: &mut SimRng) -> usize {
        sample_index(&self.weights, rng)
    }

    fn name(&self) -> &'static str {
        "rr"
    }
}

// ---------------------------------------------------------------------------
// UCB with virtual rewards

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Constant confidence multiplier `C`.
    Fixed(f64),
    /// `C_t = sqrt(8 ln t)`.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub exploration: Exploration,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            exploration: Exploration::Fixed(1.0),
        }
    }
}

impl UcbConfig {
    pub fn fixed(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("exploration constant {c}")));
        }
        Ok(Self {
            exploration: Exploration::Fixed(c),
        })
    }

    pub fn theory() -> Self {
        Self {
            exploration: Exploration::Theory,
        }
    }

    pub fn constant_at(&self, t: u64) -> f64 {
        match self.exploration {
            Exploration::Fixed(c) => c,
            Exploration::Theory => (8.0 * (t.max(1) as f64).ln()).sqrt(),
        }
    }
}

/// `c^{-1/2} (gap + C / sqrt(N))`.
pub fn ucb_index(empirical_gap: f64, pulls: u64, cost: f64, exploration: f64) -> f64 {
    (empirical_gap + exploration / (pulls as f64).sqrt()) / cost.sqrt()
}

/// Crowd maximizing the UCB index at round `t`. Unsampled crowds come first,
/// lowest index first; remaining ties go to the lowest index.
pub fn ucb_select(tally: &TallySheet, costs: &[f64], config: &UcbConfig, t: u64) -> usize {
    if let Some(i) = (0..tally.num_crowds()).find(|&i| tally.pulls(i) == 0) {
        return i;
    }
    let c = config.constant_at(t);
    let mut best = 0;
    let mut best_index = f64::NEG_INFINITY;
    for (i, &cost) in costs.iter().enumerate() {
        let n = tally.pulls(i);
        let gap = count_margin(tally.counts(i)) as f64 / n as f64;
        let index = ucb_index(gap, n, cost, c);
        if index > best_index {
            best_index = index;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Ucb {
    costs: Vec<f64>,
    config: UcbConfig,
}

impl Ucb {
    pub fn new(costs: &[f64], config: UcbConfig) -> Self {
        Self {
            costs: costs.to_vec(),
            config,
        }
    }
}

impl CrowdSelector for Ucb {
    fn select(&mut self, tally: &TallySheet, _rng: &mut SimRng) -> usize {
        ucb_select(tally, &self.costs, &self.config, tally.round() + 1)
    }

    fn name(&self) -> &'static str {
        "ucb"
    }
}

// ---------------------------------------------------------------------------
// Thompson sampling with a Beta approximation of the gap posterior

/// Beta shape parameters `(1 + N(x), 1 + N(y))` with `x, y` the two most
/// frequent options of a crowd, `N(x) >= N(y)`.
pub fn thompson_shape(counts: &[u64]) -> (f64, f64) {
    let mut first = 0u64;
    let mut second = 0u64;
    for &c in counts {
        if c > first {
            second = first;
            first = c;
        } else if c > second {
            second = c;
        }
    }
    (1.0 + first as f64, 1.0 + second as f64)
}

/// Draws one index `zeta_i / sqrt(c_i)` per crowd and returns the argmax.
pub fn thompson_select(tally: &TallySheet, costs: &[f64], rng: &mut SimRng) -> usize {
    let mut best = 0;
    let mut best_index = f64::NEG_INFINITY;
    for (i, &cost) in costs.iter().enumerate() {
        let (a, b) = thompson_shape(tally.counts(i));
        let zeta = Beta::new(a, b)
            .expect("shape parameters are >= 1")
            .sample(rng);
        let index = zeta / cost.sqrt();
        if index > best_index {
            best_index = index;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Thompson {
    costs: Vec<f64>,
}

impl Thompson {
    pub fn new(costs: &[f64]) -> Self {
        Self {
            costs: costs.to_vec(),
        }
    }
}

impl CrowdSelector for Thompson {
    fn select(&mut self, tally: &TallySheet, rng: &mut SimRng) -> usize {
        thompson_select(tally, &self.costs, rng)
    }

    fn name(&self) -> &'static str {
        "thompson"
    }
}

// ---------------------------------------------------------------------------
// Explore, exploit, roll back

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerConfig {
    /// Quality of the low-confidence per-crowd rule used while exploring.
    pub low_quality: f64,
    /// Exploitation lasts `ceil(exploit_multiplier * t0)` rounds.
    pub exploit_multiplier: f64,
    #[serde(default)]
    pub smooth: bool,
}

impl EerConfig {
    /// `low_quality = quality / 3` and `exploit_multiplier = 3`.
    pub fn for_quality(quality: f64, smooth: bool) -> Self {
        Self {
            low_quality: quality / 3.0,
            exploit_multiplier: 3.0,
            smooth,
        }
    }

    pub fn checked(self, quality: f64) -> Result<Self> {
        if !(self.low_quality > 0.0 && self.low_quality < quality) {
            return Err(Error::InvalidConfig(format!(
                "low quality {} must lie in (0, {quality})",
                self.low_quality
            )));
        }
        if !(self.exploit_multiplier >= 1.0 && self.exploit_multiplier.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "exploit multiplier {} must be >= 1",
                self.exploit_multiplier
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EerPhase {
    Explore,
    Exploit {
        crowd: usize,
        remaining: u64,
        t0: u64,
    },
    Rollback,
}

#[derive(Debug, Clone)]
pub struct ExploreExploitRollback {
    rr: RoundRobin,
    low: ThresholdRuleConfig,
    multiplier: f64,
    phase: EerPhase,
}

impl ExploreExploitRollback {
    pub fn new(costs: &[f64], config: EerConfig) -> Result<Self> {
        let low = ThresholdRuleConfig {
            quality: config.low_quality,
            smooth: config.smooth,
            adaptive_delta: None,
        }
        .checked()?;
        if !(config.exploit_multiplier >= 1.0) {
            return Err(Error::InvalidConfig(
                "exploit multiplier must be >= 1".into(),
            ));
        }
        Ok(Self {
            rr: RoundRobin::new(costs),
            low,
            multiplier: config.exploit_multiplier,
            phase: EerPhase::Explore,
        })
    }

    pub fn phase(&self) -> EerPhase {
        self.phase
    }
}

impl CrowdSelector for ExploreExploitRollback {
    fn select(&mut self, tally: &TallySheet, rng: &mut SimRng) -> usize {
        match self.phase {
            EerPhase::Explore | EerPhase::Rollback => self.rr.select(tally, rng),
            EerPhase::Exploit {
                crowd,
                remaining,
                t0,
            } => {
                self.phase = if remaining > 1 {
                    EerPhase::Exploit {
                        crowd,
                        remaining: remaining - 1,
                        t0,
                    }
                } else {
                    EerPhase::Rollback
                };
                crowd
            }
        }
    }

    fn observe(&mut self, crowd: usize, _option: usize, tally: &TallySheet, rng: &mut SimRng) {
        if self.phase == EerPhase::Explore
            && threshold_decide(tally.counts(crowd), &self.low, rng).is_some()
        {
            let t0 = tally.round();
            self.phase = EerPhase::Exploit {
                crowd,
                remaining: (self.multiplier * t0 as f64).ceil() as u64,
                t0,
            };
        }
    }

    fn name(&self) -> &'static str {
        "eer"
    }
}

// ---------------------------------------------------------------------------
// Uniform discretization of the simplex with per-phase UCB1

/// Smallest `m` with `m^(k+2) >= 2^phase`, i.e. `ceil(2^(phase/(k+2)))`.
pub fn grid_denominator(phase: u32, num_crowds: usize) -> u64 {
    let target = 2f64.powi(phase as i32);
    let exp = num_crowds as i32 + 2;
    let mut m = 1u64;
    while (m as f64).powi(exp) < target {
        m += 1;
    }
    m
}

/// All distributions over `k` crowds whose coordinates are multiples of `1/m`.
pub fn simplex_grid(num_crowds: usize, m: u64) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a);
            rec(k - 1, left - a, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(num_crowds, m, &mut Vec::with_capacity(num_crowds), &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|a| a as f64 / m as f64).collect())
        .collect()
}

/// Phase state of the uniform-discretization policy.
#[derive(Debug, Clone)]
pub struct UnifState {
    pub phase: u32,
    pub denominator: u64,
    pub grid: Vec<Vec<f64>>,
    pub arm_counts: Vec<Vec<u64>>,
    pub arm_pulls: Vec<u64>,
    /// Rounds played in the current phase.
    pub phase_round: u64,
    num_crowds: usize,
}

impl UnifState {
    fn start_phase(phase: u32, num_crowds: usize, num_options: usize) -> Self {
        let m = grid_denominator(phase, num_crowds);
        let grid = simplex_grid(num_crowds, m);
        let arms = grid.len();
        Self {
            phase,
            denominator: m,
            grid,
            arm_counts: vec![vec![0; num_options]; arms],
            arm_pulls: vec![0; arms],
            phase_round: 0,
            num_crowds,
        }
    }

    pub fn phase_length(&self) -> u64 {
        1u64 << self.phase
    }

    /// UCB1 over grid arms, rewards estimated by each arm's own empirical gap.
    pub fn choose_arm(&self) -> usize {
        if let Some(a) = self.arm_pulls.iter().position(|&n| n == 0) {
            return a;
        }
        let t = (self.phase_round + 1) as f64;
        let mut best = 0;
        let mut best_index = f64::NEG_INFINITY;
        for (a, (&n, counts)) in self.arm_pulls.iter().zip(&self.arm_counts).enumerate() {
            let gap = count_margin(counts) as f64 / n as f64;
            let index = gap + (8.0 * t.ln() / n as f64).sqrt();
            if index > best_index {
                best_index = index;
                best = a;
            }
        }
        best
    }
}

/// Uniform-discretization policy: phases of `2^j` rounds, each running UCB1
/// over a simplex grid of granularity `1 / ceil(2^(j/(k+2)))`. The chosen
/// grid point is a distribution from which the crowd is drawn.
#[derive(Debug, Clone)]
pub struct UniformDiscretization {
    state: UnifState,
    current_arm: usize,
}

impl UniformDiscretization {
    pub fn new(instance: &ProblemInstance) -> Result<Self> {
        if !instance.has_uniform_costs() {
            return Err(Error::InvalidConfig(
                "uniform discretization requires uniform costs".into(),
            ));
        }
        Ok(Self {
            state: UnifState::start_phase(1, instance.num_crowds(), instance.num_options()),
            current_arm: 0,
        })
    }

    pub fn state(&self) -> &UnifState {
        &self.state
    }

    pub fn current_arm(&self) -> usize {
        self.current_arm
    }
}

/// One selection of the uniform-discretization policy; advances the phase
/// when the current one is exhausted.
pub fn unif_select(state: &mut UnifState, rng: &mut SimRng) -> (usize, usize) {
    if state.phase_round >= state.phase_length() {
        let n = state.arm_counts[0].len();
        *state = UnifState::start_phase(state.phase + 1, state.num_crowds, n);
    }
    let arm = state.choose_arm();
    (arm, sample_index(&state.grid[arm], rng))
}

impl CrowdSelector for UniformDiscretization {
    fn select(&mut self, _tally: &TallySheet, rng: &mut SimRng) -> usize {
        let (arm, crowd) = unif_select(&mut self.state, rng);
        self.current_arm = arm;
        crowd
    }

    fn observe(&mut self, _crowd: usize, option: usize, _tally: &TallySheet, _rng: &mut SimRng) {
        let arm = self.current_arm;
        self.state.arm_counts[arm][option] += 1;
        self.state.arm_pulls[arm] += 1;
        self.state.phase_round += 1;
    }

    fn name(&self) -> &'static str {
        "unif"
    }
}

// ---------------------------------------------------------------------------

/// Serializable choice of policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    RoundRobin,
    Ucb(UcbConfig),
    Thompson,
    Eer(EerConfig),
    Unif,
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::RoundRobin => "rr",
            PolicySpec::Ucb(_) => "ucb",
            PolicySpec::Thompson => "thompson",
            PolicySpec::Eer(_) => "eer",
            PolicySpec::Unif => "unif",
        }
    }

    pub fn build(&self, instance: &ProblemInstance) -> Result<Box<dyn CrowdSelector>> {
        let costs = instance.costs();
        Ok(match *self {
            PolicySpec::RoundRobin => Box::new(RoundRobin::new(costs)),
            PolicySpec::Ucb(cfg) => Box::new(Ucb::new(costs, cfg)),
            PolicySpec::Thompson => Box::new(Thompson::new(costs)),
            PolicySpec::Eer(cfg) => Box::new(ExploreExploitRollback::new(costs, cfg)?),
            PolicySpec::Unif => Box::new(UniformDiscretization::new(instance)?),
        })
    }
}
