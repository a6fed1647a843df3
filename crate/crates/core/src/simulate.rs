//! Seeded Monte Carlo play of the two-armed machine with fair-calibrated arms.
//!
//! Each coup costs one coin. A win on arm `X` pays `u_X = (3-2p_X)/(2-p_X)`
//! and resets the loss pointer; a loss advances it, and the `J`-th
//! consecutive loss pays `J` coins and resets it. Wins per arm and Futurity
//! awards are counted as integers, and the casino's net is formed from the
//! counts once at the end, so long runs accumulate no rounding drift.
//!
//! Replication `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `k`.
//! Every replication starts with pointer 0 at pattern position 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{fair_payout, mixture_profit, p_circ_d, theorem2};
use crate::error::{Error, Result};
use crate::pattern::{Arm, Pattern};
use crate::scalar::check_prob;

/// Identity of the random stream, recorded in every result.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(seed), stream = replication index";

pub const DEFAULT_REPLICATIONS: usize = 16;

/// Largest per-replication run for which a per-coup trace may be requested.
pub const MAX_TRACE_COUPS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Pattern(Pattern),
    /// Pull arm A with probability `γ` on each coup, independently.
    Mixture(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Coups per replication.
    pub n_coups: u64,
    pub strategy: Strategy,
    pub q_a: f64,
    pub q_b: f64,
    pub threshold: usize,
    pub replications: usize,
}

impl SimConfig {
    pub fn new(strategy: Strategy, q_a: f64, q_b: f64, n_coups: u64, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            n_coups,
            strategy,
            q_a,
            q_b,
            threshold: 2,
            replications: DEFAULT_REPLICATIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("q_A", &self.q_a)?;
        check_prob("q_B", &self.q_b)?;
        if self.n_coups == 0 {
            return Err(Error::InvalidConfig("at least one coup is required".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("at least one replication is required".into()));
        }
        if self.threshold != 2 {
            return Err(Error::InvalidConfig(format!(
                "fair payouts are calibrated for J = 2 only, got J = {}",
                self.threshold
            )));
        }
        if let Strategy::Mixture(g) = self.strategy {
            check_prob("gamma", &g)?;
        }
        Ok(())
    }
}

/// Integer tallies of one replication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Tally {
    pub coups: u64,
    pub wins_a: u64,
    pub wins_b: u64,
    pub futurity_awards: u64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.coups += o.coups;
        self.wins_a += o.wins_a;
        self.wins_b += o.wins_b;
        self.futurity_awards += o.futurity_awards;
    }

    /// Stakes minus payouts.
    pub fn casino_net(&self, u_a: f64, u_b: f64, threshold: usize) -> f64 {
        let payouts = self.wins_a as f64 * u_a + self.wins_b as f64 * u_b;
        (self.coups as f64 - (threshold as u64 * self.futurity_awards) as f64) - payouts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Expected {
    pub profit_per_coup: f64,
    pub futurity_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimResult {
    pub strategy: String,
    #[serde(rename = "qA")]
    pub q_a: f64,
    #[serde(rename = "qB")]
    pub q_b: f64,
    pub seed: u64,
    pub replications: usize,
    pub coups_per_replication: u64,
    pub coups_played: u64,
    pub casino_net: f64,
    pub profit_per_coup: f64,
    /// Standard error of the replication means; absent with one replication.
    pub std_error: Option<f64>,
    pub futurity_awards: u64,
    pub empirical_futurity_rate: f64,
    pub futurity_std_error: Option<f64>,
    pub per_replication_means: Vec<f64>,
    pub tally: Tally,
    pub expected: Expected,
    pub generator: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub exact_profit: f64,
    pub profit_deviation: f64,
    pub profit_within_4se: bool,
    pub exact_futurity_rate: f64,
    pub futurity_deviation: f64,
    pub futurity_within_4se: bool,
}

impl SimResult {
    /// Empirical against exact values, judged at 4 standard errors.
    pub fn compare(&self) -> Comparison {
        let within = |dev: f64, se: Option<f64>| se.is_some_and(|s| dev.abs() <= 4.0 * s);
        let profit_deviation = self.profit_per_coup - self.expected.profit_per_coup;
        let futurity_deviation = self.empirical_futurity_rate - self.expected.futurity_rate;
        Comparison {
            exact_profit: self.expected.profit_per_coup,
            profit_deviation,
            profit_within_4se: within(profit_deviation, self.std_error),
            exact_futurity_rate: self.expected.futurity_rate,
            futurity_deviation,
            futurity_within_4se: within(futurity_deviation, self.futurity_std_error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub coup: u64,
    pub arm: char,
    pub outcome: &'static str,
    /// Pointer after the coup.
    pub pointer: usize,
    pub payout: f64,
}

struct Machine {
    arms: Option<Vec<Arm>>,
    gamma: f64,
    p_a: f64,
    p_b: f64,
    u_a: f64,
    u_b: f64,
    threshold: usize,
}

impl Machine {
    fn new(cfg: &SimConfig) -> Result<Machine> {
        cfg.validate()?;
        let (p_a, p_b) = (1.0 - cfg.q_a, 1.0 - cfg.q_b);
        let (arms, gamma) = match &cfg.strategy {
            Strategy::Pattern(p) => (Some(p.arms().to_vec()), 0.0),
            Strategy::Mixture(g) => (None, *g),
        };
        Ok(Machine {
            arms,
            gamma,
            p_a,
            p_b,
            u_a: fair_payout(p_a)?,
            u_b: fair_payout(p_b)?,
            threshold: cfg.threshold,
        })
    }

    fn play(&self, rng: &mut ChaCha8Rng, n: u64, mut trace: Option<&mut Vec<TraceRow>>) -> Tally {
        let mut t = Tally {
            coups: n,
            ..Tally::default()
        };
        let mut pointer = 0usize;
        let mut pos = 0usize;
        for coup in 0..n {
            let arm = match &self.arms {
                Some(arms) => {
                    let a = arms[pos];
                    pos += 1;
                    if pos == arms.len() {
                        pos = 0;
                    }
                    a
                }
                None => {
                    if rng.random_bool(self.gamma) {
                        Arm::A
                    } else {
                        Arm::B
                    }
                }
            };
            let (p, u) = match arm {
                Arm::A => (self.p_a, self.u_a),
                Arm::B => (self.p_b, self.u_b),
            };
            let (outcome, payout) = if rng.random_bool(p) {
                match arm {
                    Arm::A => t.wins_a += 1,
                    Arm::B => t.wins_b += 1,
                }
                pointer = 0;
                ("win", u)
            } else {
                pointer += 1;
                if pointer == self.threshold {
                    t.futurity_awards += 1;
                    pointer = 0;
                    ("futurity", self.threshold as f64)
                } else {
                    ("loss", 0.0)
                }
            };
            if let Some(rows) = trace.as_deref_mut() {
                rows.push(TraceRow {
                    coup: coup + 1,
                    arm: arm.as_char(),
                    outcome,
                    pointer,
                    payout,
                });
            }
        }
        t
    }
}

fn replication_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn std_error(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

/// Exact asymptotic profit per coup and Futurity rate for the configuration.
pub fn expected(cfg: &SimConfig) -> Result<Expected> {
    cfg.validate()?;
    match &cfg.strategy {
        Strategy::Pattern(p) => Ok(Expected {
            profit_per_coup: theorem2(&p.canonicalize(), cfg.q_a, cfg.q_b)?.r_d,
            futurity_rate: p_circ_d(p, cfg.q_a, cfg.q_b)?,
        }),
        Strategy::Mixture(g) => {
            let m = mixture_profit(*g, cfg.q_a, cfg.q_b, cfg.threshold)?;
            Ok(Expected {
                profit_per_coup: m.r_c,
                futurity_rate: m.f_mix / cfg.threshold as f64,
            })
        }
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    let machine = Machine::new(cfg)?;
    let tallies: Vec<Tally> = (0..cfg.replications)
        .into_par_iter()
        .map(|k| machine.play(&mut replication_rng(cfg.seed, k), cfg.n_coups, None))
        .collect();
    let mut total = Tally::default();
    for t in &tallies {
        total.add(t);
    }
    let means: Vec<f64> = tallies
        .iter()
        .map(|t| t.casino_net(machine.u_a, machine.u_b, cfg.threshold) / t.coups as f64)
        .collect();
    let rates: Vec<f64> = tallies
        .iter()
        .map(|t| t.futurity_awards as f64 / t.coups as f64)
        .collect();
    let casino_net = total.casino_net(machine.u_a, machine.u_b, cfg.threshold);
    Ok(SimResult {
        strategy: match &cfg.strategy {
            Strategy::Pattern(p) => p.to_string(),
            Strategy::Mixture(g) => format!("mixture({g})"),
        },
        q_a: cfg.q_a,
        q_b: cfg.q_b,
        seed: cfg.seed,
        replications: cfg.replications,
        coups_per_replication: cfg.n_coups,
        coups_played: total.coups,
        casino_net,
        profit_per_coup: casino_net / total.coups as f64,
        std_error: std_error(&means),
        futurity_awards: total.futurity_awards,
        empirical_futurity_rate: total.futurity_awards as f64 / total.coups as f64,
        futurity_std_error: std_error(&rates),
        per_replication_means: means,
        tally: total,
        expected: expected(cfg)?,
        generator: GENERATOR,
    })
}

/// Simulates a mixture strategy and compares it with the mixture formula.
pub fn simulate_mixture_check(cfg: &SimConfig) -> Result<(SimResult, Comparison)> {
    if !matches!(cfg.strategy, Strategy::Mixture(_)) {
        return Err(Error::InvalidConfig("a mixture strategy is required".into()));
    }
    let r = simulate(cfg)?;
    let c = r.compare();
    Ok((r, c))
}

/// Coup-by-coup record of replication 0, for runs of at most 10^4 coups.
pub fn trace(cfg: &SimConfig) -> Result<Vec<TraceRow>> {
    if cfg.n_coups > MAX_TRACE_COUPS {
        return Err(Error::InvalidConfig(format!(
            "traces are limited to {MAX_TRACE_COUPS} coups, got {}",
            cfg.n_coups
        )));
    }
    let machine = Machine::new(cfg)?;
    let mut rows = Vec::with_capacity(cfg.n_coups as usize);
    machine.play(&mut replication_rng(cfg.seed, 0), cfg.n_coups, Some(&mut rows));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy, qa: f64, qb: f64, n: u64) -> SimConfig {
        SimConfig::new(strategy, qa, qb, n, 7)
    }

    fn pattern(s: &str) -> Strategy {
        Strategy::Pattern(Pattern::parse(s).unwrap())
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let c = cfg(pattern("ABABB"), 0.4, 0.6, 20_000);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&c).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn bookkeeping_invariants() {
        let c = cfg(Strategy::Mixture(0.3), 0.4, 0.7, 5_000);
        let r = simulate(&c).unwrap();
        assert_eq!(r.coups_played, 16 * 5_000);
        assert_eq!(r.profit_per_coup, r.casino_net / r.coups_played as f64);
        assert!(r.empirical_futurity_rate >= 0.0 && r.empirical_futurity_rate <= 0.5);
        assert_eq!(r.per_replication_means.len(), 16);
    }

    #[test]
    fn trace_matches_tally() {
        let c = cfg(pattern("AB"), 0.5, 0.6, 1_000);
        let rows = trace(&c).unwrap();
        assert_eq!(rows.len(), 1_000);
        let awards = rows.iter().filter(|r| r.outcome == "futurity").count() as u64;
        let mut one = c.clone();
        one.replications = 1;
        assert_eq!(simulate(&one).unwrap().futurity_awards, awards);
        assert!(rows.iter().all(|r| r.pointer < 2));
        assert_eq!(rows[0].arm, 'A');
        assert_eq!(rows[1].arm, 'B');
        let mut big = c.clone();
        big.n_coups = 10_001;
        assert!(trace(&big).is_err());
    }

    #[test]
    fn symmetric_arms_are_fair() {
        let c = cfg(pattern("AB"), 0.5, 0.5, 200_000);
        let r = simulate(&c).unwrap();
        assert_eq!(r.expected.profit_per_coup, 0.0);
        assert!(r.compare().profit_within_4se);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(pattern("AB"), 0.5, 0.5, 10);
        c.threshold = 3;
        assert!(matches!(simulate(&c), Err(Error::InvalidConfig(_))));
        let c = cfg(Strategy::Mixture(1.0), 0.5, 0.5, 10);
        assert!(simulate(&c).is_err());
        let c = cfg(pattern("AB"), 0.5, 0.5, 0);
        assert!(simulate(&c).is_err());
        assert!(simulate_mixture_check(&cfg(pattern("AB"), 0.4, 0.5, 10)).is_err());
    }
}
