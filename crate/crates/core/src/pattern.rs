//! Periodic A/B play patterns, their run-length encoding, and the derived
//! per-coup loss sequence `q` and signed-power sequence `b`.
//!
//! Indices exposed by the sequence accessors are 1-based and periodic, so any
//! integer index is valid: `q(i + k*n) == q(i)` for every `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{check_prob, neg_one_pow, powi, Real};

/// Longest pattern accepted unless a caller raises the limit.
pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub fn other(self) -> Arm {
        match self {
            Arm::A => Arm::B,
            Arm::B => Arm::A,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Arm::A => 'A',
            Arm::B => 'B',
        }
    }
}

/// A nonrandom periodic pattern strategy: a fixed arm sequence repeated forever.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    arms: Vec<Arm>,
    r: usize,
    s: usize,
}

impl Pattern {
    /// Parses either an A/B string (case-insensitive) or a run-length form such
    /// as `(1,1,1,2,1,3)`.
    pub fn parse(text: &str) -> Result<Pattern> {
        Self::parse_with_limit(text, DEFAULT_MAX_LEN)
    }

    pub fn parse_with_limit(text: &str, max_len: usize) -> Result<Pattern> {
        if text.is_empty() {
            return Err(Error::EmptyPattern);
        }
        if text.starts_with('(') {
            let rl = RunLengthForm::parse(text)?;
            let p = rl.to_pattern();
            if p.len() > max_len {
                return Err(Error::PatternTooLong {
                    len: p.len(),
                    max: max_len,
                });
            }
            return Ok(p);
        }
        let arms = text
            .chars()
            .enumerate()
            .map(|(position, c)| match c.to_ascii_uppercase() {
                'A' => Ok(Arm::A),
                'B' => Ok(Arm::B),
                _ => Err(Error::InvalidCharacter { position, found: c }),
            })
            .collect::<Result<Vec<_>>>()?;
        if arms.len() > max_len {
            return Err(Error::PatternTooLong {
                len: arms.len(),
                max: max_len,
            });
        }
        Self::from_arms(arms)
    }

    pub fn from_arms(arms: Vec<Arm>) -> Result<Pattern> {
        if arms.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let r = arms.iter().filter(|&&a| a == Arm::A).count();
        let s = arms.len() - r;
        if r == 0 || s == 0 {
            return Err(Error::SingleArmPattern);
        }
        Ok(Pattern { arms, r, s })
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    /// Period length `r + s`.
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Arm pulled at coup `i` (1-based, periodic).
    pub fn arm(&self, i: i64) -> Arm {
        let n = self.arms.len() as i64;
        self.arms[(i - 1).rem_euclid(n) as usize]
    }

    pub fn rotate_left(&self, k: usize) -> Pattern {
        let mut arms = self.arms.clone();
        let n = arms.len();
        arms.rotate_left(k % n);
        Pattern {
            arms,
            r: self.r,
            s: self.s,
        }
    }

    /// All distinct cyclic shifts, in order of shift amount.
    pub fn rotations(&self) -> Vec<Pattern> {
        let mut out: Vec<Pattern> = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let p = self.rotate_left(k);
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    /// The same layout with the roles of A and B exchanged.
    pub fn swap_arms(&self) -> Pattern {
        Pattern {
            arms: self.arms.iter().map(|a| a.other()).collect(),
            r: self.s,
            s: self.r,
        }
    }

    /// The pattern concatenated with itself `times` times.
    pub fn repeated(&self, times: usize) -> Pattern {
        let arms = self.arms.repeat(times.max(1));
        Pattern {
            r: self.r * times.max(1),
            s: self.s * times.max(1),
            arms,
        }
    }

    /// Canonical run-length form: among the rotations that begin an A-run
    /// right after a B, the one with the lexicographically smallest run list.
    pub fn canonicalize(&self) -> RunLengthForm {
        let n = self.arms.len();
        let mut best: Option<Vec<usize>> = None;
        for k in 0..n {
            if self.arms[k] == Arm::A && self.arms[(k + n - 1) % n] == Arm::B {
                let runs = run_lengths(self.arms[k..].iter().chain(&self.arms[..k]));
                if best.as_ref().is_none_or(|b| runs < *b) {
                    best = Some(runs);
                }
            }
        }
        RunLengthForm {
            a: best.expect("a two-arm pattern has a B->A boundary"),
        }
    }

    /// Per-coup loss probabilities `q_1..q_{r+s}` following the pattern layout.
    pub fn q_sequence<T: Real>(&self, q_a: T, q_b: T) -> Result<QSequence<T>> {
        check_prob("q_A", &q_a)?;
        check_prob("q_B", &q_b)?;
        let q = self
            .arms
            .iter()
            .map(|a| match a {
                Arm::A => q_a.clone(),
                Arm::B => q_b.clone(),
            })
            .collect();
        Ok(QSequence { q })
    }
}

fn run_lengths<'a>(arms: impl Iterator<Item = &'a Arm>) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut prev = None;
    for &a in arms {
        if Some(a) == prev {
            *runs.last_mut().expect("run started") += 1;
        } else {
            runs.push(1);
            prev = Some(a);
        }
    }
    runs
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::parse(s)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.arms {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Run-length encoding `(r_1, s_1, ..., r_h, s_h)` of a pattern that starts
/// with an A-run and ends with a B-run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct RunLengthForm {
    a: Vec<usize>,
}

impl RunLengthForm {
    pub fn new(a: Vec<usize>) -> Result<RunLengthForm> {
        if a.is_empty() || a.len() % 2 != 0 {
            return Err(Error::MalformedRunLength(format!(
                "expected an even, nonzero number of runs, got {}",
                a.len()
            )));
        }
        if a.contains(&0) {
            return Err(Error::MalformedRunLength("run lengths must be positive".into()));
        }
        Ok(RunLengthForm { a })
    }

    /// Parses `(a_1,...,a_2h)`.
    pub fn parse(text: &str) -> Result<RunLengthForm> {
        let inner = text
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| Error::MalformedRunLength(format!("{text:?} is not parenthesized")))?;
        let a = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::MalformedRunLength(format!("bad run length {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(a)
    }

    pub fn runs(&self) -> &[usize] {
        &self.a
    }

    /// `a_i` with periodic extension `a_i = a_{i +- 2h}`.
    pub fn a(&self, i: i64) -> usize {
        self.a[(i - 1).rem_euclid(self.a.len() as i64) as usize]
    }

    /// Number of A-runs (equal to the number of B-runs).
    pub fn h(&self) -> usize {
        self.a.len() / 2
    }

    pub fn r(&self) -> usize {
        self.a.iter().step_by(2).sum()
    }

    pub fn s(&self) -> usize {
        self.a.iter().skip(1).step_by(2).sum()
    }

    pub fn n(&self) -> usize {
        self.a.iter().sum()
    }

    pub fn to_pattern(&self) -> Pattern {
        let mut arms = Vec::with_capacity(self.n());
        for (i, &len) in self.a.iter().enumerate() {
            let arm = if i % 2 == 0 { Arm::A } else { Arm::B };
            arms.extend(std::iter::repeat_n(arm, len));
        }
        Pattern {
            arms,
            r: self.r(),
            s: self.s(),
        }
    }

    pub fn canonical(&self) -> RunLengthForm {
        self.to_pattern().canonicalize()
    }

    /// Rotates by `t` whole (A-run, B-run) pairs; pair `t + 1` becomes pair 1.
    pub fn rotate_pairs(&self, t: usize) -> RunLengthForm {
        let mut a = self.a.clone();
        let len = a.len();
        a.rotate_left((2 * t) % len);
        RunLengthForm { a }
    }

    /// `b_i = (-1)^{a_i} q^{a_i}` with `q = q_A` on A-runs and `q_B` on B-runs.
    pub fn b_sequence<T: Real>(&self, q_a: T, q_b: T) -> Result<BSequence<T>> {
        check_prob("q_A", &q_a)?;
        check_prob("q_B", &q_b)?;
        let b = self
            .a
            .iter()
            .enumerate()
            .map(|(i, &ai)| {
                let q = if i % 2 == 0 { &q_a } else { &q_b };
                neg_one_pow::<T>(ai as i64) * powi(q, ai)
            })
            .collect();
        Ok(BSequence { b })
    }
}

impl fmt::Display for RunLengthForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.a.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for RunLengthForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with('(') {
            RunLengthForm::parse(s)
        } else {
            Ok(Pattern::parse(s)?.canonicalize())
        }
    }
}

/// Periodic loss-probability sequence of a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct QSequence<T = f64> {
    q: Vec<T>,
}

impl<T: Real> QSequence<T> {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `q_i`, 1-based and periodic.
    pub fn get(&self, i: i64) -> &T {
        &self.q[(i - 1).rem_euclid(self.q.len() as i64) as usize]
    }

    /// `prod_{k=from}^{to} q_k`; 1 when `from > to`.
    pub fn product(&self, from: i64, to: i64) -> T {
        (from..=to).fold(T::one(), |acc, k| acc * self.get(k).clone())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.q
    }
}

/// Periodic signed-power sequence `b_1..b_2h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSequence<T = f64> {
    b: Vec<T>,
}

impl<T: Real> BSequence<T> {
    pub fn from_values(b: Vec<T>) -> BSequence<T> {
        BSequence { b }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `b_i`, 1-based and periodic with period `2h`.
    pub fn get(&self, i: i64) -> &T {
        &self.b[(i - 1).rem_euclid(self.b.len() as i64) as usize]
    }

    /// `prod_{k=from}^{to} b_k`; 1 when `from > to`.
    pub fn product(&self, from: i64, to: i64) -> T {
        (from..=to).fold(T::one(), |acc, k| acc * self.get(k).clone())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.b
    }
}

/// Canonical forms of every two-arm pattern of exactly `len` coups, one per
/// rotation class, in lexicographic necklace order.
pub fn canonical_patterns(len: usize) -> Vec<RunLengthForm> {
    let mut out = Vec::new();
    if len < 2 {
        return out;
    }
    // FKM necklace generation over {0 = A, 1 = B}.
    let mut word = vec![0u8; len + 1];
    fn gen(t: usize, p: usize, n: usize, word: &mut Vec<u8>, out: &mut Vec<RunLengthForm>) {
        if t > n {
            if n % p == 0 {
                let arms: Vec<Arm> = word[1..=n]
                    .iter()
                    .map(|&x| if x == 0 { Arm::A } else { Arm::B })
                    .collect();
                if let Ok(p) = Pattern::from_arms(arms) {
                    out.push(p.canonicalize());
                }
            }
            return;
        }
        word[t] = word[t - p];
        gen(t + 1, p, n, word, out);
        if word[t - p] == 0 {
            word[t] = 1;
            gen(t + 1, t, n, word, out);
        }
    }
    gen(1, 1, len, &mut word, &mut out);
    out
}

/// [`canonical_patterns`] for every length `2..=max_len`, shortest first.
pub fn canonical_patterns_up_to(max_len: usize) -> Vec<RunLengthForm> {
    (2..=max_len).flat_map(canonical_patterns).collect()
}
