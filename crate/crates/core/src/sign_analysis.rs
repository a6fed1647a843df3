//! Sign structure of the `b`-sequence and positivity of the structure function `Q`.
//!
//! Negative points `c_1 < … < c_δ` are the indices of odd runs, extended
//! periodically by `c_{k+δ} = c_k + 2h`. For negative-point indices `i < j`,
//! `v(i, j) = (-1)^{c_j - c_i + j - i}` is the sign of the product term
//! running from `c_i` to `c_j`.
//!
//! Two negative points `x < y` with `y - x` odd and `v(x, y) < 0` form a
//! candidate pair. They are *matched* when every candidate partner of `x`
//! inside `(x, y)` is already matched from the left, and every candidate
//! partner of `y` inside `(x, y)` is already matched from the right. `φ(x)`
//! is the point matched to `x` on its right and `ψ(y)` the point matched to
//! `y` on its left; matches are unique, so `φ` and `ψ` are mutually inverse.

use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::structure_q;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pattern::{BSequence, RunLengthForm};
use crate::scalar::{neg_one_pow, Real};

/// Tolerance for comparing `Q` with its small-δ decompositions.
pub const DECOMPOSITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignProfile {
    h: usize,
    negative: Vec<bool>,
    neg_idx: Vec<usize>,
    /// `matched[(x-1) mod δ][y - x]` for `0 < y - x < δ`.
    matched: Vec<Vec<bool>>,
}

/// `(-1)^{j-i+1} Π_{k=i}^{j} b_k`, or 1 when `i > j`.
pub fn mu<T: Real>(i: i64, j: i64, b: &BSequence<T>) -> T {
    if i > j {
        T::one()
    } else {
        neg_one_pow::<T>(j - i + 1) * b.product(i, j)
    }
}

impl SignProfile {
    pub fn new(rl: &RunLengthForm) -> SignProfile {
        let negative: Vec<bool> = rl.runs().iter().map(|&a| a % 2 == 1).collect();
        let neg_idx = negative
            .iter()
            .enumerate()
            .filter(|(_, &n)| n)
            .map(|(i, _)| i + 1)
            .collect();
        let mut p = SignProfile {
            h: rl.h(),
            negative,
            neg_idx,
            matched: Vec::new(),
        };
        p.matched = p.match_table();
        p
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// `δ`, the number of negative points per period.
    pub fn delta(&self) -> usize {
        self.neg_idx.len()
    }

    /// `-1` at negative points, `+1` elsewhere, for `b_1..b_2h`.
    pub fn signs(&self) -> Vec<i8> {
        self.negative.iter().map(|&n| if n { -1 } else { 1 }).collect()
    }

    /// `c_1..c_δ`.
    pub fn negative_points(&self) -> &[usize] {
        &self.neg_idx
    }

    /// `c_k` for any integer `k`. Panics when `δ = 0`.
    pub fn c(&self, k: i64) -> i64 {
        let d = self.delta() as i64;
        assert!(d > 0, "profile has no negative points");
        self.neg_idx[(k - 1).rem_euclid(d) as usize] as i64 + (k - 1).div_euclid(d) * 2 * self.h as i64
    }

    fn v(&self, i: i64, j: i64) -> i8 {
        if (self.c(j) - self.c(i) + j - i).rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }

    fn require_delta(&self) -> Result<()> {
        if self.delta() < 2 {
            return Err(Error::NoNegativePoints { delta: self.delta() });
        }
        Ok(())
    }

    fn require_span(&self, i: i64, j: i64, allow_equal: bool) -> Result<()> {
        let lo = if allow_equal { 0 } else { 1 };
        if j - i < lo || j - i >= self.delta() as i64 {
            return Err(Error::IndexOutOfRange(format!(
                "need {lo} <= j - i < δ = {}, got i = {i}, j = {j}",
                self.delta()
            )));
        }
        Ok(())
    }

    /// `v(i, j)` for `0 < j - i < δ`.
    pub fn v_sign(&self, i: i64, j: i64) -> Result<i8> {
        self.require_delta()?;
        self.require_span(i, j, false)?;
        Ok(self.v(i, j))
    }

    fn is_pair(&self, x: i64, y: i64) -> bool {
        (y - x).rem_euclid(2) == 1 && self.v(x, y) < 0
    }

    fn match_table(&self) -> Vec<Vec<bool>> {
        let d = self.delta();
        let mut t = vec![vec![false; d.max(1)]; d];
        for len in 1..d {
            for x0 in 0..d {
                let x = x0 as i64 + 1;
                let y = x + len as i64;
                let m = |t: &Vec<Vec<bool>>, a: i64, b: i64| t[(a - 1).rem_euclid(d as i64) as usize][(b - a) as usize];
                let mut ok = self.is_pair(x, y);
                for mid in x + 1..y {
                    if !ok {
                        break;
                    }
                    if self.is_pair(x, mid) && !(x + 1..mid).any(|k| m(&t, k, mid)) {
                        ok = false;
                    }
                    if self.is_pair(mid, y) && !(mid + 1..y).any(|k| m(&t, mid, k)) {
                        ok = false;
                    }
                }
                t[x0][len] = ok;
            }
        }
        t
    }

    /// Whether `x` and `y` are matched (false unless `0 < y - x < δ`).
    pub fn matched(&self, x: i64, y: i64) -> bool {
        let d = self.delta() as i64;
        if d == 0 || y - x <= 0 || y - x >= d {
            return false;
        }
        self.matched[(x - 1).rem_euclid(d) as usize][(y - x) as usize]
    }

    /// Point matched to `x` in `(x, hi]`.
    fn match_right(&self, x: i64, hi: i64) -> Option<i64> {
        (x + 1..=hi).find(|&y| self.matched(x, y))
    }

    /// Point matched to `y` in `[lo, y)`, nearest first.
    fn match_left(&self, y: i64, lo: i64) -> Option<i64> {
        (lo..y).rev().find(|&x| self.matched(x, y))
    }

    fn require_negative_pair(&self, i: i64, j: i64) -> Result<()> {
        self.require_delta()?;
        self.require_span(i, j, false)?;
        if self.v(i, j) >= 0 {
            return Err(Error::PreconditionViolated(format!("v({i}, {j}) is positive")));
        }
        Ok(())
    }

    /// `φ(i)` searched in `(i, j]`, for a pair with `v(i, j) < 0`.
    pub fn phi(&self, i: i64, j: i64) -> Result<Option<i64>> {
        self.require_negative_pair(i, j)?;
        Ok(self.match_right(i, j))
    }

    /// `ψ(j)` searched in `[i, j)`, for a pair with `v(i, j) < 0`.
    pub fn psi(&self, j: i64, i: i64) -> Result<Option<i64>> {
        self.require_negative_pair(i, j)?;
        Ok(self.match_left(j, i))
    }

    /// `φ(x)` over the full window `(x, x+δ-1]`.
    pub fn phi_window(&self, x: i64) -> Option<i64> {
        self.match_right(x, x + self.delta() as i64 - 1)
    }

    /// `φ(x)` with the convention `φ(x) = x - 1` when no match exists.
    pub fn phi_ext(&self, x: i64) -> i64 {
        self.phi_window(x).unwrap_or(x - 1)
    }

    /// The descending iteration `ψ_1 = ψ(j)`, `ψ_k = ψ(ψ_{k-1} - 1)`, all
    /// searched no further left than `i`, for `0 <= j - i < δ`.
    pub fn psi_chain(&self, i: i64, j: i64) -> Result<PsiChain> {
        self.require_delta()?;
        self.require_span(i, j, true)?;
        Ok(self.psi_chain_unchecked(i, j))
    }

    fn psi_chain_unchecked(&self, i: i64, j: i64) -> PsiChain {
        let mut steps = Vec::new();
        let mut cur = j;
        while let Some(x) = self.match_left(cur, i) {
            steps.push(x);
            cur = x - 1;
        }
        let tilde = steps.last().copied().unwrap_or(j + 1);
        let tilde_star = if tilde > i { tilde } else { self.phi_ext(i) + 1 };
        PsiChain {
            steps,
            tilde,
            tilde_star,
        }
    }

    /// `φ(i)` and `ψ(j)` for every `1 <= i <= δ`, `i < j < i + δ` with `v(i, j) < 0`.
    pub fn phi_psi_table(&self) -> Vec<PhiPsiEntry> {
        let d = self.delta() as i64;
        let mut out = Vec::new();
        if d < 2 {
            return out;
        }
        for i in 1..=d {
            for j in i + 1..i + d {
                if self.v(i, j) < 0 {
                    out.push(PhiPsiEntry {
                        i,
                        j,
                        phi: self.match_right(i, j),
                        psi: self.match_left(j, i),
                    });
                }
            }
        }
        out
    }

    /// Checks the combinatorial properties of the correspondence.
    pub fn check_properties(&self) -> PropertyCounts {
        let mut c = PropertyCounts::default();
        let d = self.delta() as i64;
        if d < 2 {
            return c;
        }
        for i in 1..=d {
            for j in i + 1..i + d {
                c.chain_rule_checked += 1;
                let prod: i8 = (i..j).map(|k| self.v(k, k + 1)).product();
                if prod != self.v(i, j) {
                    c.chain_rule_violations += 1;
                }
            }
        }
        for e in self.phi_psi_table() {
            c.pairs_checked += 1;
            if e.phi.is_none() && e.psi.is_none() {
                c.existence_violations += 1;
            }
            if let (Some(phi), Some(psi)) = (e.phi, e.psi) {
                if (phi == e.j) != (psi == e.i) {
                    c.inverse_violations += 1;
                }
            }
        }
        for m in 1..=d {
            for n in m..m + d {
                let (Some(pm), Some(pn)) = (self.phi_window(m), self.phi_window(n)) else {
                    continue;
                };
                if m <= n && n <= pm && pm < pn {
                    c.pr2_checked += 1;
                    if !(self.v(m, n) < 0 && self.v(pm, pn) < 0) {
                        c.pr2_violations += 1;
                    }
                }
            }
        }
        for i in 1..=d {
            for j in i..i + d {
                let ch = self.psi_chain_unchecked(i, j);
                c.chains_checked += 1;
                let monotone = ch.steps.windows(2).all(|w| w[1] < w[0]) && ch.steps.iter().all(|&x| x >= i && x <= j);
                if !monotone {
                    c.monotone_violations += 1;
                }
            }
        }
        c
    }

    /// Walks the route from `c_{x-1}+1` to `c_{j+1}-1`. The ψ-chain blocks
    /// `[c_{ψ_k}, c_{ψ_{k-1}-1}]` (with `ψ_0 = j+1`) enter as single terms
    /// `μ(block)`, every other point `p` as `-b_p`; the route is folded from
    /// the far end as `acc <- 1 + term * acc`.
    pub fn eta(&self, b: &BSequence<f64>, x: i64, j: i64, chain: &[i64]) -> f64 {
        let mut blocks: Vec<(i64, i64)> = Vec::with_capacity(chain.len());
        let mut prev = j + 1;
        for &pk in chain {
            blocks.push((self.c(pk), self.c(prev - 1)));
            prev = pk;
        }
        let end = self.c(j + 1) - 1;
        let mut terms = Vec::new();
        let mut p = self.c(x - 1) + 1;
        while p <= end {
            match blocks.iter().find(|&&(s, e)| s == p && e <= end) {
                Some(&(s, e)) => {
                    terms.push(mu(s, e, b));
                    p = e + 1;
                }
                None => {
                    terms.push(-*b.get(p));
                    p += 1;
                }
            }
        }
        terms.iter().rev().fold(1.0, |acc, m| 1.0 + m * acc)
    }

    /// `ν(i, j) = μ(c_i, c_j)`, 1 when `i > j`.
    pub fn nu<T: Real>(&self, i: i64, j: i64, b: &BSequence<T>) -> Result<T> {
        self.require_delta()?;
        Ok(self.nu_unchecked(i, j, b))
    }

    /// `ν̃(i, j) = μ(c_i + 1, c_j)`.
    pub fn nu_tilde<T: Real>(&self, i: i64, j: i64, b: &BSequence<T>) -> Result<T> {
        self.require_delta()?;
        Ok(mu(self.c(i) + 1, self.c(j), b))
    }

    fn nu_unchecked<T: Real>(&self, i: i64, j: i64, b: &BSequence<T>) -> T {
        if i > j {
            T::one()
        } else {
            mu(self.c(i), self.c(j), b)
        }
    }

    /// `C_i^j`: `φ(j+1)` is absent or lies at or beyond `i + δ`.
    fn event_c(&self, i: i64, j: i64) -> bool {
        self.phi_window(j + 1).is_none_or(|f| f >= i + self.delta() as i64)
    }

    /// The four indicator-gated sums bounding `Q` from below when `δ >= 2`.
    pub fn lemma7_bound(&self, b: &BSequence<f64>) -> Result<f64> {
        let d = self.delta() as i64;
        if d < 2 {
            return Err(Error::NotApplicable(format!("δ = {d}; the bound needs δ >= 2")));
        }
        let odd = |k: i64| self.c(k).rem_euclid(2) == 1;
        let mut total = 0.0;
        for i in 1..=d {
            let a_i = odd(i);
            let a_prev = odd(i - 1);
            for j in i..i + d {
                let ch = self.psi_chain_unchecked(i, j);
                let (t, ts) = (ch.tilde, ch.tilde_star);
                if self.event_c(i, j) {
                    let x = if a_i { t } else { ts };
                    let nu = self.nu_unchecked(i, x - 1, b);
                    if nu < 0.0 {
                        total += nu * self.eta(b, x, j, &ch.steps);
                    }
                }
                if j <= i + d - 2 && self.event_c(i - 1, j) {
                    let x = if a_prev { ts } else { t };
                    if self.nu_unchecked(i - 1, x - 1, b) > 0.0 {
                        total += mu(self.c(i - 1) + 1, self.c(x - 1), b) * self.eta(b, x, j, &ch.steps);
                    }
                }
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PsiChain {
    /// `ψ_1, ψ_2, …`, strictly decreasing and all `>= i`.
    pub steps: Vec<i64>,
    /// Last chain value, or `j + 1` when the chain is empty.
    pub tilde: i64,
    /// `tilde` when it exceeds `i`, otherwise `φ(i) + 1`.
    pub tilde_star: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhiPsiEntry {
    pub i: i64,
    pub j: i64,
    pub phi: Option<i64>,
    pub psi: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PropertyCounts {
    pub chain_rule_checked: usize,
    pub chain_rule_violations: usize,
    pub pairs_checked: usize,
    pub existence_violations: usize,
    pub inverse_violations: usize,
    pub pr2_checked: usize,
    pub pr2_violations: usize,
    pub chains_checked: usize,
    pub monotone_violations: usize,
}

impl PropertyCounts {
    pub fn violations(&self) -> usize {
        self.chain_rule_violations
            + self.existence_violations
            + self.inverse_violations
            + self.pr2_violations
            + self.monotone_violations
    }

    pub fn add(&mut self, o: &PropertyCounts) {
        self.chain_rule_checked += o.chain_rule_checked;
        self.chain_rule_violations += o.chain_rule_violations;
        self.pairs_checked += o.pairs_checked;
        self.existence_violations += o.existence_violations;
        self.inverse_violations += o.inverse_violations;
        self.pr2_checked += o.pr2_checked;
        self.pr2_violations += o.pr2_violations;
        self.chains_checked += o.chains_checked;
        self.monotone_violations += o.monotone_violations;
    }
}

pub fn sign_profile(rl: &RunLengthForm) -> SignProfile {
    SignProfile::new(rl)
}

/// `1 - x_1(1 - x_2(… (1 - x_k)))`.
fn nest(xs: impl DoubleEndedIterator<Item = f64>) -> f64 {
    xs.rev().fold(1.0, |acc, x| 1.0 - x * acc)
}

/// Splits `Q` into `h` terms that are each visibly positive when `δ <= 1`.
///
/// With no negative points, `Q = Σ_l (1 - b_{2l}) nest(b_{2l+1} … b_{2l+2h-1})`.
/// With one negative point `m` (shifted to an odd index), each term becomes
/// `(1 - b_{2l}) [nest(b_{2l+1} … b_{m-1}) + |Π_{2l+1}^{m} b| nest(b_{m+1} … b_{2l+2h-1})]`.
pub fn small_delta_terms(b: &BSequence<f64>) -> Result<Vec<f64>> {
    let len = b.len() as i64;
    let h = len / 2;
    let negs: Vec<i64> = (1..=len).filter(|&k| *b.get(k) < 0.0).collect();
    match negs.len() {
        0 => Ok((1..=h)
            .map(|l| (1.0 - b.get(2 * l)) * nest((2 * l + 1..2 * l + 2 * h).map(|k| *b.get(k))))
            .collect()),
        1 => {
            let mut m = negs[0];
            let shift = if m % 2 == 0 { 1 } else { 0 };
            m -= shift;
            let g = |k: i64| *b.get(k + shift);
            Ok((1..=h)
                .map(|l| {
                    let lo = 2 * l + 1;
                    let hi = 2 * l + 2 * h - 1;
                    let mut ms = m;
                    while ms < lo {
                        ms += len;
                    }
                    while ms > hi {
                        ms -= len;
                    }
                    let prod: f64 = (lo..=ms).map(g).product();
                    (1.0 - g(2 * l))
                        * (nest((lo..ms).map(g)) + prod.abs() * nest((ms + 1..=hi).map(g)))
                })
                .collect())
        }
        d => Err(Error::NotApplicable(format!("δ = {d}; decomposition covers δ <= 1"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GridPoint {
    #[serde(rename = "qA")]
    pub q_a: f64,
    #[serde(rename = "qB")]
    pub q_b: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PositivityReport {
    pub a: RunLengthForm,
    pub delta: usize,
    pub grid_points: usize,
    #[serde(rename = "minQ")]
    pub min_q: f64,
    pub argmin: GridPoint,
    /// Grid points with `Q <= 0`; any entry would contradict positivity.
    pub violations: Vec<GridPoint>,
    /// Smallest `Q - bound` when `δ >= 2`.
    pub min_bound_margin: Option<f64>,
    pub bound_violations: Vec<GridPoint>,
    /// Points where a small-δ decomposition failed to reproduce `Q` or had a non-positive term.
    pub decomposition_failures: Vec<GridPoint>,
}

/// One evaluated grid point of a scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub pattern: String,
    pub delta: usize,
    #[serde(rename = "qA")]
    pub q_a: f64,
    #[serde(rename = "qB")]
    pub q_b: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub bound: Option<f64>,
    pub margin: Option<f64>,
}

fn evaluate_point(
    rl: &RunLengthForm,
    profile: &SignProfile,
    q_a: f64,
    q_b: f64,
    with_bound: bool,
) -> Result<(ScanRow, bool)> {
    let b = rl.b_sequence(q_a, q_b)?;
    let q = structure_q(&b);
    let (bound, decomposition_ok) = if profile.delta() >= 2 {
        let bound = if with_bound { Some(profile.lemma7_bound(&b)?) } else { None };
        (bound, true)
    } else {
        let terms = small_delta_terms(&b)?;
        let sum: f64 = terms.iter().sum();
        (None, terms.iter().all(|&t| t > 0.0) && (sum - q).abs() <= DECOMPOSITION_TOL)
    };
    Ok((
        ScanRow {
            pattern: rl.to_string(),
            delta: profile.delta(),
            q_a,
            q_b,
            q,
            bound,
            margin: bound.map(|bd| q - bd),
        },
        decomposition_ok,
    ))
}

/// Evaluates `Q` (and its lower bound or small-δ decomposition) on every grid point.
pub fn verify_q_positive(rl: &RunLengthForm, grid: &Grid) -> Result<PositivityReport> {
    let profile = SignProfile::new(rl);
    let mut report: Option<PositivityReport> = None;
    for (q_a, q_b) in grid.pairs() {
        let (row, decomposition_ok) = evaluate_point(rl, &profile, q_a, q_b, true)?;
        let point = GridPoint { q_a, q_b, q: row.q };
        let r = report.get_or_insert_with(|| PositivityReport {
            a: rl.clone(),
            delta: profile.delta(),
            grid_points: 0,
            min_q: f64::INFINITY,
            argmin: point.clone(),
            violations: Vec::new(),
            min_bound_margin: None,
            bound_violations: Vec::new(),
            decomposition_failures: Vec::new(),
        });
        r.grid_points += 1;
        if row.q < r.min_q {
            r.min_q = row.q;
            r.argmin = point.clone();
        }
        if row.q <= 0.0 {
            r.violations.push(point.clone());
        }
        if let Some(margin) = row.margin {
            if r.min_bound_margin.is_none_or(|m| margin < m) {
                r.min_bound_margin = Some(margin);
            }
            if margin <= 0.0 {
                r.bound_violations.push(point.clone());
            }
        }
        if !decomposition_ok {
            r.decomposition_failures.push(point);
        }
    }
    Ok(report.expect("grids are nonempty"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanPoint {
    pub pattern: String,
    #[serde(rename = "qA")]
    pub q_a: f64,
    #[serde(rename = "qB")]
    pub q_b: f64,
    pub value: f64,
}

/// Aggregate of a scan over many patterns.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanSummary {
    pub pattern_count: usize,
    pub grid_points: usize,
    #[serde(rename = "minQ")]
    pub min_q: f64,
    pub argmin: Option<ScanPoint>,
    pub violations: Vec<ScanPoint>,
    pub bound_points: usize,
    pub min_bound_margin: Option<f64>,
    pub argmin_bound_margin: Option<ScanPoint>,
    pub bound_violations: Vec<ScanPoint>,
    pub decomposition_points: usize,
    pub decomposition_failures: Vec<ScanPoint>,
    pub properties: PropertyCounts,
}

impl ScanSummary {
    pub fn total_violations(&self) -> usize {
        self.violations.len()
            + self.bound_violations.len()
            + self.decomposition_failures.len()
            + self.properties.violations()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanOptions {
    /// Evaluate the lower bound at every point with `δ >= 2`.
    pub bound: bool,
    /// Check the φ/ψ properties of every profile.
    pub properties: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            bound: true,
            properties: true,
        }
    }
}

/// Patterns handled per parallel batch; rows are handed to the sink batch by batch.
const SCAN_BATCH: usize = 256;

/// Scans every pattern over the grid in parallel. Rows reach `sink` in
/// pattern order then grid order, and the minimum keeps the first occurrence,
/// so the summary does not depend on the thread count.
pub fn scan(
    patterns: &[RunLengthForm],
    grid: &Grid,
    opts: ScanOptions,
    mut sink: impl FnMut(&ScanRow),
) -> Result<ScanSummary> {
    let mut s = ScanSummary {
        pattern_count: patterns.len(),
        grid_points: 0,
        min_q: f64::INFINITY,
        argmin: None,
        violations: Vec::new(),
        bound_points: 0,
        min_bound_margin: None,
        argmin_bound_margin: None,
        bound_violations: Vec::new(),
        decomposition_points: 0,
        decomposition_failures: Vec::new(),
        properties: PropertyCounts::default(),
    };
    for batch in patterns.chunks(SCAN_BATCH) {
        let results: Vec<Result<(PropertyCounts, Vec<(ScanRow, bool)>)>> = batch
            .par_iter()
            .map(|rl| {
                let profile = SignProfile::new(rl);
                let rows = grid
                    .pairs()
                    .map(|(qa, qb)| evaluate_point(rl, &profile, qa, qb, opts.bound))
                    .collect::<Result<Vec<_>>>()?;
                let props = if opts.properties {
                    profile.check_properties()
                } else {
                    PropertyCounts::default()
                };
                Ok((props, rows))
            })
            .collect();
        for res in results {
            let (props, rows) = res?;
            s.properties.add(&props);
            for (row, decomposition_ok) in rows {
                sink(&row);
                s.grid_points += 1;
                let at = |value: f64| ScanPoint {
                    pattern: row.pattern.clone(),
                    q_a: row.q_a,
                    q_b: row.q_b,
                    value,
                };
                if row.q < s.min_q {
                    s.min_q = row.q;
                    s.argmin = Some(at(row.q));
                }
                if row.q <= 0.0 {
                    s.violations.push(at(row.q));
                }
                match row.margin {
                    _ if row.delta >= 2 && row.margin.is_none() => {}
                    Some(margin) => {
                        s.bound_points += 1;
                        if s.min_bound_margin.is_none_or(|m| margin < m) {
                            s.min_bound_margin = Some(margin);
                            s.argmin_bound_margin = Some(at(margin));
                        }
                        if margin <= 0.0 {
                            s.bound_violations.push(at(margin));
                        }
                    }
                    None => {
                        s.decomposition_points += 1;
                        if !decomposition_ok {
                            s.decomposition_failures.push(at(row.q));
                        }
                    }
                }
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::canonical_patterns_up_to;
    use proptest::prelude::*;

    fn rl(a: &[usize]) -> RunLengthForm {
        RunLengthForm::new(a.to_vec()).unwrap()
    }

    #[test]
    fn profiles() {
        let p = SignProfile::new(&rl(&[1, 1, 1, 2, 1, 3]));
        assert_eq!(p.signs(), [-1, -1, -1, 1, -1, -1]);
        assert_eq!(p.negative_points(), &[1, 2, 3, 5, 6]);
        assert_eq!(p.delta(), 5);
        assert_eq!(p.c(6), 7);
        assert_eq!(p.c(0), 0);
        assert_eq!(SignProfile::new(&rl(&[2, 2])).delta(), 0);
        assert_eq!(SignProfile::new(&rl(&[1, 1])).negative_points(), &[1, 2]);
    }

    #[test]
    fn mu_values() {
        let (x, y) = (0.3, 0.6);
        let b = rl(&[1, 1]).b_sequence(x, y).unwrap();
        assert_eq!(mu(2, 1, &b), 1.0);
        assert_eq!(mu(1, 1, &b), x);
        assert!((mu(1, 2, &b) - x * y).abs() < 1e-16);
    }

    #[test]
    fn v_and_nu() {
        let a = rl(&[1, 1, 1, 2, 1, 3]);
        let p = SignProfile::new(&a);
        let b = a.b_sequence(0.3, 0.8).unwrap();
        assert_eq!(p.v_sign(1, 2).unwrap(), 1);
        assert_eq!(p.v_sign(3, 4).unwrap(), -1);
        assert!(p.nu(1, 2, &b).unwrap() > 0.0);
        assert!(p.nu(2, 2, &b).unwrap() > 0.0);
        assert!(p.v_sign(1, 6).is_err());
        let one = SignProfile::new(&rl(&[1, 2]));
        assert_eq!(one.nu(1, 1, &b), Err(Error::NoNegativePoints { delta: 1 }));
    }

    #[test]
    fn phi_psi_basics() {
        // c = (1, 2, 3, 5, 6): v(3, 4) < 0 with odd gap, so 3 and 4 match.
        let p = SignProfile::new(&rl(&[1, 1, 1, 2, 1, 3]));
        assert_eq!(p.phi(3, 4).unwrap(), Some(4));
        assert_eq!(p.psi(4, 3).unwrap(), Some(3));
        assert!(matches!(p.phi(1, 2), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn psi_chain_empty_and_star() {
        let p = SignProfile::new(&rl(&[1, 1, 1, 2, 1, 3]));
        let ch = p.psi_chain(1, 1).unwrap();
        assert!(ch.steps.is_empty());
        assert_eq!(ch.tilde, 2);
        let ch = p.psi_chain(3, 4).unwrap();
        assert_eq!(ch.steps, [3]);
        assert_eq!(ch.tilde, 3);
        assert_eq!(ch.tilde_star, p.phi_ext(3) + 1);
    }

    #[test]
    fn properties_hold_up_to_length_10() {
        let mut total = PropertyCounts::default();
        for a in canonical_patterns_up_to(10) {
            total.add(&SignProfile::new(&a).check_properties());
        }
        assert!(total.pairs_checked > 0 && total.pr2_checked > 0);
        assert_eq!(total.violations(), 0, "{total:?}");
    }

    #[test]
    fn lemma7_not_applicable_for_small_delta() {
        let a = rl(&[1, 2]);
        let b = a.b_sequence(0.4, 0.6).unwrap();
        assert!(matches!(SignProfile::new(&a).lemma7_bound(&b), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn small_delta_decompositions() {
        for a in [rl(&[2, 2]), rl(&[2, 4, 2, 2]), rl(&[1, 2]), rl(&[2, 3, 4, 2]), rl(&[2, 2, 2, 1, 4, 2])] {
            for (qa, qb) in [(0.1, 0.9), (0.5, 0.5), (0.95, 0.99)] {
                let b = a.b_sequence(qa, qb).unwrap();
                let terms = small_delta_terms(&b).unwrap();
                assert!(terms.iter().all(|&t| t > 0.0));
                let sum: f64 = terms.iter().sum();
                assert!((sum - structure_q(&b)).abs() < 1e-13, "{a}");
            }
        }
    }

    #[test]
    fn worked_pattern_positive() {
        let g: Grid = "0.05:0.95:0.05".parse().unwrap();
        let r = verify_q_positive(&rl(&[1, 1, 1, 2, 1, 3]), &g).unwrap();
        assert_eq!(r.grid_points, 361);
        assert!(r.min_q > 0.0 && r.violations.is_empty() && r.bound_violations.is_empty());
    }

    #[test]
    fn q_tends_to_h_near_zero() {
        let a = rl(&[1, 1, 1, 2, 1, 3]);
        let q = structure_q(&a.b_sequence(1e-9, 1e-9).unwrap());
        assert!((q - 3.0).abs() < 1e-8);
    }

    #[test]
    fn scan_is_deterministic_across_pools() {
        let pats = canonical_patterns_up_to(8);
        let g: Grid = "0.1:0.9:0.4".parse().unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut rows = Vec::new();
                let s = scan(&pats, &g, ScanOptions::default(), |r| rows.push(r.clone())).unwrap();
                (s, rows)
            })
        };
        assert_eq!(run(1), run(4));
    }

    fn arb_rl() -> impl Strategy<Value = RunLengthForm> {
        prop::collection::vec(1usize..4, 2..13)
            .prop_filter("even", |v| v.len() % 2 == 0)
            .prop_map(|v| RunLengthForm::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn pr4_sign_agreement(a in arb_rl(), qa in 0.02f64..0.98, qb in 0.02f64..0.98) {
            let p = SignProfile::new(&a);
            prop_assume!(p.delta() >= 2);
            let b = a.b_sequence(qa, qb).unwrap();
            let d = p.delta() as i64;
            for i in 1..=d {
                for j in i..i + d {
                    let nu = p.nu(i, j, &b).unwrap();
                    let nut = p.nu_tilde(i, j, &b).unwrap();
                    let m = mu(p.c(i), p.c(j) - 1, &b);
                    prop_assert_eq!(nu > 0.0, nut > 0.0);
                    prop_assert_eq!(nu > 0.0, m > 0.0);
                    if j > i {
                        prop_assert_eq!(nu > 0.0, p.v_sign(i, j).unwrap() > 0);
                    }
                }
            }
        }

        #[test]
        fn pr4_iterative_polynomial_sign(
            core in prop::collection::vec(-0.99f64..0.99, 1..6),
            left in prop::collection::vec(0.001f64..0.999, 0..6),
            right in prop::collection::vec(0.001f64..0.999, 0..6),
        ) {
            prop_assume!(core.iter().all(|x| x.abs() > 1e-3));
            let mut vals = left.clone();
            vals.extend(&core);
            vals.extend(&right);
            let b = BSequence::from_values(vals);
            let i = left.len() as i64 + 1;
            let j = i + core.len() as i64 - 1;
            let m = mu(i, j, &b);
            let right_poly = nest((j + 1..=j + right.len() as i64).map(|k| *b.get(k)));
            let left_poly = nest((1..i).rev().map(|k| *b.get(k)));
            prop_assert_eq!((m * right_poly) > 0.0, m > 0.0);
            prop_assert_eq!((m * left_poly) > 0.0, m > 0.0);
            prop_assert_eq!((m * left_poly * right_poly) > 0.0, m > 0.0);
        }

        #[test]
        fn q_exceeds_bound(a in arb_rl(), qa in 0.02f64..0.98, qb in 0.02f64..0.98) {
            let p = SignProfile::new(&a);
            let b = a.b_sequence(qa, qb).unwrap();
            let q = structure_q(&b);
            prop_assert!(q > 0.0);
            if p.delta() >= 2 {
                prop_assert!(q > p.lemma7_bound(&b).unwrap());
            }
        }
    }
}
