//! Closed forms for `J = 2` pattern play and for random mixtures.
//!
//! Every function is generic over [`Real`] so the identities between routes
//! can be checked in `f64` and certified exactly in `BigRational`.

use serde::Serialize;

use crate::chain::oracle_rd;
use crate::error::{Error, Result};
use crate::pattern::{BSequence, Pattern, RunLengthForm};
use crate::scalar::{agree, check_prob, int, neg_one_pow, powi, to_f64, Real};

/// Agreement demanded by [`fair_payout`]'s postcondition.
pub const FAIRNESS_TOL: f64 = 1e-14;

/// `p° = (1-q) q^J / (1 - q^J)`, the single-arm Futurity rate.
pub fn futurity_rate_single<T: Real>(q: T, threshold: usize) -> Result<T> {
    check_prob("q", &q)?;
    if threshold < 2 {
        return Err(Error::InvalidMachine(format!("J = {threshold} must be at least 2")));
    }
    let qj = powi(&q, threshold);
    Ok((T::one() - q) * qj.clone() / (T::one() - qj))
}

/// Win payout `u = (3-2p)/(2-p)` that makes an arm fair when `J = 2`.
pub fn fair_payout<T: Real>(p: T) -> Result<T> {
    check_prob("p", &p)?;
    let two = int::<T>(2);
    let u = (int::<T>(3) - two.clone() * p.clone()) / (two.clone() - p.clone());
    let ret = p.clone() * u.clone() + two * futurity_rate_single(T::one() - p, 2)?;
    if !agree(&ret, &T::one(), FAIRNESS_TOL) {
        return Err(Error::InternalMismatch {
            what: "fair payout",
            discrepancy: to_f64(&(ret - T::one())),
        });
    }
    Ok(u)
}

/// `q_A^r q_B^s`.
fn period_product<T: Real>(r: usize, s: usize, q_a: &T, q_b: &T) -> T {
    powi(q_a, r) * powi(q_b, s)
}

/// Pattern Futurity rate
/// `p°_D = 1/(r+s) Σ_k Σ_j p_j Π_{i=j+1}^{j+2k} q_i / (1 - (q_A^r q_B^s)^2)`.
pub fn p_circ_d<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<T> {
    let q = p.q_sequence(q_a.clone(), q_b.clone())?;
    let n = p.len() as i64;
    let big_p = period_product(p.r(), p.s(), &q_a, &q_b);
    let mut total = T::zero();
    for j in 1..=n {
        let pj = T::one() - q.get(j).clone();
        let mut prod = T::one();
        let mut inner = T::zero();
        for k in 1..=n {
            prod = prod * q.get(j + 2 * k - 1).clone() * q.get(j + 2 * k).clone();
            inner = inner + prod.clone();
        }
        total = total + pj * inner;
    }
    Ok(total / (int::<T>(n) * (T::one() - big_p.clone() * big_p)))
}

/// The same rate with every full period of the product factored out as a
/// power of `q_A^r q_B^s` (upper index `j + 2k - (r+s)⌊2k/(r+s)⌋`).
pub fn p_circ_d_floor<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<T> {
    let q = p.q_sequence(q_a.clone(), q_b.clone())?;
    let n = p.len() as i64;
    let big_p = period_product(p.r(), p.s(), &q_a, &q_b);
    let mut total = T::zero();
    for k in 1..=n {
        let wraps = (2 * k) / n;
        let mut inner = T::zero();
        for j in 1..=n {
            let pj = T::one() - q.get(j).clone();
            inner = inner + pj * q.product(j + 1, j + 2 * k - n * wraps);
        }
        total = total + inner * powi(&big_p, wraps as usize);
    }
    Ok(total / (int::<T>(n) * (T::one() - big_p.clone() * big_p)))
}

/// `p°_D < (r p°_A + s p°_B)/(r+s)`: the pattern loses for the player.
pub fn parrondo_effect_present<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<bool> {
    let pd = p_circ_d(p, q_a.clone(), q_b.clone())?;
    let weighted = (int::<T>(p.r() as i64) * futurity_rate_single(q_a, 2)?
        + int::<T>(p.s() as i64) * futurity_rate_single(q_b, 2)?)
        / int::<T>(p.len() as i64);
    Ok(pd < weighted)
}

/// `R_D = 2(r/(r+s) p°_A + s/(r+s) p°_B - p°_D)` with the closed-form `p°_D`.
pub fn r_d_definition<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<T> {
    let pd = p_circ_d(p, q_a.clone(), q_b.clone())?;
    let n = int::<T>(p.len() as i64);
    let weighted = (int::<T>(p.r() as i64) * futurity_rate_single(q_a, 2)?
        + int::<T>(p.s() as i64) * futurity_rate_single(q_b, 2)?)
        / n;
    Ok(int::<T>(2) * (weighted - pd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma3<T = f64> {
    pub r0: T,
    pub q0: T,
    pub s0: T,
    pub r_d: T,
}

/// `R_D = R_0 - 2 Q_0 S_0`.
pub fn lemma3<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<Lemma3<T>> {
    let q = p.q_sequence(q_a.clone(), q_b.clone())?;
    let (r, s, n) = (p.r(), p.s(), p.len());
    let big_p = period_product(r, s, &q_a, &q_b);
    let sign_n = neg_one_pow::<T>(n as i64);
    let nt = int::<T>(n as i64);
    let s0 = (T::one() + sign_n.clone() * big_p.clone())
        / (nt.clone() * (T::one() - big_p.clone() * big_p));
    let single = |qq: &T| qq.clone() * qq.clone() / (T::one() + qq.clone());
    let cross = int::<T>(r as i64) * powi(&q_a, r + 1) * powi(&q_b, s)
        + int::<T>(s as i64) * powi(&q_a, r) * powi(&q_b, s + 1);
    let r0 = int::<T>(2) / nt.clone()
        * (int::<T>(r as i64) * single(&q_a)
            + int::<T>(s as i64) * single(&q_b)
            + sign_n * nt * cross * s0.clone());
    let mut q0 = T::zero();
    for j in 1..=n as i64 {
        let mut prod = q.get(j).clone();
        for k in 2..=n as i64 {
            prod = prod * q.get(j + k - 1).clone();
            q0 = q0 + neg_one_pow::<T>(k) * prod.clone();
        }
    }
    let r_d = r0.clone() - int::<T>(2) * q0.clone() * s0.clone();
    Ok(Lemma3 { r0, q0, s0, r_d })
}

/// The strategy-independent factor
/// `S = (q_A-q_B)^2 (1 + (-1)^{r+s} P) / ((r+s)(1+q_A)^2(1+q_B)^2(1-P^2))`.
pub fn structure_s<T: Real>(r: usize, s: usize, q_a: T, q_b: T) -> Result<T> {
    check_prob("q_A", &q_a)?;
    check_prob("q_B", &q_b)?;
    let big_p = period_product(r, s, &q_a, &q_b);
    let diff = q_a.clone() - q_b.clone();
    let one_a = T::one() + q_a;
    let one_b = T::one() + q_b;
    Ok(diff.clone() * diff * (T::one() + neg_one_pow::<T>((r + s) as i64) * big_p.clone())
        / (int::<T>((r + s) as i64)
            * one_a.clone()
            * one_a
            * one_b.clone()
            * one_b
            * (T::one() - big_p.clone() * big_p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma4<T = f64> {
    pub q1: T,
    pub s: T,
    pub r_d: T,
}

/// Single-block pattern `A^r B^s`: `R = 2 (1-(-1)^r q_A^r)(1-(-1)^s q_B^s) S`.
pub fn lemma4<T: Real>(r: usize, s: usize, q_a: T, q_b: T) -> Result<Lemma4<T>> {
    if r == 0 || s == 0 {
        return Err(Error::SingleArmPattern);
    }
    let s_val = structure_s(r, s, q_a.clone(), q_b.clone())?;
    let q1 = (T::one() - neg_one_pow::<T>(r as i64) * powi(&q_a, r))
        * (T::one() - neg_one_pow::<T>(s as i64) * powi(&q_b, s));
    let r_d = int::<T>(2) * q1.clone() * s_val.clone();
    Ok(Lemma4 { q1, s: s_val, r_d })
}

/// Structure function
/// `Q = h + Σ_{m=1}^{2h} Σ_{j=1}^{2h-1} (-1)^j Π_{i=m}^{m+j-1} b_i + h Π b_i`.
pub fn structure_q<T: Real>(b: &BSequence<T>) -> T {
    let len = b.len() as i64;
    let h = int::<T>(len / 2);
    let mut q = h.clone();
    for m in 1..=len {
        let mut prod = T::one();
        for j in 1..len {
            prod = prod * b.get(m + j - 1).clone();
            q = q + neg_one_pow::<T>(j) * prod.clone();
        }
    }
    q + h * b.product(1, len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2<T = f64> {
    pub q: T,
    pub s: T,
    pub r_d: T,
}

/// `R_D = 2 Q S`.
pub fn theorem2<T: Real>(rl: &RunLengthForm, q_a: T, q_b: T) -> Result<Theorem2<T>> {
    let b = rl.b_sequence(q_a.clone(), q_b.clone())?;
    let q = structure_q(&b);
    let s = structure_s(rl.r(), rl.s(), q_a, q_b)?;
    let r_d = int::<T>(2) * q.clone() * s.clone();
    Ok(Theorem2 { q, s, r_d })
}

/// Exchanges the B-run of pair `k` with the A-run of pair `k+1` (cyclically),
/// which merges the two pairs, and re-canonicalizes. `k = h-1` exchanges
/// segments `2h-2` and `2h-1`.
pub fn adjacent_swap(rl: &RunLengthForm, k: usize) -> Result<RunLengthForm> {
    let h = rl.h();
    if h < 2 {
        return Err(Error::SwapUndefined { h });
    }
    if k == 0 || k > h {
        return Err(Error::InvalidSwapIndex { k, h });
    }
    let rot = rl.rotate_pairs((k + 1) % h);
    Ok(merge_last_pairs(&rot).canonical())
}

/// `(…, r_{h-1}, s_{h-1}, r_h, s_h) -> (…, r_{h-1}+r_h, s_{h-1}+s_h)`.
fn merge_last_pairs(rl: &RunLengthForm) -> RunLengthForm {
    let a = rl.runs();
    let n = a.len();
    let mut out = a[..n - 4].to_vec();
    out.push(a[n - 4] + a[n - 2]);
    out.push(a[n - 3] + a[n - 1]);
    RunLengthForm::new(out).expect("merging keeps runs positive")
}

/// `R_D - R_D'` for the swap at segments `2h-2`, `2h-1` of `rl` as written:
/// `2S(1-b_{2h-2})(1-b_{2h-1}) Σ_{j=0}^{2h-3} (-1)^j (Π_{i=0}^{j-1} b_i + Π_{i=j}^{2h-3} b_i)`
/// with `b_0 = b_{2h}`.
pub fn lemma5_diff<T: Real>(rl: &RunLengthForm, q_a: T, q_b: T) -> Result<T> {
    let h = rl.h();
    if h < 2 {
        return Err(Error::SwapUndefined { h });
    }
    let b = rl.b_sequence(q_a.clone(), q_b.clone())?;
    let s = structure_s(rl.r(), rl.s(), q_a, q_b)?;
    let top = 2 * h as i64 - 3;
    let mut sum = T::zero();
    for j in 0..=top {
        sum = sum + neg_one_pow::<T>(j) * (b.product(0, j - 1) + b.product(j, top));
    }
    Ok(int::<T>(2)
        * s
        * (T::one() - b.get(top + 1).clone())
        * (T::one() - b.get(top + 2).clone())
        * sum)
}

/// [`lemma5_diff`] for the swap [`adjacent_swap`]`(rl, k)`, evaluated on the
/// rotation that brings pair `k` into position `h-1`.
pub fn lemma5_diff_at<T: Real>(rl: &RunLengthForm, k: usize, q_a: T, q_b: T) -> Result<T> {
    let h = rl.h();
    if h < 2 {
        return Err(Error::SwapUndefined { h });
    }
    if k == 0 || k > h {
        return Err(Error::InvalidSwapIndex { k, h });
    }
    lemma5_diff(&rl.rotate_pairs((k + 1) % h), q_a, q_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeStep<T = f64> {
    pub from: RunLengthForm,
    pub swap_index: usize,
    pub to: RunLengthForm,
    pub diff: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telescope<T = f64> {
    pub steps: Vec<TelescopeStep<T>>,
    /// The `h = 1` pattern the chain ends at.
    pub base: RunLengthForm,
    pub base_r: T,
    /// `base_r` plus every step difference; reproduces `R_D` of the start.
    pub total: T,
}

/// Swaps down to `h = 1` at position `h-1` each time, summing the differences.
pub fn telescope<T: Real>(rl: &RunLengthForm, q_a: T, q_b: T) -> Result<Telescope<T>> {
    telescope_with(rl, q_a, q_b, |h| h - 1)
}

/// Like [`telescope`], with `choose(h)` picking the swap index at each step.
pub fn telescope_with<T: Real>(
    rl: &RunLengthForm,
    q_a: T,
    q_b: T,
    mut choose: impl FnMut(usize) -> usize,
) -> Result<Telescope<T>> {
    let mut steps = Vec::new();
    let mut cur = rl.clone();
    let mut total = T::zero();
    while cur.h() > 1 {
        let k = choose(cur.h());
        let diff = lemma5_diff_at(&cur, k, q_a.clone(), q_b.clone())?;
        let to = adjacent_swap(&cur, k)?;
        total = total + diff.clone();
        steps.push(TelescopeStep {
            from: cur,
            swap_index: k,
            to: to.clone(),
            diff,
        });
        cur = to;
    }
    let base_r = lemma4(cur.r(), cur.s(), q_a, q_b)?.r_d;
    total = total + base_r.clone();
    Ok(Telescope {
        steps,
        base: cur,
        base_r,
        total,
    })
}

/// `f(z) = J(1-z) z^J / (1 - z^J)`, i.e. `J` times the single-arm Futurity rate.
pub fn mixture_f<T: Real>(z: T, threshold: usize) -> Result<T> {
    Ok(int::<T>(threshold as i64) * futurity_rate_single(z, threshold)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MixtureReport<T = f64> {
    pub gamma: T,
    #[serde(rename = "R_C")]
    pub r_c: T,
    #[serde(rename = "f_qA")]
    pub f_qa: T,
    #[serde(rename = "f_qB")]
    pub f_qb: T,
    pub f_mix: T,
}

/// `R_C = γ f(q_A) + (1-γ) f(q_B) - f(γ q_A + (1-γ) q_B)`.
pub fn mixture_profit<T: Real>(gamma: T, q_a: T, q_b: T, threshold: usize) -> Result<MixtureReport<T>> {
    check_prob("gamma", &gamma)?;
    let f_qa = mixture_f(q_a.clone(), threshold)?;
    let f_qb = mixture_f(q_b.clone(), threshold)?;
    let mix = gamma.clone() * q_a + (T::one() - gamma.clone()) * q_b;
    let f_mix = mixture_f(mix, threshold)?;
    let r_c = gamma.clone() * f_qa.clone() + (T::one() - gamma.clone()) * f_qb.clone() - f_mix.clone();
    Ok(MixtureReport {
        gamma,
        r_c,
        f_qa,
        f_qb,
        f_mix,
    })
}

/// `R_D` by every available route.
#[derive(Debug, Clone, PartialEq)]
pub struct Routes<T = f64> {
    pub definition: T,
    pub lemma3: T,
    pub theorem2: T,
    /// Present only for single-block patterns (`h = 1`).
    pub lemma4: Option<T>,
    pub oracle: T,
}

impl<T: Real> Routes<T> {
    pub fn values(&self) -> Vec<&T> {
        let mut v = vec![&self.definition, &self.lemma3, &self.theorem2, &self.oracle];
        if let Some(l4) = &self.lemma4 {
            v.push(l4);
        }
        v
    }

    /// Largest pairwise gap between routes.
    pub fn max_discrepancy(&self) -> T {
        let v = self.values();
        let mut worst = T::zero();
        for (k, a) in v.iter().enumerate() {
            for b in &v[k + 1..] {
                let d = ((*a).clone() - (*b).clone()).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

pub fn routes<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<Routes<T>> {
    let rl = p.canonicalize();
    let lemma4 = if rl.h() == 1 {
        Some(lemma4(rl.r(), rl.s(), q_a.clone(), q_b.clone())?.r_d)
    } else {
        None
    };
    Ok(Routes {
        definition: r_d_definition(p, q_a.clone(), q_b.clone())?,
        lemma3: lemma3(p, q_a.clone(), q_b.clone())?.r_d,
        theorem2: theorem2(&rl, q_a.clone(), q_b.clone())?.r_d,
        lemma4,
        oracle: oracle_rd(p, q_a, q_b)?,
    })
}

/// Casino profit per coup for one pattern and arm pair, by every route.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfitReport {
    pub pattern: String,
    pub a: Vec<usize>,
    pub r: usize,
    pub s: usize,
    pub h: usize,
    #[serde(rename = "qA")]
    pub q_a: f64,
    #[serde(rename = "qB")]
    pub q_b: f64,
    #[serde(rename = "pCircD")]
    pub p_circ_d: f64,
    #[serde(rename = "R_def")]
    pub r_def: f64,
    #[serde(rename = "R_lemma3")]
    pub r_lemma3: f64,
    #[serde(rename = "R_theorem2")]
    pub r_theorem2: f64,
    #[serde(rename = "R_lemma4")]
    pub r_lemma4: Option<f64>,
    #[serde(rename = "R_oracle")]
    pub r_oracle: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "S")]
    pub s_factor: f64,
    #[serde(rename = "maxRouteDiscrepancy")]
    pub max_route_discrepancy: f64,
    #[serde(rename = "pCircA")]
    pub p_circ_a: f64,
    #[serde(rename = "pCircB")]
    pub p_circ_b: f64,
    #[serde(rename = "pCircDFloor")]
    pub p_circ_d_floor: f64,
    #[serde(rename = "Q0")]
    pub q0: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "Q1")]
    pub q1: Option<f64>,
}

impl ProfitReport {
    /// Every route as `(name, value)`.
    pub fn route_values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("R_def", self.r_def),
            ("R_lemma3", self.r_lemma3),
            ("R_theorem2", self.r_theorem2),
            ("R_oracle", self.r_oracle),
        ];
        if let Some(x) = self.r_lemma4 {
            v.push(("R_lemma4", x));
        }
        v
    }
}

pub fn analyze(p: &Pattern, q_a: f64, q_b: f64) -> Result<ProfitReport> {
    let rl = p.canonicalize();
    let routes = routes(p, q_a, q_b)?;
    let t2 = theorem2(&rl, q_a, q_b)?;
    let l3 = lemma3(p, q_a, q_b)?;
    let q1 = if rl.h() == 1 {
        Some(lemma4(rl.r(), rl.s(), q_a, q_b)?.q1)
    } else {
        None
    };
    Ok(ProfitReport {
        pattern: p.to_string(),
        a: rl.runs().to_vec(),
        r: p.r(),
        s: p.s(),
        h: rl.h(),
        q_a,
        q_b,
        p_circ_d: p_circ_d(p, q_a, q_b)?,
        r_def: routes.definition,
        r_lemma3: routes.lemma3,
        r_theorem2: routes.theorem2,
        r_lemma4: routes.lemma4,
        r_oracle: routes.oracle,
        q: t2.q,
        s_factor: t2.s,
        max_route_discrepancy: routes.max_discrepancy(),
        p_circ_a: futurity_rate_single(q_a, 2)?,
        p_circ_b: futurity_rate_single(q_b, 2)?,
        p_circ_d_floor: p_circ_d_floor(p, q_a, q_b)?,
        q0: l3.q0,
        s0: l3.s0,
        r0: l3.r0,
        q1,
    })
}
