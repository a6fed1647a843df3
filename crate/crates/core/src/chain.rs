//! The generalized one-armed machine as a finite Markov chain on
//! (cam position, consecutive-loss pointer), and the brute-force `R_D` oracle.
//!
//! States are ordered `(i, j)` lexicographically with `i` major, so state
//! `(i, j)` has index `i * J + j`.

use crate::closed_form::futurity_rate_single;
use crate::error::{Error, Result};
use crate::pattern::Pattern;
use crate::scalar::{agree, check_prob, int, to_f64, Real};

/// Largest state space the dense solver accepts.
pub const MAX_STATES: usize = 4096;

/// Agreement required between the two Futurity-rate routes.
pub const RATE_ROUTE_TOL: f64 = 1e-12;

/// Residual bound on `πP - π` accepted from the linear solve.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams<T = f64> {
    cam_positions: usize,
    threshold: usize,
    win_probs: Vec<T>,
}

impl<T: Real> MachineParams<T> {
    /// `cam_positions` is `I`, `threshold` is `J`; `I` must be a multiple of `J`.
    pub fn new(cam_positions: usize, threshold: usize, win_probs: Vec<T>) -> Result<Self> {
        if threshold < 2 {
            return Err(Error::InvalidMachine(format!("J = {threshold} must be at least 2")));
        }
        if cam_positions == 0 || cam_positions % threshold != 0 {
            return Err(Error::InvalidMachine(format!(
                "I = {cam_positions} is not a positive multiple of J = {threshold}"
            )));
        }
        if win_probs.len() != cam_positions {
            return Err(Error::InvalidMachine(format!(
                "{} win probabilities for {cam_positions} cam positions",
                win_probs.len()
            )));
        }
        if cam_positions * threshold > MAX_STATES {
            return Err(Error::InvalidMachine(format!(
                "I*J = {} exceeds {MAX_STATES} states",
                cam_positions * threshold
            )));
        }
        for p in &win_probs {
            check_prob("p_i", p)?;
        }
        Ok(MachineParams {
            cam_positions,
            threshold,
            win_probs,
        })
    }

    /// `I`.
    pub fn cam_positions(&self) -> usize {
        self.cam_positions
    }

    /// `J`.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// `d = I / J`.
    pub fn d(&self) -> usize {
        self.cam_positions / self.threshold
    }

    pub fn win_probs(&self) -> &[T] {
        &self.win_probs
    }

    /// `p_i` with `p_{i - mI} = p_i`.
    pub fn p(&self, i: i64) -> T {
        self.win_probs[i.rem_euclid(self.cam_positions as i64) as usize].clone()
    }

    /// `q_i = 1 - p_i`, periodic.
    pub fn q(&self, i: i64) -> T {
        T::one() - self.p(i)
    }

    pub fn n_states(&self) -> usize {
        self.cam_positions * self.threshold
    }

    /// The same machine with the cam started `k` positions later.
    pub fn rotated(&self, k: usize) -> Self {
        let mut win_probs = self.win_probs.clone();
        win_probs.rotate_left(k % self.cam_positions);
        MachineParams {
            win_probs,
            ..self.clone()
        }
    }
}

/// Dense row-stochastic matrix over the `I*J` states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T = f64> {
    cam_positions: usize,
    threshold: usize,
    entries: Vec<T>,
}

impl<T: Real> TransitionMatrix<T> {
    pub fn n_states(&self) -> usize {
        self.cam_positions * self.threshold
    }

    pub fn cam_positions(&self) -> usize {
        self.cam_positions
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn state_index(&self, i: usize, j: usize) -> usize {
        i * self.threshold + j
    }

    /// Inverse of [`Self::state_index`].
    pub fn state(&self, index: usize) -> (usize, usize) {
        (index / self.threshold, index % self.threshold)
    }

    pub fn get(&self, from: usize, to: usize) -> &T {
        &self.entries[from * self.n_states() + to]
    }

    /// Probability of moving from `(i, j)` to `(k, l)`.
    pub fn prob(&self, from: (usize, usize), to: (usize, usize)) -> &T {
        self.get(self.state_index(from.0, from.1), self.state_index(to.0, to.1))
    }

    pub fn row(&self, from: usize) -> &[T] {
        let n = self.n_states();
        &self.entries[from * n..(from + 1) * n]
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n_states())
            .map(|s| self.row(s).iter().fold(T::zero(), |acc, x| acc + x.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution<T = f64> {
    cam_positions: usize,
    threshold: usize,
    weights: Vec<T>,
}

impl<T: Real> StationaryDistribution<T> {
    /// `π(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> &T {
        &self.weights[i * self.threshold + j]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `Σ_j π(i, j)`, which is `1/I` for every cam position.
    pub fn cam_marginal(&self, i: usize) -> T {
        (0..self.threshold).fold(T::zero(), |acc, j| acc + self.weight(i, j).clone())
    }

    /// Max-norm of `πP - π`.
    pub fn residual(&self, t: &TransitionMatrix<T>) -> T {
        let n = self.weights.len();
        let mut worst = T::zero();
        for to in 0..n {
            let mut acc = -self.weights[to].clone();
            for from in 0..n {
                acc = acc + self.weights[from].clone() * t.get(from, to).clone();
            }
            let a = acc.abs();
            if a > worst {
                worst = a;
            }
        }
        worst
    }
}

/// Builds `P((i,j),(k,l))`: a win moves to `(i+1, 0)`, a loss with
/// `j <= J-2` to `(i+1, j+1)`, and pointer `J-1` always returns to 0.
pub fn build_transition<T: Real>(m: &MachineParams<T>) -> TransitionMatrix<T> {
    let (ci, cj) = (m.cam_positions, m.threshold);
    let n = ci * cj;
    let mut entries = vec![T::zero(); n * n];
    for i in 0..ci {
        let next = (i + 1) % ci;
        let p = m.win_probs[i].clone();
        let q = T::one() - p.clone();
        for j in 0..cj {
            let row = (i * cj + j) * n;
            if j + 2 <= cj {
                entries[row + next * cj] = p.clone();
                entries[row + next * cj + j + 1] = q.clone();
            } else {
                entries[row + next * cj] = T::one();
            }
        }
    }
    TransitionMatrix {
        cam_positions: ci,
        threshold: cj,
        entries,
    }
}

/// Solves `π(P - I) = 0`, `Σπ = 1` by Gaussian elimination with partial
/// pivoting; the last balance equation is replaced by the normalization.
pub fn stationary<T: Real>(t: &TransitionMatrix<T>) -> Result<StationaryDistribution<T>> {
    let n = t.n_states();
    // Row-major augmented system (P^T - I | e_n) with the last row set to ones.
    let w = n + 1;
    let mut a = vec![T::zero(); n * w];
    for r in 0..n {
        for c in 0..n {
            let mut v = t.get(c, r).clone();
            if r == c {
                v = v - T::one();
            }
            a[r * w + c] = v;
        }
    }
    for c in 0..n {
        a[(n - 1) * w + c] = T::one();
    }
    a[(n - 1) * w + n] = T::one();

    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * w + col].abs() > a[piv * w + col].abs() {
                piv = r;
            }
        }
        if a[piv * w + col].is_zero() {
            return Err(Error::SingularSystem);
        }
        if piv != col {
            for c in 0..w {
                a.swap(piv * w + c, col * w + c);
            }
        }
        let pivot = a[col * w + col].clone();
        for r in col + 1..n {
            if a[r * w + col].is_zero() {
                continue;
            }
            let factor = a[r * w + col].clone() / pivot.clone();
            for c in col..w {
                let delta = factor.clone() * a[col * w + c].clone();
                a[r * w + c] = a[r * w + c].clone() - delta;
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = a[r * w + n].clone();
        for c in r + 1..n {
            acc = acc - a[r * w + c].clone() * x[c].clone();
        }
        x[r] = acc / a[r * w + r].clone();
    }
    let pi = StationaryDistribution {
        cam_positions: t.cam_positions,
        threshold: t.threshold,
        weights: x,
    };
    let res = pi.residual(t);
    if res > T::agreement_tolerance(RESIDUAL_TOL) {
        return Err(Error::InternalMismatch {
            what: "stationary residual",
            discrepancy: to_f64(&res),
        });
    }
    Ok(pi)
}

/// `Σ_i π(i, J-1) q_i`.
pub fn futurity_rate_from_stationary<T: Real>(
    m: &MachineParams<T>,
    pi: &StationaryDistribution<T>,
) -> T {
    (0..m.cam_positions).fold(T::zero(), |acc, i| {
        acc + pi.weight(i, m.threshold - 1).clone() * m.q(i as i64)
    })
}

/// The explicit double sum
/// `1/(I(1-Π q)) Σ_i Σ_{k=1}^{d} p_{i-kJ} Π_{l=i-kJ+1}^{i} q_l`.
pub fn futurity_rate_closed<T: Real>(m: &MachineParams<T>) -> T {
    let ci = m.cam_positions as i64;
    let cj = m.threshold as i64;
    let all_q = (0..ci).fold(T::one(), |acc, l| acc * m.q(l));
    let mut total = T::zero();
    for i in 0..ci {
        // Grow the product leftwards from l = i; after kJ factors it covers (i-kJ, i].
        let mut prod = T::one();
        let mut l = i;
        for k in 1..=m.d() as i64 {
            while l > i - k * cj {
                prod = prod * m.q(l);
                l -= 1;
            }
            total = total + m.p(i - k * cj) * prod.clone();
        }
    }
    total / (int::<T>(ci) * (T::one() - all_q))
}

/// Asymptotic per-coup probability of the `J`-coin Futurity award.
///
/// Both the stationary route and the explicit double sum are evaluated; a
/// disagreement beyond `1e-12` (exactly zero for rationals) is an error.
pub fn futurity_rate<T: Real>(m: &MachineParams<T>) -> Result<T> {
    let pi = stationary(&build_transition(m))?;
    let via_pi = futurity_rate_from_stationary(m, &pi);
    let closed = futurity_rate_closed(m);
    if !agree(&via_pi, &closed, RATE_ROUTE_TOL) {
        return Err(Error::InternalMismatch {
            what: "futurity rate",
            discrepancy: to_f64(&(via_pi - closed).abs()),
        });
    }
    Ok(via_pi)
}

/// Stationary expected payout per coup when a win at cam position `i` pays
/// `payouts[i]` and the Futurity award pays `J`.
pub fn expected_payout<T: Real>(m: &MachineParams<T>, payouts: &[T]) -> Result<T> {
    if payouts.len() != m.cam_positions {
        return Err(Error::InvalidMachine(format!(
            "{} payouts for {} cam positions",
            payouts.len(),
            m.cam_positions
        )));
    }
    let pi = stationary(&build_transition(m))?;
    let jj = int::<T>(m.threshold as i64);
    let mut total = T::zero();
    for i in 0..m.cam_positions {
        let p = m.p(i as i64);
        for j in 0..m.threshold {
            let mut per = p.clone() * payouts[i].clone();
            if j + 1 == m.threshold {
                per = per + m.q(i as i64) * jj.clone();
            }
            total = total + pi.weight(i, j).clone() * per;
        }
    }
    Ok(total)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Number of cam positions used for pattern play: `2(r+s)` when `J = 2`,
/// otherwise `lcm(r+s, J)`. The latter is an oracle extension for spot checks.
pub fn pattern_cam_positions(pattern_len: usize, threshold: usize) -> usize {
    if threshold == 2 {
        2 * pattern_len
    } else {
        pattern_len / gcd(pattern_len, threshold) * threshold
    }
}

/// The one-armed machine whose cam repeats the pattern.
pub fn pattern_machine<T: Real>(
    p: &Pattern,
    q_a: T,
    q_b: T,
    threshold: usize,
) -> Result<MachineParams<T>> {
    let q = p.q_sequence(q_a, q_b)?;
    let ci = pattern_cam_positions(p.len(), threshold);
    let win_probs = (0..ci).map(|i| T::one() - q.get(i as i64 + 1).clone()).collect();
    MachineParams::new(ci, threshold, win_probs)
}

/// Brute-force `R_D = 2(r/(r+s) p°_A + s/(r+s) p°_B - p°_D)` with `p°_D`
/// taken from the stationary distribution of the pattern cam (`J = 2`).
pub fn oracle_rd<T: Real>(p: &Pattern, q_a: T, q_b: T) -> Result<T> {
    let m = pattern_machine(p, q_a.clone(), q_b.clone(), 2)?;
    let pi = stationary(&build_transition(&m))?;
    let p_d = futurity_rate_from_stationary(&m, &pi);
    let n = int::<T>(p.len() as i64);
    let pa = futurity_rate_single(q_a, 2)?;
    let pb = futurity_rate_single(q_b, 2)?;
    let weighted = (int::<T>(p.r() as i64) * pa + int::<T>(p.s() as i64) * pb) / n;
    Ok(int::<T>(2) * (weighted - p_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;
    use approx::assert_abs_diff_eq;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn machine(ci: usize, cj: usize, p: &[f64]) -> MachineParams {
        MachineParams::new(ci, cj, p.to_vec()).unwrap()
    }

    #[test]
    fn transition_shapes() {
        let p = 0.3;
        let t = build_transition(&machine(2, 2, &[p, p]));
        assert_eq!(*t.prob((0, 0), (1, 0)), p);
        assert_eq!(*t.prob((0, 0), (1, 1)), 1.0 - p);
        assert_eq!(*t.prob((0, 1), (1, 0)), 1.0);
        assert_eq!(*t.prob((0, 1), (1, 1)), 0.0);

        let (pa, pb) = (0.6, 0.3);
        let t = build_transition(&machine(4, 2, &[pa, pb, pa, pb]));
        assert_eq!(*t.prob((1, 0), (2, 0)), pb);
        assert_eq!(*t.prob((3, 0), (0, 1)), 1.0 - pb);
        for s in t.row_sums() {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn machine_validation() {
        assert!(MachineParams::new(3, 2, vec![0.5; 3]).is_err());
        assert!(MachineParams::new(2, 1, vec![0.5; 2]).is_err());
        assert!(MachineParams::new(2, 2, vec![0.5]).is_err());
        assert!(matches!(
            MachineParams::new(2, 2, vec![0.5, 1.0]),
            Err(Error::ProbabilityOutOfRange { .. })
        ));
    }

    #[test]
    fn stationary_hand_solution() {
        let m = machine(2, 2, &[0.5, 0.5]);
        let pi = stationary(&build_transition(&m)).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(*pi.weight(i, 0), 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(*pi.weight(i, 1), 1.0 / 6.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(futurity_rate(&m).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn futurity_rate_vanishes_as_wins_become_certain() {
        let m = machine(2, 2, &[1.0 - 1e-9, 1.0 - 1e-9]);
        assert!(futurity_rate(&m).unwrap() < 1e-17);
    }

    #[test]
    fn pattern_cams() {
        let p = Pattern::parse("ABB").unwrap();
        let m = pattern_machine(&p, 0.2, 0.7, 2).unwrap();
        assert_eq!(m.cam_positions(), 6);
        let qs: Vec<f64> = (0..6).map(|i| m.q(i)).collect();
        for (got, want) in qs.iter().zip([0.2, 0.7, 0.7, 0.2, 0.7, 0.7]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        let p = Pattern::parse("ABABB").unwrap();
        assert_eq!(pattern_machine(&p, 0.4, 0.6, 2).unwrap().cam_positions(), 10);
        assert_eq!(pattern_cam_positions(5, 3), 15);
        assert_eq!(pattern_cam_positions(6, 4), 12);
    }

    #[test]
    fn symmetric_arms_match_single_arm() {
        let p = Pattern::parse("AB").unwrap();
        let q = 0.35;
        let m = pattern_machine(&p, q, q, 2).unwrap();
        assert_abs_diff_eq!(futurity_rate(&m).unwrap(), q * q / (1.0 + q), epsilon = 1e-15);
        assert_abs_diff_eq!(oracle_rd(&p, q, q).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn oracle_rd_ab_hand_simplification() {
        let (x, y) = (0.4, 0.7);
        let want = (x - y) * (x - y) / ((1.0 + x) * (1.0 + y) * (1.0 - x * y));
        let p = Pattern::parse("AB").unwrap();
        assert_abs_diff_eq!(oracle_rd(&p, x, y).unwrap(), want, epsilon = 1e-14);
        let p = Pattern::parse("ABABBABBB").unwrap();
        assert!(oracle_rd(&p, 0.3, 0.8).unwrap() > 0.0);
    }

    #[test]
    fn exact_stationary_solution() {
        let half = ratio(1, 2);
        let m = MachineParams::new(2, 2, vec![half.clone(), half]).unwrap();
        let pi = stationary(&build_transition(&m)).unwrap();
        assert_eq!(*pi.weight(0, 1), ratio(1, 6));
        let rate: BigRational = futurity_rate(&m).unwrap();
        assert_eq!(rate, ratio(1, 6));
    }

    fn arb_machine() -> impl Strategy<Value = MachineParams> {
        (2usize..=4, 1usize..=4).prop_flat_map(|(cj, d)| {
            prop::collection::vec(0.02f64..0.98, cj * d)
                .prop_map(move |p| MachineParams::new(cj * d, cj, p).unwrap())
        })
    }

    proptest! {
        #[test]
        fn stationary_invariants(m in arb_machine()) {
            let t = build_transition(&m);
            let pi = stationary(&t).unwrap();
            let total: f64 = pi.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(pi.weights().iter().all(|&w| w >= -1e-15));
            prop_assert!(pi.residual(&t) <= 1e-12);
            let inv = 1.0 / m.cam_positions() as f64;
            for i in 0..m.cam_positions() {
                prop_assert!((pi.cam_marginal(i) - inv).abs() <= 1e-12);
            }
        }

        #[test]
        fn rate_routes_agree(m in arb_machine()) {
            let rate = futurity_rate(&m).unwrap();
            prop_assert!((rate - futurity_rate_closed(&m)).abs() <= 1e-12);
            prop_assert!(rate > 0.0 && rate < 1.0 / m.threshold() as f64);
        }

        #[test]
        fn rate_is_rotation_invariant(m in arb_machine(), k in 0usize..16) {
            let a = futurity_rate(&m).unwrap();
            let b = futurity_rate(&m.rotated(k)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn oracle_symmetries(
            bits in prop::collection::vec(any::<bool>(), 2..10),
            qa in 0.05f64..0.95,
            qb in 0.05f64..0.95,
            k in 0usize..10,
        ) {
            let arms = bits.iter().map(|&b| if b { crate::Arm::A } else { crate::Arm::B }).collect();
            let Ok(p) = Pattern::from_arms(arms) else { return Ok(()); };
            let r = oracle_rd(&p, qa, qb).unwrap();
            prop_assert!((oracle_rd(&p.rotate_left(k), qa, qb).unwrap() - r).abs() <= 1e-12);
            prop_assert!((oracle_rd(&p.swap_arms(), qb, qa).unwrap() - r).abs() <= 1e-12);
            prop_assert!((oracle_rd(&p.repeated(2), qa, qb).unwrap() - r).abs() <= 1e-12);
            prop_assert!(oracle_rd(&p, qa, qa).unwrap().abs() <= 1e-14);
        }
    }
}
