//! Lower bound on the probability of decoding failure.
//!
//! For a distribution `Ω` on `k` inputs and `m` received symbols,
//!
//! ```text
//! P_F >= sum_{i=1..k} (-1)^(i+1) C(k,i) ( sum_d Ω_d C(k-i,d)/C(k,d) )^m
//! ```
//!
//! The terms alternate in sign and can be astronomically larger than the
//! result, so the sum is accumulated in arbitrary precision. The working
//! precision is the requested number of fractional bits plus the binary
//! magnitude of the largest term, so the absolute error stays near
//! `2^-precision` however large the terms get.

use astro_float::{BigFloat, Consts, RoundingMode, Sign, Word};
use thiserror::Error;

use crate::degree_dist::DegreeDistribution;
use crate::lt_codec::received_symbols;

const RM: RoundingMode = RoundingMode::ToEven;

/// Default number of fractional bits.
pub const DEFAULT_PRECISION_BITS: usize = 256;

/// Consecutive negligible terms required before the sum is cut short.
const QUIET_TERMS: usize = 50;

/// Guard bits added on top of the working precision.
const GUARD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("log_binomial domain error: r = {r} > n = {n}")]
    BinomialDomain { n: u64, r: u64 },
    #[error("precision of {0} bits is too low to be useful")]
    PrecisionTooLow(usize),
    #[error("negative symbol count: k(1+epsilon) = {0}")]
    NegativeExponent(f64),
    #[error("alternating sum not resolved even at {bits} bits (cancellation of {lost_bits} bits)")]
    Unresolved { bits: usize, lost_bits: i64 },
}

/// How the exponent `k(1+epsilon)` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentMode {
    /// `m = ceil(k(1+epsilon))`, the symbol count a simulation would use.
    #[default]
    Integer,
    /// The real number `k(1+epsilon)`.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    /// The lower bound, clamped to `[0, 1]`.
    pub value: f64,
    /// Number of alternating-sum terms accumulated.
    pub terms_used: usize,
    /// Fractional bits of the evaluation that produced `value`.
    pub precision_bits: usize,
    /// Set when the first attempt could not resolve the sum and a wider
    /// precision was needed.
    pub cancellation_flag: bool,
}

/// `ln C(n, r)`.
///
/// Sums `ln((n-r+t)/t)` directly when `min(r, n-r)` is small and falls back
/// to log-gamma otherwise.
pub fn log_binomial(n: u64, r: u64) -> Result<f64, BoundError> {
    if r > n {
        return Err(BoundError::BinomialDomain { n, r });
    }
    let r = r.min(n - r);
    if r == 0 {
        return Ok(0.0);
    }
    if r <= 1000 {
        let base = (n - r) as f64;
        return Ok((1..=r).map(|t| (base / t as f64).ln_1p()).sum());
    }
    Ok(ln_gamma((n + 1) as f64) - ln_gamma((r + 1) as f64) - ln_gamma((n - r + 1) as f64))
}

/// Lanczos approximation (g = 7, 9 terms) for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `sum_d Ω_d C(k-i,d)/C(k,d)` as `(value, ln value)`. `value` is zero when
/// it would fall below `1e-300`; `ln value` is then the only usable form.
fn inner_sum(dist: &DegreeDistribution, k: usize, i: usize) -> (f64, f64) {
    let mut direct = 0.0;
    let mut logs: Vec<f64> = Vec::new();
    let mut ratio = 1.0f64;
    let mut log_ratio = 0.0f64;
    for (idx, &p) in dist.masses().iter().enumerate() {
        let d = idx + 1;
        if d > k - i {
            break;
        }
        // ratio_d = ratio_{d-1} * (k-i-d+1)/(k-d+1)
        let t = (d - 1) as f64;
        ratio *= (k as f64 - i as f64 - t) / (k as f64 - t);
        log_ratio += (-(i as f64) / (k as f64 - t)).ln_1p();
        if p > 0.0 {
            direct += p * ratio;
            logs.push(p.ln() + log_ratio);
        }
    }
    if logs.is_empty() {
        return (0.0, f64::NEG_INFINITY);
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_value = top + logs.iter().map(|&l| (l - top).exp()).sum::<f64>().ln();
    if direct >= 1e-300 {
        (direct.min(1.0), direct.min(1.0).ln())
    } else {
        (0.0, ln_value)
    }
}

/// [`pf_lower_bound_with`] using integer `m = ceil(k(1+epsilon))`.
pub fn pf_lower_bound(
    dist: &DegreeDistribution,
    k: usize,
    epsilon: f64,
    precision_bits: usize,
) -> Result<BoundResult, BoundError> {
    pf_lower_bound_with(dist, k, epsilon, precision_bits, ExponentMode::Integer)
}

pub fn pf_lower_bound_with(
    dist: &DegreeDistribution,
    k: usize,
    epsilon: f64,
    precision_bits: usize,
    mode: ExponentMode,
) -> Result<BoundResult, BoundError> {
    if precision_bits < 16 {
        return Err(BoundError::PrecisionTooLow(precision_bits));
    }
    let real_exp = k as f64 * (1.0 + epsilon);
    if real_exp < 0.0 || !real_exp.is_finite() {
        return Err(BoundError::NegativeExponent(real_exp));
    }
    let exponent = match mode {
        ExponentMode::Integer => Exponent::Int(received_symbols(k, epsilon)),
        ExponentMode::Real => Exponent::Real(real_exp),
    };
    let plan = plan_terms(dist, k, exponent.as_f64(), precision_bits);
    let mut bits = precision_bits;
    let mut flagged = false;
    loop {
        match accumulate(&plan, dist, k, &exponent, bits) {
            Ok((value, terms_used)) => {
                return Ok(BoundResult {
                    value: value.clamp(0.0, 1.0),
                    terms_used,
                    precision_bits: bits,
                    cancellation_flag: flagged,
                });
            }
            Err(lost_bits) => {
                flagged = true;
                if bits >= 4 * precision_bits {
                    return Err(BoundError::Unresolved { bits, lost_bits });
                }
                bits *= 2;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Exponent {
    Int(usize),
    Real(f64),
}

impl Exponent {
    fn as_f64(&self) -> f64 {
        match *self {
            Exponent::Int(m) => m as f64,
            Exponent::Real(x) => x,
        }
    }
}

struct TermPlan {
    // (value, ln value) of the inner sum for i = 1..=len
    inner: Vec<(f64, f64)>,
    // log2 of the largest |term|
    max_log2: f64,
    // Recompute inner sums in extended precision. Needed once the terms
    // grow past the first: a relative error of m * 2^-53 in each inner sum
    // is then amplified by the cancellation.
    exact_inner: bool,
}

/// Computes inner sums in double precision and the magnitude of each term,
/// stopping once terms have been far below the largest one for a while.
fn plan_terms(dist: &DegreeDistribution, k: usize, exponent: f64, precision_bits: usize) -> TermPlan {
    let mut inner = Vec::new();
    let mut max_log2 = f64::NEG_INFINITY;
    let mut first_two = [f64::NEG_INFINITY; 2];
    let mut quiet = 0;
    // terms this far below max(largest term, 1) cannot matter even after
    // the widest retry
    let cutoff = (4 * precision_bits + GUARD_BITS) as f64;
    for i in 1..=k {
        let (v, ln_v) = inner_sum(dist, k, i);
        inner.push((v, ln_v));
        if ln_v == f64::NEG_INFINITY {
            // inner sums only shrink with i; every later term is zero too
            break;
        }
        let log2_term = (log_binomial(k as u64, i as u64).unwrap() + exponent * ln_v) / std::f64::consts::LN_2;
        max_log2 = max_log2.max(log2_term);
        if i <= 2 {
            first_two[i - 1] = log2_term;
        }
        if log2_term < max_log2.min(0.0) - cutoff {
            quiet += 1;
            if quiet >= QUIET_TERMS {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    // Bonferroni: S1 - S2 <= P <= S1, so with S2 <= S1/2 and S1 the largest
    // term nothing is lost to cancellation.
    let benign = first_two[0] >= max_log2 && first_two[1] <= first_two[0] - 1.0;
    TermPlan {
        inner,
        max_log2,
        exact_inner: !benign,
    }
}

/// Sums the planned terms at `bits` fractional bits. On failure returns the
/// number of bits lost to cancellation.
fn accumulate(
    plan: &TermPlan,
    dist: &DegreeDistribution,
    k: usize,
    exponent: &Exponent,
    bits: usize,
) -> Result<(f64, usize), i64> {
    if plan.max_log2 == f64::NEG_INFINITY {
        return Ok((0.0, 0));
    }
    let headroom = plan.max_log2.max(0.0).ceil() as usize;
    let p = bits + headroom + GUARD_BITS;
    let mut cc = Consts::new().expect("constant cache");
    let mut binom = BigFloat::from_u64(1, p);
    let mut sum = BigFloat::from_u64(0, p);
    let mut comp = BigFloat::from_u64(0, p);
    let rel_tol = 2f64.powi(-(bits as i32 - 8));
    let mut quiet = 0;
    let mut used = 0;
    let exact = plan.exact_inner.then(|| ExactInner::new(dist, k, p));
    for (idx, &(v, ln_v)) in plan.inner.iter().enumerate() {
        let i = idx + 1;
        binom = binom
            .mul(&BigFloat::from_u64((k - i + 1) as u64, p), p, RM)
            .div(&BigFloat::from_u64(i as u64, p), p, RM);
        let base = if let Some(ex) = &exact {
            ex.inner(i)
        } else if v > 0.0 {
            BigFloat::from_f64(v, p)
        } else if ln_v == f64::NEG_INFINITY {
            BigFloat::from_u64(0, p)
        } else {
            BigFloat::from_f64(ln_v, p).exp(p, RM, &mut cc)
        };
        let power = match *exponent {
            Exponent::Int(m) => base.powi(m, p, RM),
            Exponent::Real(x) => {
                if base.is_zero() {
                    base.clone()
                } else {
                    base.pow(&BigFloat::from_f64(x, p), p, RM, &mut cc)
                }
            }
        };
        let mut term = binom.mul(&power, p, RM);
        if i % 2 == 0 {
            term.inv_sign();
        }
        // Neumaier compensated addition
        let t = sum.add(&term, p, RM);
        let corr = if sum.abs_cmp(&term).unwrap_or(0) >= 0 {
            sum.sub(&t, p, RM).add(&term, p, RM)
        } else {
            term.sub(&t, p, RM).add(&sum, p, RM)
        };
        comp = comp.add(&corr, p, RM);
        sum = t;
        used = i;

        let term_mag = to_f64(&term).abs();
        let acc_mag = to_f64(&sum.add(&comp, p, RM)).abs();
        if term_mag == 0.0 || (acc_mag > 0.0 && term_mag < rel_tol * acc_mag) {
            quiet += 1;
            if quiet >= QUIET_TERMS {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    let total = sum.add(&comp, p, RM);
    let value = to_f64(&total);
    // Each term carries absolute error near 2^-bits; the sum must clear
    // that floor unless the floor is already below the f64 range.
    let noise_log2 = -(bits as f64) + (used.max(1) as f64).log2() + 16.0;
    let value_log2 = if value == 0.0 { f64::NEG_INFINITY } else { value.abs().log2() };
    let out_of_range = value < 0.0 || value > 1.0 + 2f64.powf(noise_log2);
    if (value_log2 < noise_log2 || out_of_range) && noise_log2 > -1000.0 {
        return Err((plan.max_log2 - value_log2.max(-1e6)).ceil() as i64);
    }
    Ok((value, used))
}

/// Inner sums evaluated entirely in extended precision.
struct ExactInner {
    k: usize,
    p: usize,
    masses: Vec<BigFloat>,
    // 1 / (k - t) for t = 0..d_max
    inv_den: Vec<BigFloat>,
}

impl ExactInner {
    fn new(dist: &DegreeDistribution, k: usize, p: usize) -> Self {
        let d = dist.d_max().min(k);
        let one = BigFloat::from_u64(1, p);
        ExactInner {
            k,
            p,
            masses: dist.masses()[..d].iter().map(|&w| BigFloat::from_f64(w, p)).collect(),
            inv_den: (0..d)
                .map(|t| one.div(&BigFloat::from_u64((k - t) as u64, p), p, RM))
                .collect(),
        }
    }

    fn inner(&self, i: usize) -> BigFloat {
        let p = self.p;
        let mut ratio = BigFloat::from_u64(1, p);
        let mut acc = BigFloat::from_u64(0, p);
        for (t, (w, inv)) in self.masses.iter().zip(&self.inv_den).enumerate() {
            if t + 1 > self.k - i {
                break;
            }
            ratio = ratio
                .mul(&BigFloat::from_u64((self.k - i - t) as u64, p), p, RM)
                .mul(inv, p, RM);
            if !w.is_zero() {
                acc = acc.add(&w.mul(&ratio, p, RM), p, RM);
            }
        }
        acc
    }
}

/// Nearest `f64` to a big float (truncating the mantissa after 128 bits).
fn to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let Some((words, _, sign, exp, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let word_bits = Word::BITS as i32;
    // mantissa is 0.w_{n-1} w_{n-2} ... with the top bit set
    let mut frac = 0.0f64;
    let mut scale = 1.0f64;
    for &w in words.iter().rev().take((128 / word_bits + 1) as usize) {
        scale *= 2f64.powi(-word_bits);
        frac += w as f64 * scale;
    }
    let e = exp;
    let v = if e < -1100 {
        0.0
    } else if e > 1100 {
        f64::INFINITY
    } else {
        frac * 2f64.powi(e / 2) * 2f64.powi(e - e / 2)
    };
    if sign == Sign::Neg {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree_dist::{make_rsd, make_truncated_rsd};
    use num_bigint::BigUint;

    fn degree_one(k: usize) -> DegreeDistribution {
        DegreeDistribution::new(k, [(1, 1.0)]).unwrap()
    }

    /// P(some input uncovered) after `m` uniform draws from `k`, by a forward
    /// recursion over the number of distinct inputs seen.
    fn uncovered_probability(k: usize, m: usize) -> f64 {
        let mut dist = vec![0.0f64; k + 1];
        dist[0] = 1.0;
        for _ in 0..m {
            let mut next = vec![0.0; k + 1];
            for (c, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                next[c] += p * c as f64 / k as f64;
                if c < k {
                    next[c + 1] += p * (k - c) as f64 / k as f64;
                }
            }
            dist = next;
        }
        dist[..k].iter().sum()
    }

    fn big_binomial(n: u64, r: u64) -> BigUint {
        let mut acc = BigUint::from(1u32);
        for t in 0..r {
            acc *= n - t;
        }
        for t in 1..=r {
            acc /= t;
        }
        acc
    }

    fn ln_big(x: &BigUint) -> f64 {
        let bits = x.bits();
        let shift = bits.saturating_sub(60);
        let top: u64 = (x >> shift).try_into().unwrap();
        (top as f64).ln() + shift as f64 * std::f64::consts::LN_2
    }

    #[test]
    fn to_f64_round_trips() {
        for &v in &[1.0, -1.0, 0.5, 3.25, 1e-300, 1e300, 0.1, -7.123456789e-5, 2f64.powi(-1000)] {
            assert_eq!(to_f64(&BigFloat::from_f64(v, 256)), v);
        }
    }

    #[test]
    fn log_binomial_small() {
        assert_eq!(log_binomial(5, 0).unwrap(), 0.0);
        assert!((log_binomial(5, 2).unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!(log_binomial(3, 4).is_err());
    }

    #[test]
    fn log_binomial_against_big_integers() {
        for &(n, r) in &[(10000u64, 150u64), (10000, 5000), (10000, 1), (3000, 1500), (64, 32), (10000, 9999)] {
            let exact = ln_big(&big_binomial(n, r));
            let got = log_binomial(n, r).unwrap();
            assert!(((got - exact) / exact).abs() < 1e-12, "({n},{r}) {got} vs {exact}");
        }
    }

    #[test]
    fn ln_gamma_integers() {
        let mut lf = 0.0f64;
        for n in 1..30u32 {
            assert!((ln_gamma(n as f64) - lf).abs() < 1e-12 * lf.max(1.0));
            lf += (n as f64).ln();
        }
    }

    #[test]
    fn single_input_forces_zero() {
        for eps in [0.0, 0.5, 3.0] {
            let r = pf_lower_bound(&degree_one(1), 1, eps, DEFAULT_PRECISION_BITS).unwrap();
            assert_eq!(r.value, 0.0);
        }
    }

    #[test]
    fn two_inputs_two_symbols() {
        let r = pf_lower_bound(&degree_one(2), 2, 0.0, DEFAULT_PRECISION_BITS).unwrap();
        assert!((r.value - 0.5).abs() < 1e-15);
        assert!((uncovered_probability(2, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degree_one_matches_coverage_recursion() {
        for k in 1..=20 {
            for extra in [0usize, 1, 3, 7, 20, 60] {
                let m = k + extra;
                let eps = m as f64 / k as f64 - 1.0;
                let r = pf_lower_bound(&degree_one(k), k, eps, DEFAULT_PRECISION_BITS).unwrap();
                let exact = uncovered_probability(k, m);
                assert!((r.value - exact).abs() < 1e-9, "k={k} m={m}: {} vs {exact}", r.value);
            }
        }
    }

    #[test]
    fn nonincreasing_in_epsilon() {
        let d = make_truncated_rsd(1000, 0.09266, 0.001993, 150).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..=20 {
            let eps = -0.05 + 0.01 * step as f64;
            let v = pf_lower_bound(&d, 1000, eps, DEFAULT_PRECISION_BITS).unwrap().value;
            assert!(v.is_finite());
            assert!(v <= last + 1e-15, "eps {eps}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn precision_doubling_is_stable() {
        let d = make_truncated_rsd(10000, 0.05642, 0.0317, 150).unwrap();
        for eps in [0.0, 0.02, 0.1] {
            let a = pf_lower_bound(&d, 10000, eps, 256).unwrap().value;
            let b = pf_lower_bound(&d, 10000, eps, 512).unwrap().value;
            assert!(a > 0.0);
            assert!(((a - b) / b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn real_exponent_matches_integer_on_integers() {
        let d = make_rsd(200, 0.1, 0.05).unwrap();
        let a = pf_lower_bound_with(&d, 200, 0.1, 256, ExponentMode::Integer).unwrap().value;
        let b = pf_lower_bound_with(&d, 200, 0.1, 256, ExponentMode::Real).unwrap().value;
        assert!(((a - b) / a).abs() < 1e-12);
        let c = pf_lower_bound_with(&d, 200, 0.1025, 256, ExponentMode::Real).unwrap().value;
        assert!(c < a);
    }

    #[test]
    fn heavy_cancellation_widens_or_fails_cleanly() {
        // degree-one code at k = 2000: the largest term is about 2^1000
        let k = 2000;
        let r = pf_lower_bound(&degree_one(k), k, 0.0, 256);
        let r = r.unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let r = pf_lower_bound(&degree_one(k), k, 6.0, 256).unwrap();
        let exact = uncovered_probability(k, 7 * k);
        assert!((r.value - exact).abs() < 1e-9 * exact.max(1e-300) + 1e-15, "{} vs {exact}", r.value);
    }

    #[test]
    fn rejects_low_precision() {
        assert!(pf_lower_bound(&degree_one(3), 3, 0.0, 4).is_err());
    }
}
