//! Continued fractions, Diophantine scans, simultaneous approximation and
//! Liouville-type frequencies.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::exec::Exec;
use crate::precision::{Frequency, Turn, MAX_BITS};
use crate::{Error, Result};

/// `x · 2^e` for an arbitrary-width integer, without intermediate overflow.
pub fn big_ldexp(x: &BigUint, e: i64) -> f64 {
    let nb = x.bits() as i64;
    if nb == 0 {
        return 0.0;
    }
    let shift = (nb - 64).max(0);
    let top = (x >> shift as usize).to_u64().unwrap_or(u64::MAX) as f64;
    let total = shift + e;
    let half = total / 2;
    top * 2f64.powi(half.clamp(-2000, 2000) as i32) * 2f64.powi((total - half).clamp(-2000, 2000) as i32)
}

/// `log2 x` for a positive arbitrary-width integer.
pub fn big_log2(x: &BigUint) -> f64 {
    let nb = x.bits() as i64;
    assert!(nb > 0, "log of zero");
    let shift = (nb - 64).max(0);
    let top = (x >> shift as usize).to_u64().unwrap_or(u64::MAX) as f64;
    top.log2() + shift as f64
}

/// `‖k α‖` evaluated on the full mantissa of `α`, for arbitrary `k`.
pub fn norm_of_big_multiple(alpha: &Frequency, k: &BigUint) -> f64 {
    let b = alpha.bits() as usize;
    let modulus = BigUint::one() << b;
    let r = (alpha.mantissa() * k) % &modulus;
    let s = &modulus - &r;
    big_ldexp(if r < s { &r } else { &s }, -(b as i64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExpansionStatus {
    /// All requested quotients were certified.
    Complete,
    /// The working precision could not separate the next quotient.
    PrecisionExhausted,
    /// The input terminated: it is rational at working precision.
    Rational,
}

/// `α = [0; a_1, a_2, …]` with convergents `p_k / q_k`, `k ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuedFractionExpansion {
    pub partial_quotients: Vec<BigUint>,
    pub convergents: Vec<(BigUint, BigUint)>,
    pub requested_depth: usize,
    pub status: ExpansionStatus,
}

impl ContinuedFractionExpansion {
    pub fn from_quotients(quotients: Vec<BigUint>, status: ExpansionStatus) -> Self {
        let mut convergents = Vec::with_capacity(quotients.len());
        let (mut p_prev, mut q_prev) = (BigUint::one(), BigUint::zero());
        let (mut p, mut q) = (BigUint::zero(), BigUint::one());
        for a in &quotients {
            let p_next = a * &p + &p_prev;
            let q_next = a * &q + &q_prev;
            p_prev = std::mem::replace(&mut p, p_next);
            q_prev = std::mem::replace(&mut q, q_next);
            convergents.push((p.clone(), q.clone()));
        }
        let requested_depth = quotients.len();
        ContinuedFractionExpansion {
            partial_quotients: quotients,
            convergents,
            requested_depth,
            status,
        }
    }

    pub fn depth(&self) -> usize {
        self.partial_quotients.len()
    }

    /// Denominators `q_1, q_2, …` as doubles.
    pub fn denominators_f64(&self) -> Vec<f64> {
        self.convergents.iter().map(|(_, q)| big_ldexp(q, 0)).collect()
    }

    /// Denominators that fit in a `u64`.
    pub fn denominators_u64(&self) -> Vec<u64> {
        self.convergents
            .iter()
            .map_while(|(_, q)| q.to_u64())
            .collect()
    }

    /// Check `q_{k+1} = a_{k+1} q_k + q_{k−1}` and `gcd(p_k, q_k) = 1`.
    pub fn check_structure(&self) -> std::result::Result<(), String> {
        let mut q_prev = BigUint::one();
        let mut q_prev2 = BigUint::zero();
        for (k, ((p, q), a)) in self.convergents.iter().zip(&self.partial_quotients).enumerate() {
            if *q != a * &q_prev + &q_prev2 {
                return Err(format!("recurrence fails at k={}", k + 1));
            }
            if !p.gcd(q).is_one() {
                return Err(format!("convergent {} not in lowest terms", k + 1));
            }
            if k > 0 && q <= &q_prev {
                return Err(format!("denominators not increasing at k={}", k + 1));
            }
            q_prev2 = std::mem::replace(&mut q_prev, q.clone());
        }
        Ok(())
    }

    /// Check `1/(2 q_{k+1}) ≤ ‖q_k α‖ ≤ 1/q_{k+1}` for every computed pair.
    pub fn check_best_approximation(&self, alpha: &Frequency) -> std::result::Result<(), String> {
        for k in 0..self.convergents.len().saturating_sub(1) {
            let qk = &self.convergents[k].1;
            let qn = big_ldexp(&self.convergents[k + 1].1, 0);
            let v = norm_of_big_multiple(alpha, qk);
            let slack = 1e-9;
            if v < 1.0 / (2.0 * qn) * (1.0 - slack) || v > 1.0 / qn * (1.0 + slack) {
                return Err(format!(
                    "k={}: ||q_k alpha|| = {v:e} outside [1/(2q), 1/q] with q = {qn:e}",
                    k + 1
                ));
            }
        }
        Ok(())
    }
}

/// One Euclid step on `num/den ∈ (0, 1)`: returns the quotient of `den/num`.
fn euclid_step(num: &mut BigUint, den: &mut BigUint) -> Option<BigUint> {
    if num.is_zero() {
        return None;
    }
    let (a, r) = den.div_rem(num);
    *den = std::mem::replace(num, r);
    Some(a)
}

/// The first `k` partial quotients of `α`, certified against the full
/// dyadic enclosure `[m, m + 1] / 2^bits`.
pub fn continued_fraction(alpha: &Frequency, k: usize) -> Result<ContinuedFractionExpansion> {
    if k == 0 {
        return Err(Error::invalid("continued fraction depth must be at least 1"));
    }
    let den0 = BigUint::one() << alpha.bits() as usize;
    let (mut ln, mut ld) = (alpha.mantissa().clone(), den0.clone());
    let (mut un, mut ud) = (alpha.mantissa() + BigUint::one(), den0);
    if ln.is_zero() {
        let mut cf = ContinuedFractionExpansion::from_quotients(Vec::new(), ExpansionStatus::Rational);
        cf.requested_depth = k;
        return Ok(cf);
    }
    let mut quotients = Vec::new();
    let mut status = ExpansionStatus::Complete;
    while quotients.len() < k {
        let Some(a) = euclid_step(&mut ln, &mut ld) else {
            status = ExpansionStatus::Rational;
            break;
        };
        if ln.is_zero() {
            // The lower endpoint is a rational whose expansion ends here.
            quotients.push(a);
            if quotients.len() < k {
                status = ExpansionStatus::Rational;
            }
            break;
        }
        // The upper endpoint equals 1 only if the mantissa is all ones.
        let b = if un == ud { None } else { euclid_step(&mut un, &mut ud) };
        if b.as_ref() != Some(&a) {
            status = ExpansionStatus::PrecisionExhausted;
            break;
        }
        quotients.push(a);
    }
    let mut cf = ContinuedFractionExpansion::from_quotients(quotients, status);
    cf.requested_depth = k;
    Ok(cf)
}

/// Minimal observed value of one Diophantine functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Witness constant: the smallest normalised value seen.
    pub min_value: f64,
    /// Lexicographically smallest minimiser, first nonzero entry positive.
    pub argmin: Vec<i64>,
    /// Height up to which the scan is exhaustive.
    pub height: u64,
    pub tau: f64,
}

impl ConditionReport {
    /// True if some scanned vector gives an exact resonance.
    pub fn is_violated(&self) -> bool {
        self.min_value <= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub dc: ConditionReport,
    pub wdc: ConditionReport,
    /// Only defined for pairs of frequencies.
    pub pdc: Option<ConditionReport>,
}

/// `r(h) = Π max(|h_i|, 1)`.
pub fn r_height(h: &[i64]) -> u64 {
    h.iter().map(|&x| x.unsigned_abs().max(1)).product()
}

fn inner_turn(alpha: &[Turn], h: &[i64]) -> Turn {
    alpha
        .iter()
        .zip(h)
        .fold(Turn::ZERO, |acc, (&a, &x)| acc + a.mul_int(x as i128))
}

#[derive(Clone)]
struct Best {
    value: f64,
    h: Vec<i64>,
}

impl Best {
    fn offer(&mut self, value: f64, h: &[i64]) {
        if value < self.value || (value == self.value && h < self.h.as_slice()) {
            self.value = value;
            self.h = h.to_vec();
        }
    }

    fn merge(self, other: Best) -> Best {
        if other.value < self.value || (other.value == self.value && other.h < self.h) {
            other
        } else {
            self
        }
    }
}

fn dc_scan_from(alpha: &[Turn], tau: f64, budget: u64, h: &mut Vec<i64>, best: &mut Best) {
    let i = h.len();
    if i == alpha.len() {
        if h.iter().all(|&x| x == 0) {
            return;
        }
        let r = r_height(h) as f64;
        best.offer(inner_turn(alpha, h).norm() * r.powf(tau), h);
        return;
    }
    let leading_zero = h.iter().all(|&x| x == 0);
    let lim = budget as i64;
    let start = if leading_zero { 0 } else { -lim };
    for x in start..=lim {
        let next_budget = budget / x.unsigned_abs().max(1);
        h.push(x);
        dc_scan_from(alpha, tau, next_budget, h, best);
        h.pop();
    }
}

/// Exhaustive scan of the DC, WDC and (for `d = 2`) PDC functionals.
///
/// * DC: `‖⟨h, α⟩‖ · r(h)^τ` over `h ≠ 0` with `r(h) ≤ H`.
/// * WDC: `max_i ‖k α_i‖ · k^τ` over `1 ≤ k ≤ H`.
/// * PDC: `‖⟨h, α⟩‖ · |h|_∞^τ` over `|h|_∞ ≤ H` with coprime entries or a zero entry.
pub fn diophantine_check(
    alpha: &[Frequency],
    tau: f64,
    height: u64,
    exec: Exec,
) -> Result<ClassificationReport> {
    if alpha.is_empty() {
        return Err(Error::invalid("empty frequency vector"));
    }
    if height == 0 {
        return Err(Error::invalid("height must be at least 1"));
    }
    let turns: Vec<Turn> = alpha.iter().map(Frequency::turn).collect();
    let d = turns.len();
    let worst = || Best {
        value: f64::INFINITY,
        h: vec![i64::MAX; d],
    };

    // Split the DC scan over the first coordinate; its sign is non-negative
    // because h and -h give the same value.
    let h_max = height as i64;
    let firsts: Vec<i64> = (0..=h_max).collect();
    let partial = exec.map(&firsts, |&x| {
        let mut best = worst();
        let mut h = vec![x];
        dc_scan_from(&turns, tau, height / x.unsigned_abs().max(1), &mut h, &mut best);
        best
    });
    let dc = partial.into_iter().fold(worst(), Best::merge);

    let ks: Vec<u64> = (1..=height).collect();
    let wdc = exec
        .map(&ks, |&k| {
            let m = turns
                .iter()
                .map(|a| a.mul_u128(k as u128).norm())
                .fold(0.0, f64::max);
            Best {
                value: m * (k as f64).powf(tau),
                h: vec![k as i64],
            }
        })
        .into_iter()
        .fold(Best { value: f64::INFINITY, h: vec![i64::MAX] }, Best::merge);

    let pdc = (d == 2).then(|| {
        let rows = exec.map(&firsts, |&h1| {
            let mut best = worst();
            let start = if h1 == 0 { 1 } else { -h_max };
            for h2 in start..=h_max {
                let coprime = h1.unsigned_abs().gcd(&h2.unsigned_abs()) == 1;
                if !(coprime || h1 == 0 || h2 == 0) {
                    continue;
                }
                let h = [h1, h2];
                let r = h1.unsigned_abs().max(h2.unsigned_abs()) as f64;
                best.offer(inner_turn(&turns, &h).norm() * r.powf(tau), &h);
            }
            best
        });
        rows.into_iter().fold(worst(), Best::merge)
    });

    let report = |b: Best| ConditionReport {
        min_value: b.value,
        argmin: b.h,
        height,
        tau,
    };
    Ok(ClassificationReport {
        dc: report(dc),
        wdc: report(wdc),
        pdc: pdc.map(report),
    })
}

/// One strict-improvement record of simultaneous approximation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxRecord {
    pub m: u64,
    pub ell: Vec<i64>,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimultaneousApproximation {
    pub records: Vec<ApproxRecord>,
    pub qmax: u64,
}

/// `2 Γ(d/2 + 1)^{1/d} / √π`, the constant of the Minkowski-type bound.
pub fn simultaneous_bound_constant(d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    // Γ(d/2 + 1) through the half-integer recurrence.
    let mut g = if d % 2 == 0 { 1.0 } else { pi.sqrt() / 2.0 };
    let mut x = if d % 2 == 0 { 1.0 } else { 1.5 };
    while x < d as f64 / 2.0 + 1.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    2.0 * g.powf(1.0 / d as f64) / pi.sqrt()
}

impl SimultaneousApproximation {
    /// Check `err_n ≤ C_d / m_{n+1}^{1/d}` on every consecutive pair.
    pub fn check_bound(&self, d: usize) -> std::result::Result<(), String> {
        let c = simultaneous_bound_constant(d);
        for w in self.records.windows(2) {
            let bound = c / (w[1].m as f64).powf(1.0 / d as f64);
            if w[0].err > bound * (1.0 + 1e-12) {
                return Err(format!(
                    "record m={} err={:e} exceeds {:e}",
                    w[0].m, w[0].err, bound
                ));
            }
        }
        Ok(())
    }
}

/// Exhaustive scan for the strict records of `m ↦ (Σ_j ‖m α_j‖²)^{1/2}`.
pub fn best_simultaneous_approximations(alpha: &[Frequency], qmax: u64) -> Result<SimultaneousApproximation> {
    if qmax < 2 {
        return Err(Error::invalid("qmax must be at least 2"));
    }
    if alpha.is_empty() {
        return Err(Error::invalid("empty frequency vector"));
    }
    let turns: Vec<Turn> = alpha.iter().map(Frequency::turn).collect();
    let d = turns.len();
    let mut frac = vec![Turn::ZERO; d];
    let mut whole = vec![0i64; d];
    let mut best = f64::INFINITY;
    let mut records = Vec::new();
    for m in 1..=qmax {
        let mut e2 = 0.0;
        for j in 0..d {
            let next = frac[j] + turns[j];
            if next < frac[j] {
                whole[j] += 1;
            }
            frac[j] = next;
            let t = next.norm();
            e2 += t * t;
        }
        if e2 < best {
            best = e2;
            let ell = (0..d)
                .map(|j| whole[j] + i64::from(frac[j] >= Turn::HALF))
                .collect();
            records.push(ApproxRecord {
                m,
                ell,
                err: e2.sqrt(),
            });
        }
    }
    Ok(SimultaneousApproximation { records, qmax })
}

/// A frequency with planted super-exponential approximation scales.
#[derive(Clone, Debug)]
pub struct LiouvilleFrequency {
    pub frequency: Frequency,
    pub expansion: ContinuedFractionExpansion,
    pub gamma: f64,
    pub requested_scales: usize,
    /// Denominators `q_1 … q_K` with `q_{k+1} > q_k^γ`.
    pub planted: Vec<BigUint>,
}

impl LiouvilleFrequency {
    pub fn scales_achieved(&self) -> usize {
        self.planted.len()
    }

    /// Verify `q_{k+1} > q_k^γ` along the planted scales and one step beyond.
    pub fn check_growth(&self) -> std::result::Result<(), String> {
        let qs: Vec<&BigUint> = self.expansion.convergents.iter().map(|(_, q)| q).collect();
        for k in 0..self.planted.len() {
            if k + 1 >= qs.len() {
                return Err(format!("no successor for planted scale {}", k + 1));
            }
            if !exceeds_power(qs[k + 1], qs[k], self.gamma) {
                return Err(format!("growth fails at k={}", k + 1));
            }
        }
        Ok(())
    }
}

/// `γ = num/den` with a small power-of-two denominator, if one exists.
fn dyadic_ratio(gamma: f64) -> Option<(u32, u32)> {
    let mut den = 1u32;
    while den <= 64 {
        let num = gamma * den as f64;
        if num.fract() == 0.0 && num >= 0.0 && num <= 4096.0 {
            return Some((num as u32, den));
        }
        den *= 2;
    }
    None
}

/// `a > b^γ`, exact when `γ` has a small dyadic form.
fn exceeds_power(a: &BigUint, b: &BigUint, gamma: f64) -> bool {
    if let Some((num, den)) = dyadic_ratio(gamma) {
        return a.pow(den) > b.pow(num);
    }
    if b.is_one() {
        return !a.is_one() || gamma < 0.0;
    }
    big_log2(a) > gamma * big_log2(b) + 1e-9 * big_log2(a)
}

/// `⌊q^{γ−1}⌋ + 1`, rounded up when the power is only available in floating point.
fn next_quotient(q: &BigUint, gamma: f64) -> BigUint {
    let e = gamma - 1.0;
    if let Some((num, den)) = dyadic_ratio(e) {
        return q.pow(num).nth_root(den) + BigUint::one();
    }
    let l = e * big_log2(q);
    // The double carries a relative error of about 2^-52; pad by that.
    let shift = (l - 52.0).floor().max(0.0);
    let top = 2f64.powf(l - shift) * (1.0 + 1e-12);
    (BigUint::from(top.ceil() as u64) << shift as usize) + BigUint::one()
}

/// Build `α = [0; 1, a_2, a_3, …]` with `a_{k+1} = ⌊q_k^{γ−1}⌋ + 1`.
///
/// The returned dyadic enclosure certifies every planted quotient; when the
/// `MAX_BITS` budget cannot hold `k` scales, fewer are returned.
pub fn liouville_construct(gamma: f64, k: usize) -> Result<LiouvilleFrequency> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::invalid("Liouville growth exponent must exceed 1"));
    }
    if k == 0 {
        return Err(Error::invalid("Liouville depth must be at least 1"));
    }
    // Quotients a_1 … a_{k+2}: the last one only pushes the truncation deep.
    let mut quotients = vec![BigUint::one()];
    let (mut q_prev, mut q) = (BigUint::one(), BigUint::one());
    while quotients.len() < k + 2 {
        let a = next_quotient(&q, gamma);
        let q_next = &a * &q + &q_prev;
        q_prev = std::mem::replace(&mut q, q_next);
        quotients.push(a);
        if big_log2(&q) * 2.0 + 64.0 > MAX_BITS as f64 {
            break;
        }
    }
    loop {
        let depth = quotients.len();
        let exact = ContinuedFractionExpansion::from_quotients(quotients.clone(), ExpansionStatus::Complete);
        let (p_last, q_last) = exact.convergents.last().expect("at least one quotient").clone();
        let bits = ((big_log2(&q_last) * 2.0).ceil() as u32 + 64).clamp(128, MAX_BITS);
        let mantissa = (p_last << bits as usize) / &q_last;
        let freq = Frequency::from_parts(mantissa, bits, format!("liouville({gamma},{k})"))?;
        let cf = continued_fraction(&freq, depth - 1)?;
        let certified = cf
            .partial_quotients
            .iter()
            .zip(&quotients)
            .take_while(|(a, b)| a == b)
            .count();
        // Scale q_j is planted when a_{j+1} is certified, so q_{j+1} is known.
        let planted_count = certified.saturating_sub(1).min(k);
        if planted_count >= 1 || depth <= 2 {
            let expansion = ContinuedFractionExpansion::from_quotients(
                quotients[..certified].to_vec(),
                if planted_count == k {
                    ExpansionStatus::Complete
                } else {
                    ExpansionStatus::PrecisionExhausted
                },
            );
            let planted = expansion.convergents[..planted_count]
                .iter()
                .map(|(_, q)| q.clone())
                .collect();
            return Ok(LiouvilleFrequency {
                frequency: freq,
                expansion,
                gamma,
                requested_scales: k,
                planted,
            });
        }
        quotients.pop();
    }
}

/// Parse a frequency tag or decimal string.
///
/// Accepted forms: `golden`, `sqrt2m1`, `sqrt3m1`, `liouville(γ,K)`, or a
/// plain decimal such as `0.414`.
pub fn parse_frequency(s: &str) -> Result<Frequency> {
    let t = s.trim();
    match t {
        "golden" => return Ok(Frequency::golden()),
        "sqrt2m1" => return Ok(Frequency::sqrt_minus_floor(2, "sqrt2m1")),
        "sqrt3m1" => return Ok(Frequency::sqrt_minus_floor(3, "sqrt3m1")),
        _ => {}
    }
    if let Some(args) = t.strip_prefix("liouville(").and_then(|r| r.strip_suffix(')')) {
        let (g, k) = args
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("malformed Liouville tag `{t}`")))?;
        let gamma: f64 = g
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad Liouville exponent in `{t}`")))?;
        let depth: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad Liouville depth in `{t}`")))?;
        return Ok(liouville_construct(gamma, depth)?.frequency);
    }
    Frequency::parse_decimal(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Frequency {
        Frequency::golden()
    }

    fn fib(n: usize) -> Vec<u64> {
        let mut v = vec![1u64, 2];
        while v.len() < n {
            let k = v.len();
            v.push(v[k - 1] + v[k - 2]);
        }
        v.truncate(n);
        v
    }

    #[test]
    fn golden_expansion() {
        let cf = continued_fraction(&golden(), 60).unwrap();
        assert_eq!(cf.status, ExpansionStatus::Complete);
        assert!(cf.partial_quotients.iter().all(|a| a.is_one()));
        // q_1 = 1, q_2 = 2, q_3 = 3, … are Fibonacci numbers.
        let qs = cf.denominators_u64();
        assert_eq!(qs[0], 1);
        assert_eq!(&qs[..29], &fib(29)[..]);
        cf.check_structure().unwrap();
        cf.check_best_approximation(&golden()).unwrap();
    }

    #[test]
    fn sqrt2_expansion() {
        let a = Frequency::sqrt_minus_floor(2, "sqrt2m1");
        let cf = continued_fraction(&a, 80).unwrap();
        assert_eq!(cf.depth(), 80);
        assert!(cf.partial_quotients.iter().all(|q| *q == BigUint::from(2u32)));
        cf.check_structure().unwrap();
        cf.check_best_approximation(&a).unwrap();
    }

    #[test]
    fn sqrt3_expansion() {
        let a = Frequency::sqrt_minus_floor(3, "sqrt3m1");
        let cf = continued_fraction(&a, 40).unwrap();
        let expect: Vec<u32> = (0..40).map(|k| if k % 2 == 0 { 1 } else { 2 }).collect();
        let got: Vec<u32> = cf.partial_quotients.iter().map(|q| q.to_u32().unwrap()).collect();
        assert_eq!(got, expect);
        cf.check_best_approximation(&a).unwrap();
    }

    #[test]
    fn precision_exhaustion_is_flagged() {
        let cf = continued_fraction(&golden(), 10_000).unwrap();
        assert_eq!(cf.status, ExpansionStatus::PrecisionExhausted);
        assert!(cf.depth() > 150 && cf.depth() < 200, "depth {}", cf.depth());
        cf.check_best_approximation(&golden()).unwrap();
    }

    #[test]
    fn rationals_are_flagged() {
        let half = Frequency::parse_decimal("0.5").unwrap();
        let cf = continued_fraction(&half, 5).unwrap();
        assert_eq!(cf.status, ExpansionStatus::Rational);
        assert_eq!(cf.partial_quotients, vec![BigUint::from(2u32)]);
        let three_eighths = Frequency::parse_decimal("0.375").unwrap();
        let cf = continued_fraction(&three_eighths, 10).unwrap();
        assert_eq!(cf.status, ExpansionStatus::Rational);
        let qs: Vec<u32> = cf.partial_quotients.iter().map(|q| q.to_u32().unwrap()).collect();
        assert_eq!(qs, vec![2, 1, 2]);
        assert!(continued_fraction(&golden(), 0).is_err());
    }

    #[test]
    fn intermediate_multiples_are_worse() {
        // For q_n < k < q_{n+1}: ||k alpha|| > ||q_n alpha||.
        for alpha in [golden(), Frequency::sqrt_minus_floor(2, "s2"), Frequency::sqrt_minus_floor(3, "s3")] {
            let cf = continued_fraction(&alpha, 60).unwrap();
            let qs: Vec<u64> = cf.denominators_u64().into_iter().filter(|&q| q < 100_000).collect();
            let t = alpha.turn();
            for w in qs.windows(2) {
                let base = t.mul_u128(w[0] as u128).norm();
                for k in w[0] + 1..w[1] {
                    assert!(t.mul_u128(k as u128).norm() > base, "k={k}");
                }
            }
        }
    }

    #[test]
    fn golden_dc_witness() {
        let rep = diophantine_check(&[golden()], 1.0, 10_000, Exec::Parallel).unwrap();
        assert!(rep.dc.min_value >= 0.38, "{}", rep.dc.min_value);
        // ||alpha|| = 1 - alpha = 1/(1 + phi).
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((rep.dc.min_value - 1.0 / (1.0 + phi)).abs() < 1e-12);
        assert_eq!(rep.dc.argmin, vec![1]);
        assert_eq!(rep.wdc.min_value, rep.dc.min_value);
        assert!(rep.pdc.is_none());
    }

    #[test]
    fn dc_witness_bounds_convergent_growth() {
        // c q_{n+1} <= q_n^tau for every convergent up to the scanned height.
        let alpha = Frequency::sqrt_minus_floor(3, "s3");
        let (tau, h) = (1.0, 20_000);
        let rep = diophantine_check(std::slice::from_ref(&alpha), tau, h, Exec::Parallel).unwrap();
        let c = rep.dc.min_value;
        let qs = continued_fraction(&alpha, 40).unwrap().denominators_u64();
        for w in qs.windows(2).filter(|w| w[1] <= h) {
            assert!(c * w[1] as f64 <= (w[0] as f64).powf(tau));
        }
    }

    #[test]
    fn equal_components_violate_pdc() {
        let rep = diophantine_check(&[golden(), golden()], 2.0, 30, Exec::Parallel).unwrap();
        let pdc = rep.pdc.unwrap();
        assert!(pdc.is_violated());
        assert_eq!(pdc.argmin, vec![1, -1]);
        assert!(rep.dc.is_violated());
        assert_eq!(rep.dc.argmin, vec![1, -1]);
    }

    #[test]
    fn scans_agree_across_strategies() {
        let alpha = [Frequency::sqrt_minus_floor(2, "a"), Frequency::sqrt_minus_floor(3, "b")];
        let a = diophantine_check(&alpha, 2.0, 300, Exec::Sequential).unwrap();
        let b = diophantine_check(&alpha, 2.0, 300, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(!a.pdc.as_ref().unwrap().is_violated());
    }

    #[test]
    fn dc_scan_matches_naive_enumeration() {
        let alpha = [Frequency::sqrt_minus_floor(2, "a"), Frequency::sqrt_minus_floor(3, "b")];
        let (tau, h) = (1.5, 60u64);
        let rep = diophantine_check(&alpha, tau, h, Exec::Sequential).unwrap();
        let (a1, a2) = (alpha[0].to_f64(), alpha[1].to_f64());
        let mut best = f64::INFINITY;
        for h1 in -(h as i64)..=h as i64 {
            for h2 in -(h as i64)..=h as i64 {
                if (h1, h2) == (0, 0) || r_height(&[h1, h2]) > h {
                    continue;
                }
                let x = h1 as f64 * a1 + h2 as f64 * a2;
                let nrm = (x - x.round()).abs();
                best = best.min(nrm * (r_height(&[h1, h2]) as f64).powf(tau));
            }
        }
        assert!((rep.dc.min_value - best).abs() < 1e-12 * best.max(1e-3));
    }

    #[test]
    fn one_dim_records_are_convergent_denominators() {
        for alpha in [golden(), Frequency::sqrt_minus_floor(2, "s2"), Frequency::sqrt_minus_floor(3, "s3")] {
            let qmax = 1_000_000;
            let sa = best_simultaneous_approximations(std::slice::from_ref(&alpha), qmax).unwrap();
            assert_eq!(sa.records[0].m, 1);
            let cf = continued_fraction(&alpha, 60).unwrap();
            let mut qs: Vec<u64> = std::iter::once(1)
                .chain(cf.denominators_u64())
                .filter(|&q| q <= qmax)
                .collect();
            qs.dedup();
            let ms: Vec<u64> = sa.records.iter().map(|r| r.m).collect();
            assert_eq!(ms, qs);
            sa.check_bound(1).unwrap();
            // Numerators are the nearest integers.
            for r in &sa.records {
                let x = r.m as f64 * alpha.to_f64();
                assert_eq!(r.ell[0], x.round() as i64);
            }
        }
    }

    #[test]
    fn simultaneous_records_satisfy_bound() {
        let alpha = [Frequency::sqrt_minus_floor(2, "a"), Frequency::sqrt_minus_floor(3, "b")];
        let sa = best_simultaneous_approximations(&alpha, 2_000_000).unwrap();
        assert!(sa.records.len() > 10);
        for w in sa.records.windows(2) {
            assert!(w[1].m > w[0].m && w[1].err < w[0].err);
        }
        sa.check_bound(2).unwrap();
        assert!(best_simultaneous_approximations(&alpha, 1).is_err());
    }

    #[test]
    fn bound_constants() {
        assert!((simultaneous_bound_constant(1) - 1.0).abs() < 1e-15);
        let pi = std::f64::consts::PI;
        assert!((simultaneous_bound_constant(2) - 2.0 / pi.sqrt()).abs() < 1e-15);
        let g52 = 0.75 * pi.sqrt();
        assert!((simultaneous_bound_constant(3) - 2.0 * g52.powf(1.0 / 3.0) / pi.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn liouville_square_growth() {
        let lf = liouville_construct(2.0, 5).unwrap();
        assert_eq!(lf.scales_achieved(), 5);
        lf.check_growth().unwrap();
        let qs: Vec<u64> = lf.planted.iter().map(|q| q.to_u64().unwrap()).collect();
        assert_eq!(qs, vec![1, 3, 13, 185, 34_423]);
        lf.expansion.check_structure().unwrap();
        lf.expansion.check_best_approximation(&lf.frequency).unwrap();
    }

    #[test]
    fn liouville_cubic_scales() {
        let lf = liouville_construct(3.0, 4).unwrap();
        lf.check_growth().unwrap();
        let qs: Vec<u64> = lf.planted.iter().map(|q| q.to_u64().unwrap()).collect();
        assert_eq!(qs, vec![1, 3, 31, 29_825]);
        // The certified expansion keeps going past the planted scales.
        let cf = continued_fraction(&lf.frequency, 6).unwrap();
        assert_eq!(cf.partial_quotients[..5], lf.expansion.partial_quotients[..5]);
    }

    #[test]
    fn liouville_violates_dc_at_planted_scales() {
        // ||q_k alpha|| q_k^tau < q_k^{tau - gamma} for tau < gamma.
        let gamma = 3.0;
        let lf = liouville_construct(gamma, 5).unwrap();
        let tau = 2.0;
        let vals: Vec<f64> = lf
            .planted
            .iter()
            .skip(1)
            .map(|q| norm_of_big_multiple(&lf.frequency, q) * big_ldexp(q, 0).powf(tau))
            .collect();
        for (v, q) in vals.iter().zip(lf.planted.iter().skip(1)) {
            assert!(*v < big_ldexp(q, 0).powf(tau - gamma) * 1.000_001);
        }
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(*vals.last().unwrap() < 1e-10);
    }

    #[test]
    fn liouville_budget_caps_scales() {
        let lf = liouville_construct(3.0, 50).unwrap();
        assert!(lf.scales_achieved() < 50);
        assert_eq!(lf.expansion.status, ExpansionStatus::PrecisionExhausted);
        assert!(lf.frequency.bits() <= MAX_BITS);
        lf.check_growth().unwrap();
    }

    #[test]
    fn liouville_fractional_gamma() {
        let lf = liouville_construct(2.5, 5).unwrap();
        lf.check_growth().unwrap();
        assert!(liouville_construct(1.0, 3).is_err());
    }

    #[test]
    fn frequency_tags() {
        assert_eq!(parse_frequency("golden").unwrap(), golden());
        assert!((parse_frequency("sqrt2m1").unwrap().to_f64() - (2f64.sqrt() - 1.0)).abs() < 3e-16);
        assert!((parse_frequency(" 0.25 ").unwrap().to_f64() - 0.25).abs() < 1e-16);
        let l = parse_frequency("liouville(3, 4)").unwrap();
        assert!(l.label().starts_with("liouville"));
        for bad in ["liouville(3)", "liouville(x,4)", "golden!", "pi"] {
            assert!(parse_frequency(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn ldexp_helpers() {
        let x = BigUint::one() << 3000usize;
        assert_eq!(big_ldexp(&x, -3000), 1.0);
        assert!((big_log2(&x) - 3000.0).abs() < 1e-12);
        assert_eq!(big_ldexp(&BigUint::from(3u32), -1), 1.5);
    }
}
