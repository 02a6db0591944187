//! Bounded remainder sets for rotations of `T^1` and `T^2`, with explicit
//! transfer functions `g` solving `χ_U(x) − |U| = g(x) − g(x − α)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::exec::Exec;
use crate::precision::Turn;
use crate::quadrature::integrate_panels;
use crate::{Error, Result};

fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

fn wrap_dist(a: f64) -> f64 {
    let f = frac(a);
    f.min(1.0 - f)
}

/// Transfer function of an interval `[c, c + |qβ − p|)` for rotation by `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTransfer {
    pub beta: f64,
    pub start: f64,
    /// Sign-normalised so that `qβ − p > 0`.
    pub q: i64,
    pub p: i64,
    pub length: f64,
}

impl IntervalTransfer {
    pub fn new(beta: f64, q: i64, p: i64, start: f64) -> Result<Self> {
        let kappa = q as f64 * beta - p as f64;
        if !(kappa.abs() > 0.0 && kappa.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "interval length |q beta - p| = {} must lie in (0, 1)",
                kappa.abs()
            )));
        }
        let (q, p) = if kappa < 0.0 { (-q, -p) } else { (q, p) };
        Ok(IntervalTransfer {
            beta,
            start,
            q,
            p,
            length: kappa.abs(),
        })
    }

    /// `−Σ_{j<q} {u − jβ}` for `q > 0`, `Σ_{1≤j≤|q|} {u + jβ}` for `q < 0`,
    /// with `u = x − c`.
    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.start;
        if self.q > 0 {
            -(0..self.q).map(|j| frac(u - j as f64 * self.beta)).sum::<f64>()
        } else {
            (1..=-self.q).map(|j| frac(u + j as f64 * self.beta)).sum::<f64>()
        }
    }

    pub fn bound(&self) -> f64 {
        self.q.unsigned_abs() as f64
    }

    /// Jump locations of `g` in `[0, 1)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let js: Vec<i64> = if self.q > 0 {
            (0..self.q).collect()
        } else {
            (1..=-self.q).map(|j| -j).collect()
        };
        js.into_iter()
            .map(|j| frac(self.start + j as f64 * self.beta))
            .collect()
    }

    pub fn indicator(&self, x: f64) -> f64 {
        if frac(x - self.start) < self.length {
            1.0
        } else {
            0.0
        }
    }

    fn near_jump(&self, x: f64, eps: f64) -> bool {
        self.breakpoints().iter().any(|&b| wrap_dist(x - b) < eps)
    }
}

/// Transfer function of the parallelogram spanned by `v = mα − ℓ` and
/// `(qβ − p, 0)`, `β = v_1 / v_2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelogramTransfer {
    pub alpha: [f64; 2],
    pub m: i64,
    pub v: [f64; 2],
    pub h: IntervalTransfer,
    pub q_input: i64,
}

impl ParallelogramTransfer {
    /// `g̃(x, y) = h(x − β{y}) − |Σ| {y}`, negated when `v2 < 0`.
    pub fn g_tilde(&self, x: f64, y: f64) -> f64 {
        let fy = frac(y);
        let g = self.h.eval(x - self.h.beta * fy) - self.h.length * fy;
        g * self.v[1].signum()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [a1, a2] = self.alpha;
        if self.m > 0 {
            (0..self.m)
                .map(|j| self.g_tilde(x - j as f64 * a1, y - j as f64 * a2))
                .sum()
        } else {
            -(1..=-self.m)
                .map(|j| self.g_tilde(x + j as f64 * a1, y + j as f64 * a2))
                .sum::<f64>()
        }
    }

    /// The certified bound `2|mq|`.
    pub fn bound(&self) -> f64 {
        2.0 * (self.m.unsigned_abs() * self.q_input.unsigned_abs()) as f64
    }

    fn near_jump(&self, x: f64, y: f64, eps: f64) -> bool {
        let [a1, a2] = self.alpha;
        let shifts: Vec<i64> = if self.m > 0 {
            (0..self.m).map(|j| -j).collect()
        } else {
            (1..=-self.m).collect()
        };
        let slack = eps * (1.0 + self.h.beta.abs());
        shifts.into_iter().any(|j| {
            let (xs, ys) = (x + j as f64 * a1, y + j as f64 * a2);
            let fy = frac(ys);
            fy.min(1.0 - fy) < eps || self.h.near_jump(xs - self.h.beta * fy, slack)
        })
    }
}

/// A bounded remainder set together with the rotation it is adapted to.
#[derive(Clone, Debug, PartialEq)]
pub enum BrsSet {
    Interval {
        alpha: Turn,
        q: i64,
        p: i64,
        start: Turn,
    },
    Parallelogram {
        alpha: [Turn; 2],
        m: i64,
        l1: i64,
        l2: i64,
        q: i64,
        p: i64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransferFunction {
    Interval(IntervalTransfer),
    Parallelogram(ParallelogramTransfer),
}

impl TransferFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TransferFunction::Interval(t) => t.eval(x[0]),
            TransferFunction::Parallelogram(t) => t.eval(x[0], x[1]),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            TransferFunction::Interval(t) => t.bound(),
            TransferFunction::Parallelogram(t) => t.bound(),
        }
    }

    /// True if `x` or `x − α` lies within `eps` of a discontinuity of `g`.
    pub fn near_discontinuity(&self, x: &[f64], alpha: &[f64], eps: f64) -> bool {
        match self {
            TransferFunction::Interval(t) => t.near_jump(x[0], eps) || t.near_jump(x[0] - alpha[0], eps),
            TransferFunction::Parallelogram(t) => {
                t.near_jump(x[0], x[1], eps) || t.near_jump(x[0] - alpha[0], x[1] - alpha[1], eps)
            }
        }
    }
}

impl BrsSet {
    pub fn dim(&self) -> usize {
        match self {
            BrsSet::Interval { .. } => 1,
            BrsSet::Parallelogram { .. } => 2,
        }
    }

    pub fn alpha_turns(&self) -> Vec<Turn> {
        match self {
            BrsSet::Interval { alpha, .. } => vec![*alpha],
            BrsSet::Parallelogram { alpha, .. } => alpha.to_vec(),
        }
    }

    pub fn alpha_f64(&self) -> Vec<f64> {
        self.alpha_turns().iter().map(|a| a.to_f64()).collect()
    }

    /// `v = mα − ℓ` for the parallelogram.
    fn spanning(&self) -> Option<([f64; 2], f64)> {
        match self {
            BrsSet::Parallelogram {
                alpha, m, l1, l2, q, p, ..
            } => {
                let v1 = *m as f64 * alpha[0].to_f64() - *l1 as f64;
                let v2 = *m as f64 * alpha[1].to_f64() - *l2 as f64;
                let kappa = *q as f64 * v1 / v2 - *p as f64;
                Some(([v1, v2], kappa))
            }
            _ => None,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            BrsSet::Interval { alpha, q, p, .. } => (*q as f64 * alpha.to_f64() - *p as f64).abs(),
            BrsSet::Parallelogram { .. } => {
                let (v, kappa) = self.spanning().expect("parallelogram");
                (v[1] * kappa).abs()
            }
        }
    }

    pub fn transfer(&self) -> Result<TransferFunction> {
        match self {
            BrsSet::Interval { alpha, q, p, start } => Ok(TransferFunction::Interval(
                interval_transfer_at(alpha.to_f64(), *q, *p, start.to_f64())?,
            )),
            BrsSet::Parallelogram {
                alpha, m, l1, l2, q, p, ..
            } => Ok(TransferFunction::Parallelogram(parallelogram_transfer(
                alpha[0].to_f64(),
                alpha[1].to_f64(),
                *m,
                *l1,
                *l2,
                *q,
                *p,
            )?)),
        }
    }

    /// Exact membership for an interval; sheared coordinates for a parallelogram.
    pub fn contains(&self, x: &[Turn]) -> bool {
        match self {
            BrsSet::Interval { alpha, q, p, start } => {
                let kappa = alpha.mul_int(*q as i128);
                let positive = (*q as f64 * alpha.to_f64() - *p as f64) > 0.0;
                let (lo, len) = if positive { (*start, kappa) } else { (*start + kappa, -kappa) };
                (x[0] - lo) < len
            }
            BrsSet::Parallelogram { .. } => {
                let (v, kappa) = self.spanning().expect("parallelogram");
                parallelogram_multiplicity(x[0].to_f64(), x[1].to_f64(), v, kappa) > 0
            }
        }
    }

    pub fn contains_f64(&self, x: &[f64]) -> bool {
        match self {
            BrsSet::Interval { .. } => {
                self.contains(&[Turn::from_f64(x[0])])
            }
            BrsSet::Parallelogram { .. } => {
                let (v, kappa) = self.spanning().expect("parallelogram");
                parallelogram_multiplicity(x[0], x[1], v, kappa) > 0
            }
        }
    }
}

/// Number of lattice translates of `(x, y)` inside `{s (κ, 0) + t v : s, t ∈ [0, 1)}`.
fn parallelogram_multiplicity(x: f64, y: f64, v: [f64; 2], kappa: f64) -> usize {
    // Solve (x, y) + k = s (κ, 0) + t v.
    let xs = [0.0, kappa, v[0], kappa + v[0]];
    let ys = [0.0, v[1]];
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (ymin, ymax) = (ys[0].min(ys[1]), ys[0].max(ys[1]));
    let mut count = 0;
    for ky in (ymin - y).floor() as i64..=(ymax - y).ceil() as i64 {
        let yy = y + ky as f64;
        let t = yy / v[1];
        if !(0.0..1.0).contains(&t) {
            continue;
        }
        for kx in (xmin - x).floor() as i64..=(xmax - x).ceil() as i64 {
            let s = (x + kx as f64 - t * v[0]) / kappa;
            if (0.0..1.0).contains(&s) {
                count += 1;
            }
        }
    }
    count
}

/// Transfer function of `[0, |qα − p|)` for rotation by `α`.
pub fn interval_transfer(alpha: f64, q: i64, p: i64) -> Result<IntervalTransfer> {
    interval_transfer_at(alpha, q, p, 0.0)
}

/// Same as [`interval_transfer`] for the interval starting at `start`
/// (or ending at `start` when `qα − p < 0`).
pub fn interval_transfer_at(alpha: f64, q: i64, p: i64, start: f64) -> Result<IntervalTransfer> {
    let kappa = q as f64 * alpha - p as f64;
    let start = if kappa < 0.0 { start + kappa } else { start };
    IntervalTransfer::new(alpha, q, p, start)
}

pub fn parallelogram_transfer(
    alpha1: f64,
    alpha2: f64,
    m: i64,
    l1: i64,
    l2: i64,
    q: i64,
    p: i64,
) -> Result<ParallelogramTransfer> {
    if m == 0 {
        return Err(Error::invalid("parallelogram needs m != 0"));
    }
    let v1 = m as f64 * alpha1 - l1 as f64;
    let v2 = m as f64 * alpha2 - l2 as f64;
    if v2.abs() < 1e-12 {
        return Err(Error::invalid("degenerate spanning vectors: v2 = 0"));
    }
    let beta = v1 / v2;
    let h = interval_transfer_at(beta, q, p, 0.0)
        .map_err(|e| Error::invalid(format!("degenerate base interval: {e}")))?;
    Ok(ParallelogramTransfer {
        alpha: [alpha1, alpha2],
        m,
        v: [v1, v2],
        h,
        q_input: q,
    })
}

/// `A_N(U, x_0) − N |U|` at the requested orbit lengths (sorted ascending).
pub fn remainder_at(u: &BrsSet, x0: &[Turn], ns: &[u64]) -> Result<Vec<f64>> {
    if x0.len() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: x0.len(),
        });
    }
    if ns.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("orbit lengths must be sorted"));
    }
    let alpha = u.alpha_turns();
    let vol = u.volume();
    let mut x = x0.to_vec();
    let mut count: u64 = 0;
    let mut out = Vec::with_capacity(ns.len());
    let mut n: u64 = 0;
    for &target in ns {
        while n < target {
            if u.contains(&x) {
                count += 1;
            }
            for (c, &a) in x.iter_mut().zip(&alpha) {
                *c += a;
            }
            n += 1;
        }
        out.push(count as f64 - n as f64 * vol);
    }
    Ok(out)
}

/// `sup_{N ≤ N_max} |A_N(U, x_0) − N |U||`.
pub fn remainder_sup(u: &BrsSet, x0: &[Turn], nmax: u64) -> Result<f64> {
    if x0.len() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: x0.len(),
        });
    }
    birkhoff_remainder_sup(&u.alpha_turns(), |x| u.contains(x), u.volume(), x0, nmax)
}

/// Running supremum of the Birkhoff remainder of an arbitrary region under
/// the rotation by `alpha`.
pub fn birkhoff_remainder_sup<F>(alpha: &[Turn], contains: F, volume: f64, x0: &[Turn], nmax: u64) -> Result<f64>
where
    F: Fn(&[Turn]) -> bool,
{
    if nmax == 0 {
        return Err(Error::invalid("Nmax must be at least 1"));
    }
    if x0.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut count: u64 = 0;
    let mut sup: f64 = 0.0;
    for n in 1..=nmax {
        if contains(&x) {
            count += 1;
        }
        sup = sup.max((count as f64 - n as f64 * volume).abs());
        for (c, &a) in x.iter_mut().zip(alpha) {
            *c += a;
        }
    }
    Ok(sup)
}

/// [`remainder_sup`] for many starting points.
pub fn remainder_sup_many(u: &BrsSet, starts: &[Vec<Turn>], nmax: u64, exec: Exec) -> Result<Vec<f64>> {
    exec.map(starts, |x0| remainder_sup(u, x0, nmax))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierCheck {
    pub mode: i64,
    pub computed: [f64; 2],
    pub predicted: [f64; 2],
    pub error: f64,
}

/// Compare `ĝ(m)` with `χ̂_I(m) / (1 − e^{−2πimα})` for `m = 1..=modes`.
///
/// `ĝ(m)` is integrated with Gauss–Legendre panels split at the jumps of `g`,
/// so the only error is the (spectrally small) quadrature error on smooth pieces.
pub fn interval_fourier_check(g: &IntervalTransfer, modes: usize) -> Vec<FourierCheck> {
    let mut breaks = g.breakpoints();
    breaks.push(frac(g.start + g.length));
    (1..=modes as i64)
        .map(|m| {
            let w = std::f64::consts::TAU * m as f64;
            let re = integrate_panels(|x| g.eval(x) * (w * x).cos(), 0.0, 1.0, &breaks, 20, 8);
            let im = integrate_panels(|x| -g.eval(x) * (w * x).sin(), 0.0, 1.0, &breaks, 20, 8);
            let computed = Complex64::new(re, im);
            // χ̂ of [c, c + κ) is e^{−2πimc} (1 − e^{−2πimκ}) / (2πim).
            let i = Complex64::i();
            let chi = (-i * w * g.start).exp() * (1.0 - (-i * w * g.length).exp()) / (i * w);
            let predicted = chi / (1.0 - (-i * w * g.beta).exp());
            FourierCheck {
                mode: m,
                computed: [computed.re, computed.im],
                predicted: [predicted.re, predicted.im],
                error: (computed - predicted).norm(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::Frequency;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden() -> f64 {
        Frequency::golden().to_f64()
    }

    fn golden_interval() -> BrsSet {
        BrsSet::Interval {
            alpha: Frequency::golden().turn(),
            q: 1,
            p: 0,
            start: Turn::ZERO,
        }
    }

    fn pair() -> [Frequency; 2] {
        [
            Frequency::sqrt_minus_floor(2, "sqrt2m1"),
            Frequency::sqrt_minus_floor(3, "sqrt3m1"),
        ]
    }

    fn cohomology_error(u: &BrsSet, samples: usize, seed: u64) -> (f64, usize) {
        let g = u.transfer().unwrap();
        let alpha = u.alpha_f64();
        let vol = u.volume();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut used = 0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..u.dim()).map(|_| rng.gen()).collect();
            if g.near_discontinuity(&x, &alpha, 1e-6) {
                continue;
            }
            let shifted: Vec<f64> = x.iter().zip(&alpha).map(|(a, b)| frac(a - b)).collect();
            let chi = if u.contains_f64(&x) { 1.0 } else { 0.0 };
            let err = (chi - vol - (g.eval(&x) - g.eval(&shifted))).abs();
            worst = worst.max(err);
            used += 1;
        }
        (worst, used)
    }

    #[test]
    fn q_one_transfer_is_minus_frac() {
        let g = interval_transfer(golden(), 1, 0).unwrap();
        assert_eq!(g.bound(), 1.0);
        for x in [0.0, 0.1, 0.5, 0.99] {
            assert_eq!(g.eval(x), -x);
        }
        assert!(interval_transfer(golden(), 0, 0).is_err());
        assert!(interval_transfer(0.5, 2, 1).is_err());
    }

    #[test]
    fn interval_cohomological_identity() {
        let a = golden();
        for (q, p) in [(1, 0), (2, 1), (3, 2), (5, 3), (-1, -1), (-2, -1), (4, 2), (-3, -2)] {
            let k = q as f64 * a - p as f64;
            if !(k.abs() > 0.0 && k.abs() < 1.0) {
                continue;
            }
            for start in [Turn::ZERO, Turn::from_f64(0.37)] {
                let u = BrsSet::Interval {
                    alpha: Frequency::golden().turn(),
                    q,
                    p,
                    start,
                };
                let (err, used) = cohomology_error(&u, 10_000, 1);
                assert!(err < 1e-10, "q={q} p={p}: {err}");
                assert!(used > 9_000);
            }
        }
    }

    #[test]
    fn interval_bound_on_grid() {
        for (q, p) in [(1, 0), (3, 2), (-2, -1)] {
            let g = interval_transfer(golden(), q, p).unwrap();
            let worst = (0..100_000).map(|i| g.eval(i as f64 / 1e5).abs()).fold(0.0, f64::max);
            assert!(worst <= g.bound());
        }
    }

    #[test]
    fn parallelogram_cohomological_identity() {
        let [a1, a2] = pair();
        let (t1, t2) = (a1.turn(), a2.turn());
        // Covers both signs of m, of v2 and of q.
        let cases = [
            (1, 0, 0, 1, 0),
            (1, 0, 1, 1, -2),
            (2, 1, 1, 1, 0),
            (-1, 0, -1, 1, -2),
            (-1, 0, 0, 1, 0),
            (1, 0, 0, 2, 1),
            (1, 0, 0, -1, -1),
            (3, 1, 2, 1, 1),
        ];
        for (m, l1, l2, q, p) in cases {
            let u = BrsSet::Parallelogram {
                alpha: [t1, t2],
                m,
                l1,
                l2,
                q,
                p,
            };
            let (err, used) = cohomology_error(&u, 10_000, 2);
            assert!(err < 1e-9, "case {:?}: err {err}", (m, l1, l2, q, p));
            assert!(used > 8_000, "case {:?}: used {used}", (m, l1, l2, q, p));
        }
    }

    #[test]
    fn parallelogram_area_and_bound() {
        let [a1, a2] = pair();
        let u = BrsSet::Parallelogram {
            alpha: [a1.turn(), a2.turn()],
            m: 1,
            l1: 0,
            l2: 0,
            q: 1,
            p: 0,
        };
        // Area |v2 κ| = |v1| = α1 when m = q = 1, ℓ = p = 0.
        assert!((u.volume() - a1.to_f64()).abs() < 1e-15);
        let g = u.transfer().unwrap();
        assert_eq!(g.bound(), 2.0);
        let mut worst: f64 = 0.0;
        for i in 0..512 {
            for j in 0..512 {
                worst = worst.max(g.eval(&[i as f64 / 512.0, j as f64 / 512.0]).abs());
            }
        }
        assert!(worst <= g.bound());
        // Monte Carlo area agrees with the formula.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hits = (0..200_000)
            .filter(|_| u.contains_f64(&[rng.gen(), rng.gen()]))
            .count();
        assert!((hits as f64 / 2e5 - u.volume()).abs() < 5e-3);
    }

    #[test]
    fn degenerate_parallelograms_rejected() {
        assert!(parallelogram_transfer(0.3, 0.5, 2, 0, 1, 1, 0).is_err());
        assert!(parallelogram_transfer(0.3, 0.4, 0, 0, 0, 1, 0).is_err());
        assert!(parallelogram_transfer(0.3, 0.6, 1, 0, 0, 2, 1).is_err());
    }

    #[test]
    fn golden_interval_remainder_bounded() {
        let u = golden_interval();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let starts: Vec<Vec<Turn>> = (0..4).map(|_| vec![Turn(rng.gen())]).collect();
        for s in remainder_sup_many(&u, &starts, 1_000_000, Exec::Parallel).unwrap() {
            assert!(s <= 2.0, "{s}");
        }
    }

    #[test]
    fn telescoping_bound_at_decades() {
        let [a1, a2] = pair();
        let sets = [
            golden_interval(),
            BrsSet::Interval {
                alpha: Frequency::golden().turn(),
                q: 3,
                p: 2,
                start: Turn::from_f64(0.2),
            },
            BrsSet::Parallelogram {
                alpha: [a1.turn(), a2.turn()],
                m: 1,
                l1: 0,
                l2: 0,
                q: 1,
                p: 0,
            },
        ];
        let ns: Vec<u64> = (1..=5).map(|k| 10u64.pow(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for u in &sets {
            let bound = 2.0 * u.transfer().unwrap().bound();
            for _ in 0..8 {
                let x0: Vec<Turn> = (0..u.dim()).map(|_| Turn(rng.gen())).collect();
                for r in remainder_at(u, &x0, &ns).unwrap() {
                    assert!(r.abs() <= bound, "{r} > {bound}");
                }
            }
        }
    }

    #[test]
    fn half_interval_is_not_brs() {
        let alpha = [Frequency::golden().turn()];
        let half = |x: &[Turn]| x[0] < Turn::HALF;
        let sup = birkhoff_remainder_sup(&alpha, half, 0.5, &[Turn::ZERO], 1_000_000).unwrap();
        assert!(sup > 2.0, "{sup}");
    }

    #[test]
    fn fourier_identity_on_intervals() {
        for (q, p, c) in [(1, 0, 0.0), (2, 1, 0.0), (3, 2, 0.3), (-1, -1, 0.1)] {
            let g = interval_transfer_at(golden(), q, p, c).unwrap();
            for row in interval_fourier_check(&g, 16) {
                assert!(row.error < 1e-6, "q={q} mode {}: {}", row.mode, row.error);
            }
        }
    }
}
