//! Schrödinger cocycles `A(θ, z) = [[z − φ(θ), −1], [1, 0]]` over a torus map.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::precision::Turn;
use crate::quadrature::CompensatedSum;
use crate::torus::{turn_distance, MapSpec, TorusPoint};
use crate::{Error, Result};

type C = Complex64;
pub type Mat2 = [[C; 2]; 2];

/// Part of a piecewise sampling function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PieceFunction {
    Constant { value: f64 },
    /// `a cos(2π⟨k, θ⟩ + phase)`.
    Cosine { amplitude: f64, mode: Vec<i64>, phase: f64 },
    /// `a · dist(θ, c)^γ`.
    Power { amplitude: f64, center: Vec<f64>, exponent: f64 },
}

impl PieceFunction {
    fn eval(&self, theta: &[Turn]) -> f64 {
        match self {
            PieceFunction::Constant { value } => *value,
            PieceFunction::Cosine { amplitude, mode, phase } => {
                let arg = mode
                    .iter()
                    .zip(theta)
                    .fold(Turn::ZERO, |acc, (&k, t)| acc + t.mul_int(k as i128));
                amplitude * (std::f64::consts::TAU * arg.to_f64() + phase).cos()
            }
            PieceFunction::Power { amplitude, center, exponent } => {
                let c: Vec<Turn> = center.iter().map(|&x| Turn::from_f64(x)).collect();
                amplitude * turn_distance(theta, &c).powf(*exponent)
            }
        }
    }

    /// `(γ, sup |φ_j|, Hölder constant)`.
    fn holder(&self, d: usize) -> (f64, f64, f64) {
        match self {
            PieceFunction::Constant { value } => (1.0, value.abs(), 0.0),
            PieceFunction::Cosine { amplitude, mode, .. } => {
                let k = mode.iter().map(|&m| (m * m) as f64).sum::<f64>().sqrt();
                (1.0, amplitude.abs(), std::f64::consts::TAU * amplitude.abs() * k)
            }
            PieceFunction::Power { amplitude, exponent, .. } => {
                let diam = (d as f64).sqrt() / 2.0;
                (*exponent, amplitude.abs() * diam.powf(*exponent), amplitude.abs())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderPiece {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub function: PieceFunction,
}

impl HolderPiece {
    fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&t, (&a, &b))| t >= a - slack && t < b + slack)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderData {
    pub gamma: f64,
    /// `Σ_j (‖φ_j‖_∞ + Hölder constant of φ_j)`.
    pub norm_sum: f64,
}

/// The potential sampled along the orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingFunction {
    /// `2λ cos(2πθ_1)`.
    Cosine { lambda: f64 },
    PiecewiseHolder { dim: usize, pieces: Vec<HolderPiece> },
    /// Periodic linear interpolation of `values` at `θ_1 = k / len`.
    Tabulated { values: Vec<f64> },
}

impl SamplingFunction {
    pub fn free() -> Self {
        SamplingFunction::Cosine { lambda: 0.0 }
    }

    /// Checks that the boxes partition `T^d` on a seeded sample of points.
    pub fn piecewise(dim: usize, pieces: Vec<HolderPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("piecewise function needs at least one piece"));
        }
        for (j, p) in pieces.iter().enumerate() {
            if p.lo.len() != dim || p.hi.len() != dim {
                return Err(Error::invalid(format!("piece {j} has the wrong dimension")));
            }
            if p.lo.iter().zip(&p.hi).any(|(a, b)| !(0.0 <= *a && a < b && *b <= 1.0)) {
                return Err(Error::invalid(format!("piece {j} is not a box inside [0,1]^d")));
            }
            if let PieceFunction::Power { exponent, center, .. } = &p.function {
                if !(*exponent > 0.0 && *exponent <= 1.0) || center.len() != dim {
                    return Err(Error::invalid(format!("piece {j}: exponent must lie in (0, 1]")));
                }
            }
        }
        let volume: f64 = pieces
            .iter()
            .map(|p| p.lo.iter().zip(&p.hi).map(|(a, b)| b - a).product::<f64>())
            .sum();
        if (volume - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("pieces cover volume {volume}, not 1")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let hits = pieces.iter().filter(|p| p.contains(&x, 0.0)).count();
            if hits != 1 {
                return Err(Error::invalid(format!("point {x:?} lies in {hits} pieces")));
            }
        }
        Ok(SamplingFunction::PiecewiseHolder { dim, pieces })
    }

    pub fn eval(&self, theta: &[Turn]) -> f64 {
        match self {
            SamplingFunction::Cosine { lambda } => 2.0 * lambda * (std::f64::consts::TAU * theta[0].to_f64()).cos(),
            SamplingFunction::PiecewiseHolder { pieces, .. } => {
                let x: Vec<f64> = theta.iter().map(|t| t.to_f64()).collect();
                // Points within 1e-12 of a boundary go to the first listed piece.
                pieces
                    .iter()
                    .find(|p| p.contains(&x, 1e-12))
                    .map(|p| p.function.eval(theta))
                    .unwrap_or(f64::NAN)
            }
            SamplingFunction::Tabulated { values } => {
                let n = values.len();
                let s = theta[0].to_f64() * n as f64;
                let i = (s.floor() as usize).min(n - 1);
                let w = s - i as f64;
                values[i] * (1.0 - w) + values[(i + 1) % n] * w
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            SamplingFunction::Cosine { lambda } => 2.0 * lambda.abs(),
            SamplingFunction::PiecewiseHolder { dim, pieces } => {
                pieces.iter().map(|p| p.function.holder(*dim).1).fold(0.0, f64::max)
            }
            SamplingFunction::Tabulated { values } => values.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }

    /// Hölder exponent and summed norms. The exponent is the minimum over
    /// pieces; Lipschitz constants carry over because torus distances are at
    /// most 1 for `d ≤ 4`.
    pub fn holder_data(&self) -> HolderData {
        match self {
            SamplingFunction::Cosine { lambda } => HolderData {
                gamma: 1.0,
                norm_sum: 2.0 * lambda.abs() * (1.0 + std::f64::consts::TAU),
            },
            SamplingFunction::PiecewiseHolder { dim, pieces } => {
                let data: Vec<_> = pieces.iter().map(|p| p.function.holder(*dim)).collect();
                HolderData {
                    gamma: data.iter().map(|d| d.0).fold(1.0, f64::min),
                    norm_sum: data.iter().map(|d| d.1 + d.2).sum(),
                }
            }
            SamplingFunction::Tabulated { values } => {
                let n = values.len();
                let lip = (0..n)
                    .map(|i| (values[(i + 1) % n] - values[i]).abs())
                    .fold(0.0, f64::max)
                    * n as f64;
                HolderData {
                    gamma: 1.0,
                    norm_sum: self.sup_norm() + lip,
                }
            }
        }
    }

    /// Hölder constant of the piece containing `theta` (for the sampled check).
    pub fn piece_index(&self, theta: &[Turn]) -> Option<usize> {
        match self {
            SamplingFunction::PiecewiseHolder { pieces, .. } => {
                let x: Vec<f64> = theta.iter().map(|t| t.to_f64()).collect();
                pieces.iter().position(|p| p.contains(&x, 1e-12))
            }
            _ => Some(0),
        }
    }

    pub fn piece_constant(&self, j: usize) -> (f64, f64) {
        match self {
            SamplingFunction::PiecewiseHolder { dim, pieces } => {
                let (g, _, c) = pieces[j].function.holder(*dim);
                (g, c)
            }
            SamplingFunction::Cosine { lambda } => (1.0, 2.0 * std::f64::consts::TAU * lambda.abs()),
            SamplingFunction::Tabulated { .. } => {
                let h = self.holder_data();
                (1.0, h.norm_sum - self.sup_norm())
            }
        }
    }
}

pub fn transfer_matrix(theta: &[Turn], z: C, phi: &SamplingFunction) -> Mat2 {
    let one = C::new(1.0, 0.0);
    [[z - phi.eval(theta), -one], [one, C::new(0.0, 0.0)]]
}

fn inverse_transfer(theta: &[Turn], z: C, phi: &SamplingFunction) -> Mat2 {
    let one = C::new(1.0, 0.0);
    [[C::new(0.0, 0.0), one], [-one, z - phi.eval(theta)]]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn det(a: &Mat2) -> C {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Largest singular value of a 2×2 matrix.
pub fn spectral_norm(a: &Mat2) -> f64 {
    let f: f64 = a.iter().flatten().map(|x| x.norm_sqr()).sum();
    let d = det(a).norm();
    let disc = (f * f - 4.0 * d * d).max(0.0).sqrt();
    ((f + disc) / 2.0).sqrt()
}

/// A cocycle product `A_n = Q R`, with `Q` unitary and
/// `R = e^{l1} [[1, ρ], [0, t]]`, `t = e^{l2 − l1}`.
///
/// Re-orthogonalising every step keeps both singular directions accurate, so
/// the determinant `e^{l1 + l2} det Q` stays checkable for very long products.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferProduct {
    pub n: u64,
    pub z: C,
    q: Mat2,
    rho: C,
    t: f64,
    l1: f64,
    l2: f64,
}

struct LogAccumulator {
    base: f64,
    scale: f64,
}

impl LogAccumulator {
    fn new() -> Self {
        LogAccumulator { base: 0.0, scale: 1.0 }
    }

    fn mul(&mut self, x: f64) {
        self.scale *= x;
        if !(1e-150..=1e150).contains(&self.scale) {
            self.base += self.scale.ln();
            self.scale = 1.0;
        }
    }

    fn value(&self) -> f64 {
        self.base + self.scale.ln()
    }
}

impl TransferProduct {
    pub fn identity(z: C) -> Self {
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        TransferProduct {
            n: 0,
            z,
            q: [[one, zero], [zero, one]],
            rho: zero,
            t: 1.0,
            l1: 0.0,
            l2: 0.0,
        }
    }

    /// `log ‖A_n‖` in the spectral norm.
    pub fn log_norm(&self) -> f64 {
        let r = [[C::new(1.0, 0.0), self.rho], [C::new(0.0, 0.0), C::new(self.t, 0.0)]];
        self.l1 + spectral_norm(&r).ln()
    }

    /// Logarithm of the carried scale `e^{l1}`.
    pub fn log_scale(&self) -> f64 {
        self.l1
    }

    /// `A_n e^{−l1}`.
    pub fn scaled_matrix(&self) -> Mat2 {
        let r = [[C::new(1.0, 0.0), self.rho], [C::new(0.0, 0.0), C::new(self.t, 0.0)]];
        mat_mul(&self.q, &r)
    }

    /// `|det A_n − 1|`, evaluated as `|e^{l1 + l2} det Q − 1|`.
    pub fn det_defect(&self) -> f64 {
        (det(&self.q) * (self.l1 + self.l2).exp() - 1.0).norm()
    }

    /// `A ← M A`.
    pub fn left_multiply(&mut self, m: &Mat2) {
        let mut l1 = LogAccumulator::new();
        let mut l2 = LogAccumulator::new();
        self.left_multiply_acc(m, &mut l1, &mut l2);
        self.l1 += l1.value();
        self.l2 += l2.value();
    }

    fn left_multiply_acc(&mut self, m: &Mat2, l1: &mut LogAccumulator, l2: &mut LogAccumulator) {
        let mq = mat_mul(m, &self.q);
        let c0 = [mq[0][0], mq[1][0]];
        let c1 = [mq[0][1], mq[1][1]];
        let r11 = (c0[0].norm_sqr() + c0[1].norm_sqr()).sqrt();
        let q0 = [c0[0] / r11, c0[1] / r11];
        let r12 = q0[0].conj() * c1[0] + q0[1].conj() * c1[1];
        let w = [c1[0] - r12 * q0[0], c1[1] - r12 * q0[1]];
        let r22 = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
        let q1 = [w[0] / r22, w[1] / r22];
        self.q = [[q0[0], q1[0]], [q0[1], q1[1]]];
        self.rho += r12 / r11 * self.t;
        self.t *= r22 / r11;
        if self.t < 1e-300 {
            self.t = 0.0;
        }
        l1.mul(r11);
        l2.mul(r22);
        self.n += 1;
    }
}

/// Runs the forward (`direction = 1`) or backward product and calls `visit`
/// with `(k, log ‖A_{±k}‖)` after each step.
pub fn product_trace<F: FnMut(u64, f64)>(
    map: &MapSpec,
    theta: &TorusPoint,
    z: C,
    n: u64,
    phi: &SamplingFunction,
    direction: i8,
    mut visit: F,
) -> TransferProduct {
    let mut x = theta.coords().to_vec();
    let mut prod = TransferProduct::identity(z);
    let (mut l1, mut l2) = (LogAccumulator::new(), LogAccumulator::new());
    for k in 1..=n {
        let m = if direction >= 0 {
            let m = transfer_matrix(&x, z, phi);
            map.step_in_place(&mut x);
            m
        } else {
            map.inverse_step_in_place(&mut x);
            inverse_transfer(&x, z, phi)
        };
        prod.left_multiply_acc(&m, &mut l1, &mut l2);
        visit(k, prod.log_norm() + l1.value());
    }
    prod.l1 += l1.value();
    prod.l2 += l2.value();
    prod
}

/// `A_n(θ, z) = A(f^{n−1}θ, z) ⋯ A(θ, z)`.
pub fn cocycle_product(map: &MapSpec, theta: &TorusPoint, z: C, n: u64, phi: &SamplingFunction) -> TransferProduct {
    let mut x = theta.coords().to_vec();
    let mut prod = TransferProduct::identity(z);
    let (mut l1, mut l2) = (LogAccumulator::new(), LogAccumulator::new());
    for _ in 0..n {
        let m = transfer_matrix(&x, z, phi);
        prod.left_multiply_acc(&m, &mut l1, &mut l2);
        map.step_in_place(&mut x);
    }
    prod.l1 += l1.value();
    prod.l2 += l2.value();
    prod
}

/// Deterministic phases: midpoints for `d = 1`, an additive recurrence with
/// the generalised golden ratio otherwise.
pub fn phase_grid(d: usize, count: usize) -> Vec<TorusPoint> {
    if d == 1 {
        return (0..count)
            .map(|k| TorusPoint::new(vec![Turn::from_f64((k as f64 + 0.5) / count as f64)]).unwrap())
            .collect();
    }
    // Root of x^{d+1} = x + 1.
    let mut g = 2.0f64;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (d as f64 + 1.0));
    }
    let steps: Vec<Turn> = (1..=d).map(|j| Turn::from_f64(g.powi(-(j as i32)))).collect();
    (0..count)
        .map(|k| {
            let coords = steps
                .iter()
                .map(|s| Turn::HALF + s.mul_int(k as i128))
                .collect();
            TorusPoint::new(coords).unwrap()
        })
        .collect()
}

pub fn random_phases(d: usize, count: usize, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| TorusPoint::new((0..d).map(|_| Turn(rng.gen())).collect()).unwrap())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub energy: f64,
    /// Mean over seeded uniform phases.
    pub value: f64,
    pub stderr: f64,
    /// Mean over the deterministic phase grid.
    pub grid_value: f64,
    pub n: u64,
    pub phases: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut s = CompensatedSum::new();
    xs.iter().for_each(|&x| s.add(x));
    let mean = s.value() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn lyapunov_estimate(
    map: &MapSpec,
    phi: &SamplingFunction,
    z: C,
    n: u64,
    phases: usize,
    seed: u64,
    exec: Exec,
) -> Result<LyapunovEstimate> {
    if n == 0 || phases == 0 {
        return Err(Error::invalid("need n >= 1 and at least one phase"));
    }
    let d = map.dim();
    let sample = random_phases(d, phases, seed);
    let grid = phase_grid(d, phases);
    let all: Vec<&TorusPoint> = sample.iter().chain(&grid).collect();
    let exps = exec.map(&all, |th| cocycle_product(map, th, z, n, phi).log_norm() / n as f64);
    let (value, stderr) = mean_stderr(&exps[..phases]);
    let (grid_value, _) = mean_stderr(&exps[phases..]);
    Ok(LyapunovEstimate {
        energy: z.re,
        value,
        stderr,
        grid_value,
        n,
        phases,
    })
}

/// `max_θ (1/n) log ‖A_n(θ, z)‖` over the deterministic phase grid.
pub fn uniform_upper_scan(map: &MapSpec, phi: &SamplingFunction, z: C, n: u64, grid: usize, exec: Exec) -> Result<f64> {
    if n == 0 || grid == 0 {
        return Err(Error::invalid("need n >= 1 and a nonempty phase grid"));
    }
    let phases = phase_grid(map.dim(), grid);
    let exps = exec.map(&phases, |th| cocycle_product(map, th, z, n, phi).log_norm() / n as f64);
    Ok(exps.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `min_ι max_{ιj = 0..W} log ‖A_n(f^j θ, z)‖`.
pub fn window_lower_bound(map: &MapSpec, phi: &SamplingFunction, theta: &TorusPoint, z: C, n: u64, w: u64) -> f64 {
    let mut best = [f64::NEG_INFINITY; 2];
    for (slot, forward) in [(0, true), (1, false)] {
        let mut x = theta.coords().to_vec();
        for _ in 0..=w {
            let th = TorusPoint::new(x.clone()).unwrap();
            best[slot] = best[slot].max(cocycle_product(map, &th, z, n, phi).log_norm());
            if forward {
                map.step_in_place(&mut x);
            } else {
                map.inverse_step_in_place(&mut x);
            }
        }
    }
    best[0].min(best[1])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DtIntegral {
    pub t: f64,
    pub rho: f64,
    pub k: f64,
    pub nmax: u64,
    pub value: f64,
    pub energies: Vec<f64>,
    pub integrand: Vec<f64>,
}

/// Trapezoid rule over `E ∈ [−K, K]` of
/// `(min_ι max_{1 ≤ ιn ≤ T^ρ} ‖A_n(θ, E + i/T)‖²)^{−1}`.
#[allow(clippy::too_many_arguments)]
pub fn dt_integral(
    map: &MapSpec,
    phi: &SamplingFunction,
    theta: &TorusPoint,
    t: f64,
    rho: f64,
    k: f64,
    energies: usize,
    exec: Exec,
) -> Result<DtIntegral> {
    if !(t > 0.0) || !(rho > 0.0) {
        return Err(Error::invalid("T and ρ must be positive"));
    }
    if energies < 2 {
        return Err(Error::invalid("energy grid needs at least two points"));
    }
    let need = (3.0 + phi.sup_norm()).max(4.0);
    if k < need {
        return Err(Error::invalid(format!(
            "energy bound K = {k} must be at least {need} so the spectrum lies in [−K+1, K−1]"
        )));
    }
    let nmax = (t.powf(rho).floor() as u64).max(1);
    let es: Vec<f64> = (0..energies)
        .map(|i| -k + 2.0 * k * i as f64 / (energies - 1) as f64)
        .collect();
    let integrand = exec.map(&es, |&e| {
        let z = C::new(e, 1.0 / t);
        let mut worst = f64::INFINITY;
        for dir in [1i8, -1] {
            let mut m = f64::NEG_INFINITY;
            product_trace(map, theta, z, nmax, phi, dir, |_, ln| m = m.max(ln));
            worst = worst.min(m);
        }
        (-2.0 * worst).exp()
    });
    let h = 2.0 * k / (energies - 1) as f64;
    let mut s = CompensatedSum::new();
    for (i, v) in integrand.iter().enumerate() {
        let w = if i == 0 || i == energies - 1 { 0.5 } else { 1.0 };
        s.add(w * h * v);
    }
    Ok(DtIntegral {
        t,
        rho,
        k,
        nmax,
        value: s.value(),
        energies: es,
        integrand,
    })
}

/// `‖f‖_L²` for `L > 0` from `sq[n − 1] = |f(n)|²`; `None` past the data.
pub fn truncated_norm_sq_pos(sq: &[f64], l: f64) -> Option<f64> {
    let fl = l.floor();
    let k = fl as usize;
    let head: f64 = sq.get(..k)?.iter().sum();
    let frac = l - fl;
    if frac == 0.0 {
        return Some(head);
    }
    Some(head + frac * sq.get(k)?)
}

/// `‖f‖_L²` for `L < 0` from `sq[k] = |f(−k)|²`, `k ≥ 0`.
pub fn truncated_norm_sq_neg(sq: &[f64], l: f64) -> Option<f64> {
    let fl = l.floor();
    // Σ_{n = ⌊L⌋+1}^{0} |f(n)|² + (⌊L⌋ + 1 − L) |f(⌊L⌋)|².
    let top = (-(fl + 1.0)) as usize;
    let head: f64 = sq.get(..=top)?.iter().sum();
    Some(head + (fl + 1.0 - l) * sq.get(top + 1)?)
}

/// Inverse of the piecewise-linear map `L ↦ ‖f‖_L²` on `L > 0`.
fn solve_pos(sq: &[f64], target: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (k, &v) in sq.iter().enumerate() {
        if acc + v >= target {
            return Some(k as f64 + (target - acc) / v);
        }
        acc += v;
    }
    None
}

fn solve_neg(sq: &[f64], target: f64) -> Option<f64> {
    let mut acc = *sq.first()?;
    if target < acc {
        return None;
    }
    for j in 0..sq.len() - 1 {
        let v = sq[j + 1];
        if acc + v >= target {
            return Some(-(j as f64 + (target - acc) / v));
        }
        acc += v;
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KklTruncation {
    /// `2 ‖A(θ, z)‖ / ε`.
    pub target: f64,
    pub l_minus: Option<f64>,
    pub l_plus: Option<f64>,
    /// Truncated norms reached at the maximum window.
    pub achieved_minus: f64,
    pub achieved_plus: f64,
    pub max_window: u64,
}

/// Solves `‖A_•(θ, z)‖_{L̃±} = 2‖A(θ, z)‖/ε` in both directions.
///
/// The truncated norm is piecewise linear in `L²`, so each side is inverted
/// exactly on the bracketing unit interval.
pub fn kkl_truncation(
    map: &MapSpec,
    phi: &SamplingFunction,
    theta: &TorusPoint,
    z: C,
    eps: f64,
    max_window: u64,
) -> Result<KklTruncation> {
    if !(eps > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    if max_window == 0 {
        return Err(Error::invalid("maximum window must be positive"));
    }
    let a1 = spectral_norm(&transfer_matrix(theta.coords(), z, phi));
    let target = 2.0 * a1 / eps;
    let t2 = target * target;
    let run = |dir: i8, mut acc: f64| {
        let mut sq = Vec::new();
        let mut x = theta.coords().to_vec();
        let mut prod = TransferProduct::identity(z);
        for _ in 0..max_window {
            let m = if dir > 0 {
                let m = transfer_matrix(&x, z, phi);
                map.step_in_place(&mut x);
                m
            } else {
                map.inverse_step_in_place(&mut x);
                inverse_transfer(&x, z, phi)
            };
            prod.left_multiply(&m);
            let v = (2.0 * prod.log_norm()).exp();
            sq.push(v);
            acc += v;
            if acc >= t2 {
                break;
            }
        }
        sq
    };
    let plus = run(1, 0.0);
    let mut minus = vec![1.0];
    minus.extend(run(-1, 1.0));
    let l_plus = solve_pos(&plus, t2);
    let l_minus = solve_neg(&minus, t2);
    Ok(KklTruncation {
        target,
        l_minus,
        l_plus,
        achieved_minus: minus.iter().sum::<f64>().sqrt(),
        achieved_plus: plus.iter().sum::<f64>().sqrt(),
        max_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::Frequency;

    fn golden() -> MapSpec {
        MapSpec::shift(&[Frequency::golden()])
    }

    fn amo(lambda: f64) -> SamplingFunction {
        SamplingFunction::Cosine { lambda }
    }

    fn real(e: f64) -> C {
        C::new(e, 0.0)
    }

    fn origin() -> TorusPoint {
        TorusPoint::origin(1)
    }

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        let scale = a.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).norm() <= tol * scale)
    }

    #[test]
    fn matrix_examples() {
        let m = transfer_matrix(origin().coords(), real(0.0), &SamplingFunction::free());
        assert_eq!(m, [[real(0.0), real(-1.0)], [real(1.0), real(0.0)]]);
        let m = transfer_matrix(origin().coords(), real(0.0), &amo(1.0));
        assert_eq!(m, [[real(-2.0), real(-1.0)], [real(1.0), real(0.0)]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let th = [Turn(rng.gen())];
            let z = C::new(rng.gen_range(-10.0..10.0), rng.gen_range(-1.0..1.0));
            assert_eq!(det(&transfer_matrix(&th, z, &amo(2.5))), real(1.0));
        }
    }

    #[test]
    fn identity_and_rotation() {
        let p = cocycle_product(&golden(), &origin(), real(0.0), 0, &amo(3.0));
        assert_eq!(p.log_norm(), 0.0);
        assert_eq!(p.log_scale(), 0.0);
        for n in [1u64, 7, 1000] {
            let p = cocycle_product(&golden(), &origin(), real(0.0), n, &SamplingFunction::free());
            assert_eq!(p.log_norm(), 0.0);
        }
        let est = lyapunov_estimate(&golden(), &SamplingFunction::free(), real(0.0), 100, 4, 1, Exec::Parallel).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn scaled_matrix_matches_direct_product() {
        let map = golden();
        let phi = amo(1.5);
        let th = TorusPoint::from_f64s(&[0.123]).unwrap();
        let z = C::new(0.4, 0.05);
        let mut direct = [[real(1.0), real(0.0)], [real(0.0), real(1.0)]];
        let mut x = th.coords().to_vec();
        for _ in 0..30 {
            direct = mat_mul(&transfer_matrix(&x, z, &phi), &direct);
            map.step_in_place(&mut x);
        }
        let p = cocycle_product(&map, &th, z, 30, &phi);
        let s = p.log_scale().exp();
        let carried = p.scaled_matrix().map(|row| row.map(|v| v * s));
        assert!(close(&direct, &carried, 1e-12));
        assert!((spectral_norm(&direct).ln() - p.log_norm()).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_exponent() {
        // Only φ ≡ 0 and z = 3 matter: [[3, −1], [1, 0]] has eigenvalue (3+√5)/2.
        let est = lyapunov_estimate(&golden(), &SamplingFunction::free(), real(3.0), 10_000, 4, 2, Exec::Parallel).unwrap();
        let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((est.value - exact).abs() < 1e-3, "{}", est.value);
        assert!((est.grid_value - exact).abs() < 1e-3);
    }

    #[test]
    fn determinant_stays_one() {
        let map = golden();
        let p = cocycle_product(&map, &origin(), real(0.3), 1_000_000, &amo(3.0));
        assert!(p.det_defect() < 1e-8, "{}", p.det_defect());
        assert!(p.log_norm() > 0.9 * 1e6);
        let p = cocycle_product(&map, &origin(), C::new(0.3, 0.01), 100_000, &amo(3.0));
        assert!(p.det_defect() < 1e-8);
        let skew = MapSpec::skew_shift(&Frequency::golden(), 2);
        let p = cocycle_product(&skew, &TorusPoint::origin(2), real(-1.0), 100_000, &amo(2.0));
        assert!(p.det_defect() < 1e-8);
    }

    #[test]
    fn cocycle_law_and_subadditivity() {
        let map = golden();
        let phi = amo(1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a = rng.gen_range(0..200u64);
            let b = rng.gen_range(0..200u64);
            let th = TorusPoint::new(vec![Turn(rng.gen())]).unwrap();
            let z = real(rng.gen_range(-3.0..3.0));
            let whole = cocycle_product(&map, &th, z, a + b, &phi);
            let first = cocycle_product(&map, &th, z, a, &phi);
            let mut x = th.coords().to_vec();
            for _ in 0..a {
                map.step_in_place(&mut x);
            }
            let second = cocycle_product(&map, &TorusPoint::new(x).unwrap(), z, b, &phi);
            let shift = (first.log_scale() + second.log_scale() - whole.log_scale()).exp();
            let joined = mat_mul(&second.scaled_matrix(), &first.scaled_matrix()).map(|r| r.map(|v| v * shift));
            assert!(close(&whole.scaled_matrix(), &joined, 1e-8), "a={a} b={b}");
            assert!(whole.log_norm() <= first.log_norm() + second.log_norm() + 1e-8);
            assert!(whole.log_norm() >= -1e-12);
        }
    }

    #[test]
    fn fekete_trend() {
        let map = golden();
        let phi = amo(1.5);
        let est: Vec<LyapunovEstimate> = [100u64, 1000, 10_000]
            .iter()
            .map(|&n| lyapunov_estimate(&map, &phi, real(0.7), n, 32, 5, Exec::Parallel).unwrap())
            .collect();
        for w in est.windows(2) {
            assert!(w[1].value <= w[0].value + 2.0 * (w[0].stderr + w[1].stderr), "{est:?}");
        }
    }

    #[test]
    fn herman_bound_on_coarse_grid() {
        let map = golden();
        let phi = amo(3.0);
        for i in 0..11 {
            let e = -8.0 + 1.6 * i as f64;
            let est = lyapunov_estimate(&map, &phi, real(e), 2000, 16, 11, Exec::Parallel).unwrap();
            assert!(est.value >= 3f64.ln() - 0.05, "E={e}: {}", est.value);
        }
    }

    #[test]
    fn upper_envelope_approaches_exponent() {
        let map = golden();
        let phi = amo(3.0);
        let z = real(0.0);
        let u3 = uniform_upper_scan(&map, &phi, z, 1000, 256, Exec::Parallel).unwrap();
        let u4 = uniform_upper_scan(&map, &phi, z, 10_000, 256, Exec::Parallel).unwrap();
        assert!(u4 <= u3 + 0.02, "{u3} {u4}");
        let est = lyapunov_estimate(&map, &phi, z, 10_000, 64, 9, Exec::Parallel).unwrap();
        assert!(u4 - est.value <= 0.1 && u4 >= est.value - 1e-9, "{u4} {}", est.value);
        assert_eq!(uniform_upper_scan(&map, &SamplingFunction::free(), z, 500, 16, Exec::Parallel).unwrap(), 0.0);
    }

    #[test]
    fn window_bound_examples() {
        let map = golden();
        let phi = amo(3.0);
        let z = real(0.0);
        let th = TorusPoint::from_f64s(&[0.37]).unwrap();
        let base = cocycle_product(&map, &th, z, 200, &phi).log_norm();
        assert_eq!(window_lower_bound(&map, &phi, &th, z, 200, 0), base);
        let mut prev = base;
        for w in [1u64, 5, 20] {
            let v = window_lower_bound(&map, &phi, &th, z, 200, w);
            assert!(v >= prev);
            prev = v;
        }
        let l = lyapunov_estimate(&map, &phi, z, 10_000, 32, 4, Exec::Parallel).unwrap().value;
        for th in random_phases(1, 32, 77) {
            let v = window_lower_bound(&map, &phi, &th, z, 200, 200);
            assert!(v >= 200.0 * 0.7 * l, "{v} vs {}", 140.0 * l);
        }
    }

    #[test]
    fn dt_integrand_bounded_and_free_band() {
        let map = golden();
        let free = dt_integral(&map, &SamplingFunction::free(), &origin(), 100.0, 0.5, 4.0, 401, Exec::Parallel).unwrap();
        assert!(free.integrand.iter().all(|&v| v <= 1.0 + 1e-12 && v >= 0.0));
        assert!(free.value > 1.0 && free.value <= 8.0, "{}", free.value);
        let later = dt_integral(&map, &SamplingFunction::free(), &origin(), 1000.0, 0.5, 4.0, 401, Exec::Parallel).unwrap();
        assert!(later.value > 0.5 * free.value, "{} {}", later.value, free.value);
        assert!(dt_integral(&map, &amo(3.0), &origin(), 100.0, 0.5, 4.0, 11, Exec::Parallel).is_err());
    }

    #[test]
    fn dt_decays_for_positive_exponent() {
        let map = golden();
        let phi = amo(3.0);
        let small = dt_integral(&map, &phi, &origin(), 100.0, 0.5, 9.0, 361, Exec::Parallel).unwrap();
        let large = dt_integral(&map, &phi, &origin(), 1000.0, 0.5, 9.0, 361, Exec::Parallel).unwrap();
        assert!(large.value / small.value <= 0.1, "{} {}", large.value, small.value);
    }

    #[test]
    fn truncated_norms() {
        let sq = [1.0, 4.0, 9.0];
        assert_eq!(truncated_norm_sq_pos(&sq, 2.0), Some(5.0));
        assert_eq!(truncated_norm_sq_pos(&sq, 2.5), Some(9.5));
        assert_eq!(truncated_norm_sq_pos(&sq, 3.5), None);
        let neg = [1.0, 2.0, 3.0];
        assert_eq!(truncated_norm_sq_neg(&neg, -1.0), Some(3.0));
        assert_eq!(truncated_norm_sq_neg(&neg, -1.5), Some(4.5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sq: Vec<f64> = (0..50).map(|_| rng.gen_range(0.5..3.0)).collect();
        for _ in 0..1000 {
            let l = rng.gen_range(1.0..40.0f64).round();
            let e = 1e-9;
            let (a, b) = (truncated_norm_sq_pos(&sq, l - e).unwrap(), truncated_norm_sq_pos(&sq, l + e).unwrap());
            assert!((a - b).abs() < 1e-7);
            let (a, b) = (truncated_norm_sq_neg(&sq, -l - e).unwrap(), truncated_norm_sq_neg(&sq, -l + e).unwrap());
            assert!((a - b).abs() < 1e-7);
            let t = truncated_norm_sq_pos(&sq, l + 0.3).unwrap();
            assert!((solve_pos(&sq, t).unwrap() - (l + 0.3)).abs() < 1e-9);
            let t = truncated_norm_sq_neg(&sq, -l - 0.3).unwrap();
            assert!((solve_neg(&sq, t).unwrap() + l + 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn kkl_free_and_localized() {
        let map = golden();
        let eps = 0.1;
        let k = kkl_truncation(&map, &SamplingFunction::free(), &origin(), real(0.0), eps, 10_000).unwrap();
        assert!((k.l_plus.unwrap() - 4.0 / (eps * eps)).abs() < 1e-9);
        assert!((k.l_minus.unwrap() + 4.0 / (eps * eps) - 1.0).abs() < 1e-9);
        let loc = kkl_truncation(&map, &amo(3.0), &origin(), real(0.0), eps, 10_000).unwrap();
        assert!(loc.l_plus.unwrap() < k.l_plus.unwrap());
        let short = kkl_truncation(&map, &SamplingFunction::free(), &origin(), real(0.0), eps, 10).unwrap();
        assert_eq!(short.l_plus, None);
        assert!((short.achieved_plus - 10f64.sqrt()).abs() < 1e-12);
    }

    fn two_piece() -> SamplingFunction {
        SamplingFunction::piecewise(
            1,
            vec![
                HolderPiece {
                    lo: vec![0.0],
                    hi: vec![0.5],
                    function: PieceFunction::Power {
                        amplitude: 2.0,
                        center: vec![0.2],
                        exponent: 0.5,
                    },
                },
                HolderPiece {
                    lo: vec![0.5],
                    hi: vec![1.0],
                    function: PieceFunction::Cosine {
                        amplitude: 1.5,
                        mode: vec![3],
                        phase: 0.1,
                    },
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn piecewise_validation_and_holder() {
        let phi = two_piece();
        let h = phi.holder_data();
        assert_eq!(h.gamma, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        while checked < 10_000 {
            let a = [Turn(rng.gen())];
            let b = [Turn(rng.gen())];
            let (Some(i), Some(j)) = (phi.piece_index(&a), phi.piece_index(&b)) else { continue };
            if i != j {
                continue;
            }
            let (gamma, c) = phi.piece_constant(i);
            let dist = turn_distance(&a, &b);
            assert!((phi.eval(&a) - phi.eval(&b)).abs() <= c * dist.powf(gamma) + 1e-12);
            checked += 1;
        }
        let overlap = SamplingFunction::piecewise(
            1,
            vec![
                HolderPiece {
                    lo: vec![0.0],
                    hi: vec![0.6],
                    function: PieceFunction::Constant { value: 1.0 },
                },
                HolderPiece {
                    lo: vec![0.5],
                    hi: vec![0.9],
                    function: PieceFunction::Constant { value: 2.0 },
                },
            ],
        );
        assert!(overlap.is_err());
        // Boundary points go to the first piece.
        assert_eq!(phi.piece_index(&[Turn::HALF]), Some(0));
    }

    #[test]
    fn tabulated_interpolates() {
        let phi = SamplingFunction::Tabulated {
            values: vec![0.0, 1.0, 0.0, -1.0],
        };
        assert_eq!(phi.eval(&[Turn::from_f64(0.125)]), 0.5);
        assert_eq!(phi.eval(&[Turn::from_f64(0.875)]), -0.5);
        assert_eq!(phi.sup_norm(), 1.0);
        assert_eq!(phi.holder_data().norm_sum, 5.0);
    }

    #[test]
    fn telescoping_sensitivity() {
        let map = golden();
        let phi = amo(3.0);
        let c = phi.holder_data().norm_sum;
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for n in [10u64, 100, 1000] {
            let dist = (-5.0 * n as f64 * 0.01).exp();
            for _ in 0..8 {
                let a = Turn(rng.gen());
                let b = a + Turn::from_f64(dist);
                let la = cocycle_product(&map, &TorusPoint::new(vec![a]).unwrap(), real(0.5), n, &phi).log_norm();
                let lb = cocycle_product(&map, &TorusPoint::new(vec![b]).unwrap(), real(0.5), n, &phi).log_norm();
                assert!((la - lb).abs() <= n as f64 * c * dist * std::f64::consts::E, "n={n}: {}", (la - lb).abs());
            }
        }
    }
}
