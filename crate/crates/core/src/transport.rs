//! Finite-box evolution `e^{−itH} δ_0` for `(Hu)(n) = u(n+1) + u(n−1) + φ(f^n θ) u(n)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::cocycle::{kkl_truncation, SamplingFunction};
use crate::exec::Exec;
use crate::quadrature::{gauss_legendre, CompensatedSum};
use crate::torus::{MapSpec, TorusPoint};
use crate::{Error, Result};

type C = Complex64;

/// Default bound on the probability in the outer 2% of the box.
pub const REFLECTION_BUDGET: f64 = 1e-8;
/// Largest tolerated `|‖ψ‖² − 1|`.
pub const NORM_TOLERANCE: f64 = 1e-8;
const BESSEL_CUTOFF: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxHamiltonian {
    pub half_width: usize,
    /// `v_n` for `n = −L, …, L`, stored at index `n + L`.
    pub potential: Vec<f64>,
    pub vmax: f64,
}

impl BoxHamiltonian {
    pub fn sites(&self) -> usize {
        self.potential.len()
    }

    /// Spectral enclosure `‖H‖ ≤ 2 + ‖v‖_∞`.
    pub fn norm_bound(&self) -> f64 {
        2.0 + self.vmax
    }

    pub fn index(&self, n: i64) -> Option<usize> {
        let i = n + self.half_width as i64;
        (i >= 0 && (i as usize) < self.sites()).then_some(i as usize)
    }

    pub fn potential_at(&self, n: i64) -> Option<f64> {
        self.index(n).map(|i| self.potential[i])
    }

    /// `out[i] = s · (H x)[i]` on `lo..=hi`.
    fn apply_scaled(&self, x: &[C], out: &mut [C], s: f64, lo: usize, hi: usize) {
        let n = self.sites();
        for i in lo..=hi {
            let mut acc = x[i] * self.potential[i];
            if i > 0 {
                acc += x[i - 1];
            }
            if i + 1 < n {
                acc += x[i + 1];
            }
            out[i] = acc * s;
        }
    }

    pub fn dense(&self) -> Vec<f64> {
        let n = self.sites();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.potential[i];
            if i + 1 < n {
                a[i * n + i + 1] = 1.0;
                a[(i + 1) * n + i] = 1.0;
            }
        }
        a
    }
}

/// Potential along the two-sided orbit of `θ`.
pub fn build_hamiltonian(map: &MapSpec, theta: &TorusPoint, phi: &SamplingFunction, half_width: usize) -> Result<BoxHamiltonian> {
    if half_width == 0 {
        return Err(Error::invalid("box half-width must be at least 1"));
    }
    if theta.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: theta.dim(),
        });
    }
    let l = half_width;
    let mut potential = vec![0.0; 2 * l + 1];
    let mut x = theta.coords().to_vec();
    for n in 0..=l {
        potential[l + n] = phi.eval(&x);
        map.step_in_place(&mut x);
    }
    let mut x = theta.coords().to_vec();
    for n in 1..=l {
        map.inverse_step_in_place(&mut x);
        potential[l - n] = phi.eval(&x);
    }
    let vmax = potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BoxHamiltonian {
        half_width,
        potential,
        vmax,
    })
}

/// `J_0(x), …, J_K(x)` by Miller's backward recurrence, with `K` the first
/// order above `x` where `|J_K| < tol`.
pub fn bessel_sequence(x: f64, tol: f64) -> Vec<f64> {
    if x == 0.0 {
        return vec![1.0];
    }
    let ax = x.abs();
    let start = (ax + 20.0 * ax.cbrt() + 40.0).ceil() as usize;
    let start = start + start % 2;
    let mut j = vec![0.0f64; start + 2];
    j[start] = 1e-300;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / ax * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            j.iter_mut().skip(k - 1).for_each(|v| *v *= 1e-250);
        }
    }
    let mut norm = CompensatedSum::new();
    norm.add(j[0]);
    for k in (2..=start).step_by(2) {
        norm.add(2.0 * j[k]);
    }
    let s = norm.value();
    j.truncate(start + 1);
    j.iter_mut().for_each(|v| *v /= s);
    if x < 0.0 {
        j.iter_mut().skip(1).step_by(2).for_each(|v| *v = -*v);
    }
    let mut cut = start;
    for k in (ax.floor() as usize + 1)..=start {
        if j[k].abs() < tol {
            cut = k;
            break;
        }
    }
    j.truncate(cut + 1);
    j
}

/// Free evolution `e^{−itΔ} δ_0 (n) = (−i)^{|n|} J_{|n|}(2t)`.
pub fn free_amplitudes(t: f64, half_width: usize) -> Vec<C> {
    let j = bessel_sequence(2.0 * t, 1e-300);
    let l = half_width as i64;
    (-l..=l)
        .map(|n| {
            let k = n.unsigned_abs() as usize;
            let v = j.get(k).copied().unwrap_or(0.0);
            C::new(0.0, -1.0).powu(k as u32) * v
        })
        .collect()
}

/// Chebyshev propagator holding the current state.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    h: &'a BoxHamiltonian,
    psi: Vec<C>,
    t: f64,
    lo: usize,
    hi: usize,
    scale: f64,
    buf: [Vec<C>; 3],
}

impl<'a> Propagator<'a> {
    pub fn new(h: &'a BoxHamiltonian, site: i64) -> Result<Self> {
        let i = h
            .index(site)
            .ok_or_else(|| Error::invalid(format!("site {site} outside the box")))?;
        let n = h.sites();
        let mut psi = vec![C::new(0.0, 0.0); n];
        psi[i] = C::new(1.0, 0.0);
        Ok(Propagator {
            h,
            psi,
            t: 0.0,
            lo: i,
            hi: i,
            // A hair above the enclosure keeps the rescaled spectrum inside [−1, 1].
            scale: h.norm_bound() * (1.0 + 1e-12),
            buf: [vec![C::new(0.0, 0.0); n], vec![C::new(0.0, 0.0); n], vec![C::new(0.0, 0.0); n]],
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn psi(&self) -> &[C] {
        &self.psi
    }

    /// `ψ ← e^{−iHΔt} ψ` via the Chebyshev series with Bessel coefficients.
    pub fn advance(&mut self, dt: f64) {
        if dt == 0.0 {
            return;
        }
        let n = self.h.sites();
        let coeffs = bessel_sequence(self.scale * dt, BESSEL_CUTOFF);
        let inv = 1.0 / self.scale;
        let zero = C::new(0.0, 0.0);
        let k = coeffs.len();
        let (wlo, whi) = (self.lo.saturating_sub(k + 1), (self.hi + k + 1).min(n - 1));
        let [prev, cur, next] = &mut self.buf;
        for b in [&mut *prev, &mut *cur, &mut *next] {
            b[wlo..=whi].iter_mut().for_each(|v| *v = zero);
        }
        let (mut lo, mut hi) = (self.lo, self.hi);
        prev[lo..=hi].copy_from_slice(&self.psi[lo..=hi]);
        let out = &mut self.psi;
        out[lo..=hi].iter_mut().for_each(|v| *v *= coeffs[0]);
        let mut phase = C::new(1.0, 0.0);
        for (k, &jk) in coeffs.iter().enumerate().skip(1) {
            lo = lo.saturating_sub(1);
            hi = (hi + 1).min(n - 1);
            if k == 1 {
                self.h.apply_scaled(prev, cur, inv, lo, hi);
            } else {
                self.h.apply_scaled(cur, next, 2.0 * inv, lo, hi);
                for i in lo..=hi {
                    next[i] -= prev[i];
                }
                std::mem::swap(prev, cur);
                std::mem::swap(cur, next);
            }
            phase *= C::new(0.0, -1.0);
            let c = phase * (2.0 * jk);
            for i in lo..=hi {
                out[i] += cur[i] * c;
            }
        }
        while out[lo] == zero && lo < hi {
            lo += 1;
        }
        while out[hi] == zero && hi > lo {
            hi -= 1;
        }
        self.lo = lo;
        self.hi = hi;
        self.t += dt;
    }

    pub fn advance_to(&mut self, t: f64) {
        self.advance(t - self.t);
    }

    pub fn norm_defect(&self) -> f64 {
        let s: f64 = self.psi[self.lo..=self.hi].iter().map(|v| v.norm_sqr()).sum();
        (s - 1.0).abs()
    }

    pub fn boundary_mass(&self) -> f64 {
        boundary_mass(&self.psi)
    }

    pub fn state(&self, budget: f64) -> EvolutionState {
        EvolutionState::new(self.t, self.h.half_width, self.psi.clone(), budget)
    }
}

/// Sites per end counted as boundary: 1% of the box on each side.
fn boundary_sites(n: usize) -> usize {
    ((0.01 * n as f64).ceil() as usize).max(1)
}

pub fn boundary_mass(psi: &[C]) -> f64 {
    let k = boundary_sites(psi.len());
    let n = psi.len();
    psi[..k].iter().chain(&psi[n - k..]).map(|v| v.norm_sqr()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvolutionState {
    pub t: f64,
    pub half_width: usize,
    #[serde(skip)]
    pub psi: Vec<C>,
    pub norm_defect: f64,
    pub boundary_mass: f64,
    pub budget: f64,
}

impl EvolutionState {
    fn new(t: f64, half_width: usize, psi: Vec<C>, budget: f64) -> Self {
        let norm_defect = (psi.iter().map(|v| v.norm_sqr()).sum::<f64>() - 1.0).abs();
        let boundary_mass = boundary_mass(&psi);
        EvolutionState {
            t,
            half_width,
            psi,
            norm_defect,
            boundary_mass,
            budget,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.norm_defect <= NORM_TOLERANCE && self.boundary_mass <= self.budget
    }

    pub fn check(&self) -> Result<()> {
        if self.boundary_mass > self.budget {
            return Err(Error::FlaggedState(format!(
                "boundary mass {:.3e} exceeds budget {:.1e} at t = {} (half-width {})",
                self.boundary_mass, self.budget, self.t, self.half_width
            )));
        }
        if self.norm_defect > NORM_TOLERANCE {
            return Err(Error::FlaggedState(format!(
                "norm defect {:.3e} at t = {}",
                self.norm_defect, self.t
            )));
        }
        Ok(())
    }

    pub fn probability(&self, n: i64) -> f64 {
        let i = n + self.half_width as i64;
        if i < 0 || i as usize >= self.psi.len() {
            return 0.0;
        }
        self.psi[i as usize].norm_sqr()
    }
}

/// `e^{−itH} δ_0` in one Chebyshev expansion.
pub fn evolve(h: &BoxHamiltonian, t: f64) -> Result<EvolutionState> {
    evolve_with_budget(h, t, REFLECTION_BUDGET)
}

pub fn evolve_with_budget(h: &BoxHamiltonian, t: f64, budget: f64) -> Result<EvolutionState> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("time must be finite and non-negative"));
    }
    let mut p = Propagator::new(h, 0)?;
    p.advance(t);
    Ok(p.state(budget))
}

/// `⟨|X|^p(t)⟩ = Σ (1 + |n|)^p |ψ(n)|²`.
pub fn moment(state: &EvolutionState, p: f64) -> Result<f64> {
    state.check()?;
    Ok(moment_unchecked(&state.psi, state.half_width, p))
}

fn moment_unchecked(psi: &[C], half_width: usize, p: f64) -> f64 {
    let l = half_width as i64;
    let mut s = CompensatedSum::new();
    for (i, v) in psi.iter().enumerate() {
        let n = (i as i64 - l).unsigned_abs() as f64;
        s.add((1.0 + n).powf(p) * v.norm_sqr());
    }
    s.value()
}

/// Nodes and weights of `(2/T) ∫_0^{10T} e^{−2t/T} A(t) dt`.
pub fn abel_nodes(t_avg: f64, panel_width: f64, order: usize) -> Vec<(f64, f64)> {
    let end = 10.0 * t_avg;
    let panels = (end / panel_width).ceil().max(1.0) as usize;
    let h = end / panels as f64;
    let (x, w) = gauss_legendre(order);
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            let t = mid + 0.5 * h * xi;
            out.push((t, 0.5 * h * wi * 2.0 / t_avg * (-2.0 * t / t_avg).exp()));
        }
    }
    out
}

/// Abel average `⟨A⟩_T`, truncated at `10T` (tail below `e^{−20} sup |A|`).
pub fn abel_average<F: Fn(f64) -> f64>(a: F, t_avg: f64) -> f64 {
    abel_average_with(a, t_avg, t_avg / 2.0, 20)
}

pub fn abel_average_with<F: Fn(f64) -> f64>(a: F, t_avg: f64, panel_width: f64, order: usize) -> f64 {
    let mut s = CompensatedSum::new();
    for (t, w) in abel_nodes(t_avg, panel_width, order) {
        s.add(w * a(t));
    }
    s.value()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoxPolicy {
    /// First half-width tried.
    pub initial: usize,
    /// Largest half-width tried before the run is reported as flagged.
    pub cap: usize,
    pub budget: f64,
}

impl BoxPolicy {
    /// Start at 64 sites each way and double until the budget holds, up to
    /// four times the light-cone rule `(2 + ‖v‖_∞) t_max + 64`.
    pub fn for_time(phi: &SamplingFunction, t_max: f64) -> Self {
        let rule = ((2.0 + phi.sup_norm()) * t_max + 64.0).ceil() as usize;
        BoxPolicy {
            initial: 64.min(rule),
            cap: 4 * rule,
            budget: REFLECTION_BUDGET,
        }
    }
}

/// Propagates `δ_site` through the sorted `times` and hands each state to
/// `visit`; fails as soon as the boundary budget is exceeded.
fn sweep<F: FnMut(usize, &Propagator)>(h: &BoxHamiltonian, site: i64, times: &[f64], budget: f64, mut visit: F) -> Result<f64> {
    let mut p = Propagator::new(h, site)?;
    let mut worst_defect: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        p.advance_to(t);
        let b = p.boundary_mass();
        if b > budget {
            return Err(Error::FlaggedState(format!(
                "boundary mass {b:.3e} over budget at t = {t} (half-width {})",
                h.half_width
            )));
        }
        let d = p.norm_defect();
        if d > NORM_TOLERANCE {
            return Err(Error::FlaggedState(format!("norm defect {d:.3e} at t = {t}")));
        }
        worst_defect = worst_defect.max(d);
        visit(i, &p);
    }
    Ok(worst_defect)
}

/// Retries `run` with doubled boxes while the state is flagged for reflections.
fn with_auto_box<T, F: FnMut(&BoxHamiltonian) -> Result<T>>(
    map: &MapSpec,
    theta: &TorusPoint,
    phi: &SamplingFunction,
    policy: &BoxPolicy,
    min_half_width: usize,
    mut run: F,
) -> Result<(BoxHamiltonian, T)> {
    let mut l = policy.initial.max(min_half_width).max(1);
    loop {
        let h = build_hamiltonian(map, theta, phi, l)?;
        match run(&h) {
            Ok(v) => return Ok((h, v)),
            Err(Error::FlaggedState(msg)) if msg.starts_with("boundary") && l < policy.cap => l = (2 * l).min(policy.cap),
            Err(e) => return Err(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub moment: f64,
    pub p: f64,
    pub half_width: usize,
    pub norm_defect: f64,
    pub boundary_mass: f64,
}

/// Moments at each time of a sorted grid, starting from `δ_0`.
pub fn moment_series(map: &MapSpec, theta: &TorusPoint, phi: &SamplingFunction, p: f64, times: &[f64]) -> Result<Vec<MomentRow>> {
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::invalid("times must be non-negative and increasing"));
    }
    let t_max = times.last().copied().unwrap_or(0.0);
    let policy = BoxPolicy::for_time(phi, t_max);
    let (_, rows) = with_auto_box(map, theta, phi, &policy, 1, |h| {
        let mut rows = Vec::with_capacity(times.len());
        sweep(h, 0, times, policy.budget, |_, prop| {
            rows.push(MomentRow {
                t: prop.time(),
                moment: moment_unchecked(prop.psi(), h.half_width, p),
                p,
                half_width: h.half_width,
                norm_defect: prop.norm_defect(),
                boundary_mass: prop.boundary_mass(),
            });
        })?;
        Ok(rows)
    })?;
    Ok(rows)
}

fn check_geometric(grid: &[f64], min_len: usize, what: &str) -> Result<()> {
    if grid.len() < min_len {
        return Err(Error::invalid(format!("{what} needs at least {min_len} points")));
    }
    if grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{what} must be positive and increasing")));
    }
    let r0 = grid[1] / grid[0];
    if grid.windows(2).any(|w| ((w[1] / w[0]) / r0 - 1.0).abs() > 1e-6) {
        return Err(Error::invalid(format!("{what} must be geometric")));
    }
    Ok(())
}

/// Growth slopes `(ln y_i − ln y_0) / (ln x_i − ln x_0)` for `i` in the last
/// half of the grid, clamped at 0.
pub fn anchored_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (n / 2..n)
        .filter(|&i| i > 0)
        .map(|i| ((ys[i].ln() - ys[0].ln()) / (xs[i].ln() - xs[0].ln())).max(0.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaEstimate {
    pub p: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub slopes: Vec<f64>,
    pub rows: Vec<MomentRow>,
}

/// `β̂± ` from moments on a geometric time grid.
pub fn beta_from_moments(ts: &[f64], moments: &[f64], p: f64) -> (f64, f64, Vec<f64>) {
    let slopes: Vec<f64> = anchored_slopes(ts, moments).into_iter().map(|s| s / p).collect();
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi, slopes)
}

pub fn beta_estimate(map: &MapSpec, theta: &TorusPoint, phi: &SamplingFunction, p: f64, t_grid: &[f64]) -> Result<BetaEstimate> {
    if !(p > 0.0) {
        return Err(Error::invalid("moment order p must be positive"));
    }
    check_geometric(t_grid, 8, "time grid")?;
    let rows = moment_series(map, theta, phi, p, t_grid)?;
    let ms: Vec<f64> = rows.iter().map(|r| r.moment).collect();
    let (beta_minus, beta_plus, slopes) = beta_from_moments(t_grid, &ms, p);
    Ok(BetaEstimate {
        p,
        beta_minus,
        beta_plus,
        slopes,
        rows,
    })
}

/// Abel-averaged site probabilities `⟨a(n, t)⟩_T` for several `T` at once.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbelProfile {
    pub t_avg: Vec<f64>,
    pub half_width: usize,
    /// `probs[j][n + L]` for averaging time `t_avg[j]`.
    pub probs: Vec<Vec<f64>>,
    pub norm_defect: f64,
}

impl AbelProfile {
    /// `Σ_{|n| ≤ L} ⟨a(n)⟩_T` for the `j`-th averaging time.
    pub fn in_box(&self, j: usize, l: usize) -> f64 {
        let c = self.half_width;
        let l = l.min(c);
        self.probs[j][c - l..=c + l].iter().sum()
    }

    /// `Σ_{n=−⌊L1⌋}^{⌊L2⌋} ⟨|ψ(n)|²⟩ + fractional end terms`.
    pub fn truncated(&self, j: usize, l1: f64, l2: f64) -> f64 {
        let c = self.half_width as i64;
        let get = |n: i64| -> f64 {
            let i = n + c;
            if i < 0 || i as usize >= self.probs[j].len() {
                0.0
            } else {
                self.probs[j][i as usize]
            }
        };
        let (f1, f2) = (l1.floor() as i64, l2.floor() as i64);
        let mut s: f64 = (-f1..=f2).map(get).sum();
        s += (l1 - l1.floor()) * get(-f1 - 1) + (l2 - l2.floor()) * get(f2 + 1);
        s
    }
}

/// Panel width resolving the fastest oscillation `e^{±i ω t}`, `ω ≤ 2‖H‖`.
fn abel_panel_width(h: &BoxHamiltonian, t_min: f64) -> f64 {
    (12.0 / (2.0 * h.norm_bound())).min(t_min / 4.0)
}

/// One sweep to `10 max(T)` with a shared node set; each `T` gets its own weights.
pub fn abel_profile(
    map: &MapSpec,
    theta: &TorusPoint,
    phi: &SamplingFunction,
    site: i64,
    t_avg: &[f64],
    min_half_width: usize,
) -> Result<AbelProfile> {
    if t_avg.is_empty() || t_avg.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("averaging times must be positive"));
    }
    let t_max = t_avg.iter().copied().fold(0.0, f64::max);
    let t_min = t_avg.iter().copied().fold(f64::INFINITY, f64::min);
    let policy = BoxPolicy::for_time(phi, 10.0 * t_max);
    let (h, (probs, defect)) = with_auto_box(map, theta, phi, &policy, min_half_width.max(site.unsigned_abs() as usize + 1), |h| {
        let width = abel_panel_width(h, t_min);
        let nodes = abel_nodes(t_max, width, 20);
        let times: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        // Weight of node t for averaging time T, from the shared GL weights.
        let base: Vec<f64> = nodes
            .iter()
            .map(|&(t, w)| w / (2.0 / t_max * (-2.0 * t / t_max).exp()))
            .collect();
        let mut acc: Vec<Vec<CompensatedSum>> = vec![vec![CompensatedSum::new(); h.sites()]; t_avg.len()];
        let defect = sweep(h, site, &times, policy.budget, |i, prop| {
            let t = times[i];
            for (j, &tj) in t_avg.iter().enumerate() {
                let w = base[i] * 2.0 / tj * (-2.0 * t / tj).exp();
                if w == 0.0 {
                    continue;
                }
                for (a, v) in acc[j].iter_mut().zip(prop.psi()).filter(|(_, v)| v.re != 0.0 || v.im != 0.0) {
                    a.add(w * v.norm_sqr());
                }
            }
        })?;
        let probs = acc
            .into_iter()
            .map(|row| row.into_iter().map(|s| s.value()).collect())
            .collect();
        Ok((probs, defect))
    })?;
    Ok(AbelProfile {
        t_avg: t_avg.to_vec(),
        half_width: h.half_width,
        probs,
        norm_defect: defect,
    })
}

fn shifted_phase(map: &MapSpec, theta: &TorusPoint) -> TorusPoint {
    let mut x = theta.coords().to_vec();
    map.step_in_place(&mut x);
    TorusPoint::new(x).expect("same dimension")
}

fn pair<T>(v: Vec<Result<T>>) -> Result<[T; 2]> {
    let mut it = v.into_iter();
    let a = it.next().expect("two runs")?;
    let b = it.next().expect("two runs")?;
    Ok([a, b])
}

/// `(P_{θ,T}(L), P_{fθ,T}(L))`.
pub fn p_theta_t(map: &MapSpec, theta: &TorusPoint, phi: &SamplingFunction, t_avg: f64, l: usize, exec: Exec) -> Result<(f64, f64)> {
    let min_box = ((l as f64) / 0.9).ceil() as usize;
    let phases = [theta.clone(), shifted_phase(map, theta)];
    let profiles = exec.map(&phases, |th| abel_profile(map, th, phi, 0, &[t_avg], min_box));
    let [a, b] = pair(profiles)?;
    Ok((a.in_box(0, l), b.in_box(0, l)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiLevel {
    pub tau: f64,
    /// Minimal `L` with `P_{θ,T}(L) + P_{fθ,T}(L) > τ`, per `T`.
    pub l: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiEstimate {
    pub t_grid: Vec<f64>,
    pub levels: Vec<XiLevel>,
    /// Reported at the smallest `τ`.
    pub xi_lower: f64,
    pub xi_upper: f64,
    pub half_width: usize,
}

/// Smallest `L` with `combined(L) > τ`, by bisection on the monotone partial sums.
fn minimal_radius<F: Fn(usize) -> f64>(combined: F, tau: f64, max_l: usize) -> Option<usize> {
    if combined(max_l) <= tau {
        return None;
    }
    let (mut lo, mut hi) = (0usize, max_l);
    if combined(0) > tau {
        return Some(0);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if combined(mid) > tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

pub fn xi_estimate(
    map: &MapSpec,
    theta: &TorusPoint,
    phi: &SamplingFunction,
    tau_levels: &[f64],
    t_grid: &[f64],
    exec: Exec,
) -> Result<XiEstimate> {
    if tau_levels.is_empty() || tau_levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::invalid("τ levels must lie in (0, 1)"));
    }
    check_geometric(t_grid, 4, "averaging-time grid")?;
    let phases = [theta.clone(), shifted_phase(map, theta)];
    let profiles = exec.map(&phases, |th| abel_profile(map, th, phi, 0, t_grid, 1));
    let [a, b] = pair(profiles)?;
    let max_l = (0.9 * a.half_width.min(b.half_width) as f64) as usize;
    let mut taus = tau_levels.to_vec();
    taus.sort_by(f64::total_cmp);
    let mut levels = Vec::new();
    for &tau in &taus {
        let mut ls = Vec::with_capacity(t_grid.len());
        for j in 0..t_grid.len() {
            let l = minimal_radius(|l| a.in_box(j, l) + b.in_box(j, l), tau, max_l).ok_or_else(|| {
                Error::FlaggedState(format!("level τ = {tau} not reached inside the box at T = {}", t_grid[j]))
            })?;
            ls.push(l);
        }
        let ys: Vec<f64> = ls.iter().map(|&l| 1.0 + l as f64).collect();
        let slopes = anchored_slopes(t_grid, &ys);
        levels.push(XiLevel {
            tau,
            l: ls,
            lower: slopes.iter().copied().fold(f64::INFINITY, f64::min),
            upper: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(XiEstimate {
        t_grid: t_grid.to_vec(),
        xi_lower: levels[0].lower,
        xi_upper: levels[0].upper,
        levels,
        half_width: a.half_width.min(b.half_width),
    })
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix (row major).
/// Returns eigenvalues and eigenvectors as columns `vecs[i * n + k]`.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// `e^{−itH} δ_0` from a dense eigendecomposition (small boxes only).
pub fn evolve_dense(h: &BoxHamiltonian, t: f64) -> Result<Vec<C>> {
    if h.half_width > 128 {
        return Err(Error::invalid("dense evolution is limited to half-width 128"));
    }
    let n = h.sites();
    let (vals, vecs) = symmetric_eigen(h.dense(), n);
    let c = h.half_width;
    let mut psi = vec![C::new(0.0, 0.0); n];
    for k in 0..n {
        let w = C::from_polar(vecs[c * n + k], -vals[k] * t);
        for i in 0..n {
            psi[i] += w * vecs[i * n + k];
        }
    }
    Ok(psi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KklCheck {
    pub lhs: f64,
    pub rhs_measure: f64,
    pub total_weight: f64,
    pub spectral_half_width: usize,
}

/// Both sides of the truncated-norm criterion, reported without a constant.
///
/// The spectral measure `(μ_θ + μ_{fθ})/2` is replaced by eigenvector weights
/// `(|v_k(0)|² + |v_k(1)|²)/2` of a box of half-width at most 128, binned to
/// the nearest energy of `e_grid`.
#[allow(clippy::too_many_arguments)]
pub fn kkl_check(
    map: &MapSpec,
    theta: &TorusPoint,
    phi: &SamplingFunction,
    t_avg: f64,
    l1: f64,
    l2: f64,
    e_grid: &[f64],
    exec: Exec,
) -> Result<KklCheck> {
    if !(l1 > 2.0 && l2 > 2.0) {
        return Err(Error::invalid("KKL windows need L1, L2 > 2"));
    }
    if e_grid.is_empty() {
        return Err(Error::invalid("energy grid must be nonempty"));
    }
    let min_box = (l1.max(l2).ceil() as usize) + 2;
    let sites = [0i64, 1];
    let profiles = exec.map(&sites, |&s| abel_profile(map, theta, phi, s, &[t_avg], min_box));
    let [p0, p1] = pair(profiles)?;
    let lhs = 0.5 * (p0.truncated(0, l1, l2) + p1.truncated(0, l1, l2));

    let hw = 128usize.max(min_box);
    let hs = build_hamiltonian(map, theta, phi, hw)?;
    let n = hs.sites();
    let (vals, vecs) = symmetric_eigen(hs.dense(), n);
    let mut weights = vec![0.0; e_grid.len()];
    for k in 0..n {
        let w = 0.5 * (vecs[hw * n + k].powi(2) + vecs[(hw + 1) * n + k].powi(2));
        let nearest = e_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - vals[k]).abs().total_cmp(&(b.1 - vals[k]).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        weights[nearest] += w;
    }
    let window = (l1.max(l2).ceil() as u64) + 2;
    let ok = exec.map(e_grid, |&e| {
        kkl_truncation(map, phi, theta, C::new(e, 0.0), 1.0 / t_avg, window).map(|k| {
            k.l_minus.is_some_and(|v| v.abs() <= l1) && k.l_plus.is_some_and(|v| v <= l2)
        })
    });
    let mut rhs = 0.0;
    for (w, ok) in weights.iter().zip(ok) {
        if ok? {
            rhs += w;
        }
    }
    Ok(KklCheck {
        lhs,
        rhs_measure: rhs,
        total_weight: weights.iter().sum(),
        spectral_half_width: hw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::{Frequency, Turn};
    use crate::torus::skew_closed_form;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden() -> MapSpec {
        MapSpec::shift(&[Frequency::golden()])
    }

    fn amo(lambda: f64) -> SamplingFunction {
        SamplingFunction::Cosine { lambda }
    }

    fn origin() -> TorusPoint {
        TorusPoint::origin(1)
    }

    #[test]
    fn bessel_values() {
        // Reference values of J_n(x).
        let j = bessel_sequence(1.0, 1e-300);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-15);
        let j = bessel_sequence(10.0, 1e-300);
        assert!((j[5] + 0.234_061_528_186_793_6).abs() < 1e-14);
        let j = bessel_sequence(100.0, 1e-300);
        assert!((j[0] - 0.019_985_850_304_223_12).abs() < 1e-14);
        let j = bessel_sequence(8000.0, BESSEL_CUTOFF);
        assert!(j.len() > 8000 && j.len() < 8400);
        assert!(j.last().unwrap().abs() < BESSEL_CUTOFF);
        let sum: f64 = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_examples() {
        let h = build_hamiltonian(&golden(), &origin(), &SamplingFunction::free(), 10).unwrap();
        assert_eq!(h.norm_bound(), 2.0);
        let h = build_hamiltonian(&golden(), &origin(), &amo(3.0), 10).unwrap();
        assert_eq!(h.potential_at(0), Some(6.0));
        let alpha = Frequency::golden();
        let skew = MapSpec::skew_shift(&alpha, 2);
        let th = TorusPoint::from_f64s(&[0.1, 0.7]).unwrap();
        let phi = SamplingFunction::Cosine { lambda: 1.3 };
        let h = build_hamiltonian(&skew, &th, &phi, 1000).unwrap();
        for n in [0u64, 1, 17, 999, 1000] {
            let y = skew_closed_form(alpha.turn(), &th, n);
            assert_eq!(h.potential_at(n as i64), Some(phi.eval(y.coords())));
        }
        assert!(build_hamiltonian(&golden(), &origin(), &amo(1.0), 0).is_err());
    }

    #[test]
    fn time_zero_is_delta() {
        let h = build_hamiltonian(&golden(), &origin(), &amo(3.0), 16).unwrap();
        let s = evolve(&h, 0.0).unwrap();
        assert_eq!(s.probability(0), 1.0);
        assert_eq!(s.norm_defect, 0.0);
        for p in [0.5, 1.0, 2.0, 4.0] {
            assert_eq!(moment(&s, p).unwrap(), 1.0);
        }
    }

    #[test]
    fn free_closed_form() {
        let h = build_hamiltonian(&golden(), &origin(), &SamplingFunction::free(), 128).unwrap();
        let s = evolve(&h, 10.0).unwrap();
        let exact = free_amplitudes(10.0, 128);
        for (a, b) in s.psi.iter().zip(&exact) {
            assert!((a - b).norm() < 1e-8);
            assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-8);
        }
        // Incremental steps agree with one long expansion.
        let mut p = Propagator::new(&h, 0).unwrap();
        for k in 1..=40 {
            p.advance_to(0.25 * k as f64);
        }
        for (a, b) in p.psi().iter().zip(&exact) {
            assert!((a - b).norm() < 1e-8);
        }
        assert!(p.norm_defect() < 1e-12);
    }

    #[test]
    fn dense_cross_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let lambda = rng.gen_range(0.0..4.0);
            let t = rng.gen_range(0.0..20.0);
            let th = TorusPoint::new(vec![Turn(rng.gen())]).unwrap();
            let h = build_hamiltonian(&golden(), &th, &amo(lambda), 128).unwrap();
            let cheb = evolve_with_budget(&h, t, 1.0).unwrap();
            let dense = evolve_dense(&h, t).unwrap();
            for (a, b) in cheb.psi.iter().zip(&dense) {
                assert!((a - b).norm() < 1e-9, "λ={lambda} t={t}");
            }
        }
    }

    #[test]
    fn free_second_moment() {
        let h = build_hamiltonian(&golden(), &origin(), &SamplingFunction::free(), 256).unwrap();
        let s = evolve(&h, 50.0).unwrap();
        let m2 = moment(&s, 2.0).unwrap();
        assert!((m2 / (2.0 * 2500.0) - 1.0).abs() < 0.05, "{m2}");
        assert!(moment(&s, 1.0).unwrap() <= m2);
        assert!(s.norm_defect <= NORM_TOLERANCE);
    }

    #[test]
    fn flagged_states_rejected() {
        let h = build_hamiltonian(&golden(), &origin(), &SamplingFunction::free(), 32).unwrap();
        let s = evolve(&h, 30.0).unwrap();
        assert!(!s.is_valid());
        assert!(matches!(moment(&s, 2.0), Err(Error::FlaggedState(_))));
    }

    #[test]
    fn locality_under_doubling() {
        let phi = amo(1.0);
        for t in [5.0, 20.0, 40.0] {
            let a = build_hamiltonian(&golden(), &origin(), &phi, 200).unwrap();
            let b = build_hamiltonian(&golden(), &origin(), &phi, 400).unwrap();
            let ma = moment(&evolve(&a, t).unwrap(), 2.0).unwrap();
            let mb = moment(&evolve(&b, t).unwrap(), 2.0).unwrap();
            assert!((ma / mb - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn abel_examples() {
        let t = 37.0;
        assert!((abel_average(|_| 1.0, t) - (1.0 - (-20f64).exp())).abs() < 1e-6);
        let exact = t / 2.0 * (1.0 - 21.0 * (-20f64).exp());
        assert!((abel_average(|s| s, t) / exact - 1.0).abs() < 1e-4);
        assert!((abel_average(|s| (-2.0 * s / t).exp(), t) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn in_box_probabilities() {
        let map = golden();
        let phi = amo(1.0);
        let prof = abel_profile(&map, &origin(), &phi, 0, &[5.0], 40).unwrap();
        let mut prev = 0.0;
        for l in 0..=prof.half_width {
            let v = prof.in_box(0, l);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        assert!((prof.in_box(0, prof.half_width) - (1.0 - (-20f64).exp())).abs() < 1e-6);
        let (a, b) = p_theta_t(&map, &origin(), &phi, 1e-3, 0, Exec::Parallel).unwrap();
        assert!(a > 0.999 && b > 0.999);
    }

    #[test]
    fn estimators_on_synthetic_power_laws() {
        let ts: Vec<f64> = (0..10).map(|i| 10f64 * 2f64.powi(i)).collect();
        for (beta, p) in [(0.3, 2.0), (1.0, 1.0), (0.0, 3.0)] {
            let ms: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(p * beta)).collect();
            let (lo, hi, _) = beta_from_moments(&ts, &ms, p);
            assert!((lo - beta).abs() < 1e-6 && (hi - beta).abs() < 1e-6);
            assert!(lo <= hi && lo >= 0.0);
        }
        assert!(check_geometric(&[1.0, 2.0, 3.0, 4.0], 4, "grid").is_err());
    }

    #[test]
    fn free_beta_is_ballistic() {
        let ts: Vec<f64> = (0..8).map(|i| 10.0 * 2f64.powi(i)).collect();
        let b = beta_estimate(&golden(), &origin(), &SamplingFunction::free(), 2.0, &ts).unwrap();
        assert!(b.beta_minus >= 0.95 && b.beta_plus <= 1.05, "{b:?}");
        assert!(b.rows.iter().all(|r| r.boundary_mass <= REFLECTION_BUDGET && r.norm_defect <= NORM_TOLERANCE));
    }

    #[test]
    fn localized_beta_is_small() {
        let ts: Vec<f64> = (0..8).map(|i| 10.0 * 1.6f64.powi(i)).collect();
        let b = beta_estimate(&golden(), &origin(), &amo(3.0), 2.0, &ts).unwrap();
        assert!(b.beta_plus <= 0.1, "{b:?}");
        assert!(0.0 <= b.beta_minus && b.beta_minus <= b.beta_plus);
    }

    #[test]
    fn xi_levels_and_limits() {
        let ts: Vec<f64> = (0..4).map(|i| 4.0 * 2f64.powi(i)).collect();
        let loc = xi_estimate(&golden(), &origin(), &amo(3.0), &[0.5, 0.9, 1.5 / 2.0], &ts, Exec::Parallel).unwrap();
        assert!(loc.xi_upper <= 0.1, "{loc:?}");
        for j in 0..ts.len() {
            let ls: Vec<usize> = loc.levels.iter().map(|lv| lv.l[j]).collect();
            assert!(ls.windows(2).all(|w| w[0] <= w[1]), "{ls:?}");
        }
        assert!(xi_estimate(&golden(), &origin(), &amo(3.0), &[1.2], &ts, Exec::Parallel).is_err());
    }

    #[test]
    fn kkl_sides() {
        let map = golden();
        let phi = amo(3.0);
        let e: Vec<f64> = (0..41).map(|i| -8.0 + 0.4 * i as f64).collect();
        let full = kkl_check(&map, &origin(), &phi, 10.0, 60.0, 60.0, &e, Exec::Parallel).unwrap();
        assert!(full.lhs <= 1.0 + 1e-8 && (full.lhs - 1.0).abs() < 1e-6, "{full:?}");
        assert!((full.total_weight - 1.0).abs() < 1e-9);
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for t in [10.0, 100.0, 1000.0] {
            let k = kkl_check(&map, &origin(), &phi, t, 6.0, 6.0, &e, Exec::Parallel).unwrap();
            assert!(k.lhs >= 0.0 && k.lhs <= 1.0 + 1e-8);
            assert!(k.rhs_measure <= k.total_weight + 1e-12);
            // Both sides shrink together as T grows.
            assert!(k.lhs <= prev.0 + 1e-9 && k.rhs_measure <= prev.1 + 1e-9, "{k:?}");
            prev = (k.lhs, k.rhs_measure);
        }
        assert!(kkl_check(&map, &origin(), &phi, 10.0, 2.0, 5.0, &e, Exec::Parallel).is_err());
    }

    #[test]
    fn jacobi_eigen() {
        let a = vec![2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0];
        let (mut vals, _) = symmetric_eigen(a, 3);
        vals.sort_by(f64::total_cmp);
        let s = 2f64.sqrt();
        for (v, e) in vals.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}
