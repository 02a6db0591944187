//! Discrepancy of finite point sets and the inequalities that bound it.

use std::io::{BufRead, Write};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::quadrature::{linear_fit, CompensatedSum};
use crate::torus::wrap_delta;
use crate::{Error, Result};

/// An ordered finite sequence of points of `[0, 1)^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    d: usize,
    coords: Vec<f64>,
    provenance: Option<String>,
}

impl PointSet {
    /// Row-major coordinates, `d` per point.
    pub fn from_flat(d: usize, coords: Vec<f64>, provenance: Option<String>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("point set dimension must be at least 1"));
        }
        if coords.len() % d != 0 {
            return Err(Error::invalid("coordinate count is not a multiple of the dimension"));
        }
        if let Some(bad) = coords.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(Error::invalid(format!("coordinate {bad} outside [0,1)")));
        }
        Ok(PointSet {
            d,
            coords,
            provenance,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        PointSet::from_flat(d, points.concat(), None)
    }

    /// The one-dimensional set `x_n`, each reduced mod 1.
    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        PointSet::from_flat(1, xs.iter().map(|x| x - x.floor()).map(|x| if x >= 1.0 { 0.0 } else { x }).collect(), None)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> PointSet {
        PointSet {
            d: self.d,
            coords: self.coords[..n * self.d].to_vec(),
            provenance: self.provenance.clone(),
        }
    }

    /// Coordinate `j` of every point.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points().map(|p| p[j]).collect()
    }

    /// CSV with a header row, one point per line, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|x| format_f64(*x)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut d = 0;
        let mut coords = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(vals) => {
                    if d == 0 {
                        d = vals.len();
                    } else if vals.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: vals.len(),
                        });
                    }
                    coords.extend(vals);
                }
                Err(_) if lineno == 0 => d = fields.len(),
                Err(_) => {
                    return Err(Error::invalid(format!("unparsable CSV row {}", lineno + 1)));
                }
            }
        }
        PointSet::from_flat(d, coords, Some("csv".into()))
    }
}

/// Shortest decimal with 17 significant digits, the round-trip width of a double.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A region of `T^d` for counting.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Full,
    Empty,
    /// `lo_i ≤ x_i < hi_i` with `0 ≤ lo ≤ hi ≤ 1`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Open Euclidean ball on the torus, radius below `1/2`.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Full => true,
            Region::Empty => false,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&a, &b))| a <= v && v < b),
            Region::Ball { center, radius } => {
                let s: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(&a, &b)| {
                        let t = wrap_delta(a, b);
                        t * t
                    })
                    .sum();
                s < radius * radius
            }
        }
    }

    pub fn volume(&self, d: usize) -> f64 {
        match self {
            Region::Full => 1.0,
            Region::Empty => 0.0,
            Region::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a).max(0.0)).product(),
            Region::Ball { radius, .. } => unit_ball_volume(d) * radius.powi(d as i32),
        }
    }
}

/// Volume of the Euclidean unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * pi / d as f64 * unit_ball_volume(d - 2),
    }
}

/// `A(C; x_1..x_N)`.
pub fn counting(c: &Region, s: &PointSet) -> usize {
    s.points().filter(|p| c.contains(p)).count()
}

/// How a discrepancy value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscrepancyMethod {
    Exact,
    Grid { resolution: usize },
    Sampled { trials: usize },
}

impl std::fmt::Display for DiscrepancyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiscrepancyMethod::Exact => write!(f, "exact"),
            DiscrepancyMethod::Grid { resolution } => write!(f, "grid({resolution})"),
            DiscrepancyMethod::Sampled { trials } => write!(f, "sampled({trials})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub n: usize,
    /// Exact value, or for the grid method the certified lower value.
    pub d_n: f64,
    /// Certified upper value; equals `d_n` for exact evaluation.
    pub d_upper: f64,
    pub method: DiscrepancyMethod,
    /// Additive error bound of the method (`0` when exact).
    pub error_bound: f64,
    pub j_n_lower: Option<f64>,
}

/// Method-selection knobs for [`discrepancy_box_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscrepancyOptions {
    /// Largest `N` for which the exact `d = 2` sweep is used.
    pub exact_limit_d2: usize,
    /// Grid resolution per axis for `d = 2`.
    pub grid_d2: usize,
    /// Force the grid method regardless of `N`.
    pub force_grid: bool,
}

impl Default for DiscrepancyOptions {
    fn default() -> Self {
        DiscrepancyOptions {
            exact_limit_d2: 2048,
            grid_d2: 1024,
            force_grid: false,
        }
    }
}

fn default_grid(d: usize) -> usize {
    match d {
        1 => 4096,
        2 => 1024,
        3 => 16,
        _ => 8,
    }
}

pub fn discrepancy_box(s: &PointSet) -> Result<DiscrepancyReport> {
    discrepancy_box_with(s, DiscrepancyOptions::default(), Exec::default())
}

pub fn discrepancy_box_with(s: &PointSet, opts: DiscrepancyOptions, exec: Exec) -> Result<DiscrepancyReport> {
    let n = s.len();
    if n == 0 {
        return Err(Error::invalid("discrepancy of an empty point set"));
    }
    let d = s.dim();
    if d > 4 {
        return Err(Error::invalid("discrepancy supports d <= 4"));
    }
    let exact = |v: f64| DiscrepancyReport {
        n,
        d_n: v,
        d_upper: v,
        method: DiscrepancyMethod::Exact,
        error_bound: 0.0,
        j_n_lower: None,
    };
    if !opts.force_grid {
        if d == 1 {
            return Ok(exact(exact_1d(&s.column(0))));
        }
        if d == 2 && n <= opts.exact_limit_d2 {
            return Ok(exact(exact_2d(s, exec)));
        }
    }
    let g = if d == 2 { opts.grid_d2 } else { default_grid(d) };
    let lower = if d == 2 { grid_2d(s, g, exec) } else { grid_general(s, g, exec) };
    let err = 2.0 * d as f64 / g as f64;
    Ok(DiscrepancyReport {
        n,
        d_n: lower,
        d_upper: (lower + err).min(1.0),
        method: DiscrepancyMethod::Grid { resolution: g },
        error_bound: err,
        j_n_lower: None,
    })
}

/// `max_{a ≤ b} (b − a + 1)/N − w (y_b − y_a)` over a sorted slice.
fn contain_1d(ys: &[f64], w: f64, inv_n: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut min_prefix = f64::INFINITY;
    for (b, &y) in ys.iter().enumerate() {
        let v = b as f64 * inv_n - w * y;
        min_prefix = min_prefix.min(v);
        best = best.max(v - min_prefix + inv_n);
    }
    best
}

/// `max_{a < b} w (pos_b − pos_a) − (b − a − 1)/N` over `0, ys…, 1`.
fn avoid_1d(ys: &[f64], w: f64, inv_n: f64) -> f64 {
    let mut min_prefix = 0.0; // position 0 at index 0
    let mut best = f64::NEG_INFINITY;
    for (i, &y) in ys.iter().chain(std::iter::once(&1.0)).enumerate() {
        let b = (i + 1) as f64;
        let v = w * y - b * inv_n;
        best = best.max(v - min_prefix + inv_n);
        min_prefix = f64::min(min_prefix, v);
    }
    best
}

/// Exact one-dimensional discrepancy over half-open intervals.
pub fn exact_1d(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let inv_n = 1.0 / v.len() as f64;
    contain_1d(&v, 1.0, inv_n).max(avoid_1d(&v, 1.0, inv_n)).min(1.0)
}

fn insert_sorted(v: &mut Vec<f64>, y: f64) {
    let pos = v.partition_point(|&t| t < y);
    v.insert(pos, y);
}

/// Exact two-dimensional discrepancy by sweeping x-ranges bounded by sample
/// coordinates and solving the induced one-dimensional problem in y.
pub fn exact_2d(s: &PointSet, exec: Exec) -> f64 {
    let n = s.len();
    let mut pts: Vec<(f64, f64)> = s.points().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let inv_n = 1.0 / n as f64;
    let pts = &pts;

    let contain = exec.map_range(n, |i| {
        let mut active = Vec::with_capacity(n - i);
        let mut best = f64::NEG_INFINITY;
        for j in i..n {
            insert_sorted(&mut active, pts[j].1);
            best = best.max(contain_1d(&active, pts[j].0 - pts[i].0, inv_n));
        }
        best
    });
    // The left edge runs over 0 and every sample abscissa.
    let avoid = exec.map_range(n + 1, |i| {
        let xl = if i == 0 { 0.0 } else { pts[i - 1].0 };
        let mut active = Vec::with_capacity(n + 1 - i);
        let mut best = f64::NEG_INFINITY;
        for j in i..=n {
            let xr = if j == n { 1.0 } else { pts[j].0 };
            best = best.max(avoid_1d(&active, xr - xl, inv_n));
            if j < n {
                insert_sorted(&mut active, pts[j].1);
            }
        }
        best
    });
    contain
        .into_iter()
        .chain(avoid)
        .fold(0.0f64, f64::max)
        .min(1.0)
}

fn cell(x: f64, g: usize) -> usize {
    ((x * g as f64) as usize).min(g - 1)
}

/// Largest deviation over boxes with corners on the `G × G` grid.
pub fn grid_2d(s: &PointSet, g: usize, exec: Exec) -> f64 {
    let n = s.len();
    let mut counts = vec![0u32; g * g];
    for p in s.points() {
        counts[cell(p[0], g) * g + cell(p[1], g)] += 1;
    }
    let counts = &counts;
    let inv_n = 1.0 / n as f64;
    let inv_g = 1.0 / g as f64;
    let rows = exec.map_range(g, |k1| {
        let mut strip = vec![0u32; g];
        let mut best: f64 = 0.0;
        for l1 in k1 + 1..=g {
            for (s, &c) in strip.iter_mut().zip(&counts[(l1 - 1) * g..l1 * g]) {
                *s += c;
            }
            let w = (l1 - k1) as f64 * inv_g;
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            let mut acc = 0u32;
            for (t, &c) in strip.iter().enumerate() {
                acc += c;
                let f = acc as f64 * inv_n - w * (t + 1) as f64 * inv_g;
                best = best.max(f - lo).max(hi - f);
                lo = lo.min(f);
                hi = hi.max(f);
            }
        }
        best
    });
    rows.into_iter().fold(0.0, f64::max)
}

/// Grid method in any dimension through `d`-dimensional prefix sums.
pub fn grid_general(s: &PointSet, g: usize, exec: Exec) -> f64 {
    let d = s.dim();
    let n = s.len();
    let side = g + 1;
    let total = side.pow(d as u32);
    let mut prefix = vec![0u32; total];
    let index = |idx: &[usize]| idx.iter().fold(0usize, |acc, &i| acc * side + i);
    for p in s.points() {
        let idx: Vec<usize> = p.iter().map(|&x| cell(x, g) + 1).collect();
        prefix[index(&idx)] += 1;
    }
    // Running sums along each axis turn cell counts into prefix counts.
    for axis in 0..d {
        let stride = side.pow((d - 1 - axis) as u32);
        for flat in 0..total {
            if (flat / stride) % side > 0 {
                prefix[flat] += prefix[flat - stride];
            }
        }
    }
    let prefix = &prefix;
    let inv_n = 1.0 / n as f64;
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|k| (k + 1..=g).map(move |l| (k, l))).collect();
    let pairs = &pairs;
    let strides: Vec<usize> = (0..d).map(|a| side.pow((d - 1 - a) as u32)).collect();
    let strides = &strides;
    let per_first = exec.map(pairs, |&first| {
        let mut best: f64 = 0.0;
        let mut choice = vec![0usize; d];
        assign(1, d, pairs.len(), &mut choice, &mut |choice| {
            let mut count: i64 = 0;
            for mask in 0..(1usize << d) {
                let mut flat = 0;
                let mut sign = 1i64;
                for a in 0..d {
                    let (k, l) = if a == 0 { first } else { pairs[choice[a]] };
                    if mask >> a & 1 == 1 {
                        flat += k * strides[a];
                        sign = -sign;
                    } else {
                        flat += l * strides[a];
                    }
                }
                count += sign * prefix[flat] as i64;
            }
            let mut vol = (first.1 - first.0) as f64 / g as f64;
            for &c in choice.iter().skip(1) {
                vol *= (pairs[c].1 - pairs[c].0) as f64 / g as f64;
            }
            best = best.max((count as f64 * inv_n - vol).abs());
        });
        best
    });
    per_first.into_iter().fold(0.0, f64::max)
}

fn assign(axis: usize, d: usize, m: usize, choice: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if axis == d {
        f(choice);
        return;
    }
    for c in 0..m {
        choice[axis] = c;
        assign(axis + 1, d, m, choice, f);
    }
}

/// One convex test set of diameter below `1/2`.
#[derive(Clone, Debug)]
enum TrialSet {
    Ball { center: Vec<f64>, radius: f64 },
    /// Rectangle `|u| < a, |v| < b` in coordinates rotated by `phi` (d = 2).
    Rotated { center: [f64; 2], a: f64, b: f64, phi: f64 },
    /// Axis box with the given half-sides around `center`.
    AxisBox { center: Vec<f64>, half: Vec<f64> },
}

fn signed_delta(a: f64, c: f64) -> f64 {
    let t = a - c;
    t - t.round()
}

impl TrialSet {
    fn volume(&self, d: usize) -> f64 {
        match self {
            TrialSet::Ball { radius, .. } => unit_ball_volume(d) * radius.powi(d as i32),
            TrialSet::Rotated { a, b, .. } => 4.0 * a * b,
            TrialSet::AxisBox { half, .. } => half.iter().map(|h| 2.0 * h).product(),
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self {
            TrialSet::Ball { center, radius } => {
                x.iter()
                    .zip(center)
                    .map(|(&p, &c)| signed_delta(p, c).powi(2))
                    .sum::<f64>()
                    < radius * radius
            }
            TrialSet::Rotated { center, a, b, phi } => {
                let dx = signed_delta(x[0], center[0]);
                let dy = signed_delta(x[1], center[1]);
                let (s, c) = phi.sin_cos();
                (c * dx + s * dy).abs() < *a && (-s * dx + c * dy).abs() < *b
            }
            TrialSet::AxisBox { center, half } => x
                .iter()
                .zip(center.iter().zip(half))
                .all(|(&p, (&c, &h))| signed_delta(p, c).abs() < h),
        }
    }
}

fn draw_trial(rng: &mut ChaCha8Rng, d: usize, k: usize) -> TrialSet {
    let center: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    // Every set sits inside a ball of radius 1/4, so its diameter is below 1/2.
    let rmax = 0.25;
    if k % 2 == 0 || d == 1 {
        return TrialSet::Ball {
            center,
            radius: rmax * rng.gen::<f64>(),
        };
    }
    let r = rmax * rng.gen::<f64>();
    if d == 2 {
        let t = std::f64::consts::FRAC_PI_2 * rng.gen::<f64>();
        TrialSet::Rotated {
            center: [center[0], center[1]],
            a: r * t.cos(),
            b: r * t.sin(),
            phi: std::f64::consts::PI * rng.gen::<f64>(),
        }
    } else {
        let raw: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        TrialSet::AxisBox {
            center,
            half: raw.iter().map(|x| r * x / norm).collect(),
        }
    }
}

/// Randomised lower estimate of the isotropic discrepancy.
///
/// Trial sets alternate between open balls and (rotated, for `d = 2`) boxes;
/// all of them are convex with diameter below `1/2`.
pub fn isotropic_discrepancy_lower(s: &PointSet, trials: usize, seed: u64) -> Result<f64> {
    isotropic_discrepancy_lower_with(s, trials, seed, Exec::default())
}

pub fn isotropic_discrepancy_lower_with(s: &PointSet, trials: usize, seed: u64, exec: Exec) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    if s.is_empty() {
        return Err(Error::invalid("empty point set"));
    }
    let d = s.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<TrialSet> = (0..trials).map(|k| draw_trial(&mut rng, d, k)).collect();
    let inv_n = 1.0 / s.len() as f64;
    let devs = exec.map(&sets, |set| {
        let count = s.points().filter(|p| set.contains(p)).count();
        (count as f64 * inv_n - set.volume(d)).abs()
    });
    Ok(devs.into_iter().fold(0.0, f64::max))
}

/// The upper half of the isotropic relation, `(4d√d + 1) D^{1/d}`.
pub fn isotropic_upper_relation(d: usize, d_n: f64) -> f64 {
    let df = d as f64;
    (4.0 * df * df.sqrt() + 1.0) * d_n.powf(1.0 / df)
}

/// The default ETK constant `2 (3/2)^d`.
pub fn default_etk_constant(d: usize) -> f64 {
    2.0 * 1.5f64.powi(d as i32)
}

/// Exponential-sum tables `e(k x_{n,j})` for `0 ≤ k ≤ H`, laid out `[j][k][n]`.
struct ExpTable {
    n: usize,
    h: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ExpTable {
    fn new(s: &PointSet, h: usize, exec: Exec) -> Self {
        let (n, d) = (s.len(), s.dim());
        let rows = exec.map_range(d * (h + 1), |row| {
            let (j, k) = (row / (h + 1), row % (h + 1));
            s.points()
                .map(|p| {
                    let t = k as f64 * p[j];
                    (std::f64::consts::TAU * (t - t.floor())).sin_cos()
                })
                .collect::<Vec<_>>()
        });
        let mut re = Vec::with_capacity(d * (h + 1) * n);
        let mut im = Vec::with_capacity(d * (h + 1) * n);
        for row in rows {
            for (s, c) in row {
                re.push(c);
                im.push(s);
            }
        }
        ExpTable { n, h, re, im }
    }

    fn at(&self, j: usize, k: i64, i: usize) -> Complex64 {
        let off = (j * (self.h + 1) + k.unsigned_abs() as usize) * self.n + i;
        let im = if k < 0 { -self.im[off] } else { self.im[off] };
        Complex64::new(self.re[off], im)
    }
}

/// `|(1/N) Σ_n e(⟨h, x_n⟩)|` with compensated summation.
pub fn exponential_sum(s: &PointSet, h: &[i64]) -> f64 {
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for p in s.points() {
        let t: f64 = p.iter().zip(h).map(|(&x, &k)| {
            let v = k as f64 * x;
            v - v.floor()
        }).sum();
        let (sn, cs) = (std::f64::consts::TAU * t).sin_cos();
        re.add(cs);
        im.add(sn);
    }
    Complex64::new(re.value(), im.value()).norm() / s.len() as f64
}

fn half_space_vectors(d: usize, h0: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut cur = vec![0i64; d];
    fn rec(i: usize, h0: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if i == cur.len() {
            if cur.iter().any(|&x| x != 0) {
                out.push(cur.clone());
            }
            return;
        }
        let leading_zero = cur[..i].iter().all(|&x| x == 0);
        for x in if leading_zero { 0 } else { -h0 }..=h0 {
            cur[i] = x;
            rec(i + 1, h0, cur, out);
        }
        cur[i] = 0;
    }
    rec(0, h0, &mut cur, &mut out);
    out
}

/// Right-hand side of the Erdős–Turán–Koksma inequality:
/// `C_d (1/H_0 + Σ_{0 < |h|_∞ ≤ H_0} r(h)^{-1} |(1/N) Σ_n e(⟨h, x_n⟩)|)`.
pub fn etk_bound(s: &PointSet, h0: u64, c_d: f64) -> Result<f64> {
    etk_bound_with(s, h0, c_d, Exec::default())
}

pub fn etk_bound_with(s: &PointSet, h0: u64, c_d: f64, exec: Exec) -> Result<f64> {
    if h0 == 0 {
        return Err(Error::invalid("ETK height must be at least 1"));
    }
    if s.is_empty() {
        return Err(Error::invalid("empty point set"));
    }
    let d = s.dim();
    let table = ExpTable::new(s, h0 as usize, exec);
    let hs = half_space_vectors(d, h0 as i64);
    let inv_n = 1.0 / s.len() as f64;
    let terms = exec.map(&hs, |h| {
        let mut re = CompensatedSum::new();
        let mut im = CompensatedSum::new();
        for i in 0..table.n {
            let mut z = Complex64::one();
            for (j, &k) in h.iter().enumerate() {
                if k != 0 {
                    z *= table.at(j, k, i);
                }
            }
            re.add(z.re);
            im.add(z.im);
        }
        let mag = Complex64::new(re.value(), im.value()).norm() * inv_n;
        // h and -h contribute equally.
        2.0 * mag / crate::arithmetic::r_height(h) as f64
    });
    let mut total = CompensatedSum::new();
    total.add(1.0 / h0 as f64);
    for t in terms {
        total.add(t);
    }
    Ok(c_d * total.value())
}

/// Running infimum of the ETK bound over the given heights.
pub fn etk_infimum(s: &PointSet, heights: &[u64], c_d: f64, exec: Exec) -> Result<Vec<f64>> {
    let mut best = f64::INFINITY;
    heights
        .iter()
        .map(|&h| {
            best = best.min(etk_bound_with(s, h, c_d, exec)?);
            Ok(best)
        })
        .collect()
}

/// Both sides of Van der Corput's fundamental inequality.
pub fn vdc_inequality(u: &[Complex64], h: usize) -> Result<(f64, f64)> {
    let n = u.len();
    if n == 0 || h == 0 || h > n {
        return Err(Error::invalid(format!("need 1 <= H <= N, got H={h}, N={n}")));
    }
    let (nf, hf) = (n as f64, h as f64);
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for z in u {
        re.add(z.re);
        im.add(z.im);
    }
    let lhs = (re.value().powi(2) + im.value().powi(2)) / (nf * nf);
    let energy = crate::quadrature::compensated_sum(u.iter().map(|z| z.norm_sqr()));
    let mut corr = CompensatedSum::new();
    for k in 1..h {
        let c = crate::quadrature::compensated_sum((0..n - k).map(|i| (u[i] * u[i + k].conj()).re));
        corr.add((h - k) as f64 * c);
    }
    let rhs = (nf + hf - 1.0) / (nf * nf * hf) * energy
        + 2.0 * (nf + hf - 1.0) / (nf * nf * hf * hf) * corr.value();
    Ok((lhs, rhs))
}

fn binom_big(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `Σ_{l ∈ {0,1}^s} (−1)^{s − Σ l} C(Σ l_t r_t, a)` for `a = s − 1` and `a = s`.
pub fn comb_identity(s: usize, r: &[u64]) -> Result<(BigInt, BigInt)> {
    if s == 0 || r.len() != s {
        return Err(Error::invalid("comb_identity needs s >= 1 and |r| = s"));
    }
    if r.iter().any(|&x| x == 0) {
        return Err(Error::invalid("comb_identity needs positive r_t"));
    }
    if s > 24 {
        return Err(Error::invalid("comb_identity limited to s <= 24"));
    }
    let mut low = BigInt::zero();
    let mut top = BigInt::zero();
    for mask in 0u32..(1 << s) {
        let total: u64 = (0..s).filter(|&t| mask >> t & 1 == 1).map(|t| r[t]).sum();
        let ones = mask.count_ones() as usize;
        let sign = if (s - ones) % 2 == 0 { 1 } else { -1 };
        low += sign * binom_big(total, s as u64 - 1);
        top += sign * binom_big(total, s as u64);
    }
    Ok((low, top))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub samples: Vec<(f64, f64)>,
    /// Fitted slope of `log D` against `log N`, i.e. `−δ̂`.
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub window: (f64, f64),
}

impl RateFit {
    pub fn delta(&self) -> f64 {
        -self.slope
    }
}

/// Least-squares slope of `log D` versus `log N`.
pub fn decay_rate_fit(samples: &[(f64, f64)]) -> Result<RateFit> {
    if samples.len() < 5 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 5 samples, got {}",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("rate fit needs strictly increasing N"));
    }
    if samples.iter().any(|&(n, d)| !(n > 0.0) || !(d > 0.0)) {
        return Err(Error::invalid("rate fit needs positive N and D"));
    }
    let (lo, hi) = (samples[0].0, samples[samples.len() - 1].0);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::invalid("rate fit window must span at least two decades"));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(RateFit {
        samples: samples.to_vec(),
        slope: fit.slope,
        stderr: fit.slope_stderr,
        intercept: fit.intercept,
        window: (lo, hi),
    })
}

/// `n` integers spaced geometrically between `lo` and `hi` (inclusive).
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<usize> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let mut out: Vec<usize> = (0..n)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).round() as usize)
        .collect();
    out.dedup();
    out
}
