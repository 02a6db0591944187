//! Points of `T^d`, the shift and the skew-shift.

use num_bigint::BigUint;
use num_traits::One;

use crate::equidistribution::PointSet;
use crate::precision::{Frequency, Turn};
use crate::{Error, Result};

/// A point of the torus; each coordinate is a 128-bit fraction of a turn.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TorusPoint {
    coords: Vec<Turn>,
}

impl TorusPoint {
    pub fn new(coords: Vec<Turn>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("torus point needs at least one coordinate"));
        }
        Ok(TorusPoint { coords })
    }

    /// Reduce each coordinate mod 1.
    pub fn from_f64s(xs: &[f64]) -> Result<Self> {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite torus coordinate"));
        }
        TorusPoint::new(xs.iter().map(|&x| Turn::from_f64(x)).collect())
    }

    pub fn origin(d: usize) -> Self {
        assert!(d >= 1);
        TorusPoint {
            coords: vec![Turn::ZERO; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Turn] {
        &self.coords
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.to_f64()).collect()
    }

    pub fn translate(&self, v: &[Turn]) -> Result<Self> {
        check_dim(self.dim(), v.len())?;
        Ok(TorusPoint {
            coords: self.coords.iter().zip(v).map(|(&a, &b)| a + b).collect(),
        })
    }
}

/// The dynamics acting on `T^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MapSpec {
    /// `θ ↦ θ + α`.
    Shift { alpha: Vec<Turn> },
    /// `(y_1, …, y_d) ↦ (y_1 + α, y_2 + y_1, …, y_d + y_{d−1})`.
    SkewShift { alpha: Turn, dim: usize },
}

impl MapSpec {
    pub fn shift(alpha: &[Frequency]) -> Self {
        MapSpec::Shift {
            alpha: alpha.iter().map(Frequency::turn).collect(),
        }
    }

    pub fn skew_shift(alpha: &Frequency, dim: usize) -> Self {
        assert!(dim >= 1);
        MapSpec::SkewShift {
            alpha: alpha.turn(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSpec::Shift { alpha } => alpha.len(),
            MapSpec::SkewShift { dim, .. } => *dim,
        }
    }

    /// True when the map is a translation, hence an isometry of `T^d`.
    pub fn is_isometry(&self) -> bool {
        matches!(self, MapSpec::Shift { .. }) || self.dim() == 1
    }

    /// The frequency driving the first coordinate.
    pub fn first_frequency(&self) -> Turn {
        match self {
            MapSpec::Shift { alpha } => alpha[0],
            MapSpec::SkewShift { alpha, .. } => *alpha,
        }
    }

    /// Apply the map in place; the caller guarantees the dimension.
    pub fn step_in_place(&self, x: &mut [Turn]) {
        match self {
            MapSpec::Shift { alpha } => {
                for (c, &a) in x.iter_mut().zip(alpha) {
                    *c += a;
                }
            }
            MapSpec::SkewShift { alpha, .. } => {
                for k in (1..x.len()).rev() {
                    let prev = x[k - 1];
                    x[k] += prev;
                }
                x[0] += *alpha;
            }
        }
    }

    pub fn inverse_step_in_place(&self, x: &mut [Turn]) {
        match self {
            MapSpec::Shift { alpha } => {
                for (c, &a) in x.iter_mut().zip(alpha) {
                    *c -= a;
                }
            }
            MapSpec::SkewShift { alpha, .. } => {
                x[0] -= *alpha;
                for k in 1..x.len() {
                    let prev = x[k - 1];
                    x[k] -= prev;
                }
            }
        }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn step(map: &MapSpec, p: &TorusPoint) -> Result<TorusPoint> {
    check_dim(map.dim(), p.dim())?;
    let mut coords = p.coords.clone();
    map.step_in_place(&mut coords);
    Ok(TorusPoint { coords })
}

pub fn inverse_step(map: &MapSpec, p: &TorusPoint) -> Result<TorusPoint> {
    check_dim(map.dim(), p.dim())?;
    let mut coords = p.coords.clone();
    map.inverse_step_in_place(&mut coords);
    Ok(TorusPoint { coords })
}

/// `(p, f p, …, f^{N−1} p)` as exact fixed-point points.
pub fn orbit_points(map: &MapSpec, p: &TorusPoint, n: usize) -> Result<Vec<TorusPoint>> {
    check_dim(map.dim(), p.dim())?;
    if n == 0 {
        return Err(Error::invalid("orbit length must be at least 1"));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = p.coords.clone();
    for _ in 0..n {
        out.push(TorusPoint { coords: x.clone() });
        map.step_in_place(&mut x);
    }
    Ok(out)
}

/// `(p, f p, …, f^{N−1} p)` converted to a double-precision point set.
pub fn orbit(map: &MapSpec, p: &TorusPoint, n: usize) -> Result<PointSet> {
    check_dim(map.dim(), p.dim())?;
    if n == 0 {
        return Err(Error::invalid("orbit length must be at least 1"));
    }
    let d = p.dim();
    let mut flat = Vec::with_capacity(n * d);
    let mut x = p.coords.clone();
    for _ in 0..n {
        flat.extend(x.iter().map(|c| c.to_f64()));
        map.step_in_place(&mut x);
    }
    PointSet::from_flat(d, flat, Some(orbit_provenance(map, p)))
}

fn orbit_provenance(map: &MapSpec, p: &TorusPoint) -> String {
    let kind = match map {
        MapSpec::Shift { alpha } => format!(
            "shift alpha={:?}",
            alpha.iter().map(|a| a.to_f64()).collect::<Vec<_>>()
        ),
        MapSpec::SkewShift { alpha, dim } => {
            format!("skew-shift d={dim} alpha={}", alpha.to_f64())
        }
    };
    format!("{kind} start={:?}", p.to_f64s())
}

/// Binomial coefficient as an arbitrary-width integer.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// The `n`-th skew-shift iterate of `y`, from the binomial closed form
/// `Y_n[k] = Σ_{j ≤ k} C(n, j) y_{k−j} + C(n, k+1) α`.
pub fn skew_closed_form(alpha: Turn, y: &TorusPoint, n: u64) -> TorusPoint {
    let d = y.dim();
    let binom: Vec<BigUint> = (0..=d as u64).map(|j| binomial(n, j)).collect();
    let coords = (0..d)
        .map(|k| {
            let mut acc = alpha.mul_big(&binom[k + 1]);
            for j in 0..=k {
                acc += y.coords[k - j].mul_big(&binom[j]);
            }
            acc
        })
        .collect();
    TorusPoint { coords }
}

/// Euclidean distance on the flat torus.
pub fn torus_distance(p: &TorusPoint, q: &TorusPoint) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    Ok(turn_distance(&p.coords, &q.coords))
}

pub(crate) fn turn_distance(p: &[Turn], q: &[Turn]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let t = (a - b).norm();
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-coordinate wraparound distance for doubles in `[0, 1)`.
pub fn wrap_delta(a: f64, b: f64) -> f64 {
    let t = (a - b).abs();
    t.min(1.0 - t)
}
