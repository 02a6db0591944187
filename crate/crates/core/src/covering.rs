//! Covering times: how many images `f^n(B_r(c))`, `0 ≤ n < M`, are needed to
//! cover `T^d`.

use serde::Serialize;

use crate::arithmetic::SimultaneousApproximation;
use crate::exec::Exec;
use crate::precision::Turn;
use crate::quadrature::linear_fit;
use crate::torus::{turn_distance, MapSpec, TorusPoint};
use crate::{Error, Result};

/// Largest grid resolution per axis.
pub const MAX_GRID: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveringResult {
    pub radius: f64,
    pub center: Vec<f64>,
    /// Minimal number of images; `None` if not covered within `mmax`.
    pub m_cover: Option<u64>,
    pub mmax: u64,
    pub grid: usize,
    pub spacing: f64,
    /// The grid and shrunken-ball test imply coverage by the full ball.
    pub certified: bool,
}

impl CoveringResult {
    pub fn m_cover_or_err(&self) -> Result<u64> {
        self.m_cover.ok_or(Error::NotCovered {
            radius: self.radius,
            max_steps: self.mmax,
        })
    }
}

/// Smallest power of two with spacing at most `r/4`, capped at [`MAX_GRID`].
pub fn grid_for_radius(r: f64) -> usize {
    let mut g = 1usize;
    while (g as f64) * r < 4.0 && g < MAX_GRID {
        g *= 2;
    }
    g
}

fn grid_turn(i: usize, g: usize) -> Turn {
    Turn(((i as u128) << 116) * (4096 / g as u128))
}

/// Grid point `c + i/G`; anchoring at the center keeps shifts translation invariant.
fn decode(mut flat: usize, g: usize, c: &[Turn], out: &mut [Turn]) {
    for k in (0..c.len()).rev() {
        out[k] = c[k] + grid_turn(flat % g, g);
        flat /= g;
    }
}

/// Covering time of `T^d` by `f^n(B_r(c))`.
///
/// Every grid point `x` is tested for `f^{−n}(x) ∈ B_{3r/4}(c)`; the grid
/// spacing is at most `r/4`, so for isometries the full ball `B_r` covers
/// every point of the torus. For the skew-shift the result is a grid
/// measurement without that certificate.
pub fn covering_time(map: &MapSpec, r: f64, c: &TorusPoint, mmax: u64, grid: Option<usize>) -> Result<CoveringResult> {
    covering_time_with(map, r, c, mmax, grid, Exec::default())
}

pub fn covering_time_with(
    map: &MapSpec,
    r: f64,
    c: &TorusPoint,
    mmax: u64,
    grid: Option<usize>,
    exec: Exec,
) -> Result<CoveringResult> {
    let d = map.dim();
    if c.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: c.dim(),
        });
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid("radius must be positive"));
    }
    if mmax == 0 {
        return Err(Error::invalid("Mmax must be at least 1"));
    }
    let g = grid.unwrap_or_else(|| grid_for_radius(r));
    if g == 0 || g > MAX_GRID || !g.is_power_of_two() {
        return Err(Error::invalid(format!("grid {g} must be a power of two up to {MAX_GRID}")));
    }
    let spacing = 1.0 / g as f64;
    let half_diag = spacing * (d as f64).sqrt() / 2.0;
    let mut result = CoveringResult {
        radius: r,
        center: c.to_f64s(),
        m_cover: None,
        mmax,
        grid: g,
        spacing,
        certified: map.is_isometry() && half_diag <= r / 4.0,
    };
    // The ball alone covers the torus once its radius reaches the diameter √d/2.
    if r >= (d as f64).sqrt() / 2.0 {
        result.m_cover = Some(1);
        result.certified = true;
        return Ok(result);
    }
    let total = g.checked_pow(d as u32).ok_or_else(|| Error::invalid("grid too large"))?;
    result.m_cover = if map.is_isometry() {
        forward_marking(map, r, c, mmax, g, total)
    } else {
        backward_search(map, r, c, mmax, g, total, exec)
    };
    Ok(result)
}

/// Mark grid points inside `B_{3r/4}(c + nα)` for `n = 0, 1, …`.
fn forward_marking(map: &MapSpec, r: f64, c: &TorusPoint, mmax: u64, g: usize, total: usize) -> Option<u64> {
    let d = map.dim();
    let rr = 0.75 * r;
    let mut covered = vec![false; total];
    let mut remaining = total;
    let mut center = c.coords().to_vec();
    let reach = (rr * g as f64).ceil() as i64;
    let mut offsets = vec![0i64; d];
    let mut point = vec![Turn::ZERO; d];
    for n in 0..mmax {
        let base: Vec<i64> = center
            .iter()
            .zip(c.coords())
            .map(|(t, c0)| ((*t - *c0).to_f64() * g as f64).floor() as i64)
            .collect();
        // Enumerate the cube of grid offsets around the center.
        offsets.iter_mut().for_each(|o| *o = -reach);
        loop {
            let mut flat = 0usize;
            for k in 0..d {
                let idx = (base[k] + offsets[k]).rem_euclid(g as i64) as usize;
                flat = flat * g + idx;
                point[k] = c.coords()[k] + grid_turn(idx, g);
            }
            if !covered[flat] && turn_distance(&point, &center) < rr {
                covered[flat] = true;
                remaining -= 1;
                if remaining == 0 {
                    return Some(n + 1);
                }
            }
            let mut k = 0;
            while k < d {
                offsets[k] += 1;
                if offsets[k] <= reach + 1 {
                    break;
                }
                offsets[k] = -reach;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        map.step_in_place(&mut center);
    }
    None
}

/// Iterate every grid point backwards until it enters `B_{3r/4}(c)`.
fn backward_search(map: &MapSpec, r: f64, c: &TorusPoint, mmax: u64, g: usize, total: usize, exec: Exec) -> Option<u64> {
    let d = map.dim();
    let rr = 0.75 * r;
    let chunk = 4096usize;
    let chunks = total.div_ceil(chunk);
    let per_chunk = exec.map_range(chunks, |ci| {
        let mut worst = 0u64;
        let mut x = vec![Turn::ZERO; d];
        for flat in ci * chunk..((ci + 1) * chunk).min(total) {
            decode(flat, g, c.coords(), &mut x);
            let mut hit = None;
            for n in 0..mmax {
                if turn_distance(&x, c.coords()) < rr {
                    hit = Some(n + 1);
                    break;
                }
                map.inverse_step_in_place(&mut x);
            }
            worst = worst.max(hit?);
        }
        Some(worst)
    });
    per_chunk.into_iter().try_fold(0u64, |acc, v| v.map(|m| acc.max(m)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveringFit {
    pub results: Vec<CoveringResult>,
    /// Slope of `ln M_cover` against `ln(1/r)`.
    pub slope: f64,
    pub stderr: f64,
}

/// Fit `M_cover(r) ≈ C r^{−s}` over a decreasing sequence of radii.
pub fn covering_exponent_fit(map: &MapSpec, radii: &[f64], mmax: &[u64], c: &TorusPoint, exec: Exec) -> Result<CoveringFit> {
    if radii.len() < 4 {
        return Err(Error::invalid("covering fit needs at least 4 radii"));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("radii must be strictly decreasing"));
    }
    if radii[0] / radii[radii.len() - 1] < 10.0 * (1.0 - 1e-12) {
        return Err(Error::invalid("radii must span at least one decade"));
    }
    if mmax.len() != radii.len() && mmax.len() != 1 {
        return Err(Error::invalid("give one Mmax or one per radius"));
    }
    let mut results = Vec::with_capacity(radii.len());
    for (i, &r) in radii.iter().enumerate() {
        let m = if mmax.len() == 1 { mmax[0] } else { mmax[i] };
        let res = covering_time_with(map, r, c, m, None, exec)?;
        res.m_cover_or_err()?;
        results.push(res);
    }
    let xs: Vec<f64> = radii.iter().map(|r| (1.0 / r).ln()).collect();
    let ys: Vec<f64> = results.iter().map(|r| (r.m_cover.unwrap() as f64).ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(CoveringFit {
        results,
        slope: fit.slope,
        stderr: fit.slope_stderr,
    })
}

/// Determinant of the rows `(m, ℓ_1, ℓ_2)` of records `k, k+1, k+2`.
pub fn lagarias_determinant(approx: &SimultaneousApproximation, k: usize) -> Result<i128> {
    let recs = &approx.records;
    if k + 2 >= recs.len() {
        return Err(Error::invalid(format!(
            "need records {k}..={}, have {}",
            k + 2,
            recs.len()
        )));
    }
    if recs[k].ell.len() != 2 {
        return Err(Error::invalid("determinant needs two-dimensional records"));
    }
    let row = |i: usize| [recs[i].m as i128, recs[i].ell[0] as i128, recs[i].ell[1] as i128];
    Ok(det3([row(k), row(k + 1), row(k + 2)]))
}

pub fn det3(m: [[i128; 3]; 3]) -> i128 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
