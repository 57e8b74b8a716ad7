//! Zonal filters applied on periodic latitude circles, and the per-row
//! schedule that decides which one runs where.

use crate::decomp::{self, ProcessGrid};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Staggering};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterScheme {
    None,
    Simplified,
    Recursive3,
    Gaussian,
    /// FFT polar filter. Its weights are not available, so selecting it fails.
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Conventional,
    #[serde(alias = "leap")]
    LeapFormat,
}

impl FilterMode {
    pub fn name(self) -> &'static str {
        match self {
            FilterMode::Conventional => "conventional",
            FilterMode::LeapFormat => "leap",
        }
    }
}

/// Explicit 3-point diffusion `F + r (F[x-1] - 2F + F[x+1])`, `passes` times.
pub fn recursive3_filter(row: &[f64], r: f64, passes: usize) -> Result<Vec<f64>> {
    if !(r > 0.0 && r <= 0.25) {
        return Err(Error::Config(format!("recursive filter coefficient {r} outside (0, 0.25]")));
    }
    if row.len() < 3 {
        return Err(Error::Domain(format!("row of {} points is too short", row.len())));
    }
    let n = row.len();
    let mut cur = row.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..passes {
        for x in 0..n {
            let left = cur[(x + n - 1) % n];
            let right = cur[(x + 1) % n];
            next[x] = recursive3_point(left, cur[x], right, r);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

#[inline]
pub(crate) fn recursive3_point(left: f64, centre: f64, right: f64, r: f64) -> f64 {
    centre + r * (left - 2.0 * centre + right)
}

/// Normalised symmetric Gaussian weights of length `2ε + 1`.
pub fn gaussian_weights(half_width: usize, sigma: f64) -> Result<Vec<f64>> {
    if half_width < 1 {
        return Err(Error::Domain("gaussian half width must be >= 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let eps = half_width as isize;
    let raw: Vec<f64> = if sigma.is_infinite() {
        vec![1.0; 2 * half_width + 1]
    } else {
        (-eps..=eps)
            .map(|n| (-((n * n) as f64) / (2.0 * sigma * sigma)).exp())
            .collect()
    };
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // mirror so symmetry survives rounding
    for n in 0..half_width {
        w[2 * half_width - n] = w[n];
    }
    Ok(w)
}

/// Periodic convolution with `weights` centred on each point.
pub fn gaussian_filter(row: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() % 2 == 0 {
        return Err(Error::Domain("gaussian weights must have odd length".into()));
    }
    if weights.len() > row.len() {
        return Err(Error::Domain(format!(
            "{} weights do not fit a row of {}",
            weights.len(),
            row.len()
        )));
    }
    let n = row.len();
    let eps = weights.len() / 2;
    Ok((0..n)
        .map(|x| gaussian_point(|o| row[(x + n + o - eps) % n], weights))
        .collect())
}

/// `Σ w[n] F[x + n - ε]` in ascending `n`; `at(o)` reads offset `o - ε`.
#[inline]
pub(crate) fn gaussian_point(at: impl Fn(usize) -> f64, weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (o, w) in weights.iter().enumerate() {
        acc += w * at(o);
    }
    acc
}

/// Row-constant correction `sign · (2/I) Σ_{x=1}^{I/2-1} (F[2x] - F[2x+1])`
/// added to every point.
pub fn simplified_filter(row: &[f64], sign: f64) -> Result<Vec<f64>> {
    let shift = simplified_shift(row, sign)?;
    Ok(row.iter().map(|v| v + shift).collect())
}

pub fn simplified_shift(row: &[f64], sign: f64) -> Result<f64> {
    let i = row.len();
    if i % 2 != 0 || i < 4 {
        return Err(Error::Domain(format!(
            "simplified filter needs an even row of at least 4 points, got {i}"
        )));
    }
    let mut sum = 0.0;
    for x in 2..i {
        sum += simplified_term(x, row[x]);
    }
    Ok(sign * 2.0 / i as f64 * sum)
}

/// Contribution of point `x` to the pairwise sum; points 0 and 1 do not enter.
#[inline]
pub(crate) fn simplified_term(x: usize, v: f64) -> f64 {
    if x < 2 {
        0.0
    } else if x % 2 == 0 {
        v
    } else {
        -v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub recursive_r: f64,
    pub recursive_passes: usize,
    pub gaussian_half_width: usize,
    pub gaussian_sigma: f64,
    pub simplified_sign: f64,
    pub gaussian_calls_max: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            recursive_r: 0.25,
            recursive_passes: 1,
            gaussian_half_width: 2,
            gaussian_sigma: 1.0,
            simplified_sign: 1.0,
            gaussian_calls_max: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduledRow {
    pub j: usize,
    pub latitude: f64,
    pub scheme: FilterScheme,
    pub call_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSchedule {
    pub mode: FilterMode,
    pub rows: Vec<ScheduledRow>,
}

impl FilterSchedule {
    pub fn total_calls(&self) -> usize {
        self.rows.iter().map(|r| r.call_count).sum()
    }

    /// Gaussian calls on rows poleward of `lat`.
    pub fn gaussian_calls_above(&self, lat: f64) -> usize {
        self.rows
            .iter()
            .filter(|r| r.latitude.abs() > lat && r.scheme == FilterScheme::Gaussian)
            .map(|r| r.call_count)
            .sum()
    }
}

pub fn filter_schedule(grid: &GridSpec, mode: FilterMode, params: &FilterParams) -> Result<FilterSchedule> {
    if params.gaussian_calls_max < 1 {
        return Err(Error::Config("gaussian_calls_max must be >= 1".into()));
    }
    let last_lat = 90.0 - grid.dphi;
    let rows = grid
        .rows(Staggering::SCALAR)
        .into_iter()
        .map(|row| {
            let lat = row.latitude();
            let a = lat.abs();
            let (scheme, call_count) = if row.is_polar_cap {
                (FilterScheme::None, 0)
            } else if a < 38.0 {
                (FilterScheme::Simplified, 1)
            } else if a <= 70.0 {
                (FilterScheme::Recursive3, params.recursive_passes)
            } else if mode == FilterMode::LeapFormat {
                (FilterScheme::None, 0)
            } else {
                (FilterScheme::Gaussian, gaussian_calls(a, last_lat, params.gaussian_calls_max))
            };
            ScheduledRow {
                j: row.j,
                latitude: lat,
                scheme,
                call_count,
            }
        })
        .collect();
    Ok(FilterSchedule { mode, rows })
}

fn gaussian_calls(abs_lat: f64, last_lat: f64, max: usize) -> usize {
    if last_lat <= 70.0 {
        return max;
    }
    let frac = ((abs_lat - 70.0) / (last_lat - 70.0)).clamp(0.0, 1.0);
    (1 + (frac * (max - 1) as f64).round() as usize).clamp(1, max)
}

/// Filter operations per step for each rank: calls × owned points of every row.
pub fn filter_load(grid: &GridSpec, pgrid: &ProcessGrid, schedule: &FilterSchedule) -> Result<Vec<usize>> {
    let xs = decomp::split_all(grid.nx, pgrid.px)?;
    let ys = decomp::split_all(grid.ny, pgrid.py)?;
    let zs = decomp::split_all(grid.nz, pgrid.pz)?;
    (0..pgrid.size())
        .map(|rank| {
            let c = pgrid.coords_of(rank)?;
            let calls: usize = ys[c.ly].range().map(|j| schedule.rows[j].call_count).sum();
            Ok(calls * xs[c.lx].nb * zs[c.lz].nb)
        })
        .collect()
}

/// `max / mean` of a per-rank load vector.
pub fn imbalance(load: &[usize]) -> f64 {
    let max = load.iter().copied().max().unwrap_or(0) as f64;
    let mean = load.iter().sum::<usize>() as f64 / load.len().max(1) as f64;
    if mean == 0.0 {
        1.0
    } else {
        max / mean
    }
}

/// CSV with header `rank,filter_ops_per_step,mode`.
pub fn filter_load_csv(load: &[usize], mode: FilterMode) -> String {
    let mut out = String::from("rank,filter_ops_per_step,mode\n");
    for (rank, ops) in load.iter().enumerate() {
        out.push_str(&format!("{rank},{ops},{}\n", mode.name()));
    }
    out
}

/// Apply one scheduled filter to a full periodic row.
pub fn apply_row(row: &[f64], scheme: FilterScheme, calls: usize, params: &FilterParams) -> Result<Vec<f64>> {
    match scheme {
        FilterScheme::None => Ok(row.to_vec()),
        FilterScheme::Simplified => simplified_filter(row, params.simplified_sign),
        FilterScheme::Recursive3 => recursive3_filter(row, params.recursive_r, calls),
        FilterScheme::Gaussian => {
            let w = gaussian_weights(params.gaussian_half_width, params.gaussian_sigma)?;
            let mut cur = row.to_vec();
            for _ in 0..calls {
                cur = gaussian_filter(&cur, &w)?;
            }
            Ok(cur)
        }
        FilterScheme::Fft => Err(Error::Config(
            "FFT polar filter is unavailable; select the Gaussian scheme".into(),
        )),
    }
}
