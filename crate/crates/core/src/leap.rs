//! Leap-format zonal differencing.
//!
//! Near the poles the zonal spacing `a sin(θ) Δλ` collapses. The leap scheme
//! widens the zonal span of the central difference on those rows to
//! `n_leap` intervals, where `n_leap` restores (at least) the physical
//! spacing of the 45° reference circle. At `n_leap = 1` every operator here
//! reduces to the ordinary two-point difference.

use crate::error::{Error, Result};
use crate::grid::{self, GridSpec, Offset, Staggering};
use crate::halo::{pattern_offsets, Pattern};
use serde::Serialize;

pub const DEFAULT_ACTIVATION_LAT: f64 = 70.0;
pub const DEFAULT_REFERENCE_LAT: f64 = 45.0;

/// Unadjusted leap interval at colatitude `θ` (northern-hemisphere form,
/// `0 < θ <= 90`).
pub fn n_leap_raw(dlambda_deg: f64, colatitude_deg: f64, reference_lat_deg: f64) -> Result<u32> {
    if colatitude_deg <= 0.0 {
        return Err(Error::PoleSingularity {
            colatitude_deg,
        });
    }
    if colatitude_deg > 90.0 {
        return Err(Error::Domain(format!(
            "colatitude must be <= 90 (mirror southern rows), got {colatitude_deg}"
        )));
    }
    if !(dlambda_deg > 0.0 && dlambda_deg < 90.0) {
        return Err(Error::Domain(format!(
            "zonal resolution must lie in (0, 90), got {dlambda_deg}"
        )));
    }
    let sin_res = grid::to_radians(dlambda_deg).sin();
    let reference = (grid::to_radians(reference_lat_deg).cos() * sin_res).asin();
    let local = (grid::to_radians(90.0 - colatitude_deg).cos() * sin_res).asin();
    let ratio = (reference / local).ceil();
    Ok(if ratio < 1.0 { 1 } else { ratio as u32 })
}

/// Variables on half-integer longitudes need an odd interval so that both
/// ends of the difference land on their own lattice; round up, never down.
pub fn n_leap_for(stagger: Staggering, raw: u32) -> u32 {
    match stagger.x_offset {
        Offset::Integer => raw,
        Offset::SemiInteger if raw % 2 == 0 => raw + 1,
        Offset::SemiInteger => raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeapRow {
    pub j: usize,
    pub latitude: f64,
    pub colatitude: f64,
    /// Formula value before parity adjustment (1 on inactive rows).
    pub n_leap_raw: u32,
    pub n_leap: u32,
    /// `zonal_spacing * n_leap`, kilometres; zero on pole rows.
    pub effective_spacing: f64,
    pub active: bool,
    pub is_polar_cap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeapTable {
    pub stagger: Staggering,
    pub activation_lat: f64,
    pub reference_lat: f64,
    pub rows: Vec<LeapRow>,
}

impl LeapTable {
    pub fn n_leap(&self, j: usize) -> u32 {
        self.rows[j].n_leap
    }

    pub fn max_n_leap(&self) -> u32 {
        self.rows.iter().map(|r| r.n_leap).max().unwrap_or(1)
    }

    /// Smallest effective zonal spacing over non-pole rows, km.
    pub fn min_effective_spacing(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.is_polar_cap)
            .map(|r| r.effective_spacing)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `j,latitude_deg,colatitude_deg,n_leap,effective_spacing_km,active`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,latitude_deg,colatitude_deg,n_leap,effective_spacing_km,active\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{:.6},{}\n",
                r.j, r.latitude, r.colatitude, r.n_leap, r.effective_spacing, r.active
            ));
        }
        out
    }
}

pub fn build_leap_table(
    grid: &GridSpec,
    stagger: Staggering,
    activation_lat: f64,
    reference_lat: f64,
) -> Result<LeapTable> {
    if activation_lat < reference_lat {
        return Err(Error::Config(format!(
            "activation latitude {activation_lat} below reference latitude {reference_lat}"
        )));
    }
    let rows = grid
        .rows(stagger)
        .into_iter()
        .map(|row| {
            let lat = row.latitude();
            if row.is_polar_cap {
                return Ok(LeapRow {
                    j: row.j,
                    latitude: lat,
                    colatitude: row.colatitude,
                    n_leap_raw: 1,
                    n_leap: 1,
                    effective_spacing: 0.0,
                    active: false,
                    is_polar_cap: true,
                });
            }
            let spacing = grid::zonal_spacing(grid, row.colatitude)?;
            let active = lat.abs() > activation_lat;
            let (raw, n) = if active {
                // southern rows mirror onto the northern hemisphere
                let theta = row.colatitude.min(180.0 - row.colatitude);
                let raw = n_leap_raw(grid.dlambda, theta, reference_lat)?;
                (raw, n_leap_for(stagger, raw))
            } else {
                (1, 1)
            };
            Ok(LeapRow {
                j: row.j,
                latitude: lat,
                colatitude: row.colatitude,
                n_leap_raw: raw,
                n_leap: n,
                effective_spacing: spacing * n as f64,
                active,
                is_polar_cap: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeapTable {
        stagger,
        activation_lat,
        reference_lat,
        rows,
    })
}

/// Admissible time step over a leap table, seconds (`None` when `u_max = 0`).
pub fn admissible_dt(table: &LeapTable, u_max: f64) -> Result<Option<f64>> {
    Ok(grid::max_stable_dt(table.min_effective_spacing(), u_max)?.seconds())
}

/// A row of owned values with `left`/`right` halo points on either side.
#[derive(Debug, Clone, Copy)]
pub struct HaloRow<'a> {
    pub data: &'a [f64],
    pub left: usize,
    pub right: usize,
}

impl<'a> HaloRow<'a> {
    pub fn new(data: &'a [f64], left: usize, right: usize) -> Result<Self> {
        if left + right > data.len() {
            return Err(Error::Contract(format!(
                "halo widths {left}+{right} exceed row length {}",
                data.len()
            )));
        }
        Ok(Self { data, left, right })
    }

    pub fn owned_len(&self) -> usize {
        self.data.len() - self.left - self.right
    }
}

/// Leap-format difference `(F[x+r] - F[x-l]) / (Δx · (l + r))` with the
/// offsets `(l, r)` of `pattern` at interval `n_leap`.
pub fn leap_central_diff_x(
    row: HaloRow<'_>,
    pattern: Pattern,
    n_leap: u32,
    spacing: f64,
) -> Result<Vec<f64>> {
    if n_leap == 0 {
        return Err(Error::Domain("n_leap must be >= 1".into()));
    }
    let (l, r) = pattern_offsets(pattern, n_leap);
    if row.left < l || row.right < r {
        return Err(Error::Contract(format!(
            "{pattern:?} at n_leap={n_leap} needs halo ({l}, {r}), row carries ({}, {})",
            row.left, row.right
        )));
    }
    let span = (l + r) as f64;
    let base = row.left;
    Ok((0..row.owned_len())
        .map(|x| (row.data[base + x + r] - row.data[base + x - l]) / (spacing * span))
        .collect())
}

/// The ordinary two-point difference each pattern degrades to.
pub fn standard_central_diff_x(row: HaloRow<'_>, pattern: Pattern, spacing: f64) -> Result<Vec<f64>> {
    if row.left < 1 && pattern != Pattern::PlusHalf || row.right < 1 && pattern != Pattern::MinusHalf
    {
        return Err(Error::Contract("standard difference needs a one-point halo".into()));
    }
    let b = row.left;
    let d = row.data;
    Ok((0..row.owned_len())
        .map(|x| match pattern {
            Pattern::PlusHalf => (d[b + x + 1] - d[b + x]) / (spacing * 1.0),
            Pattern::MinusHalf => (d[b + x] - d[b + x - 1]) / (spacing * 1.0),
            Pattern::Wide => (d[b + x + 1] - d[b + x - 1]) / (spacing * 2.0),
        })
        .collect())
}

/// Leap difference over a whole periodic zonal circle, indices wrap mod `len`.
pub fn periodic_leap_diff(row: &[f64], pattern: Pattern, n_leap: u32, spacing: f64) -> Result<Vec<f64>> {
    let nx = row.len();
    let (l, r) = pattern_offsets(pattern, n_leap);
    if l >= nx || r >= nx {
        return Err(Error::InfeasibleWindow {
            width: l.max(r),
            nx,
        });
    }
    let mut padded = Vec::with_capacity(nx + l + r);
    padded.extend_from_slice(&row[nx - l..]);
    padded.extend_from_slice(row);
    padded.extend_from_slice(&row[..r]);
    leap_central_diff_x(HaloRow::new(&padded, l, r)?, pattern, n_leap, spacing)
}
