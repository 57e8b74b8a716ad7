//! Latitude-longitude C-grid geometry.
//!
//! Latitude points run pole to pole inclusive: `ny` points, `ny - 1`
//! intervals, so `dphi = 180 / (ny - 1)`. Row `j` of an integer-y variable
//! sits at colatitude `j * dphi`; row `j` of a semi-integer-y variable (V)
//! sits half a spacing further south. Angles are degrees at every public
//! boundary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// The only place degrees become radians.
#[inline]
pub fn to_radians(deg: f64) -> f64 {
    deg * (std::f64::consts::PI / 180.0)
}

#[inline]
pub fn to_degrees(rad: f64) -> f64 {
    rad * (180.0 / std::f64::consts::PI)
}

/// Raw mesh counts, without the geometric invariants of [`GridSpec`].
///
/// Parallelism bounds are defined for arbitrary counts (including degenerate
/// single-point meshes), so they take this instead of a full grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshSize {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl MeshSize {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Zonal angular spacing, degrees.
    pub dlambda: f64,
    /// Meridional angular spacing, degrees.
    pub dphi: f64,
    pub earth_radius: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::with_radius(nx, ny, nz, EARTH_RADIUS_KM)
    }

    pub fn with_radius(nx: usize, ny: usize, nz: usize, earth_radius: f64) -> Result<Self> {
        if nx < 4 {
            return Err(Error::Domain(format!("nx must be >= 4, got {nx}")));
        }
        if ny < 3 {
            return Err(Error::Domain(format!("ny must be >= 3, got {ny}")));
        }
        if nz < 1 {
            return Err(Error::Domain("nz must be >= 1".into()));
        }
        if !(earth_radius > 0.0 && earth_radius.is_finite()) {
            return Err(Error::Domain(format!(
                "earth radius must be positive, got {earth_radius}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            dlambda: 360.0 / nx as f64,
            dphi: 180.0 / (ny - 1) as f64,
            earth_radius,
        })
    }

    pub fn mesh(&self) -> MeshSize {
        MeshSize::new(self.nx, self.ny, self.nz)
    }

    /// Number of latitude rows carried by a variable with this staggering.
    pub fn row_count(&self, stagger: Staggering) -> usize {
        match stagger.y_offset {
            Offset::Integer => self.ny,
            Offset::SemiInteger => self.ny - 1,
        }
    }

    pub fn rows(&self, stagger: Staggering) -> Vec<LatitudeRow> {
        (0..self.row_count(stagger))
            .map(|j| LatitudeRow::new(self, j, stagger).expect("row index in range"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Offset {
    Integer,
    SemiInteger,
}

/// Position of a variable on the C grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Staggering {
    pub x_offset: Offset,
    pub y_offset: Offset,
    pub z_offset: Offset,
}

impl Staggering {
    /// Zonal wind: half a point east, on integer latitude rows.
    pub const U: Staggering = Staggering {
        x_offset: Offset::SemiInteger,
        y_offset: Offset::Integer,
        z_offset: Offset::Integer,
    };
    /// Meridional wind: integer longitudes, half a row toward the south pole.
    pub const V: Staggering = Staggering {
        x_offset: Offset::Integer,
        y_offset: Offset::SemiInteger,
        z_offset: Offset::Integer,
    };
    pub const SCALAR: Staggering = Staggering {
        x_offset: Offset::Integer,
        y_offset: Offset::Integer,
        z_offset: Offset::Integer,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatitudeRow {
    pub j: usize,
    pub colatitude: f64,
    pub is_polar_cap: bool,
}

impl LatitudeRow {
    pub fn new(grid: &GridSpec, j: usize, stagger: Staggering) -> Result<Self> {
        let colatitude = colatitude(grid, j, stagger)?;
        let is_polar_cap = stagger.y_offset == Offset::Integer && (j == 0 || j == grid.ny - 1);
        Ok(Self {
            j,
            colatitude,
            is_polar_cap,
        })
    }

    pub fn latitude(&self) -> f64 {
        90.0 - self.colatitude
    }
}

pub fn colatitude(grid: &GridSpec, j: usize, stagger: Staggering) -> Result<f64> {
    let rows = grid.row_count(stagger);
    if j >= rows {
        return Err(Error::Domain(format!(
            "row {j} out of range for {rows} rows"
        )));
    }
    let theta = match stagger.y_offset {
        Offset::Integer => j as f64 * grid.dphi,
        Offset::SemiInteger => (j as f64 + 0.5) * grid.dphi,
    };
    Ok(theta.clamp(0.0, 180.0))
}

/// `a sin(θ) Δλ` for the grid's zonal spacing.
pub fn zonal_spacing(grid: &GridSpec, colatitude_deg: f64) -> Result<f64> {
    zonal_spacing_for(grid.dlambda, colatitude_deg, grid.earth_radius)
}

/// `a sin(θ) Δλ` for an explicit zonal resolution, in kilometres.
pub fn zonal_spacing_for(dlambda_deg: f64, colatitude_deg: f64, earth_radius: f64) -> Result<f64> {
    if !(colatitude_deg > 0.0 && colatitude_deg < 180.0) {
        return Err(Error::PoleSingularity {
            colatitude_deg,
        });
    }
    Ok(earth_radius * to_radians(colatitude_deg).sin() * to_radians(dlambda_deg))
}

/// Great-circle chord length between two points `res` degrees apart on the
/// circle of latitude `latitude_deg`.
pub fn zonal_arc(latitude_deg: f64, res_deg: f64, earth_radius: f64) -> Result<f64> {
    if latitude_deg.abs() >= 90.0 {
        return Err(Error::Domain(format!(
            "latitude must satisfy |lat| < 90, got {latitude_deg}"
        )));
    }
    if !(res_deg > 0.0 && res_deg < 90.0) {
        return Err(Error::Domain(format!(
            "resolution must lie in (0, 90), got {res_deg}"
        )));
    }
    let half = to_radians(res_deg) * 0.5;
    Ok(2.0 * earth_radius * (to_radians(latitude_deg).cos() * half.sin()).asin())
}

/// Outcome of the CFL bound `dt <= dx / U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StableDt {
    Bounded(f64),
    /// No advecting velocity, so no bound.
    Unbounded,
}

impl StableDt {
    pub fn seconds(self) -> Option<f64> {
        match self {
            StableDt::Bounded(s) => Some(s),
            StableDt::Unbounded => None,
        }
    }
}

/// `spacing_km` in kilometres, `u_max` in m/s.
pub fn max_stable_dt(min_effective_spacing_km: f64, u_max: f64) -> Result<StableDt> {
    if !(min_effective_spacing_km > 0.0) {
        return Err(Error::Domain(format!(
            "spacing must be positive, got {min_effective_spacing_km}"
        )));
    }
    if u_max < 0.0 || u_max.is_nan() {
        return Err(Error::Domain(format!("u_max must be >= 0, got {u_max}")));
    }
    if u_max == 0.0 {
        return Ok(StableDt::Unbounded);
    }
    Ok(StableDt::Bounded(min_effective_spacing_km * 1000.0 / u_max))
}

/// Polar zonal spacing of one table resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZonalSizeRow {
    pub res_deg: f64,
    pub equator_km: f64,
    pub u_pole_km: f64,
    pub v_pole_km: f64,
}

/// Equator and nearest-to-pole zonal spacings for a square resolution.
///
/// U rows nearest the pole sit at θ = res, V rows at θ = res / 2.
pub fn zonal_size_row(res_deg: f64, earth_radius: f64) -> Result<ZonalSizeRow> {
    Ok(ZonalSizeRow {
        res_deg,
        equator_km: zonal_spacing_for(res_deg, 90.0, earth_radius)?,
        u_pole_km: zonal_spacing_for(res_deg, res_deg, earth_radius)?,
        v_pole_km: zonal_spacing_for(res_deg, res_deg * 0.5, earth_radius)?,
    })
}
