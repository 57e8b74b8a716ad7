//! A toy dynamical core.
//!
//! Linear surrogate kernels on a lat-lon C grid: advection by a fixed
//! solid-body wind, a pressure-adjustment "adaption" coupling U, V, T and
//! PS through the σ-velocity, and the zonal filter schedule. Each outer step
//! runs three cycles of `M` advection calls plus one adaption call, then the
//! filters. Pole rows are held fixed.
//!
//! [`run`] executes the decomposed model on the simulated runtime; [`serial`]
//! is an independent whole-array oracle built on the periodic row functions.

mod field;
mod parallel;
pub mod serial;

pub use parallel::{measure_standard_halo, predict_group_traffic, run, GroupTraffic, RunReport};

use crate::decomp::ProcessGrid;
use crate::error::{Error, Result};
use crate::filters::{filter_schedule, FilterMode, FilterParams, FilterSchedule, FilterScheme};
use crate::grid::{self, GridSpec, Staggering};
use crate::leap::{build_leap_table, DEFAULT_ACTIVATION_LAT, DEFAULT_REFERENCE_LAT};
use crate::runtime::Schedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Coefficients of the surrogate kernels. Speeds in m/s, `w0` in layers/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPhysics {
    /// Peak zonal wind; also the CFL speed.
    pub u0: f64,
    pub v0: f64,
    pub w0: f64,
    /// Adjustment wave speed.
    pub gamma: f64,
    pub mu: f64,
    /// Scales every initial field; 0 gives an all-zero state.
    pub amplitude: f64,
}

impl Default for ToyPhysics {
    fn default() -> Self {
        Self {
            u0: 20.0,
            v0: 2.0,
            w0: 1e-5,
            gamma: 10.0,
            mu: 0.1,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    /// Half the CFL bound.
    Auto,
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DycoreConfig {
    pub grid: GridSpec,
    pub pgrid: ProcessGrid,
    pub mode: FilterMode,
    pub activation_lat: f64,
    pub reference_lat: f64,
    pub dt: TimeStep,
    pub m_ratio: usize,
    pub seed: u64,
    pub aggregate: bool,
    pub filter: FilterParams,
    pub physics: ToyPhysics,
    pub schedule: Schedule,
}

impl DycoreConfig {
    /// The 48×24×8 desk grid on one rank.
    pub fn desk() -> Self {
        Self {
            grid: GridSpec::new(48, 24, 8).expect("desk grid"),
            pgrid: ProcessGrid::serial(),
            mode: FilterMode::LeapFormat,
            activation_lat: DEFAULT_ACTIVATION_LAT,
            reference_lat: DEFAULT_REFERENCE_LAT,
            dt: TimeStep::Auto,
            m_ratio: 2,
            seed: 1,
            aggregate: true,
            filter: FilterParams::default(),
            physics: ToyPhysics::default(),
            schedule: Schedule::RoundRobin,
        }
    }
}

/// Everything the kernels need that depends only on the configuration.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Leap interval per storage row (1 everywhere in conventional mode).
    pub n_row: Vec<u32>,
    /// Zonal spacing per row, km; 0 on pole rows.
    pub dx: Vec<f64>,
    pub latitude: Vec<f64>,
    pub is_pole: Vec<bool>,
    /// Meridional spacing, km.
    pub dy: f64,
    /// Zonal wind per row, km/s.
    pub u0_row: Vec<f64>,
    pub v0: f64,
    pub w0: f64,
    pub gamma: f64,
    pub mu: f64,
    pub coef: Vec<f64>,
    pub s_k: Vec<f64>,
    pub schedule: FilterSchedule,
    pub filter: FilterParams,
    /// X halo margin of every local field.
    pub hx: usize,
    pub dt: f64,
    pub cfl_dt: f64,
}

impl Geometry {
    pub fn new(cfg: &DycoreConfig) -> Result<Self> {
        let g = &cfg.grid;
        if cfg.m_ratio == 0 {
            return Err(Error::Config("m_ratio must be >= 1".into()));
        }
        if g.nx < 4 || g.nx % 2 != 0 {
            return Err(Error::Config(format!("nx = {} must be even and >= 4", g.nx)));
        }
        if !(cfg.physics.u0 > 0.0) {
            return Err(Error::Config("u0 must be positive".into()));
        }
        let rows = g.rows(Staggering::SCALAR);
        let n_row: Vec<u32> = match cfg.mode {
            FilterMode::Conventional => vec![1; g.ny],
            FilterMode::LeapFormat => {
                let ut = build_leap_table(g, Staggering::U, cfg.activation_lat, cfg.reference_lat)?;
                let vt = build_leap_table(g, Staggering::V, cfg.activation_lat, cfg.reference_lat)?;
                (0..g.ny)
                    .map(|j| {
                        let m = ut.n_leap(j).max(vt.rows.get(j).map_or(1, |r| r.n_leap));
                        if m % 2 == 0 {
                            m + 1
                        } else {
                            m
                        }
                    })
                    .collect()
            }
        };
        let is_pole: Vec<bool> = rows.iter().map(|r| r.is_polar_cap).collect();
        let n_row: Vec<u32> = n_row
            .iter()
            .zip(&is_pole)
            .map(|(n, p)| if *p { 1 } else { *n })
            .collect();
        let dx = rows
            .iter()
            .map(|r| {
                if r.is_polar_cap {
                    Ok(0.0)
                } else {
                    grid::zonal_spacing(g, r.colatitude)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let latitude: Vec<f64> = rows.iter().map(|r| r.latitude()).collect();
        let u0_row = latitude
            .iter()
            .map(|lat| cfg.physics.u0 / 1000.0 * grid::to_radians(*lat).cos())
            .collect();
        let schedule = filter_schedule(g, cfg.mode, &cfg.filter)?;
        let uses_gaussian = schedule.rows.iter().any(|r| r.scheme == FilterScheme::Gaussian);
        let max_n = *n_row.iter().max().unwrap_or(&1) as usize;
        let mut hx = (2 * max_n - 1).max(1);
        if uses_gaussian {
            hx = hx.max(cfg.filter.gaussian_half_width);
        }
        if hx >= g.nx {
            return Err(Error::InfeasibleWindow { width: hx, nx: g.nx });
        }

        // CFL over effective spacings of non-pole rows
        let (bind_j, bound) = (0..g.ny)
            .filter(|&j| !is_pole[j])
            .map(|j| {
                let s = grid::max_stable_dt(dx[j] * n_row[j] as f64, cfg.physics.u0)?
                    .seconds()
                    .unwrap_or(f64::INFINITY);
                Ok((j, s))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        let dt = match cfg.dt {
            TimeStep::Auto => 0.5 * bound,
            TimeStep::Seconds(s) if !(s > 0.0) => {
                return Err(Error::Config(format!("dt must be positive, got {s}")))
            }
            TimeStep::Seconds(s) if s > bound => {
                return Err(Error::Config(format!(
                    "dt {s} s exceeds the stable bound {bound:.3} s at row j={bind_j} (latitude {:.4}°)",
                    latitude[bind_j]
                )))
            }
            TimeStep::Seconds(s) => s,
        };

        let nz = g.nz;
        Ok(Self {
            nx: g.nx,
            ny: g.ny,
            nz,
            n_row,
            dx,
            latitude,
            is_pole,
            dy: g.earth_radius * grid::to_radians(g.dphi),
            u0_row,
            v0: cfg.physics.v0 / 1000.0,
            w0: cfg.physics.w0,
            gamma: cfg.physics.gamma / 1000.0,
            mu: cfg.physics.mu,
            coef: vec![1.0 / nz as f64; nz],
            s_k: (0..nz).map(|k| (k as f64 + 0.5) / nz as f64).collect(),
            schedule,
            filter: cfg.filter,
            hx,
            dt,
            cfl_dt: bound,
        })
    }

    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn idx2(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

/// Global prognostic fields, `(k, j, i)` row-major; PS is `(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
    pub ps: Vec<f64>,
    pub step_count: usize,
    pub dt: f64,
    pub m_ratio: usize,
}

impl ModelState {
    pub fn fields(&self) -> [(&'static str, &[f64]); 4] {
        [("U", &self.u), ("V", &self.v), ("T", &self.t), ("PS", &self.ps)]
    }

    /// Largest point-wise difference over all fields.
    pub fn max_abs_diff(&self, other: &ModelState) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Deterministic smooth initial state: low zonal harmonics with seeded
/// amplitudes and phases.
pub fn init_state(cfg: &DycoreConfig, geom: &Geometry) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a: Vec<f64> = (0..7).map(|_| rng.gen_range(0.5..1.5)).collect();
    let p: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let amp = cfg.physics.amplitude;
    let (nx, ny, nz) = (geom.nx, geom.ny, geom.nz);
    let lon = |i: usize| grid::to_radians(i as f64 * cfg.grid.dlambda);
    let lat = |j: usize| grid::to_radians(geom.latitude[j]);
    let mut s = ModelState {
        nx,
        ny,
        nz,
        u: vec![0.0; nx * ny * nz],
        v: vec![0.0; nx * ny * nz],
        t: vec![0.0; nx * ny * nz],
        ps: vec![0.0; nx * ny],
        step_count: 0,
        dt: geom.dt,
        m_ratio: cfg.m_ratio,
    };
    for k in 0..nz {
        let zk = 1.0 + 0.1 * k as f64 / nz as f64;
        for j in 0..ny {
            let cl = lat(j).cos();
            for i in 0..nx {
                let x = lon(i);
                let at = geom.idx3(i, j, k);
                s.u[at] = amp * zk * cl * (a[0] + a[1] * (x + p[0]).cos());
                s.v[at] = amp * zk * cl * a[2] * (2.0 * x + p[1]).sin();
                s.t[at] = amp * (a[3] + a[4] * (2.0 * lat(j)).cos() * (3.0 * x + p[2]).cos() + 0.05 * k as f64);
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            s.ps[geom.idx2(i, j)] = amp * (a[5] + a[6] * lat(j).sin() * (lon(i) + p[3]).cos());
        }
    }
    s
}

/// Sum and sum of squares of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldDigest {
    pub sum: f64,
    pub sumsq: f64,
}

/// Order-fixed digest per field of a gathered state.
pub fn checksum(state: &ModelState) -> BTreeMap<&'static str, FieldDigest> {
    state
        .fields()
        .iter()
        .map(|(name, data)| {
            let sum = data.iter().sum();
            let sumsq = data.iter().map(|v| v * v).sum();
            (*name, FieldDigest { sum, sumsq })
        })
        .collect()
}

/// Largest relative difference between two digests.
pub fn checksum_distance(a: &BTreeMap<&'static str, FieldDigest>, b: &BTreeMap<&'static str, FieldDigest>) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
    a.iter()
        .map(|(k, da)| {
            let db = b.get(k).copied().unwrap_or(FieldDigest { sum: f64::NAN, sumsq: f64::NAN });
            if da.sum == 0.0 && db.sum == 0.0 {
                rel(da.sumsq, db.sumsq)
            } else {
                rel(da.sum, db.sum).max(rel(da.sumsq, db.sumsq))
            }
        })
        .fold(0.0, f64::max)
}

/// Call counts of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub steps: usize,
    pub advection_calls: usize,
    pub adaption_calls: usize,
    /// Gaussian filter calls per global row, summed over steps.
    pub gaussian_calls: Vec<usize>,
}

impl Counters {
    pub fn new(ny: usize) -> Self {
        Self {
            gaussian_calls: vec![0; ny],
            ..Default::default()
        }
    }

    pub fn gaussian_calls_above(&self, geom: &Geometry, lat: f64) -> usize {
        self.gaussian_calls
            .iter()
            .zip(&geom.latitude)
            .filter(|(_, l)| l.abs() > lat)
            .map(|(c, _)| c)
            .sum()
    }
}

/// Point formulas shared by the serial oracle and the decomposed model so
/// both evaluate identical arithmetic.
pub(crate) mod kern {
    pub fn dy(north: f64, south: f64, dy: f64) -> f64 {
        (north - south) / (2.0 * dy)
    }

    pub fn dz(up: f64, down: f64) -> f64 {
        (up - down) / 2.0
    }

    pub fn advect_u(u0: f64, dplus: f64, dminus: f64, v0: f64, dy_u: f64, w0: f64, dz_u: f64) -> f64 {
        -u0 * 0.5 * (dplus + dminus) - v0 * dy_u - w0 * dz_u
    }

    pub fn advect_other(v0: f64, dy_f: f64, w0: f64, dz_f: f64) -> f64 {
        -v0 * dy_f - w0 * dz_f
    }

    /// Euler step with a wide-stencil second-order correction.
    pub fn advect_update(f: f64, ft: f64, h: f64, u0: f64, dwide_ft: f64) -> f64 {
        f + h * ft - 0.5 * h * h * u0 * dwide_ft
    }

    pub fn divergence(dplus_pxw: f64, h: f64, dplus_ut: f64, dy_v: f64) -> f64 {
        dplus_pxw + h * dplus_ut + dy_v
    }

    #[allow(clippy::too_many_arguments)]
    pub fn adapt_u(gamma: f64, h: f64, pt: f64, p1: f64, p2: f64, dp: f64, ghi: f64, tt: f64) -> f64 {
        -gamma * 0.2 * (pt + p1 + p2 + dp + ghi) - gamma * h * tt
    }

    pub fn adapt_v(gamma: f64, dy_ghi: f64) -> f64 {
        -gamma * dy_ghi
    }

    pub fn adapt_t(gamma: f64, mu: f64, sigma: f64, dwide_p2: f64) -> f64 {
        -gamma * sigma + gamma * mu * dwide_p2
    }

    pub fn adapt_ps(gamma: f64, eps: f64) -> f64 {
        -gamma * eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_geometry() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        assert_eq!(g.n_row[0], 1);
        assert_eq!(g.n_row[23], 1);
        // 82.17° and 74.35° rows are active, all leap intervals odd
        assert!(g.n_row[1] > 1 && g.n_row[2] > 1);
        assert!(g.n_row.iter().all(|n| n % 2 == 1));
        assert!(g.n_row[3..20].iter().all(|&n| n == 1));
        // the V point of row 20 sits at -70.4°
        assert!(g.n_row[20] > 1);
        assert!(g.hx < g.nx);
        assert_eq!(g.dt, 0.5 * g.cfl_dt);
    }

    #[test]
    fn leap_mode_relaxes_cfl() {
        let mut cfg = DycoreConfig::desk();
        let leap = Geometry::new(&cfg).unwrap().cfl_dt;
        cfg.mode = FilterMode::Conventional;
        let conv = Geometry::new(&cfg).unwrap().cfl_dt;
        assert!(leap > 2.0 * conv, "{leap} vs {conv}");
    }

    #[test]
    fn explicit_dt_above_cfl_is_rejected() {
        let mut cfg = DycoreConfig::desk();
        cfg.dt = TimeStep::Seconds(1e9);
        let err = Geometry::new(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("row j=")), "{err}");
        cfg.dt = TimeStep::Seconds(-1.0);
        assert!(matches!(Geometry::new(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_scalable() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        assert_eq!(init_state(&cfg, &g), init_state(&cfg, &g));
        let mut zero = cfg.clone();
        zero.physics.amplitude = 0.0;
        let s = init_state(&zero, &g);
        assert!(s.fields().iter().all(|(_, d)| d.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn checksum_examples() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let s = init_state(&cfg, &g);
        assert_eq!(checksum(&s), checksum(&s));
        assert_eq!(checksum_distance(&checksum(&s), &checksum(&s)), 0.0);
    }
}
