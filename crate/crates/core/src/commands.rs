//! Subcommands of the `leapgrid` binary as library calls.
//!
//! Each returns its text output; the binary only parses flags, prints and
//! maps errors to exit codes with [`exit_code`].

use crate::config::Config;
use crate::decomp::{estimate_comm_volume, factorizations, split_all, ProcessGrid};
use crate::dycore::{self, checksum, serial::run_serial, Geometry};
use crate::error::{Error, Result};
use crate::filters::filter_load_csv;
use crate::grid::Staggering;
use crate::halo::{classify_table_case, pattern_offsets, plan_window, Classification, Direction, Pattern};
use crate::leap::build_leap_table;
use crate::runtime::{CommKind, Communicator, Runtime, Schedule};
use crate::vertical::{sigma_gather, sigma_reference, sigma_refactored, GatherVariant, VerticalColumns};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Bad input is a configuration error; anything failing at run time counts
/// as a verification failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Domain(_)
        | Error::InfeasibleDecomposition { .. }
        | Error::InfeasibleWindow { .. }
        | Error::PoleSingularity { .. } => EXIT_CONFIG,
        _ => EXIT_VERIFY,
    }
}

/// Per-row leap table on integer rows with no parity adjustment, so the
/// `n_leap` column holds the raw interval.
pub fn leap_table(cfg: &Config) -> Result<String> {
    let t = build_leap_table(
        &cfg.grid()?,
        Staggering::SCALAR,
        cfg.leap.activation_lat_deg,
        cfg.leap.reference_lat_deg,
    )
    .map_err(to_config)?;
    Ok(t.to_csv())
}

/// Per-core halo volumes of every factorization of the configured rank
/// count, plus the `px = 1` counterpart of each.
pub fn estimate(cfg: &Config) -> Result<String> {
    let grid = cfg.grid()?;
    let d = &cfg.decomp;
    let total = d.px * d.py * d.pz;
    if total == 0 {
        return Err(Error::Config("decomp sizes must be positive".into()));
    }
    let mut layouts = BTreeSet::new();
    for (px, py, pz) in factorizations(total) {
        layouts.insert((px, py, pz));
        layouts.insert((1, py, pz));
    }
    let mut out = String::from("px,py,pz,kind,feasible,x_p2p,y_p2p,z_p2p,p2p_total,z_collective,reason\n");
    for (px, py, pz) in layouts {
        let kind = if px == 1 { "2d" } else { "3d" };
        match ProcessGrid::new(grid.mesh(), px, py, pz, d.order, d.cores_per_node) {
            Ok(p) => {
                let e = estimate_comm_volume(grid.mesh(), &p, cfg.model.alpha, cfg.model.beta);
                let _ = writeln!(
                    out,
                    "{px},{py},{pz},{kind},true,{},{},{},{},{},",
                    e.x_p2p,
                    e.y_p2p,
                    e.z_p2p,
                    e.p2p_total(),
                    e.z_collective
                );
            }
            Err(err) => {
                let reason = err.to_string().replace(',', ";");
                let _ = writeln!(out, "{px},{py},{pz},{kind},false,,,,,,{reason}");
            }
        }
    }
    Ok(out)
}

fn segments_text(plan: &crate::halo::HaloPlan) -> String {
    plan.recv_segments
        .iter()
        .map(|s| format!("{}:{}+{}", s.peer, s.start, s.len))
        .collect::<Vec<_>>()
        .join(";")
}

/// Shifting-window plans of every non-pole row, pattern, direction and X
/// rank, and the per-group traffic predicted for one step.
pub fn plan(cfg: &Config, aggregate: bool) -> Result<(String, serde_json::Value)> {
    let dc = cfg.dycore(aggregate)?;
    let g = Geometry::new(&dc).map_err(to_config)?;
    let xs = split_all(g.nx, dc.pgrid.px)?;
    let mut csv = String::from("j,latitude_deg,n_leap,pattern,direction,x_rank,width,classification,segments\n");
    for j in (0..g.ny).filter(|&j| !g.is_pole[j]) {
        for pattern in Pattern::ALL {
            let (l, r) = pattern_offsets(pattern, g.n_row[j]);
            for (dir, w) in [(Direction::Right, r), (Direction::Left, l)] {
                if w == 0 {
                    continue;
                }
                for x in 0..xs.len() {
                    let p = plan_window(g.nx, &xs, x, w, dir)?;
                    let _ = writeln!(
                        csv,
                        "{j},{:.6},{},{},{},{x},{w},{:?},{}",
                        g.latitude[j],
                        g.n_row[j],
                        pattern.name(),
                        dir.name(),
                        p.classification,
                        segments_text(&p)
                    );
                }
            }
        }
    }
    let traffic = dycore::predict_group_traffic(&dc)?;
    let json = json!({
        "aggregate": aggregate,
        "groups": traffic,
    });
    Ok((csv, json))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// Nothing to compare, e.g. one Z member.
    DegeneratePass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let s = match c.status {
                Status::Pass => "pass",
                Status::DegeneratePass => "degenerate-pass",
                Status::Fail => "FAIL",
            };
            let _ = writeln!(out, "{:<22} {:<16} {}", c.name, s, c.detail);
        }
        let _ = writeln!(out, "{}", if self.passed() { "all checks passed" } else { "verification failed" });
        out
    }
}

/// Test hook for `verify`: corrupts one input so a check must fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Plan every window one point too narrow.
    HaloWidth,
}

pub const LAYOUT_TOL: f64 = 1e-12;

pub fn verify(cfg: &Config, aggregate: bool, fault: Option<Fault>) -> Result<VerifyReport> {
    let dc = cfg.dycore(aggregate)?;
    let g = Geometry::new(&dc).map_err(to_config)?;
    let mut report = VerifyReport::default();

    let steps = cfg.run.steps;
    let serial = run_serial(&dc, steps)?;
    let par = dycore::run(&dc, steps)?;
    let dev = serial.state.max_abs_diff(&par.state);
    report.checks.push(Check {
        name: "serial-vs-parallel",
        status: if dev <= LAYOUT_TOL { Status::Pass } else { Status::Fail },
        detail: format!(
            "layout {}x{}x{}, {steps} steps, max_dev={dev:e}",
            dc.pgrid.px, dc.pgrid.py, dc.pgrid.pz
        ),
    });

    report.checks.push(vertical_check(&dc.pgrid, g.nx, g.ny, g.nz, cfg.run.seed)?);
    report.checks.push(planner_check(&g, dc.pgrid.px, fault)?);
    Ok(report)
}

fn vertical_check(p: &ProcessGrid, nx: usize, ny: usize, nz: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<f64> = (0..nz).map(|_| rng.gen_range(0.5..1.5)).collect();
    let delta: Vec<Vec<f64>> = (0..nx * ny)
        .map(|_| (0..nz).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let xs = split_all(nx, p.px)?;
    let ys = split_all(ny, p.py)?;
    let zs = split_all(nz, p.pz)?;
    let out = Runtime::new(p.cores_per_node, Schedule::RoundRobin).run(p.size(), |ctx| {
        let (delta, coef, xs, ys, zs) = (&delta, &coef, &xs, &ys, &zs);
        async move {
            let c = p.coords_of(ctx.rank())?;
            let zc = Communicator::along(p, ctx.rank(), CommKind::Z)?;
            let mine: Vec<usize> = ys[c.ly]
                .range()
                .flat_map(|j| xs[c.lx].range().map(move |i| j * nx + i))
                .collect();
            let cols: Vec<Vec<f64>> = mine.iter().map(|&m| delta[m].clone()).collect();
            let ez = zs[c.lz];
            let vc = VerticalColumns::from_global(&cols, coef, ez.ib, ez.ie + 1)?;
            let a = sigma_gather(&ctx, &zc, &vc, GatherVariant::Reference).await?;
            let b = sigma_refactored(&ctx, &zc, &vc).await?;
            let mut dev = 0.0f64;
            for (n, &m) in mine.iter().enumerate() {
                let want = sigma_reference(&delta[m], coef);
                for k in 0..ez.nb {
                    let i = n * ez.nb + k;
                    dev = dev
                        .max((a.sigma[i] - want[ez.ib + k]).abs())
                        .max((b.sigma[i] - want[ez.ib + k]).abs());
                }
            }
            Ok(dev)
        }
    })?;
    let dev = out.results.iter().fold(0.0f64, |a, b| a.max(*b));
    let z = out.stats.comm(CommKind::Z).coll_bytes.total();
    let status = if dev > LAYOUT_TOL {
        Status::Fail
    } else if p.pz == 1 {
        Status::DegeneratePass
    } else {
        Status::Pass
    };
    Ok(Check {
        name: "gather-vs-refactored",
        status,
        detail: format!("pz={}, max_dev={dev:e}, z_collective_bytes={z}", p.pz),
    })
}

/// Window indices `rank` must receive, with their owners, by scanning the
/// extents one index at a time.
fn owners(nx: usize, xs: &[crate::decomp::LocalExtent], rank: usize, width: usize, dir: Direction) -> Vec<(usize, usize)> {
    let e = xs[rank];
    (1..=width)
        .map(|d| {
            let at = match dir {
                Direction::Right => (e.ie + d) % nx,
                Direction::Left => (e.ib + nx * width - d) % nx,
            };
            let owner = xs.iter().position(|x| x.contains(at)).expect("partition");
            (at, owner)
        })
        .collect()
}

fn planner_check(g: &Geometry, px: usize, fault: Option<Fault>) -> Result<Check> {
    let xs = split_all(g.nx, px)?;
    let widths: BTreeSet<(usize, Direction)> = g
        .n_row
        .iter()
        .flat_map(|&n| {
            Pattern::ALL.into_iter().flat_map(move |p| {
                let (l, r) = pattern_offsets(p, n);
                [(r, Direction::Right), (l, Direction::Left)]
            })
        })
        .filter(|(w, _)| *w > 0)
        .collect();
    let mut failures = Vec::new();
    for &(w, dir) in &widths {
        let planned = match fault {
            Some(Fault::HaloWidth) => w - 1,
            None => w,
        };
        let plans = (0..px)
            .map(|x| plan_window(g.nx, &xs, x, planned, dir))
            .collect::<Result<Vec<_>>>()?;
        let mut sends: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for p in &plans {
            for s in &p.send_segments {
                sends.entry((p.rank, s.peer)).or_default().push((s.start, s.len));
            }
        }
        for (x, p) in plans.iter().enumerate() {
            let got: Vec<(usize, usize)> = p
                .recv_segments
                .iter()
                .flat_map(|s| (0..s.len).map(move |o| ((s.start + o) % g.nx, s.peer)))
                .collect();
            let mut want = owners(g.nx, &xs, x, w, dir);
            let mut sorted = got.clone();
            sorted.sort_unstable();
            sorted.dedup();
            want.sort_unstable();
            if sorted.len() != got.len() || sorted != want {
                failures.push(format!("rank {x} {} width {w}", dir.name()));
                continue;
            }
            for s in &p.recv_segments {
                let dual = sends.get(&(s.peer, x)).is_some_and(|v| v.contains(&(s.start, s.len)));
                if !dual {
                    failures.push(format!("rank {x} {} width {w}: no matching send", dir.name()));
                }
            }
            if px > 1 && dir == Direction::Right && p.recv_segments.iter().all(|s| s.peer != x) {
                let next = xs[(x + 1) % px].nb;
                if p.classification != Classification::SelfContained
                    && classify_table_case(w, next) != p.classification
                {
                    failures.push(format!("rank {x} width {w}: classified {:?}", p.classification));
                }
            }
        }
    }
    let status = if failures.is_empty() { Status::Pass } else { Status::Fail };
    let detail = if failures.is_empty() {
        format!("{} window widths x {px} ranks covered", widths.len())
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    Ok(Check {
        name: "planner-coverage",
        status,
        detail,
    })
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub checksums: String,
    pub commstats: String,
    pub filter_load: String,
}

/// Run the model and render its three artifacts; with `out` set, also write
/// them there as `checksums.json`, `commstats.json` and `filter_load.csv`.
pub fn run(cfg: &Config, aggregate: bool, out: Option<&Path>) -> Result<RunArtifacts> {
    let dc = cfg.dycore(aggregate)?;
    Geometry::new(&dc).map_err(to_config)?;
    let r = dycore::run(&dc, cfg.run.steps)?;
    let sums = checksum(&r.state);
    let checksums = json!({
        "steps": r.state.step_count,
        "dt_s": r.state.dt,
        "mode": dc.mode.name(),
        "advection_calls": r.counters.advection_calls,
        "adaption_calls": r.counters.adaption_calls,
        "fields": sums,
    });
    let art = RunArtifacts {
        checksums: serde_json::to_string_pretty(&checksums).expect("json") + "\n",
        commstats: serde_json::to_string_pretty(&r.stats.to_json()).expect("json") + "\n",
        filter_load: filter_load_csv(&r.filter_load, dc.mode),
    };
    if let Some(dir) = out {
        write_file(dir, "checksums.json", &art.checksums)?;
        write_file(dir, "commstats.json", &art.commstats)?;
        write_file(dir, "filter_load.csv", &art.filter_load)?;
    }
    Ok(art)
}

pub fn filter_load(cfg: &Config) -> Result<String> {
    let dc = cfg.dycore(true)?;
    let g = Geometry::new(&dc).map_err(to_config)?;
    let load = crate::filters::filter_load(&dc.grid, &dc.pgrid, &g.schedule)?;
    Ok(filter_load_csv(&load, dc.mode))
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
