//! The decomposed model: one [`Rank`] per process on the simulated runtime.

use super::field::{Field, Var};
use super::{init_state, kern, Counters, DycoreConfig, Geometry, ModelState};
use crate::decomp::{split_all, Coords, LocalExtent, ProcessGrid};
use crate::error::{Error, Result};
use crate::filters::{self, gaussian_point, gaussian_weights, recursive3_point, simplified_term, FilterScheme};
use crate::grid::GridSpec;
use crate::halo::{
    aggregate, batches_per_variable, census, group_label, pattern_offsets, plan_window, AggregationGroup,
    Direction, HaloPlan, Pattern, Phase, VariablePlan,
};
use crate::leap::leap_central_diff_x;
use crate::runtime::{CommKind, CommStats, Communicator, RankCtx, Runtime, Tag, ELEMENT_BYTES};
use crate::vertical::{sigma_refactored, VerticalColumns};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};

const YZ_LABEL: &str = "yz-halo";
const FILTER_HALO: &str = "filter/halo";

/// (local row, left width, right width)
type RowWidths = Vec<(usize, usize, usize)>;

struct Rank<'a> {
    ctx: &'a RankCtx,
    g: &'a Geometry,
    aggregate: bool,
    coords: Coords,
    xs: Vec<LocalExtent>,
    ex: LocalExtent,
    ey: LocalExtent,
    ez: LocalExtent,
    xcomm: Communicator,
    ycomm: Communicator,
    zcomm: Communicator,
    fields: Vec<Field>,
    plans: HashMap<(usize, Direction), HaloPlan>,
    seq_x: u64,
    seq_yz: u64,
    /// Local rows away from the poles.
    rows: Vec<usize>,
    counters: Counters,
}

impl<'a> Rank<'a> {
    fn new(ctx: &'a RankCtx, g: &'a Geometry, pgrid: &ProcessGrid, aggregate: bool) -> Result<Self> {
        let me = ctx.rank();
        let coords = pgrid.coords_of(me)?;
        let xs = split_all(g.nx, pgrid.px)?;
        let ey = split_all(g.ny, pgrid.py)?[coords.ly];
        let ez = split_all(g.nz, pgrid.pz)?[coords.lz];
        let ex = xs[coords.lx];
        let fields = Var::ALL
            .iter()
            .map(|v| Field::new(*v, ex.nb, ey.nb, ez.nb, g.hx))
            .collect();
        let rows = (0..ey.nb).filter(|jl| !g.is_pole[ey.ib + jl]).collect();
        Ok(Self {
            ctx,
            g,
            aggregate,
            coords,
            xs,
            ex,
            ey,
            ez,
            xcomm: Communicator::along(pgrid, me, CommKind::X)?,
            ycomm: Communicator::along(pgrid, me, CommKind::Y)?,
            zcomm: Communicator::along(pgrid, me, CommKind::Z)?,
            fields,
            plans: HashMap::new(),
            seq_x: 0,
            seq_yz: 0,
            rows,
            counters: Counters::new(g.ny),
        })
    }

    fn f(&self, v: Var) -> &Field {
        &self.fields[v as usize]
    }

    fn fm(&mut self, v: Var) -> &mut Field {
        &mut self.fields[v as usize]
    }

    fn load(&mut self, s: &ModelState) {
        let g = self.g;
        let (ex, ey, ez) = (self.ex, self.ey, self.ez);
        for (var, src) in [(Var::U, &s.u), (Var::V, &s.v), (Var::T, &s.t)] {
            let f = &mut self.fields[var as usize];
            for k in 0..ez.nb {
                for j in 0..ey.nb {
                    for i in 0..ex.nb {
                        f.set(i, j, k, src[g.idx3(ex.ib + i, ey.ib + j, ez.ib + k)]);
                    }
                }
            }
        }
        let f = &mut self.fields[Var::PS as usize];
        for j in 0..ey.nb {
            for i in 0..ex.nb {
                f.set(i, j, 0, s.ps[g.idx2(ex.ib + i, ey.ib + j)]);
            }
        }
    }

    fn plan(&mut self, width: usize, dir: Direction) -> Result<HaloPlan> {
        if let Some(p) = self.plans.get(&(width, dir)) {
            return Ok(p.clone());
        }
        let p = plan_window(self.g.nx, &self.xs, self.coords.lx, width, dir)?;
        self.plans.insert((width, dir), p.clone());
        Ok(p)
    }

    fn pattern_widths(&self, pattern: Pattern) -> RowWidths {
        self.rows
            .iter()
            .map(|&jl| {
                let (l, r) = pattern_offsets(pattern, self.g.n_row[self.ey.ib + jl]);
                (jl, l, r)
            })
            .collect()
    }

    async fn exchange_group(&mut self, phase: Phase, pattern: Pattern) -> Result<()> {
        let group = census()
            .into_iter()
            .find(|g| g.phase == phase && g.pattern == pattern)
            .ok_or_else(|| Error::Contract(format!("no aggregation group for {}", group_label(phase, pattern))))?;
        let vars: Vec<Var> = group
            .variables
            .iter()
            .map(|n| Var::by_name(n).ok_or_else(|| Error::Contract(format!("unknown variable {n}"))))
            .collect::<Result<_>>()?;
        let widths = self.pattern_widths(pattern);
        self.exchange_x(&vars, group.label(), &widths).await
    }

    /// Shifting-window X halo exchange of `vars` on the given rows.
    async fn exchange_x(&mut self, vars: &[Var], label: &'static str, widths: &RowWidths) -> Result<()> {
        let nx = self.g.nx;
        let me = self.coords.lx;
        let (ib, ie, nxl) = (self.ex.ib, self.ex.ie, self.ex.nb);
        for dir in [Direction::Right, Direction::Left] {
            self.seq_x += 1;
            let tag = Tag::new(self.seq_x, label);
            let mut rows = Vec::new();
            for &(jl, l, r) in widths {
                let w = if dir == Direction::Right { r } else { l };
                if w > 0 {
                    rows.push((jl, w, self.plan(w, dir)?));
                }
            }
            let key_of = |fi: usize| if self.aggregate { 0 } else { fi };

            let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            for (fi, &var) in vars.iter().enumerate() {
                let f = self.f(var);
                for (jl, _, plan) in &rows {
                    for seg in plan.send_segments.iter().filter(|s| s.peer != me) {
                        let buf = out.entry((seg.peer, key_of(fi))).or_default();
                        for k in 0..f.nzl {
                            for x in seg.start..seg.start + seg.len {
                                buf.push(f.get(x - ib, *jl, k));
                            }
                        }
                    }
                }
            }
            for ((peer, _), buf) in out {
                self.ctx.send(&self.xcomm, peer, tag, buf)?;
            }

            let mut keys = BTreeSet::new();
            for fi in 0..vars.len() {
                for (_, _, plan) in &rows {
                    for seg in plan.recv_segments.iter().filter(|s| s.peer != me) {
                        keys.insert((seg.peer, key_of(fi)));
                    }
                }
            }
            let mut inbox = BTreeMap::new();
            for key in keys {
                let msg = self.ctx.recv(&self.xcomm, key.0, tag).await?;
                inbox.insert(key, msg.into_iter());
            }

            for (fi, &var) in vars.iter().enumerate() {
                let key = key_of(fi);
                let f = &mut self.fields[var as usize];
                for (jl, w, plan) in &rows {
                    let (jl, w) = (*jl, *w);
                    let first = match dir {
                        Direction::Right => (ie + 1) % nx,
                        Direction::Left => (ib + nx - w) % nx,
                    };
                    for seg in &plan.recv_segments {
                        let o = (seg.start + nx - first) % nx;
                        for k in 0..f.nzl {
                            for t in 0..seg.len {
                                let v = if seg.peer == me {
                                    f.get(seg.start + t - ib, jl, k)
                                } else {
                                    inbox
                                        .get_mut(&(seg.peer, key))
                                        .and_then(Iterator::next)
                                        .ok_or_else(|| Error::Contract(format!("short {label} message from {}", seg.peer)))?
                                };
                                let i = match dir {
                                    Direction::Right => (nxl + o + t) as isize,
                                    Direction::Left => (o + t) as isize - w as isize,
                                };
                                f.put(i, jl as isize, k as isize, v);
                            }
                        }
                    }
                    match dir {
                        Direction::Right => f.mark_x(jl, 0, w),
                        Direction::Left => f.mark_x(jl, w, 0),
                    }
                }
            }
            if let Some((peer, _)) = inbox.iter_mut().find_map(|(k, it)| it.next().map(|_| k)) {
                return Err(Error::Contract(format!("oversized {label} message from {peer}")));
            }
        }
        Ok(())
    }

    /// One-point Y and Z halos. Y stops at the domain edge (pole rows are
    /// never differenced); Z edges copy the boundary layer.
    async fn exchange_yz(&mut self, vars: &[Var]) -> Result<()> {
        self.seq_yz += 1;
        let tag = Tag::new(self.seq_yz, YZ_LABEL);
        let (nxl, nyl, nzl) = (self.ex.nb, self.ey.nb, self.ez.nb);
        let key_of = |fi: usize| if self.aggregate { 0 } else { fi };

        // Y: (neighbour member, owned row sent, halo row filled)
        let (ly, py) = (self.coords.ly, self.ycomm.size());
        let mut ylinks = Vec::new();
        if ly > 0 {
            ylinks.push((ly - 1, 0isize, -1isize));
        }
        if ly + 1 < py {
            ylinks.push((ly + 1, nyl as isize - 1, nyl as isize));
        }
        let (lz, pz) = (self.coords.lz, self.zcomm.size());
        let mut zlinks = Vec::new();
        if lz > 0 {
            zlinks.push((lz - 1, 0isize, -1isize));
        }
        if lz + 1 < pz {
            zlinks.push((lz + 1, nzl as isize - 1, nzl as isize));
        }

        let mut out: BTreeMap<(CommKind, usize, usize), Vec<f64>> = BTreeMap::new();
        for (fi, &var) in vars.iter().enumerate() {
            let f = self.f(var);
            for &(peer, src, _) in &ylinks {
                let buf = out.entry((CommKind::Y, peer, key_of(fi))).or_default();
                for k in 0..f.nzl as isize {
                    for i in 0..nxl as isize {
                        buf.push(f.at(i, src, k));
                    }
                }
            }
            if var.is_2d() {
                continue;
            }
            for &(peer, src, _) in &zlinks {
                let buf = out.entry((CommKind::Z, peer, key_of(fi))).or_default();
                for j in 0..nyl as isize {
                    for i in 0..nxl as isize {
                        buf.push(f.at(i, j, src));
                    }
                }
            }
        }
        let keys: Vec<(CommKind, usize, usize)> = out.keys().copied().collect();
        for ((kind, peer, _), buf) in out {
            let comm = if kind == CommKind::Y { &self.ycomm } else { &self.zcomm };
            self.ctx.send(comm, peer, tag, buf)?;
        }
        // every link is symmetric, so the receive keys equal the send keys
        let mut inbox = BTreeMap::new();
        for key in keys {
            let comm = if key.0 == CommKind::Y { &self.ycomm } else { &self.zcomm };
            inbox.insert(key, self.ctx.recv(comm, key.1, tag).await?.into_iter());
        }
        let short = || Error::Contract("short Y/Z halo message".into());
        let bottom = self.ez.ib == 0;
        let top = self.ez.ie + 1 == self.g.nz;
        for (fi, &var) in vars.iter().enumerate() {
            let key = key_of(fi);
            let f = &mut self.fields[var as usize];
            for &(peer, _, dst) in &ylinks {
                let it = inbox.get_mut(&(CommKind::Y, peer, key)).ok_or_else(short)?;
                for k in 0..f.nzl as isize {
                    for i in 0..nxl as isize {
                        f.put(i, dst, k, it.next().ok_or_else(short)?);
                    }
                }
            }
            if !var.is_2d() {
                for &(peer, _, dst) in &zlinks {
                    let it = inbox.get_mut(&(CommKind::Z, peer, key)).ok_or_else(short)?;
                    for j in 0..nyl as isize {
                        for i in 0..nxl as isize {
                            f.put(i, j, dst, it.next().ok_or_else(short)?);
                        }
                    }
                }
                for j in 0..nyl as isize {
                    for i in 0..nxl as isize {
                        if bottom {
                            let v = f.at(i, j, 0);
                            f.put(i, j, -1, v);
                        }
                        if top {
                            let v = f.at(i, j, nzl as isize - 1);
                            f.put(i, j, nzl as isize, v);
                        }
                    }
                }
            }
            f.mark_yz();
        }
        Ok(())
    }

    fn diff(&self, v: Var, jl: usize, k: usize, pattern: Pattern) -> Result<Vec<f64>> {
        let j = self.ey.ib + jl;
        leap_central_diff_x(self.f(v).halo_row(jl, k)?, pattern, self.g.n_row[j], self.g.dx[j])
    }

    fn ddy(&self, v: Var, i: usize, jl: usize, k: usize) -> f64 {
        let f = self.f(v);
        let (i, j, k) = (i as isize, jl as isize, k as isize);
        kern::dy(f.at(i, j + 1, k), f.at(i, j - 1, k), self.g.dy)
    }

    fn ddz(&self, v: Var, i: usize, jl: usize, k: usize) -> f64 {
        let f = self.f(v);
        let (i, j, k) = (i as isize, jl as isize, k as isize);
        kern::dz(f.at(i, j, k + 1), f.at(i, j, k - 1))
    }

    fn copy_owned(&mut self, from: Var, to: Var) {
        let src = self.fields[from as usize].clone();
        let dst = &mut self.fields[to as usize];
        for k in 0..dst.nzl {
            for j in 0..dst.nyl {
                for i in 0..dst.nxl {
                    dst.set(i, j, k, src.get(i, j, k));
                }
            }
        }
        dst.touch();
    }

    async fn advection(&mut self, h: f64) -> Result<()> {
        let g = self.g;
        let (nxl, nzl) = (self.ex.nb, self.ez.nb);
        self.copy_owned(Var::U, Var::Ustar);
        self.exchange_group(Phase::Advection, Pattern::PlusHalf).await?;
        self.exchange_group(Phase::Advection, Pattern::MinusHalf).await?;
        self.exchange_yz(&[Var::U, Var::V, Var::T]).await?;
        for v in [Var::U, Var::V, Var::T] {
            self.f(v).require_yz()?;
        }

        let mut tend = Vec::new();
        for &jl in &self.rows {
            let j = self.ey.ib + jl;
            for k in 0..nzl {
                let dp = self.diff(Var::Ustar, jl, k, Pattern::PlusHalf)?;
                let dm = self.diff(Var::Ustar, jl, k, Pattern::MinusHalf)?;
                for i in 0..nxl {
                    let ut = kern::advect_u(
                        g.u0_row[j],
                        dp[i],
                        dm[i],
                        g.v0,
                        self.ddy(Var::U, i, jl, k),
                        g.w0,
                        self.ddz(Var::U, i, jl, k),
                    );
                    let vt = kern::advect_other(g.v0, self.ddy(Var::V, i, jl, k), g.w0, self.ddz(Var::V, i, jl, k));
                    let tt = kern::advect_other(g.v0, self.ddy(Var::T, i, jl, k), g.w0, self.ddz(Var::T, i, jl, k));
                    tend.push((i, jl, k, ut, vt, tt));
                }
            }
        }
        for (i, jl, k, ut, vt, tt) in tend {
            self.fm(Var::UT).set(i, jl, k, ut);
            self.fm(Var::VT).set(i, jl, k, vt);
            self.fm(Var::TT).set(i, jl, k, tt);
        }
        for v in [Var::UT, Var::VT, Var::TT] {
            self.fm(v).touch();
        }
        self.exchange_group(Phase::Advection, Pattern::Wide).await?;

        let mut upd = Vec::new();
        for &jl in &self.rows {
            let u0 = g.u0_row[self.ey.ib + jl];
            for k in 0..nzl {
                for (fv, tv) in [(Var::U, Var::UT), (Var::V, Var::VT), (Var::T, Var::TT)] {
                    let w = self.diff(tv, jl, k, Pattern::Wide)?;
                    let (f, t) = (self.f(fv), self.f(tv));
                    for (i, wi) in w.iter().enumerate() {
                        upd.push((fv, i, jl, k, kern::advect_update(f.get(i, jl, k), t.get(i, jl, k), h, u0, *wi)));
                    }
                }
            }
        }
        for (v, i, jl, k, x) in upd {
            self.fm(v).set(i, jl, k, x);
        }
        for v in [Var::U, Var::V, Var::T] {
            self.fm(v).touch();
        }
        self.counters.advection_calls += 1;
        Ok(())
    }

    async fn adaption(&mut self, h: f64) -> Result<()> {
        let g = self.g;
        let (nxl, nyl, nzl) = (self.ex.nb, self.ey.nb, self.ez.nb);
        let kb = self.ez.ib;
        for k in 0..nzl {
            let s = g.s_k[kb + k];
            for j in 0..nyl {
                for i in 0..nxl {
                    let (u, t, ps) = (self.f(Var::U).get(i, j, k), self.f(Var::T).get(i, j, k), self.f(Var::PS).get(i, j, 0));
                    self.fm(Var::PXW).set(i, j, k, u);
                    self.fm(Var::PT).set(i, j, k, t);
                    self.fm(Var::Pstar1).set(i, j, k, ps);
                    self.fm(Var::Pstar2).set(i, j, k, s * ps);
                    self.fm(Var::Deltap).set(i, j, k, s * t);
                    self.fm(Var::GHI).set(i, j, k, t + ps);
                }
            }
        }
        for v in [Var::PXW, Var::PT, Var::Pstar1, Var::Pstar2, Var::Deltap, Var::GHI] {
            self.fm(v).touch();
        }
        self.exchange_group(Phase::Adaption, Pattern::PlusHalf).await?;
        self.exchange_group(Phase::Adaption, Pattern::MinusHalf).await?;
        self.exchange_group(Phase::Adaption, Pattern::Wide).await?;
        self.exchange_yz(&[Var::V, Var::GHI]).await?;
        self.f(Var::V).require_yz()?;
        self.f(Var::GHI).require_yz()?;

        // columns ordered (j, i), layers contiguous
        let mut delta = vec![0.0; nyl * nxl * nzl];
        for &jl in &self.rows {
            for k in 0..nzl {
                let dp_pxw = self.diff(Var::PXW, jl, k, Pattern::PlusHalf)?;
                let dp_ut = self.diff(Var::UT, jl, k, Pattern::PlusHalf)?;
                for i in 0..nxl {
                    delta[(jl * nxl + i) * nzl + k] =
                        kern::divergence(dp_pxw[i], h, dp_ut[i], self.ddy(Var::V, i, jl, k));
                }
            }
        }
        let cols = VerticalColumns::new(g.nz, self.ez.ib, self.ez.ie + 1, g.coef.clone(), delta)?;
        let sig = sigma_refactored(self.ctx, &self.zcomm, &cols).await?;

        let mut upd = Vec::new();
        for &jl in &self.rows {
            for k in 0..nzl {
                let m = |v| self.diff(v, jl, k, Pattern::MinusHalf);
                let (a, b, c, d, e, f) = (
                    m(Var::PT)?,
                    m(Var::Pstar1)?,
                    m(Var::Pstar2)?,
                    m(Var::Deltap)?,
                    m(Var::GHI)?,
                    m(Var::TT)?,
                );
                let w2 = self.diff(Var::Pstar2, jl, k, Pattern::Wide)?;
                for i in 0..nxl {
                    let du = kern::adapt_u(g.gamma, h, a[i], b[i], c[i], d[i], e[i], f[i]);
                    let dv = kern::adapt_v(g.gamma, self.ddy(Var::GHI, i, jl, k));
                    let dt = kern::adapt_t(g.gamma, g.mu, sig.sigma[(jl * nxl + i) * nzl + k], w2[i]);
                    upd.push((i, jl, k, du, dv, dt));
                }
            }
        }
        for (i, jl, k, du, dv, dt) in upd {
            let u = self.f(Var::U).get(i, jl, k) + h * du;
            let v = self.f(Var::V).get(i, jl, k) + h * dv;
            let t = self.f(Var::T).get(i, jl, k) + h * dt;
            self.fm(Var::U).set(i, jl, k, u);
            self.fm(Var::V).set(i, jl, k, v);
            self.fm(Var::T).set(i, jl, k, t);
        }
        for jl in self.rows.clone() {
            for i in 0..nxl {
                let ps = self.f(Var::PS).get(i, jl, 0) + h * kern::adapt_ps(g.gamma, sig.epsilon[jl * nxl + i]);
                self.fm(Var::PS).set(i, jl, 0, ps);
            }
        }
        for v in [Var::U, Var::V, Var::T, Var::PS] {
            self.fm(v).touch();
        }
        self.counters.adaption_calls += 1;
        Ok(())
    }

    fn scheduled_rows(&self, scheme: FilterScheme) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .map(|&jl| (jl, self.g.schedule.rows[self.ey.ib + jl]))
            .filter(|(_, r)| r.scheme == scheme)
            .map(|(jl, r)| (jl, r.call_count))
            .collect()
    }

    async fn filter(&mut self) -> Result<()> {
        const FIELDS: [Var; 4] = [Var::U, Var::V, Var::T, Var::PS];
        let g = self.g;
        let nxl = self.ex.nb;
        let ib = self.ex.ib;

        let simplified = self.scheduled_rows(FilterScheme::Simplified);
        if !simplified.is_empty() {
            let mut partial = Vec::new();
            for v in FIELDS {
                let f = self.f(v);
                for &(jl, _) in &simplified {
                    for k in 0..f.nzl {
                        let mut s = 0.0;
                        for i in 0..nxl {
                            s += simplified_term(ib + i, f.get(i, jl, k));
                        }
                        partial.push(s);
                    }
                }
            }
            let total = self.ctx.allreduce_sum_labeled(&self.xcomm, &partial, "filter/simplified").await?;
            let mut at = 0;
            for v in FIELDS {
                let f = &mut self.fields[v as usize];
                for &(jl, _) in &simplified {
                    for k in 0..f.nzl {
                        let shift = g.filter.simplified_sign * 2.0 / g.nx as f64 * total[at];
                        at += 1;
                        for i in 0..nxl {
                            let x = f.get(i, jl, k);
                            f.set(i, jl, k, x + shift);
                        }
                    }
                }
                f.touch();
            }
        }

        let recursive = self.scheduled_rows(FilterScheme::Recursive3);
        let passes = recursive.iter().map(|r| r.1).max().unwrap_or(0);
        for pass in 0..passes {
            let widths: RowWidths = recursive.iter().filter(|r| r.1 > pass).map(|r| (r.0, 1, 1)).collect();
            self.exchange_x(&FIELDS, FILTER_HALO, &widths).await?;
            for v in FIELDS {
                let f = &mut self.fields[v as usize];
                for &(jl, _, _) in &widths {
                    for k in 0..f.nzl {
                        let (j, k) = (jl as isize, k as isize);
                        let new: Vec<f64> = (0..nxl as isize)
                            .map(|i| recursive3_point(f.at(i - 1, j, k), f.at(i, j, k), f.at(i + 1, j, k), g.filter.recursive_r))
                            .collect();
                        for (i, x) in new.into_iter().enumerate() {
                            f.put(i as isize, j, k, x);
                        }
                    }
                }
                f.touch();
            }
        }

        let gaussian = self.scheduled_rows(FilterScheme::Gaussian);
        let calls = gaussian.iter().map(|r| r.1).max().unwrap_or(0);
        if calls > 0 {
            let w = gaussian_weights(g.filter.gaussian_half_width, g.filter.gaussian_sigma)?;
            let eps = g.filter.gaussian_half_width;
            let report = self.coords.lx == 0 && self.coords.lz == 0;
            for call in 0..calls {
                let widths: RowWidths = gaussian.iter().filter(|r| r.1 > call).map(|r| (r.0, eps, eps)).collect();
                self.exchange_x(&FIELDS, FILTER_HALO, &widths).await?;
                for v in FIELDS {
                    let f = &mut self.fields[v as usize];
                    for &(jl, _, _) in &widths {
                        for k in 0..f.nzl {
                            let row = f.halo_row(jl, k)?;
                            let new: Vec<f64> = (0..nxl)
                                .map(|i| gaussian_point(|o| row.data[row.left + i + o - eps], &w))
                                .collect();
                            for (i, x) in new.into_iter().enumerate() {
                                f.set(i, jl, k, x);
                            }
                        }
                    }
                    f.touch();
                }
                if report {
                    for &(jl, _, _) in &widths {
                        self.counters.gaussian_calls[self.ey.ib + jl] += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for v in [Var::U, Var::V, Var::T, Var::PS] {
            let f = self.f(v);
            for k in 0..f.nzl {
                for j in 0..f.nyl {
                    for i in 0..f.nxl {
                        if !f.get(i, j, k).is_finite() {
                            return Err(Error::Numerical {
                                field: v.name().to_string(),
                                i: self.ex.ib + i,
                                j: self.ey.ib + j,
                                k: if v.is_2d() { 0 } else { self.ez.ib + k },
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    async fn step(&mut self, dt: f64, m_ratio: usize) -> Result<()> {
        for _ in 0..3 {
            for _ in 0..m_ratio {
                self.advection(dt / (3 * m_ratio) as f64).await?;
            }
            self.adaption(dt / 3.0).await?;
        }
        self.filter().await?;
        self.check_finite()?;
        self.counters.steps += 1;
        Ok(())
    }
}

struct RankOutput {
    coords: Coords,
    blocks: [Vec<f64>; 4],
    counters: Counters,
}

async fn rank_main(ctx: RankCtx, cfg: &DycoreConfig, g: &Geometry, init: &ModelState, steps: usize) -> Result<RankOutput> {
    let mut r = Rank::new(&ctx, g, &cfg.pgrid, cfg.aggregate)?;
    r.load(init);
    for _ in 0..steps {
        if let Err(e) = r.step(g.dt, cfg.m_ratio).await {
            return Err(ctx.abort(e));
        }
    }
    Ok(RankOutput {
        coords: r.coords,
        blocks: [
            r.f(Var::U).owned(),
            r.f(Var::V).owned(),
            r.f(Var::T).owned(),
            r.f(Var::PS).owned(),
        ],
        counters: r.counters,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub state: ModelState,
    pub stats: CommStats,
    pub counters: Counters,
    pub geometry: Geometry,
    /// Filter operations per rank per step.
    pub filter_load: Vec<usize>,
}

fn check_pgrid(grid: &GridSpec, p: &ProcessGrid) -> Result<()> {
    ProcessGrid::new(grid.mesh(), p.px, p.py, p.pz, p.order, p.cores_per_node).map(|_| ())
}

/// Run `steps` outer steps on the configured process grid and gather the
/// final state.
pub fn run(cfg: &DycoreConfig, steps: usize) -> Result<RunReport> {
    let g = Geometry::new(cfg)?;
    check_pgrid(&cfg.grid, &cfg.pgrid)?;
    let init = init_state(cfg, &g);
    let rt = Runtime::new(cfg.pgrid.cores_per_node, cfg.schedule);
    let out = rt.run(cfg.pgrid.size(), |ctx| {
        let (g, init) = (&g, &init);
        async move { rank_main(ctx, cfg, g, init, steps).await }
    })?;

    let mut state = init.clone();
    state.step_count = steps;
    let xs = split_all(g.nx, cfg.pgrid.px)?;
    let ys = split_all(g.ny, cfg.pgrid.py)?;
    let zs = split_all(g.nz, cfg.pgrid.pz)?;
    let mut counters = Counters::new(g.ny);
    for (rank, r) in out.results.iter().enumerate() {
        let (ex, ey, ez) = (xs[r.coords.lx], ys[r.coords.ly], zs[r.coords.lz]);
        let mut it = 0;
        for k in 0..ez.nb {
            for j in 0..ey.nb {
                for i in 0..ex.nb {
                    let at = g.idx3(ex.ib + i, ey.ib + j, ez.ib + k);
                    state.u[at] = r.blocks[0][it];
                    state.v[at] = r.blocks[1][it];
                    state.t[at] = r.blocks[2][it];
                    it += 1;
                }
            }
        }
        if r.coords.lz == 0 {
            let mut it = 0;
            for j in 0..ey.nb {
                for i in 0..ex.nb {
                    state.ps[g.idx2(ex.ib + i, ey.ib + j)] = r.blocks[3][it];
                    it += 1;
                }
            }
        }
        if rank == 0 {
            counters.steps = r.counters.steps;
            counters.advection_calls = r.counters.advection_calls;
            counters.adaption_calls = r.counters.adaption_calls;
        }
        for (c, add) in counters.gaussian_calls.iter_mut().zip(&r.counters.gaussian_calls) {
            *c += add;
        }
    }
    let filter_load = filters::filter_load(&cfg.grid, &cfg.pgrid, &g.schedule)?;
    Ok(RunReport {
        state,
        stats: out.stats,
        counters,
        geometry: g,
        filter_load,
    })
}

/// Predicted p2p traffic of one aggregation group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupTraffic {
    pub messages: u64,
    pub bytes: u64,
}

/// Halo traffic per aggregation group for one outer step, from the planner
/// alone.
pub fn predict_group_traffic(cfg: &DycoreConfig) -> Result<BTreeMap<&'static str, GroupTraffic>> {
    let g = Geometry::new(cfg)?;
    let p = cfg.pgrid;
    check_pgrid(&cfg.grid, &p)?;
    let xs = split_all(g.nx, p.px)?;
    let ys = split_all(g.ny, p.py)?;
    let zs = split_all(g.nz, p.pz)?;
    let groups = census();
    let mut out: BTreeMap<&'static str, GroupTraffic> = BTreeMap::new();
    for rank in 0..p.size() {
        let c = p.coords_of(rank)?;
        let nzl = zs[c.lz].nb;
        for group in &groups {
            let calls = match group.phase {
                Phase::Advection => 3 * cfg.m_ratio,
                Phase::Adaption => 3,
            } as u64;
            let mut keyed: BTreeMap<(usize, Direction, Vec<String>), usize> = BTreeMap::new();
            for j in ys[c.ly].range().filter(|&j| !g.is_pole[j]) {
                let (l, r) = pattern_offsets(group.pattern, g.n_row[j]);
                let mut plans = Vec::new();
                for (dir, w) in [(Direction::Right, r), (Direction::Left, l)] {
                    if w == 0 {
                        continue;
                    }
                    let plan = plan_window(g.nx, &xs, c.lx, w, dir)?;
                    for v in &group.variables {
                        plans.push(VariablePlan {
                            variable: v.to_string(),
                            phase: group.phase,
                            pattern: group.pattern,
                            plan: plan.clone(),
                        });
                    }
                }
                let batches = if cfg.aggregate {
                    aggregate(&plans, std::slice::from_ref::<AggregationGroup>(group), nzl, ELEMENT_BYTES as usize)?
                } else {
                    batches_per_variable(&plans, nzl, ELEMENT_BYTES as usize)
                };
                for b in batches.into_iter().filter(|b| !b.local) {
                    *keyed.entry((b.peer, b.direction, b.variables)).or_default() += b.bytes;
                }
            }
            let e = out.entry(group.label()).or_default();
            e.messages += keyed.len() as u64 * calls;
            e.bytes += keyed.values().sum::<usize>() as u64 * calls;
        }
    }
    Ok(out)
}

/// One-point halo exchange of `alpha` 2D and `beta` 3D fields towards the
/// periodic successor along every split dimension. Returns per-rank p2p
/// bytes sent on the X, Y and Z communicators.
pub fn measure_standard_halo(
    grid: &GridSpec,
    pgrid: &ProcessGrid,
    alpha: usize,
    beta: usize,
    aggregate: bool,
) -> Result<(Vec<[u64; 3]>, CommStats)> {
    check_pgrid(grid, pgrid)?;
    let xs = split_all(grid.nx, pgrid.px)?;
    let ys = split_all(grid.ny, pgrid.py)?;
    let zs = split_all(grid.nz, pgrid.pz)?;
    let rt = Runtime::new(pgrid.cores_per_node, crate::runtime::Schedule::RoundRobin);
    let out = rt.run(pgrid.size(), |ctx| {
        let (xs, ys, zs) = (&xs, &ys, &zs);
        async move {
            let me = ctx.rank();
            let c = pgrid.coords_of(me)?;
            let (nxl, nyl, nzl) = (xs[c.lx].nb, ys[c.ly].nb, zs[c.lz].nb);
            let dims = [
                (CommKind::X, nyl, alpha),
                (CommKind::Y, nxl, alpha),
                (CommKind::Z, nxl * nyl, 0),
            ];
            for (id, (kind, face, n2d)) in dims.into_iter().enumerate() {
                let comm = Communicator::along(pgrid, me, kind)?;
                let p = comm.size();
                if p == 1 {
                    continue;
                }
                // the Z face of a 3D field is one layer, the X/Y faces span all layers
                let per3d = if kind == CommKind::Z { face } else { face * nzl };
                let mut sizes = vec![face; n2d];
                sizes.extend(std::iter::repeat(per3d).take(beta));
                if aggregate {
                    sizes = vec![sizes.iter().sum()];
                }
                let tag = Tag::new(id as u64, "standard-halo");
                let next = (comm.my_index + 1) % p;
                let prev = (comm.my_index + p - 1) % p;
                for &n in &sizes {
                    ctx.send(&comm, next, tag, vec![me as f64; n])?;
                }
                for &n in &sizes {
                    let got = ctx.recv(&comm, prev, tag).await?;
                    if got.len() != n {
                        return Err(Error::Contract(format!("halo message of {} points, expected {n}", got.len())));
                    }
                }
            }
            Ok(())
        }
    })?;
    let per_rank = (0..pgrid.size())
        .map(|r| {
            [CommKind::X, CommKind::Y, CommKind::Z].map(|k| out.stats.rank(r, k).p2p_sent)
        })
        .collect();
    Ok((per_rank, out.stats))
}

#[cfg(test)]
mod tests {
    use super::super::serial::run_serial;
    use super::*;
    use crate::decomp::{estimate_comm_volume, RankOrder};
    use crate::filters::FilterMode;
    use crate::runtime::Schedule;

    fn layout(px: usize, py: usize, pz: usize, order: RankOrder) -> DycoreConfig {
        let mut cfg = DycoreConfig::desk();
        cfg.pgrid = ProcessGrid {
            px,
            py,
            pz,
            order,
            cores_per_node: 4,
        };
        cfg
    }

    #[test]
    fn single_rank_matches_oracle() {
        let cfg = DycoreConfig::desk();
        let par = run(&cfg, 2).unwrap();
        let ser = run_serial(&cfg, 2).unwrap();
        let d = par.state.max_abs_diff(&ser.state);
        assert!(d <= 1e-12, "{d}");
        assert_eq!(par.counters, ser.counters);
    }

    #[test]
    fn decomposed_matches_oracle() {
        for mode in [FilterMode::LeapFormat, FilterMode::Conventional] {
            let mut cfg = layout(2, 3, 2, RankOrder::ZPrior);
            cfg.mode = mode;
            let par = run(&cfg, 2).unwrap();
            let ser = run_serial(&cfg, 2).unwrap();
            let d = par.state.max_abs_diff(&ser.state);
            assert!(d <= 1e-12, "{mode:?}: {d}");
            assert_eq!(par.counters.gaussian_calls, ser.counters.gaussian_calls);
        }
    }

    #[test]
    fn crossed_windows_match_oracle() {
        // 8 ranks along X leave 6 points each, fewer than the widest window
        let cfg = layout(8, 1, 1, RankOrder::YPrior);
        let par = run(&cfg, 1).unwrap();
        let ser = run_serial(&cfg, 1).unwrap();
        assert!(par.state.max_abs_diff(&ser.state) <= 1e-12);
    }

    #[test]
    fn schedules_agree_bitwise() {
        let mut cfg = layout(2, 2, 2, RankOrder::YPrior);
        let base = run(&cfg, 1).unwrap();
        for s in [Schedule::Shuffled(3), Schedule::Threaded] {
            cfg.schedule = s;
            let o = run(&cfg, 1).unwrap();
            assert_eq!(o.state, base.state);
            assert_eq!(o.stats, base.stats);
        }
    }

    #[test]
    fn group_traffic_matches_prediction() {
        for aggregate in [true, false] {
            let mut cfg = layout(3, 2, 2, RankOrder::ZPrior);
            cfg.aggregate = aggregate;
            let report = run(&cfg, 1).unwrap();
            let predicted = predict_group_traffic(&cfg).unwrap();
            for (label, p) in &predicted {
                let got = report.stats.label(label);
                assert_eq!(got.p2p_messages.total(), p.messages, "{label} aggregate={aggregate}");
                assert_eq!(got.p2p_bytes.total(), p.bytes, "{label} aggregate={aggregate}");
            }
        }
    }

    #[test]
    fn aggregation_divides_message_count_by_group_size() {
        let mut on = layout(3, 2, 1, RankOrder::ZPrior);
        on.aggregate = true;
        let mut off = on.clone();
        off.aggregate = false;
        let a = predict_group_traffic(&on).unwrap();
        let b = predict_group_traffic(&off).unwrap();
        for g in census() {
            let (a, b) = (a[g.label()], b[g.label()]);
            assert_eq!(a.bytes, b.bytes);
            assert_eq!(a.messages * g.variables.len() as u64, b.messages);
        }
    }

    #[test]
    fn standard_halo_matches_cost_model() {
        let grid = GridSpec::new(48, 24, 8).unwrap();
        for (px, py, pz) in [(2, 3, 2), (4, 2, 4), (1, 4, 2)] {
            let p = ProcessGrid {
                px,
                py,
                pz,
                order: RankOrder::YPrior,
                cores_per_node: 4,
            };
            let est = estimate_comm_volume(grid.mesh(), &p, 2, 8);
            for aggregate in [true, false] {
                let (per_rank, _) = measure_standard_halo(&grid, &p, 2, 8, aggregate).unwrap();
                for r in per_rank {
                    assert_eq!(r[0] as f64, est.x_p2p * 8.0);
                    assert_eq!(r[1] as f64, est.y_p2p * 8.0);
                    assert_eq!(r[2] as f64, est.z_p2p * 8.0);
                }
            }
        }
    }

    #[test]
    fn stale_halo_is_a_contract_error() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let rt = Runtime::new(1, Schedule::RoundRobin);
        let err = rt
            .run(1, |ctx| {
                let g = &g;
                async move {
                    let r = Rank::new(&ctx, g, &ProcessGrid::serial(), true)?;
                    r.diff(Var::UT, 1, 0, Pattern::Wide).map(|_| ())
                }
            })
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err:?}");
    }
}
