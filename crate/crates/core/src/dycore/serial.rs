//! Whole-array reference run: periodic rows, [`sigma_reference`], the
//! library filters. Shares nothing with the decomposed path except the
//! point formulas.

use super::{init_state, kern, Counters, DycoreConfig, Geometry, ModelState};
use crate::error::{Error, Result};
use crate::filters::{apply_row, FilterScheme};
use crate::halo::Pattern;
use crate::leap::periodic_leap_diff;
use crate::vertical::sigma_reference;

#[derive(Debug, Clone)]
pub struct SerialRun {
    pub state: ModelState,
    pub counters: Counters,
}

struct Model<'a> {
    g: &'a Geometry,
    s: ModelState,
    ut: Vec<f64>,
    vt: Vec<f64>,
    tt: Vec<f64>,
    counters: Counters,
}

impl Model<'_> {
    fn row<'b>(&self, f: &'b [f64], j: usize, k: usize) -> &'b [f64] {
        let at = self.g.idx3(0, j, k);
        &f[at..at + self.g.nx]
    }

    fn diff(&self, f: &[f64], j: usize, k: usize, pattern: Pattern) -> Result<Vec<f64>> {
        periodic_leap_diff(self.row(f, j, k), pattern, self.g.n_row[j], self.g.dx[j])
    }

    fn ddy(&self, f: &[f64], i: usize, j: usize, k: usize) -> f64 {
        let g = self.g;
        kern::dy(f[g.idx3(i, j + 1, k)], f[g.idx3(i, j - 1, k)], g.dy)
    }

    fn ddz(&self, f: &[f64], i: usize, j: usize, k: usize) -> f64 {
        let g = self.g;
        let up = (k + 1).min(g.nz - 1);
        let down = k.saturating_sub(1);
        kern::dz(f[g.idx3(i, j, up)], f[g.idx3(i, j, down)])
    }

    fn interior(&self) -> Vec<usize> {
        (0..self.g.ny).filter(|&j| !self.g.is_pole[j]).collect()
    }

    fn advection(&mut self, h: f64) -> Result<()> {
        let g = self.g;
        let ustar = self.s.u.clone();
        let mut ut = vec![0.0; ustar.len()];
        let mut vt = vec![0.0; ustar.len()];
        let mut tt = vec![0.0; ustar.len()];
        for k in 0..g.nz {
            for j in self.interior() {
                let dp = self.diff(&ustar, j, k, Pattern::PlusHalf)?;
                let dm = self.diff(&ustar, j, k, Pattern::MinusHalf)?;
                for i in 0..g.nx {
                    let at = g.idx3(i, j, k);
                    ut[at] = kern::advect_u(
                        g.u0_row[j],
                        dp[i],
                        dm[i],
                        g.v0,
                        self.ddy(&self.s.u, i, j, k),
                        g.w0,
                        self.ddz(&self.s.u, i, j, k),
                    );
                    vt[at] = kern::advect_other(g.v0, self.ddy(&self.s.v, i, j, k), g.w0, self.ddz(&self.s.v, i, j, k));
                    tt[at] = kern::advect_other(g.v0, self.ddy(&self.s.t, i, j, k), g.w0, self.ddz(&self.s.t, i, j, k));
                }
            }
        }
        for k in 0..g.nz {
            for j in self.interior() {
                let wu = self.diff(&ut, j, k, Pattern::Wide)?;
                let wv = self.diff(&vt, j, k, Pattern::Wide)?;
                let wt = self.diff(&tt, j, k, Pattern::Wide)?;
                for i in 0..g.nx {
                    let at = g.idx3(i, j, k);
                    let u0 = g.u0_row[j];
                    self.s.u[at] = kern::advect_update(self.s.u[at], ut[at], h, u0, wu[i]);
                    self.s.v[at] = kern::advect_update(self.s.v[at], vt[at], h, u0, wv[i]);
                    self.s.t[at] = kern::advect_update(self.s.t[at], tt[at], h, u0, wt[i]);
                }
            }
        }
        self.ut = ut;
        self.vt = vt;
        self.tt = tt;
        self.counters.advection_calls += 1;
        Ok(())
    }

    fn adaption(&mut self, h: f64) -> Result<()> {
        let g = self.g;
        let n3 = self.s.u.len();
        let ps_at = |s: &ModelState, at: usize| s.ps[at % (g.nx * g.ny)];
        let pxw = self.s.u.clone();
        let pt = self.s.t.clone();
        let mut pstar1 = vec![0.0; n3];
        let mut pstar2 = vec![0.0; n3];
        let mut deltap = vec![0.0; n3];
        let mut ghi = vec![0.0; n3];
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let at = g.idx3(i, j, k);
                    let ps = ps_at(&self.s, at);
                    pstar1[at] = ps;
                    pstar2[at] = g.s_k[k] * ps;
                    deltap[at] = g.s_k[k] * self.s.t[at];
                    ghi[at] = self.s.t[at] + ps;
                }
            }
        }

        let mut delta = vec![0.0; n3];
        for k in 0..g.nz {
            for j in self.interior() {
                let dp_pxw = self.diff(&pxw, j, k, Pattern::PlusHalf)?;
                let dp_ut = self.diff(&self.ut, j, k, Pattern::PlusHalf)?;
                for i in 0..g.nx {
                    delta[g.idx3(i, j, k)] = kern::divergence(dp_pxw[i], h, dp_ut[i], self.ddy(&self.s.v, i, j, k));
                }
            }
        }
        let mut sigma = vec![0.0; n3];
        let mut eps = vec![0.0; g.nx * g.ny];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let column: Vec<f64> = (0..g.nz).map(|k| delta[g.idx3(i, j, k)]).collect();
                let s = sigma_reference(&column, &g.coef);
                for (k, v) in s.iter().enumerate() {
                    sigma[g.idx3(i, j, k)] = *v;
                }
                eps[g.idx2(i, j)] = s[0];
            }
        }

        let mut du = vec![0.0; n3];
        let mut dv = vec![0.0; n3];
        let mut dt = vec![0.0; n3];
        for k in 0..g.nz {
            for j in self.interior() {
                let m = |f: &[f64]| self.diff(f, j, k, Pattern::MinusHalf);
                let (a, b, c, d, e, f) = (m(&pt)?, m(&pstar1)?, m(&pstar2)?, m(&deltap)?, m(&ghi)?, m(&self.tt)?);
                let w2 = self.diff(&pstar2, j, k, Pattern::Wide)?;
                for i in 0..g.nx {
                    let at = g.idx3(i, j, k);
                    du[at] = kern::adapt_u(g.gamma, h, a[i], b[i], c[i], d[i], e[i], f[i]);
                    dv[at] = kern::adapt_v(g.gamma, self.ddy(&ghi, i, j, k));
                    dt[at] = kern::adapt_t(g.gamma, g.mu, sigma[at], w2[i]);
                }
            }
        }
        for k in 0..g.nz {
            for j in self.interior() {
                for i in 0..g.nx {
                    let at = g.idx3(i, j, k);
                    self.s.u[at] += h * du[at];
                    self.s.v[at] += h * dv[at];
                    self.s.t[at] += h * dt[at];
                }
            }
        }
        for j in self.interior() {
            for i in 0..g.nx {
                let at = g.idx2(i, j);
                self.s.ps[at] += h * kern::adapt_ps(g.gamma, eps[at]);
            }
        }
        self.counters.adaption_calls += 1;
        Ok(())
    }

    fn filter(&mut self) -> Result<()> {
        let g = self.g;
        let nx = g.nx;
        for row in &g.schedule.rows {
            if row.scheme == FilterScheme::None {
                continue;
            }
            if row.scheme == FilterScheme::Gaussian {
                self.counters.gaussian_calls[row.j] += row.call_count;
            }
            let j = row.j;
            for f in [&mut self.s.u, &mut self.s.v, &mut self.s.t] {
                for k in 0..g.nz {
                    let at = (k * g.ny + j) * nx;
                    let out = apply_row(&f[at..at + nx], row.scheme, row.call_count, &g.filter)?;
                    f[at..at + nx].copy_from_slice(&out);
                }
            }
            let at = j * nx;
            let out = apply_row(&self.s.ps[at..at + nx], row.scheme, row.call_count, &g.filter)?;
            self.s.ps[at..at + nx].copy_from_slice(&out);
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let g = self.g;
        for (name, f) in self.s.fields() {
            if let Some(at) = f.iter().position(|v| !v.is_finite()) {
                let plane = g.nx * g.ny;
                return Err(Error::Numerical {
                    field: name.to_string(),
                    i: at % g.nx,
                    j: (at % plane) / g.nx,
                    k: at / plane,
                });
            }
        }
        Ok(())
    }

    fn step(&mut self, m_ratio: usize) -> Result<()> {
        let dt = self.s.dt;
        for _ in 0..3 {
            for _ in 0..m_ratio {
                self.advection(dt / (3 * m_ratio) as f64)?;
            }
            self.adaption(dt / 3.0)?;
        }
        self.filter()?;
        self.check_finite()?;
        self.s.step_count += 1;
        self.counters.steps += 1;
        Ok(())
    }
}

/// Run the configuration on one whole array, ignoring its process grid.
pub fn run_serial(cfg: &DycoreConfig, steps: usize) -> Result<SerialRun> {
    let g = Geometry::new(cfg)?;
    let s = init_state(cfg, &g);
    run_serial_from(cfg, &g, s, steps)
}

pub fn run_serial_from(cfg: &DycoreConfig, g: &Geometry, state: ModelState, steps: usize) -> Result<SerialRun> {
    let n3 = state.u.len();
    let mut m = Model {
        g,
        s: state,
        ut: vec![0.0; n3],
        vt: vec![0.0; n3],
        tt: vec![0.0; n3],
        counters: Counters::new(g.ny),
    };
    for _ in 0..steps {
        m.step(cfg.m_ratio)?;
    }
    Ok(SerialRun {
        state: m.s,
        counters: m.counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterMode;

    #[test]
    fn zero_steps_is_identity() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let s = init_state(&cfg, &g);
        assert_eq!(run_serial(&cfg, 0).unwrap().state, s);
    }

    #[test]
    fn constant_fields_stay_constant() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let mut s = init_state(&cfg, &g);
        s.u.iter_mut().for_each(|v| *v = 3.0);
        s.v.iter_mut().for_each(|v| *v = -1.0);
        s.t.iter_mut().for_each(|v| *v = 2.5);
        s.ps.iter_mut().for_each(|v| *v = 7.0);
        let out = run_serial_from(&cfg, &g, s.clone(), 2).unwrap();
        assert!(out.state.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn call_ratio() {
        for (m, want) in [(1, 3), (2, 6)] {
            let mut cfg = DycoreConfig::desk();
            cfg.m_ratio = m;
            let r = run_serial(&cfg, 1).unwrap();
            assert_eq!(r.counters.advection_calls, want);
            assert_eq!(r.counters.adaption_calls, 3);
        }
    }

    #[test]
    fn stays_finite_and_moves() {
        let cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let s0 = init_state(&cfg, &g);
        let r = run_serial(&cfg, 10).unwrap();
        let d = r.state.max_abs_diff(&s0);
        assert!(d > 1e-6 && d < 10.0, "{d}");
    }

    #[test]
    fn leap_mode_skips_high_latitude_gaussian() {
        let mut cfg = DycoreConfig::desk();
        let g = Geometry::new(&cfg).unwrap();
        let leap = run_serial(&cfg, 1).unwrap();
        assert_eq!(leap.counters.gaussian_calls_above(&g, 70.0), 0);
        cfg.mode = FilterMode::Conventional;
        let g = Geometry::new(&cfg).unwrap();
        let conv = run_serial(&cfg, 1).unwrap();
        assert!(conv.counters.gaussian_calls_above(&g, 70.0) > 0);
    }
}
