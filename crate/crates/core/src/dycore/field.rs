//! Rank-local field storage with halo margins.

use crate::error::{Error, Result};
use crate::leap::HaloRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Var {
    U,
    V,
    T,
    PS,
    UT,
    VT,
    TT,
    Ustar,
    PXW,
    PT,
    Pstar1,
    Pstar2,
    Deltap,
    GHI,
}

impl Var {
    pub const ALL: [Var; 14] = [
        Var::U,
        Var::V,
        Var::T,
        Var::PS,
        Var::UT,
        Var::VT,
        Var::TT,
        Var::Ustar,
        Var::PXW,
        Var::PT,
        Var::Pstar1,
        Var::Pstar2,
        Var::Deltap,
        Var::GHI,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Var::U => "U",
            Var::V => "V",
            Var::T => "T",
            Var::PS => "PS",
            Var::UT => "UT",
            Var::VT => "VT",
            Var::TT => "TT",
            Var::Ustar => "Ustar",
            Var::PXW => "PXW",
            Var::PT => "PT",
            Var::Pstar1 => "Pstar1",
            Var::Pstar2 => "Pstar2",
            Var::Deltap => "deltap",
            Var::GHI => "GHI",
        }
    }

    pub fn by_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn is_2d(self) -> bool {
        self == Var::PS
    }
}

/// Owned block plus `hx` points of X halo, one Y halo row each side and, for
/// 3D fields, one Z halo layer each side.
///
/// Freshness is tracked per local row for X (the widths last received) and
/// as one flag for Y/Z; any owned write clears both.
#[derive(Debug, Clone)]
pub(crate) struct Field {
    pub var: Var,
    pub nxl: usize,
    pub nyl: usize,
    pub nzl: usize,
    hx: usize,
    hz: usize,
    data: Vec<f64>,
    x_valid: Vec<(usize, usize)>,
    yz_valid: bool,
}

impl Field {
    pub fn new(var: Var, nxl: usize, nyl: usize, nzl: usize, hx: usize) -> Self {
        let (nzl, hz) = if var.is_2d() { (1, 0) } else { (nzl, 1) };
        Self {
            var,
            nxl,
            nyl,
            nzl,
            hx,
            hz,
            data: vec![0.0; (nxl + 2 * hx) * (nyl + 2) * (nzl + 2 * hz)],
            x_valid: vec![(0, 0); nyl],
            yz_valid: false,
        }
    }

    fn row_start(&self, j: isize, k: isize) -> usize {
        let pitch = self.nxl + 2 * self.hx;
        let jj = (j + 1) as usize;
        let kk = (k + self.hz as isize) as usize;
        (kk * (self.nyl + 2) + jj) * pitch
    }

    #[inline]
    pub fn at(&self, i: isize, j: isize, k: isize) -> f64 {
        self.data[self.row_start(j, k) + (i + self.hx as isize) as usize]
    }

    #[inline]
    pub fn put(&mut self, i: isize, j: isize, k: isize, v: f64) {
        let at = self.row_start(j, k) + (i + self.hx as isize) as usize;
        self.data[at] = v;
    }

    /// Owned values at `(i, j, k)` without touching freshness; callers must
    /// [`touch`](Self::touch) once they finish writing.
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.at(i as isize, j as isize, k as isize)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.put(i as isize, j as isize, k as isize, v)
    }

    pub fn touch(&mut self) {
        self.x_valid.iter_mut().for_each(|w| *w = (0, 0));
        self.yz_valid = false;
    }

    pub fn mark_x(&mut self, j: usize, left: usize, right: usize) {
        let w = &mut self.x_valid[j];
        w.0 = w.0.max(left);
        w.1 = w.1.max(right);
    }

    pub fn mark_yz(&mut self) {
        self.yz_valid = true;
    }

    /// Row `(j, k)` with its fresh X halo.
    pub fn halo_row(&self, j: usize, k: usize) -> Result<HaloRow<'_>> {
        let (l, r) = self.x_valid[j];
        let s = self.row_start(j as isize, k as isize) + self.hx;
        HaloRow::new(&self.data[s - l..s + self.nxl + r], l, r)
    }

    pub fn require_yz(&self) -> Result<()> {
        if self.yz_valid {
            Ok(())
        } else {
            Err(Error::Contract(format!("stale Y/Z halo of {}", self.var.name())))
        }
    }

    /// Owned values in `(k, j, i)` order.
    pub fn owned(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nxl * self.nyl * self.nzl);
        for k in 0..self.nzl {
            for j in 0..self.nyl {
                for i in 0..self.nxl {
                    out.push(self.get(i, j, k));
                }
            }
        }
        out
    }
}
