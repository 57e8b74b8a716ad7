//! JSON run configuration.
//!
//! Every key has a default, so `{}` is the desk configuration. Unknown keys
//! are rejected.

use crate::decomp::{ProcessGrid, RankOrder};
use crate::dycore::{DycoreConfig, TimeStep};
use crate::error::{Error, Result};
use crate::filters::{FilterMode, FilterParams};
use crate::grid::{GridSpec, EARTH_RADIUS_KM};
use crate::leap::{DEFAULT_ACTIVATION_LAT, DEFAULT_REFERENCE_LAT};
use crate::runtime::Schedule;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub earth_radius_km: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 48,
            ny: 24,
            nz: 8,
            earth_radius_km: EARTH_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompSection {
    pub px: usize,
    pub py: usize,
    pub pz: usize,
    pub order: RankOrder,
    pub cores_per_node: usize,
}

impl Default for DecompSection {
    fn default() -> Self {
        Self {
            px: 1,
            py: 1,
            pz: 1,
            order: RankOrder::ZPrior,
            cores_per_node: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeapSection {
    pub mode: FilterMode,
    pub activation_lat_deg: f64,
    pub reference_lat_deg: f64,
}

impl Default for LeapSection {
    fn default() -> Self {
        Self {
            mode: FilterMode::LeapFormat,
            activation_lat_deg: DEFAULT_ACTIVATION_LAT,
            reference_lat_deg: DEFAULT_REFERENCE_LAT,
        }
    }
}

/// `dt_s` is either a number of seconds or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSetting {
    Seconds(f64),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: usize,
    pub dt_s: DtSetting,
    pub m_ratio: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: 10,
            dt_s: DtSetting::Keyword(AutoKeyword::Auto),
            m_ratio: 2,
            seed: 1,
        }
    }
}

/// `alpha` 2D and `beta` 3D variables per exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub alpha: usize,
    pub beta: usize,
    pub gaussian_calls_max: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            alpha: 1,
            beta: 3,
            gaussian_calls_max: FilterParams::default().gaussian_calls_max,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridSection,
    pub decomp: DecompSection,
    pub leap: LeapSection,
    pub run: RunSection,
    pub model: ModelSection,
}

/// Command-line settings layered over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<FilterMode>,
    pub order: Option<RankOrder>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(m) = o.mode {
            self.leap.mode = m;
        }
        if let Some(order) = o.order {
            self.decomp.order = order;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::with_radius(g.nx, g.ny, g.nz, g.earth_radius_km).map_err(as_config)
    }

    pub fn pgrid(&self) -> Result<ProcessGrid> {
        let d = &self.decomp;
        ProcessGrid::new(self.grid()?.mesh(), d.px, d.py, d.pz, d.order, d.cores_per_node).map_err(as_config)
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            gaussian_calls_max: self.model.gaussian_calls_max,
            ..FilterParams::default()
        }
    }

    pub fn dycore(&self, aggregate: bool) -> Result<DycoreConfig> {
        let dt = match self.run.dt_s {
            DtSetting::Keyword(AutoKeyword::Auto) => TimeStep::Auto,
            DtSetting::Seconds(s) => TimeStep::Seconds(s),
        };
        if self.run.m_ratio == 0 {
            return Err(Error::Config("run.m_ratio must be >= 1".into()));
        }
        Ok(DycoreConfig {
            grid: self.grid()?,
            pgrid: self.pgrid()?,
            mode: self.leap.mode,
            activation_lat: self.leap.activation_lat_deg,
            reference_lat: self.leap.reference_lat_deg,
            dt,
            m_ratio: self.run.m_ratio,
            seed: self.run.seed,
            aggregate,
            filter: self.filter_params(),
            physics: Default::default(),
            schedule: Schedule::RoundRobin,
        })
    }
}

/// Geometry and layout errors found while reading a config are config errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_desk_default() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        let d = c.dycore(true).unwrap();
        assert_eq!(d.grid.nx, 48);
        assert_eq!(d.dt, TimeStep::Auto);
        assert_eq!(d.mode, FilterMode::LeapFormat);
    }

    #[test]
    fn parses_every_section() {
        let c = Config::from_json(
            r#"{"grid": {"nx": 768, "ny": 361, "nz": 30},
                "decomp": {"px": 2, "py": 32, "pz": 1, "order": "y-prior", "cores_per_node": 8},
                "leap": {"mode": "conventional", "activation_lat_deg": 90},
                "run": {"steps": 3, "dt_s": 12.5, "m_ratio": 1, "seed": 7},
                "model": {"alpha": 2, "beta": 5}}"#,
        )
        .unwrap();
        assert_eq!(c.decomp.order, RankOrder::YPrior);
        assert_eq!(c.leap.mode, FilterMode::Conventional);
        assert_eq!(c.run.dt_s, DtSetting::Seconds(12.5));
        assert_eq!(c.grid.earth_radius_km, EARTH_RADIUS_KM);
        let auto = Config::from_json(r#"{"run": {"dt_s": "auto"}}"#).unwrap();
        assert_eq!(auto.run.dt_s, DtSetting::Keyword(AutoKeyword::Auto));
        let leap = Config::from_json(r#"{"leap": {"mode": "leap"}}"#).unwrap();
        assert_eq!(leap.leap.mode, FilterMode::LeapFormat);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for bad in [
            r#"{"gird": {}}"#,
            r#"{"grid": {"nx": 48, "nr": 2}}"#,
            r#"{"run": {"dt_s": "soon"}}"#,
            r#"{"leap": {"mode": "fast"}}"#,
            "not json",
        ] {
            assert!(matches!(Config::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
        let c = Config::from_json(r#"{"decomp": {"px": 100}}"#).unwrap();
        assert!(matches!(c.pgrid(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_win() {
        let mut c = Config::default();
        c.apply(Overrides {
            mode: Some(FilterMode::Conventional),
            order: Some(RankOrder::YPrior),
            seed: Some(9),
        });
        assert_eq!(c.leap.mode, FilterMode::Conventional);
        assert_eq!(c.decomp.order, RankOrder::YPrior);
        assert_eq!(c.run.seed, 9);
    }
}
