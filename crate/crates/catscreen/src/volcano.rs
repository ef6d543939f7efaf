//! Piecewise-linear volcano relationships mapping adsorption energies to
//! normalized activity and selectivity, plus the threshold rule that turns
//! selectivity into a feasibility class.
//!
//! The shipped default maps are approximate digitizations bundled as data
//! files; both are range-normalized so the peak value is exactly 1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AtomicStructure;

#[derive(Debug, Error)]
pub enum VolcanoError {
    #[error("energy {0} eV outside the map domain")]
    OutOfDomain(f64),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("map file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// 1D piecewise-linear lookup from adsorption energy (eV) to a normalized
/// figure of merit in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolcanoMap {
    /// Strictly increasing (energy, value) pairs; max value is exactly 1.
    pub breakpoints: Vec<(f64, f64)>,
    /// Admissible energy range `[e_min, e_max]`.
    pub domain: (f64, f64),
}

impl VolcanoMap {
    pub fn new(breakpoints: Vec<(f64, f64)>, domain: (f64, f64)) -> Result<Self, VolcanoError> {
        if breakpoints.len() < 2 {
            return Err(VolcanoError::InvalidMap("need at least 2 breakpoints".into()));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(VolcanoError::InvalidMap(
                    "breakpoint energies must be strictly increasing".into(),
                ));
            }
        }
        let mut max_v = f64::NEG_INFINITY;
        for &(_, v) in &breakpoints {
            if !(0.0..=1.0).contains(&v) {
                return Err(VolcanoError::InvalidMap(format!(
                    "value {v} outside [0, 1]"
                )));
            }
            max_v = max_v.max(v);
        }
        if max_v != 1.0 {
            return Err(VolcanoError::InvalidMap(
                "map must be range-normalized with peak value exactly 1".into(),
            ));
        }
        if domain.0 >= domain.1 {
            return Err(VolcanoError::InvalidMap("empty domain".into()));
        }
        if domain.0 < breakpoints[0].0 || domain.1 > breakpoints[breakpoints.len() - 1].0 {
            return Err(VolcanoError::InvalidMap(
                "domain extends beyond the breakpoint span".into(),
            ));
        }
        Ok(Self { breakpoints, domain })
    }

    pub fn load(path: &Path) -> Result<Self, VolcanoError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, VolcanoError> {
        #[derive(Deserialize)]
        struct MapFile {
            domain: (f64, f64),
            breakpoints: Vec<(f64, f64)>,
        }
        let raw: MapFile = serde_json::from_str(text)?;
        Self::new(raw.breakpoints, raw.domain)
    }

    /// Shipped default activity map, keyed on the CO adsorption energy.
    pub fn default_activity() -> Self {
        Self::from_json(include_str!("../data/volcano_activity.json"))
            .expect("bundled activity map is valid")
    }

    /// Shipped default selectivity map, keyed on the H adsorption energy.
    pub fn default_selectivity() -> Self {
        Self::from_json(include_str!("../data/volcano_selectivity.json"))
            .expect("bundled selectivity map is valid")
    }

    pub fn contains(&self, e: f64) -> bool {
        (self.domain.0..=self.domain.1).contains(&e)
    }

    /// Linear interpolation between the bracketing breakpoints; exact
    /// breakpoint energies return their stored value.
    pub fn evaluate(&self, e: f64) -> Result<f64, VolcanoError> {
        if !self.contains(e) {
            return Err(VolcanoError::OutOfDomain(e));
        }
        let idx = self
            .breakpoints
            .partition_point(|&(be, _)| be < e)
            .min(self.breakpoints.len() - 1);
        let (e1, v1) = self.breakpoints[idx];
        if e1 == e {
            return Ok(v1);
        }
        let (e0, v0) = self.breakpoints[idx - 1];
        let t = (e - e0) / (e1 - e0);
        Ok(v0 + t * (v1 - v0))
    }
}

/// Thresholds separating high/low selectivity and activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    /// Feasibility threshold on selectivity.
    pub selectivity_threshold: f64,
    /// "High activity" threshold used by the screening metrics.
    pub activity_threshold: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            selectivity_threshold: 0.9,
            activity_threshold: 0.85,
        }
    }
}

/// Activity/selectivity labels for one structure: activity from the CO
/// energy, selectivity from the H energy, feasible iff selectivity meets
/// the threshold.
pub fn label(
    s: &AtomicStructure,
    act_map: &VolcanoMap,
    sel_map: &VolcanoMap,
    rule: &LabelRule,
) -> Result<crate::data::Labels, VolcanoError> {
    let activity = act_map.evaluate(s.e_co)?;
    let selectivity = sel_map.evaluate(s.e_h)?;
    Ok(crate::data::Labels {
        activity,
        selectivity,
        feasible: selectivity >= rule.selectivity_threshold,
    })
}
