//! Experiment configuration: TOML with nested tables, every field defaulted.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use cgo_biharmonic::geometry::{Domain, Shape, SigmaSpec};
use cgo_biharmonic::recovery::RecoveryParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub out: String,
    pub domain: DomainConfig,
    pub sigma: SigmaConfig,
    pub coefficients: CoefficientConfig,
    pub ladder: LadderConfig,
    pub special: SpecialConfig,
    pub recovery: RecoveryConfig,
    pub density: DensityConfig,
    pub sweep: SweepConfig,
    pub linearize: LinearizeConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// disk, stadium or dented.
    pub shape: String,
    pub center: [f64; 2],
    pub radius: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub dent_angle: f64,
    pub dent_half_width: f64,
    pub dent_depth: f64,
    /// Lattice nodes per unit length.
    pub resolution: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaConfig {
    /// Whole boundary accessible (Γ empty).
    pub full: bool,
    pub toward: [f64; 2],
    pub half_angle: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientConfig {
    /// zero, a2, a1, a0 or mixed.
    pub preset: String,
    /// CSV with header a0,a1_1,a1_2,a2 and one row per interior node; overrides the preset.
    pub file: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    /// h values for remainder decay sweeps.
    pub special: Vec<f64>,
    /// h values for the transform inversion table.
    pub transform: Vec<f64>,
    /// τ = h/|ξ| values for moment isolation.
    pub tau: Vec<f64>,
    /// h values for strip reconstruction.
    pub strip: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecialCase {
    pub direction: [f64; 2],
    pub scale: f64,
    /// one, x1, x2 or normsq.
    pub tag: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SpecialConfig {
    pub cases: Vec<SpecialCase>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub c: f64,
    /// Defaults to min(0.1, c/16).
    pub eps: Option<f64>,
    /// Defaults to 1.1(c + 4ε)/ε².
    pub a: Option<f64>,
    pub cutoff_width: f64,
    pub window_lo: [f64; 2],
    pub window_hi: [f64; 2],
    /// Minimum distance of window nodes from Γ.
    pub band: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub outer_radius: f64,
    pub dent_half_width: f64,
    pub dent_depth: f64,
    pub sigma_half_angle: f64,
    pub c: f64,
    pub cutoff_width: f64,
    pub layers: usize,
    pub counts: Vec<usize>,
    /// Isotropic scale and h of the special-solution target.
    pub target_scale: f64,
    pub target_h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub points: usize,
    pub h: Vec<f64>,
    pub a: f64,
    pub eps: f64,
    /// a² support offset for the contamination sweep.
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeConfig {
    pub samples: usize,
    pub steps: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: 0,
            out: "out".into(),
            domain: DomainConfig::default(),
            sigma: SigmaConfig::default(),
            coefficients: CoefficientConfig::default(),
            ladder: LadderConfig::default(),
            special: SpecialConfig::default(),
            recovery: RecoveryConfig::default(),
            density: DensityConfig::default(),
            sweep: SweepConfig::default(),
            linearize: LinearizeConfig::default(),
        }
    }
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            shape: "disk".into(),
            center: [-1.0, 0.0],
            radius: 1.0,
            half_length: 0.9,
            half_width: 0.6,
            dent_angle: 0.0,
            dent_half_width: 0.9,
            dent_depth: 0.2,
            resolution: 128,
        }
    }
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self { full: false, toward: [0.0, 0.0], half_angle: 2.0 * PI / 3.0 }
    }
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self { preset: "mixed".into(), file: None }
    }
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            special: cgo_biharmonic::special_solutions::DEFAULT_LADDER.to_vec(),
            transform: vec![0.02, 0.01, 0.005, 0.0025],
            tau: vec![0.3, 0.22, 0.16, 0.12, 0.09, 0.065],
            strip: vec![0.008, 0.004],
        }
    }
}

impl Default for SpecialConfig {
    fn default() -> Self {
        let case = |d: [f64; 2], s: f64, t: &str| SpecialCase { direction: d, scale: s, tag: t.into() };
        Self {
            cases: vec![
                case([1.0, 0.0], 1.0, "one"),
                case([1.0, 0.0], 1.0, "normsq"),
                case([1.0, 0.3], 1.0, "x1"),
                case([1.0, -0.3], 1.0, "x2"),
                case([1.0, 0.0], 0.5, "one"),
                case([1.0, 0.0], 1.4, "one"),
            ],
        }
    }
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { c: 0.5, eps: None, a: None, cutoff_width: 0.2, window_lo: [-0.45, -0.3], window_hi: [-0.05, 0.3], band: 0.2 }
    }
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            outer_radius: 0.9,
            dent_half_width: 0.9,
            dent_depth: 0.2,
            sigma_half_angle: 0.8,
            c: 0.15,
            cutoff_width: 0.1,
            layers: 2,
            counts: vec![25, 50, 100, 200],
            target_scale: 1.0,
            target_h: 0.25,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { points: 50, h: vec![0.05, 0.1, 0.2, 0.4], a: 2.0, eps: 0.1, delta: 0.15 }
    }
}

impl Default for LinearizeConfig {
    fn default() -> Self {
        Self { samples: 5, steps: vec![0.04, 0.02] }
    }
}

/// Problems found while loading or validating a configuration.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

impl ExperimentConfig {
    /// Parses a config file without validating it. A run manifest is accepted too: its
    /// `[config]` table is used.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))?;
        let table = match (value.get("config"), value.get("run")) {
            (Some(toml::Value::Table(c)), Some(_)) => c.clone(),
            _ => value,
        };
        table.try_into().map_err(|e: toml::de::Error| ConfigError(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = Vec::new();
        let d = &self.domain;
        if !["disk", "stadium", "dented"].contains(&d.shape.as_str()) {
            e.push(format!("domain.shape '{}' is not one of disk, stadium, dented", d.shape));
        }
        if !(16..=512).contains(&d.resolution) {
            e.push(format!("domain.resolution {} outside 16..=512", d.resolution));
        }
        if let Err(err) = self.shape().validate() {
            e.push(format!("domain: {err}"));
        }
        if !self.sigma.full && !(self.sigma.half_angle > 0.0) {
            e.push("sigma.half_angle must be positive".into());
        }
        if !["zero", "a2", "a1", "a0", "mixed"].contains(&self.coefficients.preset.as_str()) {
            e.push(format!("coefficients.preset '{}' is not one of zero, a2, a1, a0, mixed", self.coefficients.preset));
        }
        let l = &self.ladder;
        for (name, v, min) in [("ladder.special", &l.special, 4), ("ladder.transform", &l.transform, 3), ("ladder.tau", &l.tau, 1), ("ladder.strip", &l.strip, 1)] {
            if v.len() < min {
                e.push(format!("{name} needs at least {min} values"));
            }
            if v.iter().any(|h| !(*h > 0.0)) {
                e.push(format!("{name} values must be positive"));
            }
            if v.windows(2).any(|w| w[1] >= w[0]) {
                e.push(format!("{name} must be strictly decreasing"));
            }
        }
        for (k, c) in self.special.cases.iter().enumerate() {
            if tag(&c.tag).is_none() {
                e.push(format!("special.cases[{k}].tag '{}' is not one of one, x1, x2, normsq", c.tag));
            }
            if !(c.scale > 0.0) || c.direction == [0.0, 0.0] {
                e.push(format!("special.cases[{k}] needs a positive scale and a nonzero direction"));
            }
        }
        if let Err(err) = self.recovery_params() {
            e.push(format!("recovery: {err}"));
        }
        if !(self.recovery.cutoff_width > 0.0) {
            e.push("recovery.cutoff_width must be positive".into());
        }
        let n = &self.density;
        if !(1..=3).contains(&n.layers) {
            e.push("density.layers must be 1, 2 or 3".into());
        }
        if n.counts.is_empty() || n.counts.contains(&0) {
            e.push("density.counts must be nonempty and positive".into());
        }
        if self.sweep.points == 0 || self.sweep.h.is_empty() {
            e.push("sweep needs points > 0 and a nonempty h list".into());
        }
        if self.linearize.samples == 0 || self.linearize.steps.len() != 2 {
            e.push("linearize needs samples > 0 and exactly two steps".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(e))
        }
    }

    pub fn shape(&self) -> Shape {
        let d = &self.domain;
        match d.shape.as_str() {
            "stadium" => Shape::Stadium { center: d.center, half_length: d.half_length, half_width: d.half_width },
            "dented" => Shape::DentedDisk {
                center: d.center,
                radius: d.radius,
                dent_angle: d.dent_angle,
                dent_half_width: d.dent_half_width,
                dent_depth: d.dent_depth,
            },
            _ => Shape::disk(d.center, d.radius),
        }
    }

    pub fn sigma_spec(&self) -> SigmaSpec {
        if self.sigma.full {
            SigmaSpec::Full
        } else {
            SigmaSpec::arc(self.sigma.toward, self.sigma.half_angle)
        }
    }

    pub fn build_domain(&self, resolution: usize) -> cgo_biharmonic::Result<Arc<Domain>> {
        Ok(Arc::new(Domain::build(self.shape(), resolution, self.sigma_spec())?))
    }

    pub fn recovery_params(&self) -> cgo_biharmonic::Result<RecoveryParams> {
        let mut p = RecoveryParams::defaults(self.recovery.c)?;
        if let Some(eps) = self.recovery.eps {
            p.eps = eps;
            p.a = 1.1 * (p.c + 4.0 * eps) / (eps * eps);
        }
        if let Some(a) = self.recovery.a {
            p.a = a;
        }
        p.validate()?;
        Ok(p)
    }
}

pub fn tag(name: &str) -> Option<cgo_biharmonic::special_solutions::AmplitudeTag> {
    use cgo_biharmonic::special_solutions::AmplitudeTag;
    match name {
        "one" => Some(AmplitudeTag::One),
        "x1" => Some(AmplitudeTag::Coord(0)),
        "x2" => Some(AmplitudeTag::Coord(1)),
        "normsq" => Some(AmplitudeTag::NormSq),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml("seed = 9\n[domain]\nresolution = 64\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.domain.resolution, 64);
        assert_eq!(c.recovery, RecoveryConfig::default());
    }

    #[test]
    fn manifest_config_table_round_trips() {
        let mut c = ExperimentConfig::default();
        c.coefficients.preset = "a0".into();
        c.recovery.eps = Some(0.05);
        let mut doc = toml::Table::new();
        doc.insert("run".into(), toml::Table::new().into());
        doc.insert("config".into(), toml::Table::try_from(&c).unwrap().into());
        assert_eq!(ExperimentConfig::from_toml(&toml::to_string(&doc).unwrap()).unwrap(), c);
    }

    #[test]
    fn recovery_overrides() {
        let mut c = ExperimentConfig::default();
        let p = c.recovery_params().unwrap();
        assert_eq!(p.eps, 1.0 / 32.0);
        assert!((p.a - 704.0).abs() < 1e-9);
        c.recovery.eps = Some(0.05);
        let p = c.recovery_params().unwrap();
        assert!((p.a - 1.1 * (0.5 + 0.2) / 0.0025).abs() < 1e-9);
        c.recovery.a = Some(10.0);
        assert_eq!(c.recovery_params().unwrap().a, 10.0);
    }

    #[test]
    fn bad_tag_and_ladder_rejected() {
        let mut c = ExperimentConfig::default();
        c.special.cases[0].tag = "x3".into();
        c.ladder.tau = vec![0.1, 0.2];
        let e = c.validate().unwrap_err().0;
        assert!(e.iter().any(|m| m.contains("x3")) && e.iter().any(|m| m.contains("ladder.tau")));
    }
}
