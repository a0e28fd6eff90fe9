//! Run configuration file: `[model]`, `[coefficients]`, `[experiment]` and
//! `[ode]` sections in TOML.

use std::collections::BTreeMap;
use std::path::Path;

use marcus_wz::coefficients::from_registry;
use marcus_wz::experiments::{Ball, ExperimentConfig, ReferenceKind};
use marcus_wz::{Error, JumpDistribution, LevyModel, OdeConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub ode: OdeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Jump intensity `lambda`.
    #[serde(default)]
    pub intensity: f64,
    pub jump_law: JumpLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    /// Brownian motion only.
    None { dim: usize },
    SymmetricUnit,
    Atoms {
        atoms: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
    UniformBox { dim: usize, half_width: f64 },
    UniformAnnulus { dim: usize, inner: f64, outer: f64 },
    TwoSidedExponential {
        dim: usize,
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceName {
    None,
    ClosedFormLinear,
    EventDriven,
    SelfRefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub horizon: f64,
    /// Steps `h = horizon * 2^-k`.
    pub h_levels: Vec<u32>,
    pub paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice_spacing: Option<f64>,
    pub reference: ReferenceName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<u32>,
    pub rate_epsilon: f64,
    pub moment_margin: f64,
    pub moment_order: f64,
    pub seed: u64,
    pub exclude_floor: f64,
    pub continuous_sup: bool,
    /// Also write per-path errors.
    pub trace: bool,
    /// Path used by `simulate`.
    pub path_index: u64,
    /// Sample count of the moment lemma check.
    pub lemma_paths: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            h_levels: (4..=9).collect(),
            paths: 1000,
            x0: None,
            ball_radius: None,
            lattice_spacing: None,
            reference: ReferenceName::None,
            reference_level: None,
            rate_epsilon: 0.1,
            moment_margin: 0.1,
            moment_order: 1.0,
            seed: 0,
            exclude_floor: marcus_wz::experiments::DEFAULT_EXCLUDE_FLOOR,
            continuous_sup: false,
            trace: false,
            path_index: 0,
            lemma_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSection {
    pub n_min: usize,
    pub rho: f64,
    pub richardson: bool,
    pub event_max_step: f64,
}

impl Default for OdeSection {
    fn default() -> Self {
        let ode = OdeConfig::default();
        Self {
            n_min: ode.n_min,
            rho: ode.rho,
            richardson: ode.richardson,
            event_max_step: 1.0 / 256.0,
        }
    }
}

/// A parsed configuration together with the core experiment it describes.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    /// False when the config asks for no reference.
    pub has_reference: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .map(|s| locate(text, s.start))
                .unwrap_or_else(|| "config".into());
            Error::config(field, message)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn model(&self) -> Result<LevyModel, Error> {
        let law_err = |e: Error| Error::config("model.jump_law", e.to_string());
        let m = &self.model;
        let law = match &m.jump_law {
            JumpLaw::None { dim } => {
                if m.intensity != 0.0 {
                    return Err(Error::config("model.intensity", "must be 0 without a jump law"));
                }
                if *dim == 0 {
                    return Err(Error::config("model.jump_law.dim", "must be positive"));
                }
                return Ok(LevyModel::brownian_only(*dim));
            }
            JumpLaw::SymmetricUnit => JumpDistribution::symmetric_unit(),
            JumpLaw::Atoms {
                atoms,
                probabilities,
            } => JumpDistribution::atoms(atoms.clone(), probabilities.clone()).map_err(law_err)?,
            JumpLaw::UniformBox { dim, half_width } => {
                JumpDistribution::uniform_box(*dim, *half_width).map_err(law_err)?
            }
            JumpLaw::UniformAnnulus { dim, inner, outer } => {
                JumpDistribution::uniform_annulus(*dim, *inner, *outer).map_err(law_err)?
            }
            JumpLaw::TwoSidedExponential { dim, rate, radius } => {
                JumpDistribution::two_sided_exponential(*dim, *rate, *radius).map_err(law_err)?
            }
        };
        LevyModel::new(m.intensity, law).map_err(|e| Error::config("model.intensity", e.to_string()))
    }

    /// Builds and validates the core experiment.
    pub fn resolve(&self) -> Result<Resolved, Error> {
        let model = self.model()?;
        let coefficients = from_registry(&self.coefficients.name, &self.coefficients.params)?;
        let e = &self.experiment;
        let x0 = e.x0.clone().unwrap_or_else(|| vec![0.0; coefficients.dim()]);
        let reference = match e.reference {
            ReferenceName::None | ReferenceName::EventDriven => ReferenceKind::EventDriven,
            ReferenceName::ClosedFormLinear => {
                if self.coefficients.name != "scalar_linear" {
                    return Err(Error::config(
                        "experiment.reference",
                        "closed_form_linear needs coefficients.name = \"scalar_linear\"",
                    ));
                }
                let p = |k: &str| self.coefficients.params.get(k).copied().unwrap_or(0.0);
                ReferenceKind::ClosedFormLinear {
                    alpha: p("alpha"),
                    beta: p("beta"),
                    gamma: p("gamma"),
                }
            }
            ReferenceName::SelfRefined => ReferenceKind::SelfRefined {
                level: e.reference_level.ok_or_else(|| {
                    Error::config("experiment.reference_level", "required by self_refined")
                })?,
            },
        };
        if e.reference != ReferenceName::SelfRefined && e.reference_level.is_some() {
            return Err(Error::config(
                "experiment.reference_level",
                "only used with reference = \"self_refined\"",
            ));
        }
        let ball = match (e.ball_radius, e.lattice_spacing) {
            (Some(radius), Some(spacing)) => Some(Ball { radius, spacing }),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::config("experiment.lattice_spacing", "required with ball_radius"))
            }
            (None, Some(_)) => {
                return Err(Error::config("experiment.ball_radius", "required with lattice_spacing"))
            }
        };
        if !(e.exclude_floor >= 0.0) {
            return Err(Error::config("experiment.exclude_floor", "must be non-negative"));
        }
        if e.lemma_paths < 2 {
            return Err(Error::config("experiment.lemma_paths", "need at least 2 samples"));
        }
        let experiment = ExperimentConfig {
            coefficients,
            model,
            horizon: e.horizon,
            levels: e.h_levels.clone(),
            paths: e.paths,
            x0,
            ball,
            reference,
            rate_epsilon: e.rate_epsilon,
            moment_margin: e.moment_margin,
            moment_order: e.moment_order,
            master_seed: e.seed,
            ode: OdeConfig {
                n_min: self.ode.n_min,
                rho: self.ode.rho,
                richardson: self.ode.richardson,
            },
            event_max_step: self.ode.event_max_step,
            continuous_sup: e.continuous_sup,
            threads: 0,
        };
        let has_reference = e.reference != ReferenceName::None;
        if has_reference {
            experiment.validate()?;
        } else {
            // validate everything but the reference choice
            let mut probe = experiment.clone();
            probe.reference = ReferenceKind::SelfRefined {
                level: probe.levels.iter().copied().max().unwrap_or(0),
            };
            probe.validate()?;
        }
        Ok(Resolved {
            experiment,
            has_reference,
        })
    }
}

/// Dotted path of the innermost table header or key preceding `offset`.
fn locate(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if pos > offset {
            break;
        }
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
    }
    match (section.is_empty(), key.is_empty()) {
        (true, true) => "config".into(),
        (true, false) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
intensity = 5.0
jump_law = { kind = "uniform_box", dim = 1, half_width = 1.0 }

[coefficients]
name = "bounded_smooth"
params = { alpha = 1.0, gamma = 1.0 }

[experiment]
paths = 100
x0 = [0.5]
reference = "event_driven"
"#;

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("not a config error: {other:?}"),
        }
    }

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::parse(BASE).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.experiment.levels, vec![4, 5, 6, 7, 8, 9]);
        assert_eq!(r.experiment.reference, ReferenceKind::EventDriven);
        assert!(r.has_reference);
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad_param = BASE.replace("alpha = 1.0", "alpah = 1.0");
        assert_eq!(
            field_of(RunConfig::parse(&bad_param).unwrap().resolve().unwrap_err()),
            "coefficients.params.alpah"
        );
        let bad_paths = BASE.replace("paths = 100", "paths = 10");
        assert_eq!(
            field_of(RunConfig::parse(&bad_paths).unwrap().resolve().unwrap_err()),
            "experiment.paths"
        );
        let bad_type = BASE.replace("paths = 100", "paths = \"many\"");
        assert_eq!(field_of(RunConfig::parse(&bad_type).unwrap_err()), "experiment.paths");
        let bad_law = BASE.replace("half_width = 1.0", "half_width = -1.0");
        assert_eq!(
            field_of(RunConfig::parse(&bad_law).unwrap().resolve().unwrap_err()),
            "model.jump_law"
        );
        let diffusion = BASE.replace("gamma = 1.0", "gamma = 1.0, beta = 0.5");
        assert_eq!(
            field_of(RunConfig::parse(&diffusion).unwrap().resolve().unwrap_err()),
            "experiment.reference"
        );
        let self_ref = BASE.replace("\"event_driven\"", "\"self_refined\"");
        assert_eq!(
            field_of(RunConfig::parse(&self_ref).unwrap().resolve().unwrap_err()),
            "experiment.reference_level"
        );
    }

    #[test]
    fn closed_form_takes_family_parameters() {
        let text = BASE
            .replace("\"bounded_smooth\"", "\"scalar_linear\"")
            .replace("\"event_driven\"", "\"closed_form_linear\"");
        let r = RunConfig::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(
            r.experiment.reference,
            ReferenceKind::ClosedFormLinear {
                alpha: 1.0,
                beta: 0.0,
                gamma: 1.0
            }
        );
        let wrong = BASE.replace("\"event_driven\"", "\"closed_form_linear\"");
        assert_eq!(
            field_of(RunConfig::parse(&wrong).unwrap().resolve().unwrap_err()),
            "experiment.reference"
        );
    }
}
