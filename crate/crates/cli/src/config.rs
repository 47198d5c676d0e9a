//! Run configuration: a TOML document with one table per subcommand.

use std::path::Path;

use ifs_response::ifs::{Ifs, ParamDirection};
use ifs_response::response::{FdScheme, TestFunction, DEFAULT_GATE_Z};
use ifs_response::sampler::{McPlan, DEFAULT_TRUNCATION};
use ifs_response::witness::RegimeKind;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    pub ifs: IfsSpec,
    #[serde(default)]
    pub moments: Option<MomentsSection>,
    #[serde(default)]
    pub response: Option<ResponseSection>,
    #[serde(default)]
    pub tail: Option<TailSection>,
    #[serde(default)]
    pub nondiff: Option<NondiffSection>,
    #[serde(default)]
    pub sample: Option<SampleSection>,
}

fn default_replicas() -> u64 {
    100_000
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfsSpec {
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub translations: Option<Vec<f64>>,
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub max_order: u32,
    /// Orders also estimated by Monte Carlo.
    #[serde(default)]
    pub mc_orders: Vec<u32>,
}

/// Test functions that can be written in a config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    SmoothBump { center: f64, inner_radius: f64, outer_radius: f64 },
    PowerMoment { t: f64 },
    /// `knee` defaults to ten times the stationary mean.
    CappedPolynomial { r: u32, knee: Option<f64> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSection {
    pub phi: PhiSpec,
    pub orders: Vec<usize>,
    #[serde(default = "default_direction")]
    pub direction: String,
    pub eps: f64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_z")]
    pub z: f64,
    /// Truncation of the finite-difference paths; scaled with `eps` if absent.
    #[serde(default)]
    pub fd_truncation: Option<usize>,
}

fn default_direction() -> String {
    "ratio:1".into()
}

fn default_scheme() -> String {
    "central-2point".into()
}

fn default_z() -> f64 {
    DEFAULT_GATE_Z
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationChoice {
    Cramer,
    ExactPrefix,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NondiffSection {
    pub n_min: usize,
    pub n_max: usize,
    /// `A` or `B`; detected when absent (A wins when both hold).
    #[serde(default)]
    pub regime: Option<String>,
    #[serde(default = "default_deviation")]
    pub deviation: DeviationChoice,
    /// Replicas and truncation for the median scale `r`.
    #[serde(default)]
    pub median_replicas: Option<u64>,
    #[serde(default)]
    pub median_truncation: Option<usize>,
}

fn default_deviation() -> DeviationChoice {
    DeviationChoice::Cramer
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub count: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn build_ifs(&self) -> Result<Ifs, CliError> {
        let n = self.ifs.ratios.len();
        let translations = self.ifs.translations.clone().unwrap_or_else(|| vec![1.0; n]);
        let probs = self.ifs.probs.clone().unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
        Ifs::from_parts(&self.ifs.ratios, &translations, &probs).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn plan(&self, threads: usize) -> McPlan {
        McPlan::new(self.truncation, self.replicas, self.seed).with_threads(threads)
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section.as_ref().ok_or_else(|| CliError::Validation(format!("config has no [{name}] table")))
    }
}

impl ResponseSection {
    pub fn direction(&self) -> Result<ParamDirection, CliError> {
        self.direction.parse().map_err(CliError::Validation)
    }

    pub fn scheme(&self) -> Result<FdScheme, CliError> {
        self.scheme.parse().map_err(CliError::Validation)
    }

    pub fn test_function(&self, ifs: &Ifs) -> Result<TestFunction, CliError> {
        let built = match self.phi {
            PhiSpec::SmoothBump { center, inner_radius, outer_radius } => {
                TestFunction::smooth_bump(center, inner_radius, outer_radius)
            }
            PhiSpec::PowerMoment { t } => TestFunction::power_moment(t),
            PhiSpec::CappedPolynomial { r, knee: Some(knee) } => TestFunction::capped_polynomial(r, knee),
            PhiSpec::CappedPolynomial { r, knee: None } => TestFunction::capped_polynomial_for(ifs, r),
        };
        built.map_err(|e| CliError::Validation(e.to_string()))
    }
}

impl NondiffSection {
    pub fn regime(&self) -> Result<Option<RegimeKind>, CliError> {
        match self.regime.as_deref() {
            None => Ok(None),
            Some("A") | Some("a") => Ok(Some(RegimeKind::A)),
            Some("B") | Some("b") => Ok(Some(RegimeKind::B)),
            Some(other) => Err(CliError::Validation(format!("regime must be A or B, got `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = RunConfig::parse("seed = 3\n[ifs]\nratios = [0.5, 1.2]\n").unwrap();
        assert_eq!(cfg.replicas, 100_000);
        let ifs = cfg.build_ifs().unwrap();
        assert_eq!(ifs.probs(), &[0.5, 0.5]);
        assert!(ifs.has_unit_translations());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("seed = 3\ncolour = 1\n[ifs]\nratios = [0.5, 1.2]\n").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        let err = RunConfig::parse("seed = 3\n[ifs]\nratios = [0.5, 1.2]\nratio = 2\n").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn response_table() {
        let cfg = RunConfig::parse(
            "seed = 1\n[ifs]\nratios = [0.5, 1.1]\n[response]\nphi = { kind = \"power_moment\", t = 2.0 }\norders = [1]\neps = 1e-4\n",
        )
        .unwrap();
        let r = cfg.response.unwrap();
        assert_eq!(r.direction().unwrap(), ParamDirection::Ratio(0));
        assert_eq!(r.scheme().unwrap(), FdScheme::Central2);
    }
}
