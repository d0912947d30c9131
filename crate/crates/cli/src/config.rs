//! Sweep configuration files (TOML) and the value-list syntax shared with the
//! command line.

use std::path::{Path, PathBuf};

use pbce::array_model::{noise_var_from_snr_db, GainLaw, MixtureComponent, PriorSpec, Scenario};
use pbce::sim::{EstimatorTag, HarnessOptions, SweepAxis, SweepSpec};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub prior: PriorSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub harness: HarnessOptions,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_rx: usize,
    #[serde(default = "one")]
    pub num_paths: usize,
    #[serde(default = "one")]
    pub coherence_len: usize,
    /// SNR of the base scenario; ignored on the SNR axis.
    #[serde(default)]
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_f64")]
    pub min_separation_beamwidths: f64,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(default = "default_gain_law")]
    pub gain_law: GainLaw,
    /// Mixture regions; the four-region default when omitted.
    pub components: Option<Vec<MixtureComponent>>,
}

fn default_gain_law() -> GainLaw {
    GainLaw::UniformNormalized
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection { gain_law: default_gain_law(), components: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Text(String),
}

impl Values {
    pub fn expand(&self) -> Result<Vec<f64>, String> {
        match self {
            Values::List(v) => Ok(v.clone()),
            Values::Text(s) => parse_values(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Values,
    pub estimators: Vec<EstimatorTag>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub perfect_gains: bool,
    pub mismatch_eps: Option<f64>,
    #[serde(default)]
    pub stream: u64,
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Optional JSON summary with records and slope fits.
    pub summary: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
    pub estimators: Option<Vec<EstimatorTag>>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.trials {
            self.sweep.trials = t;
        }
        if let Some(s) = o.seed {
            self.scenario.seed = s;
        }
        if let Some(a) = o.axis {
            self.sweep.axis = a;
        }
        if let Some(v) = &o.values {
            self.sweep.values = Values::List(v.clone());
        }
        if let Some(e) = &o.estimators {
            self.sweep.estimators = e.clone();
        }
        if let Some(p) = &o.output {
            self.output.path = Some(p.clone());
        }
        if let Some(w) = o.workers {
            self.output.workers = Some(w);
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, String> {
        let sc = &self.scenario;
        let prior = PriorSpec {
            components: self.prior.components.clone().unwrap_or_else(|| PriorSpec::four_region().components),
            gain_law: self.prior.gain_law,
        };
        let base = Scenario {
            n_rx: sc.n_rx,
            num_paths: sc.num_paths,
            coherence_len: sc.coherence_len,
            noise_var: noise_var_from_snr_db(sc.snr_db),
            prior,
            seed: sc.seed,
            min_separation_beamwidths: sc.min_separation_beamwidths,
        };
        base.validate().map_err(|e| e.to_string())?;
        let mut spec = SweepSpec::new(
            self.sweep.axis,
            self.sweep.values.expand()?,
            base,
            self.sweep.estimators.clone(),
            self.sweep.trials,
        );
        spec.perfect_gains = self.sweep.perfect_gains;
        spec.mismatch_eps = self.sweep.mismatch_eps;
        spec.stream = self.sweep.stream;
        spec.options = self.harness.clone();
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// Parses `start:step:stop` (stop included when hit up to rounding) or a
/// comma-separated list.
pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", s.trim()));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => text.split(',').map(num).collect(),
        3 => {
            let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step != 0.0 && step.is_finite() && start.is_finite() && stop.is_finite()) {
                return Err(format!("range '{text}' needs finite bounds and a non-zero step"));
            }
            let span = (stop - start) / step;
            if span < -1e-9 {
                return Err(format!("range '{text}' never reaches its end"));
            }
            let count = (span + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return Err(format!("range '{text}' has too many points"));
            }
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(format!("cannot parse '{text}'; use start:step:stop or a comma-separated list")),
    }
}

pub fn parse_estimators(text: &str) -> Result<Vec<EstimatorTag>, String> {
    text.split(',').map(|s| s.trim().parse::<EstimatorTag>().map_err(|e| e.to_string())).collect()
}
