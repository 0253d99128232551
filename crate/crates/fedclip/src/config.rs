//! Declarative run configuration: a versioned TOML schema with defaults,
//! cross-field validation that names the offending key, and a serializer
//! used to echo the effective config into run summaries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clipnorm::{ClipGradVariant, CLIP_FLOOR};
use crate::data::PartitionSpec;
use crate::error::{Error, Result};
use crate::federation::{ClipCadence, LrSchedule, TrainingMode};
use crate::model::ModelKind;

pub const SCHEMA_VERSION: u32 = 1;

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Validation { key: key.into(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default)]
    pub moo: MooConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxConfig>,
    pub partition: PartitionSpec,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            idx: None,
            partition: PartitionSpec::Iid,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub n: usize,
    pub separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { num_classes: 2, input_dim: 8, n: 1000, separation: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Keep only these labels, remapped to 0..len in list order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,
    /// Cap the example count (taken from the front) before splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::LogisticRegression, hidden_dim: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub num_clients: usize,
    pub selection_prob: f64,
    pub rounds: u64,
    pub local_batches: u32,
    pub lr: LrSchedule,
    pub mode: TrainingMode,
    pub reset_clip_each_round: bool,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            num_clients: 10,
            selection_prob: 1.0,
            rounds: 20,
            local_batches: 1,
            lr: LrSchedule::Constant { base: 0.5 },
            mode: TrainingMode::Adaptive,
            reset_clip_each_round: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    /// Noise multiplier. Exactly one of sigma / target_epsilon may be set;
    /// with neither, sigma defaults to 1.0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_epsilon: Option<f64>,
    pub delta: f64,
    pub expected_batch: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig { sigma: None, target_epsilon: None, delta: 1e-5, expected_batch: 32.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MooConfig {
    pub kappa: f64,
    #[serde(rename = "eta_C")]
    pub eta_c: f64,
    pub probe_h: f64,
    pub variant: ClipGradVariant,
    #[serde(rename = "initial_C")]
    pub initial_c: f64,
    pub cadence: ClipCadence,
}

impl Default for MooConfig {
    fn default() -> Self {
        MooConfig {
            kappa: 0.05,
            eta_c: 0.1,
            probe_h: 0.1,
            variant: ClipGradVariant::Scaled,
            initial_c: 1.0,
            cadence: ClipCadence::PerBatch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, formats: vec!["csv".into(), "json".into()] }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ParseError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// The effective config as TOML, suitable for reloading byte-identically.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(
                "schema_version",
                format!("this build reads version {SCHEMA_VERSION}, file says {}", self.schema_version),
            ));
        }

        match self.data.source {
            DataSource::Synthetic => {
                let s = &self.data.synthetic;
                if s.num_classes < 2 {
                    return Err(bad("data.synthetic.num_classes", "need at least 2 classes"));
                }
                if s.input_dim == 0 {
                    return Err(bad("data.synthetic.input_dim", "need at least 1 feature"));
                }
                if s.n < s.num_classes {
                    return Err(bad("data.synthetic.n", "fewer examples than classes"));
                }
                if !(s.separation >= 0.0) || !s.separation.is_finite() {
                    return Err(bad("data.synthetic.separation", "must be a finite nonnegative number"));
                }
            }
            DataSource::Idx => {
                let Some(idx) = &self.data.idx else {
                    return Err(bad("data.idx", "source = \"idx\" needs an [data.idx] table with images and labels paths"));
                };
                if let Some(classes) = &idx.classes {
                    if classes.len() < 2 {
                        return Err(bad("data.idx.classes", "a restriction needs at least 2 classes"));
                    }
                }
                if idx.limit == Some(0) {
                    return Err(bad("data.idx.limit", "limit 0 leaves no data"));
                }
            }
        }
        if let PartitionSpec::Dirichlet { beta } = self.data.partition {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(bad("data.partition.beta", "must be a finite positive number"));
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(bad("data.test_fraction", "must lie strictly between 0 and 1"));
        }

        match self.model.kind {
            ModelKind::LogisticRegression => {
                if self.model.hidden_dim != 0 {
                    return Err(bad("model.hidden_dim", "logistic-regression has no hidden layer"));
                }
            }
            ModelKind::Mlp1Hidden => {
                if self.model.hidden_dim == 0 {
                    return Err(bad("model.hidden_dim", "mlp-1hidden needs a positive hidden width"));
                }
            }
        }

        let f = &self.federation;
        if f.num_clients == 0 {
            return Err(bad("federation.num_clients", "need at least one client"));
        }
        if !(f.selection_prob > 0.0 && f.selection_prob <= 1.0) {
            return Err(bad("federation.selection_prob", "must lie in (0, 1]"));
        }
        if f.rounds == 0 {
            return Err(bad("federation.rounds", "need at least one round"));
        }
        if f.lr.validate().is_err() {
            return Err(bad("federation.lr.base", "must be a finite positive number"));
        }

        let dp = &self.dp;
        if dp.sigma.is_some() && dp.target_epsilon.is_some() {
            return Err(bad("dp", "set exactly one of sigma and target_epsilon, not both"));
        }
        if let Some(sigma) = dp.sigma {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(bad("dp.sigma", "must be a finite positive number"));
            }
        }
        if let Some(eps) = dp.target_epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(bad("dp.target_epsilon", "must be a finite positive number"));
            }
        }
        if !(dp.delta > 0.0 && dp.delta < 1.0) {
            return Err(bad("dp.delta", "must lie strictly between 0 and 1"));
        }
        if !(dp.expected_batch > 0.0) || !dp.expected_batch.is_finite() {
            return Err(bad("dp.expected_batch", "must be a finite positive number"));
        }

        let moo = &self.moo;
        if moo.initial_c < CLIP_FLOOR || !moo.initial_c.is_finite() {
            return Err(bad("moo.initial_C", format!("must be at least the floor {CLIP_FLOOR}")));
        }
        if !(moo.kappa >= 0.0) || !moo.kappa.is_finite() {
            return Err(bad("moo.kappa", "must be a finite nonnegative number"));
        }
        if !(moo.eta_c > 0.0) || !moo.eta_c.is_finite() {
            return Err(bad("moo.eta_C", "must be a finite positive number"));
        }
        if !(moo.probe_h > 0.0 && moo.probe_h < 1.0) {
            return Err(bad("moo.probe_h", "must lie strictly between 0 and 1"));
        }

        for format in &self.output.formats {
            if format != "csv" && format != "json" {
                return Err(bad("output.formats", format!("unknown format {format:?}")));
            }
        }
        Ok(())
    }

    /// The noise multiplier to run with: explicit, defaulted, or calibrated
    /// against the target budget. `planned_steps` is the worst-case number
    /// of noisy updates the run can consume; `sampling_rate` the ledger's q.
    pub fn resolve_sigma(&self, sampling_rate: f64, planned_steps: u64) -> Result<f64> {
        if self.federation.mode == TrainingMode::NonPrivate {
            return Ok(0.0);
        }
        if let Some(sigma) = self.dp.sigma {
            return Ok(sigma);
        }
        if let Some(target) = self.dp.target_epsilon {
            return crate::accountant::calibrate_sigma(
                sampling_rate,
                planned_steps,
                target,
                self.dp.delta,
            );
        }
        Ok(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\n";

    #[test]
    fn minimal_config_gets_the_documented_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.data.source, DataSource::Synthetic);
        assert_eq!(cfg.data.synthetic.num_classes, 2);
        assert_eq!(cfg.data.partition, PartitionSpec::Iid);
        assert_eq!(cfg.model.kind, ModelKind::LogisticRegression);
        assert_eq!(cfg.federation.num_clients, 10);
        assert_eq!(cfg.federation.mode, TrainingMode::Adaptive);
        assert_eq!(cfg.dp.delta, 1e-5);
        assert_eq!(cfg.moo.initial_c, 1.0);
        assert_eq!(cfg.moo.cadence, ClipCadence::PerBatch);
        assert_eq!(cfg.output.formats, vec!["csv", "json"]);
    }

    #[test]
    fn missing_schema_version_is_a_parse_error() {
        let err = ExperimentConfig::parse("[data]\nsource = \"synthetic\"\n").unwrap_err();
        assert_eq!(err.class(), "parse-error");
    }

    #[test]
    fn wrong_schema_version_names_the_key() {
        let err = ExperimentConfig::parse("schema_version = 9\n").unwrap_err();
        assert!(err.to_string().starts_with("validation-error(schema_version)"), "{err}");
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let err = ExperimentConfig::parse("schema_version = 1\nbanana = true\n").unwrap_err();
        assert_eq!(err.class(), "parse-error");
        let err =
            ExperimentConfig::parse("schema_version = 1\n[federation]\nnum_client = 3\n").unwrap_err();
        assert_eq!(err.class(), "parse-error");
    }

    #[test]
    fn sigma_and_target_epsilon_are_mutually_exclusive() {
        let text = "schema_version = 1\n[dp]\nsigma = 1.0\ntarget_epsilon = 3.0\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.to_string().starts_with("validation-error(dp)"), "{err}");
        assert_eq!(err.class(), "validation-error");
    }

    #[test]
    fn zero_initial_clip_norm_names_the_key() {
        let text = "schema_version = 1\n[moo]\ninitial_C = 0.0\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.to_string().starts_with("validation-error(moo.initial_C)"), "{err}");
    }

    #[test]
    fn idx_source_requires_paths() {
        let err = ExperimentConfig::parse("schema_version = 1\n[data]\nsource = \"idx\"\n").unwrap_err();
        assert!(err.to_string().starts_with("validation-error(data.idx)"), "{err}");
    }

    #[test]
    fn more_named_key_validations() {
        let cases: &[(&str, &str)] = &[
            ("[federation]\nnum_clients = 0\n", "federation.num_clients"),
            ("[federation]\nselection_prob = 1.5\n", "federation.selection_prob"),
            ("[federation]\nrounds = 0\n", "federation.rounds"),
            ("[federation]\n[federation.lr]\nschedule = \"constant\"\nbase = 0.0\n", "federation.lr.base"),
            ("[dp]\ndelta = 1.0\n", "dp.delta"),
            ("[dp]\nexpected_batch = 0.0\n", "dp.expected_batch"),
            ("[dp]\nsigma = -1.0\n", "dp.sigma"),
            ("[moo]\nkappa = -0.5\n", "moo.kappa"),
            ("[moo]\neta_C = 0.0\n", "moo.eta_C"),
            ("[moo]\nprobe_h = 1.0\n", "moo.probe_h"),
            ("[model]\nkind = \"mlp-1hidden\"\n", "model.hidden_dim"),
            ("[model]\nhidden_dim = 4\n", "model.hidden_dim"),
            ("[data]\nsource = \"synthetic\"\ntest_fraction = 0.0\n", "data.test_fraction"),
            (
                "[data]\nsource = \"synthetic\"\n[data.partition]\nscheme = \"dirichlet\"\nbeta = 0.0\n",
                "data.partition.beta",
            ),
            ("[output]\nformats = [\"yaml\"]\n", "output.formats"),
        ];
        for (body, key) in cases {
            let text = format!("schema_version = 1\n{body}");
            let err = ExperimentConfig::parse(&text).unwrap_err();
            let expected = format!("validation-error({key})");
            assert!(err.to_string().starts_with(&expected), "body {body:?} gave {err}");
        }
    }

    #[test]
    fn echo_round_trips_to_an_equal_config() {
        let text = r#"
schema_version = 1

[data]
source = "synthetic"
test_fraction = 0.25

[data.synthetic]
num_classes = 3
input_dim = 6
n = 600
separation = 5.0

[data.partition]
scheme = "dirichlet"
beta = 0.5

[model]
kind = "mlp-1hidden"
hidden_dim = 8

[federation]
num_clients = 5
selection_prob = 0.8
rounds = 7
local_batches = 2
mode = "fixed-clip"

[federation.lr]
schedule = "inverse-decay"
base = 0.4

[dp]
target_epsilon = 3.61
delta = 1e-5
expected_batch = 16.0

[moo]
kappa = 0.02
eta_C = 0.05
probe_h = 0.2
variant = "direct"
initial_C = 2.0
cadence = "per-round"

[output]
formats = ["csv"]
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.dp.target_epsilon, Some(3.61));
        assert_eq!(cfg.moo.variant, ClipGradVariant::Direct);
        let echoed = cfg.echo();
        let back = ExperimentConfig::parse(&echoed).unwrap();
        assert_eq!(cfg, back);
        let twice = back.echo();
        assert_eq!(echoed, twice, "echo must be a fixed point");
    }

    #[test]
    fn sigma_resolution_routes() {
        let explicit = ExperimentConfig::parse("schema_version = 1\n[dp]\nsigma = 2.5\n").unwrap();
        assert_eq!(explicit.resolve_sigma(0.1, 100).unwrap(), 2.5);

        let defaulted = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(defaulted.resolve_sigma(0.1, 100).unwrap(), 1.0);

        let nonprivate = ExperimentConfig::parse(
            "schema_version = 1\n[federation]\nmode = \"non-private\"\n[dp]\nsigma = 2.5\n",
        )
        .unwrap();
        assert_eq!(nonprivate.resolve_sigma(0.1, 100).unwrap(), 0.0);

        let calibrated = ExperimentConfig::parse(
            "schema_version = 1\n[dp]\ntarget_epsilon = 3.61\n",
        )
        .unwrap();
        let sigma = calibrated.resolve_sigma(0.05, 300).unwrap();
        let mut ledger = crate::accountant::PrivacyLedger::new(0.05, sigma, 1e-5).unwrap();
        ledger.observe(300);
        let eps = ledger.epsilon().unwrap().0;
        assert!(eps <= 3.61 && eps >= 0.99 * 3.61, "calibrated sigma {sigma} gives eps {eps}");
    }
}
