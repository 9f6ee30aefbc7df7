//! Versioned JSON profiles and the pretrained library.
//!
//! A profile is one UTF-8 JSON document holding everything needed to resume
//! a user's automation: the network, the normalization it was trained
//! under, the acquisition settings and the per-setpoint automation state.
//! Loading is strict: unknown keys, wrong shapes and non-finite numbers are
//! all rejected with the path of the offending field.

pub mod library;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionConfig;
use crate::estimator::AutomationState;
use crate::nnet::{Activation, Layer, Network};
use crate::normalize::NormalizationStats;
use crate::schema::{AutomationMode, EnvSchema, SetpointSchema};

pub use library::{archetype_driver, eval_scenario, generate_library, library_path, library_profile, select_pretrained, training_scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{field}: non-finite value")]
    NonFinite { field: String },
    #[error("no library profile for `{user_type}` at {path}")]
    MissingLibraryEntry { user_type: UserType, path: PathBuf },
    #[error("unknown user type `{0}` (expected cold_sensitive, neutral or warm_sensitive)")]
    UnknownUserType(String),
    #[error("library generation failed: {0}")]
    Generation(String),
}

impl ProfileError {
    /// Dotted path of the offending field, when the error is about one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ProfileError::Invalid { field, .. } | ProfileError::NonFinite { field } => Some(field),
            _ => None,
        }
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ProfileError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PretrainedLibrary,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserType {
    ColdSensitive,
    Neutral,
    WarmSensitive,
}

impl UserType {
    pub const ALL: [UserType; 3] = [UserType::ColdSensitive, UserType::Neutral, UserType::WarmSensitive];

    pub fn as_str(self) -> &'static str {
        match self {
            UserType::ColdSensitive => "cold_sensitive",
            UserType::Neutral => "neutral",
            UserType::WarmSensitive => "warm_sensitive",
        }
    }
}

impl fmt::Display for UserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UserType {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UserType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProfileError::UnknownUserType(s.to_string()))
    }
}

/// In-memory profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub profile_id: String,
    /// Simulated seconds, so that generated profiles are reproducible.
    pub created_s: f64,
    pub updated_s: f64,
    pub env_schema: EnvSchema,
    pub setpoint_schema: SetpointSchema,
    pub network: Network,
    pub normalization: NormalizationStats,
    pub acquisition: AcquisitionConfig,
    pub automation: AutomationState,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    /// Row-major: one row per destination unit.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: String,
    version: u64,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    schema_version: u32,
    profile_id: String,
    created_s: f64,
    updated_s: f64,
    env_schema: EnvSchema,
    setpoint_schema: SetpointSchema,
    network: NetworkDoc,
    normalization: NormalizationStats,
    acquisition: AcquisitionConfig,
    automation: AutomationState,
    provenance: Provenance,
}

fn check_finite(field: impl FnOnce() -> String, v: f64) -> Result<(), ProfileError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ProfileError::NonFinite { field: field() })
    }
}

impl Profile {
    /// Check every invariant, naming the first violated field.
    pub fn validate(&self) -> Result<(), ProfileError> {
        self.to_doc().validate().map(|_| ())
    }

    /// Reset to the state of a freshly selected profile: every setpoint
    /// manual with no accumulated passes.
    pub fn reset_automation(&mut self) {
        for s in &mut self.automation.setpoints {
            s.mode = AutomationMode::Manual;
            s.consecutive_passes = 0;
        }
    }

    fn to_doc(&self) -> ProfileDoc {
        let layers = self
            .network
            .layers()
            .iter()
            .map(|l| LayerDoc {
                weights: (0..l.outputs()).map(|r| l.row(r).to_vec()).collect(),
                biases: l.biases().to_vec(),
            })
            .collect();
        ProfileDoc {
            schema_version: SCHEMA_VERSION,
            profile_id: self.profile_id.clone(),
            created_s: self.created_s,
            updated_s: self.updated_s,
            env_schema: self.env_schema.clone(),
            setpoint_schema: self.setpoint_schema.clone(),
            network: NetworkDoc {
                layer_sizes: self.network.layer_sizes(),
                hidden_activation: self.network.hidden_activation(),
                output_activation: "identity".into(),
                version: self.network.version(),
                layers,
            },
            normalization: self.normalization.clone(),
            acquisition: self.acquisition.clone(),
            automation: self.automation.clone(),
            provenance: self.provenance,
        }
    }

    pub fn to_json(&self) -> Result<String, ProfileError> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(&self.to_doc()).map_err(|e| ProfileError::invalid("", e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProfileError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        // Version first, so a future document gets a version error rather
        // than a complaint about fields this build does not know.
        match value.get("schema_version") {
            None => return Err(ProfileError::invalid("schema_version", "missing")),
            Some(v) => match v.as_u64() {
                Some(n) if n == u64::from(SCHEMA_VERSION) => {}
                Some(n) => {
                    return Err(ProfileError::UnsupportedVersion {
                        found: n,
                        supported: SCHEMA_VERSION,
                    })
                }
                None => return Err(ProfileError::invalid("schema_version", "expected a positive integer")),
            },
        }
        let doc: ProfileDoc = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ProfileError::invalid(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        doc.validate()
    }
}

impl ProfileDoc {
    fn validate(self) -> Result<Profile, ProfileError> {
        if self.profile_id.trim().is_empty() {
            return Err(ProfileError::invalid("profile_id", "must not be empty"));
        }
        check_finite(|| "created_s".into(), self.created_s)?;
        check_finite(|| "updated_s".into(), self.updated_s)?;
        if self.updated_s < self.created_s {
            return Err(ProfileError::invalid("updated_s", "earlier than created_s"));
        }

        if self.env_schema.channels.is_empty() {
            return Err(ProfileError::invalid("env_schema.channels", "no channels"));
        }
        for (i, c) in self.env_schema.channels.iter().enumerate() {
            check_finite(|| format!("env_schema.channels[{i}].scale"), c.scale)?;
            if c.scale <= 0.0 {
                return Err(ProfileError::invalid(format!("env_schema.channels[{i}].scale"), "must be positive"));
            }
            if self.env_schema.channels[..i].iter().any(|o| o.name == c.name) {
                return Err(ProfileError::invalid(format!("env_schema.channels[{i}].name"), "duplicate channel name"));
            }
        }
        if self.setpoint_schema.setpoints.is_empty() {
            return Err(ProfileError::invalid("setpoint_schema.setpoints", "no setpoints"));
        }
        for (i, c) in self.setpoint_schema.setpoints.iter().enumerate() {
            check_finite(|| format!("setpoint_schema.setpoints[{i}].min"), c.min)?;
            check_finite(|| format!("setpoint_schema.setpoints[{i}].max"), c.max)?;
            if c.min >= c.max {
                return Err(ProfileError::invalid(format!("setpoint_schema.setpoints[{i}]"), "min must be below max"));
            }
        }
        let env_dim = self.env_schema.len();
        let sp_dim = self.setpoint_schema.len();

        let net = &self.network;
        let sizes = &net.layer_sizes;
        if sizes.len() < 2 {
            return Err(ProfileError::invalid("network.layer_sizes", "needs at least an input and an output layer"));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(ProfileError::invalid(format!("network.layer_sizes[{k}]"), "layer size must be positive"));
        }
        if sizes[0] != env_dim {
            return Err(ProfileError::invalid(
                "network.layer_sizes[0]",
                format!("{} inputs but env_schema has {env_dim} channels", sizes[0]),
            ));
        }
        let last = sizes.len() - 1;
        if sizes[last] != sp_dim {
            return Err(ProfileError::invalid(
                format!("network.layer_sizes[{last}]"),
                format!("{} outputs but setpoint_schema has {sp_dim} setpoints", sizes[last]),
            ));
        }
        if net.output_activation != "identity" {
            return Err(ProfileError::invalid("network.output_activation", "only `identity` is supported"));
        }
        if net.layers.len() != sizes.len() - 1 {
            return Err(ProfileError::invalid(
                "network.layers",
                format!("{} layers for {} layer sizes", net.layers.len(), sizes.len()),
            ));
        }
        let mut layers = Vec::with_capacity(net.layers.len());
        for (k, l) in net.layers.iter().enumerate() {
            let (inputs, outputs) = (sizes[k], sizes[k + 1]);
            if l.weights.len() != outputs {
                return Err(ProfileError::invalid(
                    format!("network.layers[{k}].weights"),
                    format!("{} rows, expected {outputs}", l.weights.len()),
                ));
            }
            for (r, row) in l.weights.iter().enumerate() {
                if row.len() != inputs {
                    return Err(ProfileError::invalid(
                        format!("network.layers[{k}].weights[{r}]"),
                        format!("row length {}, expected {inputs}", row.len()),
                    ));
                }
                for (c, &w) in row.iter().enumerate() {
                    check_finite(|| format!("network.layers[{k}].weights[{r}][{c}]"), w)?;
                }
            }
            if l.biases.len() != outputs {
                return Err(ProfileError::invalid(
                    format!("network.layers[{k}].biases"),
                    format!("length {}, expected {outputs}", l.biases.len()),
                ));
            }
            for (r, &b) in l.biases.iter().enumerate() {
                check_finite(|| format!("network.layers[{k}].biases[{r}]"), b)?;
            }
            let flat = l.weights.iter().flatten().copied().collect();
            layers.push(
                Layer::new(inputs, outputs, flat, l.biases.clone())
                    .map_err(|e| ProfileError::invalid(format!("network.layers[{k}]"), e.to_string()))?,
            );
        }
        let network = Network::from_layers(layers, net.hidden_activation, net.version)
            .map_err(|e| ProfileError::invalid("network", e.to_string()))?;

        let n = &self.normalization;
        let norm_parts: [(&str, &Vec<f64>, usize); 4] = [
            ("env_mean", &n.env_mean, env_dim),
            ("env_std", &n.env_std, env_dim),
            ("setpoint_mean", &n.setpoint_mean, sp_dim),
            ("setpoint_std", &n.setpoint_std, sp_dim),
        ];
        for (name, values, dim) in norm_parts {
            if values.len() != dim {
                return Err(ProfileError::invalid(
                    format!("normalization.{name}"),
                    format!("length {}, expected {dim}", values.len()),
                ));
            }
            for (i, &v) in values.iter().enumerate() {
                check_finite(|| format!("normalization.{name}[{i}]"), v)?;
                if name.ends_with("std") && v <= 0.0 {
                    return Err(ProfileError::invalid(format!("normalization.{name}[{i}]"), "must be positive"));
                }
            }
        }

        self.acquisition.validate().map_err(|e| ProfileError::invalid("acquisition", e.to_string()))?;

        let a = &self.automation.setpoints;
        if a.len() != sp_dim {
            return Err(ProfileError::invalid(
                "automation.setpoints",
                format!("{} entries, expected {sp_dim}", a.len()),
            ));
        }
        for (i, s) in a.iter().enumerate() {
            check_finite(|| format!("automation.setpoints[{i}].loss_threshold"), s.loss_threshold)?;
            if s.loss_threshold <= 0.0 {
                return Err(ProfileError::invalid(format!("automation.setpoints[{i}].loss_threshold"), "must be positive"));
            }
        }

        Ok(Profile {
            profile_id: self.profile_id,
            created_s: self.created_s,
            updated_s: self.updated_s,
            env_schema: self.env_schema,
            setpoint_schema: self.setpoint_schema,
            network,
            normalization: self.normalization,
            acquisition: self.acquisition,
            automation: self.automation,
            provenance: self.provenance,
        })
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename. `before_commit` runs after the data is durable in
/// the temporary file and before the rename; an error from it aborts the
/// save and leaves any previous file untouched.
pub fn write_atomic(
    path: &Path,
    bytes: &[u8],
    before_commit: impl FnOnce(&Path) -> io::Result<()>,
) -> Result<(), ProfileError> {
    let io_err = |source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    // temporary files are created owner-only; profiles are ordinary files
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644)).map_err(io_err)?;
    }
    tmp.as_file().sync_all().map_err(io_err)?;
    before_commit(tmp.path()).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn save_profile(profile: &Profile, path: &Path) -> Result<(), ProfileError> {
    let json = profile.to_json()?;
    write_atomic(path, json.as_bytes(), |_| Ok(()))
}

pub fn load_profile(path: &Path) -> Result<Profile, ProfileError> {
    let text = fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Profile::from_json(&text)
}
