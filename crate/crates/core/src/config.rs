//! Run configuration: layered JSON with a versioned schema.
//!
//! Layers are merged as JSON objects, lowest first: built-in defaults, a named
//! profile, the user's file, the `LATENT_STEER_SEED` variable, then explicit
//! `key.path=value` overrides. The merged document must contain only known
//! keys; every problem is reported at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::algo::TrainConfig;
use crate::env::{EnvConfig, HyperplaneSource};
use crate::error::{Error, Result};
use crate::oracle::OracleDescriptor;

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV_VAR: &str = "LATENT_STEER_SEED";

const DESK_PROFILE: &str = include_str!("../profiles/desk.json");
const PAPER_PROFILE: &str = include_str!("../profiles/paper.json");
const TINY_PROFILE: &str = include_str!("../profiles/tiny.json");

/// Names accepted by [`builtin_profile`].
pub const PROFILES: [&str; 3] = ["desk", "paper", "tiny"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out bases per conditioning.
    pub episodes: usize,
    /// Seed of the held-out base stream, kept apart from training seeds.
    pub seed: u64,
    pub methods: Vec<String>,
    /// Traversal length for the linear and centroid baselines; `None` uses `env.max_steps`.
    pub traversal_steps: Option<usize>,
    /// `None` spans the bucket range in `traversal_steps` steps.
    pub traversal_step_size: Option<f64>,
    pub centroid_candidates: usize,
    pub centroid_cluster: usize,
    pub log_latents: bool,
    pub calibration_samples: usize,
    pub calibration_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            seed: 20_000,
            methods: ["policy", "random", "linear", "centroid"].map(String::from).to_vec(),
            traversal_steps: None,
            traversal_step_size: None,
            centroid_candidates: 1024,
            centroid_cluster: 32,
            log_latents: false,
            calibration_samples: 10_000,
            calibration_quantile: 0.95,
        }
    }
}

pub const METHODS: [&str; 6] = ["policy", "ppo", "a2c", "random", "linear", "centroid"];

impl EvalConfig {
    fn validate(&self, errs: &mut Vec<String>) {
        if self.episodes == 0 {
            errs.push("eval.episodes must be >= 1".to_owned());
        }
        for m in &self.methods {
            if !METHODS.contains(&m.as_str()) {
                errs.push(format!("eval.methods: unknown method `{m}` (expected one of {})", METHODS.join(", ")));
            }
        }
        if self.traversal_steps == Some(0) {
            errs.push("eval.traversal_steps must be >= 1".to_owned());
        }
        if let Some(s) = self.traversal_step_size {
            if !(s > 0.0 && s.is_finite()) {
                errs.push("eval.traversal_step_size must be > 0".to_owned());
            }
        }
        if self.centroid_cluster == 0 || 2 * self.centroid_cluster > self.centroid_candidates {
            errs.push("eval requires 1 <= centroid_cluster and 2 * centroid_cluster <= centroid_candidates".to_owned());
        }
        if self.calibration_samples == 0 {
            errs.push("eval.calibration_samples must be >= 1".to_owned());
        }
        if !(self.calibration_quantile > 0.0 && self.calibration_quantile < 1.0) {
            errs.push("eval.calibration_quantile must lie in (0, 1)".to_owned());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    /// Profile the config was layered on, kept for the record.
    pub profile: Option<String>,
    pub run_name: String,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub oracle: OracleDescriptor,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            profile: None,
            run_name: "run".to_owned(),
            output_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            oracle: OracleDescriptor::Remote {
                endpoint: "tcp://127.0.0.1:7878".to_owned(),
                timeout_ms: 30_000,
            },
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.config_version != CONFIG_VERSION {
            errs.push(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            errs.push("run_name must be a non-empty name without path separators".to_owned());
        }
        if let Err(e) = self.env.validate() {
            errs.extend(e);
        }
        if let Err(e) = self.train.validate() {
            errs.extend(e);
        }
        self.eval.validate(&mut errs);
        if let (OracleDescriptor::Remote { .. }, HyperplaneSource::Oracle) = (&self.oracle, &self.env.hyperplane) {
            errs.push("env.hyperplane.source = \"oracle\" requires a synthetic oracle".to_owned());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Compact JSON of the resolved config; the bytes the hash is taken over.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// CRC-32 of [`Self::snapshot`], as 8 hex digits.
    pub fn hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.snapshot().as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn builtin_profile(name: &str) -> Option<Value> {
    let text = match name {
        "desk" => DESK_PROFILE,
        "paper" => PAPER_PROFILE,
        "tiny" => TINY_PROFILE,
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("built-in profiles are valid JSON"))
}

/// Keys whose value selects the shape of the surrounding object.
const TAG_KEYS: [&str; 2] = ["kind", "source"];

/// Deep merge of `over` into `base`. Objects merge key by key, except that a
/// change of variant tag replaces the object wholesale; everything else is
/// overwritten.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = TAG_KEYS
                .iter()
                .any(|t| matches!((b.get(*t), o.get(*t)), (Some(x), Some(y)) if x != y));
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, over) => *slot = over,
    }
}

/// Parses `a.b.c=value`; the value is read as JSON, falling back to a plain string.
pub fn parse_override(spec: &str) -> Result<Value> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(vec![format!("override `{spec}` is not of the form key.path=value")]))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::InvalidConfig(vec![format!("override `{spec}` has an empty key")]));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut out = value;
    for key in path.rsplit('.') {
        let mut m = Map::new();
        m.insert(key.to_owned(), out);
        out = Value::Object(m);
    }
    Ok(out)
}

/// Variants of each tagged section, used to decide which keys are legal.
fn tagged_exemplars(path: &str) -> Option<(&'static str, Vec<Value>)> {
    match path {
        "oracle" => Some((
            "kind",
            vec![
                val(OracleDescriptor::Synthetic {
                    a: 0.0,
                    b: 0.0,
                    gamma: 0.0,
                    direction_seed: 0,
                }),
                val(OracleDescriptor::Remote {
                    endpoint: String::new(),
                    timeout_ms: 0,
                }),
            ],
        )),
        "env.hyperplane" => Some((
            "source",
            vec![
                val(HyperplaneSource::Oracle),
                val(HyperplaneSource::Fit { samples: 0, seed: 0 }),
                val(HyperplaneSource::Explicit { values: vec![] }),
            ],
        )),
        _ => None,
    }
}

fn val<T: Serialize>(t: T) -> Value {
    serde_json::to_value(t).expect("config types serialize")
}

fn unknown_keys(value: &Value, exemplar: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(v), Value::Object(ex)) = (value, exemplar) else {
        return;
    };
    let join = |k: &str| if path.is_empty() { k.to_owned() } else { format!("{path}.{k}") };
    for (k, child) in v {
        let p = join(k);
        if let Some((tag, variants)) = tagged_exemplars(&p) {
            let chosen = child
                .get(tag)
                .and_then(|t| variants.iter().find(|e| e.get(tag) == Some(t)));
            match chosen {
                Some(e) => unknown_keys(child, e, &p, out),
                None => {
                    let names: Vec<String> = variants.iter().filter_map(|e| e.get(tag)).map(|t| t.to_string()).collect();
                    out.push(format!("{p}.{tag}: expected one of {}", names.join(", ")));
                }
            }
            continue;
        }
        match ex.get(k) {
            None => out.push(format!("unknown key `{p}`")),
            Some(e) => unknown_keys(child, e, &p, out),
        }
    }
}

/// Validates a merged document and converts it. Unknown keys, type errors and
/// semantic violations are all collected into one error.
pub fn from_value(doc: Value) -> Result<RunConfig> {
    let mut errs = Vec::new();
    let exemplar = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    unknown_keys(&doc, &exemplar, "", &mut errs);
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidConfig(vec![format!("{path}: {}", e.into_inner())])
    })?;
    cfg.validate().map_err(Error::InvalidConfig)?;
    Ok(cfg)
}

/// Sources for one configuration load.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources<'a> {
    pub file: Option<&'a Path>,
    /// Built-in profile name or path to a profile file; a `"profile"` key in
    /// the file is used when this is `None`.
    pub profile: Option<&'a str>,
    pub overrides: &'a [String],
    /// Value of `LATENT_STEER_SEED`, if set.
    pub env_seed: Option<String>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Value::Object(Map::new()));
    }
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(vec![format!("{}: {e}", path.display())]))
}

fn resolve_profile(name: &str) -> Result<Value> {
    if let Some(v) = builtin_profile(name) {
        return Ok(v);
    }
    let p = Path::new(name);
    if p.extension().is_some_and(|e| e == "json") {
        return read_json(p);
    }
    Err(Error::InvalidConfig(vec![format!(
        "unknown profile `{name}` (built-in: {})",
        PROFILES.join(", ")
    )]))
}

/// Merges all layers and validates the result.
pub fn load(src: &ConfigSources<'_>) -> Result<RunConfig> {
    let mut file = match src.file {
        Some(p) => read_json(p)?,
        None => Value::Object(Map::new()),
    };
    if !file.is_object() {
        return Err(Error::InvalidConfig(vec!["config file must hold a JSON object".to_owned()]));
    }
    let profile_name = src
        .profile
        .map(str::to_owned)
        .or_else(|| file.get("profile").and_then(Value::as_str).map(str::to_owned));
    if let Value::Object(m) = &mut file {
        m.remove("profile");
    }

    let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(name) = &profile_name {
        merge(&mut doc, resolve_profile(name)?);
        merge(&mut doc, serde_json::json!({ "profile": name }));
    }
    merge(&mut doc, file);
    if let Some(raw) = &src.env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(vec![format!("{SEED_ENV_VAR}=`{raw}` is not an unsigned integer")]))?;
        merge(&mut doc, serde_json::json!({ "train": { "seed": seed } }));
    }
    for o in src.overrides {
        merge(&mut doc, parse_override(o)?);
    }
    from_value(doc)
}

/// Reads a resolved snapshot back (no layering).
pub fn load_snapshot(path: &Path) -> Result<RunConfig> {
    from_value(read_json(path)?)
}
