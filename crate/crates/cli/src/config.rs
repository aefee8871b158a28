//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use secfu::SystemParams;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: `{key}` {message}")]
    RangeError { line: usize, key: String, message: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Pargen,
    SimulateSeq,
    SimulateBat,
    MonteCarlo,
    Sweep,
    Train,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::Pargen,
        RunMode::SimulateSeq,
        RunMode::SimulateBat,
        RunMode::MonteCarlo,
        RunMode::Sweep,
        RunMode::Train,
    ];
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Pargen => "pargen",
            RunMode::SimulateSeq => "simulate-seq",
            RunMode::SimulateBat => "simulate-bat",
            RunMode::MonteCarlo => "montecarlo",
            RunMode::Sweep => "sweep",
            RunMode::Train => "train",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| {
            format!("must be one of pargen, simulate-seq, simulate-bat, montecarlo, sweep, train; got `{s}`")
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SystemParams,
    pub mode: RunMode,
    pub trials: Option<u64>,
    pub rounds: Option<u64>,
    pub requests: Option<u64>,
    pub master_seed: u64,
    pub output_path: PathBuf,
}

/// Directory used when neither the config nor the command line names one.
pub const DEFAULT_OUT: &str = "secfu-out";

const KEYS: [&str; 13] =
    ["n_users", "gamma", "delta", "zeta", "xi", "sigma", "eta", "mode", "trials", "rounds", "requests", "seed", "out"];

/// Values supplied on the command line. They take precedence over the file
/// and count as present for the required-key check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<RunMode>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut entries: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: content.to_string() });
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
            return Err(ConfigError::UnknownKey { line, key: k.to_string() });
        };
        if entries.insert(key, (line, v.to_string())).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
        }
    }
    let fields = Fields { entries };

    let n_users: u64 = fields.required("n_users", |v: u64| (v >= 1).then_some(v).ok_or("must be at least 1"))?;
    let fraction = |v: f64| ((0.0..1.0).contains(&v)).then_some(v).ok_or("must lie in [0, 1)");
    let gamma = fields.required("gamma", fraction)?;
    let delta = fields.required("delta", fraction)?;
    let zeta = fields.required("zeta", fraction)?;
    let xi = fields.required("xi", |v: f64| (v > 0.0 && v < 1.0).then_some(v).ok_or("must lie in (0, 1)"))?;
    let bits = |v: u32| ((1..=1024).contains(&v)).then_some(v).ok_or("must lie in [1, 1024]");
    let sigma = fields.required("sigma", bits)?;
    let eta = fields.required("eta", bits)?;
    if gamma + delta >= 1.0 {
        let line = fields.line("delta");
        return Err(ConfigError::RangeError {
            line,
            key: "delta".into(),
            message: "gamma + delta must be below 1".into(),
        });
    }

    let mode = match overrides.mode {
        Some(m) => m,
        None => fields.required_parsed("mode")?,
    };
    let master_seed = match overrides.seed {
        Some(s) => s,
        None => fields.required("seed", Ok::<u64, &str>)?,
    };
    let positive = |v: u64| (v >= 1).then_some(v).ok_or("must be at least 1");
    let trials = match overrides.trials {
        Some(t) => Some(t),
        None => fields.optional("trials", positive)?,
    };
    let rounds = fields.optional("rounds", positive)?;
    let requests = fields.optional("requests", Ok::<u64, &str>)?;
    let output_path = overrides
        .out
        .clone()
        .or_else(|| fields.entries.get("out").map(|(_, v)| PathBuf::from(v)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    match mode {
        RunMode::MonteCarlo if trials.is_none() => return Err(ConfigError::MissingKey("trials")),
        RunMode::Train if rounds.is_none() => return Err(ConfigError::MissingKey("rounds")),
        RunMode::SimulateSeq | RunMode::SimulateBat if requests.is_none() => {
            return Err(ConfigError::MissingKey("requests"))
        }
        _ => {}
    }

    Ok(RunConfig {
        params: SystemParams {
            n_users,
            frac_adversarial: gamma,
            frac_dropout: delta,
            frac_unlearn_per_cluster: zeta,
            shamir_rate: xi,
            security_bits: sigma,
            correctness_bits: eta,
        },
        mode,
        trials,
        rounds,
        requests,
        master_seed,
        output_path,
    })
}

struct Fields {
    entries: BTreeMap<&'static str, (usize, String)>,
}

impl Fields {
    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    fn optional<T: FromStr, U>(
        &self,
        key: &'static str,
        check: impl Fn(T) -> Result<U, &'static str>,
    ) -> Result<Option<U>, ConfigError> {
        let Some((line, raw)) = self.entries.get(key) else { return Ok(None) };
        let range = |message: String| ConfigError::RangeError { line: *line, key: key.to_string(), message };
        let v: T = raw.parse().map_err(|_| range(format!("has unparsable value `{raw}`")))?;
        check(v).map(Some).map_err(|m| range(m.to_string()))
    }

    fn required<T: FromStr, U>(
        &self,
        key: &'static str,
        check: impl Fn(T) -> Result<U, &'static str>,
    ) -> Result<U, ConfigError> {
        self.optional(key, check)?.ok_or(ConfigError::MissingKey(key))
    }

    fn required_parsed<T: FromStr<Err = String>>(&self, key: &'static str) -> Result<T, ConfigError> {
        let (line, raw) = self.entries.get(key).ok_or(ConfigError::MissingKey(key))?;
        raw.parse().map_err(|message| ConfigError::RangeError { line: *line, key: key.to_string(), message })
    }
}
