//! Run configuration files.
//!
//! Configs are TOML restricted to flat `key = value` pairs (dotted keys for
//! the synthetic block). Anything that affects results lives here, so one
//! file replays a run exactly.
//!
//! ```toml
//! # exactly one data source
//! dataset = "data/cities.txt"        # relative to this file
//! # synthetic.categories = 4         # ... or every SyntheticSpec field
//!
//! output_dir = "runs/cities"         # relative to this file; --out wins
//! repeat = 5                         # runs use seeds seed, seed + 1, ...
//! eval_k = [1, 5, 10]
//!
//! # any TrainingConfig field; omitted fields take their defaults
//! iterations = 10
//! refining = "global"                # or "none"
//! seed = 7
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use bootgan_core::{Dataset, SyntheticSpec, TrainingConfig};
use serde::Deserialize;
use toml::{Table, Value};

use crate::CliError;

/// Where a run's dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    pub data: DataSource,
    pub training: TrainingConfig,
    pub eval_k: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    pub repeat: usize,
}

impl RunConfigFile {
    /// Parses `text`; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut table: Table = text.parse().map_err(|e| CliError::config(format!("{e}")))?;
        let mut take = |key: &str| table.remove(key);
        let dataset = take("dataset");
        let synthetic = take("synthetic");
        let output_dir = take("output_dir");
        let repeat = take("repeat");
        let eval_k = take("eval_k");

        let data = match (dataset, synthetic) {
            (Some(_), Some(_)) => return Err(CliError::config("set either `dataset` or `synthetic.*`, not both")),
            (None, None) => return Err(CliError::config("missing data source: set `dataset` or `synthetic.*`")),
            (Some(path), None) => DataSource::File(base_dir.join(typed::<PathBuf>("dataset", path)?)),
            (None, Some(spec)) => {
                let spec: SyntheticSpec = typed("synthetic", spec)?;
                spec.validate().map_err(CliError::config)?;
                DataSource::Synthetic(spec)
            }
        };
        let training: TrainingConfig = typed("training", Value::Table(table))?;
        training.validate().map_err(CliError::config)?;

        let repeat = repeat.map(|v| typed::<usize>("repeat", v)).transpose()?.unwrap_or(1);
        if repeat == 0 {
            return Err(CliError::config("repeat must be >= 1"));
        }
        let eval_k = match eval_k {
            Some(v) => typed::<Vec<usize>>("eval_k", v)?,
            None => vec![training.iterations],
        };
        if eval_k.is_empty() || eval_k.iter().any(|&k| k == 0 || k > training.iterations) {
            return Err(CliError::config(format!(
                "eval_k entries must lie in 1..={} (iterations), got {eval_k:?}",
                training.iterations
            )));
        }
        let output_dir = output_dir.map(|v| typed::<PathBuf>("output_dir", v)).transpose()?.map(|p| base_dir.join(p));
        Ok(RunConfigFile {
            data,
            training,
            eval_k,
            output_dir,
            repeat,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        match &self.data {
            DataSource::File(path) => Ok(Dataset::parse(&read(path)?)?),
            DataSource::Synthetic(spec) => Ok(bootgan_core::data::synthesize_dataset(spec)?),
        }
    }
}

/// Parses a synthetic-dataset spec: every [`SyntheticSpec`] field as a
/// top-level key. `seed_override` fills or replaces `seed`.
pub fn parse_synthetic_spec(text: &str, seed_override: Option<u64>) -> Result<SyntheticSpec, CliError> {
    let mut table: Table = text.parse().map_err(|e| CliError::config(format!("{e}")))?;
    if let Some(seed) = seed_override {
        let seed = i64::try_from(seed).map_err(|_| CliError::config("--seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    let spec: SyntheticSpec = typed("synthetic spec", Value::Table(table))?;
    spec.validate().map_err(CliError::config)?;
    Ok(spec)
}

fn typed<T: for<'de> Deserialize<'de>>(what: &str, value: Value) -> Result<T, CliError> {
    value.try_into().map_err(|e: toml::de::Error| CliError::config(format!("{what}: {}", e.message())))
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfigFile, CliError> {
        RunConfigFile::parse(text, Path::new("/base"))
    }

    const SYNTH: &str = "synthetic.categories = 2\nsynthetic.entities_per_category = 10\n\
        synthetic.patterns_per_category = 5\nsynthetic.noise = 0.0\nsynthetic.links_per_entity = 3\n\
        synthetic.count_continue = 0.5\nsynthetic.seeds_per_category = 2\nsynthetic.seed = 4\n";

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse(&format!("{SYNTH}iterations = 3\nlambda = 2\nrefining = \"none\"\n")).unwrap();
        assert_eq!(cfg.training.iterations, 3);
        assert_eq!(cfg.training.lambda, 2.0);
        assert_eq!(cfg.training.refining, bootgan_core::RefiningMode::None);
        assert_eq!(cfg.training.generator_lr, TrainingConfig::default().generator_lr);
        assert_eq!(cfg.eval_k, vec![3]);
        assert_eq!(cfg.repeat, 1);
        assert!(matches!(cfg.data, DataSource::Synthetic(ref s) if s.seed == 4));
    }

    #[test]
    fn relative_paths_use_the_config_dir() {
        let cfg = parse("dataset = \"d.txt\"\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(cfg.data, DataSource::File("/base/d.txt".into()));
        assert_eq!(cfg.output_dir, Some("/base/out".into()));
    }

    #[test]
    fn rejects_bad_files() {
        let both = format!("dataset = \"a\"\n{SYNTH}");
        let unseeded = SYNTH.replace("synthetic.seed = 4\n", "");
        let cases = [
            ("", "missing data source"),
            (both.as_str(), "not both"),
            ("dataset = \"a\"\nrepeat = 0\n", "repeat"),
            ("dataset = \"a\"\nbogus = 1\n", "bogus"),
            ("dataset = \"a\"\niterations = 2\neval_k = [3]\n", "eval_k"),
            ("dataset = \"a\"\nper_iteration = 0\n", "per_iteration"),
            (unseeded.as_str(), "`seed`"),
            ("dataset = ", "TOML"),
        ];
        for (text, needle) in cases {
            let err = parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
            assert!(err.to_string().contains(needle) || needle == "TOML", "{err}");
        }
    }

    #[test]
    fn synthetic_spec_seed() {
        let body: String = SYNTH.lines().filter(|l| !l.contains("seed =")).map(|l| format!("{}\n", &l[10..])).collect();
        let err = parse_synthetic_spec(&body, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`seed`"), "{err}");
        assert_eq!(parse_synthetic_spec(&body, Some(9)).unwrap().seed, 9);
    }
}
