//! Sectioned key/value configuration grammar.
//!
//! A config file holds `[section]` headers followed by `key = value` lines;
//! `#` starts a comment. Recognized sections: `data`, `partition`, `noise`,
//! `model`, `strategy`, `aggregator`, `engine`. Only `[data]` is required;
//! every other value has a default(see the README for the full key table).
//! Unknown sections or keys are rejected with their `section.key` path.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fedsim::aggregate::AggregatorSpec;
use fedsim::data::{NoiseKind, NoiseSpec};
use fedsim::engine::{DatasetSource, ExperimentConfig, PartitionSpec};
use fedsim::error::{Error, Result};
use fedsim::model::{Arch, ModelSpec};
use fedsim::strategy::{StrategyKind, StrategySpec};

fn config_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

/// Raw sectioned key/value text, kept verbatim so sweeps can override single
/// keys before building the typed config.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

const SECTIONS: &[&str] = &[
    "data",
    "partition",
    "noise",
    "model",
    "strategy",
    "aggregator",
    "engine",
];

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(format!("line {}", lineno + 1), "unterminated section header"))?
                    .trim()
                    .to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(config_err(&name, "unknown section"));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, found `{line}`"),
                ));
            };
            let section = current
                .clone()
                .ok_or_else(|| config_err(format!("line {}", lineno + 1), "key before any [section] header"))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entry = sections.entry(section.clone()).or_default();
            if entry.insert(key.clone(), value).is_some() {
                return Err(config_err(
                    format!("{section}.{key}"),
                    "duplicate key",
                ));
            }
        }
        Ok(RawConfig { sections })
    }

    /// Override (or insert) one key; `path` is `section.key`.
    pub fn set(&mut self, path: &str, value: &str) -> Result<()> {
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| config_err(path, "expected a `section.key` path"))?;
        if !SECTIONS.contains(&section) {
            return Err(config_err(section, "unknown section"));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn build(&self) -> Result<(ExperimentConfig, Vec<String>)> {
        let mut cursor = Cursor {
            remaining: self.sections.clone(),
        };
        let config = build_config(&mut cursor)?;
        cursor.finish()?;
        let warnings = config.validate()?;
        Ok((config, warnings))
    }
}

/// Fully validated config from sectioned key/value text, plus any advisory
/// warnings from validation.
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
    RawConfig::parse(text)?.build()
}

struct Cursor {
    remaining: BTreeMap<String, BTreeMap<String, String>>,
}

impl Cursor {
    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.remaining.get_mut(section)?.remove(key)
    }

    fn require(&mut self, section: &str, key: &str) -> Result<String> {
        self.take(section, key)
            .ok_or_else(|| config_err(format!("{section}.{key}"), "required key is missing"))
    }

    fn finish(self) -> Result<()> {
        for (section, keys) in &self.remaining {
            if let Some(key) = keys.keys().next() {
                return Err(config_err(format!("{section}.{key}"), "unknown key"));
            }
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, raw: &str, kind: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| config_err(format!("{section}.{key}"), format!("`{raw}` is not {kind}")))
}

fn take_usize(c: &mut Cursor, section: &str, key: &str, default: usize) -> Result<usize> {
    match c.take(section, key) {
        Some(raw) => parse_value(section, key, &raw, "an integer"),
        None => Ok(default),
    }
}

fn take_f64(c: &mut Cursor, section: &str, key: &str, default: f64) -> Result<f64> {
    match c.take(section, key) {
        Some(raw) => parse_value(section, key, &raw, "a number"),
        None => Ok(default),
    }
}

fn take_bool(c: &mut Cursor, section: &str, key: &str, default: bool) -> Result<bool> {
    match c.take(section, key) {
        Some(raw) => match raw.as_str() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(config_err(
                format!("{section}.{key}"),
                format!("`{other}` is not a boolean"),
            )),
        },
        None => Ok(default),
    }
}

fn require_usize(c: &mut Cursor, section: &str, key: &str) -> Result<usize> {
    let raw = c.require(section, key)?;
    parse_value(section, key, &raw, "an integer")
}

fn require_f64(c: &mut Cursor, section: &str, key: &str) -> Result<f64> {
    let raw = c.require(section, key)?;
    parse_value(section, key, &raw, "a number")
}

fn build_dataset(c: &mut Cursor) -> Result<(DatasetSource, usize, usize)> {
    if !c.remaining.contains_key("data") {
        return Err(config_err("data", "the [data] section is required"));
    }
    let source = c.require("data", "source")?;
    match source.as_str() {
        "blobs" => {
            let samples = require_usize(c, "data", "samples")?;
            let classes = require_usize(c, "data", "classes")?;
            let features = require_usize(c, "data", "features")?;
            let test_samples =
                take_usize(c, "data", "test_samples", (samples / 5).max(classes))?;
            let spread = take_f64(c, "data", "spread", 0.5)?;
            Ok((
                DatasetSource::Blobs {
                    samples,
                    test_samples,
                    classes,
                    feature_dim: features,
                    spread,
                },
                classes,
                features,
            ))
        }
        "file" => {
            let path = PathBuf::from(c.require("data", "path")?);
            let classes = require_usize(c, "data", "classes")?;
            let features = require_usize(c, "data", "features")?;
            let test_path = c.take("data", "test_path").map(PathBuf::from);
            let test_fraction = take_f64(c, "data", "test_fraction", 0.2)?;
            Ok((
                DatasetSource::File {
                    path,
                    test_path,
                    test_fraction,
                },
                classes,
                features,
            ))
        }
        other => Err(config_err(
            "data.source",
            format!("`{other}` is not one of blobs, file"),
        )),
    }
}

fn build_partition(c: &mut Cursor) -> Result<PartitionSpec> {
    let kind = c.take("partition", "kind").unwrap_or_else(|| "iid".into());
    match kind.as_str() {
        "iid" => Ok(PartitionSpec::Iid),
        "sharding" => Ok(PartitionSpec::Sharding {
            shards_per_client: require_usize(c, "partition", "shards_per_client")?,
        }),
        "dirichlet" => Ok(PartitionSpec::Dirichlet {
            beta: require_f64(c, "partition", "beta")?,
        }),
        other => Err(config_err(
            "partition.kind",
            format!("`{other}` is not one of iid, sharding, dirichlet"),
        )),
    }
}

fn build_noise(c: &mut Cursor) -> Result<NoiseSpec> {
    let kind_name = c.take("noise", "kind").unwrap_or_else(|| "symmetric".into());
    let kind = match kind_name.as_str() {
        "symmetric" => NoiseKind::Symmetric,
        "pairflip" => NoiseKind::Pairflip,
        "mixed" => NoiseKind::Mixed,
        "matrix_file" => NoiseKind::MatrixFile {
            path: PathBuf::from(c.require("noise", "path")?),
        },
        "replacement_file" => NoiseKind::ReplacementFile {
            path: PathBuf::from(c.require("noise", "path")?),
        },
        other => Err(config_err(
            "noise.kind",
            format!("`{other}` is not one of symmetric, pairflip, mixed, matrix_file, replacement_file"),
        ))?,
    };
    // A fixed file matrix applies at full rate unless a schedule is given.
    let default_rate = match kind {
        NoiseKind::MatrixFile { .. } => 1.0,
        _ => 0.0,
    };
    Ok(NoiseSpec {
        rate_lo: take_f64(c, "noise", "rate_lo", default_rate)?,
        rate_hi: take_f64(c, "noise", "rate_hi", default_rate)?,
        kind,
    })
}

fn build_model(c: &mut Cursor, classes: usize, features: usize) -> Result<ModelSpec> {
    let arch_name = c.take("model", "arch").unwrap_or_else(|| "softmax".into());
    let arch = match arch_name.as_str() {
        "softmax" | "softmax_regression" => Arch::SoftmaxRegression,
        "mlp" | "mlp_1h" => Arch::Mlp1h,
        other => Err(config_err(
            "model.arch",
            format!("`{other}` is not one of softmax, mlp"),
        ))?,
    };
    let default_hidden = match arch {
        Arch::SoftmaxRegression => features,
        Arch::Mlp1h => 16,
    };
    Ok(ModelSpec {
        arch,
        feature_dim: features,
        hidden_dim: take_usize(c, "model", "hidden", default_hidden)?,
        num_classes: classes,
        init_scale: take_f64(c, "model", "init_scale", 0.1)?,
    })
}

fn build_strategy(c: &mut Cursor) -> Result<StrategySpec> {
    let kind_name = c.take("strategy", "kind").unwrap_or_else(|| "plain".into());
    let kind = match kind_name.as_str() {
        "plain" => StrategyKind::Plain,
        "prox" => StrategyKind::Prox {
            mu: take_f64(c, "strategy", "mu", 0.1)?,
        },
        "sce" => StrategyKind::Sce {
            alpha: take_f64(c, "strategy", "alpha", 0.1)?,
            beta: take_f64(c, "strategy", "beta", 1.0)?,
        },
        "coteach" => StrategyKind::Coteach {
            forget_rate: take_f64(c, "strategy", "forget_rate", 0.2)?,
            warmup_fraction: take_f64(c, "strategy", "warmup_fraction", 0.2)?,
        },
        other => Err(config_err(
            "strategy.kind",
            format!("`{other}` is not one of plain, prox, sce, coteach"),
        ))?,
    };
    Ok(StrategySpec {
        kind,
        svd_weight: take_f64(c, "strategy", "svd_weight", 0.0)?,
        epochs: take_usize(c, "strategy", "epochs", 5)?,
        batch_size: take_usize(c, "strategy", "batch_size", 64)?,
        lr: take_f64(c, "strategy", "lr", 0.01)?,
        momentum: take_f64(c, "strategy", "momentum", 0.9)?,
        weight_decay: take_f64(c, "strategy", "weight_decay", 5e-4)?,
    })
}

fn build_aggregator(c: &mut Cursor) -> Result<AggregatorSpec> {
    let kind = c.take("aggregator", "kind").unwrap_or_else(|| "fedavg".into());
    match kind.as_str() {
        "fedavg" => Ok(AggregatorSpec::Fedavg),
        "fedexp" => Ok(AggregatorSpec::Fedexp {
            epsilon: take_f64(c, "aggregator", "epsilon", 1e-3)?,
        }),
        "median" => Ok(AggregatorSpec::Median),
        "trimmed_mean" => Ok(AggregatorSpec::TrimmedMean {
            kappa: take_f64(c, "aggregator", "kappa", 0.3)?,
        }),
        "krum" => Ok(AggregatorSpec::Krum {
            kappa: take_f64(c, "aggregator", "kappa", 0.3)?,
        }),
        "rfa" => Ok(AggregatorSpec::Rfa {
            max_iters: take_usize(c, "aggregator", "max_iters", 64)?,
            tol: take_f64(c, "aggregator", "tol", 1e-10)?,
        }),
        other => Err(config_err(
            "aggregator.kind",
            format!("`{other}` is not one of fedavg, fedexp, median, trimmed_mean, krum, rfa"),
        )),
    }
}

fn build_config(c: &mut Cursor) -> Result<ExperimentConfig> {
    let (dataset, classes, features) = build_dataset(c)?;
    let partition = build_partition(c)?;
    let noise = build_noise(c)?;
    let model = build_model(c, classes, features)?;
    let strategy = build_strategy(c)?;
    let aggregator = build_aggregator(c)?;
    Ok(ExperimentConfig {
        clients: take_usize(c, "engine", "clients", 100)?,
        participants_per_round: take_usize(c, "engine", "participants", 10)?,
        rounds: take_usize(c, "engine", "rounds", 60)?,
        seed: take_usize(c, "engine", "seed", 1)? as u64,
        eval_window: take_usize(c, "engine", "eval_window", 10)?,
        record_spectra: take_bool(c, "engine", "record_spectra", false)?,
        dataset,
        partition,
        noise,
        model,
        strategy,
        aggregator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[data]
source = blobs
samples = 2000
classes = 4
features = 2
";

    #[test]
    fn minimal_config_takes_training_defaults() {
        let (config, warnings) = parse_config(MINIMAL).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(config.clients, 100);
        assert_eq!(config.participants_per_round, 10);
        assert_eq!(config.eval_window, 10);
        assert_eq!(config.strategy.lr, 0.01);
        assert_eq!(config.strategy.momentum, 0.9);
        assert_eq!(config.strategy.weight_decay, 5e-4);
        assert_eq!(config.strategy.epochs, 5);
        assert_eq!(config.strategy.batch_size, 64);
        assert_eq!(config.aggregator, AggregatorSpec::Fedavg);
        assert_eq!(config.partition, PartitionSpec::Iid);
        assert_eq!(config.model.arch, Arch::SoftmaxRegression);
        assert_eq!(config.model.num_classes, 4);
        assert_eq!(config.model.feature_dim, 2);
    }

    #[test]
    fn krum_with_default_participants_is_feasible() {
        let text = format!("{MINIMAL}\n[aggregator]\nkind = krum\nkappa = 0.3\n");
        let (config, warnings) = parse_config(&text).unwrap();
        assert_eq!(config.aggregator, AggregatorSpec::Krum { kappa: 0.3 });
        // 10 participants, f = 3: 10 - 3 - 2 = 5 neighbors, feasible.
        assert!(warnings.is_empty());
    }

    #[test]
    fn degenerate_trim_is_accepted_with_warning() {
        let text = format!(
            "{MINIMAL}\n[aggregator]\nkind = trimmed_mean\nkappa = 0.3\n[engine]\nparticipants = 3\nclients = 10\n"
        );
        let (_, warnings) = parse_config(&text).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("trims nothing"));
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = format!("{MINIMAL}\n[engine]\nruonds = 10\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("engine.ruonds"), "{err}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        let err = parse_config("[serverz]\nx = 1\n").unwrap_err().to_string();
        assert!(err.contains("serverz"), "{err}");
    }

    #[test]
    fn out_of_range_value_is_rejected_with_path() {
        let text = format!("{MINIMAL}\n[aggregator]\nkind = krum\nkappa = 0.7\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("kappa"), "{err}");
    }

    #[test]
    fn infeasible_krum_is_rejected() {
        // Two participants leave no scoring neighbors at any kappa.
        let text = format!(
            "{MINIMAL}\n[aggregator]\nkind = krum\nkappa = 0.3\n[engine]\nclients = 2\nparticipants = 2\n"
        );
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn sweep_override_changes_one_key() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.set("noise.rate_hi", "0.8").unwrap();
        let (config, _) = raw.build().unwrap();
        assert_eq!(config.noise.rate_hi, 0.8);
        assert_eq!(config.noise.rate_lo, 0.0);
    }

    #[test]
    fn override_of_unknown_key_is_rejected_at_build() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.set("noise.rate_high", "0.8").unwrap();
        let err = raw.build().unwrap_err().to_string();
        assert!(err.contains("noise.rate_high"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = "[data]\nsource = blobs\nsource = file\n";
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
# leading comment
[data]
source = blobs   # inline comment
samples = 100

classes = 4
features = 2
";
        let (config, _) = parse_config(text).unwrap();
        assert!(matches!(config.dataset, DatasetSource::Blobs { samples: 100, .. }));
    }

    #[test]
    fn mlp_defaults_and_noise_schedule() {
        let text = format!(
            "{MINIMAL}\n[model]\narch = mlp\n[noise]\nkind = pairflip\nrate_lo = 0.1\nrate_hi = 0.4\n"
        );
        let (config, _) = parse_config(&text).unwrap();
        assert_eq!(config.model.arch, Arch::Mlp1h);
        assert_eq!(config.model.hidden_dim, 16);
        assert_eq!(config.noise.kind, NoiseKind::Pairflip);
        assert_eq!(config.noise.rate_lo, 0.1);
    }
}
