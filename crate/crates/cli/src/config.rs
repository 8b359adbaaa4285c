//! Flat `key = value` settings shared by every subcommand.

use std::fs;
use std::path::Path;

use chase_core::data::{DatasetManifest, SynthConfig, TopologyMode};
use chase_core::gradcheck::DEFAULT_SAMPLES;
use chase_core::TrainConfig;

use crate::CliError;

pub const SEED_ENV: &str = "CHASE_SEED";

pub const KEYS: &[&str] = &[
    "attn_layers",
    "heads",
    "dim",
    "gamma",
    "leaky_slope",
    "hyper_layers",
    "n_base",
    "buckets",
    "dedup_hyperedges",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "ablation",
    "traces",
    "instances_min",
    "instances_max",
    "metrics",
    "window_len",
    "fault_rate",
    "signal_strength",
    "propagation_decay",
    "topology",
    "log_noise",
    "fault_span",
    "train_ratio",
    "val_ratio",
    "test_ratio",
    "eps",
    "gc_instances",
    "gc_samples",
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub split: [f64; 3],
    pub eps: f64,
    pub gc_instances: usize,
    pub gc_samples: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            split: [0.6, 0.2, 0.2],
            eps: 1e-5,
            gc_instances: 5,
            gc_samples: DEFAULT_SAMPLES,
        }
    }
}

fn invalid(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("invalid value `{value}` for `{key}`: expected {expected}"))
}

fn count(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse().map_err(|_| invalid(key, v, "a non-negative integer"))
}

fn real(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(key, v, "a finite number"))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let (t, s) = (&mut self.train, &mut self.synth);
        match key {
            "attn_layers" => t.attn_layers = count(key, v)?,
            "heads" => t.heads = count(key, v)?,
            "dim" => t.dim = count(key, v)?,
            "gamma" => t.gamma = real(key, v)?,
            "leaky_slope" => t.leaky_slope = real(key, v)?,
            "hyper_layers" => t.hyper_layers = count(key, v)?,
            "n_base" => t.n_base = real(key, v)?,
            "buckets" => t.buckets = count(key, v)?,
            "dedup_hyperedges" => t.dedup_hyperedges = v.parse().map_err(|_| invalid(key, v, "true or false"))?,
            "lr" => t.lr = real(key, v)?,
            "epochs" => t.epochs = count(key, v)?,
            "batch_size" => t.batch_size = count(key, v)?,
            "seed" => {
                let seed = v.parse().map_err(|_| invalid(key, v, "an unsigned 64-bit integer"))?;
                t.seed = seed;
                s.seed = seed;
            }
            "ablation" => t.ablation = v.parse().map_err(|_| invalid(key, v, "none, V1, V2 or V3"))?,
            "traces" => s.num_traces = count(key, v)?,
            "instances_min" => s.instances_range.0 = count(key, v)?,
            "instances_max" => s.instances_range.1 = count(key, v)?,
            "metrics" => s.metric_names = v.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect(),
            "window_len" => s.window_len = count(key, v)?,
            "fault_rate" => s.fault_rate = real(key, v)?,
            "signal_strength" => s.signal_strength = real(key, v)?,
            "propagation_decay" => s.propagation_decay = real(key, v)?,
            "topology" => {
                s.topology_mode = match v.to_ascii_lowercase().as_str() {
                    "static" => TopologyMode::Static,
                    "dynamic" => TopologyMode::Dynamic,
                    _ => return Err(invalid(key, v, "static or dynamic")),
                }
            }
            "log_noise" => s.log_noise = real(key, v)?,
            "fault_span" => s.fault_span = count(key, v)?,
            "train_ratio" => self.split[0] = real(key, v)?,
            "val_ratio" => self.split[1] = real(key, v)?,
            "test_ratio" => self.split[2] = real(key, v)?,
            "eps" => self.eps = real(key, v)?,
            "gc_instances" => self.gc_instances = count(key, v)?,
            "gc_samples" => self.gc_samples = count(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}` (known: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{pair}` is not of the form key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("{}:{}: {}", path.display(), i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then `CHASE_SEED`, then `--set`
    /// pairs, then dedicated flags.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[String],
        flags: &[(&str, Option<&str>)],
    ) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = file {
            s.load_file(path)?;
        }
        if let Some(seed) = env_seed {
            s.set("seed", seed)
                .map_err(|e| CliError::Config(format!("{SEED_ENV}: {}", e.message())))?;
        }
        for pair in overrides {
            s.set_pair(pair)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        self.synth.validate()?;
        self.manifest().validate()?;
        if !(self.eps > 0.0) {
            return Err(CliError::Config(format!("`eps` must be positive, got {}", self.eps)));
        }
        if self.gc_instances < 2 {
            return Err(CliError::Config(format!("`gc_instances` must be at least 2, got {}", self.gc_instances)));
        }
        if self.gc_samples == 0 {
            return Err(CliError::Config("`gc_samples` must be at least 1".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::standard(self.split, self.synth.seed)
    }
}
