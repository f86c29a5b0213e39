//! Flat key=value run configuration.
//!
//! Everything that affects numerics lives in the config file; command
//! line flags only select paths, seeds and verbosity. Unknown keys are
//! rejected so a stale config cannot silently drift.

use anyhow::{anyhow, bail, Context, Result};
use panoloc::dataset::PairTask;
use panoloc::model::{BackboneConfig, BackboneKind, HeadConfig};
use panoloc::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const KNOWN_KEYS: &[&str] = &[
    "backbone",
    "head",
    "alpha",
    "input_height",
    "input_width",
    "input_mean",
    "input_std",
    "pretrained",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "pairs_per_epoch",
    "ratio_same",
    "task",
    "resample_each_epoch",
    "seed",
    "threshold",
    "eval_pairs",
    "eval_ratio_same",
    "map_target",
    "synth_rooms",
    "synth_frames_per_room",
    "synth_spacing",
    "synth_height",
    "synth_width",
    "gradcheck_eps",
    "gradcheck_params",
];

/// Parsed run configuration with raw access plus typed views.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// FNV-1a hash of the raw config bytes, for run metadata.
    pub config_hash: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: BTreeMap::new(),
            config_hash: fnv1a_hex(b""),
        }
    }
}

fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), idx + 1))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("{}:{}: unknown key '{key}'", path.display(), idx + 1);
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                bail!("{}:{}: duplicate key '{key}'", path.display(), idx + 1);
            }
        }
        Ok(Self {
            values,
            config_hash: fnv1a_hex(text.as_bytes()),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow!("config key '{key}': {e}")),
        }
    }

    pub fn seed(&self, override_seed: Option<u64>) -> Result<u64> {
        if let Some(s) = override_seed {
            return Ok(s);
        }
        self.parse_or("seed", 0u64)
    }

    fn triple(&self, key: &str) -> Result<Option<[f64; 3]>> {
        let raw = match self.get(key) {
            Some(r) => r,
            None => return Ok(None),
        };
        let parts: Vec<f64> = raw
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| anyhow!("config key '{key}': {e}"))?;
        if parts.len() != 3 {
            bail!("config key '{key}' must list three values, got '{raw}'");
        }
        Ok(Some([parts[0], parts[1], parts[2]]))
    }

    pub fn backbone(&self) -> Result<BackboneConfig> {
        let kind: BackboneKind = self
            .get("backbone")
            .unwrap_or("simple2")
            .parse()
            .map_err(|e: String| anyhow!(e))?;
        let mut cfg = BackboneConfig::new(
            kind,
            self.parse_or("input_height", 128usize)?,
            self.parse_or("input_width", 512usize)?,
        );
        match (self.triple("input_mean")?, self.triple("input_std")?) {
            (Some(m), Some(d)) => cfg = cfg.with_standardization(m, d)?,
            (None, None) => {}
            _ => bail!("input_mean and input_std must be set together"),
        }
        if let Some(p) = self.get("pretrained") {
            cfg.pretrained_weights = Some(PathBuf::from(p));
        }
        Ok(cfg)
    }

    pub fn head(&self) -> Result<HeadConfig> {
        let raw = self.get("head").unwrap_or("500,500,5");
        let parts: Vec<usize> = raw
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| anyhow!("config key 'head': {e}"))?;
        if parts.len() != 3 {
            bail!("config key 'head' must list three sizes, got '{raw}'");
        }
        Ok(HeadConfig::new(parts[0], parts[1], parts[2])?)
    }

    pub fn alpha(&self) -> Result<f64> {
        self.parse_or("alpha", 1.0f64)
    }

    pub fn threshold(&self) -> Result<f64> {
        self.parse_or("threshold", 0.5f64)
    }

    pub fn eval_pairs(&self) -> Result<usize> {
        self.parse_or("eval_pairs", 1000usize)
    }

    pub fn eval_ratio_same(&self) -> Result<f64> {
        self.parse_or("eval_ratio_same", 0.5f64)
    }

    pub fn map_target(&self) -> Result<Option<usize>> {
        Ok(match self.get("map_target") {
            None => None,
            Some(raw) => Some(
                raw.parse::<usize>()
                    .map_err(|e| anyhow!("config key 'map_target': {e}"))?,
            ),
        })
    }

    pub fn task(&self) -> Result<PairTask> {
        self.get("task")
            .unwrap_or("metric")
            .parse()
            .map_err(|e: String| anyhow!(e))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.parse_or("lr", 0.001f64)?,
            momentum: self.parse_or("momentum", 0.9f64)?,
            batch_size: self.parse_or("batch_size", 16usize)?,
            epochs: self.parse_or("epochs", 10usize)?,
            pairs_per_epoch: self.parse_or("pairs_per_epoch", 1000usize)?,
            ratio_same: self.parse_or("ratio_same", 0.5f64)?,
            alpha: self.alpha()?,
            task: self.task()?,
            seed,
            resample_each_epoch: self.parse_or("resample_each_epoch", true)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> Result<(usize, usize, f64, (usize, usize))> {
        Ok((
            self.parse_or("synth_rooms", 4usize)?,
            self.parse_or("synth_frames_per_room", 100usize)?,
            self.parse_or("synth_spacing", 0.5f64)?,
            (
                self.parse_or("synth_height", 64usize)?,
                self.parse_or("synth_width", 256usize)?,
            ),
        ))
    }

    pub fn gradcheck(&self) -> Result<(f64, usize)> {
        Ok((
            self.parse_or("gradcheck_eps", 1e-4f64)?,
            self.parse_or("gradcheck_params", 20usize)?,
        ))
    }
}

/// Write the run-metadata record that makes each output traceable.
pub fn write_run_meta(dir: &Path, command: &str, config: &RunConfig, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let meta = format!(
        "command={command}\nconfig_hash={}\nseed={seed}\nversion={}\n",
        config.config_hash,
        env!("CARGO_PKG_VERSION"),
    );
    let path = dir.join("run_meta.txt");
    std::fs::write(&path, meta).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
