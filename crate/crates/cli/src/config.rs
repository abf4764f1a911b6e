//! `key=value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Every recognized key with its default and a one-line description. An
/// empty default means "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dataset", "", "dataset directory holding manifest.csv"),
    ("out", "", "output directory"),
    ("weights", "", "weight file (read by infer, written by train when set)"),
    ("subset", "auto", "records to use: auto, all, train or test"),
    ("width", "480", "network input width"),
    ("height", "360", "network input height"),
    ("scale", "1.0", "channel-width multiplier of the network"),
    ("connectivity", "8", "pixel connectivity of the postprocessing: 4 or 8"),
    ("criterion", "overlap>=0.5", "per-image correct-detection rule"),
    ("bins", "20", "histogram bins"),
    ("seed", "0", "master seed"),
    ("learning_rate", "0.0001", "SGD learning rate"),
    ("momentum", "0.9", "SGD momentum"),
    ("weight_decay", "0.005", "L2 penalty on convolution weights"),
    ("max_iterations", "10000", "training iterations"),
    ("batch_size", "4", "images per iteration"),
    ("log_every", "20", "training log cadence in iterations"),
    ("class_balance", "true", "median-frequency class weights"),
    ("pred", "", "directory of predicted masks named <id>.png"),
    ("rects", "", "CSV of detected rectangles id,left,top,width,height"),
    ("name", "", "method name used as the report column"),
    ("count", "100", "synthetic images"),
    ("blob_fraction_min", "0.008", "smallest single-blob ear fraction"),
    ("blob_fraction_max", "0.016", "largest single-blob ear fraction"),
    ("two_blob_probability", "0.3", "probability of a second blob"),
    ("train_count", "", "train records of a split; three quarters when unset"),
];

pub const ECHO_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn key_of(name: &str) -> Result<&'static str> {
    KEYS.iter()
        .find(|(k, _, _)| *k == name)
        .map(|(k, _, _)| *k)
        .ok_or_else(|| anyhow!("unknown configuration key `{name}`"))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got `{line}`", i + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.values.insert(key_of(key)?, value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        if v.is_empty() {
            bail!("configuration key `{key}` is required");
        }
        v.parse().map_err(|e| anyhow!("invalid value `{v}` for `{key}`: {e}"))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
    }

    /// Canonical `key=value` text, one line per key in table order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(out, "{k}={}", self.values[k]);
        }
        out
    }

    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        fs::write(dir.join(ECHO_FILE), self.render()).context("cannot write config echo")?;
        Ok(())
    }
}
