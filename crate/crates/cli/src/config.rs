//! Run configuration: built-in defaults, then a `key=value` file, then flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mast_core::model::{Dims, Variant};
use mast_core::training::TrainConfig;
use mast_core::ModelConfig;

use crate::error::{CliError, Result};

/// Keys written by [`RunConfig::to_text`] besides the config itself; they
/// are accepted and ignored on read so a run manifest can be reused as a
/// config file.
const MANIFEST_KEYS: [&str; 5] = ["command", "data", "checkpoint", "inputs_sha256", "out"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub dims: Dims,
    pub audio_bin_size: usize,
    pub min_freq: usize,
    pub train: TrainConfig,
    pub val_split: String,
    pub max_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mast,
            dims: Dims::default(),
            audio_bin_size: 30,
            min_freq: 1,
            train: TrainConfig::default(),
            val_split: "val".into(),
            max_len: mast_core::decoder::DEFAULT_MAX_LEN,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Applies one setting. `dim` sets every model width at once.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dims;
        let t = &mut self.train;
        match key {
            "variant" => self.variant = value.parse().map_err(|e: mast_core::Error| CliError::Usage(e.to_string()))?,
            "dim" => *d = Dims::uniform(parse(key, value)?),
            "embed" => d.embed = parse(key, value)?,
            "enc_hidden" => d.enc_hidden = parse(key, value)?,
            "dec_hidden" => d.dec_hidden = parse(key, value)?,
            "d_att" => d.d_att = parse(key, value)?,
            "d_fuse" => d.d_fuse = parse(key, value)?,
            "d_final" => d.d_final = parse(key, value)?,
            "audio_bin_size" => self.audio_bin_size = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "learning_rate" | "lr" => t.learning_rate = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "dropout" => t.dropout_p = parse(key, value)?,
            "beam" => t.beam = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "grad_clip_norm" => t.grad_clip_norm = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "val_split" => self.val_split = value.to_string(),
            "max_len" => self.max_len = parse(key, value)?,
            k if MANIFEST_KEYS.contains(&k) => {}
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {line:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.max_len == 0 {
            return Err(CliError::Usage("max_len must be at least 1".into()));
        }
        if self.min_freq == 0 {
            return Err(CliError::Usage("min_freq must be at least 1".into()));
        }
        self.model_config(4)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.variant, vocab_size);
        cfg.dims = self.dims;
        cfg.audio_bin_size = self.audio_bin_size;
        cfg
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let (d, t) = (&self.dims, &self.train);
        BTreeMap::from([
            ("variant", self.variant.to_string()),
            ("embed", d.embed.to_string()),
            ("enc_hidden", d.enc_hidden.to_string()),
            ("dec_hidden", d.dec_hidden.to_string()),
            ("d_att", d.d_att.to_string()),
            ("d_fuse", d.d_fuse.to_string()),
            ("d_final", d.d_final.to_string()),
            ("audio_bin_size", self.audio_bin_size.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("learning_rate", format!("{:?}", t.learning_rate)),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("dropout", format!("{:?}", t.dropout_p)),
            ("beam", t.beam.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("grad_clip_norm", format!("{:?}", t.grad_clip_norm)),
            ("seed", t.seed.to_string()),
            ("val_split", self.val_split.clone()),
            ("max_len", self.max_len.to_string()),
        ])
    }

    /// `key=value` lines in key order; floats round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("variant=text_only\nlr=0.001\n# comment\n\ndim=16\nbatch_size=3").unwrap();
        assert_eq!(c.variant, Variant::TextOnly);
        assert_eq!(c.dims, Dims::uniform(16));
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("colour=red"), Err(CliError::Usage(_))));
        assert!(matches!(c.apply_text("epochs"), Err(CliError::Usage(_))));
        assert!(matches!(c.apply_text("epochs=many"), Err(CliError::Usage(_))));
        assert!(c.apply_text("inputs_sha256=abc").is_ok());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.train.dropout_p = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.dims.d_att = 0;
        assert!(c.validate().is_err());
    }
}
