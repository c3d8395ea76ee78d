//! Training configuration and its flat `key = value` text form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::assembly::LayoutOptions;
use crate::discriminator::Pooling;
use crate::error::{io_err, CoreError, Result};
use crate::generator::FeedMode;
use crate::nn::TransformerDims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub gen_layers: usize,
    pub gen_d_model: usize,
    pub gen_heads: usize,
    pub gen_d_ff: usize,
    pub disc_layers: usize,
    pub disc_d_model: usize,
    pub disc_heads: usize,
    pub disc_d_ff: usize,
    /// Weight of the adversarial generator term.
    pub lambda_adv: f64,
    /// Weight of the cross-entropy term during fine-tuning; 0 gives a pure GAN objective.
    pub ce_weight: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub clip_norm: f64,
    pub ce_max_steps: u64,
    pub gan_max_steps: u64,
    /// Pretraining stops once the smoothed loss falls below this.
    pub ce_stop_loss: f64,
    pub max_seq_len: usize,
    pub max_instruction_len: usize,
    pub use_objects: bool,
    pub prefix_visible: bool,
    pub feed: FeedMode,
    pub pooling: Pooling,
    /// Checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub min_frequency: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 2e-4,
            batch_size: 6,
            gen_layers: 2,
            gen_d_model: 64,
            gen_heads: 4,
            gen_d_ff: 256,
            disc_layers: 2,
            disc_d_model: 64,
            disc_heads: 4,
            disc_d_ff: 256,
            lambda_adv: 1.0,
            ce_weight: 1.0,
            tau_start: 1.0,
            tau_end: 0.1,
            d_steps: 1,
            clip_norm: 1.0,
            ce_max_steps: 3000,
            gan_max_steps: 200,
            ce_stop_loss: 0.0,
            max_seq_len: 64,
            max_instruction_len: 24,
            use_objects: true,
            prefix_visible: false,
            feed: FeedMode::StraightThrough,
            pooling: Pooling::Cls,
            checkpoint_every: 0,
            min_frequency: 1,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        positive("tau_start", self.tau_start)?;
        positive("tau_end", self.tau_end)?;
        positive("clip_norm", self.clip_norm)?;
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be at least 1".into()));
        }
        if self.d_steps == 0 {
            return Err(CoreError::Config("d_steps must be at least 1".into()));
        }
        if !(self.lambda_adv >= 0.0) || !(self.ce_weight >= 0.0) || !(self.ce_stop_loss >= 0.0) {
            return Err(CoreError::Config(
                "lambda_adv, ce_weight and ce_stop_loss must be non-negative".into(),
            ));
        }
        for (name, d, h) in [
            ("gen", self.gen_d_model, self.gen_heads),
            ("disc", self.disc_d_model, self.disc_heads),
        ] {
            if d == 0 || h == 0 || d % h != 0 {
                return Err(CoreError::Config(format!(
                    "{name}_d_model={d} must be a positive multiple of {name}_heads={h}"
                )));
            }
        }
        if self.gen_layers == 0 || self.disc_layers == 0 || self.gen_d_ff == 0 || self.disc_d_ff == 0 {
            return Err(CoreError::Config("layer counts and d_ff must be positive".into()));
        }
        if self.max_seq_len == 0 || self.max_instruction_len == 0 || self.min_frequency == 0 {
            return Err(CoreError::Config(
                "max_seq_len, max_instruction_len and min_frequency must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let current = map
            .get(key)
            .ok_or_else(|| CoreError::Config(format!("unknown config key {key:?}")))?;
        let parsed = match current {
            Value::Bool(_) => value
                .parse::<bool>()
                .map(Value::Bool)
                .map_err(|_| CoreError::Config(format!("{key}: expected true or false, got {value:?}")))?,
            Value::Number(_) => {
                let n: Value = serde_json::from_str(value)
                    .map_err(|_| CoreError::Config(format!("{key}: expected a number, got {value:?}")))?;
                if !n.is_number() {
                    return Err(CoreError::Config(format!("{key}: expected a number, got {value:?}")));
                }
                n
            }
            _ => Value::String(value.to_string()),
        };
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| CoreError::Config(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CoreError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("override {o:?} is not key=value")))?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let map: Map<String, Value> = match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let mut out = String::new();
        for (k, v) in map {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn layout(&self) -> LayoutOptions {
        LayoutOptions {
            use_objects: self.use_objects,
            prefix_visible: self.prefix_visible,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn generator_dims(&self, vocab: usize, d_img: usize) -> TransformerDims {
        TransformerDims {
            layers: self.gen_layers,
            d_model: self.gen_d_model,
            heads: self.gen_heads,
            d_ff: self.gen_d_ff,
            vocab,
            max_seq_len: self.max_seq_len,
            d_img,
        }
    }

    pub fn discriminator_dims(&self, vocab: usize, d_img: usize) -> TransformerDims {
        TransformerDims {
            layers: self.disc_layers,
            d_model: self.disc_d_model,
            heads: self.disc_heads,
            d_ff: self.disc_d_ff,
            vocab,
            max_seq_len: self.max_seq_len,
            d_img,
        }
    }

    /// Gumbel temperature at fine-tuning step `s`.
    pub fn tau_at(&self, s: u64) -> f64 {
        if self.gan_max_steps == 0 {
            return self.tau_start;
        }
        let frac = (s as f64 / self.gan_max_steps as f64).min(1.0);
        self.tau_start * (self.tau_end / self.tau_start).powf(frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lr, 2e-4);
        assert_eq!(c.batch_size, 6);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("lambda_adv", "0.5").unwrap();
        c.set("feed", "soft").unwrap();
        c.set("use_objects", "false").unwrap();
        let mut d = TrainConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn precedence_override_beats_file() {
        let dir = std::env::temp_dir().join(format!("cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.cfg");
        std::fs::write(&p, "# comment\nlr = 0.001\nbatch_size = 3 # trailing\n").unwrap();
        let c = TrainConfig::resolve(Some(&p), &["lr=0.01".into()]).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.batch_size, 3);
        assert_eq!(c.seed, 0);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = TrainConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("batch_size", "x").is_err());
        assert!(c.set("batch_size", "-1").is_err());
        assert!(c.set("feed", "sideways").is_err());
        assert!(TrainConfig::resolve(None, &["tau_end=0".into()]).is_err());
        assert!(TrainConfig::resolve(None, &["batch_size=0".into()]).is_err());
    }

    #[test]
    fn tau_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(c.tau_at(0), 1.0);
        assert!((c.tau_at(c.gan_max_steps) - 0.1).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 0..=c.gan_max_steps {
            let t = c.tau_at(s);
            assert!(t <= prev);
            prev = t;
        }
    }
}
