//! Flat `key = value` run configuration. `#` starts a comment.

use std::path::{Path, PathBuf};

use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Extractor weights file replacing the built-in seeded extractor.
    pub extractor_weights: Option<PathBuf>,
    /// Keys set explicitly, in order.
    pub explicit: Vec<String>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for {key}")),
    }
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "base_channels" => m.base_channels = parse_value(key, value)?,
            "growth_rate" => m.growth_rate = parse_value(key, value)?,
            "num_ddb" => m.num_ddb = parse_value(key, value)?,
            "dilated_layers_per_ddb" => m.dilated_layers_per_ddb = parse_value(key, value)?,
            "iterations" => m.iterations = parse_value(key, value)?,
            "dilation" => m.dilation = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "lr0" => t.lr0 = parse_value(key, value)?,
            "decay_start_epoch" => t.decay_start_epoch = parse_value(key, value)?,
            "lr_floor" => t.lr_floor = parse_value(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse_value(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse_value(key, value)?,
            "adam_eps" => t.adam.eps = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "mu" => t.loss.mu = parse_value(key, value)?,
            "lambda" => t.loss.lambda = parse_value(key, value)?,
            "perceptual" => t.loss.perceptual_enabled = parse_bool(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "grad_clip" => {
                t.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "extractor_weights" => self.extractor_weights = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        self.explicit.push(key.to_string());
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.iter().any(|k| k == key)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }

    /// Every setting in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut lines = vec![
            format!("base_channels = {}", m.base_channels),
            format!("growth_rate = {}", m.growth_rate),
            format!("num_ddb = {}", m.num_ddb),
            format!("dilated_layers_per_ddb = {}", m.dilated_layers_per_ddb),
            format!("iterations = {}", m.iterations),
            format!("dilation = {}", m.dilation),
            format!("epochs = {}", t.epochs),
            format!("lr0 = {:e}", t.lr0),
            format!("decay_start_epoch = {}", t.decay_start_epoch),
            format!("lr_floor = {:e}", t.lr_floor),
            format!("adam_beta1 = {}", t.adam.beta1),
            format!("adam_beta2 = {}", t.adam.beta2),
            format!("adam_eps = {:e}", t.adam.eps),
            format!("batch_size = {}", t.batch_size),
            format!("seed = {}", t.seed),
            format!("mu = {}", t.loss.mu),
            format!("lambda = {}", t.loss.lambda),
            format!("perceptual = {}", t.loss.perceptual_enabled),
            format!("checkpoint_every = {}", t.checkpoint_every),
            format!(
                "grad_clip = {}",
                t.grad_clip.map_or_else(|| "none".to_string(), |c| c.to_string())
            ),
        ];
        if let Some(p) = &self.extractor_weights {
            lines.push(format!("extractor_weights = {}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_settings_and_comments() {
        let cfg =
            RunConfig::parse("# run\nbase_channels = 16\n\n growth_rate=8 # narrow\nperceptual = off\ngrad_clip = 5\n")
                .unwrap();
        assert_eq!(cfg.model.base_channels, 16);
        assert_eq!(cfg.model.growth_rate, 8);
        assert!(!cfg.train.loss.perceptual_enabled);
        assert_eq!(cfg.train.grad_clip, Some(5.0));
        assert!(cfg.is_explicit("growth_rate"));
        assert!(!cfg.is_explicit("epochs"));
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("epochs = 3\nlearning_rate = 1\n").unwrap_err();
        assert!(e.contains("line 2") && e.contains("learning_rate"), "{e}");
        assert!(RunConfig::parse("epochs 3").unwrap_err().contains("key = value"));
        assert!(RunConfig::parse("epochs = many").unwrap_err().contains("many"));
        assert!(RunConfig::parse("perceptual = maybe").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut cfg =
            RunConfig::parse("iterations = 3\nlr0 = 1e-3\nlambda = 0.25\nextractor_weights = w.fhdr\n").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        cfg.explicit.clear();
        assert_eq!(
            RunConfig {
                explicit: Vec::new(),
                ..back
            },
            cfg
        );
    }

    #[test]
    fn validation_rejects_bad_schedule() {
        let cfg = RunConfig::parse("epochs = 10\ndecay_start_epoch = 20").unwrap();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
