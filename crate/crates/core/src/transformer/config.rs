use std::fmt;
use std::str::FromStr;

use crate::error::{LabError, Result};
use crate::kv::{self, KvMap};
use crate::task_data::VOCAB_SIZE;

/// Position encoding scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeKind {
    Sinusoidal,
    NoPe,
    Rope,
    Alibi,
}

impl fmt::Display for PeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeKind::Sinusoidal => "sinusoidal",
            PeKind::NoPe => "nope",
            PeKind::Rope => "rope",
            PeKind::Alibi => "alibi",
        })
    }
}

impl FromStr for PeKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sinusoidal" | "sin" | "vanilla" => Ok(PeKind::Sinusoidal),
            "nope" | "none" => Ok(PeKind::NoPe),
            "rope" => Ok(PeKind::Rope),
            "alibi" => Ok(PeKind::Alibi),
            other => Err(LabError::Config(format!("unknown position encoding {other:?}"))),
        }
    }
}

/// Which decoder layers receive an external attention bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiasLayers {
    All,
    LastOnly,
}

impl fmt::Display for BiasLayers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasLayers::All => "all",
            BiasLayers::LastOnly => "last",
        })
    }
}

impl FromStr for BiasLayers {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(BiasLayers::All),
            "last" => Ok(BiasLayers::LastOnly),
            other => Err(LabError::Config(format!("unknown bias layer policy {other:?}"))),
        }
    }
}

/// Architecture and optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub pe: PeKind,
    /// Cyclic position indexing: positions become `i mod T`.
    pub cpi_period: Option<usize>,
    pub vocab_size: usize,
    pub bias_layers: BiasLayers,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 1,
            decoder_layers: 6,
            heads: 8,
            d_model: 128,
            d_ff: 512,
            dropout: 0.3,
            learning_rate: 1e-5,
            pe: PeKind::Sinusoidal,
            cpi_period: None,
            vocab_size: VOCAB_SIZE,
            bias_layers: BiasLayers::All,
            grad_clip: 1.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(LabError::Config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LabError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.pe == PeKind::Rope && (self.d_model / self.heads) % 2 != 0 {
            return Err(LabError::Config("RoPE needs an even head dimension".into()));
        }
        if self.cpi_period == Some(0) {
            return Err(LabError::Config("CPI period must be >= 1".into()));
        }
        if self.decoder_layers == 0 {
            return Err(LabError::Config("at least one decoder layer is required".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.insert("encoder_layers".into(), self.encoder_layers.to_string());
        m.insert("decoder_layers".into(), self.decoder_layers.to_string());
        m.insert("heads".into(), self.heads.to_string());
        m.insert("d_model".into(), self.d_model.to_string());
        m.insert("d_ff".into(), self.d_ff.to_string());
        m.insert("dropout".into(), self.dropout.to_string());
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("pe".into(), self.pe.to_string());
        m.insert(
            "cpi_period".into(),
            self.cpi_period.map_or("none".into(), |t| t.to_string()),
        );
        m.insert("vocab_size".into(), self.vocab_size.to_string());
        m.insert("bias_layers".into(), self.bias_layers.to_string());
        m.insert("grad_clip".into(), self.grad_clip.to_string());
        m.insert("init_seed".into(), self.init_seed.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_kv())
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let d = Self::default();
        let cpi = match m.get("cpi_period").map(String::as_str) {
            None | Some("none") => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| LabError::Config(format!("bad cpi_period {v:?}")))?,
            ),
        };
        let cfg = Self {
            encoder_layers: kv::get(m, "encoder_layers")?.unwrap_or(d.encoder_layers),
            decoder_layers: kv::get(m, "decoder_layers")?.unwrap_or(d.decoder_layers),
            heads: kv::get(m, "heads")?.unwrap_or(d.heads),
            d_model: kv::get(m, "d_model")?.unwrap_or(d.d_model),
            d_ff: kv::get(m, "d_ff")?.unwrap_or(d.d_ff),
            dropout: kv::get(m, "dropout")?.unwrap_or(d.dropout),
            learning_rate: kv::get(m, "learning_rate")?.unwrap_or(d.learning_rate),
            pe: kv::get(m, "pe")?.unwrap_or(d.pe),
            cpi_period: cpi,
            vocab_size: kv::get(m, "vocab_size")?.unwrap_or(d.vocab_size),
            bias_layers: kv::get(m, "bias_layers")?.unwrap_or(d.bias_layers),
            grad_clip: kv::get(m, "grad_clip")?.unwrap_or(d.grad_clip),
            init_seed: kv::get(m, "init_seed")?.unwrap_or(d.init_seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&kv::parse(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_architecture() {
        let c = ModelConfig::default();
        assert_eq!((c.encoder_layers, c.decoder_layers, c.heads), (1, 6, 8));
        assert_eq!((c.d_model, c.d_ff, c.vocab_size), (128, 512, 15));
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.learning_rate, 1e-5);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig {
            pe: PeKind::Rope,
            cpi_period: Some(3),
            bias_layers: BiasLayers::LastOnly,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn invalid_configs() {
        let bad_heads = ModelConfig { heads: 3, ..Default::default() };
        assert!(bad_heads.validate().is_err());
        let bad_dropout = ModelConfig { dropout: 1.0, ..Default::default() };
        assert!(bad_dropout.validate().is_err());
    }
}
