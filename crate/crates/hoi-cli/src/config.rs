//! Run configuration: one TOML file covering every module, with defaults
//! sized for a laptop-class run. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use hoi_core::diff::nn::NetConfig;
use hoi_core::eval::MatcherConfig;
use hoi_core::geometry::{ContactThresholds, GeoWeights};
use hoi_core::kinematics::{GeneratorConfig, ScriptKind};
use hoi_core::lm::LmConfig;
use hoi_core::toktrain::TokTrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorSection,
    pub tokenizer: TokenizerSection,
    pub lm: LmSection,
    pub matcher: MatcherSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub objects: Vec<String>,
    pub scripts: Vec<String>,
    pub sequences: usize,
    /// Sequences reserved for held-out evaluation (taken from the end).
    pub holdout: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise: f64,
    pub fps: f64,
    pub point_cloud_size: usize,
    pub min_surface_samples: usize,
    pub contact_clearance: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorSection {
            objects: g.objects.clone(),
            scripts: vec![
                "approach".into(),
                "grasp".into(),
                "lift".into(),
                "rotate".into(),
                "pass".into(),
                "open_lid".into(),
            ],
            sequences: 60,
            holdout: 12,
            min_frames: g.min_frames,
            max_frames: g.max_frames,
            noise: g.noise,
            fps: g.fps,
            point_cloud_size: g.point_cloud_size,
            min_surface_samples: g.min_surface_samples,
            contact_clearance: g.contact_clearance,
        }
    }
}

pub fn parse_script(name: &str) -> Result<ScriptKind, String> {
    match name {
        "approach" => Ok(ScriptKind::Approach),
        "grasp" => Ok(ScriptKind::Grasp),
        "lift" => Ok(ScriptKind::Lift),
        "rotate" => Ok(ScriptKind::Rotate),
        "pass" => Ok(ScriptKind::Pass),
        "open_lid" | "open-lid" | "open" => Ok(ScriptKind::OpenLid),
        other => Err(format!("unknown script '{other}'")),
    }
}

impl GeneratorSection {
    pub fn to_core(&self) -> Result<GeneratorConfig, String> {
        let scripts = self
            .scripts
            .iter()
            .map(|s| parse_script(s))
            .collect::<Result<Vec<_>, _>>()?;
        if self.holdout >= self.sequences {
            return Err(format!(
                "holdout {} must be smaller than sequences {}",
                self.holdout, self.sequences
            ));
        }
        Ok(GeneratorConfig {
            objects: self.objects.clone(),
            scripts,
            sequences: self.sequences,
            min_frames: self.min_frames,
            max_frames: self.max_frames,
            noise: self.noise,
            fps: self.fps,
            point_cloud_size: self.point_cloud_size,
            min_surface_samples: self.min_surface_samples,
            contact_clearance: self.contact_clearance,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub lambda_pen: f64,
    pub beta_c: f64,
    pub gamma_r: f64,
    pub phi_approach: f64,
    pub tau_contact: f64,
    pub mask_prob: f64,
    pub learning_rate: f64,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub latent_dim: usize,
    pub window: usize,
    pub hidden: usize,
    pub point_hidden: usize,
    pub handedness_dim: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            // Desk-scale default; the reference regime trains for 2000.
            epochs: 200,
            batch_size: 32,
            alpha: 0.5,
            lambda_pen: 0.2,
            beta_c: 0.5,
            gamma_r: 1.0,
            phi_approach: 0.02,
            tau_contact: 0.005,
            mask_prob: 0.15,
            learning_rate: 2e-4,
            codebook_size: 512,
            ema_decay: 0.99,
            latent_dim: 64,
            window: 4,
            hidden: 256,
            point_hidden: 64,
            handedness_dim: 8,
        }
    }
}

impl TokenizerSection {
    pub fn to_core(&self, seed: u64) -> TokTrainConfig {
        TokTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            geo_weights: GeoWeights {
                lambda_pen: self.lambda_pen,
                beta_c: self.beta_c,
                gamma_r: self.gamma_r,
            },
            thresholds: ContactThresholds {
                phi_approach: self.phi_approach,
                tau_contact: self.tau_contact,
            },
            mask_prob: self.mask_prob,
            learning_rate: self.learning_rate,
            codebook_size: self.codebook_size,
            ema_decay: self.ema_decay,
            net: self.net_config(seed),
            seed,
        }
    }

    pub fn net_config(&self, seed: u64) -> NetConfig {
        NetConfig {
            latent_dim: self.latent_dim,
            window: self.window,
            hidden: self.hidden,
            point_hidden: self.point_hidden,
            handedness_dim: self.handedness_dim,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub context: usize,
    pub learning_rate: f64,
    pub tune_epochs: usize,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub batch_size: usize,
    pub span_rate: f64,
    pub mean_span: f64,
    pub supervised_ratio: f64,
    /// Cap on training sequences used to build the tuning dataset.
    pub tune_sequences: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            width: 128,
            layers: 4,
            heads: 4,
            ffn: 256,
            context: 512,
            learning_rate: 2e-4,
            tune_epochs: 100,
            pretrain_steps: 400,
            pretrain_batch: 4,
            batch_size: 8,
            span_rate: 0.15,
            mean_span: 3.0,
            supervised_ratio: 0.5,
            tune_sequences: 12,
        }
    }
}

impl LmSection {
    pub fn to_core(&self, seed: u64) -> LmConfig {
        LmConfig {
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            ffn: self.ffn,
            context: self.context,
            learning_rate: self.learning_rate,
            tune_epochs: self.tune_epochs,
            pretrain_steps: self.pretrain_steps,
            pretrain_batch: self.pretrain_batch,
            batch_size: self.batch_size,
            span_rate: self.span_rate,
            mean_span: self.mean_span,
            supervised_ratio: self.supervised_ratio,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherSection {
    pub feature_dim: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for MatcherSection {
    fn default() -> Self {
        let m = MatcherConfig::default();
        MatcherSection {
            feature_dim: m.feature_dim,
            hidden: m.hidden,
            input_dim: m.input_dim,
            temperature: m.temperature,
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
        }
    }
}

impl MatcherSection {
    pub fn to_core(&self, seed: u64) -> MatcherConfig {
        MatcherConfig {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            input_dim: self.input_dim,
            temperature: self.temperature,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub diversity_pairs: usize,
    pub r_batch: usize,
    pub r_batches: usize,
    pub mmodality_prompts: usize,
    pub mmodality_generations: usize,
    pub top_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            diversity_pairs: 100,
            r_batch: 32,
            r_batches: 100,
            mmodality_prompts: 6,
            mmodality_generations: 4,
            top_k: 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_rejected() {
        let cfg = RunConfig::default();
        let text = cfg.echo_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.tokenizer.epochs, cfg.tokenizer.epochs);

        let bad = "nonsense_key = 5\n";
        assert!(toml::from_str::<RunConfig>(bad).is_err());
        let bad_nested = "[tokenizer]\nnot_a_field = 1\n";
        assert!(toml::from_str::<RunConfig>(bad_nested).is_err());
    }

    #[test]
    fn script_parsing() {
        assert_eq!(parse_script("open_lid").unwrap(), ScriptKind::OpenLid);
        assert!(parse_script("fly").is_err());
    }
}
