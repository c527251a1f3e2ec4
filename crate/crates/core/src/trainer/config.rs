use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LossConfig;
use crate::optim::AdamConfig;

/// How expression corrections are regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMode {
    Off,
    /// One regression per view from that view's image alone.
    SingleView,
    /// One regression from all training views of the timestamp.
    MultiView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub correction: CorrectionMode,
    pub bank: bool,
    pub texture: bool,
    /// Expression coefficients stay fixed at their initial values.
    pub freeze_expression: bool,
}

/// Named ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Freeze,
    SingleView,
    MultiViewO,
    MultiViewM,
    MultiViewT,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Freeze,
        Ablation::SingleView,
        Ablation::MultiViewO,
        Ablation::MultiViewM,
        Ablation::MultiViewT,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Freeze => "freeze",
            Ablation::SingleView => "single-view",
            Ablation::MultiViewO => "multi-view-o",
            Ablation::MultiViewM => "multi-view-m",
            Ablation::MultiViewT => "multi-view-t",
            Ablation::Full => "full",
        }
    }

    pub fn switches(self) -> Switches {
        let (correction, bank, texture) = match self {
            Ablation::Freeze => (CorrectionMode::Off, false, false),
            Ablation::SingleView => (CorrectionMode::SingleView, false, false),
            Ablation::MultiViewO => (CorrectionMode::MultiView, false, false),
            Ablation::MultiViewM => (CorrectionMode::MultiView, true, false),
            Ablation::MultiViewT => (CorrectionMode::MultiView, false, true),
            Ablation::Full => (CorrectionMode::MultiView, true, true),
        };
        Switches {
            correction,
            bank,
            texture,
            freeze_expression: self == Ablation::Freeze,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("ablation", format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
    pub translation: f64,
    /// Joint rotations and the global rotation.
    pub joints: f64,
    pub expression: f64,
    pub shape: f64,
    /// Correction encoder, attention and MLP.
    pub network: f64,
    /// Triplane and texture attention decoder.
    pub texture: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 5e-3,
            scale: 1.7e-2,
            rotation: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            translation: 1e-6,
            joints: 1e-5,
            expression: 1e-3,
            shape: 1e-6,
            network: 1e-3,
            texture: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub lr: LearningRates,
    /// Position learning rate at the final iteration, relative to the initial one.
    pub position_lr_final: f64,
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
    pub reanchor_start: usize,
    pub reanchor_interval: usize,
    /// Local-offset norm (triangle-frame units) beyond which a Gaussian is re-bound.
    pub reanchor_eps: f64,
    pub gaussians_per_triangle: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub switches: Switches,
    /// Let the texture branch's gradient reach the correction encoder. Off
    /// by default: the photometric pull through the texture competes with
    /// the expression regression sharing that encoder.
    pub texture_feature_grad: bool,
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            seed: 0,
            lr: LearningRates::default(),
            position_lr_final: 0.01,
            opacity_reset_interval: 500,
            opacity_reset_value: 0.01,
            reanchor_start: 30,
            reanchor_interval: 10,
            reanchor_eps: 1.0,
            gaussians_per_triangle: 1,
            sh_degree: 0,
            background: [0.0; 3],
            switches: Ablation::Full.switches(),
            texture_feature_grad: false,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_ablation(mut self, arm: Ablation) -> Self {
        self.switches = arm.switches();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [
            lr.position,
            lr.scale,
            lr.rotation,
            lr.opacity,
            lr.sh,
            lr.translation,
            lr.joints,
            lr.expression,
            lr.shape,
            lr.network,
            lr.texture,
        ];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("lr", "every learning rate must be positive"));
        }
        if !(self.position_lr_final > 0.0) {
            return Err(Error::invalid("position_lr_final", "must be positive"));
        }
        if self.opacity_reset_interval == 0 || self.reanchor_interval == 0 {
            return Err(Error::invalid("intervals", "must be at least 1"));
        }
        if self.gaussians_per_triangle == 0 {
            return Err(Error::invalid(
                "gaussians_per_triangle",
                "must be at least 1",
            ));
        }
        if self.sh_degree > 3 {
            return Err(Error::invalid("sh_degree", "must be at most 3"));
        }
        let s = &self.switches;
        if s.correction == CorrectionMode::Off && (s.bank || s.texture) {
            return Err(Error::invalid(
                "switches",
                "bank and texture need the correction path for features",
            ));
        }
        if s.correction != CorrectionMode::Off && s.freeze_expression {
            return Err(Error::invalid("switches", "freeze arm disables correction"));
        }
        Ok(())
    }

    /// Exponential decay reaching `position_lr_final` of the initial rate at the last iteration.
    pub fn position_lr(&self, iteration: usize) -> f64 {
        if self.iterations == 0 {
            return self.lr.position;
        }
        let gamma = self.position_lr_final.powf(1.0 / self.iterations as f64);
        self.lr.position * gamma.powf(iteration as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_lr_reaches_one_percent() {
        let c = TrainConfig {
            iterations: 2000,
            ..Default::default()
        };
        assert!((c.position_lr(2000) - 0.01 * c.lr.position).abs() < 1e-12);
        assert_eq!(c.position_lr(0), c.lr.position);
    }

    #[test]
    fn arms_parse_and_validate() {
        for arm in Ablation::ALL {
            assert_eq!(arm.name().parse::<Ablation>().unwrap(), arm);
            TrainConfig::default()
                .with_ablation(arm)
                .validate()
                .unwrap();
        }
        assert!("both".parse::<Ablation>().is_err());
        let mut bad = TrainConfig::default().with_ablation(Ablation::Freeze);
        bad.switches.texture = true;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig::default().with_ablation(Ablation::MultiViewT);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = serde_json::from_str(r#"{"iterations": 7}"#).unwrap();
        assert_eq!(partial.iterations, 7);
        assert_eq!(partial.lr.scale, 1.7e-2);
    }
}
