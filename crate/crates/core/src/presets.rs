//! Per-dataset default hyperparameters.

use serde::{Deserialize, Serialize};

use crate::model::{Activation, ModelConfig, Variant, WeightInit};
use crate::train::TrainConfig;

/// Depth from which the deep-model residual strength applies.
pub const DEEP_FROM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cora,
    Pubmed,
    Other,
}

impl DatasetKind {
    /// Recognize a dataset from its name or directory (`data/cora` → Cora).
    pub fn from_name(name: &str) -> Self {
        let base = std::path::Path::new(name)
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or(name)
            .to_ascii_lowercase();
        match base.as_str() {
            "cora" => DatasetKind::Cora,
            "pubmed" => DatasetKind::Pubmed,
            _ => DatasetKind::Other,
        }
    }

    pub fn c_min(self, k_layers: usize) -> f64 {
        let deep = k_layers >= DEEP_FROM;
        match self {
            DatasetKind::Pubmed if deep => 0.11,
            DatasetKind::Pubmed => 0.12,
            _ if deep => 0.15,
            _ => 0.2,
        }
    }

    /// (α, β) with α + β = c_min. Pubmed uses the initial residual only; the
    /// others keep β at 0.1 (or c_min when smaller) and put the rest on α.
    pub fn residual_split(self, c_min: f64) -> (f64, f64) {
        match self {
            DatasetKind::Pubmed => (0.0, c_min),
            _ => {
                let beta = c_min.min(0.1);
                (c_min - beta, beta)
            }
        }
    }

    fn train_defaults(self) -> TrainConfig {
        match self {
            DatasetKind::Pubmed => TrainConfig { lr: 1e-2, ..Default::default() },
            _ => TrainConfig::default(),
        }
    }

    fn dropout(self) -> f64 {
        match self {
            DatasetKind::Pubmed => 0.5,
            _ => 0.6,
        }
    }
}

/// Model and training defaults for a variant on a dataset at depth K.
pub fn preset(dataset: DatasetKind, variant: Variant, k_layers: usize) -> (ModelConfig, TrainConfig) {
    let mut train = dataset.train_defaults();
    let base = ModelConfig {
        variant,
        k_layers,
        dropout: dataset.dropout(),
        ..Default::default()
    };
    let model = match variant {
        Variant::Egnn => {
            let c_min = dataset.c_min(k_layers);
            let (alpha, beta) = dataset.residual_split(c_min);
            ModelConfig {
                c_min,
                alpha,
                beta,
                gamma: 20.0,
                b_init: -10.0,
                c_max: 1.0,
                ..base
            }
        }
        Variant::Gcn => {
            train.trunk_weight_decay = true;
            ModelConfig {
                c_min: 0.0,
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                activation: Activation::Relu,
                weight_init: WeightInit::Glorot,
                ..base
            }
        }
        Variant::Sgc => ModelConfig {
            c_min: 0.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            activation: Activation::Linear,
            ..base
        },
    };
    (model, train)
}
