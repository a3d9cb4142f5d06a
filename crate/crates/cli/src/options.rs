//! Training options shared by `train` and `sweep`: read from a JSON file,
//! then overridden field by field by command-line flags.

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use frontcast::baselines::{BaselineConfig, BaselineKind};
use frontcast::checkpoint::{ModelSpec, OracleConfig};
use frontcast::grid::GridSpec;
use frontcast::loss::LossVariant;
use frontcast::model::ModelConfig;
use frontcast::train::TrainConfig;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ctp,
    Lstm,
    Convlstm,
    Clp,
    /// Replays the true frames of the data directory.
    Oracle,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainOptions {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<std::path::PathBuf>,

    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Start from the small desk-scale architecture instead of the full one.
    #[arg(long)]
    pub tiny: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// 1 = CE+MSE, 2 = MSE, 3 = CE+MAE, 4 = MAE.
    #[arg(long)]
    pub loss_variant: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub cnn_layers: Option<usize>,
    #[arg(long)]
    pub transformer_layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Front-only input and output.
    #[arg(long)]
    pub no_physics: bool,
    /// Same as `--cnn-layers 0`.
    #[arg(long)]
    pub no_cnn: bool,
    #[arg(long)]
    pub no_positional_encoding: bool,
    /// Velocities are divided by this before entering the network.
    #[arg(long)]
    pub velocity_scale: Option<f64>,

    /// Recurrent baselines only.
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,

    /// Fraction of windows, in time order, used for training.
    #[arg(long)]
    pub split: Option<f64>,
}

pub const DEFAULT_SPLIT: f64 = 0.8;

impl TrainOptions {
    /// Flags in `self` win over values from the file.
    pub fn merged_with(self, file: TrainOptions) -> TrainOptions {
        TrainOptions {
            config: self.config,
            model: self.model.or(file.model),
            tiny: self.tiny || file.tiny,
            batch_size: self.batch_size.or(file.batch_size),
            lr: self.lr.or(file.lr),
            epochs: self.epochs.or(file.epochs),
            loss_variant: self.loss_variant.or(file.loss_variant),
            seed: self.seed.or(file.seed),
            cnn_layers: self.cnn_layers.or(file.cnn_layers),
            transformer_layers: self.transformer_layers.or(file.transformer_layers),
            d_model: self.d_model.or(file.d_model),
            heads: self.heads.or(file.heads),
            d_ff: self.d_ff.or(file.d_ff),
            no_physics: self.no_physics || file.no_physics,
            no_cnn: self.no_cnn || file.no_cnn,
            no_positional_encoding: self.no_positional_encoding || file.no_positional_encoding,
            velocity_scale: self.velocity_scale.or(file.velocity_scale),
            hidden_size: self.hidden_size.or(file.hidden_size),
            num_layers: self.num_layers.or(file.num_layers),
            split: self.split.or(file.split),
        }
    }

    /// Loads `--config` when given and applies the flags on top.
    pub fn resolve_file(self) -> Result<TrainOptions, Failure> {
        match self.config.clone() {
            Some(path) => {
                let file: TrainOptions = read_json(&path)?;
                Ok(self.merged_with(file))
            }
            None => Ok(self),
        }
    }

    pub fn split(&self) -> Result<f64, Failure> {
        let s = self.split.unwrap_or(DEFAULT_SPLIT);
        if s > 0.0 && s < 1.0 {
            Ok(s)
        } else {
            Err(Failure::usage(format!("--split must be in (0, 1), got {s}")))
        }
    }

    /// Builds the model specification and training configuration, rejecting
    /// flag combinations that have no meaning for the chosen model.
    pub fn build(&self, grid: GridSpec, data_dir: &Path) -> Result<(ModelSpec, TrainConfig), Failure> {
        let kind = self.model.unwrap_or(ModelKind::Ctp);
        let variant = LossVariant::from_index(self.loss_variant.unwrap_or(1)).map_err(Failure::usage)?;
        let seed = self.seed.unwrap_or(0);
        if self.no_cnn && self.cnn_layers.is_some_and(|n| n > 0) {
            return Err(Failure::usage("--no-cnn conflicts with a positive --cnn-layers"));
        }
        let ctp_only = [
            (self.transformer_layers.is_some(), "--transformer-layers"),
            (self.d_model.is_some(), "--d-model"),
            (self.heads.is_some(), "--heads"),
            (self.d_ff.is_some(), "--d-ff"),
            (self.no_physics, "--no-physics"),
            (self.no_cnn, "--no-cnn"),
            (self.cnn_layers.is_some(), "--cnn-layers"),
            (self.no_positional_encoding, "--no-positional-encoding"),
        ];
        let recurrent_only = [(self.hidden_size.is_some(), "--hidden-size"), (self.num_layers.is_some(), "--num-layers")];
        let reject = |flags: &[(bool, &str)], model: &str| -> Result<(), Failure> {
            match flags.iter().find(|(set, _)| *set) {
                Some((_, flag)) => Err(Failure::usage(format!("{flag} does not apply to --model {model}"))),
                None => Ok(()),
            }
        };

        let (spec, default_lr) = match kind {
            ModelKind::Ctp => {
                reject(&recurrent_only, "ctp")?;
                let base = if self.tiny { ModelConfig::tiny(grid) } else { ModelConfig::paper(grid) };
                let cnn_layers = if self.no_cnn { 0 } else { self.cnn_layers.unwrap_or(base.cnn_layers) };
                if self.no_physics && variant != LossVariant::CeMse {
                    return Err(Failure::usage(format!(
                        "--no-physics predicts the front only, so loss variant {} (which adds velocity and physics terms with a different metric) is meaningless; use --loss-variant 1",
                        variant.index()
                    )));
                }
                let config = ModelConfig {
                    cnn_layers,
                    transformer_layers: self.transformer_layers.unwrap_or(base.transformer_layers),
                    d_model: self.d_model.unwrap_or(base.d_model),
                    heads: self.heads.unwrap_or(base.heads),
                    d_ff: self.d_ff.unwrap_or(base.d_ff),
                    use_physics: !self.no_physics,
                    positional_encoding: !self.no_positional_encoding,
                    velocity_scale: self.velocity_scale.unwrap_or(base.velocity_scale),
                    seed,
                    ..base
                };
                config.validate().map_err(Failure::usage)?;
                (ModelSpec::Ctp(config), TrainConfig::CTP_LEARNING_RATE)
            }
            ModelKind::Lstm | ModelKind::Convlstm | ModelKind::Clp => {
                let kind = match kind {
                    ModelKind::Lstm => BaselineKind::Lstm,
                    ModelKind::Convlstm => BaselineKind::ConvLstm,
                    _ => BaselineKind::Clp,
                };
                reject(&ctp_only, kind.name())?;
                if variant != LossVariant::CeMse {
                    return Err(Failure::usage(format!(
                        "--model {} trains with loss variant 1 only",
                        kind.name()
                    )));
                }
                let base = if self.tiny { BaselineConfig::tiny(kind, grid) } else { BaselineConfig::paper(kind, grid) };
                let config = BaselineConfig {
                    hidden_size: self.hidden_size.unwrap_or(base.hidden_size),
                    num_layers: self.num_layers.unwrap_or(base.num_layers),
                    learning_rate: self.lr.unwrap_or(base.learning_rate),
                    velocity_scale: self.velocity_scale.unwrap_or(base.velocity_scale),
                    seed,
                    ..base
                };
                config.validate().map_err(Failure::usage)?;
                (ModelSpec::Baseline(config), TrainConfig::RECURRENT_LEARNING_RATE)
            }
            ModelKind::Oracle => {
                reject(&ctp_only, "oracle")?;
                reject(&recurrent_only, "oracle")?;
                let data_dir = std::fs::canonicalize(data_dir)
                    .map_err(|e| Failure::usage(format!("{}: {e}", data_dir.display())))?;
                (ModelSpec::Oracle(OracleConfig { grid, data_dir }), 0.0)
            }
        };
        let paper = TrainConfig::paper();
        let train = TrainConfig {
            batch_size: self.batch_size.unwrap_or(paper.batch_size),
            learning_rate: self.lr.unwrap_or(default_lr),
            epochs: self.epochs.unwrap_or(paper.epochs),
            loss_variant: variant,
            seed,
        };
        train.validate().map_err(Failure::usage)?;
        Ok((spec, train))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}
