//! Flat `key = value` experiment configuration.

use std::collections::HashSet;
use std::path::Path;

use aecomm::ae::DROPOUT_RATE;
use aecomm::gan::{GanConfig, ReceiverConfig};
use aecomm::nn::AdamConfig;
use aecomm::phy::{ChannelParams, JammerParams, LinkConfig, MimoChannelModel};
use aecomm::training::TrainConfig;

use crate::experiments::{FrontierSpec, SweepMetric, SweepSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    Value { line: usize, key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum System {
    #[default]
    Ae,
    Conventional,
}

/// Training options beyond [`TrainConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub cfg: TrainConfig,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSection {
    pub multipliers: Vec<usize>,
    pub val_frames: usize,
    pub receiver: ReceiverConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: System,
    pub link: LinkConfig,
    pub ch: ChannelParams,
    /// Test-time jammer; `enabled = false` means none.
    pub jam: JammerParams,
    pub train: TrainSection,
    pub gan: GanConfig,
    pub sweep: SweepSpec,
    pub frontier: FrontierSpec,
    pub augment: AugmentSection,
    pub dataset_frames: usize,
    /// Noise added to exported constellation points; `None` exports the
    /// clean encoder output.
    pub constellation_snr_db: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: System::Ae,
            link: LinkConfig::default(),
            ch: ChannelParams::default(),
            jam: JammerParams::default(),
            train: TrainSection {
                cfg: TrainConfig::default(),
                dropout: DROPOUT_RATE,
            },
            gan: GanConfig::default(),
            sweep: SweepSpec::default(),
            frontier: FrontierSpec::default(),
            augment: AugmentSection {
                multipliers: vec![0, 1, 2, 4, 8, 16],
                val_frames: 2000,
                receiver: ReceiverConfig::default(),
            },
            dataset_frames: 100,
            constellation_snr_db: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Unset keys keep their defaults; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("`{key}` set twice"),
                });
            }
            cfg.set(key, value).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                },
                SetError::Bad(msg) => ConfigError::Value {
                    line,
                    key: key.to_string(),
                    msg,
                },
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), SetError> {
        let t = &mut self.train.cfg;
        let a = &mut self.augment;
        match key {
            "system" => {
                self.system = match v {
                    "ae" => System::Ae,
                    "conventional" => System::Conventional,
                    _ => return Err(SetError::Bad("expected ae or conventional".into())),
                }
            }
            "link.n_fft" => self.link.n_fft = num(v)?,
            "link.n_cp" => self.link.n_cp = num(v)?,
            "link.k" => self.link.k = num(v)?,
            "link.n_ch" => self.link.n_ch = num(v)?,
            "link.hidden" => self.link.hidden = num(v)?,
            "link.n_t" => self.link.n_t = num(v)?,
            "link.n_r" => self.link.n_r = num(v)?,
            "ch.snr_db" => self.ch.snr_db = num(v)?,
            "ch.phase_offset_deg" => self.ch.phase_offset_deg = num(v)?,
            "ch.freq_offset_norm" => self.ch.freq_offset_norm = num(v)?,
            "ch.impairments" => self.ch.impairments_enabled = flag(v)?,
            "ch.mimo" => {
                self.ch.mimo = match v {
                    "per-frame" => MimoChannelModel::RayleighPerFrame,
                    "identity" => MimoChannelModel::Identity,
                    "block" => MimoChannelModel::BlockRayleigh { seed: 0 },
                    _ => match v.strip_prefix("block:") {
                        Some(s) => MimoChannelModel::BlockRayleigh { seed: num(s)? },
                        None => {
                            return Err(SetError::Bad(
                                "expected block, block:<seed>, per-frame or identity".into(),
                            ))
                        }
                    },
                }
            }
            "jam.enabled" => self.jam.enabled = flag(v)?,
            "jam.jsr_db" => self.jam.jsr_db = num(v)?,
            "jam.n_jam_symbols" => self.jam.n_jam_symbols = num(v)?,
            "jam.phase_steps" => self.jam.phase_steps = num(v)?,
            "train.n_ep" => t.n_ep = num(v)?,
            "train.n_batches" => t.n_batches = num(v)?,
            "train.batch_size" => t.batch_size = num(v)?,
            "train.n_it" => t.n_it = num(v)?,
            "train.n_rs" => t.n_rs = num(v)?,
            "train.sigma" => t.sigma = num(v)?,
            "train.lr" => t.adam.alpha = num(v)?,
            "train.val_frames" => t.val_frames = num(v)?,
            "train.dropout" => self.train.dropout = num(v)?,
            "train.jam" => {
                t.train_jam = match v {
                    "none" => None,
                    _ => {
                        let (jsr, n) = v
                            .split_once('/')
                            .ok_or_else(|| SetError::Bad("expected none or <jsr_db>/<symbols>".into()))?;
                        Some(JammerParams::tone(num(jsr.trim())?, num(n.trim())?))
                    }
                }
            }
            "gan.z_dim" => self.gan.z_dim = num(v)?,
            "gan.gen_hidden" => self.gan.gen_hidden = num(v)?,
            "gan.critic_hidden" => self.gan.critic_hidden = num(v)?,
            "gan.critic_dropout" => self.gan.critic_dropout = num(v)?,
            "gan.leaky_slope" => self.gan.leaky_slope = num(v)?,
            "gan.lambda_gp" => self.gan.lambda_gp = num(v)?,
            "gan.critic_iters" => self.gan.critic_iters = num(v)?,
            "gan.lr" => self.gan.adam.alpha = num(v)?,
            "gan.beta1" => self.gan.adam.beta1 = num(v)?,
            "gan.beta2" => self.gan.adam.beta2 = num(v)?,
            "gan.epochs" => self.gan.epochs = num(v)?,
            "gan.batch_size" => self.gan.batch_size = num(v)?,
            "gan.ema" => self.gan.gen_ema = num(v)?,
            "sweep.snr_grid" => self.sweep.snr_grid_db = grid(v)?,
            "sweep.n_frames" => self.sweep.n_frames = num(v)?,
            "sweep.min_errors" => self.sweep.min_errors = num(v)?,
            "sweep.metric" => {
                self.sweep.metric = match v {
                    "ber" => SweepMetric::Ber,
                    "evm-ber" => SweepMetric::EvmBer,
                    _ => return Err(SetError::Bad("expected ber or evm-ber".into())),
                }
            }
            "frontier.jsr_grid" => self.frontier.jsr_grid_db = grid(v)?,
            "frontier.ber_target" => self.frontier.ber_target = num(v)?,
            "frontier.snr_lo" => self.frontier.snr_range_db.0 = num(v)?,
            "frontier.snr_hi" => self.frontier.snr_range_db.1 = num(v)?,
            "frontier.snr_step" => self.frontier.snr_step_db = num(v)?,
            "frontier.n_te_jam" => self.frontier.n_te_jam = num(v)?,
            "frontier.n_frames" => self.frontier.n_frames = num(v)?,
            "frontier.strict" => self.frontier.strict = flag(v)?,
            "augment.multipliers" => a.multipliers = list(v)?,
            "augment.val_frames" => a.val_frames = num(v)?,
            "augment.steps" => a.receiver.steps = num(v)?,
            "augment.batch_size" => a.receiver.batch_size = num(v)?,
            "augment.dropout" => a.receiver.dropout = num(v)?,
            "augment.lr" => {
                a.receiver.adam = AdamConfig {
                    alpha: num(v)?,
                    ..a.receiver.adam
                }
            }
            "dataset.n_frames" => self.dataset_frames = num(v)?,
            "constellation.snr_db" => {
                self.constellation_snr_db = match v {
                    "none" => None,
                    _ => Some(num(v)?),
                }
            }
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Test-time jammer, if enabled.
    pub fn test_jammer(&self) -> Option<JammerParams> {
        self.jam.enabled.then_some(self.jam)
    }
}

enum SetError {
    Unknown,
    Bad(String),
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, SetError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| SetError::Bad(e.to_string()))
}

fn flag(v: &str) -> Result<bool, SetError> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(SetError::Bad("expected true or false".into())),
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, SetError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| num(s.trim())).collect()
}

/// Comma list, or `lo:step:hi` with both ends included.
fn grid(v: &str) -> Result<Vec<f64>, SetError> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [lo, step, hi] => {
            let (lo, step, hi): (f64, f64, f64) = (num(lo)?, num(step)?, num(hi)?);
            if !(step > 0.0) || hi < lo {
                return Err(SetError::Bad("range needs lo <= hi and step > 0".into()));
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| lo + i as f64 * step).collect())
        }
        [_] => list(v),
        _ => Err(SetError::Bad("expected a comma list or lo:step:hi".into())),
    }
}
