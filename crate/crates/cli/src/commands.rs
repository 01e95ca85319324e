//! Command-line surface.

use std::path::{Path, PathBuf};

use aecomm::ae::build_ae_with_dropout;
use aecomm::baseline::ConventionalLink;
use aecomm::gan::{augment_and_select, collect_frames, train_wgan_gp, GanDims, ReceiverConfig, Transmitter};
use aecomm::link::LinkSim;
use aecomm::quantize::quantize_model;
use aecomm::rng::{rng_from_seed, split_seed};
use aecomm::training::{train_with, TrainConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, System};
use crate::experiments::{export_constellation, export_conventional, frontier_snr_jsr, sweep_snr_ber};
use crate::modelfile::{load_model, save_model, StoredModel};
use crate::{csv, dataset};

#[derive(Debug, Parser)]
#[command(name = "aecomm", version, about = "Autoencoder OFDM link simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (`key = value` lines); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an autoencoder and save it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Per-epoch loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train a conditional WGAN-GP channel model on a frame dataset.
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Transmitter model when `system = ae`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train receivers on real plus synthetic frames and pick a multiplier.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Convert a float model to int8.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// BER and EVM over an SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Minimum SNR reaching the BER target per JSR.
    Frontier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Transmit constellation points.
    Constellation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Collect received frames through the configured channel.
    DatasetMake {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load(path: &Path) -> Result<StoredModel> {
    load_model(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn require<'a>(model: &'a Option<PathBuf>, cfg: &RunConfig) -> Result<&'a Path> {
    model
        .as_deref()
        .ok_or_else(|| anyhow!("`system = ae` needs --model (system is {:?})", cfg.system))
}

/// The link under test: a stored model for `system = ae`, the conventional
/// link otherwise.
fn link_sim(model: &Option<PathBuf>, cfg: &RunConfig) -> Result<Box<dyn LinkSim>> {
    Ok(match cfg.system {
        System::Conventional => Box::new(ConventionalLink::new(&cfg.link)?),
        System::Ae => match load(require(model, cfg)?)? {
            StoredModel::Float(m) => Box::new(m),
            StoredModel::Quantized(q) => Box::new(q),
            StoredModel::Gan(_) => bail!("a GAN cannot be simulated as a link"),
        },
    })
}

fn transmitter(model: &Option<PathBuf>, cfg: &RunConfig) -> Result<Box<dyn Transmitter>> {
    Ok(match cfg.system {
        System::Conventional => Box::new(ConventionalLink::new(&cfg.link)?),
        System::Ae => Box::new(load(require(model, cfg)?)?.into_float().map_err(|e| anyhow!(e))?),
    })
}

/// Training settings derived from the config and `--seed`.
pub fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        ch: cfg.ch,
        seed: split_seed(seed, 1),
        ..cfg.train.cfg.clone()
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, log } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut model = build_ae_with_dropout(
                &cfg.link,
                cfg.train.dropout,
                &mut rng_from_seed(split_seed(common.seed, 0)),
            )?;
            let tc = train_config(&cfg, common.seed);
            let history = train_with(&mut model, &tc, |e| {
                log::info!("epoch {} loss {:.5} val_ber {:?}", e.epoch, e.losses.total, e.val_ber)
            })?;
            save_model(&StoredModel::Float(model), &common.out)?;
            if let Some(path) = log {
                csv::write(&path, &csv::training(&history.epochs))?;
            }
        }
        Command::TrainGan { common, data, model } => {
            let cfg = load_config(common.config.as_deref())?;
            let tx = transmitter(&model, &cfg)?;
            let frames =
                dataset::load_dataset(&data).with_context(|| format!("cannot load dataset {}", data.display()))?;
            let gan_data = frames.to_gan_data(tx.as_ref())?;
            let gcfg = aecomm::gan::GanConfig {
                seed: common.seed,
                ..cfg.gan.clone()
            };
            let (gan, hist) = train_wgan_gp(&gan_data, GanDims::for_link(tx.link_config()), &gcfg)?;
            if let Some(last) = hist.epochs.last() {
                log::info!(
                    "final critic loss {:.4}, gradient penalty {:.4}",
                    last.critic_loss,
                    last.gp
                );
            }
            save_model(&StoredModel::Gan(gan), &common.out)?;
        }
        Command::Augment {
            common,
            data,
            gan,
            model,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let tx = transmitter(&model, &cfg)?;
            let real =
                dataset::load_dataset(&data).with_context(|| format!("cannot load dataset {}", data.display()))?;
            let gan = load(&gan)?.into_gan().map_err(|e| anyhow!(e))?;
            let rcfg = ReceiverConfig {
                seed: split_seed(common.seed, 0),
                ..cfg.augment.receiver.clone()
            };
            let report = augment_and_select(
                &real,
                &gan,
                tx.as_ref(),
                &cfg.ch,
                &cfg.augment.multipliers,
                &rcfg,
                cfg.augment.val_frames,
                split_seed(common.seed, 1),
            )?;
            csv::write(&common.out, &csv::augment(&report.table, report.best))?;
        }
        Command::Quantize { common, model } => {
            let m = load(&model)?.into_float().map_err(|e| anyhow!(e))?;
            save_model(&StoredModel::Quantized(quantize_model(&m)?), &common.out)?;
        }
        Command::Sweep { common, model } => {
            let cfg = load_config(common.config.as_deref())?;
            let sim = link_sim(&model, &cfg)?;
            let jam = cfg.test_jammer();
            let rows = sweep_snr_ber(sim.as_ref(), &cfg.ch, jam.as_ref(), &cfg.sweep, common.seed)?;
            csv::write(&common.out, &csv::sweep(&rows))?;
        }
        Command::Frontier { common, model } => {
            let cfg = load_config(common.config.as_deref())?;
            let sim = link_sim(&model, &cfg)?;
            let jam = cfg.test_jammer();
            let rows = frontier_snr_jsr(sim.as_ref(), &cfg.ch, jam.as_ref(), &cfg.frontier, common.seed)?;
            csv::write(&common.out, &csv::frontier(&rows))?;
        }
        Command::Constellation { common, model } => {
            let cfg = load_config(common.config.as_deref())?;
            let points = match cfg.system {
                System::Conventional => export_conventional(
                    &ConventionalLink::new(&cfg.link)?.spec,
                    cfg.constellation_snr_db,
                    common.seed,
                )?,
                System::Ae => export_constellation(
                    transmitter(&model, &cfg)?.as_ref(),
                    cfg.constellation_snr_db,
                    common.seed,
                )?,
            };
            csv::write(&common.out, &csv::constellation(&points))?;
        }
        Command::DatasetMake { common, model } => {
            let cfg = load_config(common.config.as_deref())?;
            let tx = transmitter(&model, &cfg)?;
            let set = collect_frames(tx.as_ref(), &cfg.ch, cfg.dataset_frames, common.seed)?;
            dataset::save_dataset(&set, &common.out)?;
        }
    }
    Ok(())
}

/// Worker count from `AECOMM_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("AECOMM_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Parses `argv` and runs the command, returning the process exit code:
/// 0 on success, 2 on usage errors, 1 on anything else.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit() {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(p) => p.install(|| execute(cli)),
        Err(e) => Err(anyhow!("cannot start worker pool: {e}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
