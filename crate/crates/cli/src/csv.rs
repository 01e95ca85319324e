//! CSV emission. Reals use 17 significant digits so they parse back to the
//! same f64.

use std::fmt::Write as _;
use std::path::Path;

use aecomm::training::EpochRecord;
use anyhow::Context;

use crate::experiments::{ConstellationPoint, FrontierRow, SweepRow};

pub const SWEEP_HEADER: &str = "snr_db,ber,evm_pct,frames";
pub const FRONTIER_HEADER: &str = "jsr_db,min_snr_db,reachable";
pub const CONSTELLATION_HEADER: &str = "i,q,bits";
pub const TRAIN_HEADER: &str = "epoch,loss_ae,loss_it,loss_rs,loss_total,val_ber";
pub const AUGMENT_HEADER: &str = "multiplier,ber,selected";

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub fn sweep(rows: &[SweepRow]) -> String {
    table(
        SWEEP_HEADER,
        rows.iter()
            .map(|r| format!("{},{},{},{}", real(r.snr_db), real(r.ber), real(r.evm_pct), r.frames)),
    )
}

/// Unreachable rows carry `nan` and `false`.
pub fn frontier(rows: &[FrontierRow]) -> String {
    table(
        FRONTIER_HEADER,
        rows.iter().map(|r| {
            let snr = r.min_snr_db.map_or_else(|| "nan".to_string(), real);
            format!("{},{snr},{}", real(r.jsr_db), r.min_snr_db.is_some())
        }),
    )
}

pub fn constellation(points: &[ConstellationPoint]) -> String {
    table(
        CONSTELLATION_HEADER,
        points.iter().map(|p| format!("{},{},{}", real(p.i), real(p.q), p.bits)),
    )
}

/// Epochs without validation leave `val_ber` empty.
pub fn training(epochs: &[EpochRecord]) -> String {
    table(
        TRAIN_HEADER,
        epochs.iter().map(|e| {
            let l = &e.losses;
            let mut s = format!(
                "{},{},{},{},{},",
                e.epoch,
                real(l.ae),
                real(l.it),
                real(l.rs),
                real(l.total)
            );
            if let Some(v) = e.val_ber {
                let _ = write!(s, "{}", real(v));
            }
            s
        }),
    )
}

pub fn augment(table_rows: &[(usize, f64)], best: usize) -> String {
    table(
        AUGMENT_HEADER,
        table_rows
            .iter()
            .map(|&(m, ber)| format!("{m},{},{}", real(ber), m == best)),
    )
}

pub fn write(path: &Path, content: &str) -> anyhow::Result<()> {
    std::fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))
}
