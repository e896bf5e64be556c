use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use dopplerkit_core::formats::fmt_f64;
use dopplerkit_core::net::{checkpoint, train_with, EpochStats, Model, Sample};
use serde::Serialize;

use super::{create_dir, csv_bytes};
use crate::config::{RunConfig, SplitPart};
use crate::dataset::{write_bytes, Dataset, LoadedCase};
use crate::error::Result;

pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const LOG: &str = "train.log";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub model: Model,
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: String,
    val_seg_loss: String,
}

pub fn samples(cases: &[LoadedCase], input_hw: (usize, usize)) -> Result<Vec<Sample>> {
    cases
        .iter()
        .map(|c| Ok(Sample::from_case(&c.image, &c.mask, c.flow_type().index(), input_hw)?))
        .collect()
}

/// Trains on split repeat `repeat` and writes the checkpoint of the best
/// validation epoch, the loss history, a wall-clock log and the config.
pub fn run(cfg: &RunConfig, repeat: usize) -> Result<TrainReport> {
    let t = &cfg.train;
    let data = Dataset::open(&t.data_dir)?;
    let hw = cfg.network.input_hw;
    let train_set = samples(&data.load_many(&data.ids(repeat, SplitPart::Train)?)?, hw)?;
    let val_set = samples(&data.load_many(&data.ids(repeat, SplitPart::Val)?)?, hw)?;
    let model = Model::build(cfg.network.clone(), t.model_seed)?;

    create_dir(&t.out_dir)?;
    cfg.echo(&t.out_dir)?;
    let start = Instant::now();
    let mut log = String::new();
    let outcome = train_with(model, &train_set, &val_set, &t.params(), |s| {
        let _ = writeln!(
            log,
            "epoch {} train_loss {} val_seg_loss {} elapsed {:.1}s",
            s.epoch,
            fmt_f64(s.train_loss),
            fmt_f64(s.val_seg_loss),
            start.elapsed().as_secs_f64()
        );
    });
    // The log is written even when training fails part-way.
    write_bytes(&t.out_dir.join(LOG), log.as_bytes())?;
    let outcome = outcome?;

    checkpoint::save(&outcome.model, &t.out_dir.join(CHECKPOINT))?;
    let rows = outcome.history.iter().map(|s| HistoryRow {
        epoch: s.epoch,
        train_loss: fmt_f64(s.train_loss),
        val_seg_loss: fmt_f64(s.val_seg_loss),
    });
    write_bytes(&t.out_dir.join(HISTORY), &csv_bytes(rows)?)?;
    Ok(TrainReport {
        out_dir: t.out_dir.clone(),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        model: outcome.model,
    })
}
