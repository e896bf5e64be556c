use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dopplerkit::commands::{ablate, eval, measure, simulate, sweep, train};
use dopplerkit::{with_workers, Result, RunConfig};

#[derive(Parser)]
#[command(name = "dopplerkit", version, about = "Doppler spectrogram segmentation and measurement pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.max_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Split repeat used by train, eval and ablate.
    #[arg(long, default_value_t = 0, global = true)]
    repeat: usize,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1, global = true)]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset with splits.
    Simulate,
    /// Train the segmentation network on one split repeat.
    Train,
    /// Score a checkpoint (or the ground-truth masks) on a split.
    Eval,
    /// Measure beats, Vmax, VTI and ED events on one mask.
    Measure,
    /// Compare baseline-shift robustness of two checkpoints.
    Ablate,
    /// Re-score saved ED events over a λ grid.
    Sweep,
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides)?,
        None => RunConfig::from_toml("", &cli.overrides)?,
    };
    let r = cli.repeat;
    with_workers(cli.workers, || match cli.command {
        Command::Simulate => {
            let dir = simulate::run(&cfg)?;
            println!("wrote {} cases to {}", cfg.simulate.n_cases, dir.display());
            Ok(())
        }
        Command::Train => {
            let rep = train::run(&cfg, r)?;
            let best = &rep.history[rep.best_epoch - 1];
            println!(
                "{} epochs, best epoch {} (val_seg_loss {:.6}); checkpoint in {}",
                rep.history.len(),
                rep.best_epoch,
                best.val_seg_loss,
                rep.out_dir.display()
            );
            Ok(())
        }
        Command::Eval => {
            let out = eval::run(&cfg, r)?;
            let p = &out.report.pooled;
            println!(
                "{} cases: foreground DSC {:.4}, IoU {:.4}, PCC vmax {:?} vti {:?}, TDR_measure {:?}, TDR_ED {:?}",
                out.report.n_cases,
                out.report.fg_dsc,
                out.report.fg_iou,
                p.pcc.vmax,
                p.pcc.vti,
                p.tdr_measure.rate,
                p.tdr_ed.rate
            );
            println!("reports in {}", out.out_dir.display());
            Ok(())
        }
        Command::Measure => {
            let report = measure::run(&cfg)?;
            print!("{}", measure::render(&report));
            Ok(())
        }
        Command::Ablate => {
            let (dir, _, s) = ablate::run(&cfg, r)?;
            println!("shift  n  aa_dvmax  plain_dvmax  aa_dvti  plain_dvti");
            for row in &s.shifts {
                println!(
                    "{:>5} {:>3} {:>9.4} {:>12.4} {:>8.4} {:>11.4}",
                    row.shift, row.n_cases, row.aa_mean_dvmax, row.plain_mean_dvmax, row.aa_mean_dvti, row.plain_mean_dvti
                );
            }
            println!(
                "AA lower on both measures for {}/{} cases; reports in {}",
                s.cases.aa_lower_both,
                s.cases.n_cases,
                dir.display()
            );
            Ok(())
        }
        Command::Sweep => {
            let (dir, curve) = sweep::run(&cfg)?;
            for (l, t) in &curve {
                println!("{l:.2} {}", t.map_or("-".into(), |v| format!("{v:.4}")));
            }
            println!("curve in {}", dir.display());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dopplerkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
