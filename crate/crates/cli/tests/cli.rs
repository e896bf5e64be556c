use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dopplerkit::commands::{ablate, eval, measure, simulate, sweep, train};
use dopplerkit::config::SplitPart;
use dopplerkit::dataset::{case_stem, mask_file, sidecar_file, Dataset};
use dopplerkit::RunConfig;
use dopplerkit_core::formats::{Pgm, Sidecar};
use dopplerkit_core::image::{FlowClass, SegMask};
use dopplerkit_core::measure::Calibration;
use dopplerkit_core::flow::FlowType;
use dopplerkit_core::net::{checkpoint, segmentation_loss};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dopplerkit"))
}

fn small_config(root: &Path, n_cases: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.simulate.out_dir = root.join("data");
    cfg.simulate.n_cases = n_cases;
    cfg.simulate.n_repeats = 2;
    cfg.network.base_channels = 2;
    cfg.train.data_dir = root.join("data");
    cfg.train.out_dir = root.join("run");
    cfg.train.batch_size = 4;
    cfg.train.max_epochs = 2;
    cfg.eval.data_dir = root.join("data");
    cfg.eval.checkpoint = root.join("run/model.ckpt");
    cfg.eval.out_dir = root.join("eval");
    cfg.sweep.ed_file = root.join("eval/ed.json");
    cfg.sweep.out_dir = root.join("sweep");
    cfg.ablate.data_dir = root.join("data");
    cfg.ablate.out_dir = root.join("ablate");
    cfg
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn simulate_writes_three_files_per_case_plus_manifest_and_splits() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), 10);
    simulate::run(&cfg).unwrap();
    let files = dir_files(&cfg.simulate.out_dir);
    // three files per case, plus the manifest and the split plan
    assert_eq!(files.len(), 10 * 3 + 2);
    assert!(files.iter().any(|(n, _)| n == "manifest.json"));
    assert!(files.iter().any(|(n, _)| n == "splits.json"));
    // nothing left over from staging
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);

    let again = tmp.path().join("again");
    let mut cfg2 = cfg.clone();
    cfg2.simulate.out_dir = again.clone();
    simulate::run(&cfg2).unwrap();
    let a = dir_files(&cfg.simulate.out_dir);
    let b = dir_files(&again);
    // the manifest echoes the output path, everything else is identical
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na != "manifest.json" {
            assert!(ba == bb, "{na} differs between runs");
        }
    }
    // rerunning into the same directory replaces it with identical bytes
    simulate::run(&cfg).unwrap();
    assert_eq!(dir_files(&cfg.simulate.out_dir), a);
}

#[test]
fn simulate_output_does_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), 9);
    let one = dopplerkit::with_workers(1, || simulate::run(&cfg)).unwrap();
    let a = dir_files(&one);
    dopplerkit::with_workers(3, || simulate::run(&cfg)).unwrap();
    assert_eq!(dir_files(&one), a);
}

#[test]
fn simulated_files_round_trip_byte_exactly() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), 7);
    let dir = simulate::run(&cfg).unwrap();
    for id in 0..7 {
        let stem = case_stem(id);
        let mask_bytes = fs::read(dir.join(mask_file(&stem))).unwrap();
        let mask = Pgm::from_bytes(&mask_bytes).unwrap().into_mask().unwrap();
        assert!(mask.labels.iter().all(|&l| l <= 2));
        assert_eq!(Pgm::from_mask(&mask).to_bytes(), mask_bytes);
        let side_bytes = fs::read(dir.join(sidecar_file(&stem))).unwrap();
        assert_eq!(Sidecar::from_bytes(&side_bytes).unwrap().to_bytes().unwrap(), side_bytes);
    }
}

#[test]
fn simulate_refuses_to_overwrite_unrelated_directory() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(tmp.path(), 3);
    cfg.simulate.out_dir = tmp.path().join("precious");
    fs::create_dir(&cfg.simulate.out_dir).unwrap();
    fs::write(cfg.simulate.out_dir.join("notes.txt"), "keep").unwrap();
    let err = simulate::run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read(cfg.simulate.out_dir.join("notes.txt")).unwrap(), b"keep");
}

#[test]
fn train_defaults_follow_reference_setup() {
    let p = RunConfig::default().train.params();
    assert_eq!((p.lr, p.batch_size, p.max_epochs), (1e-3, 32, 200));
}

#[test]
fn train_history_and_checkpoint_reproduce_validation_loss() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), 20);
    simulate::run(&cfg).unwrap();
    let rep = train::run(&cfg, 0).unwrap();

    let history = fs::read_to_string(rep.out_dir.join(train::HISTORY)).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_seg_loss");
    assert_eq!(lines.len() - 1, rep.history.len());
    assert!(rep.out_dir.join("config.toml").exists());
    assert!(rep.out_dir.join(train::LOG).exists());

    let ckpt_path = rep.out_dir.join(train::CHECKPOINT);
    let bytes = fs::read(&ckpt_path).unwrap();
    let model = checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(checkpoint::to_bytes(&model).unwrap(), bytes);

    let data = Dataset::open(&cfg.train.data_dir).unwrap();
    let val = train::samples(
        &data.load_many(&data.ids(0, SplitPart::Val).unwrap()).unwrap(),
        cfg.network.input_hw,
    )
    .unwrap();
    let loss = segmentation_loss(&model, &val, cfg.train.batch_size).unwrap();
    let best = rep.history[rep.best_epoch - 1].val_seg_loss;
    assert_eq!(loss.to_bits(), best.to_bits());
    // the CSV holds the same value to the bit
    let row: Vec<&str> = lines[rep.best_epoch].split(',').collect();
    assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), best.to_bits());

    // a second run into another directory writes an identical history
    let mut cfg2 = cfg.clone();
    cfg2.train.out_dir = tmp.path().join("run2");
    train::run(&cfg2, 0).unwrap();
    assert_eq!(fs::read_to_string(cfg2.train.out_dir.join(train::HISTORY)).unwrap(), history);
    assert_eq!(fs::read(cfg2.train.out_dir.join(train::CHECKPOINT)).unwrap(), bytes);
}

#[test]
fn eval_on_ground_truth_masks_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(tmp.path(), 21);
    simulate::run(&cfg).unwrap();
    cfg.eval.use_gt_masks = true;
    cfg.eval.split = SplitPart::All;
    let out = eval::run(&cfg, 0).unwrap();
    assert_eq!(out.report.n_cases, 21);
    assert_eq!(out.report.mean_dsc, 1.0);
    assert_eq!(out.report.mean_iou, 1.0);
    let p = out.report.pooled;
    assert!(p.pcc.vmax.unwrap() > 0.999 && p.pcc.vti.unwrap() > 0.999);
    assert_eq!(p.tdr_measure.rate, Some(1.0));

    // λ column equals the configured grid
    let curve = fs::read_to_string(out.out_dir.join(eval::LAMBDA_CSV)).unwrap();
    let lambdas: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lambdas, cfg.eval.lambdas);

    // pcc.json agrees with a recomputation from measurements.csv
    let mut rdr = csv::Reader::from_path(out.out_dir.join(eval::MEASUREMENTS_CSV)).unwrap();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for (k, col) in [3, 4, 5, 6].into_iter().zip(cols.iter_mut()) {
            col.push(rec[k].parse().unwrap());
        }
    }
    let pcc: eval::PccFile = serde_json::from_slice(&fs::read(out.out_dir.join(eval::PCC_JSON)).unwrap()).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    assert_eq!(pcc.pooled.n, cols[0].len());
    assert!(close(pcc.pooled.vmax.unwrap(), pearson(&cols[0], &cols[1])));
    assert!(close(pcc.pooled.vti.unwrap(), pearson(&cols[2], &cols[3])));

    // sweep re-scores the saved ED events to the same curve
    sweep::run(&cfg).unwrap();
    assert_eq!(fs::read_to_string(cfg.sweep.out_dir.join(eval::LAMBDA_CSV)).unwrap(), curve);
}

#[test]
fn eval_outputs_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(tmp.path(), 20);
    simulate::run(&cfg).unwrap();
    train::run(&cfg, 0).unwrap();
    cfg.eval.split = SplitPart::All;
    let one = dopplerkit::with_workers(1, || eval::run(&cfg, 0)).unwrap();
    let a = dir_files(&one.out_dir);
    dopplerkit::with_workers(4, || eval::run(&cfg, 0)).unwrap();
    assert_eq!(dir_files(&one.out_dir), a);
}

fn rectangle_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let (rows, cols, baseline) = (64, 120, 55);
    let mut mask = SegMask::empty(rows, cols);
    mask.fill_rect(baseline - 50..baseline, 10..110, FlowClass::Forward);
    let side = Sidecar {
        format_version: dopplerkit_core::formats::sidecar::SIDECAR_VERSION,
        flow_type: FlowType::AvInflow,
        calibration: Calibration {
            sec_per_col: 0.005,
            cmps_per_row: 2.0,
            baseline_row: baseline,
        },
        seed: None,
        case: None,
        ground_truth: None,
    };
    let m = dir.join("rect.mask.pgm");
    let s = dir.join("rect.json");
    fs::write(&m, Pgm::from_mask(&mask).to_bytes()).unwrap();
    fs::write(&s, side.to_bytes().unwrap()).unwrap();
    (m, s)
}

#[test]
fn measure_rectangle_fixture_and_csv_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (m, s) = rectangle_fixture(tmp.path());
    let out = tmp.path().join("out/rect.csv");
    let output = bin()
        .args(["measure", "--set"])
        .arg(format!("measure.mask={:?}", m.display().to_string()))
        .arg("--set")
        .arg(format!("measure.sidecar={:?}", s.display().to_string()))
        .arg("--set")
        .arg(format!("measure.out={:?}", out.display().to_string()))
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("1 beat(s)"), "{stdout}");

    let report = measure::measure_files(&m, &s).unwrap();
    assert_eq!(report.measurements.len(), 1);
    let meas = report.measurements[0];
    assert_eq!((meas.beat.start_col, meas.beat.end_col), (10, 109));
    assert_eq!(meas.vmax, 100.0);
    assert!((meas.vti - 50.0).abs() < 1e-12);
    // forward-end rule: (109 + 1) * 0.005
    assert!((report.ed_events[0].time - 0.55).abs() < 1e-12);

    let rows = measure::parse_csv(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(rows, measure::rows(&report));
    let parsed: f64 = rows[0].vti.parse().unwrap();
    assert_eq!(parsed.to_bits(), meas.vti.to_bits());
}

#[test]
fn measure_empty_mask_gives_empty_report() {
    let tmp = TempDir::new().unwrap();
    let (m, s) = rectangle_fixture(tmp.path());
    fs::write(&m, Pgm::from_mask(&SegMask::empty(64, 120)).to_bytes()).unwrap();
    let output = bin()
        .arg("measure")
        .arg("--set")
        .arg(format!("measure.mask={:?}", m.display().to_string()))
        .arg("--set")
        .arg(format!("measure.sidecar={:?}", s.display().to_string()))
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(String::from_utf8(output.stdout).unwrap(), "0 beat(s)\n");
}

#[test]
fn measure_corrupted_header_fails_without_partial_csv() {
    let tmp = TempDir::new().unwrap();
    let (m, s) = rectangle_fixture(tmp.path());
    let mut bytes = fs::read(&m).unwrap();
    bytes[1] = b'2';
    fs::write(&m, bytes).unwrap();
    let out = tmp.path().join("rect.csv");
    let output = bin()
        .arg("measure")
        .arg("--set")
        .arg(format!("measure.mask={:?}", m.display().to_string()))
        .arg("--set")
        .arg(format!("measure.sidecar={:?}", s.display().to_string()))
        .arg("--set")
        .arg(format!("measure.out={:?}", out.display().to_string()))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
    assert!(!out.exists());
}

#[test]
fn exit_codes_distinguish_config_and_missing_input() {
    let tmp = TempDir::new().unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(tmp.path().join("nope.toml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[simulate]\nn_case = 3\n").unwrap();
    let status = bin().args(["simulate", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin()
        .arg("eval")
        .arg("--set")
        .arg(format!("eval.data_dir={:?}", tmp.path().join("absent").display().to_string()))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn config_file_drives_the_binary_and_is_echoed() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), 4);
    let path = tmp.path().join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let status = bin()
        .args(["simulate", "--workers", "2", "--config"])
        .arg(&path)
        .args(["--set", "simulate.seed=7"])
        .status()
        .unwrap();
    assert!(status.success());
    let data = Dataset::open(&cfg.simulate.out_dir).unwrap();
    assert_eq!(data.manifest.n_cases, 4);
    assert_eq!(data.manifest.simulate.seed, 7);
}

#[test]
fn ablate_zero_shift_is_exact_and_configs_must_match() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config(tmp.path(), 20);
    simulate::run(&cfg).unwrap();
    cfg.train.max_epochs = 1;
    cfg.train.out_dir = tmp.path().join("aa");
    train::run(&cfg, 0).unwrap();
    let mut plain = cfg.clone();
    plain.network.anti_alias = false;
    plain.train.out_dir = tmp.path().join("plain");
    train::run(&plain, 0).unwrap();

    cfg.ablate.checkpoint_aa = tmp.path().join("aa/model.ckpt");
    cfg.ablate.checkpoint_plain = tmp.path().join("plain/model.ckpt");
    cfg.ablate.shifts = vec![-4, 0, 8];
    cfg.ablate.split = SplitPart::All;
    let (dir, rows, summary) = ablate::run(&cfg, 0).unwrap();
    assert_eq!(rows.len(), 60);
    for r in rows.iter().filter(|r| r.shift == 0) {
        assert_eq!((r.aa.vmax, r.aa.vti, r.plain.vmax, r.plain.vti), (0.0, 0.0, 0.0, 0.0));
    }
    let header = fs::read_to_string(dir.join(ablate::SUMMARY_CSV)).unwrap();
    assert!(header.starts_with("shift,n_cases,aa_mean_dvmax,plain_mean_dvmax,aa_mean_dvti,plain_mean_dvti"));
    assert_eq!(summary.cases.n_cases, 20);

    // swapping the checkpoints, or pairing different architectures, is refused
    let mut swapped = cfg.clone();
    std::mem::swap(&mut swapped.ablate.checkpoint_aa, &mut swapped.ablate.checkpoint_plain);
    assert_eq!(ablate::run(&swapped, 0).unwrap_err().exit_code(), 2);
    let mut wide = cfg.clone();
    wide.network.base_channels = 3;
    wide.network.anti_alias = false;
    wide.train.out_dir = tmp.path().join("wide");
    train::run(&wide, 0).unwrap();
    let mut mismatched = cfg.clone();
    mismatched.ablate.checkpoint_plain = tmp.path().join("wide/model.ckpt");
    assert_eq!(ablate::run(&mismatched, 0).unwrap_err().exit_code(), 2);
}
