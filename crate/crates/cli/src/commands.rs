//! Subcommand implementations. Every command reads and writes under the
//! configured output directory.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use striae::analysis::{
    averages_csv, median, parse_rows_csv, rows_csv, sweep_metrics, window_averages, AnalysisError, MetricOptions, SweepRow,
};
use striae::dataset::{read_dataset, write_dataset, DatasetContext, DatasetError, ImagePair, Sample};
use striae::image::{write_pgm, StriationImage};
use striae::modes::{mode_table_csv, solve_modes, ModeError};
use striae::nliw::{coupled_band, phase_diagnostic, CoupledBand, NliwError, NliwShape, SceneTimeline, StaircaseOptions};
use striae::nn::{describe_table, evaluate, load_network, save_network, train as train_network, NnError, TrainingSet};
use striae::scene::{scene_series, SceneSpec};

use crate::config::{ExperimentConfig, SweepParameter};
use crate::CliError;

type Images = Vec<StriationImage<f64>>;

const TRAIN_FILE: &str = "train.aisd";
const TEST_FILE: &str = "test.aisd";
const WEIGHTS_FILE: &str = "weights.aisn";
const TRAIN_LOG: &str = "train_log.csv";
const GEN_CHUNK: u64 = 64;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_)
            | DatasetError::BadMagic
            | DatasetError::Version(_)
            | DatasetError::Checksum { .. }
            | DatasetError::Metadata(_) => CliError::Io(e.to_string()),
            DatasetError::InvalidSpec(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(_) | NnError::Format(_) | NnError::SpecMismatch { .. } => CliError::Io(e.to_string()),
            NnError::InvalidSpec(_) | NnError::ShapeMismatch { .. } | NnError::InvalidConfig(_) => CliError::Config(e.to_string()),
            NnError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Empty | AnalysisError::Parse { .. } => CliError::Io(e.to_string()),
            AnalysisError::InvalidBeta(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<NliwError> for CliError {
    fn from(e: NliwError) -> Self {
        match e {
            NliwError::InvalidShape(_) | NliwError::InvalidTimeline(_) | NliwError::DisplacementExceedsDepth { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ModeError> for CliError {
    fn from(e: ModeError) -> Self {
        match e {
            ModeError::InvalidProfile(_) | ModeError::InvalidEnvironment(_) | ModeError::InvalidFrequency(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_error(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn load_samples(path: &Path) -> Result<Vec<Sample<f32>>, CliError> {
    if !path.exists() {
        return Err(io_error(path, "not found; run `striae gen` first"));
    }
    Ok(read_dataset(path)?)
}

/// Trained weights from `path` (default `<out>/weights.aisn`), or a freshly
/// initialized network.
fn network(cfg: &ExperimentConfig, path: Option<&Path>, untrained: bool) -> Result<striae::Network, CliError> {
    if untrained {
        return Ok(striae::Network::build(cfg.network, cfg.seed)?);
    }
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(WEIGHTS_FILE));
    if !path.exists() {
        return Err(io_error(&path, "not found; run `striae train` or pass --untrained"));
    }
    Ok(load_network(&path, Some(&cfg.network))?)
}

pub fn gen(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let env = cfg.environment()?;
    let ctx = DatasetContext::<f64>::new(&env, cfg.dataset.clone())?;
    let test = DatasetContext { spec: cfg.test_spec(), modes: ctx.modes.clone() };
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    for (name, ctx) in [(TRAIN_FILE, &ctx), (TEST_FILE, &test)] {
        let path = out.join(name);
        let manifest = write_dataset(ctx, &path, GEN_CHUNK)?;
        println!("{}: {} samples, crc32 {:08x}", path.display(), manifest.samples, manifest.file_crc32);
    }
    println!("up to {} modes over {} frequencies", ctx.max_modes(), ctx.modes.len());
    Ok(())
}

/// Epoch after the last one recorded in an existing training log.
fn next_epoch(log: &Path) -> Result<usize, CliError> {
    let Ok(text) = fs::read_to_string(log) else {
        return Ok(0);
    };
    let last = text.lines().skip(1).filter(|l| !l.trim().is_empty()).last();
    match last {
        None => Ok(0),
        Some(line) => {
            let epoch: usize = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| io_error(log, format!("bad line `{line}`")))?;
            Ok(epoch + 1)
        }
    }
}

pub fn train(cfg: &ExperimentConfig, dry_run: bool, resume: Option<&Path>) -> Result<(), CliError> {
    if dry_run {
        print!("{}", describe_table(&cfg.network)?);
        return Ok(());
    }
    let out = out_dir(cfg)?;
    let samples = load_samples(&out.join(TRAIN_FILE))?;
    let data = TrainingSet::from_pairs(samples.iter().map(|s| (&s.distorted, &s.clean)))?;
    let log_path = out.join(TRAIN_LOG);
    let (mut net, first_epoch) = match resume {
        Some(path) => (load_network(path, Some(&cfg.network))?, next_epoch(&log_path)?),
        None => {
            write_file(&log_path, "epoch,loss,best,wall_s\n")?;
            (striae::Network::build(cfg.network, cfg.seed)?, 0)
        }
    };
    let initial = evaluate(&net, &data, cfg.train.batch_size)?;
    println!("{} training pairs, {} parameters, initial loss {initial:.6}", data.len(), net.parameter_count());
    let weights_path = out.join(WEIGHTS_FILE);
    let mut log = OpenOptions::new().append(true).create(true).open(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut failure = None;
    let report = train_network(&mut net, &data, &cfg.train, first_epoch, |e, net| {
        println!("epoch {:4}  loss {:.6}  best {:.6}  {:.1} s", e.epoch, e.loss, e.best, e.wall_seconds);
        let line = format!("{},{:.6},{:.6},{:.3}\n", e.epoch, e.loss, e.best, e.wall_seconds);
        if failure.is_none() {
            if let Err(err) = log.write_all(line.as_bytes()) {
                failure = Some(io_error(&log_path, err));
            } else if let Err(err) = save_network(net, &weights_path) {
                failure = Some(CliError::from(err));
            }
        }
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    save_network(&net, &weights_path)?;
    let last = report.final_loss().unwrap_or(initial);
    println!("stopped ({:?}); loss {initial:.6} -> {last:.6}; weights in {}", report.stop, weights_path.display());
    Ok(())
}

fn scene_band(cfg: &ExperimentConfig, amplitude: f64, width: f64) -> Result<CoupledBand<f64>, CliError> {
    let env = cfg.environment()?;
    let shape = NliwShape::new(cfg.test.nliw, amplitude, width, 0.0)?;
    Ok(coupled_band(&env, &shape, &cfg.dataset.band, &StaircaseOptions::default())?)
}

fn scene_spec(cfg: &ExperimentConfig, snr_db: f64, value_index: u64) -> SceneSpec {
    SceneSpec {
        array: cfg.dataset.array,
        band: cfg.dataset.band,
        source_depth: cfg.dataset.source_depth,
        image_size: cfg.dataset.image_size,
        snr_db: Some(snr_db),
        seed: cfg.seed.wrapping_add(2).wrapping_add(value_index),
    }
}

/// Recovered images and their per-snapshot metrics.
fn score_pairs(
    cfg: &ExperimentConfig,
    net: &striae::Network,
    distorted: &[StriationImage<f64>],
    labels: &[StriationImage<f64>],
) -> Result<(Images, Vec<SweepRow>), CliError> {
    let inputs: Vec<_> = distorted.iter().map(|d| d.cast::<f32>()).collect();
    let recovered: Vec<_> = net.infer_all(&inputs)?.iter().map(|r| r.cast::<f64>()).collect();
    let options = MetricOptions { ranging_beta: Some(cfg.analysis.ranging_beta), ..MetricOptions::default() };
    let rows = sweep_metrics(distorted, &recovered, labels, &options)?;
    Ok((recovered, rows))
}

fn scene_images(
    band: &CoupledBand<f64>,
    timeline: &SceneTimeline,
    spec: &SceneSpec,
    label: (&str, f64),
) -> Result<(Images, Images), CliError> {
    let pairs = scene_series(band, timeline, spec)?;
    Ok(pairs
        .into_iter()
        .map(|ImagePair { distorted, clean }| {
            (distorted, clean.with_meta("parameter", label.0).with_meta("value", label.1))
        })
        .unzip())
}

fn write_triptychs(
    out: &Path,
    prefix: &str,
    count: usize,
    panels: [&[StriationImage<f64>]; 3],
) -> Result<Vec<PathBuf>, CliError> {
    let n = panels[0].len();
    let count = count.min(n);
    let mut paths = Vec::with_capacity(count);
    for j in 0..count {
        let k = if count > 1 { j * (n - 1) / (count - 1) } else { 0 };
        let path = out.join(format!("{prefix}_{k:03}.pgm"));
        let mut file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        write_pgm(&mut file, &[&panels[0][k], &panels[1][k], &panels[2][k]]).map_err(|e| io_error(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn summary(title: &str, rows: &[SweepRow]) -> String {
    let c_d: Vec<f64> = rows.iter().map(|r| r.c_d).collect();
    let c_r: Vec<f64> = rows.iter().map(|r| r.c_r).collect();
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.range_error).collect();
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mean_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    format!(
        "{title}: {} snapshots, median C_D {}, median C_R {}, mean range error {} ({} without a dominant slope)\n",
        rows.len(),
        fmt(median(&c_d)),
        fmt(median(&c_r)),
        fmt(mean_error),
        rows.len() - errors.len()
    )
}

pub fn eval(cfg: &ExperimentConfig, weights: Option<&Path>, untrained: bool) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let net = network(cfg, weights, untrained)?;
    let fixed = cfg.test.fixed;
    let band = scene_band(cfg, fixed.amplitude, cfg.width_for(cfg.test.nliw))?;
    let spec = scene_spec(cfg, fixed.snr_db, 0);
    let (distorted, labels) = scene_images(&band, &cfg.test.timeline, &spec, ("eval", 0.0))?;
    let (recovered, rows) = score_pairs(cfg, &net, &distorted, &labels)?;
    write_file(&out.join("eval_rows.csv"), rows_csv(&rows))?;
    let mut report = summary("internal-wave timeline", &rows);
    write_triptychs(out, "eval", cfg.test.triptychs, [&distorted, &recovered, &labels])?;

    let test_path = out.join(TEST_FILE);
    if test_path.exists() {
        let samples = read_dataset(&test_path)?;
        let distorted: Vec<_> = samples.iter().map(|s| s.distorted.cast::<f64>()).collect();
        let labels: Vec<_> = samples.iter().map(|s| s.clean.cast::<f64>().with_meta("parameter", "random").with_meta("value", 0.0)).collect();
        let (_, rows) = score_pairs(cfg, &net, &distorted, &labels)?;
        write_file(&out.join("random_rows.csv"), rows_csv(&rows))?;
        report.push_str(&summary("random-coupling test set", &rows));
    }
    write_file(&out.join("eval_report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, weights: Option<&Path>, untrained: bool) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let net = network(cfg, weights, untrained)?;
    let fixed = cfg.test.fixed;
    let parameter = cfg.test.sweep.parameter;
    let values = cfg.test.sweep.resolved_values(cfg.test.nliw);
    let fixed_band = match parameter {
        SweepParameter::Snr => Some(scene_band(cfg, fixed.amplitude, cfg.width_for(cfg.test.nliw))?),
        _ => None,
    };
    let mut rows = Vec::new();
    for (k, &value) in values.iter().enumerate() {
        let (band, snr) = match parameter {
            SweepParameter::Snr => (fixed_band.clone().expect("built above"), value),
            SweepParameter::Amplitude => (scene_band(cfg, value, cfg.width_for(cfg.test.nliw))?, fixed.snr_db),
            SweepParameter::Width => (scene_band(cfg, fixed.amplitude, value)?, fixed.snr_db),
        };
        let spec = scene_spec(cfg, snr, k as u64);
        let (distorted, labels) = scene_images(&band, &cfg.test.sweep_timeline, &spec, (parameter.name(), value))?;
        let (recovered, value_rows) = score_pairs(cfg, &net, &distorted, &labels)?;
        if k == 0 {
            write_triptychs(out, "sweep", cfg.test.triptychs, [&distorted, &recovered, &labels])?;
        }
        print!("{}", summary(&format!("{} = {value}", parameter.name()), &value_rows));
        rows.extend(value_rows);
    }
    write_file(&out.join("sweep_rows.csv"), rows_csv(&rows))?;
    let averages = window_averages(&rows, cfg.analysis.window)?;
    write_file(&out.join("sweep_averages.csv"), averages_csv(&averages))?;
    print!("{}", averages_csv(&averages));
    Ok(())
}

pub fn report(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        rows.extend(parse_rows_csv(&text).map_err(|e| io_error(path, e))?);
    }
    let averages = window_averages(&rows, cfg.analysis.window)?;
    print!("{}", averages_csv(&averages));
    Ok(())
}

pub fn modes(cfg: &ExperimentConfig, freq: Option<f64>) -> Result<(), CliError> {
    let env = cfg.environment()?;
    let f = freq.unwrap_or_else(|| cfg.dataset.band.center());
    let set = solve_modes(&env.waveguide, f)?;
    print!("{}", mode_table_csv(&set));
    Ok(())
}

pub fn phase_diag(cfg: &ExperimentConfig, amplitude: Option<f64>, width: Option<f64>, threshold: f64) -> Result<(), CliError> {
    let env = cfg.environment()?;
    let amplitude = amplitude.unwrap_or(cfg.test.fixed.amplitude);
    let width = width.unwrap_or_else(|| cfg.width_for(cfg.test.nliw));
    let shape = NliwShape::new(cfg.test.nliw, amplitude, width, 0.0)?;
    let diag = phase_diagnostic(&env, &shape, &cfg.dataset.band, &StaircaseOptions::default(), threshold)?;
    print!("{}", diag.to_csv());
    for (m, (worst, flagged)) in diag.worst_offset.iter().zip(&diag.flagged).enumerate() {
        eprintln!("mode {}: worst offset {worst:.3} rad{}", m + 1, if *flagged { " FLAGGED" } else { "" });
    }
    Ok(())
}
