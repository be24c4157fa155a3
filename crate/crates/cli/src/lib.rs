//! The `somnet` command line.

pub mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use somnet_core::dsp::preprocess;
use somnet_core::objective::time_average_predictions;
use somnet_core::metrics::argmax_columns;
use somnet_core::{Stage, Tensor, EPOCH_SECONDS};
use somnet_data::hypnogram::format_hypnogram;
use somnet_data::synth::{generate_cohorts, SynthSpec, MANIFEST_FILE};
use somnet_data::{assemble_recording, load_entry, load_hypnogram, read_edf, split_cohort, AccessLog, CohortManifest, Montage, Split};
use somnet_train::dataset::prepare_entry;
use somnet_train::evaluate::{densities, score};
use somnet_train::experiments::{
    run_combinations, run_fractions, run_hidden_unit_sweep, run_loci, run_loco, write_combinations_csv, write_fractions_csv,
};
use somnet_train::report::{position_profile, write_position_csv};
use somnet_train::{hypnodensity, load_checkpoint, ExperimentConfig, MetricsReport, RunConfig, Selection, TrainError, Trainer};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::Core(somnet_core::Error::NonFinite(_)) => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<somnet_data::DataError> for CliError {
    fn from(e: somnet_data::DataError) -> Self {
        match e {
            somnet_data::DataError::Core(somnet_core::Error::NonFinite(_)) => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<somnet_core::Error> for CliError {
    fn from(e: somnet_core::Error) -> Self {
        match e {
            somnet_core::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "somnet", version, about = "Sleep staging from polysomnography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of a run configuration file.
#[derive(Debug, Default, Args)]
struct RunFlags {
    /// Run seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Loss averaging window in seconds.
    #[arg(long)]
    tau: Option<usize>,
    /// Sequence length in 30-s epochs.
    #[arg(long)]
    alpha: Option<usize>,
    /// Recurrent units per direction (0 disables the recurrent stage).
    #[arg(long)]
    hidden_units: Option<usize>,
    /// Train on this fraction of the training subjects.
    #[arg(long)]
    fraction: Option<f64>,
    /// Comma-separated cohort names.
    #[arg(long, value_delimiter = ',')]
    cohorts: Vec<String>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training passes.
    #[arg(long)]
    passes: Option<usize>,
    /// Directory of preprocessed recordings.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig, select: bool) -> CliResult {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tau {
            cfg.model.tau = t;
        }
        if let Some(a) = self.alpha {
            cfg.model.alpha = a;
        }
        if let Some(h) = self.hidden_units {
            cfg.model.hidden = h;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(p) = self.passes {
            cfg.passes = p;
        }
        if let Some(w) = self.weight_decay {
            cfg.optimizer.weight_decay = w;
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if select {
            match (self.fraction, self.cohorts.is_empty()) {
                (Some(_), false) => return Err(CliError::Usage("--fraction and --cohorts select different experiment families".into())),
                (Some(f), true) => cfg.selection = Selection::Fraction { fraction: f },
                (None, false) => cfg.selection = Selection::Cohorts { cohorts: self.cohorts.clone() },
                (None, true) => {}
            }
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Sweep,
    Loci,
    Loco,
    Fractions,
    Combos,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MontageChoice {
    /// Mastoid-referenced if the file carries A1/A2, else as stored.
    Auto,
    Mastoid,
    Prereferenced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
}

impl From<SplitChoice> for Split {
    fn from(s: SplitChoice) -> Self {
        match s {
            SplitChoice::Train => Split::Train,
            SplitChoice::Val => Split::Val,
            SplitChoice::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic cohorts from a cohort spec and split them.
    Synth {
        /// Cohort spec JSON; the five-site default battery when omitted.
        spec: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subjects per cohort of the default battery.
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        /// Epochs per recording of the default battery, as MIN,MAX.
        #[arg(long, value_delimiter = ',', default_values_t = [20, 28])]
        epochs: Vec<usize>,
    },
    /// Assign subjects to train/validation/test subsets, in place.
    Split {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load every manifest entry and report per-cohort counts.
    Ingest { manifest: PathBuf },
    /// Condition every recording and store it in a cache directory.
    Preprocess { manifest: PathBuf, cache_dir: PathBuf },
    /// Train one model; writes the selected checkpoint and the log.
    Train {
        config: PathBuf,
        manifest: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score a checkpoint on one subset of the manifest.
    Evaluate {
        checkpoint: PathBuf,
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// Averaging window of the primary metrics, seconds.
        #[arg(long, default_value_t = 30)]
        tau: usize,
        #[arg(long, value_delimiter = ',')]
        cohorts: Vec<String>,
    },
    /// Stage one recording: hypnodensity CSV, hypnogram and SVG.
    Predict {
        checkpoint: PathBuf,
        recording: PathBuf,
        hypnogram_out: PathBuf,
        /// Hypnogram resolution in seconds.
        #[arg(long, default_value_t = 30)]
        tau: usize,
        /// Reference hypnogram drawn as the manual trace.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        montage: MontageChoice,
        /// Hypnodensity CSV path; defaults next to the hypnogram.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// SVG path; defaults next to the hypnogram.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run an experiment family.
    Experiment {
        #[arg(value_enum)]
        family: Family,
        config: PathBuf,
        manifest: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("somnet: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth { spec, out, seed, subjects, epochs } => {
            let [lo, hi] = epochs[..] else {
                return Err(CliError::Usage(format!("--epochs takes MIN,MAX, got {epochs:?}")));
            };
            cmd_synth(spec.as_deref(), &out, seed, subjects, [lo, hi])
        }
        Command::Split { manifest, seed } => cmd_split(&manifest, seed),
        Command::Ingest { manifest } => cmd_ingest(&manifest),
        Command::Preprocess { manifest, cache_dir } => cmd_preprocess(&manifest, &cache_dir),
        Command::Train { config, manifest, out_dir, flags } => cmd_train(&config, &manifest, &out_dir, &flags),
        Command::Evaluate { checkpoint, manifest, out_dir, split, tau, cohorts } => {
            cmd_evaluate(&checkpoint, &manifest, &out_dir, split.into(), tau, &cohorts)
        }
        Command::Predict { checkpoint, recording, hypnogram_out, tau, reference, montage, csv, svg } => {
            let csv = csv.unwrap_or_else(|| hypnogram_out.with_extension("hypnodensity.csv"));
            let svg = svg.unwrap_or_else(|| hypnogram_out.with_extension("svg"));
            cmd_predict(&checkpoint, &recording, &hypnogram_out, tau, reference.as_deref(), montage, &csv, &svg)
        }
        Command::Experiment { family, config, manifest, out_dir, flags } => cmd_experiment(family, &config, &manifest, &out_dir, &flags),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io(path))
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: u64, subjects: usize, epochs: [usize; 2]) -> CliResult {
    let spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => {
            let s = SynthSpec::default_battery(subjects, epochs);
            s.validate()?;
            s
        }
    };
    create_dir(out)?;
    let manifest = split_cohort(&generate_cohorts(&spec, out, seed)?, seed)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    info!("{} recordings written to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn cmd_split(path: &Path, seed: u64) -> CliResult {
    let m = split_cohort(&CohortManifest::load(path)?, seed)?;
    m.save(path)?;
    Ok(())
}

#[derive(Default, Serialize)]
struct CohortCounts {
    recordings: usize,
    subjects: usize,
    epochs: usize,
    unscored_epochs: usize,
}

fn cmd_ingest(path: &Path) -> CliResult {
    let m = CohortManifest::load(path)?;
    let access = AccessLog::new();
    let mut counts: BTreeMap<String, CohortCounts> = BTreeMap::new();
    for e in &m.entries {
        let lr = load_entry(&m, e, &access)?;
        let c = counts.entry(e.cohort.clone()).or_default();
        c.recordings += 1;
        c.epochs += lr.hypnogram.len();
        c.unscored_epochs += lr.hypnogram.unknown_count();
    }
    for (cohort, c) in counts.iter_mut() {
        c.subjects = m.subjects(cohort).len();
    }
    let text = serde_json::to_string_pretty(&counts).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn cmd_preprocess(path: &Path, cache: &Path) -> CliResult {
    let m = CohortManifest::load(path)?;
    let access = AccessLog::new();
    for e in &m.entries {
        prepare_entry::<f32>(&m, e, &access, Some(cache))?;
    }
    info!("{} recordings cached under {}", m.entries.len(), cache.display());
    Ok(())
}

fn cmd_train(config: &Path, manifest: &Path, out_dir: &Path, flags: &RunFlags) -> CliResult {
    let mut cfg = RunConfig::load(config)?;
    flags.apply(&mut cfg, true)?;
    let m = CohortManifest::load(manifest)?;
    create_dir(out_dir)?;
    cfg.save(&out_dir.join("config.json"))?;
    let log_path = out_dir.join("train.ndjson");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
    let outcome = Trainer::new(cfg)?.with_log(&mut log).with_dump_dir(out_dir).run::<f32>(&m, &AccessLog::new())?;
    log.flush().map_err(io(&log_path))?;
    outcome.save(&out_dir.join("model.snck"))?;
    info!("selected pass {} (validation kappa {:.4})", outcome.selected_pass, outcome.val_kappa);
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, manifest: &Path, out_dir: &Path, split: Split, tau: usize, cohorts: &[String]) -> CliResult {
    let (net, sidecar) = load_checkpoint::<f32>(checkpoint)?;
    let m = CohortManifest::load(manifest)?;
    let cohorts = if cohorts.is_empty() { m.cohorts() } else { cohorts.to_vec() };
    let entries = m.select(&cohorts, split);
    if entries.is_empty() {
        return Err(CliError::Data(format!("no {split} recordings in {cohorts:?}")));
    }
    let access = AccessLog::new();
    let recs = entries.iter().map(|e| prepare_entry::<f32>(&m, e, &access, sidecar.run.cache_dir.as_deref())).collect::<Result<Vec<_>, _>>()?;
    let d = densities(&net, &recs, sidecar.run.batch_size)?;
    let classes = net.config.classes;
    let primary = score(&d, &recs, tau, classes)?;
    let secondary: Vec<_> = if tau == 1 { Vec::new() } else { vec![score(&d, &recs, 1, classes)?] };
    create_dir(out_dir)?;
    let label = format!("{} {split}", checkpoint.display());
    MetricsReport::new(label, &primary, &secondary).save(&out_dir.join("metrics.json"))?;
    match position_profile(&d, &recs, net.config.alpha) {
        Ok((one, thirty)) => write_position_csv(&out_dir.join("position_profile.csv"), &one, &thirty)?,
        Err(e) => log::warn!("no position profile: {e}"),
    }
    Ok(())
}

fn montage_for(edf: &somnet_data::EdfFile, choice: MontageChoice) -> Montage {
    match choice {
        MontageChoice::Mastoid => Montage::mastoid(),
        MontageChoice::Prereferenced => Montage::prereferenced(),
        MontageChoice::Auto if edf.find("A1").is_some() || edf.find("A2").is_some() => Montage::mastoid(),
        MontageChoice::Auto => Montage::prereferenced(),
    }
}

/// Write `[K, seconds]` probabilities as `time_s,p_W,…,p_REM` rows.
pub fn write_hypnodensity_csv(path: &Path, density: &Tensor<f32>) -> CliResult {
    let (k, n) = (density.shape()[0], density.shape()[1]);
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    let mut header = vec!["time_s".to_string()];
    header.extend((0..k).map(|c| format!("p_{}", Stage::from_class(c).map_or("?", Stage::as_str))));
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    let d = density.data();
    for t in 0..n {
        let mut rec = vec![t.to_string()];
        rec.extend((0..k).map(|c| format!("{:.8}", d[c * n + t])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io(path))
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    checkpoint: &Path,
    recording: &Path,
    hypnogram_out: &Path,
    tau: usize,
    reference: Option<&Path>,
    montage: MontageChoice,
    csv_path: &Path,
    svg_path: &Path,
) -> CliResult {
    if tau == 0 || EPOCH_SECONDS % tau != 0 {
        return Err(CliError::Usage(format!("--tau {tau} does not divide {EPOCH_SECONDS} s")));
    }
    let (net, sidecar) = load_checkpoint::<f32>(checkpoint)?;
    let edf = read_edf(recording)?;
    let stem = recording.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let psg = assemble_recording(&edf, &montage_for(&edf, montage), &stem, "")?;
    let signals = preprocess::<f32>(&psg)?;
    let density = hypnodensity(&net, &signals, sidecar.run.batch_size)?;

    let windows = argmax_columns(&time_average_predictions(&density, tau)?);
    let stages: Vec<Stage> = windows.iter().map(|&c| Stage::from_class(c).unwrap_or(Stage::Unknown)).collect();
    if let Some(dir) = hypnogram_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(hypnogram_out, format_hypnogram(&somnet_core::Hypnogram::new(stages.clone()))).map_err(io(hypnogram_out))?;
    write_hypnodensity_csv(csv_path, &density)?;

    let manual = match reference {
        Some(p) => {
            let mut h = load_hypnogram(p, &somnet_data::StageMap::standard())?;
            h.truncate(signals.epochs());
            Some(h.stages)
        }
        None => None,
    };
    let n = density.shape()[1];
    let rows: Vec<Vec<f64>> = (0..density.shape()[0]).map(|c| density.data()[c * n..(c + 1) * n].iter().map(|v| *v as f64).collect()).collect();
    let svg = plot::render(&rows, &stages, tau, manual.as_deref());
    std::fs::write(svg_path, svg).map_err(io(svg_path))
}

fn cmd_experiment(family: Family, config: &Path, manifest: &Path, out_dir: &Path, flags: &RunFlags) -> CliResult {
    let mut exp = ExperimentConfig::load(config)?;
    flags.apply(&mut exp.run, false)?;
    if !flags.cohorts.is_empty() {
        exp.cohorts = flags.cohorts.clone();
    }
    if let Some(f) = flags.fraction {
        exp.fractions = vec![f];
    }
    let m = CohortManifest::load(manifest)?;
    create_dir(out_dir)?;
    exp.save(&out_dir.join("experiment.json"))?;
    let access = AccessLog::new();
    match family {
        Family::Loci => {
            let grid = run_loci::<f32>(&exp, &m, &access, flags.weight_decay.or(exp.loci_weight_decay))?;
            write_json(&out_dir.join("results.json"), &grid)?;
            grid.write_csv(&out_dir.join("grid.csv"))?;
        }
        Family::Loco => {
            let grid = run_loco::<f32>(&exp, &m, &access)?;
            write_json(&out_dir.join("results.json"), &grid)?;
            grid.write_csv(&out_dir.join("grid.csv"))?;
        }
        Family::Combos => {
            let rows = run_combinations::<f32>(&exp, &m, &access)?;
            write_json(&out_dir.join("results.json"), &rows)?;
            write_combinations_csv(&rows, &out_dir.join("combinations.csv"))?;
        }
        Family::Fractions => {
            let rows = run_fractions::<f32>(&exp, &m, &access)?;
            write_json(&out_dir.join("results.json"), &rows)?;
            write_fractions_csv(&rows, &out_dir.join("fractions.csv"))?;
        }
        Family::Sweep => {
            let table = run_hidden_unit_sweep::<f32>(&exp, &m, &access)?;
            write_json(&out_dir.join("results.json"), &table)?;
            table.write_csv(&out_dir.join("sweep.csv"))?;
        }
    }
    Ok(())
}
