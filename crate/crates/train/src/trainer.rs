//! The training loop: shuffled sequence batches, Adam updates, per-pass
//! validation and selection of the best-kappa pass.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use somnet_core::autodiff::Mode;
use somnet_core::nn::{Adam, CheckpointData};
use somnet_core::objective::sequence_loss;
use somnet_core::{ModelConfig, Real, SleepNet, Tape, EPOCH_SECONDS};
use somnet_data::synth::derive_seed;
use somnet_data::{AccessLog, CohortManifest, ManifestEntry, Split};

use crate::config::{RunConfig, Selection};
use crate::dataset::{assemble_batch, cache_path, index_sequences, prepare_entries, PreparedRecording, SequenceRef};
use crate::error::{io_err, Result, TrainError};
use crate::evaluate::evaluate;

/// Stream tags for seeds derived from the run seed.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const SUBSAMPLE_STREAM: u64 = 3;

/// Evaluation window for validation and default reports.
pub const SELECTION_WINDOW: usize = EPOCH_SECONDS;

pub const CHECKPOINT_FORMAT: &str = "somnet.checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_kappa: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Whether this pass became the selected checkpoint.
    pub best: bool,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        seed: u64,
        family: String,
        train_recordings: usize,
        val_recordings: usize,
        train_sequences: usize,
        parameters: usize,
        initial_loss: f64,
    },
    Pass(PassRecord),
    Selected {
        pass: usize,
        val_kappa: f64,
    },
}

/// First pass holding the maximum validation kappa; passes without
/// validation are skipped.
pub fn argmax_pass(kappas: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, k) in kappas.iter().enumerate() {
        if let Some(k) = k.filter(|k| !k.is_nan()) {
            if best.is_none_or(|(_, b)| k > b) {
                best = Some((i + 1, k));
            }
        }
    }
    best.map(|b| b.0)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub config: RunConfig,
    /// Network and optimizer as of the selected pass.
    pub model: SleepNet<T>,
    pub optimizer: Adam<T>,
    pub selected_pass: usize,
    pub val_kappa: f64,
    pub val_accuracy: f64,
    pub initial_loss: f64,
    pub history: Vec<PassRecord>,
    /// Files read while assembling the training and validation data.
    pub files_read: Vec<PathBuf>,
    pub train_subjects: Vec<String>,
}

/// Checkpoint metadata stored as JSON next to the binary checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub model: ModelConfig,
    pub run: RunConfig,
    pub selected_pass: usize,
    pub passes: usize,
    pub val_kappa: f64,
    pub val_accuracy: f64,
    pub optimizer_steps: u64,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn write_state<T: Real>(path: &Path, data: &CheckpointData<T>, sidecar: &Sidecar) -> Result<PathBuf> {
    let mut buf = Vec::new();
    data.write(&mut buf)?;
    std::fs::write(path, buf).map_err(io_err(path))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)? + "\n").map_err(io_err(&side))?;
    Ok(side)
}

impl<T: Real> TrainOutcome<T> {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            format: CHECKPOINT_FORMAT.into(),
            model: self.model.config,
            run: self.config.clone(),
            selected_pass: self.selected_pass,
            passes: self.history.len(),
            val_kappa: self.val_kappa,
            val_accuracy: self.val_accuracy,
            optimizer_steps: self.optimizer.step_count(),
        }
    }

    /// Write the selected checkpoint and its sidecar; returns the sidecar path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        write_state(path, &self.model.to_checkpoint(Some(self.optimizer.clone())), &self.sidecar())
    }
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(SleepNet<T>, Sidecar)> {
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side).map_err(io_err(&side))?)
        .map_err(|e| TrainError::Config(format!("{}: {e}", side.display())))?;
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let data = CheckpointData::read(&mut bytes.as_slice())?;
    // construction randomness is overwritten by the stored values
    let net = SleepNet::from_checkpoint(sidecar.model, &data, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok((net, sidecar))
}

/// Subjects kept at `fraction`: a seeded permutation of the sorted subject
/// list, truncated to `ceil(fraction · n)` (at least one). Smaller fractions
/// under the same seed are prefixes of larger ones.
pub fn fraction_subjects(subjects: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if subjects.is_empty() {
        return Err(TrainError::EmptyPartition("no training subjects to subsample".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut sorted = subjects.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SUBSAMPLE_STREAM])));
    // scaled to avoid 0.07 · 100 = 7.000000000000001 rounding up
    let keep = ((fraction * sorted.len() as f64 * (1.0 - 1e-12)).ceil() as usize).clamp(1, sorted.len());
    sorted.truncate(keep);
    Ok(sorted)
}

/// Recordings per cohort for an even draw of `total` across `cohorts`;
/// the remainder goes one each to the first cohorts in name order.
pub fn even_shares(cohorts: &[String], total: usize) -> Vec<(String, usize)> {
    let mut names = cohorts.to_vec();
    names.sort();
    let k = names.len().max(1);
    names.into_iter().enumerate().map(|(i, c)| (c, total / k + usize::from(i < total % k))).collect()
}

/// Training and validation entries of a run.
pub fn partition_entries<'m>(config: &RunConfig, manifest: &'m CohortManifest) -> Result<(Vec<&'m ManifestEntry>, Vec<&'m ManifestEntry>)> {
    if manifest.splits.is_empty() {
        return Err(TrainError::EmptyPartition("manifest carries no subject split".into()));
    }
    let available = manifest.cohorts();
    if let Selection::Cohorts { cohorts } | Selection::Combination { cohorts, .. } = &config.selection {
        if let Some(c) = cohorts.iter().find(|c| !available.contains(c)) {
            return Err(TrainError::Config(format!("cohort {c:?} is not in the manifest")));
        }
    }
    let cohorts = config.selection.cohorts(&available);
    let eligible = manifest.select(&cohorts, Split::Train);
    let train: Vec<&ManifestEntry> = match &config.selection {
        Selection::All | Selection::Cohorts { .. } => eligible,
        Selection::Fraction { fraction } => {
            let subjects: Vec<String> = eligible.iter().map(|e| e.subject_id.clone()).collect();
            let keep: BTreeSet<String> = fraction_subjects(&subjects, *fraction, config.seed)?.into_iter().collect();
            eligible.into_iter().filter(|e| keep.contains(&e.subject_id)).collect()
        }
        Selection::Combination { psgs, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SUBSAMPLE_STREAM]));
            let mut out = Vec::new();
            for (cohort, need) in even_shares(&cohorts, *psgs) {
                let mut pool: Vec<&ManifestEntry> = eligible.iter().copied().filter(|e| e.cohort == cohort).collect();
                if pool.len() < need {
                    return Err(TrainError::InsufficientPsgs { cohort, need, have: pool.len() });
                }
                pool.shuffle(&mut rng);
                pool.truncate(need);
                out.extend(pool);
            }
            out.sort_by(|a, b| a.edf.cmp(&b.edf));
            out
        }
    };
    let val = manifest.select(&cohorts, Split::Val);
    if train.is_empty() {
        return Err(TrainError::EmptyPartition(format!("no training recordings in {cohorts:?}")));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyPartition(format!("no validation recordings in {cohorts:?}")));
    }
    Ok((train, val))
}

pub struct Trainer<'a> {
    config: RunConfig,
    log: Option<&'a mut dyn Write>,
    dump_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, log: None, dump_dir: None })
    }

    /// Write NDJSON events to `w`.
    pub fn with_log(mut self, w: &'a mut dyn Write) -> Self {
        self.log = Some(w);
        self
    }

    /// Where the state is dumped when the loss diverges.
    pub fn with_dump_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn emit(&mut self, event: &LogEvent) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            let line = serde_json::to_string(event)?;
            writeln!(w, "{line}").map_err(io_err("training log"))?;
        }
        Ok(())
    }

    /// Load the run's partitions through `access`, refusing any read outside
    /// them, then train.
    pub fn run<T: Real>(mut self, manifest: &CohortManifest, access: &AccessLog) -> Result<TrainOutcome<T>> {
        let (train_entries, val_entries) = partition_entries(&self.config, manifest)?;
        let cache = self.config.cache_dir.clone();
        let mark = access.opened().len();
        let train = prepare_entries::<T>(manifest, &train_entries, access, cache.as_deref())?;
        let val = prepare_entries::<T>(manifest, &val_entries, access, cache.as_deref())?;
        let files_read = access.opened()[mark..].to_vec();

        let mut allowed: BTreeSet<PathBuf> = BTreeSet::new();
        for e in train_entries.iter().chain(&val_entries) {
            allowed.insert(manifest.resolve(&e.edf));
            allowed.insert(manifest.resolve(&e.hypnogram));
            if let Some(dir) = &cache {
                allowed.insert(cache_path(dir, e));
            }
        }
        let outside: Vec<PathBuf> = files_read.iter().filter(|p| !allowed.contains(*p)).cloned().collect();
        if !outside.is_empty() {
            return Err(TrainError::Audit(outside));
        }
        let mut out = self.fit(&train, &val)?;
        out.files_read = files_read;
        Ok(out)
    }

    fn dump<T: Real>(&self, net: &SleepNet<T>, opt: &Adam<T>, pass: usize) -> Option<PathBuf> {
        let dir = self.dump_dir.as_ref()?;
        std::fs::create_dir_all(dir).ok()?;
        let path = dir.join("diverged.snck");
        let sidecar = Sidecar {
            format: CHECKPOINT_FORMAT.into(),
            model: net.config,
            run: self.config.clone(),
            selected_pass: pass,
            passes: pass,
            val_kappa: f64::NAN,
            val_accuracy: f64::NAN,
            optimizer_steps: opt.step_count(),
        };
        write_state(&path, &net.to_checkpoint(Some(opt.clone())), &sidecar).ok()?;
        Some(path)
    }

    /// Mean training loss of the untouched model, batch statistics as in
    /// training but without updating them.
    fn initial_loss<T: Real>(&self, net: &SleepNet<T>, train: &[PreparedRecording<T>], order: &[SequenceRef]) -> Result<f64> {
        let cfg = &self.config;
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = assemble_batch(train, chunk, cfg.model.alpha, cfg.model.tau)?;
            if labels.iter().all(|l| l.scored() == 0) {
                continue;
            }
            let mut tape = Tape::new();
            let b = net.params.bind(&mut tape, false);
            let xv = tape.constant(x);
            let mut states = net.norms.clone();
            let y = net.forward_with(&mut tape, &b, xv, Mode::Train, &mut states)?;
            let l = sequence_loss(&mut tape, y, &labels, cfg.model.loss_window())?;
            total += tape.value(l).data()[0].as_f64();
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }

    /// Train on prepared recordings.
    pub fn fit<T: Real>(&mut self, train: &[PreparedRecording<T>], val: &[PreparedRecording<T>]) -> Result<TrainOutcome<T>> {
        let cfg = self.config.clone();
        let (alpha, tau) = (cfg.model.alpha, cfg.model.tau);
        if val.is_empty() {
            return Err(TrainError::EmptyPartition("no validation recordings".into()));
        }
        let mut order = index_sequences(train, alpha);
        if order.is_empty() {
            return Err(TrainError::EmptyPartition(format!("no training recording holds {alpha} epochs")));
        }
        let mut net = SleepNet::<T>::new(cfg.model, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[INIT_STREAM])))?;
        let mut opt = Adam::new(cfg.optimizer, &net.params);
        let mut shuffler = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_STREAM]));

        let initial_loss = self.initial_loss(&net, train, &order)?;
        self.emit(&LogEvent::Start {
            seed: cfg.seed,
            family: cfg.selection.family().into(),
            train_recordings: train.len(),
            val_recordings: val.len(),
            train_sequences: order.len(),
            parameters: net.params.scalar_count(),
            initial_loss,
        })?;
        info!("training {} sequences from {} recordings, initial loss {initial_loss:.4}", order.len(), train.len());

        let mut history = Vec::with_capacity(cfg.passes);
        let mut best: Option<(usize, f64, f64, SleepNet<T>, Adam<T>)> = None;
        for pass in 1..=cfg.passes {
            order.shuffle(&mut shuffler);
            let (mut loss_sum, mut steps) = (0.0, 0usize);
            for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let (x, labels) = assemble_batch(train, chunk, alpha, tau)?;
                if labels.iter().all(|l| l.scored() == 0) {
                    continue;
                }
                let mut tape = Tape::new();
                let b = net.params.bind(&mut tape, true);
                let xv = tape.constant(x);
                let y = net.forward_train(&mut tape, &b, xv)?;
                let l = sequence_loss(&mut tape, y, &labels, cfg.model.loss_window())?;
                let loss = tape.value(l).data()[0].as_f64();
                if !loss.is_finite() {
                    let dump = self.dump(&net, &opt, pass);
                    return Err(TrainError::Diverged { what: "loss", pass, step, dump });
                }
                let grads = tape.backward(l)?;
                let g: Vec<Vec<T>> =
                    b.vars().iter().zip(net.params.iter()).map(|(v, p)| grads.get_or_zeros(*v, p.value.numel())).collect();
                if g.iter().flatten().any(|v| !v.is_finite()) {
                    let dump = self.dump(&net, &opt, pass);
                    return Err(TrainError::Diverged { what: "gradient", pass, step, dump });
                }
                opt.step(&mut net.params, &g)?;
                loss_sum += loss;
                steps += 1;
            }
            let train_loss = loss_sum / steps.max(1) as f64;

            let mut record = PassRecord { pass, steps, train_loss, val_kappa: None, val_accuracy: None, best: false };
            if pass % cfg.validation_every == 0 || pass == cfg.passes {
                let eval = evaluate(&net, val, SELECTION_WINDOW, cfg.batch_size)?;
                let (kappa, acc) = (eval.pooled_kappa(), eval.pooled_accuracy());
                record.val_kappa = Some(kappa);
                record.val_accuracy = Some(acc);
                if best.as_ref().is_none_or(|b| kappa > b.1) {
                    record.best = true;
                    best = Some((pass, kappa, acc, net.clone(), opt.clone()));
                }
            }
            info!("pass {pass}: loss {train_loss:.4}, val kappa {:?}", record.val_kappa);
            self.emit(&LogEvent::Pass(record.clone()))?;
            history.push(record);
        }

        let (selected_pass, val_kappa, val_accuracy, model, optimizer) =
            best.ok_or_else(|| TrainError::EmptyPartition("validation produced no finite kappa".into()))?;
        debug_assert_eq!(Some(selected_pass), argmax_pass(&history.iter().map(|h| h.val_kappa).collect::<Vec<_>>()));
        self.emit(&LogEvent::Selected { pass: selected_pass, val_kappa })?;
        let mut subjects: Vec<String> = train.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        subjects.sort();
        Ok(TrainOutcome {
            config: cfg,
            model,
            optimizer,
            selected_pass,
            val_kappa,
            val_accuracy,
            initial_loss,
            history,
            files_read: Vec::new(),
            train_subjects: subjects,
        })
    }
}

/// Parse an NDJSON training log.
pub fn read_log(text: &str) -> Result<Vec<LogEvent>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
