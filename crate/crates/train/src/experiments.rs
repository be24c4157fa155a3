//! Runners for the four experiment families: temporal-context sweep,
//! single-cohort versus held-out-cohort grids, cohort combinations and
//! training-data fractions.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use somnet_core::objective::WINDOW_GRID;
use somnet_core::{Real, EPOCH_SECONDS};
use somnet_data::{AccessLog, CohortManifest, Split};

use crate::config::{RunConfig, Selection, FRACTIONS};
use crate::dataset::{prepare_entries, PreparedRecording};
use crate::error::{io_err, Result, TrainError};
use crate::evaluate::{densities, evaluate, score, Evaluation};
use crate::report::MetricsReport;
use crate::trainer::{even_shares, partition_entries, TrainOutcome, Trainer, SELECTION_WINDOW};

pub const HIDDEN_UNIT_GRID: [usize; 7] = [0, 64, 128, 256, 512, 1024, 2048];
pub const SEQUENCE_MINUTES: [usize; 5] = [2, 3, 4, 5, 10];
pub const COMBINATION_SIZES: [usize; 3] = [2, 3, 4];
pub const COMBINATION_PSGS: usize = 500;

fn hidden_grid() -> Vec<usize> {
    HIDDEN_UNIT_GRID.to_vec()
}

fn minutes_grid() -> Vec<usize> {
    SEQUENCE_MINUTES.to_vec()
}

fn window_grid() -> Vec<usize> {
    WINDOW_GRID.to_vec()
}

fn fraction_grid() -> Vec<f64> {
    FRACTIONS.to_vec()
}

fn combination_sizes() -> Vec<usize> {
    COMBINATION_SIZES.to_vec()
}

fn combination_psgs() -> usize {
    COMBINATION_PSGS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default = "hidden_grid")]
    pub hidden_units: Vec<usize>,
    #[serde(default = "minutes_grid")]
    pub sequence_minutes: Vec<usize>,
    #[serde(default = "window_grid")]
    pub windows: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { hidden_units: hidden_grid(), sequence_minutes: minutes_grid(), windows: window_grid() }
    }
}

/// Settings shared by the experiment runners; `run` is the template every
/// individual training run starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunConfig,
    /// Cohorts that get a row in the single-cohort and held-out grids; empty
    /// means all.
    #[serde(default)]
    pub cohorts: Vec<String>,
    /// Weight decay of the regularized single-cohort variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loci_weight_decay: Option<f64>,
    #[serde(default = "combination_sizes")]
    pub combination_sizes: Vec<usize>,
    #[serde(default = "combination_psgs")]
    pub total_psgs: usize,
    #[serde(default = "fraction_grid")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            cohorts: Vec::new(),
            loci_weight_decay: None,
            combination_sizes: combination_sizes(),
            total_psgs: COMBINATION_PSGS,
            fractions: fraction_grid(),
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(path))
    }

    fn row_cohorts(&self, manifest: &CohortManifest) -> Result<Vec<String>> {
        let all = manifest.cohorts();
        if let Some(c) = self.cohorts.iter().find(|c| !all.contains(c)) {
            return Err(TrainError::Config(format!("cohort {c:?} is not in the manifest")));
        }
        Ok(if self.cohorts.is_empty() { all } else { all.into_iter().filter(|c| self.cohorts.contains(c)).collect() })
    }
}

/// One training run and its test-partition evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub train_cohorts: Vec<String>,
    pub train_recordings: usize,
    pub train_subjects: usize,
    pub selected_pass: usize,
    pub val_kappa: f64,
    pub test: MetricsReport,
}

impl RunResult {
    pub fn accuracy(&self) -> f64 {
        mean(self.test.primary.subjects.iter().map(|s| s.accuracy))
    }

    pub fn kappa(&self) -> f64 {
        mean(self.test.primary.subjects.iter().map(|s| s.kappa))
    }

    /// Mean per-subject accuracy and kappa over the test subjects of `cohort`.
    pub fn cohort_metrics(&self, cohort: &str) -> (f64, f64) {
        let rows = || self.test.primary.subjects.iter().filter(|s| s.cohort == cohort);
        (mean(rows().map(|s| s.accuracy)), mean(rows().map(|s| s.kappa)))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Test recordings loaded once, after the first training run finished.
struct TestSet<T: Real> {
    recs: Option<Vec<PreparedRecording<T>>>,
}

impl<T: Real> TestSet<T> {
    fn new() -> Self {
        Self { recs: None }
    }

    fn get(&mut self, manifest: &CohortManifest, access: &AccessLog, cache: Option<&Path>) -> Result<&[PreparedRecording<T>]> {
        if self.recs.is_none() {
            let entries = manifest.select(&manifest.cohorts(), Split::Test);
            if entries.is_empty() {
                return Err(TrainError::EmptyPartition("no test recordings".into()));
            }
            self.recs = Some(prepare_entries(manifest, &entries, access, cache)?);
        }
        Ok(self.recs.as_deref().unwrap())
    }
}

fn run_one<T: Real>(
    label: String,
    cfg: RunConfig,
    manifest: &CohortManifest,
    access: &AccessLog,
    tests: &mut TestSet<T>,
) -> Result<(RunResult, TrainOutcome<T>)> {
    info!("{label}: training");
    let (train_entries, _) = partition_entries(&cfg, manifest)?;
    let train_recordings = train_entries.len();
    let train_cohorts = cfg.selection.cohorts(&manifest.cohorts());
    let cache = cfg.cache_dir.clone();
    let outcome = Trainer::new(cfg)?.run::<T>(manifest, access)?;
    let test = tests.get(manifest, access, cache.as_deref())?;
    let eval = evaluate(&outcome.model, test, SELECTION_WINDOW, outcome.config.batch_size)?;
    let result = RunResult {
        test: MetricsReport::new(&label, &eval, &[]),
        label,
        train_cohorts,
        train_recordings,
        train_subjects: outcome.train_subjects.len(),
        selected_pass: outcome.selected_pass,
        val_kappa: outcome.val_kappa,
    };
    info!("{}: test accuracy {:.4}, kappa {:.4}", result.label, result.accuracy(), result.kappa());
    Ok((result, outcome))
}

/// Rows are training configurations, columns test cohorts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub family: String,
    pub test_cohorts: Vec<String>,
    pub runs: Vec<RunResult>,
}

impl Grid {
    pub fn accuracy(&self) -> Vec<Vec<f64>> {
        self.runs.iter().map(|r| self.test_cohorts.iter().map(|c| r.cohort_metrics(c).0).collect()).collect()
    }

    pub fn kappa(&self) -> Vec<Vec<f64>> {
        self.runs.iter().map(|r| self.test_cohorts.iter().map(|c| r.cohort_metrics(c).1).collect()).collect()
    }

    /// `config,metric,<cohorts…>,all`, one accuracy and one kappa line per run.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["config".to_string(), "metric".into()];
        header.extend(self.test_cohorts.iter().cloned());
        header.push("all".into());
        w.write_record(&header)?;
        for (metric, grid) in [("accuracy", self.accuracy()), ("kappa", self.kappa())] {
            for (run, row) in self.runs.iter().zip(grid) {
                let overall = if metric == "accuracy" { run.accuracy() } else { run.kappa() };
                let mut rec = vec![run.label.clone(), metric.to_string()];
                rec.extend(row.iter().chain([&overall]).map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Train on one cohort at a time, test on every cohort.
pub fn run_loci<T: Real>(exp: &ExperimentConfig, manifest: &CohortManifest, access: &AccessLog, weight_decay: Option<f64>) -> Result<Grid> {
    let all = manifest.cohorts();
    if all.len() < 2 {
        return Err(TrainError::Config("single-cohort manifest".into()));
    }
    let mut tests = TestSet::<T>::new();
    let mut runs = Vec::new();
    for c in exp.row_cohorts(manifest)? {
        let mut cfg = exp.run.clone();
        cfg.selection = Selection::Cohorts { cohorts: vec![c.clone()] };
        let label = match weight_decay {
            Some(wd) => {
                cfg.optimizer.weight_decay = wd;
                format!("LOCI-wd-{c}")
            }
            None => format!("LOCI-{c}"),
        };
        runs.push(run_one(label, cfg, manifest, access, &mut tests)?.0);
    }
    Ok(Grid { family: if weight_decay.is_some() { "loci-wd" } else { "loci" }.into(), test_cohorts: all, runs })
}

/// Train on all cohorts but one, test on every cohort.
pub fn run_loco<T: Real>(exp: &ExperimentConfig, manifest: &CohortManifest, access: &AccessLog) -> Result<Grid> {
    let all = manifest.cohorts();
    if all.len() < 2 {
        return Err(TrainError::Config("single-cohort manifest".into()));
    }
    let mut tests = TestSet::<T>::new();
    let mut runs = Vec::new();
    for c in exp.row_cohorts(manifest)? {
        let mut cfg = exp.run.clone();
        cfg.selection = Selection::Cohorts { cohorts: all.iter().filter(|o| **o != c).cloned().collect() };
        runs.push(run_one(format!("LOCO-{c}"), cfg, manifest, access, &mut tests)?.0);
    }
    Ok(Grid { family: "loco".into(), test_cohorts: all, runs })
}

/// Every `k`-subset of the sorted cohort names, lexicographic, for each `k`
/// in `sizes`, with its per-cohort share of `total` recordings.
pub fn combination_plan(cohorts: &[String], sizes: &[usize], total: usize) -> Result<Vec<Vec<(String, usize)>>> {
    let mut names = cohorts.to_vec();
    names.sort();
    names.dedup();
    let mut plan = Vec::new();
    for &k in sizes {
        if k == 0 || k > names.len() {
            return Err(TrainError::Config(format!("cannot form {k}-combinations of {} cohorts", names.len())));
        }
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let pick: Vec<String> = idx.iter().map(|&i| names[i].clone()).collect();
            plan.push(even_shares(&pick, total));
            // advance to the next combination in lexicographic order
            let Some(i) = (0..k).rev().find(|&i| idx[i] != i + names.len() - k) else { break };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationResult {
    pub k: usize,
    pub shares: Vec<(String, usize)>,
    pub run: RunResult,
}

/// Train on `total_psgs` recordings drawn evenly from each cohort
/// combination; test on the full test partition.
pub fn run_combinations<T: Real>(exp: &ExperimentConfig, manifest: &CohortManifest, access: &AccessLog) -> Result<Vec<CombinationResult>> {
    let plan = combination_plan(&manifest.cohorts(), &exp.combination_sizes, exp.total_psgs)?;
    // fail before any training when a draw cannot be satisfied
    for shares in &plan {
        for (cohort, need) in shares {
            let have = manifest.select(std::slice::from_ref(cohort), Split::Train).len();
            if have < *need {
                return Err(TrainError::InsufficientPsgs { cohort: cohort.clone(), need: *need, have });
            }
        }
    }
    let mut tests = TestSet::<T>::new();
    let mut out = Vec::new();
    for shares in plan {
        let cohorts: Vec<String> = shares.iter().map(|s| s.0.clone()).collect();
        let mut cfg = exp.run.clone();
        cfg.selection = Selection::Combination { cohorts: cohorts.clone(), psgs: exp.total_psgs };
        let (run, _) = run_one(cohorts.join("+"), cfg, manifest, access, &mut tests)?;
        out.push(CombinationResult { k: cohorts.len(), shares, run });
    }
    Ok(out)
}

pub fn write_combinations_csv(rows: &[CombinationResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "cohorts", "psgs", "selected_pass", "val_kappa", "accuracy", "kappa"])?;
    for r in rows {
        let psgs: Vec<String> = r.shares.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        w.write_record([
            r.k.to_string(),
            r.run.label.clone(),
            psgs.join(" "),
            r.run.selected_pass.to_string(),
            r.run.val_kappa.to_string(),
            r.run.accuracy().to_string(),
            r.run.kappa().to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub fraction: f64,
    pub run: RunResult,
}

/// Train on nested subject subsamples of the mixed training partition.
pub fn run_fractions<T: Real>(exp: &ExperimentConfig, manifest: &CohortManifest, access: &AccessLog) -> Result<Vec<FractionResult>> {
    let mut tests = TestSet::<T>::new();
    let mut out = Vec::new();
    for &fraction in &exp.fractions {
        let mut cfg = exp.run.clone();
        cfg.selection = Selection::Fraction { fraction };
        let (run, _) = run_one(format!("fraction-{fraction}"), cfg, manifest, access, &mut tests)?;
        out.push(FractionResult { fraction, run });
    }
    Ok(out)
}

pub fn write_fractions_csv(rows: &[FractionResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fraction", "subjects", "recordings", "selected_pass", "val_kappa", "accuracy", "kappa"])?;
    for r in rows {
        w.write_record([
            r.fraction.to_string(),
            r.run.train_subjects.to_string(),
            r.run.train_recordings.to_string(),
            r.run.selected_pass.to_string(),
            r.run.val_kappa.to_string(),
            r.run.accuracy().to_string(),
            r.run.kappa().to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// One row of the temporal-context table, evaluated on the validation
/// partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `hidden_units`, `sequence_minutes` or `window_seconds`.
    pub group: String,
    pub value: usize,
    pub selected_pass: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn group(&self, name: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.group == name).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "group", "value", "n", "accuracy_mean", "accuracy_sd", "accuracy_median", "accuracy_ci_low", "accuracy_ci_high", "kappa_mean",
            "kappa_sd", "kappa_median", "kappa_ci_low", "kappa_ci_high",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.group.clone(), r.value.to_string(), r.report.primary.subjects.len().to_string()];
            match &r.report.primary.aggregate {
                Some(a) => {
                    for s in [a.accuracy, a.kappa] {
                        rec.extend([s.mean, s.sd, s.median, s.ci_low, s.ci_high].map(|v| v.to_string()));
                    }
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 10)),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Vary the recurrent width and the sequence length, each with the other
/// held at the template, then score the template model at every averaging
/// window. All rows use the validation partition of every cohort.
pub fn run_hidden_unit_sweep<T: Real>(exp: &ExperimentConfig, manifest: &CohortManifest, access: &AccessLog) -> Result<SweepTable> {
    let base = RunConfig { selection: Selection::All, ..exp.run.clone() };
    let (_, val_entries) = partition_entries(&base, manifest)?;
    let mut val: Option<Vec<PreparedRecording<T>>> = None;
    let mut rows = Vec::new();
    let mut template: Option<TrainOutcome<T>> = None;

    let mut variants: Vec<(&str, usize, RunConfig)> = Vec::new();
    for &h in &exp.sweep.hidden_units {
        let mut cfg = base.clone();
        cfg.model.hidden = h;
        variants.push(("hidden_units", h, cfg));
    }
    for &m in &exp.sweep.sequence_minutes {
        let mut cfg = base.clone();
        cfg.model.alpha = m * 60 / EPOCH_SECONDS;
        variants.push(("sequence_minutes", m, cfg));
    }
    let mut trained: Vec<(RunConfig, TrainOutcome<T>)> = Vec::new();
    for (group, value, cfg) in variants {
        info!("sweep {group} = {value}");
        let outcome = match trained.iter().find(|(c, _)| *c == cfg) {
            Some((_, o)) => o.clone(),
            None => {
                let o = Trainer::new(cfg.clone())?.run::<T>(manifest, access)?;
                trained.push((cfg.clone(), o.clone()));
                o
            }
        };
        if val.is_none() {
            val = Some(prepare_entries(manifest, &val_entries, access, base.cache_dir.as_deref())?);
        }
        let eval = evaluate(&outcome.model, val.as_deref().unwrap(), SELECTION_WINDOW, cfg.batch_size)?;
        rows.push(SweepRow {
            group: group.into(),
            value,
            selected_pass: outcome.selected_pass,
            report: MetricsReport::new(format!("{group}={value}"), &eval, &[]),
        });
        if cfg == base {
            template = Some(outcome);
        }
    }
    if !exp.sweep.windows.is_empty() {
        let outcome = match template {
            Some(o) => o,
            None => Trainer::new(base.clone())?.run::<T>(manifest, access)?,
        };
        if val.is_none() {
            val = Some(prepare_entries(manifest, &val_entries, access, base.cache_dir.as_deref())?);
        }
        let recs = val.as_deref().unwrap();
        let d = densities(&outcome.model, recs, base.batch_size)?;
        for &w in &exp.sweep.windows {
            let eval: Evaluation = score(&d, recs, w, base.model.classes)?;
            rows.push(SweepRow {
                group: "window_seconds".into(),
                value: w,
                selected_pass: outcome.selected_pass,
                report: MetricsReport::new(format!("window_seconds={w}"), &eval, &[]),
            });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        ["ISRUC", "MrOS", "SHHS", "SSC", "WSC"][..n].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn five_cohorts_give_ten_ten_five() {
        let plan = combination_plan(&names(5), &COMBINATION_SIZES, 500).unwrap();
        let count = |k| plan.iter().filter(|p| p.len() == k).count();
        assert_eq!((count(2), count(3), count(4), plan.len()), (10, 10, 5, 25));
        assert!(plan.iter().all(|p| p.iter().map(|s| s.1).sum::<usize>() == 500));
        let mut keys: Vec<Vec<&String>> = plan.iter().map(|p| p.iter().map(|s| &s.0).collect()).collect();
        keys.dedup();
        assert_eq!(keys.len(), 25);
        assert_eq!(plan[0], vec![("ISRUC".to_string(), 250), ("MrOS".to_string(), 250)]);
        assert!(combination_plan(&names(3), &[4], 500).is_err());
    }

    #[test]
    fn sweep_grid_matches_table_layout() {
        let g = SweepGrid::default();
        assert_eq!((g.hidden_units.len(), g.sequence_minutes.len(), g.windows.len()), (7, 5, 6));
        let mut expect = vec![0];
        expect.extend((6..=11).map(|k| 1usize << k));
        assert_eq!(g.hidden_units, expect);
    }

    #[test]
    fn experiment_config_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.fractions, FRACTIONS.to_vec());
        assert_eq!(cfg.total_psgs, 500);
    }
}
