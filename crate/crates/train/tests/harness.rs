use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use somnet_core::{ModelConfig, EPOCH_SECONDS};
use somnet_data::synth::{generate_cohorts, CohortSpec, SiteProfile, SynthSpec};
use somnet_data::{split_cohort, AccessLog, CohortManifest, Split};
use somnet_train::experiments::run_loci;
use somnet_train::trainer::{fraction_subjects, partition_entries};
use somnet_train::*;
use tempfile::TempDir;

fn battery(subjects: usize, epochs: [usize; 2]) -> (TempDir, CohortManifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_cohorts(&SynthSpec::default_battery(subjects, epochs), dir.path(), 3).unwrap();
    (dir, split_cohort(&m, 3).unwrap())
}

fn light(passes: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { blocks: 2, base_filters: 1, hidden: 4, alpha: 2, ..Default::default() };
    cfg.passes = passes;
    cfg.batch_size = 4;
    cfg.optimizer.lr = 1e-3;
    cfg.seed = 5;
    cfg
}

fn files(m: &CohortManifest, cohorts: &[String], split: Split) -> BTreeSet<PathBuf> {
    m.select(cohorts, split).iter().flat_map(|e| [m.resolve(&e.edf), m.resolve(&e.hypnogram)]).collect()
}

#[test]
fn sequences_are_hypnogram_slices() {
    let (_dir, m) = battery(3, [7, 9]);
    let entries = m.select(&m.cohorts(), Split::Train);
    let recs = prepare_entries::<f32>(&m, &entries, &AccessLog::new(), None).unwrap();
    for rec in &recs {
        for alpha in 1..=3 {
            for tau in [1, 5, 30] {
                let seqs = sample_sequences(rec, alpha, tau).unwrap();
                assert_eq!(seqs.len(), rec.epochs() / alpha);
                let per_epoch = EPOCH_SECONDS * rec.signals.fs as usize;
                let targets = rec.hypnogram.targets();
                for (i, s) in seqs.iter().enumerate() {
                    assert_eq!(s.start_epoch, i * alpha);
                    let span = i * alpha * per_epoch..(i + 1) * alpha * per_epoch;
                    for c in 0..4 {
                        let row = &s.data.data()[c * alpha * per_epoch..(c + 1) * alpha * per_epoch];
                        assert_eq!(row, &rec.signals.channel(c)[span.clone()]);
                    }
                    let want: Vec<Option<usize>> =
                        targets[i * alpha..(i + 1) * alpha].iter().flat_map(|t| vec![*t; EPOCH_SECONDS / tau]).collect();
                    assert_eq!(s.labels.targets, want);
                }
            }
        }
    }
}

#[test]
fn reruns_are_bit_identical() {
    let (dir, m) = battery(4, [4, 6]);
    let run = |tag: &str| {
        let mut log = Vec::new();
        let out = Trainer::new(light(3)).unwrap().with_log(&mut log).run::<f32>(&m, &AccessLog::new()).unwrap();
        let path = dir.path().join(format!("{tag}.snck"));
        out.save(&path).unwrap();
        (log, std::fs::read(path).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert!(!a.0.is_empty());
    assert_eq!(a, b);
}

#[test]
fn selected_checkpoint_is_the_best_pass_and_reloads() {
    let (dir, m) = battery(4, [4, 6]);
    let mut log = Vec::new();
    let out = Trainer::new(light(4)).unwrap().with_log(&mut log).run::<f32>(&m, &AccessLog::new()).unwrap();
    let events = read_log(std::str::from_utf8(&log).unwrap()).unwrap();
    let passes: Vec<&PassRecord> = events.iter().filter_map(|e| if let LogEvent::Pass(p) = e { Some(p) } else { None }).collect();
    assert_eq!(passes.len(), 4);
    let kappas: Vec<Option<f64>> = passes.iter().map(|p| p.val_kappa).collect();
    let best = kappas.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = kappas.iter().position(|k| *k == Some(best)).unwrap() + 1;
    assert_eq!(out.selected_pass, first);
    assert_eq!(out.val_kappa, best);

    let path = dir.path().join("best.snck");
    let sidecar_path = out.save(&path).unwrap();
    let (net, sidecar) = load_checkpoint::<f32>(&path).unwrap();
    assert!(sidecar_path.exists());
    assert_eq!(sidecar.selected_pass, first);
    let (_, val) = partition_entries(&out.config, &m).unwrap();
    let val = prepare_entries::<f32>(&m, &val, &AccessLog::new(), None).unwrap();
    assert_eq!(evaluate(&net, &val, 30, 4).unwrap().pooled_kappa(), best);
    assert_eq!(evaluate(&out.model, &val, 30, 4).unwrap().pooled_kappa(), best);
}

#[test]
fn training_reads_only_its_partitions() {
    let (_dir, m) = battery(4, [4, 5]);
    let access = AccessLog::new();
    Trainer::new(light(1)).unwrap().run::<f32>(&m, &access).unwrap();
    let opened: BTreeSet<PathBuf> = access.opened().into_iter().collect();
    assert!(opened.is_disjoint(&files(&m, &m.cohorts(), Split::Test)));
    let mut allowed = files(&m, &m.cohorts(), Split::Train);
    allowed.extend(files(&m, &m.cohorts(), Split::Val));
    assert_eq!(opened, allowed);
}

#[test]
fn held_out_cohort_is_never_read() {
    let (_dir, m) = battery(4, [4, 5]);
    let all = m.cohorts();
    let held = all[1].clone();
    let mut cfg = light(1);
    cfg.selection = Selection::Cohorts { cohorts: all.iter().filter(|c| **c != held).cloned().collect() };
    let access = AccessLog::new();
    Trainer::new(cfg).unwrap().run::<f32>(&m, &access).unwrap();
    let opened = access.opened();
    assert!(!opened.is_empty());
    for split in [Split::Train, Split::Val, Split::Test] {
        let forbidden = files(&m, std::slice::from_ref(&held), split);
        assert!(opened.iter().all(|p| !forbidden.contains(p)), "{split:?}");
    }
}

#[test]
fn single_cohort_diagonal_recomputes_standalone() {
    let (_dir, m) = battery(4, [4, 5]);
    let target = m.cohorts()[2].clone();
    let mut exp = ExperimentConfig::default();
    exp.run = light(2);
    exp.cohorts = vec![target.clone()];
    let grid = run_loci::<f32>(&exp, &m, &AccessLog::new(), None).unwrap();
    assert_eq!(grid.runs.len(), 1);
    assert_eq!(grid.test_cohorts, m.cohorts());

    let mut cfg = light(2);
    cfg.selection = Selection::Cohorts { cohorts: vec![target.clone()] };
    let out = Trainer::new(cfg).unwrap().run::<f32>(&m, &AccessLog::new()).unwrap();
    let test = prepare_entries::<f32>(&m, &m.select(std::slice::from_ref(&target), Split::Test), &AccessLog::new(), None).unwrap();
    let eval = evaluate(&out.model, &test, 30, 4).unwrap();
    let (acc, kappa) = grid.runs[0].cohort_metrics(&target);
    assert_eq!(acc, eval.mean_accuracy());
    assert_eq!(kappa, eval.mean_kappa());
}

#[test]
fn full_fraction_is_the_training_partition() {
    let (_dir, m) = battery(5, [3, 4]);
    let mut cfg = light(1);
    let (all, _) = partition_entries(&cfg, &m).unwrap();
    cfg.selection = Selection::Fraction { fraction: 1.0 };
    let (full, _) = partition_entries(&cfg, &m).unwrap();
    let key = |v: Vec<&somnet_data::ManifestEntry>| v.into_iter().map(|e| e.edf.clone()).collect::<BTreeSet<_>>();
    assert_eq!(key(all), key(full));
}

/// Loss on a clean, single-site cohort after the default pass budget.
#[test]
fn loss_falls_below_a_fifth_of_initial() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        cohorts: vec![CohortSpec { name: "clean".into(), subjects: 8, epochs: [10, 10], recordings_per_subject: 1, site: SiteProfile::clean(128) }],
        transitions: Default::default(),
        signatures: Default::default(),
    };
    let m = split_cohort(&generate_cohorts(&spec, dir.path(), 4).unwrap(), 4).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { blocks: 5, base_filters: 4, hidden: 16, alpha: 2, ..Default::default() };
    cfg.batch_size = 4;
    cfg.optimizer.lr = 1e-3;
    let out = Trainer::new(cfg).unwrap().run::<f32>(&m, &AccessLog::new()).unwrap();
    assert_eq!(out.history.len(), 50);
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.2 * out.initial_loss, "{last} vs initial {}", out.initial_loss);
}

fn subject_pool(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("subject-{i:04}")).collect()
}

fn is_subset(small: &[String], large: &[String]) -> bool {
    let large: BTreeSet<&String> = large.iter().collect();
    small.iter().all(|s| large.contains(s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fraction_subsets_nest(n in 1usize..400, seed in any::<u64>()) {
        let pool = subject_pool(n);
        let sets: Vec<Vec<String>> = FRACTIONS.iter().map(|&f| fraction_subjects(&pool, f, seed).unwrap()).collect();
        for (f, s) in FRACTIONS.iter().zip(&sets) {
            let want = ((f * n as f64) - 1e-9).ceil().max(1.0) as usize;
            prop_assert_eq!(s.len(), want.min(n));
        }
        for w in sets.windows(2) {
            prop_assert!(is_subset(&w[0], &w[1]));
        }
        prop_assert_eq!(sets.last().unwrap().len(), n);
    }
}

#[test]
fn cached_preprocessing_skips_the_edf() {
    let (_dir, m) = battery(3, [3, 4]);
    let cache = tempfile::tempdir().unwrap();
    let entries = m.select(&m.cohorts(), Split::Train);
    let fresh = prepare_entries::<f32>(&m, &entries, &AccessLog::new(), Some(cache.path())).unwrap();
    let access = AccessLog::new();
    let cached = prepare_entries::<f32>(&m, &entries, &access, Some(cache.path())).unwrap();
    let want: Vec<PathBuf> =
        entries.iter().flat_map(|e| [somnet_train::dataset::cache_path(cache.path(), e), m.resolve(&e.hypnogram)]).collect();
    assert_eq!(access.opened(), want);
    for (a, b) in fresh.iter().zip(&cached) {
        assert_eq!(a.signals.data, b.signals.data);
        assert_eq!(a.hypnogram, b.hypnogram);
    }
}
