use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mdlsel_cli::plan::{ModelShape, PrequentialSettings, SweepSettings};
use mdlsel_cli::store::csv_config_hash;
use mdlsel_cli::{run_compare, run_envelope, run_learning_sweep, run_prequential, CompareInput, DigitSpec, ExperimentPlan};
use mdlsel_core::metrics::{RelianceRecord, RelianceSeries};
use mdlsel_core::prequential::{write_curves_csv, CandidateCurves, CurvePoint, PrequentialCurve, ReplicatePolicy};
use mdlsel_core::{Feature, TaskConfig};

fn tiny(task: TaskConfig) -> ExperimentPlan {
    let mut plan = ExperimentPlan::desk("tiny", task);
    plan.task = plan.task.at_side(8);
    plan.digits = DigitSpec::Synthetic { difficulty: 0.6 };
    plan.model = ModelShape {
        hidden_dim: 8,
        n_hidden_layers: 1,
    };
    plan.sizes = vec![16, 32, 64];
    plan.replicates = ReplicatePolicy::uniform(2);
    plan.prequential = PrequentialSettings {
        n: 64,
        first_block: 8,
        ratio: 2.0,
        val_size: 32,
        test_size: 64,
    };
    plan.sweep = SweepSettings {
        val_size: 32,
        test_size: 64,
        n_repeats: 1,
    };
    plan.train.max_epochs = 20;
    plan
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn prequential_output_ignores_threads_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut plan = tiny(TaskConfig::scenario_a(0.25));
    plan.jobs = Some(1);
    let a = run_prequential(&plan, &tmp.path().join("a")).unwrap();
    plan.jobs = Some(2);
    let b = run_prequential(&plan, &tmp.path().join("b")).unwrap();
    assert_eq!(read(&a.curves_path), read(&b.curves_path));
    assert_eq!(read(&tmp.path().join("a/preq.json")), read(&tmp.path().join("b/preq.json")));

    let text = String::from_utf8(read(&a.curves_path)).unwrap();
    assert_eq!(csv_config_hash(&text), Some(plan.config_hash().as_str()));

    // a lost cell is recomputed, the rest are reused
    fs::remove_file(tmp.path().join("a/cells/preq/color/r1.csv")).unwrap();
    let again = run_prequential(&plan, &tmp.path().join("a")).unwrap();
    assert_eq!(read(&again.curves_path), read(&b.curves_path));
}

#[test]
fn other_plan_cannot_reuse_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = tiny(TaskConfig::scenario_a(0.25));
    run_prequential(&plan, tmp.path()).unwrap();
    let mut other = plan.clone();
    other.seed += 1;
    let err = run_prequential(&other, tmp.path()).err().unwrap();
    assert!(err.to_string().contains("holds results of plan"), "{err}");
}

#[test]
fn digit_only_sweep_has_no_color_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let mut task = TaskConfig::scenario_a(0.25);
    task.digit_only = true;
    let plan = tiny(task);
    let series = run_learning_sweep(&plan, tmp.path()).unwrap();
    assert_eq!(series.sizes(), plan.sizes);
    for r in &series.records {
        assert_eq!(r.gaps.keys().copied().collect::<Vec<_>>(), vec![Feature::Digit]);
    }
}

fn point(train_size: usize, block_end: usize, test_bits: f64, orig_bits: f64) -> CurvePoint {
    CurvePoint {
        train_size,
        block_end,
        block_bits: test_bits * block_end as f64,
        test_bits,
        orig_bits,
        count: 1,
    }
}

/// Curves whose two trained lines cross exactly at `n`: color costs 0.1
/// bits up front at rate 0.5, digit costs `0.1 + n / 10` at rate 0.4.
fn crossing_curves(dir: &Path, n: f64) -> std::path::PathBuf {
    let curve = |fixed: f64, rate: f64| {
        let w = 1000.0;
        PrequentialCurve {
            points: vec![point(0, 1000, 1.0, 1.0), point(1000, 1001, 1.0 - fixed / w, rate)],
        }
    };
    let cands: Vec<CandidateCurves> = [(Feature::Color, 0.1, 0.5), (Feature::Digit, 0.1 + n / 10.0, 0.4)]
        .into_iter()
        .map(|(feature, fixed, rate)| CandidateCurves {
            feature,
            replicates: vec![(0, curve(fixed, rate))],
            mean: curve(fixed, rate),
        })
        .collect();
    let mut text = Vec::new();
    write_curves_csv(&cands, Some("config_hash=fabricated"), &mut text).unwrap();
    fs::create_dir_all(dir).unwrap();
    let path = dir.join("curves.csv");
    fs::write(&path, text).unwrap();
    path
}

/// Color leads at `lo`, digit leads at `hi`: the crossing is their
/// geometric mean.
fn crossing_series(dir: &Path, lo: usize, hi: usize) {
    let record = |n: usize, color: f64, digit: f64| RelianceRecord {
        n,
        seed: 0,
        gaps: BTreeMap::from([(Feature::Color, color), (Feature::Digit, digit)]),
        train_accuracy: 1.0,
        val_accuracy: 1.0,
        ood: BTreeMap::new(),
    };
    let series = RelianceSeries {
        records: vec![record(lo, 0.3, 0.1), record(hi, 0.1, 0.3)],
    };
    let mut text = Vec::new();
    series.write_csv(None, &mut text).unwrap();
    fs::write(dir.join("reliance.csv"), text).unwrap();
}

#[test]
fn envelope_finds_fabricated_crossover() {
    let tmp = tempfile::tempdir().unwrap();
    let curves = crossing_curves(tmp.path(), 100.0);
    let file = run_envelope(&[curves], &[10, 100, 1000], tmp.path(), "t").unwrap();
    let t = file.report.transitions.last().unwrap();
    assert_eq!((t.from, t.to), (Feature::Color, Feature::Digit));
    assert!((t.n - 100.0).abs() < 1e-9, "{}", t.n);
    assert_eq!(file.report.n_theory_grid, Some(100));
    assert_eq!(file.config_hashes, vec!["fabricated".to_string()]);
    assert!(tmp.path().join("envelope.svg").is_file());
}

#[test]
fn single_candidate_has_no_transition() {
    let tmp = tempfile::tempdir().unwrap();
    let mut plan = tiny(TaskConfig::scenario_a(0.25));
    plan.features = vec![Feature::Digit];
    let preq = run_prequential(&plan, tmp.path()).unwrap();
    let file = run_envelope(&[preq.curves_path], &plan.sizes, tmp.path(), "digit").unwrap();
    assert!(file.report.transitions.is_empty());
    assert_eq!(file.report.n_theory, None);
}

#[test]
fn matched_transitions_correlate_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for k in [1usize, 3, 10, 30] {
        let dir = tmp.path().join(format!("cfg{k}"));
        let curves = crossing_curves(&dir, 100.0 * k as f64);
        run_envelope(&[curves], &[100], &dir, "t").unwrap();
        crossing_series(&dir, 25 * k, 100 * k);
        inputs.push(CompareInput::from_dir(&dir));
    }
    // a configuration without a training crossing is reported, not paired
    let flat = tmp.path().join("flat");
    let curves = crossing_curves(&flat, 100.0);
    run_envelope(&[curves], &[100], &flat, "t").unwrap();
    crossing_series(&flat, 25, 100);
    let mut series = RelianceSeries::read_csv(&read(&flat.join("reliance.csv"))[..]).unwrap();
    series.records[1].gaps.insert(Feature::Digit, 0.0);
    let mut text = Vec::new();
    series.write_csv(None, &mut text).unwrap();
    fs::write(flat.join("reliance.csv"), text).unwrap();
    inputs.push(CompareInput::from_dir(&flat));

    let report = run_compare(&inputs, &tmp.path().join("cmp")).unwrap();
    assert_eq!(report.pairs.len(), 4);
    assert_eq!(report.absent.len(), 1);
    assert_eq!(report.absent[0].label, "flat");
    for (p, k) in report.pairs.iter().zip([1.0, 3.0, 10.0, 30.0]) {
        assert!((p.n_theory - 100.0 * k).abs() < 1e-6);
        assert!((p.n_empirical - 50.0 * k).abs() < 1e-6);
    }
    let c = report.correlation.unwrap();
    assert!((c.pearson_log10 - 1.0).abs() < 1e-12);
    assert_eq!(c.spearman, 1.0);
    assert!(tmp.path().join("cmp/scatter.csv").is_file());
}
