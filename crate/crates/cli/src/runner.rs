//! The pipeline stages: prequential curves, envelopes, learning sweeps,
//! and the theory-versus-training comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdlsel_core::analytic::{build_table, expected_excess_bits, Archetype, ArchetypeKind, ExcessReport};
use mdlsel_core::envelope::{envelope_report, envelope_svg, intermediate_models, nearest_grid, EnvelopeReport};
use mdlsel_core::metrics::{
    correlation_report, empirical_transition, ood_accuracies, permutation_importance, predictor_accuracy,
    ComparisonPair, CorrelationReport, EmpiricalTransition, OodSets, RelianceRecord, RelianceSeries,
};
use mdlsel_core::nnet::{train_until_converged, LabeledData};
use mdlsel_core::prequential::{
    average_curves, candidate_eval_sets, candidate_replicate, read_curves_csv, write_curves_csv,
    CandidateCurves, Decomposition, EvalSets, PrequentialCurve,
};
use mdlsel_core::rng::{derive_seed, stream};
use mdlsel_core::svg::{Plot, Series};
use mdlsel_core::taskgen::{
    make_dataset, make_feature_isolated_dataset, make_ood_testset, write_container, FeatureStatus,
};
use mdlsel_core::{Feature, TaskConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::plan::ExperimentPlan;
use crate::store::{csv_config_hash, schedule, Manifest, RunDir};

/// Pearson correlation on log N reported for the full-scale study; kept
/// in comparison reports as context only.
pub const FULL_SCALE_REFERENCE_PEARSON: f64 = 0.976;

pub const CURVES_FILE: &str = "curves.csv";
pub const ENVELOPE_FILE: &str = "envelope.json";
pub const RELIANCE_FILE: &str = "reliance.csv";

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn hash_comment(hash: &str) -> String {
    format!("config_hash={hash}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub feature: Feature,
    pub seeds: Vec<u64>,
    pub decomposition: Decomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialSummary {
    pub config_hash: String,
    pub candidates: Vec<CandidateSummary>,
}

pub struct PrequentialOutput {
    pub curves_path: PathBuf,
    pub candidates: Vec<CandidateCurves>,
}

struct PreqCell {
    feature: Feature,
    replicate: usize,
}

impl PreqCell {
    fn key(&self) -> String {
        format!("preq/{}/r{}", self.feature, self.replicate)
    }

    fn file(&self) -> String {
        format!("cells/{}.csv", self.key())
    }
}

/// Codes every candidate feature prequentially; one cell per
/// (feature, replicate). Completed cells of an earlier run are reused.
pub fn run_prequential(plan: &ExperimentPlan, out: &Path) -> Result<PrequentialOutput> {
    plan.validate()?;
    let dir = RunDir::create(out)?;
    let hash = plan.config_hash();
    let mut manifest = Manifest::open(&dir, "preq", plan)?;
    let features = plan.candidate_features();
    if features.is_empty() {
        return Err(CliError::Plan("no informative feature to isolate".into()));
    }
    let source = plan.digit_source()?;
    let pplan = plan.prequential_plan();
    let learner = plan.learner();

    let cells: Vec<PreqCell> = features
        .iter()
        .flat_map(|&feature| (0..plan.replicates.max()).map(move |replicate| PreqCell { feature, replicate }))
        .filter(|c| !(manifest.is_done(&c.key()) && dir.exists(&c.file())))
        .collect();
    let mut evals: BTreeMap<Feature, EvalSets> = BTreeMap::new();
    for c in &cells {
        if let std::collections::btree_map::Entry::Vacant(slot) = evals.entry(c.feature) {
            slot.insert(candidate_eval_sets(&plan.task, c.feature, &pplan, source.as_ref())?);
        }
    }
    let outcome = schedule(
        &cells,
        plan.jobs,
        |c| {
            let rep = candidate_replicate(
                &plan.task,
                c.feature,
                &pplan,
                c.replicate,
                &learner,
                &evals[&c.feature],
                source.as_ref(),
            )?;
            let seed = rep.as_ref().map_or(0, |r| r.0);
            let cand = CandidateCurves {
                feature: c.feature,
                mean: rep.as_ref().map_or(PrequentialCurve { points: Vec::new() }, |r| r.1.clone()),
                replicates: rep.into_iter().collect(),
            };
            let mut text = Vec::new();
            write_curves_csv(&[cand], None, &mut text)?;
            Ok((seed, text))
        },
        |i, (seed, text)| {
            dir.write(&cells[i].file(), &text)?;
            manifest.mark_done(&cells[i].key(), seed);
            manifest.save(&dir)
        },
    );
    manifest.save(&dir)?;
    outcome?;

    let mut candidates = Vec::new();
    for &feature in &features {
        let mut replicates = Vec::new();
        for replicate in 0..plan.replicates.max() {
            let cell = PreqCell { feature, replicate };
            let parsed = read_curves_csv(dir.read(&cell.file())?.as_slice())?;
            replicates.extend(parsed.into_iter().flat_map(|c| c.replicates));
        }
        let curves: Vec<PrequentialCurve> = replicates.iter().map(|r| r.1.clone()).collect();
        candidates.push(CandidateCurves {
            feature,
            mean: average_curves(&curves)?,
            replicates,
        });
    }

    let mut text = Vec::new();
    write_curves_csv(&candidates, Some(&hash_comment(&hash)), &mut text)?;
    let curves_path = dir.write(CURVES_FILE, &text)?;
    let summary = PrequentialSummary {
        config_hash: hash,
        candidates: candidates
            .iter()
            .map(|c| {
                Ok(CandidateSummary {
                    feature: c.feature,
                    seeds: c.replicates.iter().map(|r| r.0).collect(),
                    decomposition: c.decomposition()?,
                })
            })
            .collect::<Result<_>>()?,
    };
    dir.write("preq.json", &json_bytes(&summary)?)?;
    dir.write("curves.svg", curves_svg(&candidates, &plan.name).as_bytes())?;
    manifest.outputs = vec![CURVES_FILE.into(), "preq.json".into(), "curves.svg".into()];
    manifest.finished = true;
    manifest.save(&dir)?;
    Ok(PrequentialOutput {
        curves_path,
        candidates,
    })
}

fn curves_svg(candidates: &[CandidateCurves], title: &str) -> String {
    let mut series = Vec::new();
    for c in candidates {
        let pts = |f: fn(&mdlsel_core::prequential::CurvePoint) -> f64| {
            c.mean
                .points
                .iter()
                .filter(|p| p.train_size > 0)
                .map(|p| (p.train_size as f64, f(p)))
                .collect()
        };
        series.push(Series {
            label: format!("{} held-out", c.feature),
            points: pts(|p| p.test_bits),
            line: true,
            width: 1.5,
        });
        series.push(Series {
            label: format!("{} original", c.feature),
            points: pts(|p| p.orig_bits),
            line: true,
            width: 0.8,
        });
    }
    Plot {
        title: format!("{title}: per-sample codelength"),
        x_label: "training size".into(),
        y_label: "bits per label".into(),
        series,
        markers: Vec::new(),
        identity: false,
        linear_y: true,
    }
    .render()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFile {
    pub config_hashes: Vec<String>,
    pub grid: Vec<usize>,
    pub report: EnvelopeReport,
}

/// Pools the intermediate-model lines of every candidate in `curve_files`
/// into one lower envelope.
pub fn run_envelope(curve_files: &[PathBuf], grid: &[usize], out: &Path, title: &str) -> Result<EnvelopeFile> {
    if curve_files.is_empty() {
        return Err(CliError::Missing("no curve files".into()));
    }
    let mut hashes = Vec::new();
    let mut candidates: Vec<CandidateCurves> = Vec::new();
    for path in curve_files {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if let Some(h) = csv_config_hash(&text) {
            if !hashes.iter().any(|x| x == h) {
                hashes.push(h.to_string());
            }
        }
        for cand in read_curves_csv(text.as_bytes())? {
            if candidates.iter().any(|c| c.feature == cand.feature) {
                return Err(CliError::Plan(format!("feature {} appears in two curve files", cand.feature)));
            }
            candidates.push(cand);
        }
    }
    candidates.sort_by_key(|c| c.feature);
    let families: Vec<_> = candidates
        .iter()
        .map(|c| intermediate_models(&c.mean, c.feature))
        .collect();
    let report = envelope_report(&families, grid)
        .ok_or_else(|| CliError::Missing("curves yield no compression lines".into()))?;
    let dir = RunDir::create(out)?;
    let file = EnvelopeFile {
        config_hashes: hashes,
        grid: grid.to_vec(),
        report,
    };
    dir.write(ENVELOPE_FILE, &json_bytes(&file)?)?;
    dir.write("envelope.svg", envelope_svg(&file.report, title).as_bytes())?;
    Ok(file)
}

pub fn load_envelope(path: &Path) -> Result<EnvelopeFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTransition {
    pub a: Feature,
    pub b: Feature,
    pub transition: Option<EmpiricalTransition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub transitions: Vec<PairTransition>,
}

struct SweepCell {
    n: usize,
    replicate: usize,
    seed: u64,
}

impl SweepCell {
    fn key(&self) -> String {
        format!("sweep/n{}/s{}", self.n, self.replicate)
    }

    fn file(&self) -> String {
        format!("cells/{}.csv", self.key())
    }
}

/// Trains one network per (size, replicate) on the mixed task and records
/// its permutation gaps and split accuracies.
pub fn run_learning_sweep(plan: &ExperimentPlan, out: &Path) -> Result<RelianceSeries> {
    plan.validate()?;
    let dir = RunDir::create(out)?;
    let hash = plan.config_hash();
    let mut manifest = Manifest::open(&dir, "sweep", plan)?;
    let source = plan.digit_source()?;
    let cfg = &plan.task;
    let arch = plan.architecture();

    let all: Vec<SweepCell> = plan
        .sizes
        .iter()
        .flat_map(|&n| {
            (0..plan.replicates.count(n)).map(move |replicate| SweepCell {
                n,
                replicate,
                seed: derive_seed(plan.seed, replicate as u64, &format!("sweep:{n}")),
            })
        })
        .collect();
    let pending: Vec<&SweepCell> = all
        .iter()
        .filter(|c| !(manifest.is_done(&c.key()) && dir.exists(&c.file())))
        .collect();

    if !pending.is_empty() {
        let sw = &plan.sweep;
        let val = make_dataset(cfg, sw.val_size, derive_seed(plan.seed, 0, "sweep-val"), source.as_ref())?;
        let test = make_dataset(cfg, sw.test_size, derive_seed(plan.seed, 0, "sweep-test"), source.as_ref())?;
        let ood = OodSets::build(cfg, sw.test_size, derive_seed(plan.seed, 0, "sweep-ood"), source.as_ref())?;
        let val_data = LabeledData::from(&val);
        let present = cfg.present_features();
        let outcome = schedule(
            &pending,
            plan.jobs,
            |c| {
                let train = make_dataset(cfg, c.n, c.seed, source.as_ref())?;
                let train_data = LabeledData::from(&train);
                let (model, _) = train_until_converged(&train_data, &val_data, &plan.train.with_seed(c.seed), arch)?;
                let mut gaps = BTreeMap::new();
                for &f in &present {
                    let mut rng = stream(c.seed, 0, &format!("perm:{f}"));
                    gaps.insert(f, permutation_importance(&model, &test, f, &mut rng, sw.n_repeats)?);
                }
                let record = RelianceRecord {
                    n: c.n,
                    seed: c.seed,
                    gaps,
                    train_accuracy: predictor_accuracy(&model, &train_data)?,
                    val_accuracy: predictor_accuracy(&model, &val_data)?,
                    ood: ood_accuracies(&model, &ood)?,
                };
                let mut text = Vec::new();
                RelianceSeries { records: vec![record] }.write_csv(None, &mut text)?;
                Ok(text)
            },
            |i, text| {
                let c = pending[i];
                dir.write(&c.file(), &text)?;
                manifest.mark_done(&c.key(), c.seed);
                manifest.save(&dir)
            },
        );
        manifest.save(&dir)?;
        outcome?;
    }

    let mut series = RelianceSeries::default();
    for c in &all {
        series
            .records
            .extend(RelianceSeries::read_csv(dir.read(&c.file())?.as_slice())?.records);
    }
    let mut text = Vec::new();
    series.write_csv(Some(&hash_comment(&hash)), &mut text)?;
    dir.write(RELIANCE_FILE, &text)?;

    let features = cfg.present_features();
    let mut transitions = Vec::new();
    for (i, &a) in features.iter().enumerate() {
        for &b in &features[i + 1..] {
            transitions.push(PairTransition {
                a,
                b,
                transition: empirical_transition(&series, a, b),
            });
        }
    }
    let summary = SweepSummary {
        config_hash: hash,
        transitions,
    };
    dir.write("sweep.json", &json_bytes(&summary)?)?;
    dir.write("reliance.svg", reliance_svg(&series, &features, &plan.name).as_bytes())?;
    manifest.outputs = vec![RELIANCE_FILE.into(), "sweep.json".into(), "reliance.svg".into()];
    manifest.finished = true;
    manifest.save(&dir)?;
    Ok(series)
}

fn reliance_svg(series: &RelianceSeries, features: &[Feature], title: &str) -> String {
    Plot {
        title: format!("{title}: accuracy gap after permutation"),
        x_label: "training size N".into(),
        y_label: "accuracy gap".into(),
        series: features
            .iter()
            .map(|&f| Series {
                label: f.to_string(),
                points: series.gap_summary(f).iter().map(|g| (g.n as f64, g.mean)).collect(),
                line: true,
                width: 1.8,
            })
            .collect(),
        markers: Vec::new(),
        identity: false,
        linear_y: true,
    }
    .render()
}

pub fn load_reliance(path: &Path) -> Result<RelianceSeries> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(RelianceSeries::read_csv(bytes.as_slice())?)
}

/// One configuration to compare: its envelope and its learning sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareInput {
    pub label: String,
    pub envelope: PathBuf,
    pub reliance: PathBuf,
}

impl CompareInput {
    /// Inputs laid out by `run_envelope` and `run_learning_sweep` in one
    /// directory, labelled by the directory name.
    pub fn from_dir(dir: &Path) -> Self {
        CompareInput {
            label: dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
            envelope: dir.join(ENVELOPE_FILE),
            reliance: dir.join(RELIANCE_FILE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTransition {
    pub label: String,
    pub from: Feature,
    pub to: Feature,
    pub n_theory: f64,
    pub n_theory_grid: Option<usize>,
    pub n_empirical: f64,
    pub n_empirical_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentPair {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub full_scale_reference_pearson: f64,
    pub correlation: Option<CorrelationReport>,
    pub pairs: Vec<PairedTransition>,
    pub absent: Vec<AbsentPair>,
}

/// Pairs each configuration's theoretical transition with the training
/// transition between the same two features.
pub fn pair_transition(label: &str, env: &EnvelopeFile, series: &RelianceSeries) -> Result<PairedTransition, AbsentPair> {
    let absent = |reason: String| AbsentPair {
        label: label.to_string(),
        reason,
    };
    let t = env
        .report
        .transitions
        .last()
        .ok_or_else(|| absent("envelope has no transition".into()))?;
    let e = empirical_transition(series, t.from, t.to)
        .ok_or_else(|| absent(format!("no {} / {} crossing in the sweep", t.from, t.to)))?;
    Ok(PairedTransition {
        label: label.to_string(),
        from: t.from,
        to: t.to,
        n_theory: t.n,
        n_theory_grid: nearest_grid(t.n, &env.grid),
        n_empirical: e.n,
        n_empirical_grid: e.nearest,
    })
}

pub fn run_compare(inputs: &[CompareInput], out: &Path) -> Result<ComparisonReport> {
    if inputs.is_empty() {
        return Err(CliError::Missing("nothing to compare".into()));
    }
    let mut pairs = Vec::new();
    let mut absent = Vec::new();
    for input in inputs {
        let env = load_envelope(&input.envelope)?;
        let series = load_reliance(&input.reliance)?;
        match pair_transition(&input.label, &env, &series) {
            Ok(p) => pairs.push(p),
            Err(a) => absent.push(a),
        }
    }
    let scatter: Vec<ComparisonPair> = pairs
        .iter()
        .map(|p| ComparisonPair {
            label: p.label.clone(),
            n_theory: p.n_theory,
            n_empirical: p.n_empirical,
        })
        .collect();
    let correlation = correlation_report(&scatter).ok();
    let report = ComparisonReport {
        full_scale_reference_pearson: FULL_SCALE_REFERENCE_PEARSON,
        correlation,
        pairs,
        absent,
    };
    let dir = RunDir::create(out)?;
    dir.write("compare.json", &json_bytes(&report)?)?;
    if let Some(c) = &report.correlation {
        let mut text = Vec::new();
        let comment = format!("full_scale_reference_pearson={FULL_SCALE_REFERENCE_PEARSON}");
        c.write_scatter_csv(Some(&comment), &mut text)?;
        dir.write("scatter.csv", &text)?;
        dir.write("scatter.svg", c.scatter_svg().as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub archetype: ArchetypeKind,
    pub excess: ExcessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub band: u8,
    pub flip: u8,
    pub environment: u8,
    pub color: mdlsel_core::taskgen::Color,
    pub label: u8,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cells: Vec<OracleCell>,
    pub archetypes: Vec<OracleRow>,
}

/// Exact generative table and archetype codelengths of `task`.
pub fn run_oracle(task: &TaskConfig) -> Result<OracleReport> {
    task.validate()?;
    let table = build_table(task);
    let cells = table
        .cells
        .iter()
        .map(|(c, p)| OracleCell {
            band: c.band,
            flip: c.flip,
            environment: c.environment,
            color: c.color,
            label: c.label(),
            probability: *p,
        })
        .collect();
    let mut archetypes = Vec::new();
    for kind in ArchetypeKind::ALL {
        if let Ok(a) = Archetype::new(kind, task) {
            archetypes.push(OracleRow {
                archetype: kind,
                excess: expected_excess_bits(&a)?,
            });
        }
    }
    Ok(OracleReport { cells, archetypes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    Original,
    Isolated(Feature),
    Ood(Feature),
}

impl std::str::FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "original" => Ok(GenKind::Original),
            Some(("isolated", f)) => Ok(GenKind::Isolated(f.parse()?)),
            Some(("ood", f)) => Ok(GenKind::Ood(f.parse()?)),
            _ => Err(format!("unknown dataset kind `{s}`; use original, isolated:<feature> or ood:<feature>")),
        }
    }
}

/// Writes one generated dataset as a container file.
pub fn run_gen(plan: &ExperimentPlan, kind: GenKind, n: usize, out: &Path) -> Result<PathBuf> {
    plan.validate()?;
    let source = plan.digit_source()?;
    let seed = derive_seed(plan.seed, 0, "gen");
    let ds = match kind {
        GenKind::Original => make_dataset(&plan.task, n, seed, source.as_ref())?,
        GenKind::Isolated(f) => make_feature_isolated_dataset(&plan.task, f, n, seed, source.as_ref())?,
        GenKind::Ood(f) => {
            if plan.task.feature_status(f) == FeatureStatus::Absent {
                return Err(mdlsel_core::Error::FeatureAbsent(f).into());
            }
            make_ood_testset(&plan.task, f, n, seed, source.as_ref())?
        }
    };
    let mut bytes = Vec::new();
    write_container(&ds, &mut bytes)?;
    let dir = RunDir::create(out)?;
    let name = match kind {
        GenKind::Original => "original.mdlb".to_string(),
        GenKind::Isolated(f) => format!("isolated-{f}.mdlb"),
        GenKind::Ood(f) => format!("ood-{f}.mdlb"),
    };
    dir.write(&name, &bytes)
}
