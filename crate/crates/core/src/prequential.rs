//! Block-wise prequential codelength.
//!
//! Block 0 covers samples `1..=t_1` and is coded with the uniform predictor.
//! Block `s >= 1` covers `t_s+1..=t_{s+1}` and is coded by a model trained
//! from scratch on the first `t_s` samples.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{self, LabeledData, MlpArchitecture, MlpModel, TrainConfig};
use crate::rng::derive_seed;
use crate::stats::isotonic_nonincreasing;
use crate::taskgen::{
    make_dataset, make_feature_isolated_dataset, DigitSource, Feature, TaskConfig,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSchedule {
    boundaries: Vec<usize>,
}

impl BlockSchedule {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        let ok = boundaries.first() == Some(&1) && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Schedule(format!(
                "boundaries must start at 1 and strictly increase: {boundaries:?}"
            )));
        }
        Ok(BlockSchedule { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Total number of coded samples.
    pub fn n(&self) -> usize {
        *self.boundaries.last().expect("nonempty")
    }

    /// `(start, end]` per block; the model for a block sees `start` samples.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        if self.boundaries.len() == 1 {
            return vec![(0, 1)];
        }
        let mut out = vec![(0, self.boundaries[1])];
        out.extend(self.boundaries[1..].windows(2).map(|w| (w[0], w[1])));
        out
    }
}

/// `[1, first, ceil(first·ratio), …]` clipped at `n`.
pub fn make_schedule(n: usize, first_block: usize, ratio: f64) -> Result<BlockSchedule> {
    if n == 0 || first_block == 0 || ratio.is_nan() || ratio <= 1.0 {
        return Err(Error::Schedule(format!(
            "need n >= 1, first_block >= 1, ratio > 1 (got {n}, {first_block}, {ratio})"
        )));
    }
    let mut b = vec![1usize];
    let mut t = first_block;
    while t < n {
        if t > *b.last().unwrap() {
            b.push(t);
        }
        t = ((t as f64) * ratio).ceil() as usize;
    }
    if n > *b.last().unwrap() {
        b.push(n);
    }
    BlockSchedule::new(b)
}

/// A fitted conditional model of the label.
pub trait Predictor: Send + Sync {
    /// `-log2 p(y | x)` per row.
    fn label_bits(&self, data: &LabeledData) -> Result<Vec<f64>>;
}

/// Trains a predictor from scratch.
pub trait Learner: Sync {
    fn fit(&self, train: &LabeledData, val: &LabeledData, seed: u64) -> Result<Box<dyn Predictor>>;
}

/// The exact uniform distribution over `classes` labels.
#[derive(Debug, Clone, Copy)]
pub struct Uniform {
    pub classes: usize,
}

impl Predictor for Uniform {
    fn label_bits(&self, data: &LabeledData) -> Result<Vec<f64>> {
        Ok(vec![(self.classes as f64).log2(); data.len()])
    }
}

impl Predictor for MlpModel {
    fn label_bits(&self, data: &LabeledData) -> Result<Vec<f64>> {
        nnet::label_bits(self, data)
    }
}

/// MLP trained with early stopping on the supplied validation set.
#[derive(Debug, Clone)]
pub struct MlpLearner {
    pub architecture: MlpArchitecture,
    pub train: TrainConfig,
}

impl Learner for MlpLearner {
    fn fit(&self, train: &LabeledData, val: &LabeledData, seed: u64) -> Result<Box<dyn Predictor>> {
        let cfg = self.train.with_seed(seed);
        let (model, _) = nnet::train_until_converged(train, val, &cfg, self.architecture)?;
        Ok(Box::new(model))
    }
}

/// Held-out sets evaluated by every block's model.
#[derive(Debug, Clone)]
pub struct EvalSets {
    /// Early-stopping set, same distribution as the coded data.
    pub val: LabeledData,
    /// Prequential test split, same distribution as the coded data.
    pub test: LabeledData,
    /// Test set from the original task distribution.
    pub orig: LabeledData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Samples the block's model was trained on (0 for the uniform block).
    pub train_size: usize,
    /// Last sample index coded by this block (1-based, inclusive).
    pub block_end: usize,
    pub block_bits: f64,
    pub test_bits: f64,
    pub orig_bits: f64,
    /// Replicates averaged into this point.
    pub count: usize,
}

impl CurvePoint {
    pub fn block_size(&self) -> usize {
        self.block_end - self.train_size
    }

    pub fn block_bits_per_sample(&self) -> f64 {
        self.block_bits / self.block_size() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialCurve {
    pub points: Vec<CurvePoint>,
}

impl PrequentialCurve {
    pub fn total_bits(&self) -> f64 {
        self.points.iter().map(|p| p.block_bits).sum()
    }

    pub fn n(&self) -> usize {
        self.points.last().map_or(0, |p| p.block_end)
    }
}

/// Codes one block: trains on the first `start` samples (uniform when 0)
/// and charges the block plus both held-out sets.
fn code_block(
    data: &LabeledData,
    (start, end): (usize, usize),
    learner: &dyn Learner,
    eval: &EvalSets,
    seed: u64,
) -> Result<CurvePoint> {
    let block = data.rows(start..end);
    let predictor: Box<dyn Predictor> = if start == 0 {
        Box::new(Uniform { classes: 2 })
    } else {
        learner.fit(&data.rows(0..start), &eval.val, seed)?
    };
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(CurvePoint {
        train_size: start,
        block_end: end,
        block_bits: predictor.label_bits(&block)?.iter().sum(),
        test_bits: mean(predictor.label_bits(&eval.test)?),
        orig_bits: mean(predictor.label_bits(&eval.orig)?),
        count: 1,
    })
}

/// Codes `data` block by block. Blocks whose model would see more than
/// `max_train` samples are skipped, which yields a curve prefix.
pub fn prequential_prefix(
    data: &LabeledData,
    schedule: &BlockSchedule,
    learner: &dyn Learner,
    eval: &EvalSets,
    seed: u64,
    max_train: usize,
) -> Result<PrequentialCurve> {
    let blocks: Vec<(usize, usize)> = schedule
        .blocks()
        .into_iter()
        .filter(|&(start, _)| start <= max_train)
        .collect();
    let needed = blocks.last().map_or(0, |b| b.1);
    if data.len() < needed {
        return Err(Error::Schedule(format!(
            "schedule codes {needed} samples but the dataset has {}",
            data.len()
        )));
    }
    let points = blocks
        .par_iter()
        .enumerate()
        .map(|(s, &b)| code_block(data, b, learner, eval, derive_seed(seed, s as u64, "block")))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrequentialCurve { points })
}

/// Total prequential codelength in bits and the per-block curve.
pub fn prequential_codelength(
    data: &LabeledData,
    schedule: &BlockSchedule,
    learner: &dyn Learner,
    eval: &EvalSets,
    seed: u64,
) -> Result<(f64, PrequentialCurve)> {
    if data.len() != schedule.n() {
        return Err(Error::Schedule(format!(
            "schedule codes {} samples but the dataset has {}",
            schedule.n(),
            data.len()
        )));
    }
    let curve = prequential_prefix(data, schedule, learner, eval, seed, usize::MAX)?;
    Ok((curve.total_bits(), curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total_bits: f64,
    /// Excess area above the final smoothed loss, clamped at zero.
    pub model_cost_bits: f64,
    pub asymptotic_bits: f64,
    /// `total − asymptotic` before clamping.
    pub raw_model_cost_bits: f64,
}

/// Isotonic fit of the per-sample block costs, weighted by block size.
pub fn smoothed_block_losses(curve: &PrequentialCurve) -> Vec<f64> {
    let v: Vec<f64> = curve.points.iter().map(|p| p.block_bits_per_sample()).collect();
    let w: Vec<f64> = curve.points.iter().map(|p| p.block_size() as f64).collect();
    isotonic_nonincreasing(&v, &w)
}

/// Splits `total` into model cost and `N · ℓ_final`.
pub fn decompose(total_bits: f64, curve: &PrequentialCurve, n: usize) -> Result<Decomposition> {
    if curve.points.is_empty() {
        return Err(Error::Empty("prequential curve"));
    }
    if curve.n() != n {
        return Err(Error::Schedule(format!("curve covers {} samples, not {n}", curve.n())));
    }
    let smooth = smoothed_block_losses(curve);
    let asymptotic_bits = n as f64 * smooth.last().copied().expect("nonempty");
    let raw = total_bits - asymptotic_bits;
    Ok(Decomposition {
        total_bits,
        model_cost_bits: raw.max(0.0),
        asymptotic_bits,
        raw_model_cost_bits: raw,
    })
}

/// Mean over replicate curves, point by point. Shorter curves (prefixes)
/// contribute only to the points they contain.
pub fn average_curves(curves: &[PrequentialCurve]) -> Result<PrequentialCurve> {
    let longest = curves
        .iter()
        .max_by_key(|c| c.points.len())
        .ok_or(Error::Empty("replicate curves"))?;
    let mut points = Vec::with_capacity(longest.points.len());
    for (i, reference) in longest.points.iter().enumerate() {
        let mut acc = CurvePoint {
            block_bits: 0.0,
            test_bits: 0.0,
            orig_bits: 0.0,
            count: 0,
            ..*reference
        };
        for c in curves {
            if let Some(p) = c.points.get(i) {
                if (p.train_size, p.block_end) != (reference.train_size, reference.block_end) {
                    return Err(Error::Schedule("replicates use different schedules".into()));
                }
                acc.block_bits += p.block_bits * p.count as f64;
                acc.test_bits += p.test_bits * p.count as f64;
                acc.orig_bits += p.orig_bits * p.count as f64;
                acc.count += p.count;
            }
        }
        let k = acc.count as f64;
        acc.block_bits /= k;
        acc.test_bits /= k;
        acc.orig_bits /= k;
        points.push(acc);
    }
    Ok(PrequentialCurve { points })
}

/// Replicates per block: `small` while the training size is at most
/// `threshold`, `large` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatePolicy {
    pub threshold: usize,
    pub small: usize,
    pub large: usize,
}

impl Default for ReplicatePolicy {
    fn default() -> Self {
        ReplicatePolicy {
            threshold: 500,
            small: 10,
            large: 3,
        }
    }
}

impl ReplicatePolicy {
    pub fn uniform(count: usize) -> Self {
        ReplicatePolicy {
            threshold: 0,
            small: count,
            large: count,
        }
    }

    pub fn count(&self, n: usize) -> usize {
        if n <= self.threshold {
            self.small
        } else {
            self.large
        }
    }

    pub fn max(&self) -> usize {
        self.small.max(self.large)
    }

    /// Largest training size replicate `r` must cover.
    pub fn max_train(&self, r: usize) -> Option<usize> {
        if r < self.large {
            Some(usize::MAX)
        } else if r < self.small {
            Some(self.threshold)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrequentialPlan {
    pub n: usize,
    pub first_block: usize,
    pub ratio: f64,
    pub replicates: ReplicatePolicy,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for PrequentialPlan {
    fn default() -> Self {
        PrequentialPlan {
            n: 8192,
            first_block: 16,
            ratio: 2.0,
            replicates: ReplicatePolicy::default(),
            val_size: 1024,
            test_size: 2048,
            seed: 0,
        }
    }
}

/// Curves of one feature-isolated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCurves {
    pub feature: Feature,
    /// `(replicate seed, curve)`; later replicates may be prefixes.
    pub replicates: Vec<(u64, PrequentialCurve)>,
    pub mean: PrequentialCurve,
}

impl CandidateCurves {
    pub fn decomposition(&self) -> Result<Decomposition> {
        decompose(self.mean.total_bits(), &self.mean, self.mean.n())
    }
}

/// Evaluation sets shared by all replicates of one candidate.
pub fn candidate_eval_sets(
    cfg: &TaskConfig,
    feature: Feature,
    plan: &PrequentialPlan,
    source: &dyn DigitSource,
) -> Result<EvalSets> {
    let tag = |t: &str| derive_seed(plan.seed, 0, &format!("{t}:{feature}"));
    let val = make_feature_isolated_dataset(cfg, feature, plan.val_size, tag("preq-val"), source)?;
    let test = make_feature_isolated_dataset(cfg, feature, plan.test_size, tag("preq-test"), source)?;
    let orig = make_dataset(cfg, plan.test_size, derive_seed(plan.seed, 0, "orig-test"), source)?;
    Ok(EvalSets {
        val: (&val).into(),
        test: (&test).into(),
        orig: (&orig).into(),
    })
}

/// One replicate of [`candidate_model_cost`]; `None` when the policy asks
/// for no blocks from replicate `r`.
pub fn candidate_replicate(
    cfg: &TaskConfig,
    feature: Feature,
    plan: &PrequentialPlan,
    r: usize,
    learner: &dyn Learner,
    eval: &EvalSets,
    source: &dyn DigitSource,
) -> Result<Option<(u64, PrequentialCurve)>> {
    let schedule = make_schedule(plan.n, plan.first_block, plan.ratio)?;
    let Some(max_train) = plan.replicates.max_train(r) else {
        return Ok(None);
    };
    let needed = schedule
        .blocks()
        .into_iter()
        .filter(|&(start, _)| start <= max_train)
        .map(|(_, end)| end)
        .max()
        .unwrap_or(0);
    let seed = derive_seed(plan.seed, r as u64, &format!("replicate:{feature}"));
    let ds = make_feature_isolated_dataset(cfg, feature, needed, seed, source)?;
    let data = LabeledData::from(&ds);
    let curve = prequential_prefix(&data, &schedule, learner, eval, seed, max_train)?;
    Ok(Some((seed, curve)))
}

/// Replicate-averaged prequential curve of the candidate that only sees
/// `feature`.
pub fn candidate_model_cost(
    cfg: &TaskConfig,
    feature: Feature,
    plan: &PrequentialPlan,
    learner: &dyn Learner,
    source: &dyn DigitSource,
) -> Result<CandidateCurves> {
    let eval = candidate_eval_sets(cfg, feature, plan, source)?;
    let mut replicates = Vec::new();
    for r in 0..plan.replicates.max() {
        if let Some(rep) = candidate_replicate(cfg, feature, plan, r, learner, &eval, source)? {
            replicates.push(rep);
        }
    }
    let curves: Vec<PrequentialCurve> = replicates.iter().map(|(_, c)| c.clone()).collect();
    let mean = average_curves(&curves)?;
    Ok(CandidateCurves {
        feature,
        replicates,
        mean,
    })
}

pub const CURVE_HEADER: &str =
    "feature,seed,t_s,block_end,block_bits,test_bits_per_sample,orig_bits_per_sample";

/// One row per (replicate, block). A leading `# key=value` comment line is
/// written when `comment` is given.
pub fn write_curves_csv<W: Write>(
    candidates: &[CandidateCurves],
    comment: Option<&str>,
    mut w: W,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{CURVE_HEADER}")?;
    for cand in candidates {
        for (seed, curve) in &cand.replicates {
            for p in &curve.points {
                writeln!(
                    w,
                    "{},{},{},{},{:?},{:?},{:?}",
                    cand.feature, seed, p.train_size, p.block_end, p.block_bits, p.test_bits, p.orig_bits
                )?;
            }
        }
    }
    Ok(())
}

/// Inverse of [`write_curves_csv`]; replicate means are recomputed.
pub fn read_curves_csv<R: BufRead>(r: R) -> Result<Vec<CandidateCurves>> {
    let bad = |line: usize, msg: &str| Error::Container(format!("curve csv line {line}: {msg}"));
    let mut out: Vec<CandidateCurves> = Vec::new();
    let mut header_seen = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != CURVE_HEADER {
                return Err(bad(i + 1, "unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, "expected 7 fields"));
        }
        let feature: Feature = f[0].parse().map_err(|_| bad(i + 1, "bad feature"))?;
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(i + 1, "bad integer"));
        let real = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(i + 1, "bad number"))
        };
        let seed = int(f[1])?;
        let point = CurvePoint {
            train_size: int(f[2])? as usize,
            block_end: int(f[3])? as usize,
            block_bits: real(f[4])?,
            test_bits: real(f[5])?,
            orig_bits: real(f[6])?,
            count: 1,
        };
        if point.block_end <= point.train_size {
            return Err(bad(i + 1, "empty block"));
        }
        let cand = match out.iter_mut().position(|c| c.feature == feature) {
            Some(k) => &mut out[k],
            None => {
                out.push(CandidateCurves {
                    feature,
                    replicates: Vec::new(),
                    mean: PrequentialCurve { points: Vec::new() },
                });
                out.last_mut().unwrap()
            }
        };
        match cand.replicates.iter_mut().find(|(s, _)| *s == seed) {
            Some((_, curve)) => curve.points.push(point),
            None => cand.replicates.push((seed, PrequentialCurve { points: vec![point] })),
        }
    }
    if !header_seen {
        return Err(Error::Container("curve csv has no header".into()));
    }
    for cand in &mut out {
        let curves: Vec<PrequentialCurve> = cand.replicates.iter().map(|(_, c)| c.clone()).collect();
        cand.mean = average_curves(&curves)?;
    }
    Ok(out)
}
