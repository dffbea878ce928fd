//! Feature reliance of trained models and the empirical transition size.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::LabeledData;
use crate::prequential::Predictor;
use crate::rng::{derive_seed, StreamRng};
use crate::stats::{mean, pearson, spearman, std_dev};
use crate::svg::{Plot, Series};
use crate::taskgen::{make_ood_testset, Dataset, DigitSource, Feature, FeatureStatus, TaskConfig};

/// Accuracy read off per-sample label codelengths: a sample counts as
/// correct when the true label gets more than half the mass, and as half
/// correct on an exact tie.
pub fn accuracy_from_bits(bits: &[f64]) -> f64 {
    if bits.is_empty() {
        return f64::NAN;
    }
    let score: f64 = bits
        .iter()
        .map(|&b| if b < 1.0 { 1.0 } else if b == 1.0 { 0.5 } else { 0.0 })
        .sum();
    score / bits.len() as f64
}

pub fn predictor_accuracy(model: &dyn Predictor, data: &LabeledData) -> Result<f64> {
    Ok(accuracy_from_bits(&model.label_bits(data)?))
}

/// Original accuracy minus the mean accuracy after permuting `feature`'s
/// latent values across `testset` and re-rendering, over `n_repeats` draws.
pub fn permutation_importance(
    model: &dyn Predictor,
    testset: &Dataset,
    feature: Feature,
    rng: &mut StreamRng,
    n_repeats: usize,
) -> Result<f64> {
    if testset.config().feature_status(feature) == FeatureStatus::Absent {
        return Err(Error::FeatureAbsent(feature));
    }
    if n_repeats == 0 {
        return Err(Error::InvalidConfig("n_repeats must be positive".into()));
    }
    let base = predictor_accuracy(model, &LabeledData::from(testset))?;
    let mut permuted = 0.0;
    for _ in 0..n_repeats {
        let shuffled = testset.permute_feature(feature, rng)?;
        permuted += predictor_accuracy(model, &LabeledData::from(&shuffled))?;
    }
    Ok(base - permuted / n_repeats as f64)
}

/// Held-out sets on which the label follows a single feature.
pub struct OodSets {
    pub sets: Vec<(Feature, LabeledData)>,
}

impl OodSets {
    /// One set of `n` samples per informative feature of `cfg`.
    pub fn build(cfg: &TaskConfig, n: usize, seed: u64, source: &dyn DigitSource) -> Result<Self> {
        let mut sets = Vec::new();
        for feature in Feature::ALL {
            if cfg.feature_status(feature) != FeatureStatus::Informative {
                continue;
            }
            let ds = make_ood_testset(cfg, feature, n, derive_seed(seed, 0, &format!("ood:{feature}")), source)?;
            sets.push((feature, LabeledData::from(&ds)));
        }
        Ok(OodSets { sets })
    }
}

pub fn ood_accuracies(model: &dyn Predictor, sets: &OodSets) -> Result<BTreeMap<Feature, f64>> {
    sets.sets
        .iter()
        .map(|(f, data)| Ok((*f, predictor_accuracy(model, data)?)))
        .collect()
}

/// One trained network at one training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelianceRecord {
    pub n: usize,
    pub seed: u64,
    pub gaps: BTreeMap<Feature, f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub ood: BTreeMap<Feature, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelianceSeries {
    pub records: Vec<RelianceRecord>,
}

pub const RELIANCE_HEADER: &str =
    "n,seed,feature,gap,train_acc,val_acc,digit_acc,color_acc,watermark_acc";

impl RelianceSeries {
    /// Training sizes present, increasing.
    pub fn sizes(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.records.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    /// Per-size mean and spread of `feature`'s gap across seeds.
    pub fn gap_summary(&self, feature: Feature) -> Vec<GapSummary> {
        self.sizes()
            .into_iter()
            .filter_map(|n| {
                let gaps: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.n == n)
                    .filter_map(|r| r.gaps.get(&feature).copied())
                    .collect();
                (!gaps.is_empty()).then(|| GapSummary {
                    n,
                    mean: mean(&gaps),
                    sd: std_dev(&gaps),
                    count: gaps.len(),
                })
            })
            .collect()
    }

    /// Per-size mean accuracy on the named split.
    pub fn mean_accuracy(&self, split: impl Fn(&RelianceRecord) -> Option<f64>) -> Vec<(usize, f64)> {
        self.sizes()
            .into_iter()
            .filter_map(|n| {
                let v: Vec<f64> = self.records.iter().filter(|r| r.n == n).filter_map(&split).collect();
                (!v.is_empty()).then(|| (n, mean(&v)))
            })
            .collect()
    }

    /// One row per (record, feature gap); absent accuracies are left empty.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut w: W) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{RELIANCE_HEADER}")?;
        let opt = |v: Option<&f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.records {
            for (f, gap) in &r.gaps {
                writeln!(
                    w,
                    "{},{},{},{:?},{:?},{:?},{},{},{}",
                    r.n,
                    r.seed,
                    f,
                    gap,
                    r.train_accuracy,
                    r.val_accuracy,
                    opt(r.ood.get(&Feature::Digit)),
                    opt(r.ood.get(&Feature::Color)),
                    opt(r.ood.get(&Feature::Watermark)),
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Container(format!("reliance csv line {line}: {msg}"));
        let mut records: Vec<RelianceRecord> = Vec::new();
        let mut header_seen = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != RELIANCE_HEADER {
                    return Err(bad(i + 1, "unexpected header"));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(i + 1, "expected 9 fields"));
            }
            let n: usize = f[0].parse().map_err(|_| bad(i + 1, "bad size"))?;
            let seed: u64 = f[1].parse().map_err(|_| bad(i + 1, "bad seed"))?;
            let feature: Feature = f[2].parse().map_err(|_| bad(i + 1, "bad feature"))?;
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            let gap = real(f[3])?;
            if !(-1.0..=1.0).contains(&gap) {
                return Err(bad(i + 1, "gap outside [-1, 1]"));
            }
            let mut ood = BTreeMap::new();
            for (k, feat) in Feature::ALL.into_iter().enumerate() {
                if !f[6 + k].is_empty() {
                    ood.insert(feat, real(f[6 + k])?);
                }
            }
            let record = match records.iter_mut().position(|r| r.n == n && r.seed == seed) {
                Some(k) => &mut records[k],
                None => {
                    records.push(RelianceRecord {
                        n,
                        seed,
                        gaps: BTreeMap::new(),
                        train_accuracy: real(f[4])?,
                        val_accuracy: real(f[5])?,
                        ood,
                    });
                    records.last_mut().unwrap()
                }
            };
            record.gaps.insert(feature, gap);
        }
        if !header_seen {
            return Err(Error::Container("reliance csv has no header".into()));
        }
        Ok(RelianceSeries { records })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTransition {
    /// Log-linear interpolated zero crossing.
    pub n: f64,
    /// Evaluated size closest to `n` in log distance.
    pub nearest: usize,
}

/// Last sign change of `diffs` over increasing `sizes`, interpolated
/// linearly in `log N`. Exact zeros between opposite signs give their own
/// size.
pub fn last_crossing(sizes: &[f64], diffs: &[f64]) -> Option<f64> {
    let pts: Vec<(usize, f64)> = diffs.iter().copied().enumerate().filter(|(_, d)| *d != 0.0).collect();
    let (&(i, di), &(j, dj)) = pts
        .windows(2)
        .rev()
        .map(|w| (&w[0], &w[1]))
        .find(|(a, b)| a.1.signum() != b.1.signum())?;
    if j > i + 1 {
        return Some(sizes[j - 1]);
    }
    let (la, lb) = (sizes[i].ln(), sizes[j].ln());
    Some((la + (lb - la) * di / (di - dj)).exp())
}

/// Size at which `feature_b`'s mean accuracy gap finally overtakes or
/// falls behind `feature_a`'s.
pub fn empirical_transition(
    series: &RelianceSeries,
    feature_a: Feature,
    feature_b: Feature,
) -> Option<EmpiricalTransition> {
    let a = series.gap_summary(feature_a);
    let b = series.gap_summary(feature_b);
    let (mut sizes, mut diffs) = (Vec::new(), Vec::new());
    for ga in &a {
        if let Some(gb) = b.iter().find(|g| g.n == ga.n) {
            sizes.push(ga.n as f64);
            diffs.push(ga.mean - gb.mean);
        }
    }
    let n = last_crossing(&sizes, &diffs)?;
    let nearest = sizes
        .iter()
        .copied()
        .min_by(|x, y| (x.ln() - n.ln()).abs().total_cmp(&(y.ln() - n.ln()).abs()))? as usize;
    Some(EmpiricalTransition { n, nearest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub label: String,
    pub n_theory: f64,
    pub n_empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_log10: f64,
    pub spearman: f64,
    pub pairs: Vec<ComparisonPair>,
}

pub fn correlation_report(pairs: &[ComparisonPair]) -> Result<CorrelationReport> {
    if pairs.len() < 3 {
        return Err(Error::Stats(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|p| !(p.n_theory > 0.0 && p.n_empirical > 0.0)) {
        return Err(Error::Stats("transition sizes must be positive".into()));
    }
    let t: Vec<f64> = pairs.iter().map(|p| p.n_theory.log10()).collect();
    let e: Vec<f64> = pairs.iter().map(|p| p.n_empirical.log10()).collect();
    Ok(CorrelationReport {
        pearson_log10: pearson(&t, &e)?,
        spearman: spearman(&t, &e)?,
        pairs: pairs.to_vec(),
    })
}

impl CorrelationReport {
    pub fn write_scatter_csv<W: Write>(&self, comment: Option<&str>, mut w: W) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "config,n_theory,n_empirical")?;
        for p in &self.pairs {
            writeln!(w, "{},{:?},{:?}", p.label, p.n_theory, p.n_empirical)?;
        }
        Ok(())
    }

    pub fn scatter_svg(&self) -> String {
        Plot {
            title: format!(
                "transition sizes (pearson log N = {:.3}, spearman = {:.3})",
                self.pearson_log10, self.spearman
            ),
            x_label: "N_theory".into(),
            y_label: "N_empirical".into(),
            series: vec![Series {
                label: "configurations".into(),
                points: self.pairs.iter().map(|p| (p.n_theory, p.n_empirical)).collect(),
                line: false,
                width: 4.0,
            }],
            markers: Vec::new(),
            identity: true,
            linear_y: false,
        }
        .render()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::taskgen::SyntheticDigits;
    use crate::taskgen::{make_dataset, Color};

    /// Reads the color channel: green means label 0.
    struct ColorReader;

    impl Predictor for ColorReader {
        fn label_bits(&self, data: &LabeledData) -> Result<Vec<f64>> {
            Ok(data
                .x
                .rows()
                .into_iter()
                .zip(&data.y)
                .map(|(row, &y)| {
                    let (mut red, mut green) = (0.0, 0.0);
                    for px in row.as_slice().unwrap().chunks_exact(3) {
                        red += px[0] - px[1].min(px[0]);
                        green += px[1] - px[0].min(px[1]);
                    }
                    let p0: f64 = if green > red { 0.99 } else { 0.01 };
                    -(if y == 0 { p0 } else { 1.0 - p0 }).log2()
                })
                .collect())
        }
    }

    struct Coin;

    impl Predictor for Coin {
        fn label_bits(&self, data: &LabeledData) -> Result<Vec<f64>> {
            Ok(vec![1.0; data.len()])
        }
    }

    fn source(side: usize) -> SyntheticDigits {
        SyntheticDigits::new(side)
    }

    #[test]
    fn accuracy_from_codelengths() {
        assert_eq!(accuracy_from_bits(&[0.1, 2.0, 1.0, 0.9]), 0.625);
        assert!(accuracy_from_bits(&[]).is_nan());
    }

    #[test]
    fn color_reader_gap() {
        let cfg = TaskConfig::scenario_a(0.25).at_side(8);
        let src = source(8);
        let test = make_dataset(&cfg, 2000, 5, &src).unwrap();
        let base = predictor_accuracy(&ColorReader, &(&test).into()).unwrap();
        assert!((base - 0.75).abs() < 0.03, "{base}");
        let gap = permutation_importance(&ColorReader, &test, Feature::Color, &mut stream(1, 0, "t"), 5).unwrap();
        let permuted = base - gap;
        assert!((permuted - 0.5).abs() < 0.03, "{permuted}");
        let digit_gap =
            permutation_importance(&ColorReader, &test, Feature::Digit, &mut stream(1, 0, "t"), 1).unwrap();
        assert!(digit_gap.abs() < 1e-12);
        assert!(matches!(
            permutation_importance(&ColorReader, &test, Feature::Watermark, &mut stream(1, 0, "t"), 1),
            Err(Error::FeatureAbsent(Feature::Watermark))
        ));
    }

    #[test]
    fn ood_sets_for_color_reader_and_coin() {
        let cfg = TaskConfig::scenario_b(0.15, 8).at_side(8);
        let src = source(8);
        let sets = OodSets::build(&cfg, 1000, 3, &src).unwrap();
        assert_eq!(sets.sets.len(), 3);
        let acc = ood_accuracies(&ColorReader, &sets).unwrap();
        assert!((acc[&Feature::Digit] - 0.5).abs() < 0.05);
        assert!((acc[&Feature::Watermark] - 0.5).abs() < 0.05);
        assert!(acc[&Feature::Color] == 1.0 || acc[&Feature::Color] == 0.0);
        for (_, a) in ood_accuracies(&Coin, &sets).unwrap() {
            assert_eq!(a, 0.5);
        }
        let _ = Color::None;
    }

    #[test]
    fn crossing_examples() {
        let sizes = [100.0, 1000.0, 1e4];
        let n = last_crossing(&sizes, &[0.4, 0.0, -0.4]).unwrap();
        assert_eq!(n, 1000.0);
        let n = last_crossing(&sizes, &[0.5, 0.1, -0.1]).unwrap();
        assert!((n - 10f64.powf(3.5)).abs() < 1e-6);
        assert!(last_crossing(&sizes, &[0.3, 0.2, 0.1]).is_none());
        // the final switch wins over earlier ones
        let n = last_crossing(&[1.0, 10.0, 100.0, 1000.0], &[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert!((n - 10f64.powf(2.5)).abs() < 1e-9);
    }

    fn series(sizes: &[usize], a: &[f64], b: &[f64]) -> RelianceSeries {
        let records = sizes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&n, (&ga, &gb))| RelianceRecord {
                n,
                seed: 0,
                gaps: BTreeMap::from([(Feature::Color, ga), (Feature::Digit, gb)]),
                train_accuracy: 1.0,
                val_accuracy: 0.9,
                ood: BTreeMap::from([(Feature::Digit, 0.6)]),
            })
            .collect();
        RelianceSeries { records }
    }

    #[test]
    fn symmetric_series_crosses_in_the_middle() {
        let s = series(&[100, 1000, 10_000], &[0.5, 0.3, 0.1], &[0.1, 0.3, 0.5]);
        let t = empirical_transition(&s, Feature::Color, Feature::Digit).unwrap();
        assert_eq!((t.n, t.nearest), (1000.0, 1000));
        let s = series(&[100, 1000, 10_000], &[0.5, 0.4, 0.3], &[0.1, 0.2, 0.2]);
        assert!(empirical_transition(&s, Feature::Color, Feature::Digit).is_none());
        assert!(empirical_transition(&s, Feature::Color, Feature::Watermark).is_none());
    }

    #[test]
    fn reliance_csv_round_trip() {
        let s = series(&[64, 128], &[0.25, -0.01], &[0.0, 0.3]);
        let mut buf = Vec::new();
        s.write_csv(Some("config_hash=abc"), &mut buf).unwrap();
        let back = RelianceSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert!(RelianceSeries::read_csv("n,seed\n".as_bytes()).is_err());
    }

    #[test]
    fn correlation_examples() {
        let pair = |t: f64, e: f64| ComparisonPair {
            label: "c".into(),
            n_theory: t,
            n_empirical: e,
        };
        let same: Vec<_> = [100.0, 300.0, 2000.0, 5e4].iter().map(|&v| pair(v, v)).collect();
        let r = correlation_report(&same).unwrap();
        assert!((r.pearson_log10 - 1.0).abs() < 1e-12);
        let rev: Vec<_> = [(1.0, 4.0), (2.0, 3.0), (3.0, 2.0), (4.0, 1.0)]
            .iter()
            .map(|&(a, b)| pair(a, b))
            .collect();
        assert!((correlation_report(&rev).unwrap().spearman + 1.0).abs() < 1e-12);
        assert!(correlation_report(&same[..2]).is_err());
        assert!(correlation_report(&[pair(1.0, 1.0), pair(0.0, 2.0), pair(3.0, 3.0)]).is_err());
        let svg = r.scatter_svg();
        assert!(svg.contains("<circle"));
        let mut csv = Vec::new();
        r.write_scatter_csv(None, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }
}
