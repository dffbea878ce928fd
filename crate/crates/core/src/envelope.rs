//! Compression lines `L + N·r` and their lower envelope.

use serde::{Deserialize, Serialize};

use crate::prequential::PrequentialCurve;
use crate::stats::isotonic_nonincreasing;
use crate::svg::{log_space, Plot, Series};
use crate::taskgen::Feature;

/// Relative tolerance for hull comparisons.
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionLine {
    pub fixed_cost_bits: f64,
    pub rate_bits_per_sample: f64,
    pub feature: Feature,
    /// Sample count at which the source curve was truncated.
    pub truncation: usize,
}

impl CompressionLine {
    pub fn new(fixed_cost_bits: f64, rate_bits_per_sample: f64, feature: Feature, truncation: usize) -> Self {
        CompressionLine {
            fixed_cost_bits,
            rate_bits_per_sample,
            feature,
            truncation,
        }
    }
}

/// `L + N·r`.
pub fn total_cost(line: &CompressionLine, n: f64) -> f64 {
    line.fixed_cost_bits + n * line.rate_bits_per_sample
}

/// One line per trained block of the curve (the uniform block is skipped).
///
/// The line for block `k` charges the excess area of the smoothed held-out
/// loss above `ℓ̃_k` over all earlier blocks, and rates at the smoothed
/// original-distribution loss of block `k`'s model.
pub fn intermediate_models(curve: &PrequentialCurve, feature: Feature) -> Vec<CompressionLine> {
    let w: Vec<f64> = curve.points.iter().map(|p| p.block_size() as f64).collect();
    let test: Vec<f64> = curve.points.iter().map(|p| p.test_bits).collect();
    let orig: Vec<f64> = curve.points.iter().map(|p| p.orig_bits).collect();
    let test = isotonic_nonincreasing(&test, &w);
    let orig = isotonic_nonincreasing(&orig, &w);
    curve
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.train_size > 0)
        .map(|(k, p)| {
            let fixed: f64 = (0..k).map(|s| w[s] * (test[s] - test[k])).sum();
            CompressionLine::new(fixed.max(0.0), orig[k].max(0.0), feature, p.block_end)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub n: f64,
    /// Index into [`Envelope::lines`] winning just below `n` (and at `n`).
    pub before: usize,
    pub after: usize,
}

/// Lines that win somewhere on `[0, ∞)`, ordered by where they win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lines: Vec<CompressionLine>,
    pub breakpoints: Vec<Breakpoint>,
}

impl Envelope {
    /// Index of the winning line at `n`; at a breakpoint the earlier,
    /// lower fixed-cost line wins.
    pub fn winner_index(&self, n: f64) -> usize {
        self.breakpoints.partition_point(|b| b.n < n)
    }

    pub fn winner(&self, n: f64) -> &CompressionLine {
        &self.lines[self.winner_index(n)]
    }

    pub fn cost(&self, n: f64) -> f64 {
        total_cost(self.winner(n), n)
    }
}

fn scale(values: &[f64]) -> f64 {
    values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// True when `x(a, c) <= x(a, b)`: line `b` never wins strictly once `c`
/// is on the hull. Slopes satisfy `r_a > r_b > r_c`.
fn shadowed(a: &CompressionLine, b: &CompressionLine, c: &CompressionLine) -> bool {
    let lhs = (c.fixed_cost_bits - a.fixed_cost_bits) * (a.rate_bits_per_sample - b.rate_bits_per_sample);
    let rhs = (b.fixed_cost_bits - a.fixed_cost_bits) * (a.rate_bits_per_sample - c.rate_bits_per_sample);
    lhs <= rhs + TOL * scale(&[lhs, rhs])
}

/// `N` at which `b` (lower rate) starts to beat `a`.
pub fn crossover(a: &CompressionLine, b: &CompressionLine) -> f64 {
    (b.fixed_cost_bits - a.fixed_cost_bits) / (a.rate_bits_per_sample - b.rate_bits_per_sample)
}

/// Pointwise minimum of `lines` over `N >= 0`.
///
/// # Panics
/// If `lines` is empty.
pub fn lower_envelope(lines: &[CompressionLine]) -> Envelope {
    assert!(!lines.is_empty(), "lower envelope of no lines");
    let mut sorted = lines.to_vec();
    sorted.sort_by(|a, b| {
        b.rate_bits_per_sample
            .total_cmp(&a.rate_bits_per_sample)
            .then(a.fixed_cost_bits.total_cmp(&b.fixed_cost_bits))
    });
    // equal rates: the lowest fixed cost dominates
    sorted.dedup_by(|later, kept| later.rate_bits_per_sample == kept.rate_bits_per_sample);

    let mut hull: Vec<CompressionLine> = Vec::with_capacity(sorted.len());
    for line in sorted {
        // a flatter line that is no more expensive at N = 0 dominates
        while let Some(top) = hull.last() {
            if line.fixed_cost_bits <= top.fixed_cost_bits + TOL * scale(&[top.fixed_cost_bits]) {
                hull.pop();
            } else {
                break;
            }
        }
        while hull.len() >= 2 && shadowed(&hull[hull.len() - 2], &hull[hull.len() - 1], &line) {
            hull.pop();
        }
        hull.push(line);
    }
    let breakpoints = hull
        .windows(2)
        .enumerate()
        .map(|(i, w)| Breakpoint {
            n: crossover(&w[0], &w[1]),
            before: i,
            after: i + 1,
        })
        .collect();
    Envelope {
        lines: hull,
        breakpoints,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub n: f64,
    pub from: Feature,
    pub to: Feature,
    pub from_line: CompressionLine,
    pub to_line: CompressionLine,
}

/// Breakpoints of the pooled envelope where the winning feature changes.
pub fn transition_points(families: &[Vec<CompressionLine>]) -> Vec<Transition> {
    let pooled: Vec<CompressionLine> = families.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Vec::new();
    }
    let env = lower_envelope(&pooled);
    env.breakpoints
        .iter()
        .filter_map(|b| {
            let (from_line, to_line) = (env.lines[b.before], env.lines[b.after]);
            (from_line.feature != to_line.feature).then_some(Transition {
                n: b.n,
                from: from_line.feature,
                to: to_line.feature,
                from_line,
                to_line,
            })
        })
        .collect()
}

/// The last feature switch, which is the one compared against training.
pub fn n_theory(transitions: &[Transition]) -> Option<&Transition> {
    transitions.last()
}

/// Grid value closest to `n` on a log scale.
pub fn nearest_grid(n: f64, grid: &[usize]) -> Option<usize> {
    grid.iter()
        .copied()
        .filter(|&g| g > 0)
        .min_by(|&a, &b| {
            let d = |g: usize| (n.ln() - (g as f64).ln()).abs();
            d(a).total_cmp(&d(b))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub lines: Vec<CompressionLine>,
    pub envelope: Envelope,
    pub transitions: Vec<Transition>,
    pub n_theory: Option<f64>,
    pub n_theory_grid: Option<usize>,
}

pub fn envelope_report(families: &[Vec<CompressionLine>], grid: &[usize]) -> Option<EnvelopeReport> {
    let lines: Vec<CompressionLine> = families.iter().flatten().copied().collect();
    if lines.is_empty() {
        return None;
    }
    let envelope = lower_envelope(&lines);
    let transitions = transition_points(families);
    let n_theory = n_theory(&transitions).map(|t| t.n);
    Some(EnvelopeReport {
        n_theory_grid: n_theory.and_then(|n| nearest_grid(n, grid)),
        lines,
        envelope,
        transitions,
        n_theory,
    })
}

/// Cost-versus-N plot of every line plus the envelope, on log-log axes.
pub fn envelope_svg(report: &EnvelopeReport, title: &str) -> String {
    let hi = report
        .lines
        .iter()
        .map(|l| l.truncation as f64)
        .chain(report.n_theory)
        .fold(1e3f64, f64::max)
        * 8.0;
    let xs = log_space(1.0, hi, 80);
    let mut features: Vec<Feature> = report.lines.iter().map(|l| l.feature).collect();
    features.sort_by_key(|f| f.as_str());
    features.dedup();
    // one series per feature, its lines separated by NaN breaks
    let mut series: Vec<Series> = features
        .into_iter()
        .map(|f| Series {
            label: f.to_string(),
            points: report
                .lines
                .iter()
                .filter(|l| l.feature == f)
                .flat_map(|line| {
                    xs.iter()
                        .map(|&n| (n, total_cost(line, n)))
                        .chain(std::iter::once((f64::NAN, f64::NAN)))
                })
                .collect(),
            line: true,
            width: 0.7,
        })
        .collect();
    series.push(Series {
        label: "envelope".into(),
        points: xs.iter().map(|&n| (n, report.envelope.cost(n))).collect(),
        line: true,
        width: 2.5,
    });
    Plot {
        title: title.into(),
        x_label: "dataset size N".into(),
        y_label: "total codelength (bits)".into(),
        series,
        markers: report.n_theory.into_iter().collect(),
        identity: false,
        linear_y: false,
    }
    .render()
}
