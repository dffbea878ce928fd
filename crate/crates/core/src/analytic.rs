//! Closed forms for the idealized learner on latent factors.
//!
//! The generator is summarized by a joint table over the digit band
//! `1[d >= 5]`, the label flip, the environment and the color. Three
//! archetypes condition on different parts of it: the spurious model sees
//! the color, the robust model the band, the Bayes model the color and the
//! environment (readable from a disjoint-bank watermark).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::{Color, FeatureStatus, Feature, Latents, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchetypeKind {
    Spurious,
    Robust,
    Bayes,
}

impl ArchetypeKind {
    pub const ALL: [ArchetypeKind; 3] = [ArchetypeKind::Spurious, ArchetypeKind::Robust, ArchetypeKind::Bayes];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchetypeKind::Spurious => "spurious",
            ArchetypeKind::Robust => "robust",
            ArchetypeKind::Bayes => "bayes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub band: u8,
    pub flip: u8,
    pub environment: u8,
    pub color: Color,
}

impl Cell {
    pub fn label(&self) -> u8 {
        self.band ^ self.flip
    }
}

/// Exact joint distribution over latent outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeTable {
    pub cells: Vec<(Cell, f64)>,
    pub watermark_informative: bool,
}

/// Enumerates every latent outcome of `cfg` with its probability. Digit
/// classes are taken as uniform, so each band has probability 1/2.
pub fn build_table(cfg: &TaskConfig) -> GenerativeTable {
    let mut cells = Vec::with_capacity(24);
    for band in 0..2u8 {
        for flip in 0..2u8 {
            let p_flip = if flip == 1 { cfg.p_flip } else { 1.0 - cfg.p_flip };
            for environment in 0..2u8 {
                let p_env = if environment == 1 { cfg.p_e } else { 1.0 - cfg.p_e };
                let p = 0.5 * p_flip * p_env;
                let label = band ^ flip;
                let randomized = cfg.uninformative_majority && cfg.majority_environment() == Some(environment);
                let colors: Vec<(Color, f64)> = if cfg.digit_only {
                    vec![(Color::None, 1.0)]
                } else if randomized {
                    vec![(Color::Green, 0.5), (Color::Red, 0.5)]
                } else if label ^ environment == 0 {
                    vec![(Color::Green, 1.0)]
                } else {
                    vec![(Color::Red, 1.0)]
                };
                for (color, pc) in colors {
                    let cell = Cell {
                        band,
                        flip,
                        environment,
                        color,
                    };
                    cells.push((cell, p * pc));
                }
            }
        }
    }
    GenerativeTable {
        cells,
        watermark_informative: cfg.feature_status(Feature::Watermark) == FeatureStatus::Informative,
    }
}

impl GenerativeTable {
    pub fn total(&self) -> f64 {
        self.cells.iter().map(|(_, p)| p).sum()
    }

    pub fn probability(&self, pred: impl Fn(&Cell) -> bool) -> f64 {
        self.cells.iter().filter(|(c, _)| pred(c)).map(|(_, p)| p).sum()
    }
}

/// Latent values visible to a predictor; `None` fields are unobserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Observation {
    pub band: Option<u8>,
    pub color: Option<Color>,
    pub environment: Option<u8>,
}

impl Observation {
    fn matches(&self, c: &Cell) -> bool {
        self.band.is_none_or(|b| b == c.band)
            && self.color.is_none_or(|col| col == c.color)
            && self.environment.is_none_or(|e| e == c.environment)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub kind: ArchetypeKind,
    pub cfg: TaskConfig,
}

/// Which latents a view includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct View {
    band: bool,
    color: bool,
    environment: bool,
}

impl View {
    fn of(&self, c: &Cell) -> Observation {
        Observation {
            band: self.band.then_some(c.band),
            color: self.color.then_some(c.color),
            environment: self.environment.then_some(c.environment),
        }
    }
}

/// Latents a pixel-level observer can recover under `cfg`.
fn observable(cfg: &TaskConfig) -> View {
    View {
        band: cfg.feature_status(Feature::Digit) == FeatureStatus::Informative,
        color: !cfg.digit_only,
        environment: cfg.feature_status(Feature::Watermark) == FeatureStatus::Informative,
    }
}

impl Archetype {
    pub fn new(kind: ArchetypeKind, cfg: &TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let seen = observable(cfg);
        if kind == ArchetypeKind::Bayes && !seen.environment {
            return Err(Error::Analytic(
                "the bayes archetype needs an informative watermark".into(),
            ));
        }
        Ok(Archetype {
            kind,
            cfg: cfg.clone(),
        })
    }

    fn view(&self) -> View {
        let seen = observable(&self.cfg);
        match self.kind {
            ArchetypeKind::Spurious => View {
                band: false,
                color: seen.color,
                environment: false,
            },
            ArchetypeKind::Robust => View {
                band: seen.band,
                color: false,
                environment: false,
            },
            ArchetypeKind::Bayes => View {
                band: false,
                color: seen.color,
                environment: true,
            },
        }
    }
}

/// `P(y = 1 | obs)` restricted to the archetype's information set.
pub fn archetype_conditional(archetype: &Archetype, obs: &Observation) -> Result<f64> {
    let view = archetype.view();
    let needs = |wanted: bool, has: bool, name: &str| {
        if wanted && !has {
            Err(Error::Analytic(format!(
                "{} archetype needs the {name}",
                archetype.kind.as_str()
            )))
        } else {
            Ok(())
        }
    };
    needs(view.band, obs.band.is_some(), "digit band")?;
    needs(view.color, obs.color.is_some(), "color")?;
    needs(view.environment, obs.environment.is_some(), "environment")?;
    let restricted = Observation {
        band: obs.band.filter(|_| view.band),
        color: obs.color.filter(|_| view.color),
        environment: obs.environment.filter(|_| view.environment),
    };
    conditional(&build_table(&archetype.cfg), &restricted)
}

fn conditional(table: &GenerativeTable, obs: &Observation) -> Result<f64> {
    let mass = table.probability(|c| obs.matches(c));
    if mass <= 0.0 {
        return Err(Error::Analytic(format!("observation {obs:?} has probability zero")));
    }
    Ok(table.probability(|c| obs.matches(c) && c.label() == 1) / mass)
}

fn bits(p_true_label: f64) -> f64 {
    if p_true_label >= 1.0 {
        0.0
    } else {
        -p_true_label.log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    /// `E[-log2 q(y | x)]` of the archetype.
    pub cross_entropy_bits: f64,
    /// `E[H(p*(· | x))]` under the full observable conditional.
    pub entropy_bits: f64,
    /// `E_x KL(p*_x || q_x)`, the difference of the two.
    pub excess_bits: f64,
}

pub fn expected_excess_bits(archetype: &Archetype) -> Result<ExcessReport> {
    let table = build_table(&archetype.cfg);
    let view = archetype.view();
    let truth = observable(&archetype.cfg);
    let mut ce = 0.0;
    let mut h = 0.0;
    for (cell, p) in &table.cells {
        if *p == 0.0 {
            continue;
        }
        let y = cell.label();
        let q1 = conditional(&table, &view.of(cell))?;
        let t1 = conditional(&table, &truth.of(cell))?;
        let (q, t) = if y == 1 { (q1, t1) } else { (1.0 - q1, 1.0 - t1) };
        ce += p * bits(q);
        h += p * bits(t);
    }
    Ok(ExcessReport {
        cross_entropy_bits: ce,
        entropy_bits: h,
        excess_bits: ce - h,
    })
}

/// Mean `-log2 q(y | latents)` of the archetype over generated samples.
pub fn empirical_cross_entropy(archetype: &Archetype, latents: &[Latents]) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::Empty("latent sample"));
    }
    let table = build_table(&archetype.cfg);
    let view = archetype.view();
    let mut total = 0.0;
    for l in latents {
        let cell = Cell {
            band: u8::from(l.digit_class >= 5),
            flip: 0,
            environment: l.environment,
            color: l.color,
        };
        let q1 = conditional(&table, &view.of(&cell))?;
        total += bits(if l.label == 1 { q1 } else { 1.0 - q1 });
    }
    Ok(total / latents.len() as f64)
}

/// Index minimizing `L + N·rate`; ties go to the lower `L`.
pub fn idealized_choice(candidates: &[(f64, f64)], n: f64) -> Result<usize> {
    let cost = |&(l, r): &(f64, f64)| l + n * r;
    (0..candidates.len())
        .min_by(|&a, &b| {
            cost(&candidates[a])
                .total_cmp(&cost(&candidates[b]))
                .then(candidates[a].0.total_cmp(&candidates[b].0))
        })
        .ok_or(Error::Empty("candidate list"))
}

/// Dataset size at which `b` starts to beat `a`; `∞` if it never does.
pub fn crossover(a: (f64, f64), b: (f64, f64)) -> f64 {
    let ((la, ra), (lb, rb)) = (a, b);
    if lb <= la && rb <= ra {
        0.0
    } else if rb >= ra {
        f64::INFINITY
    } else {
        (lb - la) / (ra - rb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessWindow {
    /// Spurious-to-robust crossover.
    pub n_min: f64,
    /// Robust-to-Bayes crossover.
    pub n_max: f64,
}

impl RobustnessWindow {
    pub fn is_empty(&self) -> bool {
        self.n_min >= self.n_max
    }
}

/// Window of dataset sizes where the robust candidate is preferred.
pub fn scenario_bounds(candidates: &[(ArchetypeKind, f64, f64)]) -> Result<RobustnessWindow> {
    let get = |k: ArchetypeKind| {
        candidates
            .iter()
            .find(|c| c.0 == k)
            .map(|c| (c.1, c.2))
            .ok_or_else(|| Error::Analytic(format!("missing {} candidate", k.as_str())))
    };
    let (s, r, b) = (
        get(ArchetypeKind::Spurious)?,
        get(ArchetypeKind::Robust)?,
        get(ArchetypeKind::Bayes)?,
    );
    Ok(RobustnessWindow {
        n_min: crossover(s, r),
        n_max: crossover(r, b),
    })
}
