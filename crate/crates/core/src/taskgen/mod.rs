//! Watermarked colored-digit benchmark.
//!
//! Each sample carries three label-related features: the digit shape (the
//! label is `1[d >= 5]`, optionally flipped), a color tint whose meaning
//! depends on a hidden binary environment, and a binary watermark in the
//! rightmost pixel column drawn from one of two disjoint per-environment
//! pattern banks. Images are a pure function of the latent factors and the
//! base glyph, so any latent can be permuted and the image re-rendered.

mod container;
mod glyphs;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use glyphs::{render_glyph, GlyphStyle, SyntheticDigits};

/// The three label-carrying features of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Digit,
    Color,
    Watermark,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Digit, Feature::Color, Feature::Watermark];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Digit => "digit",
            Feature::Color => "color",
            Feature::Watermark => "watermark",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "digit" => Ok(Feature::Digit),
            "color" => Ok(Feature::Color),
            "watermark" => Ok(Feature::Watermark),
            other => Err(format!("unknown feature `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    SyntheticGlyphs,
    IdxFiles,
}

/// Generator knobs. `bank_size == 0` disables the watermark column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub p_flip: f64,
    pub p_e: f64,
    pub bank_size: usize,
    pub watermark_bits: usize,
    pub image_side: usize,
    #[serde(default)]
    pub digit_only: bool,
    #[serde(default)]
    pub noise_digit: bool,
    #[serde(default)]
    pub random_watermark: bool,
    #[serde(default)]
    pub uninformative_majority: bool,
    pub source: SourceKind,
    /// Seeds the watermark banks; shared by every split of one task.
    #[serde(default)]
    pub bank_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            p_flip: 0.0,
            p_e: 0.5,
            bank_size: 0,
            watermark_bits: 32,
            image_side: 32,
            digit_only: false,
            noise_digit: false,
            random_watermark: false,
            uninformative_majority: false,
            source: SourceKind::SyntheticGlyphs,
            bank_seed: 0,
        }
    }
}

impl TaskConfig {
    /// Color shortcut versus digit shape, no watermark.
    pub fn scenario_a(p_e: f64) -> Self {
        TaskConfig {
            p_e,
            ..TaskConfig::default()
        }
    }

    /// Noisy digit versus environment watermark, balanced environments.
    pub fn scenario_b(p_flip: f64, bank_size: usize) -> Self {
        TaskConfig {
            p_flip,
            p_e: 0.5,
            bank_size,
            ..TaskConfig::default()
        }
    }

    /// Shrinks images (and watermark length) to `side`.
    pub fn at_side(mut self, side: usize) -> Self {
        self.image_side = side;
        self.watermark_bits = side;
        self
    }

    pub fn has_watermark(&self) -> bool {
        self.bank_size > 0
    }

    pub fn input_dim(&self) -> usize {
        self.image_side * self.image_side * 3
    }

    /// Environment whose color is randomized under `uninformative_majority`.
    pub fn majority_environment(&self) -> Option<u8> {
        if self.p_e < 0.5 {
            Some(0)
        } else if self.p_e > 0.5 {
            Some(1)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {p} is not in [0, 1]")))
            }
        };
        prob("p_flip", self.p_flip)?;
        prob("p_e", self.p_e)?;
        if self.image_side == 0 {
            return Err(Error::InvalidConfig("image_side must be positive".into()));
        }
        if self.has_watermark() {
            if self.watermark_bits == 0 || self.watermark_bits > 64 {
                return Err(Error::InvalidConfig(format!(
                    "watermark_bits = {} must be in 1..=64",
                    self.watermark_bits
                )));
            }
            if self.watermark_bits > self.image_side {
                return Err(Error::InvalidConfig(format!(
                    "watermark_bits = {} exceeds the column height {}",
                    self.watermark_bits, self.image_side
                )));
            }
            check_bank_capacity(self.bank_size, self.watermark_bits)?;
        }
        Ok(())
    }

    /// Whether `feature` exists in the rendered input and whether it can
    /// carry label information on its own.
    pub fn feature_status(&self, feature: Feature) -> FeatureStatus {
        match feature {
            Feature::Digit if self.noise_digit => FeatureStatus::Uninformative,
            Feature::Digit => FeatureStatus::Informative,
            Feature::Color if self.digit_only => FeatureStatus::Absent,
            Feature::Color => FeatureStatus::Informative,
            Feature::Watermark if !self.has_watermark() => FeatureStatus::Absent,
            // the environment only decodes the label through the color key
            Feature::Watermark if self.random_watermark || self.digit_only => {
                FeatureStatus::Uninformative
            }
            Feature::Watermark => FeatureStatus::Informative,
        }
    }

    pub fn present_features(&self) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|&f| self.feature_status(f) != FeatureStatus::Absent)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureStatus {
    Absent,
    Uninformative,
    Informative,
}

fn check_bank_capacity(bank_size: usize, bits: usize) -> Result<()> {
    let needed = 2 * bank_size as u128;
    let available = if bits >= 128 { u128::MAX } else { 1u128 << bits };
    if needed > available {
        Err(Error::BankCapacity { needed, bits })
    } else {
        Ok(())
    }
}

/// Two disjoint banks of distinct watermark patterns, bit `r` of a
/// pattern goes to row `r` of the watermark column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkBanks {
    pub bits: usize,
    pub bank0: Vec<u64>,
    pub bank1: Vec<u64>,
}

impl WatermarkBanks {
    pub fn empty(bits: usize) -> Self {
        WatermarkBanks {
            bits,
            bank0: Vec::new(),
            bank1: Vec::new(),
        }
    }

    pub fn bank(&self, env: u8) -> &[u64] {
        if env == 0 {
            &self.bank0
        } else {
            &self.bank1
        }
    }

    pub fn pattern(&self, wm: WatermarkRef) -> u64 {
        self.bank(wm.bank)[wm.index as usize]
    }

    /// Environment a pattern belongs to, if any.
    pub fn environment_of(&self, pattern: u64) -> Option<u8> {
        if self.bank0.contains(&pattern) {
            Some(0)
        } else if self.bank1.contains(&pattern) {
            Some(1)
        } else {
            None
        }
    }
}

/// Rejection-samples `2 * bank_size` distinct uniform `watermark_bits`-bit
/// patterns; the first half forms bank 0.
pub fn generate_banks(
    bank_size: usize,
    watermark_bits: usize,
    rng: &mut StreamRng,
) -> Result<WatermarkBanks> {
    if watermark_bits == 0 || watermark_bits > 64 {
        return Err(Error::InvalidConfig(format!(
            "watermark_bits = {watermark_bits} must be in 1..=64"
        )));
    }
    check_bank_capacity(bank_size, watermark_bits)?;
    let mask = if watermark_bits == 64 {
        u64::MAX
    } else {
        (1u64 << watermark_bits) - 1
    };
    let mut seen = HashSet::with_capacity(2 * bank_size);
    let mut patterns = Vec::with_capacity(2 * bank_size);
    while patterns.len() < 2 * bank_size {
        let p = rng.random::<u64>() & mask;
        if seen.insert(p) {
            patterns.push(p);
        }
    }
    let bank1 = patterns.split_off(bank_size);
    Ok(WatermarkBanks {
        bits: watermark_bits,
        bank0: patterns,
        bank1,
    })
}

/// Banks implied by a task config (empty when the watermark is disabled).
pub fn task_banks(cfg: &TaskConfig) -> Result<WatermarkBanks> {
    if !cfg.has_watermark() {
        return Ok(WatermarkBanks::empty(cfg.watermark_bits));
    }
    let mut rng = rng::stream(cfg.bank_seed, 0, "watermark-banks");
    generate_banks(cfg.bank_size, cfg.watermark_bits, &mut rng)
}

/// `1[d >= 5] XOR Bernoulli(p_flip)`.
pub fn assign_label(digit_class: u8, p_flip: f64, rng: &mut StreamRng) -> u8 {
    let band = u8::from(digit_class >= 5);
    let flip = u8::from(rng.random::<f64>() < p_flip);
    band ^ flip
}

/// Environment 0: y=0 green, y=1 red. Environment 1: the reverse.
pub fn assign_color(label: u8, environment: u8, cfg: &TaskConfig, rng: &mut StreamRng) -> Color {
    if cfg.digit_only {
        return Color::None;
    }
    if cfg.uninformative_majority && cfg.majority_environment() == Some(environment) {
        return if rng.random::<bool>() {
            Color::Green
        } else {
            Color::Red
        };
    }
    if (label ^ environment) == 0 {
        Color::Green
    } else {
        Color::Red
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WatermarkRef {
    pub bank: u8,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latents {
    pub digit_class: u8,
    pub label: u8,
    pub environment: u8,
    pub color: Color,
    pub watermark: Option<WatermarkRef>,
    /// Seeds the replacement noise under `noise_digit`.
    pub noise_seed: u64,
}

/// A grayscale base digit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub digit_class: u8,
    pub pixels: Arc<[u8]>,
}

impl Glyph {
    pub fn new(digit_class: u8, pixels: Vec<u8>) -> Self {
        Glyph {
            digit_class,
            pixels: pixels.into(),
        }
    }
}

/// Supplies base glyphs for dataset construction.
pub trait DigitSource: Sync {
    fn image_side(&self) -> usize;

    /// `None` for unbounded sources.
    fn capacity(&self) -> Option<usize>;

    /// `n` glyphs for a dataset keyed by `seed`; deterministic in `(seed, n)`.
    fn glyphs(&self, seed: u64, n: usize) -> Result<Vec<Glyph>>;
}

/// Pixels are stored as bytes; intensity is `byte / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub latents: Latents,
    pub glyph: Arc<[u8]>,
    pub image: Vec<u8>,
}

impl Sample {
    pub fn label(&self) -> u8 {
        self.latents.label
    }
}

/// Renders the `side`×`side`×3 image (row-major, channels last).
pub fn render(cfg: &TaskConfig, banks: &WatermarkBanks, latents: &Latents, glyph: &[u8]) -> Vec<u8> {
    let side = cfg.image_side;
    debug_assert_eq!(glyph.len(), side * side);
    let noise;
    let intensity: &[u8] = if cfg.noise_digit {
        noise = noise_field(side, latents.noise_seed);
        &noise
    } else {
        glyph
    };
    let mut image = vec![0u8; side * side * 3];
    for (px, &v) in image.chunks_exact_mut(3).zip(intensity) {
        match latents.color {
            Color::Red => px[0] = v,
            Color::Green => px[1] = v,
            Color::None => px.fill(v),
        }
    }
    if let Some(wm) = latents.watermark {
        let pattern = banks.pattern(wm);
        for r in 0..side {
            let bit = r < banks.bits && (pattern >> r) & 1 == 1;
            let at = (r * side + side - 1) * 3;
            image[at..at + 3].fill(if bit { 255 } else { 0 });
        }
    }
    image
}

fn noise_field(side: usize, seed: u64) -> Vec<u8> {
    let mut rng = rng::stream(seed, 0, "digit-noise");
    let normal = Normal::new(0.5, 0.25).expect("positive sd");
    (0..side * side)
        .map(|_| (Distribution::<f64>::sample(&normal, &mut rng).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Draws label, environment, color and watermark for one glyph, in that order.
pub fn make_sample(
    glyph: &Glyph,
    cfg: &TaskConfig,
    banks: &WatermarkBanks,
    rng: &mut StreamRng,
) -> Result<Sample> {
    let side = cfg.image_side;
    if glyph.pixels.len() != side * side {
        let got = (glyph.pixels.len() as f64).sqrt() as usize;
        return Err(Error::GlyphSize { expected: side, got });
    }
    let latents = draw_latents(glyph.digit_class, cfg, rng);
    let image = render(cfg, banks, &latents, &glyph.pixels);
    Ok(Sample {
        latents,
        glyph: glyph.pixels.clone(),
        image,
    })
}

fn draw_latents(digit_class: u8, cfg: &TaskConfig, rng: &mut StreamRng) -> Latents {
    let label = assign_label(digit_class, cfg.p_flip, rng);
    let environment = u8::from(rng.random::<f64>() < cfg.p_e);
    let color = assign_color(label, environment, cfg, rng);
    let watermark = if cfg.has_watermark() {
        let k = cfg.bank_size as u32;
        let bank = if cfg.random_watermark {
            rng.random_range(0..2u8)
        } else {
            environment
        };
        Some(WatermarkRef {
            bank,
            index: rng.random_range(0..k),
        })
    } else {
        None
    };
    Latents {
        digit_class,
        label,
        environment,
        color,
        watermark,
        noise_seed: rng.random(),
    }
}

/// How a dataset was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "feature")]
pub enum DatasetKind {
    Original,
    Isolated(Feature),
    OutOfDistribution(Feature),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    config: TaskConfig,
    banks: WatermarkBanks,
    master_seed: u64,
    kind: DatasetKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub(crate) fn from_parts(
        config: TaskConfig,
        banks: WatermarkBanks,
        master_seed: u64,
        kind: DatasetKind,
        samples: Vec<Sample>,
    ) -> Self {
        Dataset {
            config,
            banks,
            master_seed,
            kind,
            samples,
        }
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn banks(&self) -> &WatermarkBanks {
        &self.banks
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label() as usize).collect()
    }

    /// Copy holding the first `n` samples.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples[..n.min(self.len())].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            config: self.config.clone(),
            banks: self.banks.clone(),
            master_seed: self.master_seed,
            kind: self.kind,
            samples: Vec::new(),
        }
    }

    /// Re-draws `feature` by permuting its latent values across samples and
    /// re-rendering. The multiset of values is preserved exactly.
    pub fn permute_feature(&self, feature: Feature, rng: &mut StreamRng) -> Result<Dataset> {
        if self.config.feature_status(feature) == FeatureStatus::Absent {
            return Err(Error::FeatureAbsent(feature));
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(rng);
        let mut out = self.clone();
        for (dst, &src) in out.samples.iter_mut().zip(&perm) {
            transplant(feature, dst, &self.samples[src]);
        }
        out.rerender();
        Ok(out)
    }

    fn rerender(&mut self) {
        let (cfg, banks) = (&self.config, &self.banks);
        self.samples.par_iter_mut().for_each(|s| {
            s.image = render(cfg, banks, &s.latents, &s.glyph);
        });
    }
}

/// Moves one feature's latent value from `src` into `dst`.
fn transplant(feature: Feature, dst: &mut Sample, src: &Sample) {
    match feature {
        Feature::Digit => {
            dst.latents.digit_class = src.latents.digit_class;
            dst.latents.noise_seed = src.latents.noise_seed;
            dst.glyph = src.glyph.clone();
        }
        Feature::Color => dst.latents.color = src.latents.color,
        Feature::Watermark => dst.latents.watermark = src.latents.watermark,
    }
}

fn generate(
    cfg: &TaskConfig,
    banks: &WatermarkBanks,
    n: usize,
    seed: u64,
    tag: &str,
    source: &dyn DigitSource,
) -> Result<Vec<Sample>> {
    if source.image_side() != cfg.image_side {
        return Err(Error::GlyphSize {
            expected: cfg.image_side,
            got: source.image_side(),
        });
    }
    if let Some(available) = source.capacity() {
        if available < n {
            return Err(Error::InsufficientGlyphs {
                available,
                requested: n,
            });
        }
    }
    let glyphs = source.glyphs(rng::derive_seed(seed, 0, &format!("{tag}/glyphs")), n)?;
    let sample_tag = format!("{tag}/sample");
    glyphs
        .par_iter()
        .enumerate()
        .map(|(i, glyph)| {
            let mut rng = rng::stream(seed, i as u64, &sample_tag);
            make_sample(glyph, cfg, banks, &mut rng)
        })
        .collect()
}

/// `n` i.i.d. samples of the task; deterministic in `(cfg, n, master_seed)`.
pub fn make_dataset(
    cfg: &TaskConfig,
    n: usize,
    master_seed: u64,
    source: &dyn DigitSource,
) -> Result<Dataset> {
    cfg.validate()?;
    let banks = task_banks(cfg)?;
    let samples = generate(cfg, &banks, n, master_seed, "original", source)?;
    Ok(Dataset::from_parts(
        cfg.clone(),
        banks,
        master_seed,
        DatasetKind::Original,
        samples,
    ))
}

/// Training data for the candidate that uses only `feature`: every other
/// present feature is permuted across samples, which severs it from the
/// label while keeping its marginal.
///
/// The watermark candidate keeps the color as well, since the environment
/// only determines the label through the color mapping; its environments
/// are balanced so that color alone stays uninformative.
pub fn make_feature_isolated_dataset(
    cfg: &TaskConfig,
    feature: Feature,
    n: usize,
    seed: u64,
    source: &dyn DigitSource,
) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.feature_status(feature) == FeatureStatus::Absent {
        return Err(Error::FeatureAbsent(feature));
    }
    let mut gen_cfg = cfg.clone();
    if feature == Feature::Watermark {
        gen_cfg.p_e = 0.5;
    }
    isolate(cfg, &gen_cfg, feature, n, seed, "isolated", source)
        .map(|d| d.with_kind(DatasetKind::Isolated(feature)))
}

/// Held-out set where the label correlates with `feature` alone, at full
/// strength: digit sets have no label flips, color sets use one
/// environment's mapping, watermark sets balance the environments.
pub fn make_ood_testset(
    cfg: &TaskConfig,
    feature: Feature,
    n: usize,
    seed: u64,
    source: &dyn DigitSource,
) -> Result<Dataset> {
    cfg.validate()?;
    match cfg.feature_status(feature) {
        FeatureStatus::Absent => return Err(Error::FeatureAbsent(feature)),
        FeatureStatus::Uninformative => return Err(Error::FeatureUninformative(feature)),
        FeatureStatus::Informative => {}
    }
    let mut gen_cfg = cfg.clone();
    match feature {
        Feature::Digit => gen_cfg.p_flip = 0.0,
        Feature::Color => {
            gen_cfg.p_e = if cfg.majority_environment() == Some(1) { 1.0 } else { 0.0 };
            gen_cfg.uninformative_majority = false;
        }
        Feature::Watermark => gen_cfg.p_e = 0.5,
    }
    isolate(cfg, &gen_cfg, feature, n, seed, "ood", source)
        .map(|d| d.with_kind(DatasetKind::OutOfDistribution(feature)))
}

fn isolate(
    cfg: &TaskConfig,
    gen_cfg: &TaskConfig,
    feature: Feature,
    n: usize,
    seed: u64,
    tag: &str,
    source: &dyn DigitSource,
) -> Result<Dataset> {
    let banks = task_banks(cfg)?;
    let tag = format!("{tag}:{feature}");
    let samples = generate(gen_cfg, &banks, n, seed, &tag, source)?;
    let mut ds = Dataset::from_parts(cfg.clone(), banks, seed, DatasetKind::Original, samples);
    let kept: &[Feature] = match feature {
        Feature::Watermark => &[Feature::Watermark, Feature::Color],
        _ => std::slice::from_ref(&feature),
    };
    for other in cfg.present_features() {
        if kept.contains(&other) {
            continue;
        }
        let mut rng = rng::stream(seed, 0, &format!("{tag}/shuffle:{other}"));
        let mut perm: Vec<usize> = (0..ds.len()).collect();
        perm.shuffle(&mut rng);
        let original = ds.samples.clone();
        for (dst, &src) in ds.samples.iter_mut().zip(&perm) {
            transplant(other, dst, &original[src]);
        }
    }
    ds.rerender();
    Ok(ds)
}

impl Dataset {
    fn with_kind(mut self, kind: DatasetKind) -> Self {
        self.kind = kind;
        self
    }
}
