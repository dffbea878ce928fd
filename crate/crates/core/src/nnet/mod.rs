//! A small ReLU MLP classifier with exact gradients.
//!
//! Losses are computed in nats internally; anything reported as a
//! codelength is converted to bits.

mod checkpoint;
mod optim;
mod train;

use std::f64::consts::LN_2;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::taskgen::Dataset;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{adamw_step, AdamState};
pub use train::{train_until_converged, EpochRecord, TrainConfig, TrainHistory};

/// Rows processed at once when evaluating large sets.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub n_classes: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dim: usize, n_hidden_layers: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_dim,
            n_hidden_layers,
            n_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_classes == 0 {
            return Err(Error::Shape {
                expected: "positive layer sizes".into(),
                got: format!("{self:?}"),
            });
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, hidden layers first, head last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.n_hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.n_hidden_layers {
            dims.push((fan_in, self.hidden_dim));
            fan_in = self.hidden_dim;
        }
        dims.push((fan_in, self.n_classes));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer, `z = x · w + b` with `w` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub architecture: MlpArchitecture,
    pub layers: Vec<Dense>,
}

/// Same layout as [`MlpModel::layers`].
pub type Gradients = Vec<Dense>;

impl MlpModel {
    pub fn zeros(architecture: MlpArchitecture) -> Self {
        let layers = architecture
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense {
                w: Array2::zeros((i, o)),
                b: Array1::zeros(o),
            })
            .collect();
        MlpModel {
            architecture,
            layers,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_xavier(architecture: MlpArchitecture, rng: &mut StreamRng) -> MlpModel {
    let mut model = MlpModel::zeros(architecture);
    for layer in &mut model.layers {
        let (fan_in, fan_out) = layer.w.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    model
}

/// Inputs as rows of `f64` plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl LabeledData {
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", x.nrows()),
                got: format!("{}", y.len()),
            });
        }
        Ok(LabeledData { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn rows(&self, range: Range<usize>) -> LabeledData {
        LabeledData {
            x: self.x.slice(s![range.clone(), ..]).to_owned(),
            y: self.y[range].to_vec(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> LabeledData {
        LabeledData {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

impl From<&Dataset> for LabeledData {
    /// Flattens each image (row-major, channels last) to `[0, 1]` values.
    fn from(ds: &Dataset) -> Self {
        let dim = ds.config().input_dim();
        let mut x = Array2::zeros((ds.len(), dim));
        for (mut row, s) in x.rows_mut().into_iter().zip(ds.samples()) {
            for (v, &b) in row.iter_mut().zip(&s.image) {
                *v = f64::from(b) / 255.0;
            }
        }
        LabeledData {
            x,
            y: ds.labels(),
        }
    }
}

fn check_input(model: &MlpModel, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.architecture.input_dim {
        return Err(Error::Shape {
            expected: format!("{} input columns", model.architecture.input_dim),
            got: format!("{}", x.ncols()),
        });
    }
    Ok(())
}

fn check_labels(model: &MlpModel, y: &[usize]) -> Result<()> {
    let classes = model.architecture.n_classes;
    match y.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelRange { label, classes }),
        None => Ok(()),
    }
}

fn affine(x: &ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = x.dot(&layer.w);
    z += &layer.b;
    z
}

fn logits_unchecked(model: &MlpModel, x: ArrayView2<f64>) -> Array2<f64> {
    let (head, hidden) = model.layers.split_last().expect("at least one layer");
    let mut h: Option<Array2<f64>> = None;
    for layer in hidden {
        let mut z = match &h {
            Some(prev) => affine(&prev.view(), layer),
            None => affine(&x, layer),
        };
        z.mapv_inplace(|v| v.max(0.0));
        h = Some(z);
    }
    match &h {
        Some(prev) => affine(&prev.view(), head),
        None => affine(&x, head),
    }
}

/// Per-class scores for each input row.
pub fn forward(model: &MlpModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(model, &x)?;
    Ok(logits_unchecked(model, x))
}

/// Row-wise `log softmax` in nats.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// `-log2 p(y | x)` per row.
pub fn label_bits_from_logits(logits: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    let lp = log_softmax(logits);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -lp[[i, y]] / LN_2)
        .collect()
}

/// Mean `-log2 p(y | x)` over the batch.
pub fn cross_entropy_bits(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("cross-entropy of an empty batch"));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} logit rows", labels.len()),
            got: format!("{}", logits.nrows()),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(Error::LabelRange {
            label,
            classes: logits.ncols(),
        });
    }
    let bits = label_bits_from_logits(logits, labels);
    Ok(bits.iter().sum::<f64>() / bits.len() as f64)
}

/// Mean natural-log cross-entropy and its gradient.
pub(crate) fn loss_and_gradients(
    model: &MlpModel,
    x: ArrayView2<f64>,
    y: &[usize],
) -> (f64, Gradients) {
    let n = y.len();
    let (head, hidden) = model.layers.split_last().expect("at least one layer");
    // post-activation outputs of every hidden layer
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(hidden.len());
    for layer in hidden {
        let mut z = match acts.last() {
            Some(prev) => affine(&prev.view(), layer),
            None => affine(&x, layer),
        };
        z.mapv_inplace(|v| v.max(0.0));
        acts.push(z);
    }
    let logits = match acts.last() {
        Some(prev) => affine(&prev.view(), head),
        None => affine(&x, head),
    };
    let lp = log_softmax(&logits);
    let mut loss = 0.0;
    let mut delta = lp.mapv(f64::exp);
    for (i, &label) in y.iter().enumerate() {
        loss -= lp[[i, label]];
        delta[[i, label]] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    delta *= inv_n;

    let mut grads: Vec<Dense> = Vec::with_capacity(model.layers.len());
    for li in (0..model.layers.len()).rev() {
        let input = if li == 0 { x } else { acts[li - 1].view() };
        let gw = input.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        if li > 0 {
            let mut back = delta.dot(&model.layers[li].w.t());
            Zip::from(&mut back)
                .and(&acts[li - 1])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = back;
        }
        grads.push(Dense { w: gw, b: gb });
    }
    grads.reverse();
    (loss, grads)
}

/// Gradient of the mean natural-log cross-entropy w.r.t. every parameter.
pub fn backward(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<Gradients> {
    check_input(model, &x)?;
    check_labels(model, labels)?;
    if x.nrows() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", x.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("gradient of an empty batch"));
    }
    Ok(loss_and_gradients(model, x, labels).1)
}

/// `-log2 p(y | x)` for every row of `data`.
pub fn label_bits(model: &MlpModel, data: &LabeledData) -> Result<Vec<f64>> {
    check_input(model, &data.x.view())?;
    check_labels(model, &data.y)?;
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let logits = logits_unchecked(model, data.x.slice(s![start..end, ..]));
        out.extend(label_bits_from_logits(&logits, &data.y[start..end]));
    }
    Ok(out)
}

/// Index of the largest score; ties go to the lower class.
pub fn predict(model: &MlpModel, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    check_input(model, &x)?;
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let logits = logits_unchecked(model, x.slice(s![start..end, ..]));
        out.extend(logits.rows().into_iter().map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_bits: f64,
    pub accuracy: f64,
}

pub fn evaluate(model: &MlpModel, data: &LabeledData) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let bits = label_bits(model, data)?;
    let pred = predict(model, data.x.view())?;
    let correct = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        mean_bits: bits.iter().sum::<f64>() / bits.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Fraction of rows classified correctly.
pub fn accuracy(model: &MlpModel, data: &LabeledData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = predict(model, data.x.view())?;
    Ok(pred.iter().zip(&data.y).filter(|(p, y)| p == y).count() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn small(input: usize, hidden: usize, layers: usize, seed: u64) -> MlpModel {
        init_xavier(
            MlpArchitecture::new(input, hidden, layers),
            &mut rng::stream(seed, 0, "init"),
        )
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let arch = MlpArchitecture::new(48, 8, 2);
        let a = init_xavier(arch, &mut rng::stream(1, 0, "i"));
        let b = init_xavier(arch, &mut rng::stream(1, 0, "i"));
        assert_eq!(a, b);
        for layer in &a.layers {
            let (i, o) = layer.w.dim();
            let bound = (6.0 / (i + o) as f64).sqrt();
            assert!(layer.w.iter().all(|w| w.abs() <= bound));
            assert!(layer.b.iter().all(|&b| b == 0.0));
        }
        let tiny = MlpArchitecture {
            input_dim: 3,
            hidden_dim: 3,
            n_hidden_layers: 1,
            n_classes: 3,
        };
        let m = init_xavier(tiny, &mut rng::stream(2, 0, "i"));
        assert!(m.layers.iter().all(|l| l.w.iter().all(|w| w.abs() <= 1.0)));
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(MlpArchitecture::new(4, 3, 2));
        let x = array![[1.0, 2.0, 3.0, 4.0], [0.0, -1.0, 0.5, 0.2]];
        let logits = forward(&m, x.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let p = softmax(&logits);
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!((cross_entropy_bits(&logits, &[0, 1]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        let m = small(4, 3, 1, 0);
        let empty = Array2::<f64>::zeros((0, 4));
        assert_eq!(forward(&m, empty.view()).unwrap().nrows(), 0);
        assert!(forward(&m, Array2::<f64>::zeros((2, 5)).view()).is_err());
        assert!(cross_entropy_bits(&Array2::zeros((0, 2)), &[]).is_err());
        assert!(backward(&m, Array2::<f64>::zeros((1, 4)).view(), &[2]).is_err());
    }

    #[test]
    fn duplicated_rows_give_identical_logits() {
        let m = small(6, 5, 2, 3);
        let row = array![0.3, -0.2, 0.9, 0.1, 0.0, 0.5];
        let x = ndarray::stack![Axis(0), row, row];
        let l = forward(&m, x.view()).unwrap();
        assert_eq!(l.row(0), l.row(1));
    }

    #[test]
    fn cross_entropy_known_values() {
        // p(true) = 1 up to rounding
        let sure = array![[0.0, 800.0]];
        assert!(cross_entropy_bits(&sure, &[1]).unwrap().abs() < 1e-12);
        let three_quarters = array![[3.0f64.ln(), 0.0]];
        let bits = cross_entropy_bits(&three_quarters, &[0]).unwrap();
        assert!((bits - 0.415_037_499_278_843_8).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = small(5, 7, 2, 11);
        let x = Array2::from_shape_fn((20, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let p = softmax(&forward(&m, x.view()).unwrap());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_output_bias_gradient() {
        let m = MlpModel::zeros(MlpArchitecture::new(2, 3, 1));
        let x = array![[1.0, -1.0], [-1.0, 1.0]];
        let g = backward(&m, x.view(), &[0, 1]).unwrap();
        // mean of (p - onehot) with p = 1/2: class 0 gets (-0.5 + 0.5)/2
        let gb = &g.last().unwrap().b;
        assert!(gb.iter().all(|v| v.abs() < 1e-15));
        let g1 = backward(&m, x.slice(s![0..1, ..]), &[0]).unwrap();
        let gb1 = &g1.last().unwrap().b;
        assert!((gb1[0] + 0.5).abs() < 1e-15 && (gb1[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sample_gradient_matches_single() {
        let m = small(5, 4, 2, 9);
        let row = array![0.1, 0.7, -0.3, 0.2, 0.9];
        let one = ndarray::stack![Axis(0), row];
        let two = ndarray::stack![Axis(0), row, row];
        let g1 = backward(&m, one.view(), &[1]).unwrap();
        let g2 = backward(&m, two.view(), &[1, 1]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.w.iter().zip(&b.w).all(|(x, y)| (x - y).abs() < 1e-15));
            assert!(a.b.iter().zip(&b.b).all(|(x, y)| (x - y).abs() < 1e-15));
        }
    }

    #[test]
    fn evaluate_uniform_and_perfect() {
        let data = LabeledData::new(array![[1.0], [2.0], [-1.0], [-2.0]], vec![1, 1, 0, 0]).unwrap();
        let zero = MlpModel::zeros(MlpArchitecture::new(1, 2, 1));
        let e = evaluate(&zero, &data).unwrap();
        assert!((e.mean_bits - 1.0).abs() < 1e-15);
        assert!((e.accuracy - 0.5).abs() < 1e-15);

        // logit_1 - logit_0 = 100 * relu(x) - 100 * relu(-x)
        let mut perfect = MlpModel::zeros(MlpArchitecture::new(1, 2, 1));
        perfect.layers[0].w = array![[1.0, -1.0]];
        perfect.layers[1].w = array![[-50.0, 50.0], [50.0, -50.0]];
        let e = evaluate(&perfect, &data).unwrap();
        assert!(e.mean_bits < 1e-12);
        assert_eq!(e.accuracy, 1.0);
        assert!(evaluate(&perfect, &data.rows(0..0)).is_err());
    }
}
