use ndarray::{Array1, Array2, Zip};

use super::{Dense, Gradients, MlpModel, TrainConfig};

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Dense>,
    pub v: Vec<Dense>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One AdamW step with decoupled weight decay applied to every parameter.
pub fn adamw_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.epsilon);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let step = (*m / c1) / ((*v / c2).sqrt() + eps);
        *p = *p * (1.0 - lr * wd) - lr * step;
    };
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        Zip::from(&mut layer.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .and(&g.w)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .and(&g.b)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_xavier, MlpArchitecture};
    use crate::rng;

    fn model() -> MlpModel {
        init_xavier(MlpArchitecture::new(3, 4, 1), &mut rng::stream(5, 0, "init"))
    }

    fn constant_grads(model: &MlpModel, g: f64) -> Gradients {
        model
            .layers
            .iter()
            .map(|l| Dense {
                w: Array2::from_elem(l.w.dim(), g),
                b: Array1::from_elem(l.b.len(), g),
            })
            .collect()
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let cfg = TrainConfig::default();
        let before = model();
        let mut after = before.clone();
        let mut state = AdamState::new(&after);
        adamw_step(&mut after, &constant_grads(&before, 0.0), &mut state, &cfg);
        let factor = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (a, b) in after.params().zip(before.params()) {
            assert_eq!(a, b * factor);
        }
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        for g in [0.3, -2.0] {
            let before = model();
            let mut after = before.clone();
            let mut state = AdamState::new(&after);
            adamw_step(&mut after, &constant_grads(&before, g), &mut state, &cfg);
            // m̂ = g, v̂ = g², so the step is η·g/(|g|+ε)
            let expected = cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            for (a, b) in after.params().zip(before.params()) {
                assert!((b - a - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let cfg = TrainConfig::default();
        let (mut a, mut b) = (model(), model());
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        for step in 0..5 {
            let g = constant_grads(&a, 0.1 * step as f64 - 0.2);
            adamw_step(&mut a, &g, &mut sa, &cfg);
            adamw_step(&mut b, &g, &mut sb, &cfg);
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
