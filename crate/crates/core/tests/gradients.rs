use mdlsel_core::nnet::{backward, cross_entropy_bits, forward, init_xavier, MlpArchitecture, MlpModel};
use mdlsel_core::rng::stream;
use ndarray::Array2;
use rand::Rng;

fn loss_nats(model: &MlpModel, x: &Array2<f64>, y: &[usize]) -> f64 {
    let logits = forward(model, x.view()).unwrap();
    cross_entropy_bits(&logits, y).unwrap() * std::f64::consts::LN_2
}

/// Worst relative error between backprop and central differences over
/// every parameter of one network.
fn worst_error(model: &MlpModel, x: &Array2<f64>, y: &[usize], eps: f64) -> f64 {
    let grads = backward(model, x.view(), y).unwrap();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        let analytic = g.w.iter().chain(g.b.iter()).copied().collect::<Vec<_>>();
        let n_w = g.w.len();
        for (k, &a) in analytic.iter().enumerate() {
            let mut eval = |delta: f64| {
                let layer = &mut probe.layers[l];
                let p = if k < n_w {
                    layer.w.iter_mut().nth(k).unwrap()
                } else {
                    layer.b.iter_mut().nth(k - n_w).unwrap()
                };
                *p += delta;
                let v = loss_nats(&probe, x, y);
                let layer = &mut probe.layers[l];
                let p = if k < n_w {
                    layer.w.iter_mut().nth(k).unwrap()
                } else {
                    layer.b.iter_mut().nth(k - n_w).unwrap()
                };
                *p -= delta;
                v
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Smallest |pre-activation| of any hidden unit on any row.
fn kink_margin(model: &MlpModel, x: &Array2<f64>) -> f64 {
    let (_, hidden) = model.layers.split_last().unwrap();
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in hidden {
        let z = h.dot(&layer.w) + &layer.b;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        h = z.mapv(|v| v.max(0.0));
    }
    margin
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = stream(2024, 0, "fd");
    let mut worst = 0.0f64;
    for net in 0..20u64 {
        let input = rng.random_range(2..=48);
        let hidden = rng.random_range(1..=8);
        let layers = rng.random_range(1..=2);
        let arch = MlpArchitecture::new(input, hidden, layers);
        let model = init_xavier(arch, &mut stream(net, 0, "fd-init"));
        // central differences are only meaningful away from ReLU kinks
        let x = loop {
            let x = Array2::from_shape_fn((8, input), |_| rng.random_range(-1.0..1.0));
            if kink_margin(&model, &x) > 0.05 {
                break x;
            }
        };
        let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..2)).collect();
        worst = worst.max(worst_error(&model, &x, &y, 1e-3));
    }
    println!("max relative error {worst:e}");
    assert!(worst < 1e-4, "max relative error {worst:e}");
}
