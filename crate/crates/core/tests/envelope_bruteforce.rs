use mdlsel_core::envelope::{crossover, lower_envelope, total_cost, CompressionLine};
use mdlsel_core::Feature;
use proptest::prelude::*;

fn line() -> impl Strategy<Value = CompressionLine> {
    (0.0f64..1e5, 0.0f64..1.0).prop_map(|(l, r)| CompressionLine::new(l, r, Feature::Digit, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn winner_is_the_argmin(lines in prop::collection::vec(line(), 1..=50), ns in prop::collection::vec(0.0f64..7.0, 50)) {
        let env = lower_envelope(&lines);
        for e in ns {
            let n = 10f64.powf(e);
            let best = lines.iter().map(|l| total_cost(l, n)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(total_cost(env.winner(n), n), best);
        }
    }

    #[test]
    fn breakpoints_increase(lines in prop::collection::vec(line(), 1..=50)) {
        let env = lower_envelope(&lines);
        prop_assert_eq!(env.breakpoints.len() + 1, env.lines.len());
        for w in env.breakpoints.windows(2) {
            prop_assert!(w[0].n <= w[1].n);
        }
    }

    #[test]
    fn two_line_crossover(l1 in 0.0f64..1e4, dl in 1.0f64..1e4, r2 in 0.0f64..0.5, dr in 0.01f64..0.5) {
        let a = CompressionLine::new(l1, r2 + dr, Feature::Color, 0);
        let b = CompressionLine::new(l1 + dl, r2, Feature::Digit, 0);
        let expected = ((l1 + dl) - l1) / ((r2 + dr) - r2);
        prop_assert!((crossover(&a, &b) - expected).abs() <= 1e-12 * expected.max(1.0));
    }
}
