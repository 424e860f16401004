use grip_core::nnkit::{Activation, Layer, Mlp, MlpSpec};
use grip_core::rng::seeded;

/// Inverted dropout keeps the expected output equal to the deterministic one.
#[test]
fn stochastic_mean_matches_deterministic_output() {
    // Positive weights and inputs keep every ReLU in its linear region, so
    // the network is linear in the dropout scales.
    let spec = MlpSpec::new(3, vec![16], 1).with_activation(Activation::Relu).with_dropout(0.3);
    let mut first = Layer::zeros(3, 16);
    for (i, w) in first.weights.iter_mut().enumerate() {
        *w = 0.1 + 0.05 * (i % 7) as f64;
    }
    let mut second = Layer::zeros(16, 1);
    for (i, w) in second.weights.iter_mut().enumerate() {
        *w = if i % 3 == 0 { -0.4 } else { 0.3 + 0.02 * i as f64 };
    }
    second.bias[0] = 0.25;
    let mlp = Mlp::from_layers(spec, vec![first, second]).unwrap();
    let x = [0.8, 1.3, 0.4];
    let exact = mlp.predict(&x).unwrap()[0];

    let n = 20_000;
    let mut rng = seeded(17);
    let samples: Vec<f64> = (0..n).map(|_| mlp.forward(&x, true, &mut rng).unwrap()[0]).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!(var > 0.0);
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean}, exact {exact}, se {se}");
}
