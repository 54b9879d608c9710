mod common;

use std::time::Instant;

use common::*;
use tsr_core::gradcheck::network_grad_check;
use tsr_core::network::{init_network, unroll, NetworkConfig, Parameters};
use tsr_core::Tensor;

/// Targets sit strictly above the network output, so the absolute-error loss
/// has no kink of its own near the evaluation point.
fn targets_above(out: &[Tensor<f64>], seed: u64) -> Vec<Tensor<f64>> {
    out.iter()
        .enumerate()
        .map(|(i, o)| {
            let u: Tensor<f64> = rand_unit(o.shape(), seed * 10 + 5 + i as u64);
            Tensor::new(o.shape(), o.data().iter().zip(u.data()).map(|(a, b)| a + 0.05 + 0.1 * b).collect()).unwrap()
        })
        .collect()
}

fn check(config: NetworkConfig, seed: u64) -> (f64, usize) {
    let params: Parameters<f64> = init_network(&config, seed).unwrap();
    let lr: Vec<Tensor<f64>> = (0..3).map(|i| rand_unit(&[1, 1, 6, 6], seed * 10 + i)).collect();
    let hr = targets_above(&unroll(&params, &lr).unwrap(), seed);
    let (names, report) = network_grad_check(&params, &lr, &hr, 1e-4, 1e-7, 1e-4).unwrap();
    assert_eq!(names.len(), params.len());
    let flagged: Vec<&str> = report.flagged().map(|p| names[p.index].as_str()).collect();
    assert!(flagged.is_empty(), "seed {seed}: flagged {flagged:?}, max {}", report.max_rel_error());
    (report.max_rel_error(), report.refined())
}

#[test]
fn unrolled_network_passes_finite_differences() {
    let narrow = |scale| NetworkConfig {
        misr_channels: 2,
        residual_channels: 3,
        sisr_feat0: 2,
        sisr_feat: 2,
        fusion_channels: 3,
        ..NetworkConfig::tiny(scale)
    };
    for (label, config, seed) in [("narrow x2", narrow(2), 1), ("narrow x4", narrow(4), 2)] {
        let start = Instant::now();
        let (worst, refined) = check(config, seed);
        println!("{label}, 6x6, 3 steps: max relative error {worst:.2e}, {refined} refined, {:.1?}", start.elapsed());
    }
}
