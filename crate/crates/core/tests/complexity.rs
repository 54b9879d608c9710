mod common;

use common::*;
use tsr_core::complexity::{conv_macs, conv_params, count_macs, count_params, report};
use tsr_core::network::{attach, cell_forward_on_tape, init_network, init_state, topology, NetworkConfig, Parameters, StateVars};
use tsr_core::Tape;

/// Multiplies counted at runtime by the tape for one cell step.
fn runtime_macs(config: &NetworkConfig, h: usize, w: usize) -> u64 {
    let params: Parameters<f32> = init_network(config, 0).unwrap();
    let lr = rand_unit(&[1, 1, h, w], 1);
    let init = init_state(config, &lr).unwrap();
    let mut tape = Tape::new();
    let net = attach(&mut tape, &params, false).unwrap();
    let lr = tape.constant(lr);
    let state = StateVars {
        hidden: tape.constant(init.hidden),
        prev_sr: tape.constant(init.prev_sr),
    };
    assert_eq!(tape.macs(), 0);
    cell_forward_on_tape(&mut tape, &net, lr, state).unwrap();
    tape.macs()
}

fn configs() -> Vec<NetworkConfig> {
    vec![
        NetworkConfig::tiny(2),
        NetworkConfig::tiny(4),
        NetworkConfig { misr_channels: 3, residual_blocks: 2, sisr_stages: 2, fusion_channels: 5, ..NetworkConfig::tiny(2) },
        NetworkConfig { sisr_feat0: 6, sisr_feat: 3, misr_blocks: 2, ..NetworkConfig::tiny(4) },
    ]
}

#[test]
fn closed_form_layers() {
    assert_eq!(conv_params(1, 8, 3, true), 80);
    assert_eq!(conv_macs(4, 4, 1, 8, 8), 1024);
}

#[test]
fn static_macs_match_runtime_counter() {
    for c in configs() {
        for (h, w) in [(8, 8), (6, 10)] {
            let (stat, _) = count_macs(&c, h, w).unwrap();
            assert_eq!(stat, runtime_macs(&c, h, w), "{c:?} at {h}x{w}");
        }
    }
}

#[test]
fn macs_scale_linearly_with_area() {
    for c in configs().into_iter().chain([NetworkConfig::default()]) {
        let (_, base) = count_macs(&c, 8, 8).unwrap();
        let (_, tall) = count_macs(&c, 16, 8).unwrap();
        let (_, big) = count_macs(&c, 16, 16).unwrap();
        for ((a, b), d) in base.iter().zip(&tall).zip(&big) {
            assert_eq!(a.path, b.path);
            assert_eq!(b.macs, 2 * a.macs, "{}", a.path);
            assert_eq!(d.macs, 4 * a.macs, "{}", a.path);
        }
    }
}

#[test]
fn report_invariants() {
    for c in configs().into_iter().chain([NetworkConfig::default()]) {
        let r = report(&c, 80, 80).unwrap();
        assert_eq!(r.flops, 2 * r.macs);
        assert_eq!(r.params, count_params(&c).unwrap().0);
        assert_eq!(r.params, r.rows.iter().map(|row| row.params).sum::<u64>());
        let params: Parameters<f32> = init_network(&c, 2).unwrap();
        assert_eq!(r.params, params.num_elements() as u64);

        // every parameterized layer appears exactly once
        for layer in topology(&c).unwrap().layers {
            assert_eq!(r.rows.iter().filter(|row| row.path == layer.path).count(), 1, "{}", layer.path);
        }
    }
    let a = report(&NetworkConfig::default(), 80, 80).unwrap();
    let b = report(&NetworkConfig::default(), 80, 80).unwrap();
    assert_eq!(a.to_table(), b.to_table());
    assert!(a.to_table().contains("GFLOPs"));
    assert_eq!(a.to_csv().lines().count(), a.rows.len() + 1);
}

#[test]
fn impossible_geometry_is_rejected() {
    assert!(report(&NetworkConfig::tiny(4), 0, 8).is_err());
    assert!(count_macs(&NetworkConfig { scale: 3, ..NetworkConfig::tiny(2) }, 8, 8).is_err());
}
