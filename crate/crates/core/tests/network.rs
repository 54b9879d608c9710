mod common;

use std::collections::BTreeMap;

use common::*;
use tsr_core::complexity::count_params;
use tsr_core::network::{
    cell_forward, init_network, init_state, misr_forward, sisr_forward, topology, unroll, CellState, NetworkConfig,
    Parameters, INITIAL_PRELU_SLOPE,
};
use tsr_core::Tensor;

/// Layer-by-layer reference forward pass built from the naive convolution
/// loops, with the projection geometry written out by hand.
struct Reference<'a> {
    p: &'a Parameters<f64>,
    c: NetworkConfig,
}

enum Kind {
    Conv3,
    Conv1,
    Down,
    Up,
}

impl Reference<'_> {
    fn geometry(&self) -> (usize, usize) {
        // (stride, padding); kernel comes from the weight tensor
        if self.c.scale == 2 {
            (2, 2)
        } else {
            (4, 2)
        }
    }

    fn layer(&self, name: &str, x: &Tensor<f64>, kind: Kind, act: bool) -> Tensor<f64> {
        let w = self.p.get(&format!("{name}.weight")).unwrap();
        let b = self.p.get(&format!("{name}.bias")).unwrap();
        let (s, pd) = self.geometry();
        let y = match kind {
            Kind::Conv3 => naive_conv2d(x, w, Some(b), 1, 1),
            Kind::Conv1 => naive_conv2d(x, w, Some(b), 1, 0),
            Kind::Down => naive_conv2d(x, w, Some(b), s, pd),
            Kind::Up => {
                let raw = naive_conv_transpose2d(x, w, s, pd);
                let plane = raw.shape()[2] * raw.shape()[3];
                Tensor::from_fn(raw.shape(), |i| raw.data()[i] + b.data()[(i / plane) % raw.shape()[1]]).unwrap()
            }
        };
        if !act {
            return y;
        }
        let slope = self.p.get(&format!("{name}.act.slope")).unwrap().data()[0];
        y.map(|v| if v > 0.0 { v } else { slope * v })
    }

    fn block(&self, prefix: &str, x: &Tensor<f64>) -> Tensor<f64> {
        let h = self.layer(&format!("{prefix}.conv1"), x, Kind::Conv3, true);
        let h = self.layer(&format!("{prefix}.conv2"), &h, Kind::Conv3, false);
        zip(x, &h, |a, b| a + b)
    }

    fn up_projection(&self, prefix: &str, low: &Tensor<f64>) -> Tensor<f64> {
        let h0 = self.layer(&format!("{prefix}.up1"), low, Kind::Up, true);
        let l0 = self.layer(&format!("{prefix}.down"), &h0, Kind::Down, true);
        let err = zip(&l0, low, |a, b| a - b);
        let h1 = self.layer(&format!("{prefix}.up2"), &err, Kind::Up, true);
        zip(&h1, &h0, |a, b| a + b)
    }

    fn down_projection(&self, prefix: &str, high: &Tensor<f64>) -> Tensor<f64> {
        let l0 = self.layer(&format!("{prefix}.down1"), high, Kind::Down, true);
        let h0 = self.layer(&format!("{prefix}.up"), &l0, Kind::Up, true);
        let err = zip(&h0, high, |a, b| a - b);
        let l1 = self.layer(&format!("{prefix}.down2"), &err, Kind::Down, true);
        zip(&l1, &l0, |a, b| a + b)
    }

    fn sisr(&self, lr: &Tensor<f64>) -> Tensor<f64> {
        let x = self.layer("sisr.feat0", lr, Kind::Conv3, true);
        let mut low = self.layer("sisr.feat1", &x, Kind::Conv1, true);
        let mut highs = Vec::new();
        for i in 0..self.c.sisr_stages {
            let high = self.up_projection(&format!("sisr.up{i}"), &low);
            low = self.down_projection(&format!("sisr.down{i}"), &high);
            highs.push(high);
        }
        highs.push(self.up_projection(&format!("sisr.up{}", self.c.sisr_stages), &low));
        self.layer("sisr.fuse", &cat(&highs), Kind::Conv1, true)
    }

    fn misr(&self, lr: &Tensor<f64>, state: &CellState<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let folded = fold(&state.prev_sr, self.c.scale);
        let mut x = self.layer("misr.head", &cat(&[lr.clone(), state.hidden.clone(), folded]), Kind::Conv3, true);
        for j in 0..self.c.misr_blocks {
            x = self.block(&format!("misr.block{j}"), &x);
        }
        (self.layer("misr.up", &x, Kind::Up, true), x)
    }

    fn cell(&self, lr: &Tensor<f64>, state: &CellState<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let (m, hidden) = self.misr(lr, state);
        let s = self.sisr(lr);
        let mut r = self.layer("residual.head", &zip(&m, &s, |a, b| a - b), Kind::Conv3, true);
        for j in 0..self.c.residual_blocks {
            r = self.block(&format!("residual.block{j}"), &r);
        }
        let r = self.layer("residual.tail", &r, Kind::Conv3, true);
        (self.layer("reconstruction", &zip(&r, &s, |a, b| a + b), Kind::Conv3, false), hidden)
    }
}

fn zip(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape());
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).unwrap()
}

/// Batch-one channel concatenation.
fn cat(parts: &[Tensor<f64>]) -> Tensor<f64> {
    let [_, _, h, w] = parts[0].dims4("cat").unwrap();
    let channels: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&[1, channels, h, w], data).unwrap()
}

/// Batch-one space-to-depth, channel `c * b^2 + dy * b + dx`.
fn fold(x: &Tensor<f64>, b: usize) -> Tensor<f64> {
    let [_, c, h, w] = x.dims4("fold").unwrap();
    let (oh, ow) = (h / b, w / b);
    let mut out = vec![0.0; c * b * b * oh * ow];
    for ch in 0..c {
        for dy in 0..b {
            for dx in 0..b {
                for y in 0..oh {
                    for xx in 0..ow {
                        out[(((ch * b + dy) * b + dx) * oh + y) * ow + xx] = x.data()[(ch * h + y * b + dy) * w + xx * b + dx];
                    }
                }
            }
        }
    }
    Tensor::new(&[1, c * b * b, oh, ow], out).unwrap()
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b).unwrap();
    assert!(d < tol, "max difference {d}");
}

fn narrow(scale: usize, width: usize) -> NetworkConfig {
    NetworkConfig {
        scale,
        misr_channels: width,
        misr_blocks: 1,
        residual_channels: width,
        residual_blocks: 1,
        sisr_feat0: width,
        sisr_feat: width,
        sisr_stages: 1,
        fusion_channels: width,
    }
}

fn random_state(config: &NetworkConfig, h: usize, w: usize, seed: u64) -> CellState<f64> {
    CellState {
        hidden: rand_tensor(&[1, config.misr_channels, h, w], seed),
        prev_sr: rand_unit(&[1, 1, h * config.scale, w * config.scale], seed + 1),
    }
}

#[test]
fn hand_counted_parameters_for_tiny_scale_two() {
    // widths 4, counts 1, projection kernel 6; each PReLU adds one slope.
    let conv3 = |cin: usize, cout: usize| cout * cin * 9 + cout;
    let conv1 = |cin: usize, cout: usize| cout * cin + cout;
    let proj = 4 * 4 * 36 + 4;
    let sisr = (conv3(1, 4) + 1) + (conv1(4, 4) + 1) + 3 * 3 * (proj + 1) + (conv1(8, 4) + 1);
    let block = (conv3(4, 4) + 1) + conv3(4, 4);
    let misr = (conv3(1 + 4 + 4, 4) + 1) + block + (proj + 1);
    let residual = (conv3(4, 4) + 1) + block + (conv3(4, 4) + 1);
    let reconstruction = conv3(4, 1);
    let expected = sisr + misr + residual + reconstruction;
    assert_eq!(expected, 7167);

    let config = NetworkConfig::tiny(2);
    let params: Parameters<f32> = init_network(&config, 0).unwrap();
    assert_eq!(params.num_elements(), expected);
    assert_eq!(count_params(&config).unwrap().0, expected as u64);
}

#[test]
fn parameter_count_agrees_with_complexity_module() {
    let configs = [
        NetworkConfig::tiny(2),
        NetworkConfig::tiny(4),
        NetworkConfig::default(),
        NetworkConfig { scale: 2, misr_blocks: 3, sisr_stages: 3, residual_blocks: 2, ..NetworkConfig::default() },
    ];
    for c in configs {
        let params: Parameters<f32> = init_network(&c, 1).unwrap();
        assert_eq!(params.num_elements() as u64, count_params(&c).unwrap().0, "{c:?}");
    }
}

#[test]
fn initialization_contract() {
    let c = NetworkConfig::tiny(4);
    let a: Parameters<f32> = init_network(&c, 3).unwrap();
    assert_eq!(a, init_network(&c, 3).unwrap());
    assert_ne!(a, init_network::<f32>(&c, 4).unwrap());
    for (name, t) in a.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        } else if name.ends_with(".slope") {
            assert_eq!(t.data(), &[INITIAL_PRELU_SLOPE as f32]);
        } else {
            assert!(t.data().iter().any(|&v| v != 0.0), "{name}");
        }
    }
    let names: Vec<String> = a.names().map(String::from).collect();
    let mut expected = Vec::new();
    for layer in topology(&c).unwrap().layers {
        expected.push(layer.weight_name());
        expected.push(layer.bias_name());
        if layer.activation {
            expected.push(layer.slope_name());
        }
    }
    expected.sort();
    assert_eq!(names, expected);
}

#[test]
fn misr_head_sees_frame_hidden_and_folded_output() {
    for c in [NetworkConfig::tiny(2), NetworkConfig::default()] {
        let params: Parameters<f32> = init_network(&c, 0).unwrap();
        let w = params.get("misr.head.weight").unwrap();
        assert_eq!(w.shape()[1], 1 + c.misr_channels + c.scale * c.scale);
    }
}

#[test]
fn initial_state_contract() {
    let c = NetworkConfig::tiny(4);
    let lr = Tensor::<f32>::full(&[1, 1, 32, 32], 0.4).unwrap();
    let s = init_state(&c, &lr).unwrap();
    assert_eq!(s.hidden.shape(), &[1, 4, 32, 32]);
    assert!(s.hidden.data().iter().all(|&v| v == 0.0));
    assert_eq!(s.prev_sr.shape(), &[1, 1, 128, 128]);
    assert!(s.prev_sr.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
}

#[test]
fn cell_matches_layer_by_layer_reference() {
    // widths 2, one block, 2x2 input; then the tiny configs on larger frames
    let cases = [(narrow(2, 2), 2, 2), (NetworkConfig::tiny(2), 5, 4), (NetworkConfig::tiny(4), 3, 3)];
    for (i, (c, h, w)) in cases.into_iter().enumerate() {
        let params: Parameters<f64> = init_network(&c, 10 + i as u64).unwrap();
        let lr: Tensor<f64> = rand_unit(&[1, 1, h, w], 20 + i as u64);
        let state = random_state(&c, h, w, 30 + i as u64);
        let reference = Reference { p: &params, c };

        let (sr, next) = cell_forward(&params, &lr, &state).unwrap();
        let (ref_sr, ref_hidden) = reference.cell(&lr, &state);
        assert_close(&sr, &ref_sr, 1e-10);
        assert_close(&next.hidden, &ref_hidden, 1e-10);
        assert_eq!(next.prev_sr, sr);

        let (features, hidden) = misr_forward(&params, &lr, &state).unwrap();
        let (ref_features, _) = reference.misr(&lr, &state);
        assert_close(&features, &ref_features, 1e-10);
        assert_eq!(hidden, next.hidden);
        assert_close(&sisr_forward(&params, &lr).unwrap(), &reference.sisr(&lr), 1e-10);
    }
}

#[test]
fn up_projection_trace_with_fixed_weights() {
    // single-channel SISR on a 2x2 frame, weights set to a fixed pattern
    let c = NetworkConfig { sisr_feat0: 1, sisr_feat: 1, ..narrow(2, 1) };
    let init: Parameters<f64> = init_network(&c, 0).unwrap();
    let mut tensors = init.into_tensors();
    for (k, (name, t)) in tensors.iter_mut().enumerate() {
        if name.ends_with(".weight") {
            *t = Tensor::from_fn(t.shape(), |i| 0.05 * ((i + k) % 7) as f64 - 0.12).unwrap();
        } else if name.ends_with(".bias") {
            *t = t.map(|_| 0.01 * (k % 3) as f64);
        }
    }
    let params = Parameters::from_tensors(c, tensors).unwrap();
    let lr = Tensor::new(&[1, 1, 2, 2], vec![0.2, 0.9, 0.5, 0.1]).unwrap();
    let out = sisr_forward(&params, &lr).unwrap();
    assert_eq!(out.shape(), &[1, 1, 4, 4]);
    let reference = Reference { p: &params, c };
    assert_close(&out, &reference.sisr(&lr), 1e-12);
    let feat = reference.layer("sisr.feat1", &reference.layer("sisr.feat0", &lr, Kind::Conv3, true), Kind::Conv1, true);
    let up = reference.up_projection("sisr.up0", &feat);
    assert_eq!(up.shape(), &[1, 1, 4, 4]);
    assert!(up.all_finite() && up.data().iter().any(|&v| v != 0.0));
}

#[test]
fn zero_residual_tail_bypasses_to_reconstruction_of_sisr() {
    let c = NetworkConfig::tiny(2);
    let init: Parameters<f64> = init_network(&c, 5).unwrap();
    let mut tensors = init.into_tensors();
    for name in ["residual.tail.weight", "residual.tail.bias"] {
        let t = tensors.get_mut(name).unwrap();
        *t = t.map(|_| 0.0);
    }
    let params = Parameters::from_tensors(c, tensors).unwrap();
    let lr: Tensor<f64> = rand_unit(&[1, 1, 6, 6], 6);
    let state = random_state(&c, 6, 6, 7);
    let (sr, _) = cell_forward(&params, &lr, &state).unwrap();

    let sisr = sisr_forward(&params, &lr).unwrap();
    let w = params.get("reconstruction.weight").unwrap();
    let b = params.get("reconstruction.bias").unwrap();
    let (expected, _) = tsr_core::ops::conv2d(&sisr, w, Some(b), 1, 1).unwrap();
    assert_eq!(sr, expected);
}

#[test]
fn residual_block_with_zero_second_conv_is_identity() {
    // Two MISR blocks with the second zeroed must equal the one-block network.
    let two = NetworkConfig { misr_blocks: 2, ..NetworkConfig::tiny(2) };
    let one = NetworkConfig::tiny(2);
    let init: Parameters<f64> = init_network(&two, 8).unwrap();
    let mut tensors = init.into_tensors();
    for name in ["misr.block1.conv2.weight", "misr.block1.conv2.bias"] {
        let t = tensors.get_mut(name).unwrap();
        *t = t.map(|_| 0.0);
    }
    let two_params = Parameters::from_tensors(two, tensors.clone()).unwrap();
    let one_tensors: BTreeMap<String, Tensor<f64>> =
        tensors.into_iter().filter(|(k, _)| !k.starts_with("misr.block1.")).collect();
    let one_params = Parameters::from_tensors(one, one_tensors).unwrap();

    let lr: Tensor<f64> = rand_unit(&[1, 1, 4, 4], 9);
    let state = random_state(&one, 4, 4, 10);
    assert_eq!(misr_forward(&two_params, &lr, &state).unwrap(), misr_forward(&one_params, &lr, &state).unwrap());
}

#[test]
fn fully_convolutional_output_sizes() {
    for c in [NetworkConfig::tiny(2), NetworkConfig::tiny(4)] {
        let params: Parameters<f32> = init_network(&c, 11).unwrap();
        for (h, w) in [(8, 8), (16, 12), (20, 20)] {
            let lr: Tensor<f32> = rand_unit(&[1, 1, h, w], 12);
            let state = init_state(&c, &lr).unwrap();
            let (sr, next) = cell_forward(&params, &lr, &state).unwrap();
            assert_eq!(sr.shape(), &[1, 1, h * c.scale, w * c.scale]);
            assert_eq!(next.hidden.shape(), &[1, c.misr_channels, h, w]);
            let sisr = sisr_forward(&params, &lr).unwrap();
            assert_eq!(sisr.shape(), &[1, c.fusion_channels, h * c.scale, w * c.scale]);
        }
    }
    let full: Parameters<f32> = init_network(&NetworkConfig::default(), 13).unwrap();
    let lr: Tensor<f32> = rand_unit(&[1, 1, 8, 8], 14);
    assert_eq!(sisr_forward(&full, &lr).unwrap().shape(), &[1, 32, 32, 32]);
}

#[test]
fn state_shape_mismatch_is_rejected() {
    let c = NetworkConfig::tiny(2);
    let params: Parameters<f32> = init_network(&c, 0).unwrap();
    let lr: Tensor<f32> = rand_unit(&[1, 1, 8, 8], 1);
    let mut state = init_state(&c, &lr).unwrap();
    state.prev_sr = Tensor::zeros(&[1, 1, 8, 8]).unwrap();
    assert!(cell_forward(&params, &lr, &state).is_err());
    assert!(unroll::<f32>(&params, &[]).is_err());
}

#[test]
fn cell_is_pure() {
    let c = NetworkConfig::tiny(4);
    let params: Parameters<f32> = init_network(&c, 15).unwrap();
    let lr: Tensor<f32> = rand_unit(&[1, 1, 8, 8], 16);
    let state = init_state(&c, &lr).unwrap();
    let first = cell_forward(&params, &lr, &state).unwrap();
    let second = cell_forward(&params, &lr, &state).unwrap();
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
}

#[test]
fn unroll_returns_one_frame_per_input() {
    let c = NetworkConfig::tiny(2);
    let params: Parameters<f32> = init_network(&c, 17).unwrap();
    let frames: Vec<Tensor<f32>> = (0..10).map(|i| rand_unit(&[1, 1, 8, 8], 100 + i)).collect();
    for len in 1..=10 {
        let out = unroll(&params, &frames[..len]).unwrap();
        assert_eq!(out.len(), len);
        assert!(out.iter().all(|f| f.shape() == [1, 1, 16, 16] && f.all_finite()));
    }
    // the first step depends only on the first frame
    let a = unroll(&params, &frames[..3]).unwrap();
    let b = unroll(&params, &frames[..1]).unwrap();
    assert_eq!(a[0], b[0]);
}

#[test]
fn static_sequence_stays_finite() {
    let c = NetworkConfig::tiny(4);
    let params: Parameters<f32> = init_network(&c, 18).unwrap();
    let frame: Tensor<f32> = rand_unit(&[1, 1, 8, 8], 19);
    let out = unroll(&params, &vec![frame; 10]).unwrap();
    for pair in out.windows(2) {
        let d = pair[0].max_abs_diff(&pair[1]).unwrap();
        assert!(d.is_finite());
    }
}
