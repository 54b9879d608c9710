//! The recurrent super-resolution cell.
//!
//! One cell step combines four components:
//!
//! * **MISR**: the LR frame, the previous hidden state and the previous SR
//!   output (folded to LR resolution with space-to-depth) are concatenated and
//!   passed through a residual stack; its output is the new hidden state and,
//!   after a transposed convolution, an HR feature map.
//! * **SISR**: a compact back-projection network on the LR frame alone.
//! * **Residual**: a residual stack on `misr - sisr` at HR resolution.
//! * **Reconstruction**: one linear 3x3 convolution of `residual + sisr`.
//!
//! [`topology`] is the single description of every parameterized layer;
//! initialization, the forward pass and the complexity counter all read it.

mod cell;
mod config;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::{seed, Error, Result, Scalar, Tensor};

pub use cell::{
    attach, cell_forward, cell_forward_on_tape, init_state, misr_forward, misr_forward_on_tape, sisr_forward,
    sisr_forward_on_tape, unroll, unroll_on_tape, CellState, NetVars, StateVars,
};
pub use config::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    Low,
    High,
}

/// One convolution (plus optional PReLU) of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub path: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input_res: Resolution,
    /// Followed by a PReLU with one learnable slope.
    pub activation: bool,
}

impl LayerSpec {
    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.path)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.path)
    }

    pub fn slope_name(&self) -> String {
        format!("{}.act.slope", self.path)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    pub fn output_res(&self) -> Resolution {
        match (self.kind, self.stride) {
            (_, 1) => self.input_res,
            (LayerKind::Conv, _) => Resolution::Low,
            (LayerKind::ConvTranspose, _) => Resolution::High,
        }
    }

    /// Weights and bias, excluding the activation slope.
    pub fn conv_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// An elementwise add or subtract in the graph, for FLOP accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementwiseSpec {
    pub path: String,
    pub channels: usize,
    pub res: Resolution,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub layers: Vec<LayerSpec>,
    pub elementwise: Vec<ElementwiseSpec>,
}

struct Builder {
    geometry: (usize, usize, usize),
    topo: Topology,
}

impl Builder {
    fn layer(&mut self, path: String, kind: LayerKind, cin: usize, cout: usize, k: usize, res: Resolution, act: bool) {
        let (kernel, stride, padding) = match (kind, k) {
            (LayerKind::Conv, 1) => (1, 1, 0),
            (LayerKind::Conv, 3) => (3, 1, 1),
            // projection kernels
            _ => self.geometry,
        };
        self.topo.layers.push(LayerSpec {
            path,
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            input_res: res,
            activation: act,
        });
    }

    fn conv3(&mut self, path: String, cin: usize, cout: usize, res: Resolution, act: bool) {
        self.layer(path, LayerKind::Conv, cin, cout, 3, res, act);
    }

    fn elementwise(&mut self, path: String, channels: usize, res: Resolution) {
        self.topo.elementwise.push(ElementwiseSpec { path, channels, res });
    }

    fn residual_blocks(&mut self, prefix: &str, channels: usize, count: usize, res: Resolution) {
        for j in 0..count {
            self.conv3(format!("{prefix}.block{j}.conv1"), channels, channels, res, true);
            self.conv3(format!("{prefix}.block{j}.conv2"), channels, channels, res, false);
            self.elementwise(format!("{prefix}.block{j}.skip"), channels, res);
        }
    }

    fn up_projection(&mut self, prefix: &str, f: usize) {
        use LayerKind::*;
        use Resolution::*;
        self.layer(format!("{prefix}.up1"), ConvTranspose, f, f, 0, Low, true);
        self.layer(format!("{prefix}.down"), Conv, f, f, 0, High, true);
        self.elementwise(format!("{prefix}.error"), f, Low);
        self.layer(format!("{prefix}.up2"), ConvTranspose, f, f, 0, Low, true);
        self.elementwise(format!("{prefix}.sum"), f, High);
    }

    fn down_projection(&mut self, prefix: &str, f: usize) {
        use LayerKind::*;
        use Resolution::*;
        self.layer(format!("{prefix}.down1"), Conv, f, f, 0, High, true);
        self.layer(format!("{prefix}.up"), ConvTranspose, f, f, 0, Low, true);
        self.elementwise(format!("{prefix}.error"), f, High);
        self.layer(format!("{prefix}.down2"), Conv, f, f, 0, High, true);
        self.elementwise(format!("{prefix}.sum"), f, Low);
    }
}

/// Every layer of the network for `config`, in execution order.
pub fn topology(config: &NetworkConfig) -> Result<Topology> {
    config.validate()?;
    use LayerKind::*;
    use Resolution::*;
    let c = config;
    let mut b = Builder {
        geometry: c.projection_geometry(),
        topo: Topology {
            layers: Vec::new(),
            elementwise: Vec::new(),
        },
    };

    // SISR: compact back-projection network
    b.conv3("sisr.feat0".into(), 1, c.sisr_feat0, Low, true);
    b.layer("sisr.feat1".into(), Conv, c.sisr_feat0, c.sisr_feat, 1, Low, true);
    for i in 0..c.sisr_stages {
        b.up_projection(&format!("sisr.up{i}"), c.sisr_feat);
        b.down_projection(&format!("sisr.down{i}"), c.sisr_feat);
    }
    b.up_projection(&format!("sisr.up{}", c.sisr_stages), c.sisr_feat);
    b.layer(
        "sisr.fuse".into(),
        Conv,
        (c.sisr_stages + 1) * c.sisr_feat,
        c.fusion_channels,
        1,
        High,
        true,
    );

    // MISR
    let misr_in = 1 + c.misr_channels + c.scale * c.scale;
    b.conv3("misr.head".into(), misr_in, c.misr_channels, Low, true);
    b.residual_blocks("misr", c.misr_channels, c.misr_blocks, Low);
    b.layer("misr.up".into(), ConvTranspose, c.misr_channels, c.fusion_channels, 0, Low, true);

    // fusion and residual refinement
    b.elementwise("cell.difference".into(), c.fusion_channels, High);
    b.conv3("residual.head".into(), c.fusion_channels, c.residual_channels, High, true);
    b.residual_blocks("residual", c.residual_channels, c.residual_blocks, High);
    b.conv3("residual.tail".into(), c.residual_channels, c.fusion_channels, High, true);
    b.elementwise("cell.fused".into(), c.fusion_channels, High);

    b.conv3("reconstruction".into(), c.fusion_channels, 1, High, false);
    Ok(b.topo)
}

/// Named parameter tensors of a network, together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    config: NetworkConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Builds a parameter set, checking names and shapes against the topology.
    pub fn from_tensors(config: NetworkConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let expected = expected_shapes(&config)?;
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => {
                    return Err(Error::Parameter {
                        name: name.clone(),
                        reason: "missing".into(),
                    })
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Parameter {
                        name: name.clone(),
                        reason: format!("expected shape {:?}, found {:?}", shape, t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Parameter {
                name: extra.clone(),
                reason: "not part of this network configuration".into(),
            });
        }
        Ok(Parameters { config, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::Parameter {
            name: name.into(),
            reason: "unknown parameter".into(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::Parameter {
            name: name.into(),
            reason: "unknown parameter".into(),
        })
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }
}

fn expected_shapes(config: &NetworkConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut shapes = BTreeMap::new();
    for layer in topology(config)?.layers {
        shapes.insert(layer.weight_name(), layer.weight_shape().to_vec());
        shapes.insert(layer.bias_name(), alloc::vec![layer.out_channels]);
        if layer.activation {
            shapes.insert(layer.slope_name(), alloc::vec![1]);
        }
    }
    Ok(shapes)
}

pub const INITIAL_PRELU_SLOPE: f64 = 0.25;

/// Fan-in used to scale the initial weights of a layer: the number of input
/// values contributing to one output value.
pub fn init_fan_in(layer: &LayerSpec) -> usize {
    let taps = layer.kernel * layer.kernel;
    match layer.kind {
        LayerKind::Conv => layer.in_channels * taps,
        LayerKind::ConvTranspose => (layer.in_channels * taps / (layer.stride * layer.stride)).max(1),
    }
}

/// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, zero biases, PReLU
/// slopes 0.25. Deterministic for a given seed.
pub fn init_network<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<Parameters<T>> {
    let topo = topology(config)?;
    let mut tensors = BTreeMap::new();
    for (index, layer) in topo.layers.iter().enumerate() {
        let mut rng = seed::rng_for(seed, index as u64);
        let bound = 1.0 / libm::sqrt(init_fan_in(layer) as f64);
        let weight = Tensor::from_fn(&layer.weight_shape(), |_| T::from_f64(rng.gen_range(-bound..bound)))?;
        tensors.insert(layer.weight_name(), weight);
        tensors.insert(layer.bias_name(), Tensor::zeros(&[layer.out_channels])?);
        if layer.activation {
            tensors.insert(layer.slope_name(), Tensor::scalar(T::from_f64(INITIAL_PRELU_SLOPE)));
        }
    }
    Ok(Parameters {
        config: *config,
        tensors,
    })
}
