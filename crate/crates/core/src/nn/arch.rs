//! The command-conditioned driving network: an image module, a command
//! module and a control module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{same_padding, Graph, Mode, ParamStore, Var};
use super::tensor::Tensor;
use super::NnError;
use crate::datakit::fnv1a64;

/// Published parameter count of the PilotNet baseline.
pub const PILOTNET_PARAMS: usize = 9_600_000;
/// Published parameter count of the CIL baseline.
pub const CIL_PARAMS: usize = 10_700_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    pub image_dense: Vec<usize>,
    pub command_dim: usize,
    pub command_hidden: Vec<usize>,
    /// Command features are concatenated again before every layer after the first.
    pub control_hidden: Vec<usize>,
    pub outputs: usize,
    pub conv_dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for PolicyArchitecture {
    fn default() -> Self {
        let conv = [(32, 5), (64, 3), (96, 3), (128, 3), (256, 3)]
            .into_iter()
            .map(|(filters, kernel)| ConvSpec {
                filters,
                kernel,
                stride: 2,
            })
            .collect();
        PolicyArchitecture {
            height: 96,
            width: 256,
            channels: 3,
            conv,
            image_dense: vec![128, 64],
            command_dim: 3,
            command_hidden: vec![16, 16],
            control_hidden: vec![64, 16],
            outputs: 2,
            conv_dropout: 0.2,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl PolicyArchitecture {
    pub fn with_input(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Two convolutions and one image dense layer, for gradient checks.
    pub fn tiny() -> Self {
        PolicyArchitecture {
            height: 12,
            width: 16,
            channels: 3,
            conv: vec![
                ConvSpec {
                    filters: 4,
                    kernel: 3,
                    stride: 2,
                },
                ConvSpec {
                    filters: 6,
                    kernel: 3,
                    stride: 2,
                },
            ],
            image_dense: vec![8],
            command_dim: 3,
            command_hidden: vec![4, 4],
            control_hidden: vec![6, 4],
            outputs: 2,
            conv_dropout: 0.2,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }

    /// `(height, width, channels)` after each convolution.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        self.conv
            .iter()
            .map(|c| {
                h = same_padding(h, c.kernel, c.stride).0;
                w = same_padding(w, c.kernel, c.stride).0;
                (h, w, c.filters)
            })
            .collect()
    }

    pub fn flatten_len(&self) -> usize {
        self.conv_shapes()
            .last()
            .map(|&(h, w, c)| h * w * c)
            .unwrap_or(self.height * self.width * self.channels)
    }

    pub fn image_features(&self) -> usize {
        self.image_dense.last().copied().unwrap_or_else(|| self.flatten_len())
    }

    pub fn command_features(&self) -> usize {
        self.command_hidden.last().copied().unwrap_or(self.command_dim)
    }

    /// Dense layers as `(name, in, out)` in evaluation order.
    fn dense_layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut d = self.flatten_len();
        for (i, &u) in self.image_dense.iter().enumerate() {
            out.push((format!("image_fc{i}"), d, u));
            d = u;
        }
        let mut c = self.command_dim;
        for (i, &u) in self.command_hidden.iter().enumerate() {
            out.push((format!("command_fc{i}"), c, u));
            c = u;
        }
        let cf = self.command_features();
        let mut d = self.image_features() + cf;
        for (i, &u) in self.control_hidden.iter().enumerate() {
            if i > 0 {
                d += cf;
            }
            out.push((format!("control_fc{i}"), d, u));
            d = u;
        }
        out.push(("output".to_string(), d, self.outputs));
        out
    }

    /// Multiply-accumulates for one forward pass of one sample.
    pub fn macs(&self) -> u64 {
        let mut cin = self.channels;
        let mut total = 0u64;
        for (c, &(h, w, f)) in self.conv.iter().zip(&self.conv_shapes()) {
            total += (c.kernel * c.kernel * cin * f * h * w) as u64;
            cin = f;
        }
        total + self.dense_layers().iter().map(|(_, i, o)| (i * o) as u64).sum::<u64>()
    }

    /// Text that identifies the architecture in weight files.
    pub fn canonical(&self) -> String {
        let conv: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}k{}s{}", c.filters, c.kernel, c.stride))
            .collect();
        format!(
            "obnet;in={}x{}x{};conv={};img={:?};cmd={}:{:?};ctl={:?};out={};eps={};mom={}",
            self.height,
            self.width,
            self.channels,
            conv.join(","),
            self.image_dense,
            self.command_dim,
            self.command_hidden,
            self.control_hidden,
            self.outputs,
            self.bn_eps,
            self.bn_momentum
        )
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = self.height == 0
            || self.width == 0
            || self.channels == 0
            || self.outputs != 2
            || self.command_dim == 0
            || self.control_hidden.is_empty()
            || self.conv.iter().any(|c| c.filters == 0 || c.kernel == 0 || c.stride == 0)
            || self.image_dense.iter().chain(&self.command_hidden).chain(&self.control_hidden).any(|&u| u == 0)
            || !(0.0..1.0).contains(&self.conv_dropout);
        if bad {
            return Err(NnError::Shape(format!("invalid architecture {}", self.canonical())));
        }
        Ok(())
    }
}

/// Weights, biases and batch-norm affine terms. Running statistics are not counted.
pub fn count_params(arch: &PolicyArchitecture) -> usize {
    let mut cin = arch.channels;
    let mut total = 0;
    for c in &arch.conv {
        total += c.kernel * c.kernel * cin * c.filters + c.filters + 2 * c.filters;
        cin = c.filters;
    }
    total + arch.dense_layers().iter().map(|(_, i, o)| i * o + o).sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
struct ConvSlots {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseSlots {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<ConvSlots>,
    image: Vec<DenseSlots>,
    command: Vec<DenseSlots>,
    control: Vec<DenseSlots>,
    output: DenseSlots,
}

/// Parameter names and shapes in storage order.
fn param_specs(arch: &PolicyArchitecture) -> Vec<(String, Vec<usize>, bool)> {
    let mut specs = Vec::new();
    let mut cin = arch.channels;
    for (i, c) in arch.conv.iter().enumerate() {
        specs.push((format!("conv{i}.w"), vec![c.kernel, c.kernel, cin, c.filters], true));
        specs.push((format!("conv{i}.b"), vec![c.filters], true));
        specs.push((format!("bn{i}.gamma"), vec![c.filters], true));
        specs.push((format!("bn{i}.beta"), vec![c.filters], true));
        specs.push((format!("bn{i}.mean"), vec![c.filters], false));
        specs.push((format!("bn{i}.var"), vec![c.filters], false));
        cin = c.filters;
    }
    for (name, i, o) in arch.dense_layers() {
        specs.push((format!("{name}.w"), vec![i, o], true));
        specs.push((format!("{name}.b"), vec![o], true));
    }
    specs
}

fn layout(arch: &PolicyArchitecture) -> Layout {
    let mut next = 0;
    let mut take = || {
        next += 1;
        next - 1
    };
    let conv = arch
        .conv
        .iter()
        .map(|_| ConvSlots {
            w: take(),
            b: take(),
            gamma: take(),
            beta: take(),
            mean: take(),
            var: take(),
        })
        .collect();
    let mut dense = |n: usize| -> Vec<DenseSlots> { (0..n).map(|_| DenseSlots { w: take(), b: take() }).collect() };
    let image = dense(arch.image_dense.len());
    let command = dense(arch.command_hidden.len());
    let control = dense(arch.control_hidden.len());
    let output = dense(1)[0];
    Layout {
        conv,
        image,
        command,
        control,
        output,
    }
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: PolicyArchitecture,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Network<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(arch: PolicyArchitecture, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, trainable) in param_specs(&arch) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".w") {
                let (fan_in, fan_out) = if shape.len() == 4 {
                    let rf = shape[0] * shape[1];
                    (rf * shape[2], rf * shape[3])
                } else {
                    (shape[0], shape[1])
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::c(rng.gen_range(-limit..limit))).collect()
            } else if name.ends_with(".gamma") || name.ends_with(".var") {
                vec![T::one(); n]
            } else {
                vec![T::zero(); n]
            };
            params.push(name, Tensor { shape, data }, trainable);
        }
        let layout = layout(&arch);
        Ok(Network { arch, params, layout })
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_params(arch: PolicyArchitecture, params: ParamStore<T>) -> Result<Self, NnError> {
        arch.validate()?;
        let specs = param_specs(&arch);
        if specs.len() != params.len() {
            return Err(NnError::Shape(format!("expected {} tensors, got {}", specs.len(), params.len())));
        }
        for ((name, shape, _), p) in specs.iter().zip(&params.params) {
            if *name != p.name || *shape != p.value.shape {
                return Err(NnError::Shape(format!("expected {name} {shape:?}, got {} {:?}", p.name, p.value.shape)));
            }
        }
        let layout = layout(&arch);
        Ok(Network { arch, params, layout })
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Records the network on a graph built over `self.params`.
    /// `images` is `[n, h, w, c]`, `commands` is `[n, command_dim]`.
    pub fn build(&self, g: &mut Graph<'_, T>, images: Var, commands: Var) -> Result<Var, NnError> {
        let a = &self.arch;
        let shape = &g.value(images).shape;
        if shape.len() != 4 || shape[1..] != [a.height, a.width, a.channels] {
            return Err(NnError::Shape(format!(
                "image batch {:?}, network expects [n, {}, {}, {}]",
                shape, a.height, a.width, a.channels
            )));
        }
        let cshape = &g.value(commands).shape;
        if cshape.len() != 2 || cshape[0] != shape[0] || cshape[1] != a.command_dim {
            return Err(NnError::Shape(format!("command batch {cshape:?} for {} images", shape[0])));
        }
        let mut x = images;
        for (c, s) in a.conv.iter().zip(&self.layout.conv) {
            x = g.conv2d(x, s.w, s.b, c.stride)?;
            x = g.relu(x);
            x = g.batch_norm(x, s.gamma, s.beta, s.mean, s.var, a.bn_eps, a.bn_momentum)?;
            x = g.dropout(x, a.conv_dropout);
        }
        x = g.flatten(x)?;
        for s in &self.layout.image {
            x = g.dense(x, s.w, s.b)?;
            x = g.relu(x);
        }
        let mut c = commands;
        for s in &self.layout.command {
            c = g.dense(c, s.w, s.b)?;
            c = g.relu(c);
        }
        let mut h = g.concat(x, c)?;
        for (i, s) in self.layout.control.iter().enumerate() {
            if i > 0 {
                h = g.concat(h, c)?;
            }
            h = g.dense(h, s.w, s.b)?;
            h = g.relu(h);
        }
        g.dense(h, self.layout.output.w, self.layout.output.b)
    }

    /// Forward pass returning `[n, 2]` stored-form actions. Training mode
    /// uses batch statistics but does not update running statistics.
    pub fn forward(&self, images: Tensor<T>, commands: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut g = Graph::new(&self.params, mode);
        let i = g.input(images, false);
        let c = g.input(commands, false);
        let out = self.build(&mut g, i, c)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let a = PolicyArchitecture::default();
        let s = a.conv_shapes();
        let widths: Vec<usize> = s.iter().map(|x| x.1).collect();
        let heights: Vec<usize> = s.iter().map(|x| x.0).collect();
        assert_eq!(widths, [128, 64, 32, 16, 8]);
        assert_eq!(heights, [48, 24, 12, 6, 3]);
        assert_eq!(a.flatten_len(), 6144);
    }

    #[test]
    fn store_matches_closed_form() {
        for a in [PolicyArchitecture::default(), PolicyArchitecture::tiny(), PolicyArchitecture::default().with_input(128, 48)] {
            let n = Network::<f32>::init(a.clone(), 1).unwrap();
            assert_eq!(n.param_count(), count_params(&a));
        }
    }

    #[test]
    fn canonical_depends_on_input() {
        let a = PolicyArchitecture::default();
        assert_ne!(a.hash(), a.clone().with_input(128, 48).hash());
    }
}
