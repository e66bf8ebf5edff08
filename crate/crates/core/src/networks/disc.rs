use serde::{Deserialize, Serialize};

use super::{check_widths, kaiming_conv, zeros};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Feeds, Graph, NodeId, ParamNodes, ParamSet, Scalar, Tensor};

/// Fully convolutional output-space discriminator: five stride-2 4x4
/// convolutions, leaky ReLU between them, raw score map at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub slope: f64,
}

impl DiscSpec {
    pub const LAYERS: usize = 5;
    pub const MIN_INPUT: usize = 32;

    pub fn new(in_channels: usize) -> Self {
        DiscSpec {
            in_channels,
            widths: vec![8, 16, 32, 64, 1],
            kernel: 4,
            stride: 2,
            padding: 1,
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_widths("disc.widths", &self.widths)?;
        if self.widths.len() != Self::LAYERS {
            return Err(Error::invalid(
                "disc.widths",
                format!("{} layers, expected {}", self.widths.len(), Self::LAYERS),
            ));
        }
        if self.in_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid("disc", "channels, kernel and stride must be positive"));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::invalid("disc.slope", format!("{}", self.slope)));
        }
        Ok(())
    }

    /// Layer parameters `layer{i}.w` / `layer{i}.b`, i = 0..5.
    pub fn init(&self, seed: u64) -> Result<ParamSet<f32>> {
        self.validate()?;
        let mut rng = stream_rng(seed, "discriminator");
        let gain = (2.0 / (1.0 + self.slope * self.slope)).sqrt();
        let mut p = ParamSet::new("discriminator");
        let mut inp = self.in_channels;
        for (i, &w) in self.widths.iter().enumerate() {
            p.push(&format!("layer{i}.w"), kaiming_conv(&mut rng, w, inp, self.kernel, gain));
            p.push(&format!("layer{i}.b"), zeros(&[w]));
            inp = w;
        }
        Ok(p)
    }

    pub fn declare(&self, g: &mut Graph, prefix: &str) -> Result<ParamNodes> {
        Ok(ParamNodes::declare::<f32>(g, prefix, &self.init(0)?))
    }

    /// Geometry of every layer for a `h x w` input.
    pub fn geometry(&self, h: usize, w: usize) -> Result<Vec<ConvGeom>> {
        self.validate()?;
        if h < Self::MIN_INPUT || w < Self::MIN_INPUT {
            return Err(Error::invalid(
                "discriminator input",
                format!("{h}x{w} is below {0}x{0}; cannot stride down five times", Self::MIN_INPUT),
            ));
        }
        let (mut h, mut w, mut c) = (h, w, self.in_channels);
        let mut out = Vec::with_capacity(Self::LAYERS);
        for &co in &self.widths {
            let g = ConvGeom {
                in_channels: c,
                height: h,
                width: w,
                out_channels: co,
                kernel_h: self.kernel,
                kernel_w: self.kernel,
                stride: self.stride,
                padding: self.padding,
            };
            (h, w, c) = (g.out_height(), g.out_width(), co);
            out.push(g);
        }
        Ok(out)
    }

    /// Raw (pre-sigmoid) score map for probability maps `x`.
    pub fn apply(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::invalid(
                "discriminator input",
                format!("{s:?}, expected [n, {}, h, w]", self.in_channels),
            ));
        }
        self.geometry(s[2], s[3])?;
        let mut h = x;
        for i in 0..Self::LAYERS {
            let w = p.id(&format!("layer{i}.w"))?;
            let b = p.id(&format!("layer{i}.b"))?;
            h = g.conv2d(h, w, Some(b), self.stride, self.padding)?;
            if i + 1 < Self::LAYERS {
                h = g.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }
}

/// Stand-alone discriminator graph for a fixed input shape.
#[derive(Clone, Debug)]
pub struct DiscGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub output: NodeId,
    pub params: ParamNodes,
}

impl DiscGraph {
    pub fn new(spec: &DiscSpec, batch: usize, h: usize, w: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let params = spec.declare(&mut graph, "disc")?;
        let input = graph.input("probs", &[batch, spec.in_channels, h, w]);
        let output = spec.apply(&mut graph, &params, input)?;
        Ok(DiscGraph {
            graph,
            input,
            output,
            params,
        })
    }

    pub fn run<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut feeds = Feeds::new();
        self.params.bind(&mut feeds, params)?;
        feeds.insert(self.input, x);
        Ok(self.graph.forward(&feeds)?.get(self.output).clone())
    }
}

pub fn build_discriminator(spec: &DiscSpec, seed: u64, batch: usize, h: usize, w: usize) -> Result<(ParamSet<f32>, DiscGraph)> {
    Ok((spec.init(seed)?, DiscGraph::new(spec, batch, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Op;

    #[test]
    fn sixty_four_input_gives_two_by_two_map() {
        let spec = DiscSpec::new(4);
        let (_, g) = build_discriminator(&spec, 0, 1, 64, 64).unwrap();
        assert_eq!(g.graph.shape(g.output), &[1, 1, 2, 2]);
        let (_, g) = build_discriminator(&spec, 0, 2, 32, 32).unwrap();
        assert_eq!(g.graph.shape(g.output), &[2, 1, 1, 1]);
    }

    #[test]
    fn small_inputs_are_rejected() {
        assert!(build_discriminator(&DiscSpec::new(4), 0, 1, 31, 64).is_err());
    }

    #[test]
    fn no_activation_after_last_layer() {
        let (_, g) = build_discriminator(&DiscSpec::new(4), 0, 1, 32, 32).unwrap();
        assert!(matches!(g.graph.node(g.output).op, Op::Conv2d { .. }));
        let lrelus = g.graph.nodes().filter(|(_, n)| matches!(n.op, Op::LeakyRelu { .. })).count();
        assert_eq!(lrelus, 4);
    }

    #[test]
    fn output_is_unbounded() {
        let spec = DiscSpec::new(4);
        let mut p = spec.init(3).unwrap();
        p.set("layer4.b", Tensor::new(&[1], vec![25.0]).unwrap()).unwrap();
        let g = DiscGraph::new(&spec, 1, 32, 32).unwrap();
        let out = g.run(&p, &Tensor::full(&[1, 4, 32, 32], 0.25f32)).unwrap();
        assert!(out.data()[0] > 1.0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = DiscSpec::new(4);
        assert_eq!(spec.init(11).unwrap(), spec.init(11).unwrap());
    }

    #[test]
    fn layer_count_is_enforced() {
        let mut spec = DiscSpec::new(4);
        spec.widths = vec![8, 16, 1];
        assert!(spec.init(0).is_err());
    }
}
