use serde::{Deserialize, Serialize};

use super::{check_widths, kaiming_conv, zeros};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Feeds, Graph, NodeId, ParamNodes, ParamSet, Scalar, Tensor};

/// Image-to-image style generator: 3x3 conv + leaky ReLU blocks at full
/// resolution, a skip concatenation with the input, and a 1x1 output
/// conv. Residual mode adds the output to the input and clamps to [0, 1];
/// its output conv starts at zero so the generator begins as the identity.
/// Otherwise the output passes through a sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleGenSpec {
    pub channels: usize,
    pub widths: Vec<usize>,
    pub residual: bool,
}

impl Default for StyleGenSpec {
    fn default() -> Self {
        StyleGenSpec {
            channels: 3,
            widths: vec![16, 16],
            residual: true,
        }
    }
}

const SLOPE: f64 = 0.2;

impl StyleGenSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths("generator.widths", &self.widths)?;
        if self.channels == 0 {
            return Err(Error::invalid("generator.channels", "must be positive"));
        }
        Ok(())
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet<f32>> {
        self.validate()?;
        let mut rng = stream_rng(seed, "generator");
        let mut p = ParamSet::new("generator");
        let mut inp = self.channels;
        for (i, &w) in self.widths.iter().enumerate() {
            p.push(&format!("conv{i}.w"), kaiming_conv(&mut rng, w, inp, 3, 2f64.sqrt()));
            p.push(&format!("conv{i}.b"), zeros(&[w]));
            inp = w;
        }
        let out_in = inp + self.channels;
        let out_w = if self.residual {
            zeros(&[self.channels, out_in, 1, 1])
        } else {
            kaiming_conv(&mut rng, self.channels, out_in, 1, 1.0)
        };
        p.push("out.w", out_w);
        p.push("out.b", zeros(&[self.channels]));
        Ok(p)
    }

    pub fn declare(&self, g: &mut Graph, prefix: &str) -> Result<ParamNodes> {
        Ok(ParamNodes::declare::<f32>(g, prefix, &self.init(0)?))
    }

    pub fn apply(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::invalid("generator input", format!("{s:?}, expected [n, {}, h, w]", self.channels)));
        }
        let mut h = x;
        for i in 0..self.widths.len() {
            let c = g.conv2d(h, p.id(&format!("conv{i}.w"))?, Some(p.id(&format!("conv{i}.b"))?), 1, 1)?;
            h = g.leaky_relu(c, SLOPE);
        }
        let cat = g.concat(&[h, x], 1)?;
        let r = g.conv2d(cat, p.id("out.w")?, Some(p.id("out.b")?), 1, 0)?;
        Ok(if self.residual {
            let y = g.add(x, r)?;
            g.clamp(y, 0.0, 1.0)
        } else {
            g.sigmoid(r)
        })
    }
}

#[derive(Clone, Debug)]
pub struct StyleGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub output: NodeId,
    pub params: ParamNodes,
}

impl StyleGraph {
    pub fn new(spec: &StyleGenSpec, batch: usize, h: usize, w: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let params = spec.declare(&mut graph, "gen")?;
        let input = graph.input("image", &[batch, spec.channels, h, w]);
        let output = spec.apply(&mut graph, &params, input)?;
        Ok(StyleGraph {
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

pub fn build_style_generator(
    spec: &StyleGenSpec,
    seed: u64,
    batch: usize,
    h: usize,
    w: usize,
) -> Result<(ParamSet<f32>, StyleGraph)> {
    Ok((spec.init(seed)?, StyleGraph::new(spec, batch, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[1, 3, h, w], (0..3 * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn residual_init_is_exact_identity() {
        let spec = StyleGenSpec::default();
        let (p, g) = build_style_generator(&spec, 4, 1, 64, 64).unwrap();
        let x = random_image(64, 64, 1);
        let y = g.run(&p, &x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 64, 64]);
        assert_eq!(y, x);
    }

    #[test]
    fn output_stays_in_unit_range() {
        for residual in [true, false] {
            let spec = StyleGenSpec { residual, ..Default::default() };
            let mut p = spec.init(8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let w: Vec<f32> = (0..3 * 19).map(|_| rng.random_range(-3.0..3.0)).collect();
            p.set("out.w", Tensor::new(&[3, 19, 1, 1], w).unwrap()).unwrap();
            let g = StyleGraph::new(&spec, 1, 32, 32).unwrap();
            let y = g.run(&p, &random_image(32, 32, 3)).unwrap();
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_widths_are_rejected() {
        let spec = StyleGenSpec {
            widths: vec![],
            ..Default::default()
        };
        assert!(spec.init(0).is_err());
    }
}
