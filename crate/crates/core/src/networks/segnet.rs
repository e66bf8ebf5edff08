use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_widths, kaiming_conv, zeros};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::kernels::resize_bilinear;
use crate::tensor::{Feeds, Graph, NodeId, ParamNodes, ParamSet, Scalar, Tensor};

/// Desk-scale fully convolutional segmenter: `downsample` stride-2 3x3
/// convolutions, then stride-1 3x3 convolutions for the remaining widths
/// (ReLU after each), a 1x1 classifier and nearest-neighbour upsampling
/// back to the input resolution. The default `{16, 32, 32}` plus the
/// classifier gives two stride-2 and two full-resolution layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegNetSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub class_count: usize,
    pub downsample: usize,
}

impl Default for SegNetSpec {
    fn default() -> Self {
        SegNetSpec {
            in_channels: 3,
            widths: vec![16, 32, 32],
            class_count: 4,
            downsample: 2,
        }
    }
}

/// Nodes produced by one application of the segmenter.
#[derive(Clone, Copy, Debug)]
pub struct SegOutputs {
    /// `[n, C, h, w]` at input resolution.
    pub logits: NodeId,
    /// Last feature layer before the classifier (the perceptual tap).
    pub features: NodeId,
}

impl SegNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("class_count", format!("{} < 2", self.class_count)));
        }
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels", "must be positive"));
        }
        check_widths("widths", &self.widths)?;
        if self.downsample > self.widths.len() {
            return Err(Error::invalid(
                "downsample",
                format!("{} stride-2 layers but only {} conv layers", self.downsample, self.widths.len()),
            ));
        }
        Ok(())
    }

    pub fn scale_factor(&self) -> usize {
        1 << self.downsample
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = self.scale_factor();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::invalid("input size", format!("{h}x{w} must be a positive multiple of {f}")));
        }
        Ok(())
    }

    /// Parameters named `conv{i}.w`, `conv{i}.b`, `head.w`, `head.b`.
    /// Kaiming fan-in weights, zero biases, fully determined by `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamSet<f32>> {
        self.validate()?;
        let mut rng = stream_rng(seed, "segnet");
        let mut p = ParamSet::new("segnet");
        let mut inp = self.in_channels;
        for (i, &w) in self.widths.iter().enumerate() {
            p.push(&format!("conv{i}.w"), kaiming_conv(&mut rng, w, inp, 3, 2f64.sqrt()));
            p.push(&format!("conv{i}.b"), zeros(&[w]));
            inp = w;
        }
        p.push("head.w", kaiming_conv(&mut rng, self.class_count, inp, 1, 1.0));
        p.push("head.b", zeros(&[self.class_count]));
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        let mut inp = self.in_channels;
        let mut total = 0;
        for &w in &self.widths {
            total += w * inp * 9 + w;
            inp = w;
        }
        total + self.class_count * inp + self.class_count
    }

    pub fn declare(&self, g: &mut Graph, prefix: &str) -> Result<ParamNodes> {
        Ok(ParamNodes::declare::<f32>(g, prefix, &self.init(0)?))
    }

    /// Applies the network to image node `x` (`[n, in_channels, h, w]`).
    pub fn apply(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<SegOutputs> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::invalid("segnet input", format!("{s:?}, expected [n, {}, h, w]", self.in_channels)));
        }
        self.check_input(s[2], s[3])?;
        let mut h = x;
        for i in 0..self.widths.len() {
            let stride = if i < self.downsample { 2 } else { 1 };
            let c = g.conv2d(h, p.id(&format!("conv{i}.w"))?, Some(p.id(&format!("conv{i}.b"))?), stride, 1)?;
            h = g.relu(c);
        }
        // a 1x1 classifier commutes with nearest upsampling, so classify at
        // low resolution
        let low = g.conv2d(h, p.id("head.w")?, Some(p.id("head.b")?), 1, 0)?;
        let logits = if self.downsample > 0 {
            g.upsample(low, self.scale_factor())?
        } else {
            low
        };
        Ok(SegOutputs { logits, features: h })
    }
}

/// Stand-alone inference graph for a fixed input shape.
#[derive(Clone, Debug)]
pub struct SegGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
    pub features: NodeId,
    pub params: ParamNodes,
}

impl SegGraph {
    pub fn new(spec: &SegNetSpec, batch: usize, h: usize, w: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let params = spec.declare(&mut graph, "seg")?;
        let input = graph.input("image", &[batch, spec.in_channels, h, w]);
        let out = spec.apply(&mut graph, &params, input)?;
        let probs = graph.softmax(out.logits)?;
        Ok(SegGraph {
            graph,
            input,
            logits: out.logits,
            probs,
            features: out.features,
            params,
        })
    }

    /// Softmax maps `[n, C, h, w]` and last-layer features.
    pub fn run<T: Scalar>(&self, params: &ParamSet<T>, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut feeds = Feeds::new();
        self.params.bind(&mut feeds, params)?;
        feeds.insert(self.input, images);
        let vals = self.graph.forward(&feeds)?;
        Ok((vals.get(self.probs).clone(), vals.get(self.features).clone()))
    }
}

/// Builds the segmenter for `[batch, in_channels, h, w]` inputs.
pub fn build_segnet(spec: &SegNetSpec, seed: u64, batch: usize, h: usize, w: usize) -> Result<(ParamSet<f32>, SegGraph)> {
    Ok((spec.init(seed)?, SegGraph::new(spec, batch, h, w)?))
}

/// Per-pixel probabilities and hard labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[n, C, h, w]`.
    pub probs: Tensor<f32>,
    /// `n * h * w` class indices, argmax with ties to the lowest class.
    pub labels: Vec<u8>,
}

/// Argmax over axis 1 of `[n, C, h, w]`; ties go to the lowest index.
pub fn argmax_labels<T: Scalar>(probs: &Tensor<T>) -> Vec<u8> {
    let s = probs.shape();
    let (n, c, inner) = (s[0], s[1], s[2..].iter().product::<usize>());
    let d = probs.data();
    let mut out = Vec::with_capacity(n * inner);
    for b in 0..n {
        for px in 0..inner {
            let mut best = 0;
            for k in 1..c {
                if d[(b * c + k) * inner + px] > d[(b * c + best) * inner + px] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Inference front-end that caches one graph per input shape.
#[derive(Debug)]
pub struct Segmenter {
    spec: SegNetSpec,
    graphs: HashMap<(usize, usize, usize), SegGraph>,
}

impl Segmenter {
    pub fn new(spec: &SegNetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Segmenter {
            spec: spec.clone(),
            graphs: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &SegNetSpec {
        &self.spec
    }

    fn graph(&mut self, n: usize, h: usize, w: usize) -> Result<&SegGraph> {
        if !self.graphs.contains_key(&(n, h, w)) {
            let g = SegGraph::new(&self.spec, n, h, w)?;
            self.graphs.insert((n, h, w), g);
        }
        Ok(&self.graphs[&(n, h, w)])
    }

    fn image_dims(&self, images: &Tensor<f32>) -> Result<(usize, usize, usize)> {
        let s = images.shape();
        if s.len() != 4 || s[1] != self.spec.in_channels {
            return Err(Error::invalid("image", format!("{s:?}, expected [n, {}, h, w]", self.spec.in_channels)));
        }
        Ok((s[0], s[2], s[3]))
    }

    pub fn probs(&mut self, params: &ParamSet<f32>, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, h, w) = self.image_dims(images)?;
        Ok(self.graph(n, h, w)?.run(params, images)?.0)
    }

    pub fn features(&mut self, params: &ParamSet<f32>, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, h, w) = self.image_dims(images)?;
        Ok(self.graph(n, h, w)?.run(params, images)?.1)
    }

    pub fn predict(&mut self, params: &ParamSet<f32>, images: &Tensor<f32>) -> Result<Prediction> {
        let probs = self.probs(params, images)?;
        let labels = argmax_labels(&probs);
        Ok(Prediction { probs, labels })
    }

    /// Averages softmax maps predicted on bilinearly rescaled copies of the
    /// input, each resampled back to the native resolution. Scaled sizes
    /// are rounded to the network's stride multiple.
    pub fn multi_scale(&mut self, params: &ParamSet<f32>, images: &Tensor<f32>, scales: &[f64]) -> Result<Tensor<f32>> {
        if scales.is_empty() {
            return Err(Error::invalid("scales", "empty"));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid("scales", format!("{s} is not positive")));
        }
        let (n, h, w) = self.image_dims(images)?;
        let c = self.spec.class_count;
        let f = self.spec.scale_factor();
        let mut acc = vec![0f32; n * c * h * w];
        for &s in scales {
            let sh = ((h as f64 * s / f as f64).round() as usize).max(1) * f;
            let sw = ((w as f64 * s / f as f64).round() as usize).max(1) * f;
            let probs = if (sh, sw) == (h, w) {
                self.probs(params, images)?
            } else {
                let mut scaled = vec![0f32; n * self.spec.in_channels * sh * sw];
                resize_bilinear(n * self.spec.in_channels, h, w, sh, sw, images.data(), &mut scaled);
                let scaled = Tensor::new(&[n, self.spec.in_channels, sh, sw], scaled)?;
                let p = self.probs(params, &scaled)?;
                let mut back = vec![0f32; n * c * h * w];
                resize_bilinear(n * c, sh, sw, h, w, p.data(), &mut back);
                Tensor::new(&[n, c, h, w], back)?
            };
            acc.iter_mut().zip(probs.data()).for_each(|(a, &p)| *a += p);
        }
        let k = scales.len() as f32;
        acc.iter_mut().for_each(|a| *a /= k);
        Tensor::new(&[n, c, h, w], acc)
    }
}

pub fn predict_segmentation(spec: &SegNetSpec, params: &ParamSet<f32>, images: &Tensor<f32>) -> Result<Prediction> {
    Segmenter::new(spec)?.predict(params, images)
}

pub fn multi_scale_predict(
    spec: &SegNetSpec,
    params: &ParamSet<f32>,
    images: &Tensor<f32>,
    scales: &[f64],
) -> Result<Tensor<f32>> {
    Segmenter::new(spec)?.multi_scale(params, images, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * h * w).map(|_| rng.random::<f32>()).collect();
        Tensor::new(&[n, 3, h, w], data).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = SegNetSpec::default();
        assert_eq!(spec.init(5).unwrap(), spec.init(5).unwrap());
        assert_ne!(spec.init(5).unwrap(), spec.init(6).unwrap());
    }

    #[test]
    fn output_matches_input_resolution() {
        let spec = SegNetSpec::default();
        let (_, g) = build_segnet(&spec, 0, 1, 32, 32).unwrap();
        assert_eq!(g.graph.shape(g.logits), &[1, 4, 32, 32]);
    }

    #[test]
    fn parameter_count_by_hand() {
        // 3->16, 16->32, 32->32 (3x3) then 32->4 (1x1), with biases
        let spec = SegNetSpec {
            in_channels: 3,
            widths: vec![16, 32, 32],
            class_count: 4,
            downsample: 2,
        };
        let hand = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32) + (4 * 32 + 4);
        assert_eq!(hand, 14_468);
        assert_eq!(spec.param_count(), hand);
        assert_eq!(spec.init(0).unwrap().count(), hand);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SegNetSpec::default();
        spec.class_count = 1;
        assert!(spec.init(0).is_err());
        let mut spec = SegNetSpec::default();
        spec.widths = vec![16, 0];
        assert!(spec.validate().is_err());
        assert!(SegGraph::new(&SegNetSpec::default(), 1, 30, 32).is_err());
    }

    fn uniform_params(spec: &SegNetSpec) -> ParamSet<f32> {
        let mut p = spec.init(1).unwrap();
        let zeroed: Vec<(String, Tensor<f32>)> = p
            .iter()
            .filter(|(n, _)| n.starts_with("head"))
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        for (n, t) in zeroed {
            p.set(&n, t).unwrap();
        }
        p
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let spec = SegNetSpec::default();
        let p = uniform_params(&spec);
        let pred = predict_segmentation(&spec, &p, &random_images(1, 32, 32, 3)).unwrap();
        assert!(pred.probs.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!(pred.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn argmax_agrees_with_logits() {
        let spec = SegNetSpec::default();
        let params = spec.init(9).unwrap();
        let (_, g) = build_segnet(&spec, 9, 1, 32, 32).unwrap();
        let img = random_images(1, 32, 32, 4);
        let mut feeds = Feeds::new();
        g.params.bind(&mut feeds, &params).unwrap();
        feeds.insert(g.input, &img);
        let vals = g.graph.forward(&feeds).unwrap();
        assert_eq!(argmax_labels(vals.get(g.logits)), argmax_labels(vals.get(g.probs)));
    }

    #[test]
    fn one_by_one_net_matches_hand_softmax() {
        // no hidden layers: logits = W x + b on a single pixel
        let spec = SegNetSpec {
            in_channels: 1,
            widths: vec![1],
            class_count: 2,
            downsample: 0,
        };
        let mut p = ParamSet::new("segnet");
        let mut w0 = vec![0f32; 9];
        w0[4] = 1.0;
        p.push("conv0.w", Tensor::new(&[1, 1, 3, 3], w0).unwrap());
        p.push("conv0.b", Tensor::zeros(&[1]));
        p.push("head.w", Tensor::new(&[2, 1, 1, 1], vec![1.0, -1.0]).unwrap());
        p.push("head.b", Tensor::new(&[2], vec![0.0, 0.5]).unwrap());
        let img = Tensor::new(&[1, 1, 1, 1], vec![2.0f32]).unwrap();
        let pred = predict_segmentation(&spec, &p, &img).unwrap();
        // logits (2, -1.5) -> p0 = 1 / (1 + e^-3.5)
        let p0 = 1.0 / (1.0 + (-3.5f64).exp());
        assert!((f64::from(pred.probs.data()[0]) - p0).abs() < 1e-6);
        assert_eq!(pred.labels, vec![0]);
    }

    #[test]
    fn single_scale_reduces_to_plain_prediction() {
        let spec = SegNetSpec::default();
        let p = spec.init(2).unwrap();
        let img = random_images(2, 32, 32, 5);
        let mut seg = Segmenter::new(&spec).unwrap();
        let plain = seg.predict(&p, &img).unwrap().probs;
        assert_eq!(seg.multi_scale(&p, &img, &[1.0]).unwrap(), plain);
        assert_eq!(seg.multi_scale(&p, &img, &[1.0, 1.0]).unwrap(), plain);
        assert!(seg.multi_scale(&p, &img, &[]).is_err());
        assert!(seg.multi_scale(&p, &img, &[0.0]).is_err());
    }

    #[test]
    fn constant_output_is_scale_invariant() {
        // all kernels zero: logits are the head bias everywhere
        let spec = SegNetSpec::default();
        let mut p = spec.init(2).unwrap();
        let names: Vec<String> = p.names().to_vec();
        for n in names {
            let shape = p.get(&n).unwrap().shape().to_vec();
            let t = if n == "head.b" {
                Tensor::new(&shape, vec![0.3, -0.2, 1.1, 0.0]).unwrap()
            } else {
                Tensor::zeros(&shape)
            };
            p.set(&n, t).unwrap();
        }
        let img = Tensor::full(&[1, 3, 32, 32], 0.4f32);
        let mut seg = Segmenter::new(&spec).unwrap();
        let single = seg.predict(&p, &img).unwrap().probs;
        let multi = seg.multi_scale(&p, &img, &[0.5, 1.0]).unwrap();
        for (a, b) in single.data().iter().zip(multi.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
