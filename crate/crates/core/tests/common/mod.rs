//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segan::losses::{
    adversarial_loss, consistency_loss, mean_log_one_minus_d, one_hot, perceptual_loss, seg_loss,
    segan_objective_node, self_train_loss, semantic_consistency_loss, style_loss, tgstn_objective_node, LossWeights,
};
use segan::networks::{DiscSpec, SegNetSpec, StyleGenSpec};
use segan::tensor::{finite_diff_grad, max_relative_error, Feeds, Graph, NodeId, Op, Tensor, Values, REL_ERR_FLOOR};

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let l: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..c) as u8).collect();
    one_hot(&l, n, c, h, w).unwrap()
}

/// Random softmax maps `[n, c, h, w]`.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut d = vec![0.0; n * c * h * w];
    let inner = h * w;
    for b in 0..n {
        for p in 0..inner {
            let e: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = e.iter().sum();
            for k in 0..c {
                d[(b * c + k) * inner + p] = e[k] / s;
            }
        }
    }
    Tensor::from_f64(&[n, c, h, w], &d).unwrap()
}

/// A graph under test: trainable leaves with their values, fixed inputs,
/// and the scalar to differentiate.
pub struct Case {
    pub name: &'static str,
    pub graph: Graph,
    pub params: Vec<(NodeId, Tensor<f64>)>,
    pub inputs: Vec<(NodeId, Tensor<f64>)>,
    pub loss: Option<NodeId>,
}

impl Case {
    fn new(name: &'static str) -> Self {
        Case {
            name,
            graph: Graph::new(),
            params: Vec::new(),
            inputs: Vec::new(),
            loss: None,
        }
    }

    fn param(&mut self, name: &str, t: Tensor<f64>) -> NodeId {
        let id = self.graph.param(name, t.shape());
        self.params.push((id, t));
        id
    }

    fn input(&mut self, name: &str, t: Tensor<f64>) -> NodeId {
        let id = self.graph.input(name, t.shape());
        self.inputs.push((id, t));
        id
    }

    fn feeds(&self) -> Feeds<'_, f64> {
        let mut feeds = Feeds::new();
        for (id, t) in self.params.iter().chain(&self.inputs) {
            feeds.insert(*id, t);
        }
        feeds
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every trainable leaf.
    pub fn max_error(&self) -> f64 {
        let feeds = self.feeds();
        let vals = self.graph.forward(&feeds).unwrap();
        let loss = self.loss.expect("case without a loss");
        let grads = self.graph.backward(&vals, loss).unwrap();
        self.params
            .iter()
            .map(|(id, _)| {
                let fd = finite_diff_grad(&self.graph, &feeds, loss, *id, FD_STEP).unwrap();
                max_relative_error(grads.get(*id).unwrap(), &fd)
            })
            .fold(0.0, f64::max)
    }
}

/// Every objective of the method on small random tensors drawn from `seed`.
pub fn gradient_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let (n, c, h, w) = (2, 3, 4, 4);
    let weights = LossWeights {
        lambda_con: 3.0,
        lambda_adv: 0.5,
        lambda_sem: 10.0,
        lambda_per: 1.0,
    };
    let mut cases = Vec::new();

    let mut k = Case::new("seg_loss (source + transferred)");
    let ls = k.param("ls", random(&mut r, &[n, c, h, w], 2.0));
    let lg = k.param("lg", random(&mut r, &[n, c, h, w], 2.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    k.loss = Some(seg_loss(&mut k.graph, ls, Some(lg), y).unwrap());
    cases.push(k);

    let mut k = Case::new("seg_loss (source only)");
    let ls = k.param("ls", random(&mut r, &[n, c, h, w], 2.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    k.loss = Some(seg_loss(&mut k.graph, ls, None, y).unwrap());
    cases.push(k);

    let mut k = Case::new("consistency_loss");
    let l = k.param("l", random(&mut r, &[n, c, h, w], 2.0));
    let pt = k.input("pt", random_simplex(&mut r, n, c, h, w));
    let ps = k.graph.softmax(l).unwrap();
    k.loss = Some(consistency_loss(&mut k.graph, ps, pt).unwrap());
    cases.push(k);

    let mut k = Case::new("adversarial_loss");
    let ds = k.param("ds", random(&mut r, &[n, 1, 2, 2], 2.0));
    let dg = k.param("dg", random(&mut r, &[n, 1, 2, 2], 2.0));
    let dt = k.param("dt", random(&mut r, &[n, 1, 2, 2], 2.0));
    k.loss = Some(adversarial_loss(&mut k.graph, ds, Some(dg), dt).unwrap());
    cases.push(k);

    let mut k = Case::new("adversarial_loss (no transferred term)");
    let ds = k.param("ds", random(&mut r, &[n, 1, 2, 2], 2.0));
    let dt = k.param("dt", random(&mut r, &[n, 1, 2, 2], 2.0));
    k.loss = Some(adversarial_loss(&mut k.graph, ds, None, dt).unwrap());
    cases.push(k);

    let mut k = Case::new("segan objective");
    let ls = k.param("ls", random(&mut r, &[n, c, h, w], 2.0));
    let lt = k.param("lt", random(&mut r, &[n, c, h, w], 2.0));
    let d = k.param("d", random(&mut r, &[n, 1, 2, 2], 2.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    let pt = k.input("pt", random_simplex(&mut r, n, c, h, w));
    let seg = seg_loss(&mut k.graph, ls, None, y).unwrap();
    let ps = k.graph.softmax(lt).unwrap();
    let con = consistency_loss(&mut k.graph, ps, pt).unwrap();
    let adv = mean_log_one_minus_d(&mut k.graph, d);
    k.loss = Some(segan_objective_node(&mut k.graph, &weights, seg, Some(con), Some(adv)).unwrap());
    cases.push(k);

    let mut k = Case::new("self_train_loss");
    let l = k.param("l", random(&mut r, &[n, c, h, w], 2.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    k.loss = Some(self_train_loss(&mut k.graph, l, y).unwrap());
    cases.push(k);

    let mut k = Case::new("style_loss");
    let dt = k.param("dt", random(&mut r, &[n, 1, 2, 2], 2.0));
    let ds = k.param("ds", random(&mut r, &[n, 1, 2, 2], 2.0));
    let dg = k.param("dg", random(&mut r, &[n, 1, 2, 2], 2.0));
    k.loss = Some(style_loss(&mut k.graph, dt, ds, dg).unwrap());
    cases.push(k);

    let mut k = Case::new("semantic_consistency_loss");
    let l = k.param("l", random(&mut r, &[n, c, h, w], 2.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    k.loss = Some(semantic_consistency_loss(&mut k.graph, l, y).unwrap());
    cases.push(k);

    let mut k = Case::new("perceptual_loss");
    let fa = k.param("fa", random(&mut r, &[n, 5, 2, 2], 1.0));
    let fb = k.param("fb", random(&mut r, &[n, 5, 2, 2], 1.0));
    k.loss = Some(perceptual_loss(&mut k.graph, fa, fb).unwrap());
    cases.push(k);

    let mut k = Case::new("tgstn objective");
    let dg = k.param("dg", random(&mut r, &[n, 1, 2, 2], 2.0));
    let l = k.param("l", random(&mut r, &[n, c, h, w], 2.0));
    let fa = k.param("fa", random(&mut r, &[n, 5, 2, 2], 1.0));
    let fb = k.input("fb", random(&mut r, &[n, 5, 2, 2], 1.0));
    let y = k.input("y", random_labels(&mut r, n, c, h, w));
    let style = mean_log_one_minus_d(&mut k.graph, dg);
    let sem = semantic_consistency_loss(&mut k.graph, l, y).unwrap();
    let per = perceptual_loss(&mut k.graph, fa, fb).unwrap();
    k.loss = Some(tgstn_objective_node(&mut k.graph, &weights, style, sem, per).unwrap());
    cases.push(k);

    cases
}

/// The three networks end to end, with tiny widths, each under a loss.
pub fn network_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed ^ 0x5eed);
    let (c, h, w) = (3, 4, 4);
    let mut cases = Vec::new();
    let spec = SegNetSpec {
        in_channels: 3,
        widths: vec![3, 4],
        class_count: c,
        downsample: 1,
    };
    let mut k = Case::new("segmenter + cross-entropy");
    let nodes = spec.declare(&mut k.graph, "seg").unwrap();
    let init = spec.init(seed).unwrap().cast::<f64>();
    for ((_, t), id) in init.iter().zip(nodes.ids()) {
        // non-zero biases so that every ReLU sees both signs
        let v = if t.shape().len() == 1 { random(&mut r, t.shape(), 0.3) } else { t.clone() };
        k.params.push((id, v));
    }
    let x = k.input("x", random(&mut r, &[1, 3, h, w], 1.0));
    let y = k.input("y", random_labels(&mut r, 1, c, h, w));
    let out = spec.apply(&mut k.graph, &nodes, x).unwrap();
    k.loss = Some(seg_loss(&mut k.graph, out.logits, None, y).unwrap());
    cases.push(k);

    let disc = DiscSpec {
        widths: vec![2, 2, 2, 2, 1],
        ..DiscSpec::new(c)
    };
    let mut k = Case::new("discriminator + adversarial");
    let nodes = disc.declare(&mut k.graph, "disc").unwrap();
    for ((_, t), id) in disc.init(seed).unwrap().cast::<f64>().iter().zip(nodes.ids()) {
        let v = if t.shape().len() == 1 { random(&mut r, t.shape(), 0.3) } else { t.clone() };
        k.params.push((id, v));
    }
    let ps = k.input("ps", random_simplex(&mut r, 1, c, 32, 32));
    let pt = k.input("pt", random_simplex(&mut r, 1, c, 32, 32));
    let ds = disc.apply(&mut k.graph, &nodes, ps).unwrap();
    let dt = disc.apply(&mut k.graph, &nodes, pt).unwrap();
    k.loss = Some(adversarial_loss(&mut k.graph, ds, None, dt).unwrap());
    cases.push(k);

    let gen = StyleGenSpec {
        channels: 3,
        widths: vec![3],
        residual: false,
    };
    let mut k = Case::new("style generator + perceptual");
    let nodes = gen.declare(&mut k.graph, "gen").unwrap();
    for ((_, t), id) in gen.init(seed).unwrap().cast::<f64>().iter().zip(nodes.ids()) {
        let v = if t.shape().len() == 1 { random(&mut r, t.shape(), 0.3) } else { t.clone() };
        k.params.push((id, v));
    }
    let x = k.input("x", random(&mut r, &[1, 3, h, w], 1.0));
    let target = k.input("target", random(&mut r, &[1, 3, h, w], 1.0));
    let gx = gen.apply(&mut k.graph, &nodes, x).unwrap();
    k.loss = Some(perceptual_loss(&mut k.graph, gx, target).unwrap());
    cases.push(k);

    cases
}

impl Case {
    /// Which side of its kink every ReLU / leaky-ReLU / clamp input lies on.
    fn kink_pattern(&self, vals: &Values<f64>) -> Vec<i8> {
        let mut out = Vec::new();
        for (_, node) in self.graph.nodes() {
            let side = |v: f64, lo: f64, hi: f64| (v > lo) as i8 + (v > hi) as i8;
            match node.op {
                Op::Relu | Op::LeakyRelu { .. } => {
                    out.extend(vals.get(node.inputs[0]).data().iter().map(|&v| side(v, 0.0, f64::INFINITY)))
                }
                Op::Clamp { lo, hi } => out.extend(vals.get(node.inputs[0]).data().iter().map(|&v| side(v, lo, hi))),
                _ => {}
            }
        }
        out
    }

    /// Like [`Case::max_error`], but coordinates whose `±h` probe moves an
    /// activation across its kink are skipped: the loss is not
    /// differentiable on that interval, so the central difference is not an
    /// estimate of the gradient there. Returns the error and the number of
    /// skipped coordinates out of the total.
    pub fn max_error_off_kinks(&self) -> (f64, usize, usize) {
        let feeds = self.feeds();
        let loss = self.loss.expect("case without a loss");
        let vals = self.graph.forward(&feeds).unwrap();
        let base = self.kink_pattern(&vals);
        let grads = self.graph.backward(&vals, loss).unwrap();
        let (mut worst, mut skipped, mut total) = (0.0f64, 0, 0);
        for (id, t) in &self.params {
            let g = grads.get(*id).unwrap();
            let mut probe = t.clone();
            for i in 0..t.len() {
                total += 1;
                let mut f = [0.0; 2];
                let mut crossed = false;
                for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
                    probe.data_mut()[i] = t.data()[i] + sign * FD_STEP;
                    let mut fe = feeds.clone();
                    fe.insert(*id, &probe);
                    let v = self.graph.forward(&fe).unwrap();
                    crossed |= self.kink_pattern(&v) != base;
                    f[j] = v.get(loss).item();
                }
                probe.data_mut()[i] = t.data()[i];
                if crossed {
                    skipped += 1;
                    continue;
                }
                let fd = (f[0] - f[1]) / (2.0 * FD_STEP);
                let a = g.data()[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(REL_ERR_FLOOR));
            }
        }
        (worst, skipped, total)
    }
}

/// Per-pixel counting oracle for IoU: `None` where the union is empty.
pub fn iou_oracle(pred: &[u8], gt: &[u8], classes: usize) -> Vec<Option<f64>> {
    (0..classes as u8)
        .map(|k| {
            let (mut inter, mut union) = (0u64, 0u64);
            for (&p, &g) in pred.iter().zip(gt) {
                if p == k && g == k {
                    inter += 1;
                }
                if p == k || g == k {
                    union += 1;
                }
            }
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

/// Grid minimiser on a log grid of `points` values.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    let mut best = (f64::INFINITY, lo);
    for i in 0..points {
        let x = (a + (b - a) * i as f64 / (points - 1) as f64).exp();
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// `(name, computed, expected)` for the closed-form loss identities.
pub fn loss_identities() -> Vec<(String, f64, f64)> {
    use segan::losses::*;
    let mut out = Vec::new();
    let mut r = rng(11);
    for c in [2usize, 3, 4, 7] {
        let (n, h, w) = (2, 3, 5);
        let flat = Tensor::<f64>::zeros(&[n, c, h, w]);
        let y = random_labels(&mut r, n, c, h, w);
        let ln_c = (c as f64).ln();
        out.push((format!("seg_loss uniform, C={c}"), seg_loss_value(&flat, None, &y).unwrap(), ln_c));
        out.push((format!("seg_loss uniform + transferred, C={c}"), seg_loss_value(&flat, Some(&flat), &y).unwrap(), ln_c));
        out.push((format!("self_train_loss uniform, C={c}"), self_train_loss_value(&flat, &y).unwrap(), ln_c));
        out.push((format!("semantic_consistency uniform, C={c}"), semantic_consistency_loss_value(&flat, &y).unwrap(), ln_c));
        let p = random_simplex(&mut r, n, c, h, w);
        out.push((format!("consistency identical maps, C={c}"), consistency_loss_value(&p, &p).unwrap(), 0.0));
    }
    // a raw discriminator output of 0 is D = 0.5
    let d = Tensor::<f64>::zeros(&[2, 1, 2, 2]);
    let three_ln_half = 3.0 * 0.5f64.ln();
    out.push(("adversarial at D=0.5".into(), adversarial_loss_value(&d, Some(&d), &d).unwrap(), three_ln_half));
    out.push(("style at D=0.5".into(), style_loss_value(&d, &d, &d).unwrap(), three_ln_half));
    out
}

/// Worst relative deviation, over 2000 steps against a fixed student,
/// between the iterated EMA update and `α^i θ_t⁰ + (1 − α^i) θ_s`.
/// Deviations are taken relative to the sup-norm of the closed form so that
/// coordinates crossing zero are not singled out.
pub fn ema_closed_form_deviation(alpha: f64, seed: u64) -> f64 {
    use segan::tensor::ParamSet;
    use segan::trainer::ema_update;
    let mut r = rng(seed);
    let t0 = random(&mut r, &[3, 4], 1.0);
    let s = random(&mut r, &[3, 4], 1.0);
    let b = random(&mut r, &[5], 1.0);
    let sb = random(&mut r, &[5], 1.0);
    let mut teacher = ParamSet::new("teacher");
    teacher.push("w", t0.clone());
    teacher.push("b", b.clone());
    let mut student = ParamSet::new("student");
    student.push("w", s.clone());
    student.push("b", sb.clone());
    let mut worst = 0.0f64;
    for i in 1..=2000 {
        ema_update(&mut teacher, &student, alpha).unwrap();
        let ai = alpha.powi(i);
        for ((t_init, s_fixed), got) in [(&t0, &s), (&b, &sb)].into_iter().zip(teacher.tensors()) {
            let closed: Vec<f64> = t_init.data().iter().zip(s_fixed.data()).map(|(t, s)| ai * t + (1.0 - ai) * s).collect();
            let scale = closed.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            for (c, g) in closed.iter().zip(got.data()) {
                worst = worst.max((c - g).abs() / scale);
            }
        }
    }
    worst
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Random `(R, N)` pairs and the relative gap between the printed
/// minimiser and a fine log-grid search of the printed Dudley objective.
pub fn dudley_minimiser_gaps(count: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    use segan::bounds::{dudley_printed, printed_minimizer};
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let big_r = 10f64.powf(r.random_range(-2.0..3.0));
            let n = 10f64.powf(r.random_range(3.0..8.0));
            let star = printed_minimizer(big_r, n);
            let grid = grid_argmin(|a| dudley_printed(a, big_r, n), star / 30.0, star * 30.0, 40_001);
            (big_r, n, rel(grid, star))
        })
        .collect()
}

/// Confidence term `2Δ√(2 log(1/δ))` that `√N · gen_bound` approaches.
pub fn gen_bound_limit(delta_bound: f64, delta: f64) -> f64 {
    2.0 * delta_bound * (2.0 * (1.0 / delta).ln()).sqrt()
}

/// Random label maps with a random class count; classes may be absent.
pub fn random_label_pair(r: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>, usize) {
    let classes = r.random_range(2..9);
    let len = r.random_range(1..400);
    // draw from a random subset so some classes never occur
    let used = r.random_range(1..=classes);
    let pred = (0..len).map(|_| r.random_range(0..used) as u8).collect();
    let gt = (0..len).map(|_| r.random_range(0..classes) as u8).collect();
    (pred, gt, classes)
}
