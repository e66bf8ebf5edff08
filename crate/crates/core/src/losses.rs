//! Scalar objectives. Each loss has a graph builder (used by the trainers)
//! and an eager `*_value` form that evaluates the same graph on tensors.
//!
//! Cross-entropies take logits and one-hot labels `[n, C, h, w]`; `K` is
//! the number of labelled pixels `n * h * w`. Discriminator outputs are raw
//! score maps, squashed by a sigmoid before every log, with probabilities
//! clamped to [`PROB_CLAMP`](crate::tensor::PROB_CLAMP).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Feeds, Graph, NodeId, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_con: f64,
    pub lambda_adv: f64,
    pub lambda_sem: f64,
    pub lambda_per: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_con: 3.0,
            lambda_adv: 0.001,
            lambda_sem: 10.0,
            lambda_per: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda_con", self.lambda_con),
            ("lambda_adv", self.lambda_adv),
            ("lambda_sem", self.lambda_sem),
            ("lambda_per", self.lambda_per),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("{v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One-hot encoding `[n, C, h, w]` of `labels` (`n * h * w` class indices).
pub fn one_hot<T: Scalar>(labels: &[u8], n: usize, classes: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if labels.len() != n * h * w {
        return Err(Error::invalid("labels", format!("{} values for {n}x{h}x{w}", labels.len())));
    }
    let inner = h * w;
    let mut data = vec![T::zero(); n * classes * inner];
    for b in 0..n {
        for px in 0..inner {
            let c = labels[b * inner + px] as usize;
            if c >= classes {
                return Err(Error::invalid("labels", format!("class {c} outside [0, {classes})")));
            }
            data[(b * classes + c) * inner + px] = T::one();
        }
    }
    Tensor::new(&[n, classes, h, w], data)
}

/// Checks that every pixel holds a single 1 and zeros elsewhere.
pub fn check_one_hot<T: Scalar>(y: &Tensor<T>) -> Result<()> {
    let s = y.shape();
    if s.len() < 2 {
        return Err(Error::invalid("labels", format!("{s:?} has no class axis")));
    }
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let d = y.data();
    for b in 0..n {
        for px in 0..inner {
            let mut ones = 0;
            for k in 0..c {
                let v = d[(b * c + k) * inner + px];
                if v == T::one() {
                    ones += 1;
                } else if v != T::zero() {
                    return Err(Error::NotOneHot { pixel: b * inner + px });
                }
            }
            if ones != 1 {
                return Err(Error::NotOneHot { pixel: b * inner + px });
            }
        }
    }
    Ok(())
}

fn pixels(g: &Graph, x: NodeId) -> usize {
    let s = g.shape(x);
    s[0] * s[2..].iter().product::<usize>()
}

fn same_shape(g: &Graph, what: &str, a: NodeId, b: NodeId) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape {
            node: what.to_string(),
            detail: format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        });
    }
    Ok(())
}

/// `−(1/(m K)) Σ_terms Σ_k Σ_c y log σ(logits)` over `m` logit maps that
/// share the label map `y`.
pub fn cross_entropy(g: &mut Graph, logits: &[NodeId], y: NodeId) -> Result<NodeId> {
    if logits.is_empty() {
        return Err(Error::invalid("cross_entropy", "no logits"));
    }
    let mut total = None;
    for &l in logits {
        same_shape(g, "cross_entropy", l, y)?;
        let p = g.softmax(l)?;
        let lp = g.log(p);
        let picked = g.mul(lp, y)?;
        let s = g.sum(picked);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let k = pixels(g, y) * logits.len();
    Ok(g.scale(total.unwrap(), -1.0 / k as f64))
}

/// Segmentation loss on source logits and, with augmentation, the logits
/// of the style-transferred source; normalised jointly by `1/2K`, or by
/// `1/K` when the transferred term is absent.
pub fn seg_loss(g: &mut Graph, src: NodeId, transferred: Option<NodeId>, y: NodeId) -> Result<NodeId> {
    match transferred {
        Some(t) => cross_entropy(g, &[src, t], y),
        None => cross_entropy(g, &[src], y),
    }
}

/// `(1/K) Σ_k Σ_c (p_s − p_t)²` between two softmax maps.
pub fn consistency_loss(g: &mut Graph, student_probs: NodeId, teacher_probs: NodeId) -> Result<NodeId> {
    same_shape(g, "consistency_loss", student_probs, teacher_probs)?;
    let d = g.sub(student_probs, teacher_probs)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    let k = pixels(g, student_probs);
    Ok(g.scale(s, 1.0 / k as f64))
}

/// `mean log(1 − σ(d))`, computed as `log σ(−d)`.
pub fn mean_log_one_minus_d(g: &mut Graph, d: NodeId) -> NodeId {
    let neg = g.scale(d, -1.0);
    let p = g.sigmoid(neg);
    let l = g.log(p);
    g.mean(l)
}

/// `mean log σ(d)`.
pub fn mean_log_d(g: &mut Graph, d: NodeId) -> NodeId {
    let p = g.sigmoid(d);
    let l = g.log(p);
    g.mean(l)
}

/// Output-space adversarial loss from raw discriminator maps:
/// `E log(1 − D(src)) + E log(1 − D(transferred)) + E log D(tgt)`.
/// The transferred term is omitted when absent.
pub fn adversarial_loss(g: &mut Graph, d_src: NodeId, d_transferred: Option<NodeId>, d_tgt: NodeId) -> Result<NodeId> {
    let mut total = mean_log_one_minus_d(g, d_src);
    if let Some(t) = d_transferred {
        let term = mean_log_one_minus_d(g, t);
        total = g.add(total, term)?;
    }
    let term = mean_log_d(g, d_tgt);
    g.add(total, term)
}

/// Style adversarial loss `E log D(x_t) + E[log(1 − D(x_s)) + log(1 − D(G(x_s)))]`;
/// same algebra as [`adversarial_loss`] with images in place of maps.
pub fn style_loss(g: &mut Graph, d_real_t: NodeId, d_src: NodeId, d_transferred: NodeId) -> Result<NodeId> {
    adversarial_loss(g, d_src, Some(d_transferred), d_real_t)
}

/// Self-training cross-entropy against fixed pseudo labels.
pub fn self_train_loss(g: &mut Graph, logits_t: NodeId, pseudo: NodeId) -> Result<NodeId> {
    cross_entropy(g, &[logits_t], pseudo)
}

/// Cross-entropy of the frozen segmenter on transferred source images.
pub fn semantic_consistency_loss(g: &mut Graph, phi_logits: NodeId, y: NodeId) -> Result<NodeId> {
    cross_entropy(g, &[phi_logits], y)
}

/// `(1/K_f) Σ_k ‖f_a − f_b‖²` over feature cells.
pub fn perceptual_loss(g: &mut Graph, fa: NodeId, fb: NodeId) -> Result<NodeId> {
    same_shape(g, "perceptual_loss", fa, fb)?;
    let d = g.sub(fa, fb)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    let k = pixels(g, fa);
    Ok(g.scale(s, 1.0 / k as f64))
}

fn weighted_sum(g: &mut Graph, base: NodeId, terms: &[(f64, Option<NodeId>)]) -> Result<NodeId> {
    let mut total = base;
    for &(w, t) in terms {
        if let Some(t) = t {
            let s = g.scale(t, w);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// `L_seg + λ_con L_con + λ_adv L_adv`; absent terms are skipped.
pub fn segan_objective_node(
    g: &mut Graph,
    w: &LossWeights,
    seg: NodeId,
    con: Option<NodeId>,
    adv: Option<NodeId>,
) -> Result<NodeId> {
    weighted_sum(g, seg, &[(w.lambda_con, con), (w.lambda_adv, adv)])
}

/// `L_style + λ_sem L_sem + λ_per L_per`.
pub fn tgstn_objective_node(g: &mut Graph, w: &LossWeights, style: NodeId, sem: NodeId, per: NodeId) -> Result<NodeId> {
    weighted_sum(g, style, &[(w.lambda_sem, Some(sem)), (w.lambda_per, Some(per))])
}

pub fn segan_objective(w: &LossWeights, seg: f64, con: f64, adv: f64) -> f64 {
    seg + w.lambda_con * con + w.lambda_adv * adv
}

pub fn tgstn_objective(w: &LossWeights, style: f64, sem: f64, per: f64) -> f64 {
    style + w.lambda_sem * sem + w.lambda_per * per
}

/// Evaluates a loss built by `build` over input leaves fed with `inputs`.
fn eager<T: Scalar>(
    inputs: &[&Tensor<T>],
    build: impl FnOnce(&mut Graph, &[NodeId]) -> Result<NodeId>,
) -> Result<T> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.input(&format!("in{i}"), t.shape()))
        .collect();
    let out = build(&mut g, &ids)?;
    let mut feeds = Feeds::new();
    for (&id, t) in ids.iter().zip(inputs) {
        feeds.insert(id, t);
    }
    Ok(g.forward(&feeds)?.get(out).item())
}

pub fn seg_loss_value<T: Scalar>(src: &Tensor<T>, transferred: Option<&Tensor<T>>, y: &Tensor<T>) -> Result<T> {
    check_one_hot(y)?;
    match transferred {
        Some(t) => eager(&[src, t, y], |g, i| seg_loss(g, i[0], Some(i[1]), i[2])),
        None => eager(&[src, y], |g, i| seg_loss(g, i[0], None, i[1])),
    }
}

pub fn consistency_loss_value<T: Scalar>(ps: &Tensor<T>, pt: &Tensor<T>) -> Result<T> {
    eager(&[ps, pt], |g, i| consistency_loss(g, i[0], i[1]))
}

pub fn adversarial_loss_value<T: Scalar>(d_src: &Tensor<T>, d_tr: Option<&Tensor<T>>, d_tgt: &Tensor<T>) -> Result<T> {
    match d_tr {
        Some(t) => eager(&[d_src, t, d_tgt], |g, i| adversarial_loss(g, i[0], Some(i[1]), i[2])),
        None => eager(&[d_src, d_tgt], |g, i| adversarial_loss(g, i[0], None, i[1])),
    }
}

pub fn style_loss_value<T: Scalar>(d_real_t: &Tensor<T>, d_src: &Tensor<T>, d_tr: &Tensor<T>) -> Result<T> {
    eager(&[d_real_t, d_src, d_tr], |g, i| style_loss(g, i[0], i[1], i[2]))
}

pub fn self_train_loss_value<T: Scalar>(logits: &Tensor<T>, pseudo: &Tensor<T>) -> Result<T> {
    check_one_hot(pseudo)?;
    eager(&[logits, pseudo], |g, i| self_train_loss(g, i[0], i[1]))
}

pub fn semantic_consistency_loss_value<T: Scalar>(phi_logits: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    check_one_hot(y)?;
    eager(&[phi_logits, y], |g, i| semantic_consistency_loss(g, i[0], i[1]))
}

pub fn perceptual_loss_value<T: Scalar>(fa: &Tensor<T>, fb: &Tensor<T>) -> Result<T> {
    eager(&[fa, fb], |g, i| perceptual_loss(g, i[0], i[1]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IpmEstimate {
    pub value: f64,
    /// Index of the maximising function.
    pub witness: usize,
    pub n_mu: usize,
    pub n_nu: usize,
}

/// `sup_f (mean_μ f − mean_ν f)` over a finite class. The class must be
/// even on the pooled samples: for every `f` some `g` equals `−f` there.
pub fn ipm_estimate<S, F>(class: &[F], mu: &[S], nu: &[S]) -> Result<IpmEstimate>
where
    F: Fn(&S) -> f64,
{
    if class.is_empty() {
        return Err(Error::invalid("function class", "empty"));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::invalid("samples", "both sample sets must be non-empty"));
    }
    let evals: Vec<Vec<f64>> = class.iter().map(|f| mu.iter().chain(nu).map(f).collect()).collect();
    for (i, ei) in evals.iter().enumerate() {
        let mirrored = evals
            .iter()
            .any(|ej| ei.iter().zip(ej).all(|(a, b)| (a + b).abs() <= 1e-12 * (1.0 + a.abs())));
        if !mirrored {
            return Err(Error::invalid("function class", format!("function {i} has no negation in the class")));
        }
    }
    let (m, n) = (mu.len() as f64, nu.len() as f64);
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, e) in evals.iter().enumerate() {
        let gap = e[..mu.len()].iter().sum::<f64>() / m - e[mu.len()..].iter().sum::<f64>() / n;
        if gap > best.0 {
            best = (gap, i);
        }
    }
    Ok(IpmEstimate {
        value: best.0,
        witness: best.1,
        n_mu: mu.len(),
        n_nu: nu.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn uniform_predictions_give_ln_c() {
        for c in [2usize, 4, 7] {
            let logits = Tensor::<f64>::zeros(&[1, c, 2, 3]);
            let y = one_hot::<f64>(&[0, 1, 1, 0, 0, 1], 1, c, 2, 3).unwrap();
            let ln_c = (c as f64).ln();
            assert!((seg_loss_value(&logits, Some(&logits), &y).unwrap() - ln_c).abs() < 1e-12);
            assert!((seg_loss_value(&logits, None, &y).unwrap() - ln_c).abs() < 1e-12);
            assert!((self_train_loss_value(&logits, &y).unwrap() - ln_c).abs() < 1e-12);
            assert!((semantic_consistency_loss_value(&logits, &y).unwrap() - ln_c).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_predictions_give_zero() {
        let y = one_hot::<f64>(&[2, 0, 1], 1, 3, 1, 3).unwrap();
        let logits = t(&[1, 3, 1, 3], &[-50.0, 50.0, -50.0, -50.0, -50.0, 50.0, 50.0, -50.0, -50.0]);
        let v = seg_loss_value(&logits, Some(&logits), &y).unwrap();
        assert!((0.0..2e-7).contains(&v));
        assert!(self_train_loss_value(&logits, &y).unwrap() < 2e-7);
    }

    #[test]
    fn non_one_hot_labels_are_rejected() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let soft = t(&[1, 2, 1, 1], &[0.5, 0.5]);
        assert!(matches!(seg_loss_value(&logits, None, &soft), Err(Error::NotOneHot { pixel: 0 })));
        assert!(self_train_loss_value(&logits, &Tensor::zeros(&[1, 2, 1, 1])).is_err());
        assert!(one_hot::<f64>(&[3], 1, 2, 1, 1).is_err());
    }

    #[test]
    fn consistency_extremes() {
        let a = one_hot::<f64>(&[0, 1, 2], 1, 3, 1, 3).unwrap();
        let b = one_hot::<f64>(&[1, 2, 0], 1, 3, 1, 3).unwrap();
        assert_eq!(consistency_loss_value(&a, &a).unwrap(), 0.0);
        assert!((consistency_loss_value(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn half_discriminator_gives_three_log_half() {
        let d = Tensor::<f64>::zeros(&[2, 1, 2, 2]);
        let expect = 3.0 * 0.5f64.ln();
        assert!((adversarial_loss_value(&d, Some(&d), &d).unwrap() - expect).abs() < 1e-12);
        assert!((style_loss_value(&d, &d, &d).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn optimal_discriminator_approaches_zero_from_below() {
        let src = Tensor::<f64>::full(&[1, 1, 2, 2], -20.0);
        let tgt = Tensor::<f64>::full(&[1, 1, 2, 2], 20.0);
        let v = adversarial_loss_value(&src, Some(&src), &tgt).unwrap();
        assert!(v < 0.0 && v > -4e-7);
    }

    #[test]
    fn objective_arithmetic() {
        let w = LossWeights::default();
        assert!((segan_objective(&w, 1.0, 0.5, -2.0) - 2.498).abs() < 1e-12);
        assert!((tgstn_objective(&w, -2.0, 1.0, 0.5) - 8.5).abs() < 1e-12);
        let zero = LossWeights {
            lambda_con: 0.0,
            lambda_adv: 0.0,
            lambda_sem: 0.0,
            lambda_per: 0.0,
        };
        assert_eq!(segan_objective(&zero, 1.25, 9.0, 9.0), 1.25);
        assert_eq!(tgstn_objective(&zero, -0.5, 9.0, 9.0), -0.5);
        assert!(LossWeights { lambda_con: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn perceptual_constant_offset_gives_channel_count() {
        let a = Tensor::<f64>::zeros(&[2, 5, 3, 3]);
        let b = Tensor::<f64>::full(&[2, 5, 3, 3], 1.0);
        assert!((perceptual_loss_value(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(perceptual_loss_value(&a, &a).unwrap(), 0.0);
        assert!(perceptual_loss_value(&a, &Tensor::zeros(&[2, 5, 3, 2])).is_err());
    }

    #[test]
    fn ipm_examples() {
        let class: [fn(&f64) -> f64; 2] = [|x| *x, |x| -*x];
        assert_eq!(ipm_estimate(&class, &[0.0, 2.0], &[1.0]).unwrap().value, 0.0);
        let e = ipm_estimate(&class, &[0.0, 4.0], &[1.0]).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.witness, 0);
        assert_eq!(ipm_estimate(&class, &[0.3, 0.9], &[0.3, 0.9]).unwrap().value, 0.0);
        let empty: [fn(&f64) -> f64; 0] = [];
        assert!(ipm_estimate(&empty, &[1.0], &[1.0]).is_err());
        assert!(ipm_estimate(&class, &[], &[1.0]).is_err());
        assert!(ipm_estimate(&[|x: &f64| *x], &[1.0], &[2.0]).is_err());
    }
}
