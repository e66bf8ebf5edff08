use super::eval::evaluate;
use super::{numeric_abort, LogRecord, Sampler, TrainConfig, TrainLog};
use crate::datagen::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::{one_hot, self_train_loss};
use crate::networks::{argmax_labels, SegNetSpec, Segmenter};
use crate::rng::stream_rng;
use crate::tensor::{Feeds, Graph, OptimizerState, ParamSet, PolySchedule, Scalar, Tensor};

/// Hard labels for every target image, fixed once before self-training.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// One `h * w` label map per target image.
    pub maps: Vec<Vec<u8>>,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// One-hot maps `[idx.len(), C, h, w]`.
    pub fn one_hot<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let labels: Vec<u8> = idx.iter().flat_map(|&i| self.maps[i].iter().copied()).collect();
        one_hot(&labels, idx.len(), self.classes, self.height, self.width)
    }
}

/// One-hot argmax of softmax maps `[n, C, h, w]`, ties to the lowest class.
pub fn pseudo_label_maps<T: Scalar>(probs: &Tensor<T>) -> Result<Tensor<T>> {
    let s = probs.shape();
    if s.len() != 4 {
        return Err(Error::invalid("probs", format!("{s:?}, expected [n, C, h, w]")));
    }
    one_hot(&argmax_labels(probs), s[0], s[1], s[2], s[3])
}

/// Teacher predictions on every target image.
pub fn generate_pseudo_labels(spec: &SegNetSpec, teacher: &ParamSet<f32>, ds: &DomainDataset) -> Result<PseudoLabels> {
    let mut seg = Segmenter::new(spec)?;
    let (h, w) = (ds.height(), ds.width());
    let mut maps = Vec::with_capacity(ds.n_target());
    let idx: Vec<usize> = (0..ds.n_target()).collect();
    for chunk in idx.chunks(20) {
        let labels = seg.predict(teacher, &ds.target_batch(chunk)?)?.labels;
        maps.extend(labels.chunks(h * w).map(<[u8]>::to_vec));
    }
    Ok(PseudoLabels {
        classes: spec.class_count,
        height: h,
        width: w,
        maps,
    })
}

#[derive(Clone, Debug)]
pub struct SelfTrainRun {
    pub student: ParamSet<f32>,
    pub log: TrainLog,
    /// Loss of every iteration, before its update.
    pub losses: Vec<f64>,
}

/// SGD on the cross-entropy against fixed pseudo labels over target
/// batches, `self_train_iters` iterations on a fresh poly schedule.
pub fn self_train(
    cfg: &TrainConfig,
    student: &ParamSet<f32>,
    pseudo: &PseudoLabels,
    ds: &DomainDataset,
) -> Result<SelfTrainRun> {
    cfg.validate()?;
    if pseudo.len() != ds.n_target() || pseudo.is_empty() {
        return Err(Error::invalid(
            "pseudo labels",
            format!("{} maps for {} target images", pseudo.len(), ds.n_target()),
        ));
    }
    if (pseudo.height, pseudo.width, pseudo.classes) != (ds.height(), ds.width(), cfg.segnet.class_count) {
        return Err(Error::invalid("pseudo labels", "shape does not match the dataset and segmenter"));
    }
    let mut student = student.clone();
    let mut run = SelfTrainRun {
        student: student.clone(),
        log: TrainLog::default(),
        losses: Vec::new(),
    };
    let iters = cfg.self_train_iters;
    if iters == 0 {
        return Ok(run);
    }
    let (h, w, b) = (ds.height(), ds.width(), cfg.batch_target);
    let mut g = Graph::new();
    let nodes = cfg.segnet.declare(&mut g, "student")?;
    let x = g.input("x_t", &[b, cfg.segnet.in_channels, h, w]);
    let yhat = g.input("pseudo", &[b, cfg.segnet.class_count, h, w]);
    let out = cfg.segnet.apply(&mut g, &nodes, x)?;
    let loss = self_train_loss(&mut g, out.logits, yhat)?;
    let ids = nodes.ids();

    let mut opt = OptimizerState::sgd(cfg.self_train_lr, cfg.momentum, cfg.weight_decay)?;
    let sched = PolySchedule::new(cfg.self_train_lr, cfg.power, iters)?;
    let mut sampler = Sampler::new(ds.n_target(), stream_rng(cfg.seed, "batch/self-train"));
    let mut segmenter = Segmenter::new(&cfg.segnet)?;
    let (mut acc, mut acc_n) = (0.0, 0usize);
    for it in 0..iters {
        let lr = sched.rate(it)?;
        let idx = sampler.next(b);
        let xt = ds.target_batch(&idx)?;
        let yt = pseudo.one_hot::<f32>(&idx)?;
        let (value, mut grads) = {
            let mut feeds = Feeds::new();
            nodes.bind(&mut feeds, &student)?;
            feeds.insert(x, &xt).insert(yhat, &yt);
            let vals = g.forward(&feeds).map_err(|e| numeric_abort(it, e))?;
            let v = f64::from(vals.get(loss).item());
            if !v.is_finite() {
                return Err(Error::NumericAbort {
                    iteration: it,
                    detail: format!("loss_self_train={v}"),
                });
            }
            (v, g.backward_wrt(&vals, loss, &ids)?)
        };
        let grads = nodes.collect(&g, &mut grads);
        opt.step(&mut student, &grads, lr)?;
        run.losses.push(value);
        acc += value;
        acc_n += 1;
        let done = it + 1;
        if done % cfg.eval_interval == 0 || done == iters {
            let report = evaluate(&mut segmenter, &student, ds, cfg.eval_images, None)?;
            run.log.push(LogRecord {
                iteration: done,
                lr_student: lr,
                lr_disc: 0.0,
                loss_seg: acc / acc_n as f64,
                loss_con: 0.0,
                loss_adv_g: 0.0,
                loss_adv_d: 0.0,
                miou_eval: report.miou,
            })?;
            acc = 0.0;
            acc_n = 0;
        }
    }
    run.student = student;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_and_majorities() {
        let p = Tensor::from_f64(&[1, 2, 1, 2], &[0.6, 0.5, 0.4, 0.5]).unwrap();
        let y = pseudo_label_maps::<f64>(&p).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 0.0, 0.0]);
    }
}
