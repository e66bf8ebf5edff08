use std::path::Path;

use super::eval::{evaluate, StyleSource};
use super::{ema_update, numeric_abort, LogRecord, Sampler, TrainConfig, TrainLog};
use crate::datagen::{to_nchw, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{adversarial_loss, consistency_loss, mean_log_d, one_hot, seg_loss, segan_objective_node};
use crate::networks::{save_checkpoint, DiscSpec, EvalModel, ModelBundle, SegGraph, Segmenter};
use crate::rng::stream_rng;
use crate::tensor::{Feeds, Graph, NodeId, OptimizerKind, OptimizerState, ParamNodes, ParamSet, PolySchedule, Tensor};

/// Result of the adversarial self-ensembling stage.
#[derive(Clone, Debug)]
pub struct SeganRun {
    pub bundle: ModelBundle,
    pub log: TrainLog,
}

/// Student-side graph: every term of the student objective.
struct StudentNet {
    graph: Graph,
    student: ParamNodes,
    disc: Option<ParamNodes>,
    x_s: NodeId,
    y: NodeId,
    x_g: Option<NodeId>,
    x_t: Option<NodeId>,
    teacher_probs: Option<NodeId>,
    probs: Vec<NodeId>,
    seg: NodeId,
    con: Option<NodeId>,
    adv: Option<NodeId>,
    total: NodeId,
}

/// Discriminator-side graph on detached softmax maps: minimises `−L_adv`.
struct DiscNet {
    graph: Graph,
    params: ParamNodes,
    inputs: Vec<NodeId>,
    loss: NodeId,
}

fn build_student(cfg: &TrainConfig, disc: &DiscSpec, h: usize, w: usize) -> Result<StudentNet> {
    let spec = &cfg.segnet;
    let (c, f) = (spec.class_count, cfg.flags);
    let mut g = Graph::new();
    let student = spec.declare(&mut g, "student")?;
    let x_s = g.input("x_s", &[cfg.batch_source, spec.in_channels, h, w]);
    let y = g.input("y_s", &[cfg.batch_source, c, h, w]);
    let out_s = spec.apply(&mut g, &student, x_s)?;
    let (x_g, out_g) = if f.aug {
        let x = g.input("x_g", &[cfg.batch_source, spec.in_channels, h, w]);
        (Some(x), Some(spec.apply(&mut g, &student, x)?))
    } else {
        (None, None)
    };
    let seg = seg_loss(&mut g, out_s.logits, out_g.map(|o| o.logits), y)?;

    let (mut x_t, mut p_t) = (None, None);
    if f.at || f.se {
        let x = g.input("x_t", &[cfg.batch_target, spec.in_channels, h, w]);
        let out = spec.apply(&mut g, &student, x)?;
        x_t = Some(x);
        p_t = Some(g.softmax(out.logits)?);
    }
    let (mut teacher_probs, mut con) = (None, None);
    if f.se {
        let tp = g.input("teacher_probs", &[cfg.batch_target, c, h, w]);
        con = Some(consistency_loss(&mut g, p_t.unwrap(), tp)?);
        teacher_probs = Some(tp);
    }
    let (mut disc_nodes, mut adv, mut probs) = (None, None, Vec::new());
    if f.at {
        let dp = disc.declare(&mut g, "disc")?;
        let p_s = g.softmax(out_s.logits)?;
        let d_s = disc.apply(&mut g, &dp, p_s)?;
        probs.push(p_s);
        let d_g = match out_g {
            Some(o) => {
                let p = g.softmax(o.logits)?;
                probs.push(p);
                Some(disc.apply(&mut g, &dp, p)?)
            }
            None => None,
        };
        let d_t = disc.apply(&mut g, &dp, p_t.unwrap())?;
        probs.push(p_t.unwrap());
        adv = Some(if cfg.adv_target_only {
            mean_log_d(&mut g, d_t)
        } else {
            adversarial_loss(&mut g, d_s, d_g, d_t)?
        });
        disc_nodes = Some(dp);
    }
    let total = segan_objective_node(&mut g, &cfg.loss_weights(), seg, con, adv)?;
    Ok(StudentNet {
        graph: g,
        student,
        disc: disc_nodes,
        x_s,
        y,
        x_g,
        x_t,
        teacher_probs,
        probs,
        seg,
        con,
        adv,
        total,
    })
}

fn build_disc(cfg: &TrainConfig, disc: &DiscSpec, h: usize, w: usize) -> Result<DiscNet> {
    let c = cfg.segnet.class_count;
    let mut g = Graph::new();
    let params = disc.declare(&mut g, "disc")?;
    let p_s = g.input("p_s", &[cfg.batch_source, c, h, w]);
    let d_s = disc.apply(&mut g, &params, p_s)?;
    let mut inputs = vec![p_s];
    let d_g = if cfg.flags.aug {
        let p = g.input("p_g", &[cfg.batch_source, c, h, w]);
        inputs.push(p);
        Some(disc.apply(&mut g, &params, p)?)
    } else {
        None
    };
    let p_t = g.input("p_t", &[cfg.batch_target, c, h, w]);
    inputs.push(p_t);
    let d_t = disc.apply(&mut g, &params, p_t)?;
    let adv = adversarial_loss(&mut g, d_s, d_g, d_t)?;
    let loss = g.scale(adv, -1.0);
    Ok(DiscNet {
        graph: g,
        params,
        inputs,
        loss,
    })
}

fn check_setup(cfg: &TrainConfig, ds: &DomainDataset, style: &StyleSource) -> Result<()> {
    cfg.validate()?;
    if cfg.segnet.class_count != ds.classes() {
        return Err(Error::invalid(
            "segnet.class_count",
            format!("{} but the dataset has {} classes", cfg.segnet.class_count, ds.classes()),
        ));
    }
    if cfg.segnet.in_channels != 3 {
        return Err(Error::invalid("segnet.in_channels", "images have 3 channels"));
    }
    cfg.segnet.check_input(ds.height(), ds.width())?;
    if cfg.flags.at {
        cfg.disc_spec().geometry(ds.height(), ds.width())?;
    }
    if cfg.flags.aug && style.is_none() {
        return Err(Error::invalid("flags.aug", "augmentation needs a style transform"));
    }
    if ds.n_source() == 0 || ds.n_target() == 0 {
        return Err(Error::invalid("dataset", "both domains need images"));
    }
    Ok(())
}

fn bundle(cfg: &TrainConfig, student: &ParamSet<f32>, teacher: &ParamSet<f32>, disc: &Option<ParamSet<f32>>, style: &StyleSource) -> ModelBundle {
    ModelBundle {
        segnet: cfg.segnet.clone(),
        student: student.clone(),
        teacher: teacher.clone(),
        discriminator: disc.as_ref().map(|p| (cfg.disc_spec(), p.clone())),
        generator: match style {
            StyleSource::Generator { spec, params } if cfg.flags.aug => Some((spec.clone(), params.clone())),
            _ => None,
        },
        phi: None,
        evaluate: if cfg.flags.se { EvalModel::Teacher } else { EvalModel::Student },
    }
}

/// Adversarial self-ensembling stage. Per iteration: one student SGD step
/// on `L_seg + λ_con L_con + λ_adv L_adv`, then one discriminator Adam
/// step on `−L_adv` (same batch, student maps detached), then the EMA
/// teacher update. The evaluated model is the teacher when SE is on and
/// the student otherwise.
///
/// The teacher starts as a copy of the student. Intermediate checkpoints
/// go to `checkpoints` as `ckpt_{iter:06}.sgck` when an interval is set.
pub fn train_segan(
    cfg: &TrainConfig,
    ds: &DomainDataset,
    style: &StyleSource,
    checkpoints: Option<&Path>,
) -> Result<SeganRun> {
    check_setup(cfg, ds, style)?;
    let (h, w, c) = (ds.height(), ds.width(), ds.classes());
    let f = cfg.flags;
    let disc_spec = cfg.disc_spec();
    let transferred = if f.aug { style.transfer(ds)? } else { None };

    let mut student = cfg.segnet.init(cfg.seed)?.relabel("student");
    let mut teacher = student.clone().relabel("teacher");
    let mut disc = if f.at { Some(disc_spec.init(cfg.seed)?) } else { None };
    let mut opt_s = OptimizerState::sgd(cfg.student_lr, cfg.momentum, cfg.weight_decay)?;
    let adam = OptimizerKind::Adam {
        beta1: cfg.disc_beta1,
        beta2: cfg.disc_beta2,
        epsilon: 1e-8,
    };
    let mut opt_d = OptimizerState::new(adam, cfg.disc_lr, cfg.weight_decay)?;
    let sched_s = PolySchedule::new(cfg.student_lr, cfg.power, cfg.maxiter)?;
    let sched_d = PolySchedule::new(cfg.disc_lr, cfg.power, cfg.maxiter)?;

    let net = build_student(cfg, &disc_spec, h, w)?;
    let dnet = if f.at { Some(build_disc(cfg, &disc_spec, h, w)?) } else { None };
    let teacher_net = if f.se { Some(SegGraph::new(&cfg.segnet, cfg.batch_target, h, w)?) } else { None };
    let student_ids = net.student.ids();
    let mut segmenter = Segmenter::new(&cfg.segnet)?;

    let mut src = Sampler::new(ds.n_source(), stream_rng(cfg.seed, "batch/source"));
    let mut tgt = Sampler::new(ds.n_target(), stream_rng(cfg.seed, "batch/target"));
    let mut log = TrainLog::default();
    let mut acc = [0f64; 4];
    let mut acc_n = 0usize;

    for it in 0..cfg.maxiter {
        let lr_s = sched_s.rate(it)?;
        let lr_d = if f.at { sched_d.rate(it)? } else { 0.0 };
        let si = src.next(cfg.batch_source);
        let ti = tgt.next(cfg.batch_target);
        let (x_s, labels) = ds.source_batch(&si)?;
        let y = one_hot::<f32>(&labels, si.len(), c, h, w)?;
        let x_g = match &transferred {
            Some(imgs) => Some(to_nchw(&si.iter().map(|&i| imgs[i].as_slice()).collect::<Vec<_>>(), h, w)?),
            None => None,
        };
        let x_t = if net.x_t.is_some() { Some(ds.target_batch(&ti)?) } else { None };
        let teacher_probs = match (&teacher_net, &x_t) {
            (Some(tn), Some(x)) => Some(tn.run(&teacher, x).map_err(|e| numeric_abort(it, e))?.0),
            _ => None,
        };

        let (values, disc_inputs, mut grads) = {
            let mut feeds = Feeds::new();
            net.student.bind(&mut feeds, &student)?;
            if let (Some(nodes), Some(p)) = (&net.disc, &disc) {
                nodes.bind(&mut feeds, p)?;
            }
            feeds.insert(net.x_s, &x_s).insert(net.y, &y);
            if let (Some(n), Some(x)) = (net.x_g, &x_g) {
                feeds.insert(n, x);
            }
            if let (Some(n), Some(x)) = (net.x_t, &x_t) {
                feeds.insert(n, x);
            }
            if let (Some(n), Some(x)) = (net.teacher_probs, &teacher_probs) {
                feeds.insert(n, x);
            }
            let vals = net.graph.forward(&feeds).map_err(|e| numeric_abort(it, e))?;
            let get = |n: Option<NodeId>| n.map_or(0.0, |n| f64::from(vals.get(n).item()));
            let losses = [get(Some(net.seg)), get(net.con), get(net.adv), get(Some(net.total))];
            if losses.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericAbort {
                    iteration: it,
                    detail: format!(
                        "loss_seg={}, loss_con={}, loss_adv_g={}, total={}",
                        losses[0], losses[1], losses[2], losses[3]
                    ),
                });
            }
            let grads = net.graph.backward_wrt(&vals, net.total, &student_ids)?;
            let probs: Vec<Tensor<f32>> = net.probs.iter().map(|&p| vals.get(p).clone()).collect();
            (losses, probs, grads)
        };
        let g = net.student.collect(&net.graph, &mut grads);
        opt_s.step(&mut student, &g, lr_s)?;

        let mut loss_d = 0.0;
        if let (Some(dn), Some(p)) = (&dnet, &mut disc) {
            let mut dgrads = {
                let mut feeds = Feeds::new();
                dn.params.bind(&mut feeds, p)?;
                for (&n, t) in dn.inputs.iter().zip(&disc_inputs) {
                    feeds.insert(n, t);
                }
                let vals = dn.graph.forward(&feeds).map_err(|e| numeric_abort(it, e))?;
                loss_d = f64::from(vals.get(dn.loss).item());
                if !loss_d.is_finite() {
                    return Err(Error::NumericAbort {
                        iteration: it,
                        detail: format!("loss_adv_d={loss_d}"),
                    });
                }
                dn.graph.backward_wrt(&vals, dn.loss, &dn.params.ids())?
            };
            let g = dn.params.collect(&dn.graph, &mut dgrads);
            opt_d.step(p, &g, lr_d)?;
        }
        ema_update(&mut teacher, &student, cfg.alpha)?;
        if !student.is_finite() {
            return Err(Error::NumericAbort {
                iteration: it,
                detail: "student parameters became non-finite".into(),
            });
        }

        for (a, v) in acc.iter_mut().zip([values[0], values[1], values[2], loss_d]) {
            *a += v;
        }
        acc_n += 1;
        let done = it + 1;
        if done % cfg.eval_interval == 0 || done == cfg.maxiter {
            let eval_params = if f.se { &teacher } else { &student };
            let report = evaluate(&mut segmenter, eval_params, ds, cfg.eval_images, None)?;
            let k = acc_n as f64;
            log.push(LogRecord {
                iteration: done,
                lr_student: lr_s,
                lr_disc: lr_d,
                loss_seg: acc[0] / k,
                loss_con: acc[1] / k,
                loss_adv_g: acc[2] / k,
                loss_adv_d: acc[3] / k,
                miou_eval: report.miou,
            })?;
            acc = [0.0; 4];
            acc_n = 0;
        }
        if let Some(dir) = checkpoints {
            if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 {
                let b = bundle(cfg, &student, &teacher, &disc, style);
                save_checkpoint(&dir.join(format!("ckpt_{done:06}.sgck")), &b.to_checkpoint(cfg.seed, done)?)?;
            }
        }
    }
    Ok(SeganRun {
        bundle: bundle(cfg, &student, &teacher, &disc, style),
        log,
    })
}
