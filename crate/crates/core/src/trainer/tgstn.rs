use super::{numeric_abort, Sampler, TgstnConfig, TgstnLog, TgstnRecord};
use crate::datagen::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::{
    mean_log_d, mean_log_one_minus_d, one_hot, perceptual_loss, semantic_consistency_loss, style_loss,
    tgstn_objective_node,
};
use crate::networks::{DiscSpec, SegNetSpec};
use crate::rng::stream_rng;
use crate::tensor::{Feeds, Graph, OptimizerState, ParamSet, PolySchedule};

#[derive(Clone, Debug)]
pub struct TgstnRun {
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    pub log: TgstnLog,
}

/// Alternating style-transfer training: per step one generator Adam step
/// on `L_style + λ_sem L_sem + λ_per L_per` (only the `G(x_s)` term of the
/// style loss depends on G), then one image-discriminator Adam step on
/// `−L_style` with `G(x_s)` detached. `phi` is the frozen source-trained
/// segmenter used for the semantic and perceptual terms.
pub fn train_tgstn(cfg: &TgstnConfig, ds: &DomainDataset, phi_spec: &SegNetSpec, phi: &ParamSet<f32>) -> Result<TgstnRun> {
    if !phi.is_frozen() {
        return Err(Error::invalid("phi", "the semantic network must be frozen before style training"));
    }
    cfg.validate()?;
    if !phi.congruent(&phi_spec.init(0)?) {
        return Err(Error::invalid("phi", "parameters do not match the segmenter spec"));
    }
    if phi_spec.class_count != ds.classes() || phi_spec.in_channels != 3 || cfg.generator.channels != 3 {
        return Err(Error::invalid("phi", "class or channel count does not match the dataset"));
    }
    let (h, w, c) = (ds.height(), ds.width(), ds.classes());
    phi_spec.check_input(h, w)?;
    let dspec = DiscSpec::new(3);
    dspec.geometry(h, w)?;
    let gspec = &cfg.generator;
    let (bs, bt) = (cfg.batch_source, cfg.batch_target);

    let mut gen = gspec.init(cfg.seed)?;
    let mut disc = dspec.init(cfg.seed)?.relabel("style-discriminator");
    let steps_per_epoch = ds.n_source().div_ceil(bs);
    let total = cfg.epochs * steps_per_epoch;
    let mut log = TgstnLog::default();
    if total == 0 {
        return Ok(TgstnRun {
            generator: gen,
            discriminator: disc,
            log,
        });
    }

    // generator side
    let mut gg = Graph::new();
    let g_nodes = gspec.declare(&mut gg, "gen")?;
    let phi_nodes = phi_spec.declare(&mut gg, "phi")?;
    let d_nodes = dspec.declare(&mut gg, "disc")?;
    let x_s = gg.input("x_s", &[bs, 3, h, w]);
    let y = gg.input("y_s", &[bs, c, h, w]);
    let gx = gspec.apply(&mut gg, &g_nodes, x_s)?;
    let phi_g = phi_spec.apply(&mut gg, &phi_nodes, gx)?;
    let phi_s = phi_spec.apply(&mut gg, &phi_nodes, x_s)?;
    let sem = semantic_consistency_loss(&mut gg, phi_g.logits, y)?;
    let per = perceptual_loss(&mut gg, phi_g.features, phi_s.features)?;
    let d_gx = dspec.apply(&mut gg, &d_nodes, gx)?;
    let style_g = if cfg.non_saturating {
        let l = mean_log_d(&mut gg, d_gx);
        gg.scale(l, -1.0)
    } else {
        mean_log_one_minus_d(&mut gg, d_gx)
    };
    let g_total = tgstn_objective_node(&mut gg, &cfg.loss_weights(), style_g, sem, per)?;
    let g_ids = g_nodes.ids();

    // discriminator side
    let mut dg = Graph::new();
    let dd_nodes = dspec.declare(&mut dg, "disc")?;
    let dx_t = dg.input("x_t", &[bt, 3, h, w]);
    let dx_s = dg.input("x_s", &[bs, 3, h, w]);
    let dx_g = dg.input("g_x_s", &[bs, 3, h, w]);
    let d_t = dspec.apply(&mut dg, &dd_nodes, dx_t)?;
    let d_s = dspec.apply(&mut dg, &dd_nodes, dx_s)?;
    let d_g = dspec.apply(&mut dg, &dd_nodes, dx_g)?;
    let style = style_loss(&mut dg, d_t, d_s, d_g)?;
    let d_loss = dg.scale(style, -1.0);
    let d_ids = dd_nodes.ids();

    let mut opt_g = OptimizerState::adam(cfg.g_lr, cfg.weight_decay)?;
    let mut opt_d = OptimizerState::adam(cfg.d_lr, cfg.weight_decay)?;
    let sched_g = PolySchedule::new(cfg.g_lr, cfg.power, total)?;
    let sched_d = PolySchedule::new(cfg.d_lr, cfg.power, total)?;
    let mut src = Sampler::new(ds.n_source(), stream_rng(cfg.seed, "tgstn/source"));
    let mut tgt = Sampler::new(ds.n_target(), stream_rng(cfg.seed, "tgstn/target"));

    for step in 0..total {
        let (lr_g, lr_d) = (sched_g.rate(step)?, sched_d.rate(step)?);
        let si = src.next(bs);
        let (xs, labels) = ds.source_batch(&si)?;
        let ys = one_hot::<f32>(&labels, bs, c, h, w)?;
        let xt = ds.target_batch(&tgt.next(bt))?;

        let (vals_g, gxv, mut grads) = {
            let mut feeds = Feeds::new();
            g_nodes.bind(&mut feeds, &gen)?;
            phi_nodes.bind(&mut feeds, phi)?;
            d_nodes.bind(&mut feeds, &disc)?;
            feeds.insert(x_s, &xs).insert(y, &ys);
            let v = gg.forward(&feeds).map_err(|e| numeric_abort(step, e))?;
            let losses = [style_g, sem, per, g_total].map(|n| f64::from(v.get(n).item()));
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::NumericAbort {
                    iteration: step,
                    detail: format!("loss_style_g={}, loss_sem={}, loss_per={}", losses[0], losses[1], losses[2]),
                });
            }
            (losses, v.get(gx).clone(), gg.backward_wrt(&v, g_total, &g_ids)?)
        };
        let grads = g_nodes.collect(&gg, &mut grads);
        opt_g.step(&mut gen, &grads, lr_g)?;

        let (style_d, mut dgrads) = {
            let mut feeds = Feeds::new();
            dd_nodes.bind(&mut feeds, &disc)?;
            feeds.insert(dx_t, &xt).insert(dx_s, &xs).insert(dx_g, &gxv);
            let v = dg.forward(&feeds).map_err(|e| numeric_abort(step, e))?;
            let s = f64::from(v.get(style).item());
            if !s.is_finite() {
                return Err(Error::NumericAbort {
                    iteration: step,
                    detail: format!("loss_style_d={s}"),
                });
            }
            (s, dg.backward_wrt(&v, d_loss, &d_ids)?)
        };
        let dgrads = dd_nodes.collect(&dg, &mut dgrads);
        opt_d.step(&mut disc, &dgrads, lr_d)?;

        log.records.push(TgstnRecord {
            step: step + 1,
            epoch: step / steps_per_epoch,
            lr_g,
            lr_d,
            loss_style_g: vals_g[0],
            loss_style_d: style_d,
            loss_sem: vals_g[1],
            loss_per: vals_g[2],
        });
    }
    Ok(TgstnRun {
        generator: gen,
        discriminator: disc,
        log,
    })
}
