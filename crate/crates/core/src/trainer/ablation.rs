use std::collections::HashMap;
use std::path::Path;

use super::eval::{evaluate, StyleSource};
use super::selftrain::{generate_pseudo_labels, self_train};
use super::{train_segan, AblationMode, SeganRun, TrainConfig, TrainLog};
use crate::datagen::DomainDataset;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::networks::{EvalModel, ModelBundle, Segmenter};

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub mode: AblationMode,
    /// Final score on every labelled target image.
    pub report: MetricReport,
    pub bundle: ModelBundle,
    /// Adversarial-stage log.
    pub log: TrainLog,
    pub self_train_log: Option<TrainLog>,
}

/// Runs one rung of the cumulative ladder: the adversarial stage with the
/// mode's flags, self-training from the teacher's pseudo labels for `full`,
/// and multi-scale testing for `full-mst`. Adversarial-stage checkpoints
/// go to `checkpoints` when given.
pub fn run_ablation(
    mode: AblationMode,
    cfg: &TrainConfig,
    ds: &DomainDataset,
    style: &StyleSource,
    checkpoints: Option<&Path>,
) -> Result<AblationResult> {
    Ok(ladder(&[mode], cfg, ds, style, checkpoints)?.remove(0))
}

/// Several rungs at once; rungs sharing a stage (`at-se-aug`, `full`,
/// `full-mst`) train it once. Results come back in the order asked.
pub fn run_ladder(
    modes: &[AblationMode],
    cfg: &TrainConfig,
    ds: &DomainDataset,
    style: &StyleSource,
) -> Result<Vec<AblationResult>> {
    ladder(modes, cfg, ds, style, None)
}

fn ladder(
    modes: &[AblationMode],
    cfg: &TrainConfig,
    ds: &DomainDataset,
    style: &StyleSource,
    checkpoints: Option<&Path>,
) -> Result<Vec<AblationResult>> {
    let mut stage1: HashMap<(bool, bool, bool), SeganRun> = HashMap::new();
    let mut stage2: Option<(ModelBundle, TrainLog)> = None;
    let mut seg = Segmenter::new(&cfg.segnet)?;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let c = cfg.clone().with_mode(mode);
        let f = c.flags;
        let key = (f.at, f.se, f.aug);
        if !stage1.contains_key(&key) {
            stage1.insert(key, train_segan(&c, ds, style, checkpoints)?);
        }
        let run = &stage1[&key];
        let (bundle, st_log) = if f.st {
            if stage2.is_none() {
                let pseudo = generate_pseudo_labels(&c.segnet, &run.bundle.teacher, ds)?;
                let st = self_train(&c, &run.bundle.student, &pseudo, ds)?;
                let mut b = run.bundle.clone();
                b.student = st.student;
                b.evaluate = EvalModel::Student;
                stage2 = Some((b, st.log));
            }
            let (b, l) = stage2.as_ref().unwrap();
            (b.clone(), Some(l.clone()))
        } else {
            (run.bundle.clone(), None)
        };
        let scales = f.mst.then_some(c.mst_scales.as_slice());
        let report = evaluate(&mut seg, bundle.eval_params(), ds, 0, scales)?;
        out.push(AblationResult {
            mode,
            report,
            bundle,
            log: run.log.clone(),
            self_train_log: st_log,
        });
    }
    Ok(out)
}
