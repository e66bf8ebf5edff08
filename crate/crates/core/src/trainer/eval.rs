use crate::datagen::{apply_domain_style, from_nchw, to_nchw, Appearance, DomainDataset};
use crate::error::{Error, Result};
use crate::metrics::{iou_report, ConfusionMatrix, MetricReport};
use crate::networks::{argmax_labels, Segmenter, StyleGenSpec, StyleGraph};
use crate::tensor::ParamSet;

const EVAL_BATCH: usize = 20;

/// Scores `params` on the first `count` target images (all when 0),
/// single-scale or averaged over `scales`.
pub fn evaluate(
    seg: &mut Segmenter,
    params: &ParamSet<f32>,
    ds: &DomainDataset,
    count: usize,
    scales: Option<&[f64]>,
) -> Result<MetricReport> {
    iou_report(&target_confusion(seg, params, ds, count, scales)?, None)
}

/// Confusion matrix behind [`evaluate`].
pub fn target_confusion(
    seg: &mut Segmenter,
    params: &ParamSet<f32>,
    ds: &DomainDataset,
    count: usize,
    scales: Option<&[f64]>,
) -> Result<ConfusionMatrix> {
    let classes = ds.classes();
    if seg.spec().class_count != classes {
        return Err(Error::invalid(
            "class_count",
            format!("model predicts {} classes, dataset has {classes}", seg.spec().class_count),
        ));
    }
    let n = if count == 0 { ds.n_target() } else { count.min(ds.n_target()) };
    let labels = ds.evaluation_labels();
    let mut cm = ConfusionMatrix::new(classes);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = ds.target_batch(chunk)?;
        let pred = match scales {
            Some(s) => argmax_labels(&seg.multi_scale(params, &x, s)?),
            None => seg.predict(params, &x)?.labels,
        };
        let gt: Vec<u8> = chunk.iter().flat_map(|&i| labels.get(i).iter().copied()).collect();
        cm.add(&pred, &gt)?;
    }
    Ok(cm)
}

/// Where the style-transferred source images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum StyleSource {
    None,
    /// The known target appearance applied directly (no pixel noise).
    Oracle(Appearance),
    Generator { spec: StyleGenSpec, params: ParamSet<f32> },
}

impl StyleSource {
    /// Oracle transform towards the dataset's own target appearance.
    pub fn oracle_for(ds: &DomainDataset) -> Self {
        StyleSource::Oracle(ds.manifest.target.appearance.clone())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, StyleSource::None)
    }

    /// Transferred copy of every source image, in source order.
    pub fn transfer(&self, ds: &DomainDataset) -> Result<Option<Vec<Vec<f32>>>> {
        let (h, w) = (ds.height(), ds.width());
        match self {
            StyleSource::None => Ok(None),
            StyleSource::Oracle(a) => Ok(Some(
                ds.source().iter().map(|s| apply_domain_style(&s.image, h, w, a)).collect(),
            )),
            StyleSource::Generator { spec, params } => {
                let g = StyleGraph::new(spec, 1, h, w)?;
                let mut out = Vec::with_capacity(ds.n_source());
                for s in ds.source() {
                    let y = g.run(params, &to_nchw(&[s.image.as_slice()], h, w)?)?;
                    out.extend(from_nchw(&y));
                }
                Ok(Some(out))
            }
        }
    }
}
