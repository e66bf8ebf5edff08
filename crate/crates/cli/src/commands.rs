use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segan::bounds::{bound_report, measure_discriminator, BoundReport, BoundSpec, CoverVariant, ReferencePolicy};
use segan::datagen::{appearance_gap, DatasetConfig, DomainDataset};
use segan::metrics::{iou_report, stability_index, transfer_gain, MetricReport, TransferGain, DEFAULT_WINDOW_FRACTION};
use segan::networks::{load_checkpoint, save_checkpoint, DiscSpec, EvalModel, ModelBundle, Segmenter};
use segan::tensor::{ParamSet, Tensor};
use segan::trainer::{
    run_ablation, target_confusion, train_segan, AblationMode, StyleSource, TgstnConfig, TrainConfig,
};

use crate::output::{io_err, load_config, prepare_out, read_json, write_json, write_text, CliError, Run};
use crate::Common;

pub const REPORT_JSON: &str = "report.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const SELF_TRAIN_LOG: &str = "self_train_log.csv";
pub const FINAL_CKPT: &str = "final.sgck";
pub const TGSTN_CKPT: &str = "tgstn.sgck";

/// Scores written by `train` and `eval`, read back by `export-plots`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub mode: Option<String>,
    pub model: EvalModel,
    pub mst_scales: Option<Vec<f64>>,
    pub metrics: MetricReport,
    /// Tail standard deviation of the evaluation curve; `None` when too short.
    pub stability: Option<f64>,
    pub gains: Option<TransferGain>,
}

impl Report {
    fn csv(&self) -> String {
        let mut s = String::from("class,iou,gain\n");
        let gains = self.gains.as_ref().map(|g| g.gains.as_slice());
        for (c, iou) in self.metrics.per_class_iou.iter().enumerate() {
            let gain = gains.and_then(|g| g[c]);
            s.push_str(&format!("{c},{},{}\n", opt(*iou), opt(gain)));
        }
        s.push_str(&format!("miou,{},\n", self.metrics.miou));
        if let Some(m) = self.metrics.miou_subset {
            s.push_str(&format!("miou_subset,{m},\n"));
        }
        s
    }

    fn write(&self, run: &mut Run) -> Result<(), CliError> {
        write_json(&run.out(REPORT_JSON), self)?;
        write_text(&run.out("report.csv"), &self.csv())?;
        run.output(REPORT_JSON)?;
        run.output("report.csv")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn load_dataset(run: &mut Run, dir: &Path) -> Result<DomainDataset, CliError> {
    let ds = DomainDataset::load(dir)?;
    run.input("dataset", &dir.join("manifest.json"))?;
    Ok(ds)
}

fn load_bundle(run: &mut Run, role: &str, path: &Path) -> Result<(ModelBundle, u64), CliError> {
    let ckpt = load_checkpoint(path)?;
    run.input(role, path)?;
    Ok((ModelBundle::from_checkpoint(&ckpt)?, ckpt.manifest.seed))
}

fn save_bundle(run: &mut Run, name: &str, bundle: &ModelBundle, seed: u64, iteration: usize) -> Result<(), CliError> {
    save_checkpoint(&run.out(name), &bundle.to_checkpoint(seed, iteration)?)?;
    run.output(name)
}

/// Writes `abort.json` next to the partial outputs before passing a
/// numeric abort on.
fn guard<T>(out: &Path, r: segan::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        let e = CliError::from(e);
        if let CliError::Numeric(msg) = &e {
            let _ = write_json(&out.join("abort.json"), &serde_json::json!({ "error": msg }));
        }
        e
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenDataConfig {
    seed: u64,
    dataset: DatasetConfig,
}

pub fn gen_data(common: &Common, argv: &[String]) -> Result<(), CliError> {
    let mut cfg: GenDataConfig = load_config(common.config.as_deref(), GenDataConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.dataset.validate()?;
    prepare_out(&common.out, common.force)?;
    let mut run = Run::start("gen-data", argv, &common.out, &cfg, cfg.seed)?;
    let ds = cfg.dataset.generate(cfg.seed)?;
    ds.save(&common.out)?;
    run.output("manifest.json")?;
    let severity = ds.severity()?;
    write_json(&run.out("severity.json"), &severity)?;
    run.output("severity.json")?;
    run.finish()?;
    println!(
        "{} source / {} target scenes; appearance gap {:.4}, layout gap {:.4}",
        ds.n_source(),
        ds.n_target(),
        severity.appearance_gap,
        severity.layout_gap
    );
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TgstnCommandConfig {
    tgstn: TgstnConfig,
    /// Source-only training of the semantic network when no `--phi` is given.
    phi_train: TrainConfig,
}

pub fn train_tgstn(common: &Common, argv: &[String], data: &Path, phi_path: Option<&Path>) -> Result<(), CliError> {
    let mut cfg: TgstnCommandConfig = load_config(common.config.as_deref(), TgstnCommandConfig::default())?;
    if let Some(s) = common.seed {
        cfg.tgstn.seed = s;
        cfg.phi_train.seed = s;
    }
    cfg.phi_train = cfg.phi_train.with_mode(AblationMode::NoAdapt);
    cfg.tgstn.validate()?;
    cfg.phi_train.validate()?;
    prepare_out(&common.out, common.force)?;
    let mut run = Run::start("train-tgstn", argv, &common.out, &cfg, cfg.tgstn.seed)?;
    let ds = load_dataset(&mut run, data)?;

    let (spec, mut phi) = match phi_path {
        Some(p) => {
            let (b, _) = load_bundle(&mut run, "phi", p)?;
            let phi = b.phi.clone().unwrap_or_else(|| b.eval_params().clone());
            (b.segnet, phi)
        }
        None => {
            let r = guard(&common.out, train_segan(&cfg.phi_train, &ds, &StyleSource::None, None))?;
            (cfg.phi_train.segnet.clone(), r.bundle.student)
        }
    };
    phi.freeze();
    let t = guard(&common.out, segan::trainer::train_tgstn(&cfg.tgstn, &ds, &spec, &phi))?;

    write_text(&run.out("tgstn_log.csv"), &t.log.to_csv())?;
    run.output("tgstn_log.csv")?;

    let style = StyleSource::Generator {
        spec: cfg.tgstn.generator.clone(),
        params: t.generator.clone(),
    };
    let moved = style.transfer(&ds)?.ok_or_else(|| CliError::Config("generator produced no images".into()))?;
    let restyled = ds.with_source_images(moved)?;
    let target = || ds.target_images().iter().map(Vec::as_slice);
    let raw = appearance_gap(ds.source().iter().map(|s| s.image.as_slice()), target())?;
    let transferred = appearance_gap(restyled.source().iter().map(|s| s.image.as_slice()), target())?;
    let labels_unchanged = restyled.source().iter().zip(ds.source()).all(|(a, b)| a.label == b.label);
    write_json(
        &run.out("severity.json"),
        &serde_json::json!({
            "appearance_gap_raw": raw,
            "appearance_gap_transferred": transferred,
            "labels_unchanged": labels_unchanged,
        }),
    )?;
    run.output("severity.json")?;

    let frozen = |label: &str| {
        let mut p = phi.clone().relabel(label);
        p.freeze();
        p
    };
    let bundle = ModelBundle {
        segnet: spec,
        student: frozen("student"),
        teacher: frozen("teacher"),
        discriminator: Some((DiscSpec::new(3), t.discriminator)),
        generator: Some((cfg.tgstn.generator.clone(), t.generator)),
        phi: Some(phi),
        evaluate: EvalModel::Student,
    };
    save_bundle(&mut run, TGSTN_CKPT, &bundle, cfg.tgstn.seed, t.log.len())?;
    run.finish()?;
    println!("appearance gap {raw:.4} -> {transferred:.4}; labels unchanged: {labels_unchanged}");
    Ok(())
}

pub fn train(
    common: &Common,
    argv: &[String],
    data: &Path,
    mode: &str,
    tgstn: Option<&Path>,
    oracle_style: bool,
) -> Result<(), CliError> {
    let mode: AblationMode = mode.parse()?;
    let mut cfg: TrainConfig = load_config(common.config.as_deref(), TrainConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    prepare_out(&common.out, common.force)?;
    let mut run = Run::start("train", argv, &common.out, &cfg.clone().with_mode(mode), cfg.seed)?;
    let ds = load_dataset(&mut run, data)?;

    let style = if oracle_style {
        StyleSource::oracle_for(&ds)
    } else if let Some(p) = tgstn {
        let (b, _) = load_bundle(&mut run, "tgstn", p)?;
        let (spec, params) = b
            .generator
            .ok_or_else(|| CliError::Config(format!("{} holds no style generator", p.display())))?;
        StyleSource::Generator { spec, params }
    } else {
        StyleSource::None
    };

    let ckpt_dir = (cfg.checkpoint_interval > 0).then(|| common.out.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let r = guard(&common.out, run_ablation(mode, &cfg, &ds, &style, ckpt_dir.as_deref()))?;

    if let Some(d) = &ckpt_dir {
        let mut names: Vec<String> = fs::read_dir(d)
            .map_err(|e| io_err(d, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect();
        names.sort();
        for n in names {
            run.output(&format!("checkpoints/{n}"))?;
        }
    }
    r.log.write(&run.out(TRAIN_LOG))?;
    run.output(TRAIN_LOG)?;
    if let Some(l) = &r.self_train_log {
        l.write(&run.out(SELF_TRAIN_LOG))?;
        run.output(SELF_TRAIN_LOG)?;
    }
    let iterations = cfg.maxiter + r.self_train_log.as_ref().map_or(0, |_| cfg.self_train_iters);
    save_bundle(&mut run, FINAL_CKPT, &r.bundle, cfg.seed, iterations)?;

    let report = Report {
        mode: Some(mode.name().into()),
        model: r.bundle.evaluate,
        mst_scales: mode.flags().mst.then(|| cfg.mst_scales.clone()),
        stability: stability_index(&r.log.miou_curve(), DEFAULT_WINDOW_FRACTION).ok(),
        metrics: r.report,
        gains: None,
    };
    report.write(&mut run)?;
    run.finish()?;
    println!("{mode}: mIoU {:.4}", report.metrics.miou);
    Ok(())
}

pub struct EvalFlags {
    pub mst: Option<Vec<f64>>,
    pub model: Option<String>,
    pub subset: Option<Vec<usize>>,
    pub baseline: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalSettings<'a> {
    checkpoint: &'a Path,
    mst: &'a Option<Vec<f64>>,
    model: EvalModel,
    subset: &'a Option<Vec<usize>>,
}

pub fn eval(common: &Common, argv: &[String], checkpoint: &Path, data: &Path, flags: EvalFlags) -> Result<(), CliError> {
    if common.config.is_some() {
        return Err(CliError::Config("eval takes its settings from flags, not --config".into()));
    }
    prepare_out(&common.out, common.force)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let mut bundle = ModelBundle::from_checkpoint(&ckpt)?;
    if let Some(m) = &flags.model {
        bundle.evaluate = serde_json::from_value(serde_json::Value::String(m.clone()))
            .map_err(|_| CliError::Config(format!("unknown model `{m}`; expected student or teacher")))?;
    }
    if let Some(s) = &flags.mst {
        if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Config("--mst scales must be positive".into()));
        }
    }
    let settings = EvalSettings {
        checkpoint,
        mst: &flags.mst,
        model: bundle.evaluate,
        subset: &flags.subset,
    };
    let mut run = Run::start("eval", argv, &common.out, &settings, ckpt.manifest.seed)?;
    run.input("checkpoint", checkpoint)?;
    let ds = load_dataset(&mut run, data)?;

    let mut seg = Segmenter::new(&bundle.segnet)?;
    let cm = target_confusion(&mut seg, bundle.eval_params(), &ds, 0, flags.mst.as_deref())?;
    let metrics = iou_report(&cm, flags.subset.as_deref())?;
    let gains = match &flags.baseline {
        Some(p) => {
            let base: Report = read_json(p)?;
            run.input("baseline", p)?;
            Some(transfer_gain(&metrics, &base.metrics)?)
        }
        None => None,
    };
    let report = Report {
        mode: None,
        model: bundle.evaluate,
        mst_scales: flags.mst.clone(),
        metrics,
        stability: None,
        gains,
    };
    report.write(&mut run)?;
    run.finish()?;
    println!("mIoU {:.4}", report.metrics.miou);
    if let Some(m) = report.metrics.miou_subset {
        println!("mIoU* {m:.4}");
    }
    Ok(())
}

pub struct BoundFlags {
    pub policy: Option<String>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub phi: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BoundsConfig {
    policy: ReferencePolicy,
    epsilon: f64,
    delta: f64,
    phi: f64,
    /// Target images in the input batch; 0 means all.
    samples: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            policy: ReferencePolicy::Init,
            epsilon: 1.0,
            delta: 0.05,
            phi: 0.0,
            samples: 0,
        }
    }
}

#[derive(Serialize)]
struct BoundsOutput {
    spec: BoundSpec,
    reports: Vec<BoundReport>,
}

pub fn bounds(common: &Common, argv: &[String], checkpoint: &Path, data: &Path, flags: BoundFlags) -> Result<(), CliError> {
    let mut cfg: BoundsConfig = load_config(common.config.as_deref(), BoundsConfig::default())?;
    if let Some(p) = &flags.policy {
        cfg.policy = serde_json::from_value(serde_json::Value::String(p.clone()))
            .map_err(|_| CliError::Config(format!("unknown policy `{p}`; expected zero or init")))?;
    }
    cfg.epsilon = flags.epsilon.unwrap_or(cfg.epsilon);
    cfg.delta = flags.delta.unwrap_or(cfg.delta);
    cfg.phi = flags.phi.unwrap_or(cfg.phi);
    cfg.samples = flags.samples.unwrap_or(cfg.samples);
    prepare_out(&common.out, common.force)?;

    let ckpt = load_checkpoint(checkpoint)?;
    let bundle = ModelBundle::from_checkpoint(&ckpt)?;
    let seed = common.seed.unwrap_or(ckpt.manifest.seed);
    let mut run = Run::start("bounds", argv, &common.out, &cfg, seed)?;
    run.input("checkpoint", checkpoint)?;
    let ds = load_dataset(&mut run, data)?;

    let (dspec, dparams) = bundle
        .discriminator
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{} holds no discriminator", checkpoint.display())))?;
    let n = match cfg.samples {
        0 => ds.n_target(),
        k => k.min(ds.n_target()),
    };
    if n == 0 {
        return Err(CliError::Config("no target images to measure on".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let inputs = if dspec.in_channels == ds.classes() {
        segmenter_probs(&bundle.segnet, bundle.eval_params(), &ds, &idx)?
    } else if dspec.in_channels == 3 {
        ds.target_batch(&idx)?
    } else {
        return Err(CliError::Config(format!(
            "discriminator takes {} channels; neither class maps nor images",
            dspec.in_channels
        )));
    };
    let reference: Option<ParamSet<f32>> = match cfg.policy {
        ReferencePolicy::Zero => None,
        ReferencePolicy::Init => Some(dspec.init(seed)?),
    };
    let spec = guard(
        &common.out,
        measure_discriminator(dspec, dparams, reference.as_ref(), &inputs, cfg.epsilon, cfg.delta, cfg.phi),
    )?;
    let reports = [CoverVariant::Statement, CoverVariant::ProofFinalLine]
        .into_iter()
        .map(|v| bound_report(&spec, v))
        .collect::<segan::Result<Vec<_>>>()?;
    write_json(&run.out("bounds.json"), &BoundsOutput { spec, reports: reports.clone() })?;
    run.output("bounds.json")?;
    run.finish()?;
    for r in &reports {
        println!(
            "{}: log N = {:.4e}, R = {:.4e}, generalization bound {:.4e}",
            serde_json::to_value(r.variant).map(|v| v.as_str().unwrap_or("").to_owned()).unwrap_or_default(),
            r.log_cover,
            r.r,
            r.gen_bound
        );
    }
    Ok(())
}

/// Softmax maps of the target images `idx`, `[n, C, h, w]`.
fn segmenter_probs(
    spec: &segan::networks::SegNetSpec,
    params: &ParamSet<f32>,
    ds: &DomainDataset,
    idx: &[usize],
) -> Result<Tensor<f32>, CliError> {
    let mut seg = Segmenter::new(spec)?;
    let mut data = Vec::new();
    for chunk in idx.chunks(20) {
        data.extend_from_slice(seg.probs(params, &ds.target_batch(chunk)?)?.data());
    }
    Ok(Tensor::new(&[idx.len(), ds.classes(), ds.height(), ds.width()], data)?)
}

