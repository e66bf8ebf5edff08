//! Plot-ready CSVs gathered from `train` run directories.

use std::collections::BTreeSet;
use std::path::Path;

use segan::metrics::transfer_gain;
use segan::trainer::TrainLog;

use crate::commands::{opt, Report, REPORT_JSON, TRAIN_LOG};
use crate::output::{prepare_out, read_json, write_text, CliError, Run};
use crate::Common;

struct RunDir {
    label: String,
    report: Report,
    log: TrainLog,
}

fn load(run: &mut Run, dir: &Path) -> Result<RunDir, CliError> {
    let report: Report = read_json(&dir.join(REPORT_JSON))?;
    let log = TrainLog::read(&dir.join(TRAIN_LOG))?;
    let label = report
        .mode
        .clone()
        .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    run.input(&format!("{label}/{REPORT_JSON}"), &dir.join(REPORT_JSON))?;
    run.input(&format!("{label}/{TRAIN_LOG}"), &dir.join(TRAIN_LOG))?;
    Ok(RunDir { label, report, log })
}

pub fn export(common: &Common, argv: &[String], dirs: &[std::path::PathBuf], baseline: Option<&Path>) -> Result<(), CliError> {
    if common.config.is_some() {
        return Err(CliError::Config("export-plots takes no --config".into()));
    }
    prepare_out(&common.out, common.force)?;
    let mut run = Run::start("export-plots", argv, &common.out, &serde_json::json!({ "runs": dirs }), 0)?;
    let runs = dirs.iter().map(|d| load(&mut run, d)).collect::<Result<Vec<_>, _>>()?;
    let mut labels = BTreeSet::new();
    if let Some(dup) = runs.iter().find(|r| !labels.insert(r.label.clone())) {
        return Err(CliError::Config(format!("two runs labelled `{}`", dup.label)));
    }

    // evaluation curves, one column per run
    let iters: BTreeSet<usize> = runs.iter().flat_map(|r| r.log.records.iter().map(|x| x.iteration)).collect();
    let mut s = format!("iteration,{}\n", runs.iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join(","));
    for it in iters {
        let row: Vec<String> = runs
            .iter()
            .map(|r| opt(r.log.records.iter().find(|x| x.iteration == it).map(|x| x.miou_eval)))
            .collect();
        s.push_str(&format!("{it},{}\n", row.join(",")));
    }
    write_text(&run.out("fig6_stability.csv"), &s)?;
    run.output("fig6_stability.csv")?;

    let base = match baseline {
        Some(d) => Some(load(&mut run, d)?),
        None => None,
    };
    let base = base.as_ref().or_else(|| runs.iter().find(|r| r.label == "noadapt"));

    let mut s = String::from("run,miou,miou_subset,stability,negative_classes\n");
    let mut gains = Vec::new();
    for r in &runs {
        let g = base.map(|b| transfer_gain(&r.report.metrics, &b.report.metrics)).transpose()?;
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label,
            r.report.metrics.miou,
            opt(r.report.metrics.miou_subset),
            opt(r.report.stability),
            g.as_ref().map(|g| g.negative.len().to_string()).unwrap_or_default()
        ));
        gains.push(g);
    }
    write_text(&run.out("table3_ablation.csv"), &s)?;
    run.output("table3_ablation.csv")?;

    if let Some(b) = base {
        let mut s = format!("class,{}\n", runs.iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join(","));
        for c in 0..b.report.metrics.class_count {
            let row: Vec<String> = gains.iter().map(|g| opt(g.as_ref().and_then(|g| g.gains[c]))).collect();
            s.push_str(&format!("{c},{}\n", row.join(",")));
        }
        write_text(&run.out("fig7_gains.csv"), &s)?;
        run.output("fig7_gains.csv")?;
    }
    run.finish()?;
    println!("{} runs exported to {}", runs.len(), common.out.display());
    Ok(())
}
