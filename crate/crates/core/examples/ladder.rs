//! Runs the ablation ladder on the default benchmark for a few seeds and
//! prints final mIoU, stability and negative-transfer counts.
//!
//! cargo run --release -p segan-core --example ladder -- [seeds] [maxiter] [key=value ...]

use std::time::Instant;

use segan::datagen::DatasetConfig;
use segan::metrics::{stability_index, transfer_gain, DEFAULT_WINDOW_FRACTION};
use segan::trainer::{run_ladder, AblationMode, StyleSource, TrainConfig};

fn main() -> segan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = TrainConfig::default();
    if let Some(m) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.maxiter = m;
    }
    // remaining `key=value` pairs patch the config through its JSON form
    let mut json = serde_json::to_value(&cfg)?;
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        json[k] = serde_json::from_str(v)?;
    }
    cfg = serde_json::from_value(json)?;
    let modes: Vec<AblationMode> = match std::env::var("MODES") {
        Ok(m) => m.split(',').map(str::parse).collect::<segan::Result<_>>()?,
        Err(_) => vec![AblationMode::NoAdapt, AblationMode::At, AblationMode::AtSeAug, AblationMode::Full],
    };
    let t0 = Instant::now();
    for seed in 0..seeds {
        let ds = DatasetConfig::default().generate(seed)?;
        let style = StyleSource::oracle_for(&ds);
        let c = TrainConfig { seed, ..cfg.clone() };
        let res = run_ladder(&modes, &c, &ds, &style)?;
        let base = &res[0].report;
        print!("seed {seed}:");
        for r in &res {
            let stab = stability_index(&r.log.miou_curve(), DEFAULT_WINDOW_FRACTION).unwrap_or(f64::NAN);
            let neg = transfer_gain(&r.report, base)?.negative.len();
            print!("  {}={:.4} (stab {:.4}, neg {neg})", r.mode, r.report.miou, stab);
        }
        println!("  [{:.0}s]", t0.elapsed().as_secs_f64());
    }
    Ok(())
}
