//! Trains the style generator against a source-only segmenter and reports
//! how far it closes the colour-histogram gap to the target domain.
//!
//! cargo run --release -p segan-core --example style_transfer -- [seeds] [epochs]

use std::time::Instant;

use segan::datagen::{appearance_gap, DatasetConfig};
use segan::trainer::{train_segan, train_tgstn, StyleSource, TgstnConfig, TrainConfig};

fn main() -> segan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let t0 = Instant::now();
    for seed in 0..seeds {
        let ds = DatasetConfig::default().generate(seed)?;
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let mut phi = train_segan(&cfg, &ds, &StyleSource::None, None)?.bundle.student;
        phi.freeze();
        let tcfg = TgstnConfig { seed, epochs, ..TgstnConfig::default() };
        let run = train_tgstn(&tcfg, &ds, &cfg.segnet, &phi)?;
        let style = StyleSource::Generator { spec: tcfg.generator.clone(), params: run.generator };
        let moved = style.transfer(&ds)?.expect("generator output");
        let raw = appearance_gap(ds.source().iter().map(|s| s.image.as_slice()), ds.target_images().iter().map(Vec::as_slice))?;
        let after = appearance_gap(moved.iter().map(Vec::as_slice), ds.target_images().iter().map(Vec::as_slice))?;
        let last = run.log.records.last().unwrap();
        println!(
            "seed {seed}: gap raw {raw:.4} -> transferred {after:.4}  (sem {:.4}, per {:.4}, style_d {:.4})  [{:.0}s]",
            last.loss_sem,
            last.loss_per,
            last.loss_style_d,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
