use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "iter,lr_student,lr_disc,loss_seg,loss_con,loss_adv_g,loss_adv_d,miou_eval";

/// One evaluation interval. Losses are means over the iterations since
/// the previous record; learning rates are those of the last iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub lr_student: f64,
    pub lr_disc: f64,
    pub loss_seg: f64,
    pub loss_con: f64,
    pub loss_adv_g: f64,
    pub loss_adv_d: f64,
    pub miou_eval: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.iteration <= last.iteration {
                return Err(Error::invalid(
                    "log",
                    format!("iteration {} after {}", r.iteration, last.iteration),
                ));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn miou_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.miou_eval).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            // `{:?}` prints the shortest round-tripping form
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.iteration, r.lr_student, r.lr_disc, r.loss_seg, r.loss_con, r.loss_adv_g, r.loss_adv_d, r.miou_eval
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRAIN_LOG_HEADER) {
            return Err(Error::Format("train log header missing".into()));
        }
        let mut log = TrainLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| Error::Format(format!("train log line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("expected 8 fields"));
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad(&format!("field {} is not a number", k + 1)));
            log.push(LogRecord {
                iteration: f[0].trim().parse().map_err(|_| bad("iteration is not an integer"))?,
                lr_student: num(1)?,
                lr_disc: num(2)?,
                loss_seg: num(3)?,
                loss_con: num(4)?,
                loss_adv_g: num(5)?,
                loss_adv_d: num(6)?,
                miou_eval: num(7)?,
            })
            .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One generator/discriminator step of style-transfer training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgstnRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Style term of the generator objective.
    pub loss_style_g: f64,
    /// Style loss as seen by the discriminator (before negation).
    pub loss_style_d: f64,
    pub loss_sem: f64,
    pub loss_per: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TgstnLog {
    pub records: Vec<TgstnRecord>,
}

impl TgstnLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,lr_g,lr_d,loss_style_g,loss_style_d,loss_sem,loss_per\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.step, r.epoch, r.lr_g, r.lr_d, r.loss_style_g, r.loss_style_d, r.loss_sem, r.loss_per
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize) -> LogRecord {
        LogRecord {
            iteration: i,
            lr_student: 0.01 / i as f64,
            lr_disc: 1e-4,
            loss_seg: 0.1 + i as f64,
            loss_con: 0.0,
            loss_adv_g: -1.3862943611198906,
            loss_adv_d: 1.3862943611198906,
            miou_eval: 1.0 / 3.0,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = TrainLog::default();
        for i in [100, 200, 300] {
            log.push(rec(i)).unwrap();
        }
        let csv = log.to_csv();
        assert!(csv.starts_with(TRAIN_LOG_HEADER));
        assert_eq!(TrainLog::from_csv(&csv).unwrap(), log);
    }

    #[test]
    fn iterations_must_increase() {
        let mut log = TrainLog::default();
        log.push(rec(100)).unwrap();
        assert!(log.push(rec(100)).is_err());
        let csv = format!("{TRAIN_LOG_HEADER}\n200,0,0,0,0,0,0,0\n100,0,0,0,0,0,0,0\n");
        assert!(TrainLog::from_csv(&csv).is_err());
        assert!(TrainLog::from_csv("iter\n").is_err());
    }
}
