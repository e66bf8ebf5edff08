use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIST_BINS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSeverity {
    pub appearance_gap: f64,
    pub layout_gap: f64,
}

/// Per-channel normalised histogram of an `h x w x 3` image in [0, 1],
/// `3 * HIST_BINS` entries, each channel summing to 1.
pub fn colour_histogram(img: &[f32]) -> Vec<f64> {
    let mut hist = vec![0.0; 3 * HIST_BINS];
    let px = img.len() / 3;
    for p in img.chunks_exact(3) {
        for (c, &v) in p.iter().enumerate() {
            let bin = ((f64::from(v) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist[c * HIST_BINS + bin] += 1.0;
        }
    }
    hist.iter_mut().for_each(|h| *h /= px as f64);
    hist
}

fn mean_histogram<'a>(images: impl Iterator<Item = &'a [f32]>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; 3 * HIST_BINS];
    let mut n = 0usize;
    for img in images {
        colour_histogram(img).iter().zip(&mut acc).for_each(|(h, a)| *a += h);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("domain", "no images"));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// L2 distance between the mean colour histograms of two image sets.
pub fn appearance_gap<'a, 'b>(
    a: impl IntoIterator<Item = &'a [f32]>,
    b: impl IntoIterator<Item = &'b [f32]>,
) -> Result<f64> {
    let ha = mean_histogram(a.into_iter())?;
    let hb = mean_histogram(b.into_iter())?;
    Ok(ha.iter().zip(&hb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Fraction of pixels of each class over a set of label maps.
pub fn class_frequencies<'a>(labels: impl IntoIterator<Item = &'a [u8]>, classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; classes];
    let mut total = 0u64;
    for l in labels {
        for &c in l {
            let c = c as usize;
            if c >= classes {
                return Err(Error::invalid("labels", format!("class {c} outside [0, {classes})")));
            }
            counts[c] += 1;
        }
        total += l.len() as u64;
    }
    if total == 0 {
        return Err(Error::invalid("domain", "no labelled pixels"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn layout_gap<'a, 'b>(
    a: impl IntoIterator<Item = &'a [u8]>,
    b: impl IntoIterator<Item = &'b [u8]>,
    classes: usize,
) -> Result<f64> {
    Ok(total_variation(&class_frequencies(a, classes)?, &class_frequencies(b, classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_pixel_tv_by_hand() {
        // a: {0,0,1,1}, b: {0,1,1,1} -> (0.5, 0.5) vs (0.25, 0.75)
        let a: [&[u8]; 1] = [&[0, 0, 1, 1]];
        let b: [&[u8]; 1] = [&[0, 1, 1, 1]];
        assert!((layout_gap(a, b, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn histogram_is_normalised_per_channel() {
        let img = [0.0f32, 0.5, 1.0, 0.99, 0.01, 0.3];
        let h = colour_histogram(&img);
        for c in 0..3 {
            assert!((h[c * HIST_BINS..(c + 1) * HIST_BINS].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(h[HIST_BINS - 1], 0.5);
    }

    #[test]
    fn disjoint_palettes_have_positive_gap() {
        let dark = vec![0.1f32; 12];
        let light = vec![0.9f32; 12];
        let g = appearance_gap([dark.as_slice()], [light.as_slice()]).unwrap();
        assert!((g - 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(appearance_gap([dark.as_slice()], [dark.as_slice()]).unwrap(), 0.0);
        let none: [&[f32]; 0] = [];
        assert!(appearance_gap(none, [dark.as_slice()]).is_err());
    }
}
