use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photometric look of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Appearance {
    /// Rotation of colours around the gray axis, radians.
    pub rotation: f64,
    pub brightness: f64,
    /// Gaussian blur σ in pixels; 0 disables.
    pub blur: f64,
    /// Cycles of the sinusoidal texture across the image; 0 disables.
    pub texture_freq: f64,
    pub texture_amp: f64,
    /// Per-pixel Gaussian noise added when a scene is rendered (not part
    /// of the style transform).
    pub noise: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance {
            rotation: 0.0,
            brightness: 0.0,
            blur: 0.0,
            texture_freq: 0.0,
            texture_amp: 0.0,
            noise: 0.0,
        }
    }
}

impl Appearance {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur >= 0.0 && self.blur.is_finite()) {
            return Err(Error::invalid("appearance.blur", format!("{} must be >= 0", self.blur)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("appearance.noise", format!("{} must be >= 0", self.noise)));
        }
        for (f, v) in [
            ("appearance.rotation", self.rotation),
            ("appearance.brightness", self.brightness),
            ("appearance.texture_freq", self.texture_freq),
            ("appearance.texture_amp", self.texture_amp),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(f, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Rotation matrix about the unit gray axis (Rodrigues).
fn gray_rotation(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let t = 1.0 - c;
    let d = t * k * k;
    let a = c + d;
    let p = d + s * k;
    let m = d - s * k;
    [[a, m, p], [p, a, m], [m, p, a]]
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric reflection into `[0, n)`.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of an `h x w x 3` image, reflective borders,
/// kernel truncated at 3σ.
pub fn gaussian_blur(img: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0f64; img.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * f64::from(img[(y * w + reflect(x as i64 + j as i64 - r, w as i64)) * 3 + c]))
                    .sum();
            }
        }
    }
    let mut out = vec![0f32; img.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[(reflect(y as i64 + j as i64 - r, h as i64) * w + x) * 3 + c])
                    .sum::<f64>() as f32;
            }
        }
    }
    out
}

/// Applies palette rotation, brightness offset (clamped to [0, 1]),
/// Gaussian blur and a sinusoidal texture overlay to an `h x w x 3` image.
/// Labels are never involved.
pub fn apply_domain_style(img: &[f32], h: usize, w: usize, a: &Appearance) -> Vec<f32> {
    let rot = gray_rotation(a.rotation);
    let identity_colour = a.rotation == 0.0 && a.brightness == 0.0;
    let mut out: Vec<f32> = if identity_colour {
        img.to_vec()
    } else {
        img.chunks_exact(3)
            .flat_map(|px| {
                let p = [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])];
                (0..3).map(move |r| {
                    let v = rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + a.brightness;
                    v.clamp(0.0, 1.0) as f32
                })
            })
            .collect()
    };
    out = gaussian_blur(&out, h, w, a.blur);
    if a.texture_freq != 0.0 && a.texture_amp != 0.0 {
        let tau = std::f64::consts::TAU;
        for y in 0..h {
            let sy = (tau * a.texture_freq * (y as f64 + 0.5) / h as f64).sin();
            for x in 0..w {
                let t = a.texture_amp * sy * (tau * a.texture_freq * (x as f64 + 0.5) / w as f64).sin();
                for c in 0..3 {
                    let v = &mut out[(y * w + x) * 3 + c];
                    *v = (f64::from(*v) + t).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    out
}
