use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::style::{apply_domain_style, Appearance};
use crate::error::{Error, Result};

/// Shape drawn for an object class: class `k >= 1` uses `SHAPES[(k - 1) % 3]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Disk,
    Bar,
}

pub const SHAPES: [Shape; 3] = [Shape::Rect, Shape::Disk, Shape::Bar];

pub fn class_shape(class: usize) -> Shape {
    SHAPES[(class - 1) % SHAPES.len()]
}

/// Placement prior of one object class, in normalised image coordinates
/// (`[y, x]`, both in [0, 1]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrior {
    pub occurrence: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// Nominal half-extent as a fraction of the image height.
    pub size: f64,
}

/// Per-class layout priors for classes `1..C`; class 0 is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub classes: Vec<ClassPrior>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    pub appearance: Appearance,
    pub layout: Layout,
}

impl ShiftParams {
    pub fn validate(&self, classes: usize) -> Result<()> {
        self.appearance.validate()?;
        if self.layout.classes.len() != classes - 1 {
            return Err(Error::invalid(
                "layout.classes",
                format!("{} priors for {} object classes", self.layout.classes.len(), classes - 1),
            ));
        }
        for (i, p) in self.layout.classes.iter().enumerate() {
            let field = |f: &str| format!("layout.classes[{i}].{f}");
            if !(0.0..=1.0).contains(&p.occurrence) {
                return Err(Error::invalid(field("occurrence"), format!("{} not in [0, 1]", p.occurrence)));
            }
            if !(p.size > 0.0 && p.size < 0.5) {
                return Err(Error::invalid(field("size"), format!("{} not in (0, 0.5)", p.size)));
            }
            let [[a, b], [b2, c]] = p.cov;
            if b != b2 || a < 0.0 || c < 0.0 || a * c - b * b < 0.0 || !(a + c).is_finite() {
                return Err(Error::invalid(field("cov"), format!("{:?} is not symmetric PSD", p.cov)));
            }
            if !p.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::invalid(field("mean"), "must be finite"));
            }
        }
        Ok(())
    }
}

/// Rendered image `h x w x 3` in [0, 1] and label map `h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub label: Vec<u8>,
}

/// Flat class colours before any domain style: mid-gray background, then
/// saturated hues spaced by the golden angle.
pub fn base_palette(classes: usize) -> Vec<[f64; 3]> {
    let mut pal = vec![[0.45, 0.45, 0.45]];
    for k in 1..classes {
        let hue = ((k - 1) as f64 * 137.508 + 10.0) % 360.0;
        pal.push(hsv(hue, 0.75, 0.85));
    }
    pal
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Integer half-extents `(ey, ex)` of a shape with radius `k`.
pub fn shape_extent(shape: Shape, k: usize) -> (usize, usize) {
    match shape {
        Shape::Rect | Shape::Disk => (k, k),
        Shape::Bar => ((k / 3).max(1), 2 * k),
    }
}

pub fn shape_contains(shape: Shape, k: usize, dy: i64, dx: i64) -> bool {
    let (ey, ex) = shape_extent(shape, k);
    match shape {
        Shape::Rect | Shape::Bar => dy.unsigned_abs() as usize <= ey && dx.unsigned_abs() as usize <= ex,
        Shape::Disk => dy * dy + dx * dx <= (k * k) as i64,
    }
}

/// Radius range `[lo, hi]` (inclusive, uniform) for a prior at `h x w`.
pub fn radius_range(shape: Shape, size: f64, h: usize, w: usize) -> (usize, usize) {
    let nominal = size * h as f64;
    let lo = ((0.75 * nominal).round() as usize).max(1);
    let hi = ((1.25 * nominal).round() as usize).max(lo);
    // keep the object inside the image
    let fits = |k: usize| {
        let (ey, ex) = shape_extent(shape, k);
        2 * ey + 1 <= h && 2 * ex + 1 <= w
    };
    let mut hi = hi;
    while hi > 1 && !fits(hi) {
        hi -= 1;
    }
    (lo.min(hi), hi)
}

fn sample_gaussian<R: Rng>(rng: &mut R, mean: [f64; 2], cov: [[f64; 2]; 2]) -> [f64; 2] {
    let l11 = cov[0][0].sqrt();
    let l21 = if l11 > 0.0 { cov[1][0] / l11 } else { 0.0 };
    let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    [mean[0] + l11 * z0, mean[1] + l21 * z0 + l22 * z1]
}

/// Renders one scene: each object class appears at most once with its
/// occurrence probability, in class order (later classes occlude earlier
/// ones), fully inside the frame; then the domain style and pixel noise
/// are applied. The random draws per class are made whether or not the
/// class occurs, so priors of one class never shift another's samples.
pub fn render_scene<R: Rng>(params: &ShiftParams, rng: &mut R, h: usize, w: usize, classes: usize) -> Result<Scene> {
    if classes < 2 {
        return Err(Error::invalid("classes", format!("{classes} < 2")));
    }
    if h < 32 || w < 32 {
        return Err(Error::invalid("size", format!("{h}x{w} below 32x32")));
    }
    params.validate(classes)?;
    let palette = base_palette(classes);
    let mut label = vec![0u8; h * w];
    let mut colour: Vec<[f64; 3]> = vec![palette[0]; h * w];
    for (i, prior) in params.layout.classes.iter().enumerate() {
        let class = i + 1;
        let shape = class_shape(class);
        let present = rng.random::<f64>() < prior.occurrence;
        let centre = sample_gaussian(rng, prior.mean, prior.cov);
        let (lo, hi) = radius_range(shape, prior.size, h, w);
        let k = rng.random_range(lo..=hi);
        let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.06..0.06));
        if !present {
            continue;
        }
        let (ey, ex) = shape_extent(shape, k);
        let cy = ((centre[0] * h as f64).floor() as i64).clamp(ey as i64, (h - 1 - ey) as i64);
        let cx = ((centre[1] * w as f64).floor() as i64).clamp(ex as i64, (w - 1 - ex) as i64);
        let c = std::array::from_fn::<f64, 3, _>(|j| (palette[class][j] + jitter[j]).clamp(0.0, 1.0));
        for y in (cy - ey as i64)..=(cy + ey as i64) {
            for x in (cx - ex as i64)..=(cx + ex as i64) {
                if shape_contains(shape, k, y - cy, x - cx) {
                    let idx = y as usize * w + x as usize;
                    label[idx] = class as u8;
                    colour[idx] = c;
                }
            }
        }
    }
    let flat: Vec<f32> = colour.iter().flat_map(|c| c.iter().map(|&v| v as f32)).collect();
    let mut image = apply_domain_style(&flat, h, w, &params.appearance);
    if params.appearance.noise > 0.0 {
        let n = Normal::new(0.0, params.appearance.noise).expect("validated noise");
        for v in &mut image {
            *v = (f64::from(*v) + n.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Scene {
        height: h,
        width: w,
        image,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(occ: f64) -> ShiftParams {
        let prior = ClassPrior {
            occurrence: occ,
            mean: [0.5, 0.5],
            cov: [[0.01, 0.0], [0.0, 0.01]],
            size: 0.15,
        };
        ShiftParams {
            appearance: Appearance::default(),
            layout: Layout {
                classes: vec![prior; 3],
            },
        }
    }

    #[test]
    fn zero_occurrence_is_all_background() {
        let s = render_scene(&params(0.0), &mut ChaCha8Rng::seed_from_u64(1), 32, 32, 4).unwrap();
        assert!(s.label.iter().all(|&l| l == 0));
    }

    #[test]
    fn same_seed_same_scene() {
        let p = params(0.7);
        let a = render_scene(&p, &mut ChaCha8Rng::seed_from_u64(9), 64, 64, 4).unwrap();
        let b = render_scene(&p, &mut ChaCha8Rng::seed_from_u64(9), 64, 64, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.image.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(a.label.iter().all(|&l| l < 4));
    }

    #[test]
    fn certain_objects_are_drawn() {
        let s = render_scene(&params(1.0), &mut ChaCha8Rng::seed_from_u64(2), 64, 64, 4).unwrap();
        // the bar (class 3) is drawn last and cannot be fully occluded
        assert!(s.label.contains(&3));
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params(0.5);
        p.layout.classes[1].cov = [[1.0, 2.0], [2.0, 1.0]];
        assert!(render_scene(&p, &mut rng, 32, 32, 4).is_err());
        assert!(render_scene(&params(0.5), &mut rng, 16, 32, 4).is_err());
        assert!(render_scene(&params(0.5), &mut rng, 32, 32, 1).is_err());
        let mut p = params(0.5);
        p.layout.classes[0].occurrence = 1.5;
        assert!(render_scene(&p, &mut rng, 32, 32, 4).is_err());
    }
}
