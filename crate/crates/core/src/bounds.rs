//! Covering-number, Rademacher and generalization bounds for a chain of
//! spectrally bounded layers (the discriminator), and the measurement of
//! their inputs from a trained discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{spectral_norm, ConvOperator, DiscSpec};
use crate::tensor::{ParamSet, Tensor};

/// Which product-of-ratios term enters the covering bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverVariant {
    /// `(Σ (b_i/s_i)^{2/3})^3`.
    #[default]
    Statement,
    /// `Σ b_i² / s_i²`.
    ProofFinalLine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub s: Vec<f64>,
    pub b: Vec<f64>,
    pub rho: Vec<f64>,
    /// Largest feature-map dimension.
    pub w: f64,
    /// Frobenius norm of the input batch.
    pub x_norm: f64,
    pub epsilon: f64,
    pub n: f64,
    /// Bound on the discriminator output.
    pub delta_bound: f64,
    /// Confidence parameter δ.
    pub delta: f64,
    /// Optimisation slack φ.
    pub phi: f64,
}

impl BoundSpec {
    /// All-ones five-layer spec with W = 2, ‖X‖ = 1, ε = 1.
    pub fn unit() -> Self {
        BoundSpec {
            s: vec![1.0; 5],
            b: vec![1.0; 5],
            rho: vec![1.0; 5],
            w: 2.0,
            x_norm: 1.0,
            epsilon: 1.0,
            n: 1.0,
            delta_bound: 1.0,
            delta: 1.0,
            phi: 0.0,
        }
    }

    pub fn layers(&self) -> usize {
        self.s.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.s.len();
        if l == 0 || self.b.len() != l || self.rho.len() != l {
            return Err(Error::invalid(
                "layers",
                format!("s, b, rho have lengths {}, {}, {}", l, self.b.len(), self.rho.len()),
            ));
        }
        if self.s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("s", "every spectral bound must be positive"));
        }
        if self.rho.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("rho", "every Lipschitz constant must be positive"));
        }
        if self.b.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("b", "reference distances must be >= 0"));
        }
        for (field, v) in [
            ("x_norm", self.x_norm),
            ("delta_bound", self.delta_bound),
            ("phi", self.phi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} must be >= 0")));
            }
        }
        if !(self.w >= 1.0) {
            return Err(Error::invalid("w", format!("{} must be >= 1", self.w)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(self.n >= 1.0) {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid("delta", format!("{} not in (0, 1]", self.delta)));
        }
        Ok(())
    }
}

/// `(log_cover, R)` with `R = ε √log_cover`, so `log_cover = R² / ε²`.
pub fn covering_bound(spec: &BoundSpec, variant: CoverVariant) -> Result<(f64, f64)> {
    spec.validate()?;
    let lip: f64 = spec.rho.iter().product::<f64>() * spec.s.iter().product::<f64>();
    let ratios = spec.b.iter().zip(&spec.s).map(|(b, s)| b / s);
    let complexity = match variant {
        CoverVariant::Statement => ratios.map(|r| r.powf(2.0 / 3.0)).sum::<f64>().powi(3),
        CoverVariant::ProofFinalLine => ratios.map(|r| r * r).sum::<f64>(),
    };
    let log_cover = (2.0 * spec.w * spec.w).ln() * spec.x_norm.powi(2) / spec.epsilon.powi(2) * lip * lip * complexity;
    Ok((log_cover, spec.epsilon * log_cover.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub epsilon: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Set when every `b_i` is zero and the weights fell back to `1/L`.
    pub uniform_fallback: bool,
}

/// Per-layer cover radii `ε_i = α_i ε / (ρ_i Π_{j>i} ρ_j s_j)` with
/// `α_i ∝ (b_i/s_i)^{2/3}`.
pub fn layer_radii(spec: &BoundSpec, epsilon: f64) -> Result<Radii> {
    spec.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    let l = spec.layers();
    let raw: Vec<f64> = spec.b.iter().zip(&spec.s).map(|(b, s)| (b / s).powf(2.0 / 3.0)).collect();
    let total: f64 = raw.iter().sum();
    let uniform_fallback = total == 0.0;
    let alpha: Vec<f64> = if uniform_fallback {
        vec![1.0 / l as f64; l]
    } else {
        raw.iter().map(|a| a / total).collect()
    };
    let eps = (0..l)
        .map(|i| {
            let tail: f64 = (i + 1..l).map(|j| spec.rho[j] * spec.s[j]).product();
            alpha[i] * epsilon / (spec.rho[i] * tail)
        })
        .collect();
    Ok(Radii {
        epsilon: eps,
        alpha,
        uniform_fallback,
    })
}

/// `ε = Σ_j ε_j ρ_j Π_{l>j} ρ_l s_l`, the inverse of [`layer_radii`].
pub fn recompose_radius(spec: &BoundSpec, radii: &[f64]) -> f64 {
    let l = spec.layers();
    (0..l)
        .map(|j| radii[j] * spec.rho[j] * (j + 1..l).map(|k| spec.rho[k] * spec.s[k]).product::<f64>())
        .sum()
}

/// Dudley objective as printed in the closing line of the derivation:
/// `4α/√N + (12/N) √R log(√N/α)`. Its minimiser is `3√(R/N)`.
pub fn dudley_printed(alpha: f64, r: f64, n: f64) -> f64 {
    4.0 * alpha / n.sqrt() + 12.0 / n * r.sqrt() * (n.sqrt() / alpha).ln()
}

/// Dudley objective with the entropy integral `∫_α^{√N} R/ε dε` carried
/// out: `4α/√N + (12R/N) log(√N/α)`. Its minimiser is `3R/√N`, where it
/// equals the closed form of [`rademacher_bound`].
pub fn dudley_integrated(alpha: f64, r: f64, n: f64) -> f64 {
    4.0 * alpha / n.sqrt() + 12.0 * r / n * (n.sqrt() / alpha).ln()
}

/// Minimiser `3√(R/N)` of [`dudley_printed`].
pub fn printed_minimizer(r: f64, n: f64) -> f64 {
    3.0 * (r / n).sqrt()
}

fn complexity_term(r: f64, n: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if n > 3.0 * r {
        12.0 * r / n * (1.0 + (n / (3.0 * r)).ln())
    } else {
        // minimiser beyond the integration range; evaluate at α = √N
        dudley_integrated(n.sqrt(), r, n)
    }
}

/// `(12R/N)(1 + log(N/3R))` for `N > 3R`, else the Dudley objective at
/// `α = √N` (which is 4).
pub fn rademacher_bound(r: f64, n: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("R", format!("{r} must be positive")));
    }
    if !(n >= 1.0) {
        return Err(Error::invalid("N", format!("{n} must be >= 1")));
    }
    Ok(complexity_term(r, n))
}

/// `2·rademacher + 2Δ√(2 log(1/δ)/N) + φ`. A zero `R` contributes nothing
/// (the limit of the complexity term).
pub fn generalization_bound(spec: &BoundSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid("R", format!("{r} must be >= 0")));
    }
    let n = spec.n;
    Ok(2.0 * complexity_term(r, n) + 2.0 * spec.delta_bound * (2.0 * (1.0 / spec.delta).ln() / n).sqrt() + spec.phi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: CoverVariant,
    pub log_cover: f64,
    pub r: f64,
    pub radii: Radii,
    /// `None` when `R = 0`.
    pub rademacher: Option<f64>,
    pub gen_bound: f64,
}

pub fn bound_report(spec: &BoundSpec, variant: CoverVariant) -> Result<BoundReport> {
    let (log_cover, r) = covering_bound(spec, variant)?;
    Ok(BoundReport {
        variant,
        log_cover,
        r,
        radii: layer_radii(spec, spec.epsilon)?,
        rademacher: if r > 0.0 { Some(rademacher_bound(r, spec.n)?) } else { None },
        gen_bound: generalization_bound(spec, r)?,
    })
}

/// Reference matrices `M_i` subtracted before measuring `b_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePolicy {
    Zero,
    Init,
}

/// Power-iteration settings used for layer spectral norms.
pub const POWER_ITERS: usize = 2000;
pub const POWER_TOL: f64 = 1e-10;

/// Builds a [`BoundSpec`] from discriminator weights. Each layer is the
/// bias-free convolution operator at the geometry induced by the input
/// batch `[n, C, h, w]`; `s_i` and `b_i = ‖A_i − M_i‖` are spectral norms,
/// `ρ_i = max(1, slope) = 1`, `W` is the largest flattened feature
/// dimension, `‖X‖` the Frobenius norm of the batch and `Δ = 1`.
pub fn measure_discriminator(
    spec: &DiscSpec,
    params: &ParamSet<f32>,
    reference: Option<&ParamSet<f32>>,
    inputs: &Tensor<f32>,
    epsilon: f64,
    delta: f64,
    phi: f64,
) -> Result<BoundSpec> {
    let layer_ws: Vec<&str> = params.names().iter().filter(|n| n.ends_with(".w")).map(String::as_str).collect();
    if layer_ws.len() != DiscSpec::LAYERS {
        return Err(Error::invalid(
            "discriminator",
            format!("{} weight layers, expected {}", layer_ws.len(), DiscSpec::LAYERS),
        ));
    }
    let shape = inputs.shape();
    if shape.len() != 4 || shape[1] != spec.in_channels {
        return Err(Error::invalid("inputs", format!("{shape:?} for {} channels", spec.in_channels)));
    }
    let geoms = spec.geometry(shape[2], shape[3])?;
    let (mut s, mut b) = (Vec::new(), Vec::new());
    let mut w_dim = 0usize;
    for (i, g) in geoms.iter().enumerate() {
        let name = format!("layer{i}.w");
        let a = params
            .get(&name)
            .ok_or_else(|| Error::invalid("discriminator", format!("missing `{name}`")))?;
        let a64: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
        s.push(spectral_norm(&ConvOperator::new(*g, a64.clone())?, POWER_ITERS, POWER_TOL)?);
        let diff = match reference {
            None => a64,
            Some(m) => {
                let mt = m
                    .get(&name)
                    .ok_or_else(|| Error::invalid("reference", format!("missing `{name}`")))?;
                if mt.shape() != a.shape() {
                    return Err(Error::invalid("reference", format!("`{name}` shape differs")));
                }
                a64.iter().zip(mt.data()).map(|(x, &y)| x - f64::from(y)).collect()
            }
        };
        b.push(spectral_norm(&ConvOperator::new(*g, diff)?, POWER_ITERS, POWER_TOL)?);
        w_dim = w_dim.max(g.in_len()).max(g.out_len());
    }
    let rho = vec![spec.slope.max(1.0); DiscSpec::LAYERS];
    // a zero layer makes every bound degenerate; keep s strictly positive
    if let Some(i) = s.iter().position(|&v| v == 0.0) {
        return Err(Error::invalid("discriminator", format!("layer {i} is the zero operator")));
    }
    Ok(BoundSpec {
        s,
        b,
        rho,
        w: w_dim as f64,
        x_norm: inputs.norm(),
        epsilon,
        n: shape[0] as f64,
        delta_bound: 1.0,
        delta,
        phi,
    })
}
