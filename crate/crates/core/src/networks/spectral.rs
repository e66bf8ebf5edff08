use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::kernels::{conv2d_backward_input, conv2d_forward, ConvGeom};

/// A linear map given by its action and the action of its adjoint.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = A^T y`; `x` is overwritten.
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix", format!("{rows}x{cols} with {} values", data.len())));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        d.iter().enumerate().for_each(|(i, &v)| data[i * n + i] = v);
        DenseMatrix { rows: n, cols: n, data }
    }

    pub fn scaled(&self, c: f64) -> Self {
        DenseMatrix {
            data: self.data.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

impl LinearOperator for DenseMatrix {
    fn input_len(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.data[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            for (xc, a) in x.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *xc += a * yr;
            }
        }
    }
}

/// A bias-free convolution layer acting on one flattened `[c, h, w]` map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvOperator {
    pub geom: ConvGeom,
    pub weight: Vec<f64>,
}

impl ConvOperator {
    pub fn new(geom: ConvGeom, weight: Vec<f64>) -> Result<Self> {
        let expect = geom.out_channels * geom.patch_len();
        if weight.len() != expect {
            return Err(Error::invalid("conv operator", format!("{} weights, expected {expect}", weight.len())));
        }
        Ok(ConvOperator { geom, weight })
    }
}

impl LinearOperator for ConvOperator {
    fn input_len(&self) -> usize {
        self.geom.in_len()
    }

    fn output_len(&self) -> usize {
        self.geom.out_len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        conv2d_forward(&self.geom, 1, x, &self.weight, None, y);
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        conv2d_backward_input(&self.geom, 1, &self.weight, y, x);
    }
}

/// Dense matrix of any operator, column by column.
pub fn materialize(op: &dyn LinearOperator) -> DenseMatrix {
    let (m, n) = (op.output_len(), op.input_len());
    let mut data = vec![0.0; m * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..m {
            data[i * n + j] = col[i];
        }
    }
    DenseMatrix { rows: m, cols: n, data }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `A^T A`, from a fixed
/// pseudo-random start. Stops after `iters` rounds or once successive
/// estimates agree to relative `tol`. A zero operator gives 0.
pub fn spectral_norm(op: &dyn LinearOperator, iters: usize, tol: f64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::invalid("iters", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..op.input_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut u = vec![0.0; op.output_len()];
    let mut sigma = 0.0;
    for _ in 0..iters {
        op.apply(&v, &mut u);
        let next = norm(&u);
        if next == 0.0 {
            return Ok(0.0);
        }
        op.apply_adjoint(&u, &mut v);
        let nv = norm(&v);
        if nv == 0.0 {
            return Ok(next);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            break;
        }
    }
    // one last Rayleigh evaluation with the final direction
    op.apply(&v, &mut u);
    Ok(norm(&u).max(sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        assert!((spectral_norm(&DenseMatrix::diag(&[1.0, 1.0]), 100, 1e-12).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&DenseMatrix::diag(&[3.0, 1.0]), 200, 1e-14).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_operator_is_zero() {
        assert_eq!(spectral_norm(&DenseMatrix::diag(&[0.0, 0.0]), 10, 1e-9).unwrap(), 0.0);
        assert!(spectral_norm(&DenseMatrix::diag(&[1.0]), 0, 1e-9).is_err());
    }

    #[test]
    fn conv_adjoint_matches_transposed_matrix() {
        let geom = ConvGeom {
            in_channels: 2,
            height: 5,
            width: 5,
            out_channels: 3,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        let w: Vec<f64> = (0..54).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let op = ConvOperator::new(geom, w).unwrap();
        let m = materialize(&op);
        let y: Vec<f64> = (0..op.output_len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; op.input_len()];
        op.apply_adjoint(&y, &mut x);
        let mut xd = vec![0.0; op.input_len()];
        m.apply_adjoint(&y, &mut xd);
        for (a, b) in x.iter().zip(&xd) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
