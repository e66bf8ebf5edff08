use super::{Feeds, Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Denominator floor of [`max_relative_error`], so that entries whose true
/// gradient is (near) zero are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Central-difference estimate of d(loss)/d(param), one coordinate at a
/// time: `(f(θ + h) - f(θ - h)) / 2h`.
pub fn finite_diff_grad<T: Scalar>(
    graph: &Graph,
    feeds: &Feeds<'_, T>,
    loss: NodeId,
    param: NodeId,
    h: f64,
) -> Result<Tensor<T>> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let base = feeds
        .get(param)
        .ok_or_else(|| Error::MissingFeed(graph.node(param).name.clone()))?;
    let mut probe = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    let hh = T::of(h);
    let eval = |t: &Tensor<T>| -> Result<f64> {
        let mut f = feeds.clone();
        f.insert(param, t);
        let vals = graph.forward(&f)?;
        let out = vals.get(loss);
        if out.len() != 1 {
            return Err(Error::NotScalar(graph.node(loss).name.clone()));
        }
        Ok(out.item().as_f64())
    };
    for i in 0..base.len() {
        let orig = base.data()[i];
        probe.data_mut()[i] = orig + hh;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - hh;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push(T::of((up - down) / (2.0 * h)));
    }
    Tensor::new(base.shape(), grad)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, REL_ERR_FLOOR)`.
pub fn max_relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "compared tensors differ in shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(REL_ERR_FLOOR)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_derivative() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let sq = g.square(x);
        let cube = g.mul(sq, x).unwrap();
        let loss = g.sum(cube);
        let xv = Tensor::scalar(2.0f64);
        let mut f = Feeds::new();
        f.insert(x, &xv);
        let fd = finite_diff_grad(&g, &f, loss, x, 1e-4).unwrap();
        assert!((fd.item() - 12.0).abs() < 1e-6);
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", &[3]);
        let c = g.input("c", &[3]);
        let loss = g.sum(c);
        let (xv, cv) = (Tensor::full(&[3], 0.5f64), Tensor::full(&[3], 2.0));
        let mut f = Feeds::new();
        f.insert(x, &xv).insert(c, &cv);
        let fd = finite_diff_grad(&g, &f, loss, x, 1e-3).unwrap();
        assert!(fd.data().iter().all(|&v| v == 0.0));
        let vals = g.forward(&f).unwrap();
        let an = g.backward(&vals, loss).unwrap();
        assert!(an.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn abs_kink_is_flagged_by_mismatch() {
        // |x| as a leaky relu of slope -1; backward uses the positive-side
        // slope at exactly zero while the central difference sees 0.
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let a = g.leaky_relu(x, -1.0);
        let loss = g.sum(a);
        let xv = Tensor::scalar(0.0f64);
        let mut f = Feeds::new();
        f.insert(x, &xv);
        let fd = finite_diff_grad(&g, &f, loss, x, 1e-3).unwrap();
        let vals = g.forward(&f).unwrap();
        let an = g.backward(&vals, loss).unwrap();
        assert_eq!(fd.item(), 0.0);
        assert_eq!(an.get(x).unwrap().item(), 1.0);
        assert!(max_relative_error(&fd, an.get(x).unwrap()) > 1e-4);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let loss = g.sum(x);
        let xv = Tensor::scalar(1.0f64);
        let mut f = Feeds::new();
        f.insert(x, &xv);
        assert!(finite_diff_grad(&g, &f, loss, x, 0.0).is_err());
    }
}
