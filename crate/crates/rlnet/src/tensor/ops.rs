//! Elementwise, broadcasting, reduction and shape ops.
//!
//! Broadcasting follows the usual rule on equal-rank operands: every axis
//! pair must match or one side must be 1. Rank promotion is left to the
//! caller via `reshape`, which keeps the backward rules simple.

use super::{Arr, Tensor};
use ndarray::{Axis, IxDyn, Slice};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal ranks, got {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "cannot broadcast {a:?} with {b:?}");
            x.max(y)
        })
        .collect()
}

/// Undo broadcasting: sum `g` down to `shape` over every axis that was
/// expanded from 1.
fn reduce_to_shape(g: &Arr, shape: &[usize]) -> Arr {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = g.clone();
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && out.shape()[axis] > 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    out
}

fn binary(
    a: &Tensor,
    b: &Tensor,
    forward: impl Fn(&Arr, &Arr) -> Arr,
    grad: impl Fn(&Arr, &Arr, &Arr) -> (Arr, Arr) + 'static,
) -> Tensor {
    let shape = broadcast_shape(&a.shape(), &b.shape());
    let av = a.value();
    let bv = b.value();
    let ab = av.broadcast(IxDyn(&shape)).unwrap().to_owned();
    let bb = bv.broadcast(IxDyn(&shape)).unwrap().to_owned();
    let value = forward(&ab, &bb);
    drop(av);
    drop(bv);
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |g, parents| {
            let pa = parents[0].value();
            let pb = parents[1].value();
            let shape = broadcast_shape(pa.shape(), pb.shape());
            let ab = pa.broadcast(IxDyn(&shape)).unwrap().to_owned();
            let bb = pb.broadcast(IxDyn(&shape)).unwrap().to_owned();
            let (ga, gb) = grad(g, &ab, &bb);
            vec![
                Some(reduce_to_shape(&ga, pa.shape())),
                Some(reduce_to_shape(&gb, pb.shape())),
            ]
        }),
    )
}

fn unary(
    x: &Tensor,
    forward: impl Fn(&Arr) -> Arr,
    grad: impl Fn(&Arr, &Arr, &Arr) -> Arr + 'static,
) -> Tensor {
    let value = forward(&x.value());
    Tensor::from_op(
        value.clone(),
        vec![x.clone()],
        Box::new(move |g, parents| {
            let xv = parents[0].value();
            vec![Some(grad(g, &xv, &value))]
        }),
    )
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        binary(self, other, |a, b| a + b, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary(self, other, |a, b| a - b, |g, _, _| (g.clone(), -g))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary(self, other, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        binary(
            self,
            other,
            |a, b| a / b,
            |g, a, b| (g / b, -(g * a) / (b * b)),
        )
    }

    pub fn neg(&self) -> Tensor {
        unary(self, |x| -x, |g, _, _| -g)
    }

    pub fn abs(&self) -> Tensor {
        // Subgradient 0 at the kink, matching the usual convention.
        unary(
            self,
            |x| x.mapv(f64::abs),
            |g, x, _| g * &x.mapv(f64::signum),
        )
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            |x| x.mapv(|v| v.max(0.0)),
            |g, x, _| g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            self,
            |x| x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            |g, _, y| g * &(y * &y.mapv(|v| 1.0 - v)),
        )
    }

    pub fn sqrt(&self) -> Tensor {
        unary(
            self,
            |x| x.mapv(f64::sqrt),
            |g, _, y| g * &y.mapv(|v| 0.5 / v),
        )
    }

    pub fn square(&self) -> Tensor {
        unary(self, |x| x * x, |g, x, _| g * &(x * 2.0))
    }

    pub fn recip(&self) -> Tensor {
        unary(
            self,
            |x| x.mapv(f64::recip),
            |g, _, y| -(g * &(y * y)),
        )
    }

    /// Clamp to [lo, hi]; gradient passes only through the interior.
    /// Points exactly on a bound count as interior so that a saturating map
    /// like clamp(x, 0, 1) at x = 0 still behaves like identity there.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            self,
            move |x| x.mapv(|v| v.clamp(lo, hi)),
            move |g, x, _| g * &x.mapv(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, move |x| x * c, move |g, _, _| g * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, move |x| x + c, |g, _, _| g.clone())
    }

    pub fn sum_all(&self) -> Tensor {
        let value = ndarray::arr0(self.value().sum()).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents| {
                let shape = parents[0].value().raw_dim();
                let s = *g.iter().next().unwrap();
                vec![Some(Arr::from_elem(shape, s))]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over the given axes, keeping them as size 1 so the result
    /// broadcasts straight back against the input.
    pub fn mean_axes(&self, axes: &[usize]) -> Tensor {
        let mut value = self.to_array();
        let mut count = 1.0;
        for &axis in axes {
            count *= self.shape()[axis] as f64;
            value = value.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
        value /= count;
        let axes = axes.to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let shape = parents[0].value().raw_dim();
                let mut count = 1.0;
                for &axis in &axes {
                    count *= shape[axis] as f64;
                }
                let spread = g.broadcast(shape).unwrap().to_owned() / count;
                vec![Some(spread)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let value = super::to_standard(self.to_array())
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count must match");
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents| {
                let shape = parents[0].value().raw_dim();
                vec![Some(super::to_standard(g.clone()).into_shape_with_order(shape).unwrap())]
            }),
        )
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut out = Arr::zeros(parents[0].value().raw_dim());
                out.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![Some(out)]
            }),
        )
    }
}

/// Concatenate along one axis. Backward slices the gradient back apart.
pub fn concat(axis: usize, tensors: &[Tensor]) -> Tensor {
    assert!(!tensors.is_empty(), "concat of zero tensors");
    let views: Vec<_> = tensors.iter().map(|t| t.to_array()).collect();
    let view_refs: Vec<_> = views.iter().map(|v| v.view()).collect();
    let value = ndarray::concatenate(Axis(axis), &view_refs).expect("concat: shapes must agree off-axis");
    Tensor::from_op(
        value,
        tensors.to_vec(),
        Box::new(move |g, parents| {
            let mut start = 0;
            parents
                .iter()
                .map(|p| {
                    let len = p.value().shape()[axis];
                    let piece = g
                        .slice_axis(Axis(axis), Slice::from(start..start + len))
                        .to_owned();
                    start += len;
                    Some(piece)
                })
                .collect()
        }),
    )
}
