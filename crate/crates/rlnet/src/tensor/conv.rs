//! 2D convolution on (C, H, W) arrays via im2col and a single matmul.
//!
//! The backward pass recomputes the column matrix from the saved input
//! instead of caching it; at the sizes this crate runs at, the recompute is
//! cheaper than keeping a (Ci*k*k, Ho*Wo) buffer alive per layer.

use super::{to_standard, Arr, Tensor};
use ndarray::{Array2, ArrayView3, ArrayViewMut3, Axis, Ix1, Ix3, Ix4, Slice};

fn pad_zero(x: &ArrayView3<f64>, pad: usize) -> ndarray::Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = ndarray::Array3::zeros((c, h + 2 * pad, w + 2 * pad));
    out.slice_mut(ndarray::s![.., pad..pad + h, pad..pad + w])
        .assign(x);
    out
}

fn im2col(
    xpad: &ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (ci, _, _) = xpad.dim();
    let mut cols = Array2::zeros((ci * kh * kw, ho * wo));
    for c in 0..ci {
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let mut dst = cols.row_mut(row);
                for oh in 0..ho {
                    let src = xpad.index_axis(Axis(0), c);
                    let src_row = src.index_axis(Axis(0), oh * stride + i);
                    for ow in 0..wo {
                        dst[oh * wo + ow] = src_row[ow * stride + j];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    gcols: &Array2<f64>,
    mut gxpad: ArrayViewMut3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) {
    let ci = gxpad.dim().0;
    for c in 0..ci {
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let src = gcols.row(row);
                for oh in 0..ho {
                    let mut dst = gxpad.index_axis_mut(Axis(0), c);
                    let mut dst_row = dst.index_axis_mut(Axis(0), oh * stride + i);
                    for ow in 0..wo {
                        dst_row[ow * stride + j] += src[oh * wo + ow];
                    }
                }
            }
        }
    }
}

fn forward_value(
    x: &Arr,
    w: &Arr,
    b: Option<&Arr>,
    stride: usize,
    pad: usize,
) -> (Arr, usize, usize) {
    let x3 = x.view().into_dimensionality::<Ix3>().expect("conv2d: input must be (C,H,W)");
    let w4 = w.view().into_dimensionality::<Ix4>().expect("conv2d: weight must be (Co,Ci,kh,kw)");
    let (ci, h, wd) = x3.dim();
    let (co, wci, kh, kw) = w4.dim();
    assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
    assert!(stride >= 1, "conv2d: stride must be >= 1");
    assert!(
        h + 2 * pad >= kh && wd + 2 * pad >= kw,
        "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
        h + 2 * pad,
        wd + 2 * pad
    );
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;

    let xpad = pad_zero(&x3, pad);
    let cols = im2col(&xpad.view(), kh, kw, stride, ho, wo);
    let wmat = w4.to_shape((co, wci * kh * kw)).unwrap();
    let mut out = wmat.dot(&cols);
    if let Some(b) = b {
        let b1 = b.view().into_dimensionality::<Ix1>().expect("conv2d: bias must be (Co,)");
        assert_eq!(b1.len(), co, "conv2d: bias length must match output channels");
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b1.iter()) {
            row += bv;
        }
    }
    let out = to_standard(out).into_shape_with_order((co, ho, wo)).unwrap().into_dyn();
    (out, ho, wo)
}

/// Convolve `x` (C,H,W) with `w` (Co,Ci,kh,kw), optional bias (Co,),
/// symmetric zero padding. Panics on shape misuse; the layers above validate
/// user-facing shapes before they get here.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let bias_arr = b.map(|t| t.to_array());
    let (value, ho, wo) = forward_value(&x.value(), &w.value(), bias_arr.as_ref(), stride, pad);

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let has_bias = b.is_some();

    Tensor::from_op(
        value,
        parents,
        Box::new(move |g, parents| {
            let xv = parents[0].value();
            let wv = parents[1].value();
            let x3 = xv.view().into_dimensionality::<Ix3>().unwrap();
            let w4 = wv.view().into_dimensionality::<Ix4>().unwrap();
            let (ci, h, wd) = x3.dim();
            let (co, _, kh, kw) = w4.dim();

            let gmat = to_standard(g.clone())
                .into_shape_with_order((co, ho * wo))
                .unwrap();

            let xpad = pad_zero(&x3, pad);
            let cols = im2col(&xpad.view(), kh, kw, stride, ho, wo);

            let gw = to_standard(gmat.dot(&cols.t()))
                .into_shape_with_order((co, ci, kh, kw))
                .unwrap()
                .into_dyn();

            let wmat = w4.to_shape((co, ci * kh * kw)).unwrap();
            let gcols = wmat.t().dot(&gmat);
            let mut gxpad = ndarray::Array3::zeros((ci, h + 2 * pad, wd + 2 * pad));
            col2im(&gcols, gxpad.view_mut(), kh, kw, stride, ho, wo);
            let gx = gxpad
                .slice_axis(Axis(1), Slice::from(pad..pad + h))
                .slice_axis(Axis(2), Slice::from(pad..pad + wd))
                .to_owned()
                .into_dyn();

            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                grads.push(Some(gmat.sum_axis(Axis(1)).into_dyn()));
            }
            grads
        }),
    )
}
