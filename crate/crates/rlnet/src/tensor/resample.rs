//! Non-overlapping average pooling and nearest-neighbour upsampling on
//! (C, H, W) tensors. Both require exact divisibility; the network keeps all
//! spatial sizes at multiples of 32 so this never trips in practice.

use super::{Arr, Tensor};
use ndarray::Ix3;

impl Tensor {
    /// Average over k x k blocks, stride k.
    pub fn avg_pool2d(&self, k: usize) -> Tensor {
        assert!(k >= 1, "avg_pool2d: factor must be >= 1");
        let value = {
            let v = self.value();
            let x = v.view().into_dimensionality::<Ix3>().expect("avg_pool2d: input must be (C,H,W)");
            let (c, h, w) = x.dim();
            assert!(
                h % k == 0 && w % k == 0,
                "avg_pool2d: {h}x{w} not divisible by {k}"
            );
            let (ho, wo) = (h / k, w / k);
            let norm = 1.0 / (k * k) as f64;
            let mut out = ndarray::Array3::zeros((c, ho, wo));
            for ci in 0..c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for i in 0..k {
                            for j in 0..k {
                                acc += x[(ci, oh * k + i, ow * k + j)];
                            }
                        }
                        out[(ci, oh, ow)] = acc * norm;
                    }
                }
            }
            out.into_dyn()
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let shape = parents[0].value().raw_dim();
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let (c, ho, wo) = g3.dim();
                let norm = 1.0 / (k * k) as f64;
                let mut gx = Arr::zeros(shape);
                for ci in 0..c {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let gv = g3[(ci, oh, ow)] * norm;
                            for i in 0..k {
                                for j in 0..k {
                                    gx[[ci, oh * k + i, ow * k + j]] += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Repeat each pixel into a k x k block.
    pub fn upsample_nearest(&self, k: usize) -> Tensor {
        assert!(k >= 1, "upsample_nearest: factor must be >= 1");
        let value = {
            let v = self.value();
            let x = v.view().into_dimensionality::<Ix3>().expect("upsample_nearest: input must be (C,H,W)");
            let (c, h, w) = x.dim();
            let mut out = ndarray::Array3::zeros((c, h * k, w * k));
            for ci in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        let xv = x[(ci, ih, iw)];
                        for i in 0..k {
                            for j in 0..k {
                                out[(ci, ih * k + i, iw * k + j)] = xv;
                            }
                        }
                    }
                }
            }
            out.into_dyn()
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let shape = parents[0].value().raw_dim();
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let mut gx = Arr::zeros(shape);
                for ci in 0..c {
                    for ih in 0..h {
                        for iw in 0..w {
                            let mut acc = 0.0;
                            for i in 0..k {
                                for j in 0..k {
                                    acc += g3[(ci, ih * k + i, iw * k + j)];
                                }
                            }
                            gx[[ci, ih, iw]] += acc;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Arr, Tensor};
    use crate::gradcheck::GradCheck;
    use crate::nn::{seeded_rng, uniform_in};
    use ndarray::IxDyn;

    fn rand_arr(shape: &[usize], seed: u64) -> Arr {
        let mut rng = seeded_rng(seed);
        Arr::from_shape_fn(IxDyn(shape), |_| uniform_in(&mut rng, -1.0, 1.0))
    }

    #[test]
    fn pool_averages_each_window() {
        let x = Tensor::constant(
            Arr::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let y = x.avg_pool2d(2);
        assert_eq!(y.shape(), vec![1, 1, 1]);
        assert_eq!(y.to_array()[[0, 0, 0]], 2.5);
    }

    #[test]
    fn upsample_repeats_blocks() {
        let x = Tensor::constant(
            Arr::from_shape_vec(IxDyn(&[1, 1, 2]), vec![5.0, -3.0]).unwrap(),
        );
        let y = x.upsample_nearest(2).to_array();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y[[0, 1, 1]], 5.0);
        assert_eq!(y[[0, 0, 2]], -3.0);
    }

    #[test]
    fn pool_inverts_upsample_exactly() {
        let x = Tensor::constant(rand_arr(&[3, 4, 4], 1));
        let back = x.upsample_nearest(4).avg_pool2d(4).to_array();
        let orig = x.to_array();
        for (a, b) in back.iter().zip(orig.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_gradients_match_finite_differences() {
        let x = Tensor::parameter(rand_arr(&[2, 4, 4], 1));
        let params = vec![("x".to_string(), x.clone())];
        let gc = GradCheck { samples_per_param: 8, ..Default::default() };

        let wp = Tensor::constant(rand_arr(&[2, 2, 2], 2));
        gc.check(&params, || x.avg_pool2d(2).mul(&wp).sum_all()).unwrap();

        let wu = Tensor::constant(rand_arr(&[2, 12, 12], 3));
        gc.check(&params, || x.upsample_nearest(3).mul(&wu).sum_all()).unwrap();
    }

    #[test]
    #[should_panic(expected = "divisible")]
    fn pool_requires_divisible_dims() {
        let x = Tensor::constant(rand_arr(&[1, 5, 4], 1));
        x.avg_pool2d(2);
    }
}
