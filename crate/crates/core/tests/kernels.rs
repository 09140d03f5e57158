//! Optimized kernels against direct nested-loop references.

use proptest::prelude::*;
use rsn_core::rng::stream;
use rsn_core::tensor::ops::{self, Activation, Pool};
use rsn_core::{Shape, Tensor};

/// Float32 accumulation in `(ci, ki, kj)` order, the reference's natural loop order.
fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: Option<&Tensor<f32>>, stride: usize, pad: usize, groups: usize) -> Tensor<f32> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let ho = (xs.h + 2 * pad - k) / stride + 1;
    let wo = (xs.w + 2 * pad - k) / stride + 1;
    let cin_g = xs.c / groups;
    let cout_g = ws.n / groups;
    Tensor::from_fn(Shape::new(xs.n, ws.n, ho, wo), |n, co, oh, ow| {
        let g = co / cout_g;
        let mut acc = 0.0f32;
        for ci in 0..cin_g {
            for ki in 0..k {
                for kj in 0..k {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    let iw = (ow * stride + kj) as isize - pad as isize;
                    if ih < 0 || iw < 0 || ih >= xs.h as isize || iw >= xs.w as isize {
                        continue;
                    }
                    acc += w.at(co, ci, ki, kj) * x.at(n, g * cin_g + ci, ih as usize, iw as usize);
                }
            }
        }
        acc + b.map_or(0.0, |b| b.data()[co])
    })
}

fn maxpool_oracle(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    let (ho, wo) = ((s.h + 2 - 3) / 2 + 1, (s.w + 2 - 3) / 2 + 1);
    Tensor::from_fn(Shape::new(s.n, s.c, ho, wo), |n, c, oh, ow| {
        let mut m = f32::NEG_INFINITY;
        for ih in (2 * oh) as isize - 1..=(2 * oh) as isize + 1 {
            for iw in (2 * ow) as isize - 1..=(2 * ow) as isize + 1 {
                if ih >= 0 && iw >= 0 && (ih as usize) < s.h && (iw as usize) < s.w {
                    m = m.max(x.at(n, c, ih as usize, iw as usize));
                }
            }
        }
        m
    })
}

fn close(a: &Tensor<f32>, b: &Tensor<f32>, tol: f64) {
    let d = a.max_abs_diff(b).expect("same shape");
    assert!(d <= tol, "max diff {d}");
}

#[test]
fn conv_matches_nested_loops_on_the_reference_case() {
    let mut rng = stream(11, &[]);
    let x = Tensor::<f32>::randn(Shape::new(2, 3, 8, 8), 1.0, &mut rng);
    let w = Tensor::<f32>::randn(Shape::new(4, 3, 3, 3), 1.0, &mut rng);
    close(&ops::conv2d(&x, &w, None, 1, 1).unwrap(), &conv_oracle(&x, &w, None, 1, 1, 1), 1e-6);
}

#[test]
fn conv_matches_nested_loops_across_kernels_and_strides() {
    let mut rng = stream(12, &[]);
    for (k, stride, pad) in [(1, 1, 0), (1, 2, 0), (3, 2, 1), (7, 2, 3), (9, 1, 4), (3, 1, 0)] {
        let x = Tensor::<f32>::randn(Shape::new(2, 3, 11, 9), 0.5, &mut rng);
        let w = Tensor::<f32>::randn(Shape::new(5, 3, k, k), 0.5, &mut rng);
        let b = Tensor::<f32>::randn(Shape::channels(5), 1.0, &mut rng);
        close(
            &ops::conv2d(&x, &w, Some(&b), stride, pad).unwrap(),
            &conv_oracle(&x, &w, Some(&b), stride, pad, 1),
            1e-5,
        );
    }
}

#[test]
fn kernels_wider_than_the_map() {
    let mut rng = stream(13, &[]);
    for (k, stride, h, w) in [(9, 1, 3, 3), (9, 2, 3, 4), (7, 1, 2, 5), (7, 2, 3, 3)] {
        let x = Tensor::<f32>::randn(Shape::new(1, 2, h, w), 1.0, &mut rng);
        let wt = Tensor::<f32>::randn(Shape::new(3, 2, k, k), 1.0, &mut rng);
        let y = ops::conv2d(&x, &wt, None, stride, k / 2).unwrap();
        close(&y, &conv_oracle(&x, &wt, None, stride, k / 2, 1), 1e-5);
        let dy = Tensor::<f32>::randn(y.shape(), 1.0, &mut rng);
        let g = ops::conv2d_backward(&x, &wt, false, &dy, stride, k / 2, true).unwrap();
        assert_eq!(g.dx.unwrap().shape(), x.shape());
    }
}

#[test]
fn depthwise_matches_grouped_oracle() {
    let mut rng = stream(13, &[]);
    for (k, stride) in [(9, 1), (3, 2), (5, 1)] {
        let x = Tensor::<f32>::randn(Shape::new(2, 4, 10, 7), 0.5, &mut rng);
        let w = Tensor::<f32>::randn(Shape::new(4, 1, k, k), 0.5, &mut rng);
        close(
            &ops::depthwise_conv2d(&x, &w, None, stride, k / 2).unwrap(),
            &conv_oracle(&x, &w, None, stride, k / 2, 4),
            1e-6,
        );
    }
}

#[test]
fn max_pool_matches_oracle() {
    let mut rng = stream(14, &[]);
    for (h, w) in [(8, 8), (7, 5), (3, 3), (16, 12)] {
        let x = Tensor::<f32>::randn(Shape::new(2, 3, h, w), 1.0, &mut rng);
        close(&ops::pool(&x, Pool::Max3x3S2).unwrap(), &maxpool_oracle(&x), 0.0);
    }
}

#[test]
fn broadcast_mul_matches_loop_oracle() {
    let mut rng = stream(15, &[]);
    let x = Tensor::<f32>::randn(Shape::new(3, 4, 5, 6), 1.0, &mut rng);
    let a = Tensor::<f32>::randn(Shape::channels(4), 1.0, &mut rng);
    let y = ops::mul(&x, &a).unwrap();
    let oracle = Tensor::from_fn(x.shape(), |n, c, h, w| x.at(n, c, h, w) * a.data()[c]);
    assert_eq!(y, oracle);
    let per_sample = Tensor::<f32>::randn(Shape::new(3, 4, 1, 1), 1.0, &mut rng);
    let y = ops::mul(&x, &per_sample).unwrap();
    let oracle = Tensor::from_fn(x.shape(), |n, c, h, w| x.at(n, c, h, w) * per_sample.at(n, c, 0, 0));
    assert_eq!(y, oracle);
}

#[test]
fn resize_matches_loop_oracle() {
    let mut rng = stream(16, &[]);
    let x = Tensor::<f32>::randn(Shape::new(2, 3, 4, 5), 1.0, &mut rng);
    for f in [2, 3] {
        let y = ops::resize_nearest(&x, f).unwrap();
        let s = x.shape();
        let oracle = Tensor::from_fn(Shape::new(s.n, s.c, s.h * f, s.w * f), |n, c, h, w| x.at(n, c, h / f, w / f));
        assert_eq!(y, oracle);
    }
}

fn small_shape() -> impl Strategy<Value = Shape> {
    (1usize..4, 1usize..5, 1usize..9, 1usize..9).prop_map(|(n, c, h, w)| Shape::new(n, c, h, w))
}

proptest! {
    #[test]
    fn conv_random_shapes_match_oracle(
        seed in any::<u64>(),
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..10, w in 3usize..10,
        kidx in 0usize..2, stride in 1usize..3,
    ) {
        let k = [1, 3][kidx];
        let mut rng = stream(seed, &[]);
        let x = Tensor::<f32>::randn(Shape::new(n, cin, h, w), 1.0, &mut rng);
        let wt = Tensor::<f32>::randn(Shape::new(cout, cin, k, k), 1.0, &mut rng);
        let got = ops::conv2d(&x, &wt, None, stride, k / 2).unwrap();
        let d = got.max_abs_diff(&conv_oracle(&x, &wt, None, stride, k / 2, 1)).unwrap();
        prop_assert!(d <= 1e-5, "diff {}", d);
    }

    #[test]
    fn split_then_concat_is_identity(seed in any::<u64>(), s in small_shape(), parts in 1usize..4) {
        let mut rng = stream(seed, &[]);
        let x = Tensor::<f32>::randn(Shape::new(s.n, s.c * parts, s.h, s.w), 1.0, &mut rng);
        let pieces = ops::channel_split(&x, parts).unwrap();
        let refs: Vec<_> = pieces.iter().collect();
        prop_assert_eq!(ops::channel_concat(&refs).unwrap(), x);
    }

    #[test]
    fn resize_preserves_channel_max(seed in any::<u64>(), s in small_shape(), f in 2usize..4) {
        let mut rng = stream(seed, &[]);
        let x = Tensor::<f32>::randn(s, 1.0, &mut rng);
        let y = ops::resize_nearest(&x, f).unwrap();
        for n in 0..s.n {
            for c in 0..s.c {
                let mx = |t: &Tensor<f32>| {
                    let ts = t.shape();
                    (0..ts.h).flat_map(|h| (0..ts.w).map(move |w| (h, w)))
                        .map(|(h, w)| t.at(n, c, h, w)).fold(f32::NEG_INFINITY, f32::max)
                };
                prop_assert_eq!(mx(&x), mx(&y));
            }
        }
    }

    #[test]
    fn sigmoid_in_open_unit_interval(v in -20.0f64..20.0) {
        let y = ops::activation(&Tensor::<f64>::scalar(v), Activation::Sigmoid).data()[0];
        prop_assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn relu_is_idempotent(seed in any::<u64>(), s in small_shape()) {
        let mut rng = stream(seed, &[]);
        let x = Tensor::<f32>::randn(s, 1.0, &mut rng);
        let once = ops::activation(&x, Activation::Relu);
        prop_assert_eq!(ops::activation(&once, Activation::Relu), once);
    }
}
