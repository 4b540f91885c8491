//! Kernels against independent scalar routines, plus their algebraic
//! properties.

mod common;

use common::{opts, project_one, random, rng};
use proptest::prelude::*;
use rand::Rng;
use tpn_core::tensor::kernels::{axis_map, bilinear_resize, bilinear_weights, conv2d, group_norm, relu};
use tpn_core::tensor::{grad_check, GradCheckOptions};
use tpn_core::{ParamStore, Registry, Shape, Tape, Tensor, Var};

/// Direct multiply-accumulate over the receptive field.
fn conv_loops(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                                }
                            }
                        }
                    }
                    let i = out.index(n, o, oy, ox);
                    out.data_mut()[i] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_fixed_kernel_on_fixed_input() {
    let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |i| i as f64);
    let w = Tensor::from_vec(
        Shape::new(1, 1, 3, 3),
        vec![1.0, 0.0, -1.0, 2.0, 0.5, -2.0, 1.0, 0.0, -1.0],
    )
    .unwrap();
    let y = conv2d(&x, &w, None, 1, 1).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
    // Hand evaluation at the corner (0,0): taps (1,1),(1,2),(2,1),(2,2) of
    // the kernel meet x[0][0]=0, x[0][1]=1, x[1][0]=4, x[1][1]=5.
    assert_eq!(y.at(0, 0, 0, 0), 0.5 * 0.0 - 2.0 * 1.0 + 0.0 * 4.0 - 1.0 * 5.0);
    assert_eq!(y.data(), conv_loops(&x, &w, None, 1, 1).data());
}

#[test]
fn conv_pointwise_identity_and_pyramid_sizes() {
    let mut r = rng(1);
    let x = random(Shape::new(2, 5, 3, 4), &mut r);
    let eye = Tensor::from_fn(Shape::new(5, 5, 1, 1), |i| if i / 5 == i % 5 { 1.0 } else { 0.0 });
    assert_eq!(conv2d(&x, &eye, None, 1, 0).unwrap().data(), x.data());
    let w = random(Shape::new(2, 1, 3, 3), &mut r);
    let p5 = Tensor::<f64>::zeros(Shape::new(1, 1, 25, 25));
    let p6 = conv2d(&p5, &w, None, 2, 1).unwrap();
    assert_eq!((p6.shape().h, p6.shape().w), (13, 13));
    let p7 = conv2d(&Tensor::zeros(Shape::new(1, 1, 13, 13)), &w, None, 2, 1).unwrap();
    assert_eq!((p7.shape().h, p7.shape().w), (7, 7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_loop_nest(
        n in 1usize..3, c in 1usize..5, o in 1usize..5, h in 1usize..9, w in 1usize..9,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, seed in any::<u64>(),
    ) {
        let pad = k / 2;
        let mut r = rng(seed);
        let x = random(Shape::new(n, c, h, w), &mut r);
        let wt = random(Shape::new(o, c, k, k), &mut r);
        let b: Vec<f64> = (0..o).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bt = Tensor::from_vec(Shape::vector(o), b.clone()).unwrap();
        let fast = conv2d(&x, &wt, Some(&bt), stride, pad).unwrap();
        let slow = conv_loops(&x, &wt, Some(&b), stride, pad);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn conv_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random(Shape::new(1, 3, 6, 5), &mut r);
        let y = random(Shape::new(1, 3, 6, 5), &mut r);
        let w = random(Shape::new(4, 3, 3, 3), &mut r);
        let mix = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]);
        let lhs = conv2d(&mix, &w, None, 1, 1).unwrap();
        let (cx, cy) = (conv2d(&x, &w, None, 1, 1).unwrap(), conv2d(&y, &w, None, 1, 1).unwrap());
        for (i, &l) in lhs.data().iter().enumerate() {
            let rhs = a * cx.data()[i] + b * cy.data()[i];
            prop_assert!((l - rhs).abs() <= 1e-5 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn bilinear_weights_partition_unity(in_len in 1usize..40, out_len in 1usize..40) {
        let m = axis_map(in_len, out_len);
        for &fy in &m.frac {
            for &fx in &m.frac {
                let s: f64 = bilinear_weights(fy, fx).iter().sum();
                prop_assert!((s - 1.0).abs() <= f64::EPSILON);
            }
        }
    }

    #[test]
    fn group_norm_statistics(groups in prop::sample::select(vec![1usize, 2, 4]), h in 1usize..6, w in 2usize..6, seed in any::<u64>()) {
        let c = 8;
        let mut r = rng(seed);
        let x = Tensor::from_fn(Shape::new(2, c, h, w), |_| r.gen_range(-5.0..5.0));
        let ones = Tensor::full(Shape::vector(c), 1.0);
        let zeros = Tensor::zeros(Shape::vector(c));
        let (y, _) = group_norm(&x, groups, &ones, &zeros, 1e-5).unwrap();
        let per = c / groups * h * w;
        for chunk in y.data().chunks(per) {
            // Independent two-pass statistics.
            let mean = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }
}

#[test]
fn group_norm_trivial_cases() {
    let x = Tensor::full(Shape::new(1, 4, 3, 3), 2.5);
    let ones = Tensor::full(Shape::vector(4), 1.0);
    let zeros = Tensor::zeros(Shape::vector(4));
    assert!(group_norm(&x, 2, &ones, &zeros, 1e-5)
        .unwrap()
        .0
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let beta = Tensor::from_vec(Shape::vector(4), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let y = group_norm(&random(Shape::new(1, 4, 3, 3), &mut rng(2)), 2, &zeros, &beta, 1e-5)
        .unwrap()
        .0;
    for c in 0..4 {
        assert!((0..9).all(|i| y.data()[c * 9 + i] == beta.data()[c]));
    }
    assert!(group_norm(&x, 3, &Tensor::full(Shape::vector(4), 1.0), &zeros, 1e-5).is_err());
}

#[test]
fn relu_cases() {
    let x = Tensor::from_vec(Shape::vector(3), vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
}

/// Half-pixel sampling written out per output pixel.
fn resize_scalar(x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let src = |d: usize, inl: usize, outl: usize| {
        ((d as f64 + 0.5) * inl as f64 / outl as f64 - 0.5).clamp(0.0, (inl - 1) as f64)
    };
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let (sy, sx) = (src(oy, h, oh), src(ox, w, ow));
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = x[y0 * w + x0] * (1.0 - fx) + x[y0 * w + x1] * fx;
            let bot = x[y1 * w + x0] * (1.0 - fx) + x[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

#[test]
fn bilinear_two_by_two_to_four_by_four() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = bilinear_resize(&x, 4, 4).unwrap();
    let oracle = resize_scalar(x.data(), 2, 2, 4, 4);
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-15);
    }
    // Row 0 sits on the border; column offsets 0, 0.25, 0.75, 1.
    assert_eq!(&oracle[..4], &[0.0, 0.25, 0.75, 1.0]);
    assert_eq!(bilinear_resize(&x, 2, 2).unwrap().data(), x.data());
    let c = Tensor::full(Shape::new(1, 2, 3, 5), 0.375);
    assert!(bilinear_resize(&c, 7, 2).unwrap().data().iter().all(|&v| v == 0.375));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bilinear_matches_scalar_routine(h in 1usize..7, w in 1usize..7, oh in 1usize..13, ow in 1usize..13, seed in any::<u64>()) {
        let x = random(Shape::new(1, 1, h, w), &mut rng(seed));
        let y = bilinear_resize(&x, oh, ow).unwrap();
        for (a, b) in y.data().iter().zip(resize_scalar(x.data(), h, w, oh, ow)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> tpn_core::Result<Var>) -> f64 {
    grad_check(inputs, f, &GradCheckOptions::default()).unwrap().max_rel_err
}

#[test]
fn kernel_gradients_meet_per_kernel_bounds() {
    let mut r = rng(3);
    let x = random(Shape::new(1, 3, 5, 5), &mut r);
    let w = random(Shape::new(2, 3, 3, 3), &mut r);
    let e = check(&[x.clone(), w], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 1)?;
        Ok(t.sum(y))
    });
    assert!(e < 1e-6, "conv {e:e}");
    let g = random(Shape::vector(3), &mut r);
    let b = random(Shape::vector(3), &mut r);
    let e = check(&[x.clone(), g, b], |t, v| {
        let y = t.group_norm(v[0], v[1], v[2], 3, 1e-5)?;
        project_one(t, y, 4)
    });
    assert!(e < 1e-5, "group norm {e:e}");
    let e = check(&[x], |t, v| {
        let y = t.resize(v[0], 10, 10)?;
        project_one(t, y, 5)
    });
    assert!(e < 1e-6, "resize {e:e}");
}

/// Random chains of up to five kernels, each applied to the running value.
#[test]
fn random_kernel_compositions() {
    let mut r = rng(6);
    for case in 0..24 {
        let depth = r.gen_range(1..=5);
        let ops: Vec<u8> = (0..depth).map(|_| r.gen_range(0..5)).collect();
        let x = random(Shape::new(1, 4, 6, 6), &mut r);
        let w = random(Shape::new(4, 4, 3, 3), &mut r);
        let g = random(Shape::vector(4), &mut r);
        let b = random(Shape::vector(4), &mut r);
        let other = random(Shape::new(1, 4, 6, 6), &mut r);
        let e = grad_check(
            &[x, w, g, b, other],
            |t, v| {
                let mut y = v[0];
                for op in &ops {
                    let s = t.shape(y);
                    y = match op {
                        0 => t.conv2d(y, v[1], None, 1, 1)?,
                        1 => t.group_norm(y, v[2], v[3], 2, 1e-5)?,
                        2 => t.relu(y),
                        3 => {
                            let up = t.resize(y, s.h + 3, s.w + 1)?;
                            t.resize(up, 6, 6)?
                        }
                        _ => t.add(y, v[4])?,
                    };
                    if t.shape(y).h != 6 {
                        y = t.resize(y, 6, 6)?;
                    }
                }
                project_one(t, y, 7)
            },
            &opts(40),
        )
        .unwrap();
        assert!(e.max_rel_err < 1e-4, "case {case} {ops:?}: {:e}", e.max_rel_err);
    }
}

#[test]
fn seeded_initialization_forward_and_gradients_are_reproducible() {
    let mut reg = Registry::new();
    let node = tpn_core::blocks::ConvNode::register(&mut reg, "n", 4, 4, 3, 1, 2).unwrap();
    let run = || {
        let store = ParamStore::<f32>::init(&reg, 42);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(random(Shape::new(1, 4, 5, 5), &mut rng(8)).cast());
        let y = node.forward(&mut tape, &p, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let grads: Vec<Vec<f32>> = p.vars().iter().map(|&v| g.get(v).unwrap().data().to_vec()).collect();
        let params: Vec<Vec<f32>> = store.iter().map(|(_, q)| q.tensor.data().to_vec()).collect();
        (params, tape.value(y).data().to_vec(), grads)
    };
    assert_eq!(run(), run());
    assert_ne!(
        ParamStore::<f32>::init(&reg, 1).tensor(node.conv.weight).data(),
        ParamStore::<f32>::init(&reg, 2).tensor(node.conv.weight).data()
    );
}
