//! The structured kernels against brute-force reference loops, the
//! conv/deconv adjoint identity, and finite-difference gradient checks
//! for every differentiable op.

mod common;

use common::*;
use websal::losses::{
    adversarial_losses, generator_adversarial_loss, l2_pixel_loss, total_loss, tv_loss, GanMode,
    LossTerms, LossWeights,
};
use websal::rng::SplitMix64;
use websal::tensor::Mode;
use websal::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv2d_matches_brute_force_loops() {
    let mut rng = SplitMix64::new(11);
    let mut case = 0;
    let mut attempts = 0;
    while case < 10 {
        attempts += 1;
        assert!(attempts < 500, "geometry sampling should not starve");
        let (n, ci, co) = (1 + rng.next_below(2), 1 + rng.next_below(3), 1 + rng.next_below(3));
        let (h, w) = (3 + rng.next_below(6), 3 + rng.next_below(6));
        let k = 1 + 2 * rng.next_below(2); // 1 or 3
        let stride = 1 + rng.next_below(2);
        let pad = rng.next_below(3);
        let dil = 1 + rng.next_below(2);
        if conv_out(h, k, stride, pad, dil) == 0 || conv_out(w, k, stride, pad, dil) == 0 {
            continue;
        }
        case += 1;
        let x = randn((n, ci, h, w), &mut rng);
        let wgt = randn((co, ci, k, k), &mut rng);
        let bias = randn((1, co, 1, 1), &mut rng);

        let got = x.conv2d(&wgt, &bias, stride, pad, dil).unwrap();
        let (want, oh, ow) = conv2d_oracle(
            &x.to_vec(),
            (n, ci, h, w),
            &wgt.to_vec(),
            (co, k, k),
            &bias.to_vec(),
            stride,
            pad,
            dil,
        );
        assert_eq!(got.shape().h, oh, "case {case}");
        assert_eq!(got.shape().w, ow, "case {case}");
        for (g, e) in got.to_vec().iter().zip(&want) {
            assert!((g - e).abs() < 1e-10, "case {case}: {g} vs {e}");
        }
    }
}

#[test]
fn conv_transpose2d_matches_brute_force_loops() {
    let mut rng = SplitMix64::new(12);
    for case in 0..10 {
        let (n, ci, co) = (1 + rng.next_below(2), 1 + rng.next_below(3), 1 + rng.next_below(3));
        let (h, w) = (2 + rng.next_below(5), 2 + rng.next_below(5));
        let k = 2 + rng.next_below(3);
        let stride = 1 + rng.next_below(2);
        let pad = rng.next_below(2);
        if (h - 1) * stride + k <= 2 * pad {
            continue;
        }
        let x = randn((n, ci, h, w), &mut rng);
        let wgt = randn((ci, co, k, k), &mut rng);
        let bias = randn((1, co, 1, 1), &mut rng);

        let got = x.conv_transpose2d(&wgt, &bias, stride, pad).unwrap();
        let (want, oh, ow) = conv_transpose2d_oracle(
            &x.to_vec(),
            (n, ci, h, w),
            &wgt.to_vec(),
            (co, k, k),
            &bias.to_vec(),
            stride,
            pad,
        );
        assert_eq!((got.shape().h, got.shape().w), (oh, ow), "case {case}");
        for (g, e) in got.to_vec().iter().zip(&want) {
            assert!((g - e).abs() < 1e-10, "case {case}: {g} vs {e}");
        }
    }
}

#[test]
fn maxpool2d_matches_brute_force_loops() {
    let mut rng = SplitMix64::new(13);
    for case in 0..10 {
        let (n, c) = (1 + rng.next_below(2), 1 + rng.next_below(3));
        let k = 2 + rng.next_below(2);
        let stride = 1 + rng.next_below(2);
        let (h, w) = (k + rng.next_below(6), k + rng.next_below(6));
        let x = randn((n, c, h, w), &mut rng);

        let got = x.maxpool2d(k, stride).unwrap();
        let (want, oh, ow) = maxpool2d_oracle(&x.to_vec(), (n, c, h, w), k, stride);
        assert_eq!((got.shape().h, got.shape().w), (oh, ow), "case {case}");
        assert_eq!(got.to_vec(), want, "case {case}");
    }
}

/// `<conv(x), y> == <x, conv_transpose(y)>` with the same weight tensor:
/// the transposed kernel is literally the adjoint of the forward one.
/// Geometry is constrained to strides that tile the input evenly —
/// otherwise the minimal transpose grid cannot carry the adjoint mass of
/// the final row/column.
#[test]
fn conv_and_transpose_are_adjoint() {
    let mut rng = SplitMix64::new(14);
    let mut case = 0;
    let mut attempts = 0;
    while case < 10 {
        attempts += 1;
        assert!(attempts < 500, "geometry sampling should not starve");
        let (n, ci, co) = (1 + rng.next_below(2), 1 + rng.next_below(3), 1 + rng.next_below(3));
        let (h, w) = (4 + rng.next_below(5), 4 + rng.next_below(5));
        let k = 3;
        let stride = 1 + rng.next_below(2);
        let pad = 1;
        if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
            continue;
        }
        case += 1;
        let x = randn((n, ci, h, w), &mut rng);
        let wgt = randn((co, ci, k, k), &mut rng);
        let zero_f = Tensor::zeros((1, co, 1, 1));
        let zero_b = Tensor::zeros((1, ci, 1, 1));

        let ax = x.conv2d(&wgt, &zero_f, stride, pad, 1).unwrap();
        let y = randn(ax.shape(), &mut rng);
        // adjoint direction: same weight storage, reinterpreted (co,ci,k,k)
        let aty = y.conv_transpose2d(&wgt, &zero_b, stride, pad).unwrap();
        // conv_transpose reconstructs the minimal consistent input grid,
        // which can stop short of x when a stride-2 conv never read the
        // last row/column; those cells carry zero adjoint, so the inner
        // product over the overlap is the full inner product
        assert_eq!(aty.shape().c, ci, "case {case}");
        let lhs = dot(&ax.to_vec(), &y.to_vec());
        let (ah, aw) = (aty.shape().h, aty.shape().w);
        let (ov_h, ov_w) = (ah.min(h), aw.min(w));
        let (av, xv) = (aty.to_vec(), x.to_vec());
        let mut rhs = 0.0;
        for b in 0..n {
            for c in 0..ci {
                for yy in 0..ov_h {
                    for xx in 0..ov_w {
                        rhs += av[((b * ci + c) * ah + yy) * aw + xx]
                            * xv[((b * ci + c) * h + yy) * w + xx];
                    }
                }
            }
        }
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!(
            (lhs - rhs).abs() / scale < 1e-8,
            "case {case}: <Ax,y> = {lhs}, <x,A'y> = {rhs}"
        );
    }
}

#[test]
fn conv_ops_pass_gradcheck() {
    let mut rng = SplitMix64::new(21);
    let x = randn((2, 2, 5, 5), &mut rng);
    let w = randn((3, 2, 3, 3), &mut rng);
    let b = randn((1, 3, 1, 1), &mut rng);
    let target = randn((2, 3, 3, 3), &mut rng);
    let conv = |v: &[Tensor]| {
        v[0].conv2d(&v[1], &v[2], 2, 1, 1)
            .unwrap()
            .sub(&v[3])
            .unwrap()
            .square()
            .mean_all()
    };
    for arg in 0..3 {
        let err = gradcheck(&conv, &[x.clone(), w.clone(), b.clone(), target.clone()], arg, 10, &mut rng);
        assert!(err < 1e-4, "conv2d arg {arg}: rel err {err}");
    }

    let wt = randn((2, 3, 4, 4), &mut rng);
    let t_target = randn((2, 3, 10, 10), &mut rng);
    let deconv = |v: &[Tensor]| {
        v[0].conv_transpose2d(&v[1], &v[2], 2, 1)
            .unwrap()
            .sub(&v[3])
            .unwrap()
            .square()
            .mean_all()
    };
    for arg in 0..3 {
        let err = gradcheck(
            &deconv,
            &[x.clone(), wt.clone(), b.clone(), t_target.clone()],
            arg,
            10,
            &mut rng,
        );
        assert!(err < 1e-4, "conv_transpose2d arg {arg}: rel err {err}");
    }

    // pooling is piecewise linear; probes sit inside a linear piece as
    // long as window entries stay separated, which normal draws do
    let px = randn((2, 2, 6, 6), &mut rng);
    let p_target = randn((2, 2, 3, 3), &mut rng);
    let pool = |v: &[Tensor]| {
        v[0].maxpool2d(2, 2)
            .unwrap()
            .sub(&v[1])
            .unwrap()
            .square()
            .mean_all()
    };
    let err = gradcheck(&pool, &[px, p_target], 0, 10, &mut rng);
    assert!(err < 1e-4, "maxpool2d: rel err {err}");
}

#[test]
fn batchnorm_passes_gradcheck() {
    let mut rng = SplitMix64::new(22);
    let x = randn((3, 2, 4, 4), &mut rng);
    let gamma = randn((1, 2, 1, 1), &mut rng);
    let beta = randn((1, 2, 1, 1), &mut rng);
    let target = randn((3, 2, 4, 4), &mut rng);
    let bn = |v: &[Tensor]| {
        // fresh running stats every call: updated in train mode, never read
        let rm = Tensor::zeros((1, 2, 1, 1));
        let rv = Tensor::full((1, 2, 1, 1), 1.0);
        v[0].batchnorm2d(&v[1], &v[2], &rm, &rv, Mode::Train)
            .unwrap()
            .sub(&v[3])
            .unwrap()
            .square()
            .mean_all()
    };
    for arg in 0..3 {
        let err = gradcheck(
            &bn,
            &[x.clone(), gamma.clone(), beta.clone(), target.clone()],
            arg,
            10,
            &mut rng,
        );
        assert!(err < 1e-4, "batchnorm2d arg {arg}: rel err {err}");
    }
}

#[test]
fn elementwise_ops_pass_gradcheck() {
    let mut rng = SplitMix64::new(23);
    let target = randn((2, 2, 4, 4), &mut rng);
    let other = randn((2, 2, 4, 4), &mut rng);

    // (name, needs-margin, loss builder)
    type Case<'a> = (&'a str, bool, Box<dyn Fn(&[Tensor]) -> Tensor>);
    let t2 = target.clone();
    let o1 = other.clone();
    let o2 = other.clone();
    let cases: Vec<Case> = vec![
        ("relu", true, Box::new(|v| v[0].relu().square().mean_all())),
        ("sigmoid", false, Box::new(|v| v[0].sigmoid().square().mean_all())),
        ("square", false, Box::new(|v| v[0].square().mean_all())),
        ("scale+add_scalar", false, Box::new(|v| v[0].scale(-1.7).add_scalar(0.3).square().mean_all())),
        ("add", false, Box::new(move |v| v[0].add(&o1).unwrap().square().mean_all())),
        ("sub", false, Box::new(move |v| v[0].sub(&o2).unwrap().square().mean_all())),
        ("sum_all", false, Box::new(|v| v[0].square().sum_all())),
        ("mean_per_sample", false, Box::new(move |v| {
            v[0].sub(&t2).unwrap().square().mean_per_sample().mean_all()
        })),
        ("concat_channels", false, Box::new(|v| {
            Tensor::concat_channels(&[&v[0], &v[1]]).unwrap().square().mean_all()
        })),
        ("bce_mean", false, Box::new(|v| v[0].sigmoid().bce_mean(1.0))),
        ("total_variation", false, Box::new(|v| v[0].total_variation(1.0))),
        ("total_variation_sqrt", true, Box::new(|v| v[0].total_variation(2.0))),
    ];
    for (name, needs_margin, loss) in cases {
        let x = if needs_margin {
            randn_away_from_zero((2, 2, 4, 4), 0.2, &mut rng)
        } else {
            randn((2, 2, 4, 4), &mut rng)
        };
        let err = gradcheck(loss.as_ref(), &[x, other.clone()], 0, 10, &mut rng);
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
    let _ = target;
}

#[test]
fn loss_functions_pass_gradcheck() {
    let mut rng = SplitMix64::new(24);
    let truth_raw = randn((2, 1, 6, 6), &mut rng).sigmoid().detach();
    let pred_raw = randn((2, 1, 6, 6), &mut rng);

    let truth = truth_raw.clone();
    let l2 = move |v: &[Tensor]| l2_pixel_loss(&v[0].sigmoid(), &truth).unwrap();
    let err = gradcheck(&l2, &[pred_raw.clone()], 0, 10, &mut rng);
    assert!(err < 1e-4, "l2_pixel_loss: rel err {err}");

    for mode in [GanMode::WganClip, GanMode::Standard] {
        let g = move |v: &[Tensor]| {
            let scores = if mode == GanMode::Standard {
                v[0].sigmoid()
            } else {
                v[0].clone()
            };
            generator_adversarial_loss(&scores, mode)
        };
        let err = gradcheck(&g, &[randn((2, 1, 4, 4), &mut rng)], 0, 10, &mut rng);
        assert!(err < 1e-4, "generator loss {mode:?}: rel err {err}");

        let d = move |v: &[Tensor]| {
            let (real, fake) = if mode == GanMode::Standard {
                (v[0].sigmoid(), v[1].sigmoid())
            } else {
                (v[0].clone(), v[1].clone())
            };
            adversarial_losses(&real, &fake, mode).unwrap().1
        };
        let scores = [randn((2, 1, 4, 4), &mut rng), randn((2, 1, 4, 4), &mut rng)];
        for arg in 0..2 {
            let err = gradcheck(&d, &scores, arg, 10, &mut rng);
            assert!(err < 1e-4, "discriminator loss {mode:?} arg {arg}: rel err {err}");
        }
    }

    let tv = |v: &[Tensor]| tv_loss(&v[0], 1.0).unwrap();
    let err = gradcheck(&tv, &[randn((2, 1, 6, 6), &mut rng)], 0, 10, &mut rng);
    assert!(err < 1e-4, "tv_loss: rel err {err}");

    // the full five-term mix, differentiated through one shared map
    let truth = truth_raw.clone();
    let weights = LossWeights::default();
    let total = move |v: &[Tensor]| {
        let fine = v[0].sigmoid();
        let coarse = v[0].scale(0.5).sigmoid();
        let terms = LossTerms {
            l1: l2_pixel_loss(&coarse, &truth).unwrap(),
            l2_g: generator_adversarial_loss(&coarse.mean_per_sample(), GanMode::WganClip),
            l3: l2_pixel_loss(&fine, &truth).unwrap(),
            l4_g: generator_adversarial_loss(&fine.mean_per_sample(), GanMode::WganClip),
            tv: tv_loss(&fine, 1.0).unwrap(),
        };
        total_loss(&terms, &weights).unwrap()
    };
    let err = gradcheck(&total, &[pred_raw], 0, 10, &mut rng);
    assert!(err < 1e-4, "total_loss: rel err {err}");
}
