mod common;

use common::{max_rel_diff, random, rng};
use rand::Rng;
use rmk_core::mdcaa::{diagonal_branch, diagonal_strip, mdcaa_apply, mdcaa_weights, Diagonal, MdcaaWeights};
use rmk_core::nn::Initializer;
use rmk_core::tensor::gradcheck::gradcheck;
use rmk_core::tensor::kernels::{conv2d, rot90};
use rmk_core::tensor::{Conv2dParams, Direction, Tape};
use rmk_core::Tensor64;

fn dirac_taps(c: usize, m: usize) -> Tensor64 {
    Tensor64::from_fn(&[c, 1, 1, m], |i| if i % m == m / 2 { 1.0 } else { 0.0 }).unwrap()
}

#[test]
fn attention_is_bounded_and_attenuates() {
    let mut r = rng(1);
    for trial in 0..1000u64 {
        let w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(trial), 4, 5, 3).unwrap();
        let scale = 10f64.powf(r.gen_range(-2.0..2.0));
        let f = random(&[1, 4, 8, 8], 10_000 + trial).map(|v| v * scale);
        let a = mdcaa_weights(&f, &w).unwrap();
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0), "trial {trial}");
        let y = mdcaa_apply(&f, &w).unwrap();
        for (o, i) in y.data().iter().zip(f.data()) {
            assert!(o.abs() <= i.abs());
            if *i != 0.0 {
                assert!(o.abs() < i.abs());
            }
        }
    }
}

#[test]
fn zero_input_gives_zero_output() {
    let w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(2), 3, 7, 5).unwrap();
    let z = Tensor64::zeros(&[2, 3, 9, 6]).unwrap();
    assert!(mdcaa_apply(&z, &w).unwrap().data().iter().all(|&v| v == 0.0));
}

/// With a 1x1 pool, Dirac strips and an averaging fusion, the attention is
/// `sigmoid(P f + b)` per pixel for the pointwise matrix `P`.
#[test]
fn dirac_configuration_matches_hand_oracle() {
    let (c, m) = (3, 5);
    let mut w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(3), c, m, 1).unwrap();
    w.pointwise.bias = random(&[c], 4);
    let vert = Tensor64::from_fn(&[c, 1, m, 1], |i| if i % m == m / 2 { 1.0 } else { 0.0 }).unwrap();
    let horiz = Tensor64::from_fn(&[c, 1, 1, m], |i| if i % m == m / 2 { 1.0 } else { 0.0 }).unwrap();
    w.hv_vertical.kernel = vert.clone();
    w.vertical.kernel = vert;
    w.hv_horizontal.kernel = horiz.clone();
    w.horizontal.kernel = horiz;
    w.diag_main.kernel = diagonal_strip(&dirac_taps(c, m), Diagonal::Main).unwrap();
    w.diag_anti.kernel = diagonal_strip(&dirac_taps(c, m), Diagonal::Anti).unwrap();
    w.fusion.kernel = Tensor64::from_fn(&[c, 4 * c, 1, 1], |i| {
        let (o, j) = (i / (4 * c), i % (4 * c));
        if j % c == o { 0.25 } else { 0.0 }
    })
    .unwrap();
    w.validate().unwrap();

    let f = random(&[2, c, 6, 7], 5);
    let a = mdcaa_weights(&f, &w).unwrap();
    let p = &w.pointwise.kernel;
    let [n, _, h, wd] = f.dims4().unwrap();
    let oracle = Tensor64::from_fn(&[n, c, h, wd], |flat| {
        let (b, rest) = (flat / (c * h * wd), flat % (c * h * wd));
        let (o, rest) = (rest / (h * wd), rest % (h * wd));
        let (y, x) = (rest / wd, rest % wd);
        let z: f64 = (0..c).map(|i| p.at4(o, i, 0, 0) * f.at4(b, i, y, x)).sum::<f64>() + w.pointwise.bias.data()[o];
        1.0 / (1.0 + (-z).exp())
    })
    .unwrap();
    assert!(max_rel_diff(&a, &oracle) <= 1e-6);
}

#[test]
fn diagonal_branch_equals_rotated_kernel_conv() {
    let (c, m) = (2, 5);
    let w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(6), c, m, 3).unwrap();
    let hv = random(&[1, c, 9, 7], 7);
    for (which, conv, undo) in [
        (Diagonal::Main, &w.diag_main, Direction::Ccw),
        (Diagonal::Anti, &w.diag_anti, Direction::Cw),
    ] {
        let direct_kernel = rot90(&conv.kernel, undo).unwrap();
        let direct = conv2d(&hv, &direct_kernel, Some(&conv.bias), &Conv2dParams::same(m, m).with_groups(c)).unwrap();
        let got = diagonal_branch(&hv, &w, which).unwrap();
        assert!(max_rel_diff(&got, &direct) <= 1e-6, "{which:?}");
    }
}

#[test]
fn dirac_diagonal_is_bit_exact_identity() {
    let mut w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(8), 3, 7, 3).unwrap();
    w.diag_main.kernel = diagonal_strip(&dirac_taps(3, 7), Diagonal::Main).unwrap();
    w.diag_anti.kernel = diagonal_strip(&dirac_taps(3, 7), Diagonal::Anti).unwrap();
    let x = random(&[2, 3, 5, 8], 9);
    for which in [Diagonal::Main, Diagonal::Anti] {
        assert_eq!(diagonal_branch(&x, &w, which).unwrap(), x);
    }
}

#[test]
fn bright_pixel_spreads_along_a_diagonal() {
    let m = 3;
    let mut w = MdcaaWeights::<f64>::new(&mut Initializer::Zeros, 1, m, 1).unwrap();
    let avg = Tensor64::full(&[1, 1, 1, m], 1.0 / 3.0).unwrap();
    w.diag_main.kernel = diagonal_strip(&avg, Diagonal::Main).unwrap();
    w.diag_anti.kernel = diagonal_strip(&avg, Diagonal::Anti).unwrap();
    let (h, wd, r0, c0) = (7, 9, 3, 4);
    let x = Tensor64::from_fn(&[1, 1, h, wd], |i| if i == r0 * wd + c0 { 1.0 } else { 0.0 }).unwrap();
    for (which, dc) in [(Diagonal::Main, 1isize), (Diagonal::Anti, -1)] {
        let y = diagonal_branch(&x, &w, which).unwrap();
        // walk every cell: lit exactly on the line through the pixel
        for r in 0..h {
            for c in 0..wd {
                let d = r as isize - r0 as isize;
                let on = d.abs() <= 1 && c as isize - c0 as isize == dc * d;
                let want = if on { 1.0 / 3.0 } else { 0.0 };
                assert!((y.at4(0, 0, r, c) - want).abs() < 1e-15, "{which:?} at ({r}, {c})");
            }
        }
    }
}

#[test]
fn diagonal_branches_commute_with_transpose() {
    // transposition maps each diagonal line onto itself, so a branch with
    // palindromic taps commutes with it
    let m = 5;
    let mut w = MdcaaWeights::<f64>::new(&mut Initializer::Zeros, 1, m, 1).unwrap();
    let taps = Tensor64::new(vec![1, 1, 1, m], vec![0.1, -0.4, 0.7, -0.4, 0.1]).unwrap();
    w.diag_main.kernel = diagonal_strip(&taps, Diagonal::Main).unwrap();
    w.diag_anti.kernel = diagonal_strip(&taps, Diagonal::Anti).unwrap();
    let x = random(&[1, 1, 8, 8], 10);
    let transpose = |t: &Tensor64| Tensor64::from_fn(t.dims(), |i| t.at4(0, 0, i % 8, i / 8)).unwrap();
    for which in [Diagonal::Main, Diagonal::Anti] {
        let a = transpose(&diagonal_branch(&x, &w, which).unwrap());
        let b = diagonal_branch(&transpose(&x), &w, which).unwrap();
        assert!(max_rel_diff(&a, &b) <= 1e-6, "{which:?}");
    }
}

#[test]
fn apply_gradcheck() {
    let w = MdcaaWeights::<f64>::new(&mut Initializer::seeded(11), 4, 5, 3).unwrap();
    let f = random(&[1, 4, 8, 8], 12);
    let g = |t: &mut Tape<f64>, v| {
        let y = w.apply(t, v)?;
        common::weighted_sum(t, y, 13)
    };
    let err = gradcheck(g, &f, 1e-5).unwrap();
    assert!(err <= 1e-5, "{err:e}");
}
