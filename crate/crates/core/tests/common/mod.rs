//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmk_core::Tensor64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(dims: &[usize], seed: u64) -> Tensor64 {
    let mut r = rng(seed);
    Tensor64::from_fn(dims, |_| r.gen_range(-1.0..1.0)).unwrap()
}

/// Direct seven-loop grouped cross-correlation with zero padding.
pub fn naive_conv(
    x: &Tensor64,
    k: &Tensor64,
    bias: Option<&[f64]>,
    stride: (usize, usize),
    pad: (usize, usize),
    groups: usize,
) -> Tensor64 {
    let (n, ci, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (co, cig, kh, kw) = (k.dims()[0], k.dims()[1], k.dims()[2], k.dims()[3]);
    assert_eq!(cig * groups, ci);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let cog = co / groups;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            let g = o / cog;
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for i in 0..cig {
                        let ic = g * cig + i;
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (r * stride.0 + u) as isize - pad.0 as isize;
                                let xx = (c * stride.1 + v) as isize - pad.1 as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x.at4(b, ic, y as usize, xx as usize) * k.at4(o, i, u, v);
                            }
                        }
                    }
                    out[((b * co + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    Tensor64::new(vec![n, co, oh, ow], out).unwrap()
}

/// Counter-clockwise quarter turn by explicit index enumeration.
pub fn naive_rot_ccw(x: &Tensor64) -> Tensor64 {
    let (n, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let mut out = vec![0.0; x.numel()];
    for b in 0..n {
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    // input (r, col) lands at output (w - 1 - col, r) in an (w, h) map
                    let (orow, ocol) = (w - 1 - col, r);
                    out[((b * c + ch) * w + orow) * h + ocol] = x.at4(b, ch, r, col);
                }
            }
        }
    }
    Tensor64::new(vec![n, c, w, h], out).unwrap()
}

/// Full kernel `u v^T` for a single channel pair.
pub fn outer(u: &[f64], v: &[f64]) -> Tensor64 {
    let m = u.len();
    Tensor64::from_fn(&[1, 1, m, v.len()], |i| u[i / v.len()] * v[i % v.len()]).unwrap()
}

pub fn max_rel_diff(a: &Tensor64, b: &Tensor64) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

use rmk_core::tensor::{Conv2dParams, Direction, PoolParams, Tape, Var};
use rmk_core::{Result, Scalar, Tensor};

pub type Case<T> = (&'static str, Tensor<T>, Box<dyn Fn(&mut Tape<T>, Var) -> Result<Var>>);

/// Random-weighted sum, so every output coordinate gets a distinct cotangent.
pub fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, v: Var, seed: u64) -> Result<Var> {
    let w = random(tape.dims(v), seed).cast::<T>();
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

/// One composite per differentiable op, each reduced to a scalar.
pub fn op_cases<T: Scalar>() -> Vec<Case<T>> {
    let x = random(&[1, 2, 5, 6], 1).cast::<T>();
    let k = random(&[3, 2, 3, 3], 2).cast::<T>();
    let dw = random(&[2, 1, 1, 5], 3).cast::<T>();
    let other = random(&[1, 2, 5, 6], 4).cast::<T>();
    let positive = random(&[1, 2, 5, 6], 5).map(|v| v.abs() + 0.5).cast::<T>();
    let mut cases: Vec<Case<T>> = Vec::new();
    {
        let k = k.clone();
        cases.push((
            "conv2d/input",
            x.clone(),
            Box::new(move |t, v| {
                let k = t.constant(k.clone());
                let y = t.conv2d(v, k, None, Conv2dParams::same(3, 3))?;
                weighted_sum(t, y, 10)
            }),
        ));
    }
    {
        let x = x.clone();
        cases.push((
            "conv2d/kernel",
            k.clone(),
            Box::new(move |t, v| {
                let xin = t.constant(x.clone());
                let y = t.conv2d(xin, v, None, Conv2dParams::same(3, 3).with_stride(2, 2))?;
                weighted_sum(t, y, 11)
            }),
        ));
    }
    {
        let x = x.clone();
        cases.push((
            "conv2d/bias",
            Tensor::from_fn(&[2], |i| T::lit(0.3 * i as f64 - 0.1)).unwrap(),
            Box::new(move |t, v| {
                let xin = t.constant(x.clone());
                let k = t.constant(dw.clone());
                let y = t.conv2d(xin, k, Some(v), Conv2dParams::same(1, 5).with_groups(2))?;
                weighted_sum(t, y, 12)
            }),
        ));
    }
    cases.push((
        "conv2d+sigmoid+sum",
        x.clone(),
        Box::new(move |t, v| {
            let k = t.constant(k.clone());
            let y = t.conv2d(v, k, None, Conv2dParams::same(3, 3))?;
            let s = t.sigmoid(y)?;
            t.sum(s)
        }),
    ));
    cases.push(("rot90/ccw", x.clone(), Box::new(|t, v| {
        let r = t.rot90(v, Direction::Ccw)?;
        weighted_sum(t, r, 13)
    })));
    cases.push(("rot90/cw", x.clone(), Box::new(|t, v| {
        let r = t.rot90(v, Direction::Cw)?;
        weighted_sum(t, r, 14)
    })));
    cases.push(("avg_pool", x.clone(), Box::new(|t, v| {
        let r = t.avg_pool(v, PoolParams::same(3))?;
        weighted_sum(t, r, 15)
    })));
    cases.push(("avg_pool/strided", x.clone(), Box::new(|t, v| {
        let p = PoolParams { window: (2, 3), stride: (2, 2), padding: (1, 0) };
        let r = t.avg_pool(v, p)?;
        weighted_sum(t, r, 16)
    })));
    cases.push(("sigmoid", x.clone().map(|v| v * T::lit(3.0)), Box::new(|t, v| {
        let r = t.sigmoid(v)?;
        weighted_sum(t, r, 17)
    })));
    {
        let other = other.clone();
        cases.push(("concat_channels", x.clone(), Box::new(move |t, v| {
            let o = t.constant(other.clone());
            let r = t.concat_channels(&[o, v, o])?;
            weighted_sum(t, r, 18)
        })));
    }
    cases.push(("slice_channels", x.clone(), Box::new(|t, v| {
        let r = t.slice_channels(v, 1, 1)?;
        weighted_sum(t, r, 19)
    })));
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let other = other.clone();
        cases.push((name, x.clone(), Box::new(move |t, v| {
            let o = t.constant(other.clone());
            let r = match which {
                0 => t.add(v, o)?,
                1 => t.sub(o, v)?,
                _ => t.mul(v, o)?,
            };
            weighted_sum(t, r, 20)
        })));
    }
    {
        let positive = positive.clone();
        cases.push(("div/numerator", x.clone(), Box::new(move |t, v| {
            let d = t.constant(positive.clone());
            let r = t.div(v, d)?;
            weighted_sum(t, r, 21)
        })));
    }
    {
        let x = x.clone();
        cases.push(("div/denominator", positive.clone(), Box::new(move |t, v| {
            let n = t.constant(x.clone());
            let r = t.div(n, v)?;
            weighted_sum(t, r, 22)
        })));
    }
    cases.push(("scale", x.clone(), Box::new(|t, v| {
        let r = t.scale(v, T::lit(-1.75))?;
        weighted_sum(t, r, 23)
    })));
    cases.push(("square", x.clone(), Box::new(|t, v| {
        let r = t.square(v)?;
        weighted_sum(t, r, 24)
    })));
    cases.push(("sqrt", positive, Box::new(|t, v| {
        let r = t.sqrt(v)?;
        weighted_sum(t, r, 25)
    })));
    cases.push(("smooth_l1", x.clone().map(|v| v * T::lit(2.0)), Box::new(|t, v| {
        let r = t.smooth_l1(v, T::lit(0.5))?;
        weighted_sum(t, r, 26)
    })));
    cases.push((
        "broadcast",
        Tensor::from_fn(&[2, 1, 6], |i| T::lit(0.1 * i as f64)).unwrap(),
        Box::new(|t, v| {
            let r = t.broadcast(v, &[1, 2, 5, 6])?;
            weighted_sum(t, r, 27)
        }),
    ));
    cases.push(("sum", x, Box::new(|t, v| {
        let s = t.sum(v)?;
        t.square(s)
    })));
    cases
}

use rmk_core::pyramid::NetworkConfig;

/// Documented `(name, dims)` of every dump for a batch-1 `h x w` input.
pub fn expected_shapes(cfg: &NetworkConfig, h: usize, w: usize) -> Vec<(String, Vec<usize>)> {
    let t = cfg.tower_channels();
    let at = |s: usize, c: usize| vec![1, c, h / s, w / s];
    let mut v = Vec::new();
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("C{}", i + 3), at(*s, cfg.backbone_channels[i])));
    }
    for (i, s) in [4, 8, 16, 32].iter().enumerate() {
        v.push((format!("M{}", i + 1), at(*s, t)));
    }
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("CP{}", i + 2), at(*s, t)));
    }
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("N{}", i + 3), at(*s, t)));
    }
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("F{}", i + 3), at(*s, cfg.fused_channels()[i])));
    }
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("logits{}", i + 3), at(*s, cfg.anchors * cfg.classes)));
    }
    for (i, s) in [8, 16, 32].iter().enumerate() {
        v.push((format!("boxes{}", i + 3), at(*s, cfg.anchors * 6)));
    }
    v
}

use rmk_core::OrientedBox64;

/// Seeded box pairs whose centres are close enough to overlap most of the time.
pub fn box_pairs(seed: u64, count: usize) -> Vec<(OrientedBox64, OrientedBox64)> {
    let mut r = rng(seed);
    let one = |r: &mut ChaCha8Rng, cx: f64, cy: f64| {
        OrientedBox64::truth(
            cx,
            cy,
            r.gen_range(0.5..6.0),
            r.gen_range(0.5..6.0),
            r.gen_range(0.0..std::f64::consts::TAU),
            0,
        )
        .unwrap()
    };
    (0..count)
        .map(|_| {
            let (cx, cy) = (r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0));
            let a = one(&mut r, cx, cy);
            let (dx, dy) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
            let b = one(&mut r, cx + dx, cy + dy);
            (a, b)
        })
        .collect()
}
