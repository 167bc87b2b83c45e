//! Finite-difference gradient checks run by `rmk gradcheck`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmk_core::mdcaa::MdcaaWeights;
use rmk_core::msk::MskModuleWeights;
use rmk_core::nn::Initializer;
use rmk_core::tensor::gradcheck::{gradcheck, gradcheck_coords};
use rmk_core::tensor::{Conv2dParams, Direction, PoolParams, Tape, Var};
use rmk_core::{DType, Network, NetworkConfig, Result, Scalar, Tensor};

/// Tolerance class of a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Op,
    Linear,
    Block,
    Assembly,
}

/// Finite-difference step and bound for a tier at a precision.
pub fn tolerance(dtype: DType, tier: Tier) -> (f64, f64) {
    match (dtype, tier) {
        (DType::F64, Tier::Op) => (1e-5, 1e-6),
        (DType::F64, Tier::Linear) => (1e-3, 1e-10),
        (DType::F64, Tier::Block) => (1e-5, 1e-5),
        (DType::F64, Tier::Assembly) => (1e-5, 1e-4),
        (DType::F32, Tier::Linear) => (1e-2, 1e-4),
        (DType::F32, _) => (1e-2, 1e-2),
    }
}

pub struct CheckResult {
    pub name: String,
    pub tier: Tier,
    pub error: f64,
    pub bound: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= self.bound
    }
}

type Objective<T> = Box<dyn Fn(&mut Tape<T>, Var) -> Result<Var>>;

fn random<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(dims, -1.0, 1.0, &mut rng).expect("valid dims")
}

fn weighted_sum<T: Scalar>(t: &mut Tape<T>, v: Var, seed: u64) -> Result<Var> {
    let w = t.constant(random(t.dims(v), seed));
    let p = t.mul(v, w)?;
    t.sum(p)
}

fn op_cases<T: Scalar>() -> Vec<(&'static str, Tensor<T>, Objective<T>)> {
    let x: Tensor<T> = random(&[1, 2, 5, 6], 1);
    let other: Tensor<T> = random(&[1, 2, 5, 6], 2);
    let positive = random::<T>(&[1, 2, 5, 6], 3).map(|v| v.abs() + T::lit(0.5));
    let k: Tensor<T> = random(&[3, 2, 3, 3], 4);
    let strip: Tensor<T> = random(&[2, 1, 1, 5], 5);
    let mut cases: Vec<(&'static str, Tensor<T>, Objective<T>)> = Vec::new();

    let kc = k.clone();
    cases.push(("conv2d/input", x.clone(), Box::new(move |t, v| {
        let k = t.constant(kc.clone());
        let y = t.conv2d(v, k, None, Conv2dParams::same(3, 3))?;
        weighted_sum(t, y, 10)
    })));
    let xc = x.clone();
    cases.push(("conv2d/kernel", k.clone(), Box::new(move |t, v| {
        let x = t.constant(xc.clone());
        let y = t.conv2d(x, v, None, Conv2dParams::same(3, 3).with_stride(2, 2))?;
        weighted_sum(t, y, 11)
    })));
    let xc = x.clone();
    cases.push(("conv2d/depthwise-bias", Tensor::from_fn(&[2], |i| T::lit(0.3 * i as f64 - 0.1)).unwrap(), Box::new(move |t, v| {
        let x = t.constant(xc.clone());
        let k = t.constant(strip.clone());
        let y = t.conv2d(x, k, Some(v), Conv2dParams::same(1, 5).with_groups(2))?;
        weighted_sum(t, y, 12)
    })));
    cases.push(("rot90/cw", x.clone(), Box::new(|t, v| {
        let y = t.rot90(v, Direction::Cw)?;
        weighted_sum(t, y, 13)
    })));
    cases.push(("rot90/ccw", x.clone(), Box::new(|t, v| {
        let y = t.rot90(v, Direction::Ccw)?;
        weighted_sum(t, y, 14)
    })));
    cases.push(("avg_pool", x.clone(), Box::new(|t, v| {
        let p = PoolParams { window: (2, 3), stride: (2, 2), padding: (1, 0) };
        let y = t.avg_pool(v, p)?;
        weighted_sum(t, y, 15)
    })));
    cases.push(("sigmoid", x.map(|v| v * T::lit(3.0)), Box::new(|t, v| {
        let y = t.sigmoid(v)?;
        weighted_sum(t, y, 16)
    })));
    let oc = other.clone();
    cases.push(("concat_channels", x.clone(), Box::new(move |t, v| {
        let o = t.constant(oc.clone());
        let y = t.concat_channels(&[o, v])?;
        weighted_sum(t, y, 17)
    })));
    cases.push(("slice_channels", x.clone(), Box::new(|t, v| {
        let y = t.slice_channels(v, 1, 1)?;
        weighted_sum(t, y, 18)
    })));
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
        let oc = other.clone();
        let pc = positive.clone();
        cases.push((name, x.clone(), Box::new(move |t, v| {
            let o = t.constant(oc.clone());
            let y = match which {
                0 => t.add(v, o)?,
                1 => t.sub(o, v)?,
                2 => t.mul(v, o)?,
                _ => {
                    let p = t.constant(pc.clone());
                    t.div(v, p)?
                }
            };
            weighted_sum(t, y, 19)
        })));
    }
    cases.push(("scale", x.clone(), Box::new(|t, v| {
        let y = t.scale(v, T::lit(-2.5))?;
        weighted_sum(t, y, 20)
    })));
    cases.push(("square", x.clone(), Box::new(|t, v| {
        let y = t.square(v)?;
        weighted_sum(t, y, 21)
    })));
    cases.push(("sqrt", positive, Box::new(|t, v| {
        let y = t.sqrt(v)?;
        weighted_sum(t, y, 22)
    })));
    cases.push(("smooth_l1", x.map(|v| v * T::lit(2.0)), Box::new(|t, v| {
        let y = t.smooth_l1(v, T::one())?;
        weighted_sum(t, y, 23)
    })));
    cases.push(("broadcast", random(&[1, 2, 1, 6], 6), Box::new(|t, v| {
        let y = t.broadcast(v, &[2, 2, 5, 6])?;
        weighted_sum(t, y, 24)
    })));
    cases
}

fn linear_case<T: Scalar>() -> (Tensor<T>, Objective<T>) {
    let k: Tensor<T> = random(&[1, 2, 3, 3], 30);
    (random(&[1, 2, 5, 5], 31), Box::new(move |t, v| {
        let kv = t.constant(k.clone());
        let y = t.conv2d(v, kv, None, Conv2dParams::same(3, 3))?;
        let r = t.rot90(y, Direction::Ccw)?;
        t.sum(r)
    }))
}

/// Coordinates probed in the assembly check when not checking every input:
/// a seeded spread plus the corners of each channel.
fn probe_coords(dims: &[usize], count: usize) -> Vec<usize> {
    use rand::Rng;
    let numel: usize = dims.iter().product();
    let (h, w) = (dims[2], dims[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut v: Vec<usize> = (0..count).map(|_| rng.gen_range(0..numel)).collect();
    for c in 0..dims[1] {
        let base = c * h * w;
        v.extend([base, base + w - 1, base + (h - 1) * w, base + h * w - 1]);
    }
    v.sort_unstable();
    v.dedup();
    v
}

fn run_one<T: Scalar, F>(name: &str, tier: Tier, f: F, input: &Tensor<T>, coords: Option<&[usize]>) -> Result<CheckResult>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let (eps, bound) = tolerance(T::DTYPE, tier);
    let err = match coords {
        None => gradcheck(f, input, T::lit(eps))?,
        Some(c) => gradcheck_coords(f, input, T::lit(eps), c)?,
    };
    Ok(CheckResult {
        name: name.to_string(),
        tier,
        error: err.to_f64_lossy(),
        bound,
    })
}

/// Every op, a linear composite, the MSK module, MDCAA and the tiny
/// assembly on a 64x64 input. `full` checks every assembly input
/// coordinate instead of a probe set.
pub fn run_suite<T: Scalar>(full: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, input, f) in op_cases::<T>() {
        out.push(run_one(name, Tier::Op, f, &input, None)?);
    }
    let (input, f) = linear_case::<T>();
    out.push(run_one("linear composite", Tier::Linear, f, &input, None)?);

    let x: Tensor<T> = random(&[1, 4, 8, 8], 40);
    for (name, down) in [("msk module", false), ("msk module/stride 2", true)] {
        let mut w = MskModuleWeights::<T>::new(&mut Initializer::seeded(41), 4, 3, 2, down)?;
        for (i, b) in w.branches_mut().iter_mut().enumerate() {
            b.reduce.bias = random(b.reduce.bias.dims(), 50 + i as u64);
            b.vertical.bias = random(b.vertical.bias.dims(), 60 + i as u64);
        }
        let f = |t: &mut Tape<T>, v| {
            let y = w.forward(t, v)?;
            weighted_sum(t, y, 42)
        };
        out.push(run_one(name, Tier::Block, f, &x, None)?);
    }
    let w = MdcaaWeights::<T>::new(&mut Initializer::seeded(43), 4, 5, 3)?;
    let f = |t: &mut Tape<T>, v| {
        let y = w.apply(t, v)?;
        weighted_sum(t, y, 44)
    };
    out.push(run_one("mdcaa apply", Tier::Block, f, &x, None)?);

    let net = Network::<T>::new(&mut Initializer::seeded(45), NetworkConfig::tiny())?;
    let image: Tensor<T> = random(&[1, 3, 64, 64], 46);
    let f = |t: &mut Tape<T>, x| {
        let v = net.forward_tape(t, x)?;
        let mut total = None;
        for (i, var) in v.logits.iter().chain(&v.boxes).enumerate() {
            let s = weighted_sum(t, *var, 70 + i as u64)?;
            total = Some(match total {
                None => s,
                Some(acc) => t.add(acc, s)?,
            });
        }
        Ok(total.expect("three levels"))
    };
    let probes = probe_coords(image.dims(), 256);
    let coords = if full { None } else { Some(probes.as_slice()) };
    out.push(run_one("tiny assembly 64x64", Tier::Assembly, f, &image, coords)?);
    Ok(out)
}
