//! Boundary experiment: regressing angles that sit next to the wrap point,
//! once through the unit-circle code and once as a raw angle with Smooth-L1.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eaem::{self, circular_gap, code_distance, Omega};
use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::smooth_l1_scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const SMOOTH_L1_BETA: f64 = 1.0;
pub const JUMP_THRESHOLD: f64 = 0.5;
pub const LANDSCAPE_SAMPLES: usize = 4096;
pub const MIN_LANDSCAPE_SAMPLES: usize = 16;
/// Targets lie within this distance of the wrap point.
pub const BOUNDARY_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Smooth-L1 on the raw angle difference.
    DirectSmoothL1,
    /// Chord distance between unit-circle codes.
    EaemChord,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::EaemChord, Method::DirectSmoothL1];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DirectSmoothL1 => "direct_smoothl1",
            Method::EaemChord => "eaem_chord",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct_smoothl1" | "direct" => Ok(Method::DirectSmoothL1),
            "eaem_chord" | "eaem" => Ok(Method::EaemChord),
            _ => Err(contract_err!("unknown method {s:?} (expected eaem_chord or direct_smoothl1)")),
        }
    }
}

/// Loss against `target` at `samples` predictions spaced uniformly over one period.
pub fn loss_landscape<T: Scalar>(method: Method, target: T, omega: Omega<T>, samples: usize) -> Result<Vec<T>> {
    if samples < MIN_LANDSCAPE_SAMPLES {
        return Err(contract_err!("need at least {MIN_LANDSCAPE_SAMPLES} samples, got {samples}"));
    }
    let period = omega.period();
    let step = period / T::lit(samples as f64);
    let target_code = eaem::encode(target, omega)?;
    (0..samples)
        .map(|i| {
            let theta = T::lit(i as f64) * step;
            match method {
                Method::DirectSmoothL1 => Ok(smooth_l1_scalar(theta - target, T::lit(SMOOTH_L1_BETA))),
                Method::EaemChord => code_distance(&eaem::encode(theta, omega)?, &target_code),
            }
        })
        .collect()
}

/// Largest change between neighbouring samples, the last sample neighbouring
/// the first (the sweep is periodic).
pub fn max_adjacent_jump<T: Scalar>(trace: &[T]) -> T {
    adjacent_deltas(trace).fold(T::zero(), T::max)
}

/// Neighbouring pairs (cyclically) whose loss differs by more than `threshold`.
pub fn count_jumps<T: Scalar>(trace: &[T], threshold: T) -> usize {
    adjacent_deltas(trace).filter(|&d| d > threshold).count()
}

fn adjacent_deltas<T: Scalar>(trace: &[T]) -> impl Iterator<Item = T> + '_ {
    let n = trace.len();
    (0..if n > 1 { n } else { 0 }).map(move |i| (trace[(i + 1) % n] - trace[i]).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub omega: f64,
    pub targets: usize,
    pub band: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            seed: 7,
            omega: 1.0,
            targets: 64,
            band: BOUNDARY_BAND,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(contract_err!("learning rate must be positive, got {}", self.lr));
        }
        if self.targets == 0 {
            return Err(contract_err!("dataset needs at least one target"));
        }
        let period = std::f64::consts::TAU / self.omega;
        if !(self.band > 0.0 && 2.0 * self.band < period) {
            return Err(contract_err!("band {} does not fit in period {period}", self.band));
        }
        Omega::new(self.omega).map(|_| ())
    }
}

/// Seeded targets, alternating between `[0, band]` and `[period - band, period)`.
/// Also returns the shared starting angle, drawn from the same stream.
pub fn boundary_dataset<T: Scalar>(cfg: &RegressionConfig) -> Result<(Vec<T>, T)> {
    cfg.validate()?;
    let period = std::f64::consts::TAU / cfg.omega;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let targets = (0..cfg.targets)
        .map(|i| {
            let u: f64 = rng.gen_range(0.0..cfg.band);
            T::lit(if i % 2 == 0 { u } else { period - cfg.band + u })
        })
        .collect();
    let start = T::lit(rng.gen_range(0.0..period));
    Ok((targets, start))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// The loss or a gradient became non-finite at this step.
    Diverged { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun<T> {
    pub method: Method,
    pub status: RunStatus,
    /// Loss before each update plus the final loss (`steps + 1` entries when completed).
    pub trace: Vec<T>,
    pub final_angle: T,
    /// Mean circular distance between the final prediction and the targets.
    pub mean_angular_error: T,
    /// Landscape jump events summed over every target at [`LANDSCAPE_SAMPLES`].
    pub landscape_jumps: usize,
}

fn mean_error<T: Scalar>(theta: T, targets: &[T], period: T) -> T {
    targets.iter().map(|&t| circular_gap(theta, t, period)).sum::<T>() / T::lit(targets.len() as f64)
}

fn eaem_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, codes: &Tensor<T>) -> Result<Var> {
    let n = codes.dims()[0];
    let sq = tape.square(p)?;
    let norm2 = tape.sum(sq)?;
    let norm = tape.sqrt(norm2)?;
    let norm = tape.broadcast(norm, &[1, 2])?;
    let unit = tape.div(p, norm)?;
    let unit = tape.broadcast(unit, &[n, 2])?;
    let c = tape.constant(codes.clone());
    let diff = tape.sub(unit, c)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, T::one() / T::lit(n as f64))
}

fn direct_loss<T: Scalar>(tape: &mut Tape<T>, theta: Var, targets: &Tensor<T>) -> Result<Var> {
    let n = targets.numel();
    let pred = tape.broadcast(theta, &[n])?;
    let t = tape.constant(targets.clone());
    let diff = tape.sub(pred, t)?;
    let l = tape.smooth_l1(diff, T::lit(SMOOTH_L1_BETA))?;
    let total = tape.sum(l)?;
    tape.scale(total, T::one() / T::lit(n as f64))
}

/// Full-batch gradient descent on a constant predictor. The EAEM model
/// holds a raw `(x, y)` pair, normalized and decoded for evaluation; the
/// direct model holds the angle itself. Both start from `start`.
pub fn run_regression<T: Scalar>(
    method: Method,
    targets: &[T],
    start: T,
    cfg: &RegressionConfig,
) -> Result<MethodRun<T>> {
    cfg.validate()?;
    let omega = Omega::new(T::lit(cfg.omega))?;
    let period = omega.period();
    let lr = T::lit(cfg.lr);
    let n = targets.len();

    let mut param = match method {
        Method::EaemChord => {
            let c = eaem::encode(start, omega)?;
            Tensor::new(vec![1, 2], vec![c.x(), c.y()])?
        }
        Method::DirectSmoothL1 => Tensor::new(vec![1], vec![start])?,
    };
    let data = match method {
        Method::EaemChord => {
            let mut v = Vec::with_capacity(2 * n);
            for &t in targets {
                let c = eaem::encode(t, omega)?;
                v.extend([c.x(), c.y()]);
            }
            Tensor::new(vec![n, 2], v)?
        }
        Method::DirectSmoothL1 => Tensor::new(vec![n], targets.to_vec())?,
    };

    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut status = RunStatus::Completed;
    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let p = tape.param(param.clone());
        let loss = match method {
            Method::EaemChord => eaem_loss(&mut tape, p, &data),
            Method::DirectSmoothL1 => direct_loss(&mut tape, p, &data),
        };
        let loss = match loss {
            Ok(l) => l,
            Err(Error::NonFinite(_)) | Err(Error::Contract(_)) => {
                status = RunStatus::Diverged { step };
                break;
            }
            Err(e) => return Err(e),
        };
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            status = RunStatus::Diverged { step };
            break;
        }
        trace.push(value);
        if step == cfg.steps {
            break;
        }
        let grads = match tape.backward(loss) {
            Ok(g) => g,
            Err(Error::NonFinite(_)) => {
                status = RunStatus::Diverged { step };
                break;
            }
            Err(e) => return Err(e),
        };
        let g = grads.get(p).ok_or_else(|| contract_err!("parameter received no gradient"))?;
        param = param.zip_map(g, |w, d| w - lr * d)?;
    }

    let final_angle = match method {
        Method::EaemChord => {
            let d = param.data();
            eaem::normalize(d[0], d[1], omega)
                .and_then(|c| eaem::decode(&c))
                .unwrap_or(T::nan())
        }
        Method::DirectSmoothL1 => param.data()[0],
    };
    let mean_angular_error = if final_angle.is_finite() {
        mean_error(final_angle, targets, period)
    } else {
        T::nan()
    };
    let mut landscape_jumps = 0;
    for &t in targets {
        let trace = loss_landscape(method, t, omega, LANDSCAPE_SAMPLES)?;
        landscape_jumps += count_jumps(&trace, T::lit(JUMP_THRESHOLD));
    }
    Ok(MethodRun {
        method,
        status,
        trace,
        final_angle,
        mean_angular_error,
        landscape_jumps,
    })
}

/// Both methods on one seeded dataset with identical budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport<T> {
    pub config: RegressionConfig,
    pub start: T,
    pub initial_error: T,
    pub eaem: MethodRun<T>,
    pub direct: MethodRun<T>,
}

pub fn run_experiment<T: Scalar>(cfg: &RegressionConfig) -> Result<ExperimentReport<T>> {
    let (targets, start) = boundary_dataset::<T>(cfg)?;
    let period = T::TAU() / T::lit(cfg.omega);
    Ok(ExperimentReport {
        config: cfg.clone(),
        start,
        initial_error: mean_error(start, &targets, period),
        eaem: run_regression(Method::EaemChord, &targets, start, cfg)?,
        direct: run_regression(Method::DirectSmoothL1, &targets, start, cfg)?,
    })
}

impl<T: Scalar> ExperimentReport<T> {
    /// True when EAEM finished with the smaller mean angular error.
    pub fn eaem_wins(&self) -> bool {
        self.eaem.status == RunStatus::Completed
            && (self.direct.status != RunStatus::Completed
                || self.eaem.mean_angular_error < self.direct.mean_angular_error)
    }

    /// `key = value` lines, one section per method.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "[config]");
        let _ = writeln!(
            s,
            "seed = {}\nsteps = {}\nlr = {}\nomega = {}\ntargets = {}\nband = {}",
            c.seed, c.steps, c.lr, c.omega, c.targets, c.band
        );
        let _ = writeln!(s, "start_angle = {}\ninitial_error = {}", self.start, self.initial_error);
        for run in [&self.eaem, &self.direct] {
            let _ = writeln!(s, "\n[{}]", run.method);
            let status = match run.status {
                RunStatus::Completed => "completed".to_string(),
                RunStatus::Diverged { step } => format!("diverged at step {step}"),
            };
            let _ = writeln!(s, "status = {status}");
            let _ = writeln!(s, "final_angle = {}", run.final_angle);
            let _ = writeln!(s, "mean_angular_error = {}", run.mean_angular_error);
            let _ = writeln!(s, "final_loss = {}", run.trace.last().copied().unwrap_or(T::nan()));
            let _ = writeln!(s, "landscape_jumps = {}", run.landscape_jumps);
        }
        let _ = writeln!(s, "\n[verdict]\neaem_lower_error = {}", self.eaem_wins());
        s
    }

    /// `step,eaem_chord,direct_smoothl1`; a shorter trace leaves its column empty.
    pub fn traces_csv(&self) -> String {
        let mut s = format!("step,{},{}\n", self.eaem.method, self.direct.method);
        let rows = self.eaem.trace.len().max(self.direct.trace.len());
        let cell = |t: &[T], i: usize| t.get(i).map(|v| v.to_string()).unwrap_or_default();
        for i in 0..rows {
            let _ = writeln!(s, "{i},{},{}", cell(&self.eaem.trace, i), cell(&self.direct.trace, i));
        }
        s
    }
}
