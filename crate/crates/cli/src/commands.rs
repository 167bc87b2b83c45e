use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmk_core::detect::postprocess;
use rmk_core::eaem::{self, Omega};
use rmk_core::experiment::run_experiment;
use rmk_core::geometry::annotations::write_annotations;
use rmk_core::geometry::pgm::{read_pgm, write_pgm};
use rmk_core::geometry::{eval_map, eval_map_coco, gen_scene, OrientedBox, Scene};
use rmk_core::msk::count_params;
use rmk_core::nn::{load_weights, save_tensors, Initializer, Parameterized};
use rmk_core::pyramid::{named_outputs, INPUT_MULTIPLE};
use rmk_core::tensor::kernels::concat_channels;
use rmk_core::tensor::rmkt;
use rmk_core::{Network, Scalar, Tensor};

use crate::checks::run_suite;
use crate::config::{Config, EvalMode};

/// A verification command ran but reported a failure.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn out_dir(cfg: &Config) -> Result<&Path> {
    cfg.paths
        .out
        .as_deref()
        .context("an output directory is required (--out or paths.out)")
}

pub fn param_count<T: Scalar>(cfg: &Config) -> Result<String> {
    let r = count_params(&cfg.param_config())?;
    let mut s = String::new();
    writeln!(s, "channels = {}", cfg.params.channels)?;
    writeln!(s, "{:>4} {:>12} {:>12} {:>7}", "m", "separable", "full", "ratio")?;
    for (b, ratio) in r.branches.iter().zip(r.ratio_strings()) {
        writeln!(s, "{:>4} {:>12} {:>12} {:>7}", b.m, b.separable, b.full, ratio)?;
    }
    writeln!(s, "strip total = {} vs {}", r.separable_total, r.full_total)?;
    writeln!(
        s,
        "module total = {} vs {} (delta {})",
        r.module_separable,
        r.module_full,
        r.module_delta()
    )?;
    writeln!(s, "ratios: {}", r.ratio_strings().join(" "))?;
    let net = Network::<T>::new(&mut Initializer::Zeros, cfg.network_config())?;
    writeln!(s, "network kernel parameters = {}", net.kernel_param_count())?;
    Ok(s)
}

fn build_network<T: Scalar>(cfg: &Config, zero_weights: bool) -> Result<Network<T>> {
    let mut init = if zero_weights {
        Initializer::Zeros
    } else {
        Initializer::seeded(cfg.data.seed)
    };
    let mut net = Network::new(&mut init, cfg.network_config())?;
    if let Some(dir) = &cfg.paths.weights {
        load_weights(dir, &mut net).with_context(|| format!("loading weights from {}", dir.display()))?;
    }
    Ok(net)
}

/// Repeats a single-channel image across the network's input channels.
fn to_channels<T: Scalar>(image: Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let [_, c, _, _] = image.dims4()?;
    if c == channels {
        return Ok(image);
    }
    if c != 1 {
        bail!("image has {c} channels, network expects {channels}");
    }
    Ok(concat_channels(&vec![&image; channels])?)
}

fn check_extent(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(INPUT_MULTIPLE) || !w.is_multiple_of(INPUT_MULTIPLE) {
        bail!("image extent {h}x{w} is not divisible by {INPUT_MULTIPLE}");
    }
    Ok(())
}

fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let t = if is_pgm { read_pgm(path)? } else { rmkt::load_any(path)? };
    let t = match t.dims().len() {
        4 => t,
        3 => t.reshape(&[1, t.dims()[0], t.dims()[1], t.dims()[2]])?,
        2 => t.reshape(&[1, 1, t.dims()[0], t.dims()[1]])?,
        _ => bail!("image tensor must have 2 to 4 dims, got {:?}", t.dims()),
    };
    if t.dims()[0] != 1 {
        bail!("expected a single image, got batch {}", t.dims()[0]);
    }
    Ok(t)
}

pub fn forward<T: Scalar>(cfg: &Config, image: Option<&Path>, zero_weights: bool) -> Result<String> {
    let out = out_dir(cfg)?;
    let img = match image {
        Some(p) => load_image::<T>(p).with_context(|| format!("reading image {}", p.display()))?,
        None => Tensor::zeros(&[1, 1, cfg.data.height, cfg.data.width])?,
    };
    let [_, _, h, w] = img.dims4()?;
    check_extent(h, w)?;
    let img = to_channels(img, cfg.network.in_channels)?;
    let net = build_network::<T>(cfg, zero_weights)?;
    let (feats, heads) = net.forward(&img)?;
    let named = named_outputs(&feats, &heads);
    let entries = save_tensors(out, named.into_iter().map(|(n, t)| (n, "activation".to_string(), t)))?;
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{} {}", e.name, rmk_core::nn::format_dims(&e.dims))?;
    }
    Ok(s)
}

pub fn gradcheck<T: Scalar>(full: bool) -> Result<String> {
    let results = run_suite::<T>(full)?;
    let mut s = String::new();
    writeln!(s, "{:<28} {:<8} {:>11} {:>9}  result", "check", "tier", "rel error", "bound")?;
    for r in &results {
        writeln!(
            s,
            "{:<28} {:<8} {:>11.3e} {:>9.0e}  {}",
            r.name,
            format!("{:?}", r.tier).to_lowercase(),
            r.error,
            r.bound,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(s)
    } else {
        print!("{s}");
        Err(CheckFailed(format!("gradient check failed: {}", failed.join(", "))).into())
    }
}

#[derive(Debug, Clone, clap::Subcommand)]
pub enum CodecCommand {
    /// Print the (x, y) code of each angle.
    Encode {
        #[arg(allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
    },
    /// Normalize (x, y) onto the circle and print the decoded angle.
    Decode {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        #[arg(allow_negative_numbers = true)]
        y: f64,
    },
    /// Round-trip error statistics over seeded angles in one period.
    Stats {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Encode an RMKT tensor of angles into codes with a trailing axis of 2.
    EncodeFile { input: PathBuf, output: PathBuf },
    /// Decode an RMKT tensor of codes (trailing axis 2) into angles.
    DecodeFile { input: PathBuf, output: PathBuf },
}

fn round_trip_stats<T: Scalar>(angles: &[T], omega: Omega<T>) -> Result<String> {
    let period = omega.period().to_f64_lossy();
    let (mut worst, mut total) = (0.0f64, 0.0f64);
    for &t in angles {
        let back = eaem::decode(&eaem::encode(t, omega)?)?;
        let d = (back - t).to_f64_lossy().abs();
        let d = d.min((period - d).abs());
        worst = worst.max(d);
        total += d;
    }
    let mean = if angles.is_empty() { 0.0 } else { total / angles.len() as f64 };
    Ok(format!("samples = {}\nmax_error = {worst:e}\nmean_error = {mean:e}\n", angles.len()))
}

pub fn angle_codec<T: Scalar>(cfg: &Config, omega: Option<f64>, cmd: &CodecCommand) -> Result<String> {
    let omega = Omega::new(T::lit(omega.unwrap_or(cfg.network.omega)))?;
    let mut s = String::new();
    match cmd {
        CodecCommand::Encode { theta } => {
            for &t in theta {
                let c = eaem::encode(T::lit(t), omega)?;
                writeln!(s, "{t} {} {}", c.x(), c.y())?;
            }
        }
        CodecCommand::Decode { x, y } => {
            let c = eaem::normalize(T::lit(*x), T::lit(*y), omega)?;
            writeln!(s, "{}", eaem::decode(&c)?)?;
        }
        CodecCommand::Stats { samples } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed);
            let period = omega.period().to_f64_lossy();
            let angles: Vec<T> = (0..*samples).map(|_| T::lit(rng.gen_range(0.0..period))).collect();
            writeln!(s, "omega = {}", omega.get())?;
            s.push_str(&round_trip_stats(&angles, omega)?);
        }
        CodecCommand::EncodeFile { input, output } => {
            let angles: Tensor<T> = rmkt::load_any(input)?;
            let mut data = Vec::with_capacity(2 * angles.numel());
            for &t in angles.data() {
                let c = eaem::encode(t, omega)?;
                data.extend([c.x(), c.y()]);
            }
            let mut dims = angles.dims().to_vec();
            dims.push(2);
            rmkt::save(&Tensor::new(dims, data)?, output)?;
            s.push_str(&round_trip_stats(angles.data(), omega)?);
        }
        CodecCommand::DecodeFile { input, output } => {
            let codes: Tensor<T> = rmkt::load_any(input)?;
            let dims = codes.dims();
            if dims.last() != Some(&2) {
                bail!("code tensor must end in an axis of 2, got {dims:?}");
            }
            let angles = codes
                .data()
                .chunks_exact(2)
                .map(|p| Ok(eaem::decode(&eaem::normalize(p[0], p[1], omega)?)?))
                .collect::<Result<Vec<T>>>()?;
            rmkt::save(&Tensor::new(dims[..dims.len() - 1].to_vec(), angles)?, output)?;
            writeln!(s, "decoded = {}", codes.numel() / 2)?;
        }
    }
    Ok(s)
}

pub fn boundary_exp<T: Scalar>(cfg: &Config) -> Result<String> {
    let report = run_experiment::<T>(&cfg.regression_config())?;
    let text = report.to_text();
    if let Some(dir) = &cfg.paths.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), &text)?;
        std::fs::write(dir.join("traces.csv"), report.traces_csv())?;
    }
    Ok(text)
}

fn scenes<T: Scalar>(cfg: &Config) -> Result<Vec<Scene<T>>> {
    let spec = cfg.scene_spec();
    (0..cfg.data.images)
        .map(|i| {
            gen_scene(cfg.scene_seed(i), &spec, (cfg.data.height, cfg.data.width))
                .with_context(|| format!("generating scene {i}"))
        })
        .collect()
}

pub fn eval<T: Scalar>(cfg: &Config) -> Result<String> {
    let scenes = scenes::<T>(cfg)?;
    let truth: Vec<Vec<OrientedBox<T>>> = scenes.iter().map(|s| s.truth.clone()).collect();
    let preds = match cfg.eval.mode {
        EvalMode::Oracle => truth.clone(),
        EvalMode::Empty => vec![Vec::new(); truth.len()],
        EvalMode::Network => {
            check_extent(cfg.data.height, cfg.data.width)?;
            let net = build_network::<T>(cfg, false)?;
            let dec = cfg.decode_config::<T>()?;
            let mut preds = Vec::new();
            for s in &scenes {
                let img = to_channels(s.image.clone(), cfg.network.in_channels)?;
                let (_, heads) = net.forward(&img)?;
                preds.extend(postprocess(&heads, &dec)?);
            }
            preds
        }
    };
    let rep = eval_map(&preds, &truth, T::lit(cfg.eval.iou_threshold))?;
    let coco = eval_map_coco(&preds, &truth)?;
    let mode = match cfg.eval.mode {
        EvalMode::Network => "network",
        EvalMode::Oracle => "oracle",
        EvalMode::Empty => "empty",
    };
    let mut s = String::new();
    writeln!(s, "mode = {mode}")?;
    writeln!(s, "images = {}", truth.len())?;
    writeln!(s, "truth_boxes = {}", truth.iter().map(Vec::len).sum::<usize>())?;
    writeln!(s, "detections = {}", preds.iter().map(Vec::len).sum::<usize>())?;
    writeln!(s, "iou_threshold = {}", cfg.eval.iou_threshold)?;
    for (c, ap) in &rep.per_class {
        writeln!(s, "ap_class_{c} = {ap:.6}")?;
    }
    writeln!(s, "map = {:.6}", rep.map)?;
    writeln!(s, "map_50_95 = {:.6}", coco.map)?;
    Ok(s)
}

pub fn gen_data<T: Scalar>(cfg: &Config) -> Result<String> {
    let out = out_dir(cfg)?;
    std::fs::create_dir_all(out)?;
    let mut s = String::new();
    for (i, scene) in scenes::<T>(cfg)?.iter().enumerate() {
        let stem = format!("scene_{i:04}");
        write_pgm(&out.join(format!("{stem}.pgm")), &scene.image, true)?;
        write_annotations(&out.join(format!("{stem}.txt")), &scene.truth, false)?;
        writeln!(s, "{stem} {} boxes", scene.truth.len())?;
    }
    Ok(s)
}
