//! Convolution layers with owned weights, seeded initialization, and the
//! directory-of-RMKT weight store with its text manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{rmkt, Conv2dParams, Tape, Tensor, Var};

/// Convolution weights plus the geometry they are applied with.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub params: Conv2dParams,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, params: Conv2dParams) -> Result<Self> {
        let [cout, _, _, _] = kernel.dims4()?;
        if bias.dims() != [cout] {
            return Err(shape_err!("bias dims {:?} for {cout} output channels", bias.dims()));
        }
        Ok(Self { kernel, bias, params })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1] * self.params.groups
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.dims()[2], self.kernel.dims()[3])
    }

    /// Kernel weights only; biases are not counted.
    pub fn param_count(&self) -> u64 {
        self.kernel.numel() as u64
    }

    /// Records the convolution on `tape` with the weights held constant.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let k = tape.constant(self.kernel.clone());
        let b = tape.constant(self.bias.clone());
        tape.conv2d(x, k, Some(b), self.params)
    }

    /// Same as [`Conv2d::forward`] but with kernel and bias as gradient leaves.
    pub fn forward_trainable(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var, Var)> {
        let k = tape.param(self.kernel.clone());
        let b = tape.param(self.bias.clone());
        let y = tape.conv2d(x, k, Some(b), self.params)?;
        Ok((y, k, b))
    }
}

/// Source of initial weights.
///
/// `Seeded` draws kernels uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
/// with a ChaCha8 stream; `Zeros` gives all-zero kernels. Biases always start
/// at zero.
#[derive(Debug, Clone)]
pub enum Initializer {
    Seeded(ChaCha8Rng),
    Zeros,
}

impl Initializer {
    pub fn seeded(seed: u64) -> Self {
        Initializer::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn conv<T: Scalar>(
        &mut self,
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        params: Conv2dParams,
    ) -> Result<Conv2d<T>> {
        if !in_channels.is_multiple_of(params.groups) || !out_channels.is_multiple_of(params.groups) {
            return Err(shape_err!(
                "groups {} do not divide {in_channels} -> {out_channels}",
                params.groups
            ));
        }
        let cin_g = in_channels / params.groups;
        let dims = [out_channels, cin_g, kernel.0, kernel.1];
        let kernel_t = match self {
            Initializer::Zeros => Tensor::zeros(&dims)?,
            Initializer::Seeded(rng) => {
                let bound = 1.0 / ((cin_g * kernel.0 * kernel.1) as f64).sqrt();
                Tensor::from_fn(&dims, |_| T::lit(rng.gen_range(-bound..=bound)))?
            }
        };
        Conv2d::new(kernel_t, Tensor::zeros(&[out_channels])?, params)
    }

    /// Odd square or strip kernel with stride-1 "same" padding.
    pub fn same_conv<T: Scalar>(
        &mut self,
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        groups: usize,
    ) -> Result<Conv2d<T>> {
        self.conv(
            out_channels,
            in_channels,
            kernel,
            Conv2dParams::same(kernel.0, kernel.1).with_groups(groups),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Kernel,
    Bias,
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamRole::Kernel => "kernel",
            ParamRole::Bias => "bias",
        })
    }
}

impl FromStr for ParamRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(ParamRole::Kernel),
            "bias" => Ok(ParamRole::Bias),
            other => Err(Error::Format(format!("unknown parameter role `{other}`"))),
        }
    }
}

/// Anything that owns named weight tensors.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>));

    /// Total kernel weights (biases excluded).
    fn kernel_param_count(&self) -> u64 {
        let mut n = 0u64;
        self.visit_params("", &mut |_, role, t| {
            if role == ParamRole::Kernel {
                n += t.numel() as u64;
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>)) {
        f(join(prefix, "kernel"), ParamRole::Kernel, &self.kernel);
        f(join(prefix, "bias"), ParamRole::Bias, &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>)) {
        f(join(prefix, "kernel"), ParamRole::Kernel, &mut self.kernel);
        f(join(prefix, "bias"), ParamRole::Bias, &mut self.bias);
    }
}

/// One line of a manifest: tensor name, file name relative to the manifest,
/// dims, and a free-form role tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
    pub role: String,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn format_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Manifest text: `# comment` lines, then `name file dims role` per tensor,
/// with dims written as `AxBxC`.
pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# name file dims role\n");
    for e in entries {
        s.push_str(&format!("{} {} {} {}\n", e.name, e.file, format_dims(&e.dims), e.role));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, file, dims, role] = fields[..] else {
            return Err(Error::Format(format!(
                "manifest line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        };
        let dims = dims
            .split('x')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::Format(format!("manifest line {}: bad dims `{dims}`", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ManifestEntry {
            name: name.to_string(),
            file: file.to_string(),
            dims,
            role: role.to_string(),
        });
    }
    Ok(out)
}

/// Writes each tensor to `<dir>/<name>.rmkt` plus `manifest.txt`.
pub fn save_tensors<'a, T: Scalar + 'a>(
    dir: &Path,
    tensors: impl IntoIterator<Item = (String, String, &'a Tensor<T>)>,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, role, t) in tensors {
        let file = format!("{name}.rmkt");
        rmkt::save(t, dir.join(&file))?;
        entries.push(ManifestEntry {
            name,
            file,
            dims: t.dims().to_vec(),
            role,
        });
    }
    std::fs::write(dir.join(MANIFEST_FILE), write_manifest(&entries))?;
    Ok(entries)
}

pub fn save_weights<T: Scalar, M: Parameterized<T> + ?Sized>(dir: &Path, model: &M) -> Result<Vec<ManifestEntry>> {
    let mut items = Vec::new();
    model.visit_params("", &mut |name, role, t| items.push((name, role.to_string(), t.clone())));
    save_tensors(dir, items.iter().map(|(n, r, t)| (n.clone(), r.clone(), t)))
}

/// Loads weights saved by [`save_weights`] into `model`. Every parameter of
/// the model must be present with matching dims and role.
pub fn load_weights<T: Scalar, M: Parameterized<T> + ?Sized>(dir: &Path, model: &mut M) -> Result<()> {
    let entries = parse_manifest(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let by_name: BTreeMap<&str, &ManifestEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut err: Option<Error> = None;
    model.visit_params_mut("", &mut |name, role, slot| {
        if err.is_some() {
            return;
        }
        let result = (|| {
            let e = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("manifest lacks parameter `{name}`")))?;
            if e.role.parse::<ParamRole>()? != role {
                return Err(Error::Format(format!("role mismatch for `{name}`")));
            }
            let t: Tensor<T> = rmkt::load_any(dir.join(&e.file))?;
            if t.dims() != slot.dims() || e.dims != slot.dims() {
                return Err(shape_err!(
                    "`{name}` stored as {:?}, model expects {:?}",
                    t.dims(),
                    slot.dims()
                ));
            }
            *slot = t;
            Ok(())
        })();
        if let Err(e) = result {
            err = Some(e);
        }
    });
    err.map_or(Ok(()), Err)
}
