//! Multi-scale strip-kernel (MSK) module and the four-module MSK block.
//!
//! Each module runs five parallel branches on its input and concatenates
//! them along channels in the fixed order `[m=5, m=7, m=9, m=11, identity]`:
//!
//! * strip branch: `1x1` reduce, then a `1xm` strip, then an `mx1` strip;
//! * identity branch: `1x1` reduce, then a `3x3` conv.
//!
//! A downsampling module applies stride 2 in every branch's leading `1x1`.

use num_rational::Ratio;

use crate::error::{contract_err, shape_err, Result};
use crate::nn::{join, Conv2d, Initializer, ParamRole, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{Conv2dParams, Tape, Tensor, Var};

pub const MSK_KERNEL_SIZES: [usize; 4] = [5, 7, 9, 11];

/// Number of concatenated parts per module (four strip branches + identity).
pub const MSK_PARTS: usize = MSK_KERNEL_SIZES.len() + 1;

pub const MSK_BLOCK_MODULES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct StripBranch<T> {
    pub m: usize,
    pub reduce: Conv2d<T>,
    pub horizontal: Conv2d<T>,
    pub vertical: Conv2d<T>,
}

impl<T: Scalar> StripBranch<T> {
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let r = self.reduce.forward(tape, x)?;
        let h = self.horizontal.forward(tape, r)?;
        self.vertical.forward(tape, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityBranch<T> {
    pub reduce: Conv2d<T>,
    pub local: Conv2d<T>,
}

impl<T: Scalar> IdentityBranch<T> {
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let r = self.reduce.forward(tape, x)?;
        self.local.forward(tape, r)
    }
}

/// Weights of one MSK module.
#[derive(Debug, Clone, PartialEq)]
pub struct MskModuleWeights<T> {
    in_channels: usize,
    mid_channels: usize,
    branch_out: usize,
    downsample: bool,
    branches: Vec<StripBranch<T>>,
    identity: IdentityBranch<T>,
}

impl<T: Scalar> MskModuleWeights<T> {
    pub fn new(
        init: &mut Initializer,
        in_channels: usize,
        mid_channels: usize,
        branch_out: usize,
        downsample: bool,
    ) -> Result<Self> {
        if in_channels == 0 || mid_channels == 0 || branch_out == 0 {
            return Err(contract_err!("MSK channel counts must be positive"));
        }
        let s = if downsample { 2 } else { 1 };
        let reduce_params = Conv2dParams::default().with_stride(s, s);
        let mut branches = Vec::with_capacity(MSK_KERNEL_SIZES.len());
        for &m in &MSK_KERNEL_SIZES {
            branches.push(StripBranch {
                m,
                reduce: init.conv(mid_channels, in_channels, (1, 1), reduce_params)?,
                horizontal: init.same_conv(mid_channels, mid_channels, (1, m), 1)?,
                vertical: init.same_conv(branch_out, mid_channels, (m, 1), 1)?,
            });
        }
        let identity = IdentityBranch {
            reduce: init.conv(mid_channels, in_channels, (1, 1), reduce_params)?,
            local: init.same_conv(branch_out, mid_channels, (3, 3), 1)?,
        };
        Self::from_parts(branches, identity)
    }

    /// Assembles a module from explicit branch weights, validating the
    /// kernel-size set and channel wiring.
    pub fn from_parts(branches: Vec<StripBranch<T>>, identity: IdentityBranch<T>) -> Result<Self> {
        let sizes: Vec<usize> = branches.iter().map(|b| b.m).collect();
        if sizes != MSK_KERNEL_SIZES {
            return Err(contract_err!("strip branch sizes must be {MSK_KERNEL_SIZES:?}, got {sizes:?}"));
        }
        let in_channels = identity.reduce.in_channels();
        let mid_channels = identity.reduce.out_channels();
        let branch_out = identity.local.out_channels();
        let stride = identity.reduce.params.stride;
        if identity.local.kernel_size() != (3, 3) || identity.reduce.kernel_size() != (1, 1) {
            return Err(shape_err!("identity branch must be 1x1 then 3x3"));
        }
        for b in &branches {
            let ok = b.reduce.kernel_size() == (1, 1)
                && b.horizontal.kernel_size() == (1, b.m)
                && b.vertical.kernel_size() == (b.m, 1)
                && b.reduce.in_channels() == in_channels
                && b.reduce.out_channels() == mid_channels
                && b.horizontal.in_channels() == mid_channels
                && b.vertical.in_channels() == b.horizontal.out_channels()
                && b.vertical.out_channels() == branch_out
                && b.reduce.params.stride == stride;
            if !ok {
                return Err(shape_err!("strip branch m={} has inconsistent geometry", b.m));
            }
        }
        if stride != (1, 1) && stride != (2, 2) {
            return Err(contract_err!("reduce stride must be 1 or 2, got {stride:?}"));
        }
        Ok(Self {
            in_channels,
            mid_channels,
            branch_out,
            downsample: stride == (2, 2),
            branches,
            identity,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn mid_channels(&self) -> usize {
        self.mid_channels
    }

    pub fn branch_out(&self) -> usize {
        self.branch_out
    }

    pub fn out_channels(&self) -> usize {
        MSK_PARTS * self.branch_out
    }

    pub fn downsample(&self) -> bool {
        self.downsample
    }

    pub fn branches(&self) -> &[StripBranch<T>] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [StripBranch<T>] {
        &mut self.branches
    }

    pub fn identity(&self) -> &IdentityBranch<T> {
        &self.identity
    }

    /// Records the module on `tape`; returns the concatenated output.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let c = tape.dims(x).get(1).copied().unwrap_or(0);
        if tape.dims(x).len() != 4 || c != self.in_channels {
            return Err(shape_err!(
                "MSK module expects {} input channels, got dims {:?}",
                self.in_channels,
                tape.dims(x)
            ));
        }
        let mut parts = Vec::with_capacity(MSK_PARTS);
        for b in &self.branches {
            parts.push(b.forward(tape, x)?);
        }
        parts.push(self.identity.forward(tape, x)?);
        tape.concat_channels(&parts)
    }
}

impl<T: Scalar> Parameterized<T> for MskModuleWeights<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>)) {
        for b in &self.branches {
            let p = join(prefix, &format!("strip{}", b.m));
            b.reduce.visit_params(&join(&p, "reduce"), f);
            b.horizontal.visit_params(&join(&p, "horizontal"), f);
            b.vertical.visit_params(&join(&p, "vertical"), f);
        }
        let p = join(prefix, "identity");
        self.identity.reduce.visit_params(&join(&p, "reduce"), f);
        self.identity.local.visit_params(&join(&p, "local"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>)) {
        for b in &mut self.branches {
            let p = join(prefix, &format!("strip{}", b.m));
            b.reduce.visit_params_mut(&join(&p, "reduce"), f);
            b.horizontal.visit_params_mut(&join(&p, "horizontal"), f);
            b.vertical.visit_params_mut(&join(&p, "vertical"), f);
        }
        let p = join(prefix, "identity");
        self.identity.reduce.visit_params_mut(&join(&p, "reduce"), f);
        self.identity.local.visit_params_mut(&join(&p, "local"), f);
    }
}

pub fn msk_module_forward<T: Scalar>(x: &Tensor<T>, w: &MskModuleWeights<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = w.forward(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Four chained MSK modules; only the first keeps the input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MskBlock<T> {
    modules: Vec<MskModuleWeights<T>>,
}

impl<T: Scalar> MskBlock<T> {
    pub fn new(init: &mut Initializer, in_channels: usize, mid_channels: usize, branch_out: usize) -> Result<Self> {
        let mut modules = Vec::with_capacity(MSK_BLOCK_MODULES);
        let mut cin = in_channels;
        for l in 0..MSK_BLOCK_MODULES {
            let m = MskModuleWeights::new(init, cin, mid_channels, branch_out, l > 0)?;
            cin = m.out_channels();
            modules.push(m);
        }
        Self::from_modules(modules)
    }

    pub fn from_modules(modules: Vec<MskModuleWeights<T>>) -> Result<Self> {
        if modules.len() != MSK_BLOCK_MODULES {
            return Err(contract_err!(
                "MSK block needs {MSK_BLOCK_MODULES} modules, got {}",
                modules.len()
            ));
        }
        for (l, m) in modules.iter().enumerate() {
            if m.downsample() != (l > 0) {
                return Err(contract_err!(
                    "module {} must {}downsample",
                    l + 1,
                    if l > 0 { "" } else { "not " }
                ));
            }
            if l > 0 && m.in_channels() != modules[l - 1].out_channels() {
                return Err(shape_err!("module {} input channels do not match module {}", l + 1, l));
            }
        }
        Ok(Self { modules })
    }

    pub fn modules(&self) -> &[MskModuleWeights<T>] {
        &self.modules
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<[Var; MSK_BLOCK_MODULES]> {
        let mut outs = [x; MSK_BLOCK_MODULES];
        let mut cur = x;
        for (slot, m) in outs.iter_mut().zip(&self.modules) {
            cur = m.forward(tape, cur)?;
            *slot = cur;
        }
        Ok(outs)
    }
}

impl<T: Scalar> Parameterized<T> for MskBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>)) {
        for (l, m) in self.modules.iter().enumerate() {
            m.visit_params(&join(prefix, &format!("module{}", l + 1)), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>)) {
        for (l, m) in self.modules.iter_mut().enumerate() {
            m.visit_params_mut(&join(prefix, &format!("module{}", l + 1)), f);
        }
    }
}

/// Runs the four modules and returns `[M1, M2, M3, M4]`.
pub fn msk_block_forward<T: Scalar>(x: &Tensor<T>, weights: &[MskModuleWeights<T>]) -> Result<[Tensor<T>; 4]> {
    let block = MskBlock::from_modules(weights.to_vec())?;
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let outs = block.forward(&mut tape, v)?;
    Ok(outs.map(|o| tape.value(o).clone()))
}

/// Channel configuration for the closed-form parameter model.
///
/// `in_channels` feeds each branch's `1x1` reduce, which emits
/// `mid_channels`; the strip pair maps `mid -> mid -> out_channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamConfig {
    pub in_channels: u64,
    pub mid_channels: u64,
    pub out_channels: u64,
    pub kernel_sizes: Vec<u64>,
}

impl ParamConfig {
    /// All channel counts equal to `c`, kernel sizes `{5, 7, 9, 11}`.
    pub fn uniform(c: u64) -> Self {
        Self {
            in_channels: c,
            mid_channels: c,
            out_channels: c,
            kernel_sizes: MSK_KERNEL_SIZES.iter().map(|&m| m as u64).collect(),
        }
    }
}

/// Reference block used for the documented complexity comparison: 64
/// channels throughout, four modules.
pub fn reference_config() -> ParamConfig {
    ParamConfig::uniform(64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchCount {
    pub m: u64,
    /// `1xm` then `mx1` strip pair.
    pub separable: u64,
    /// Single `mxm` kernel with the same in/out channels.
    pub full: u64,
    pub ratio: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCountReport {
    pub branches: Vec<BranchCount>,
    pub separable_total: u64,
    pub full_total: u64,
    /// Whole module with strip pairs (reduces and identity branch included).
    pub module_separable: u64,
    /// Whole module with each strip pair replaced by a full square kernel.
    pub module_full: u64,
}

impl ParamCountReport {
    /// `module_separable - module_full`; negative when the strips save weights.
    pub fn module_delta(&self) -> i64 {
        self.module_separable as i64 - self.module_full as i64
    }

    /// The ratios rendered as `a/b` strings.
    pub fn ratio_strings(&self) -> Vec<String> {
        self.branches
            .iter()
            .map(|b| format!("{}/{}", b.ratio.numer(), b.ratio.denom()))
            .collect()
    }
}

/// Exact bias-free parameter counts for strip vs square kernels.
pub fn count_params(cfg: &ParamConfig) -> Result<ParamCountReport> {
    if cfg.in_channels == 0 || cfg.mid_channels == 0 || cfg.out_channels == 0 {
        return Err(contract_err!("channel counts must be positive"));
    }
    if cfg.kernel_sizes.is_empty() || cfg.kernel_sizes.contains(&0) {
        return Err(contract_err!("kernel sizes must be positive"));
    }
    let (ci, cm, co) = (cfg.in_channels, cfg.mid_channels, cfg.out_channels);
    let branches: Vec<BranchCount> = cfg
        .kernel_sizes
        .iter()
        .map(|&m| {
            let separable = cm * cm * m + cm * co * m;
            let full = cm * co * m * m;
            BranchCount {
                m,
                separable,
                full,
                ratio: Ratio::new(separable, full),
            }
        })
        .collect();
    let separable_total = branches.iter().map(|b| b.separable).sum();
    let full_total = branches.iter().map(|b| b.full).sum();
    let reduces = (cfg.kernel_sizes.len() as u64 + 1) * ci * cm;
    let identity_local = cm * co * 9;
    Ok(ParamCountReport {
        branches,
        separable_total,
        full_total,
        module_separable: reduces + identity_local + separable_total,
        module_full: reduces + identity_local + full_total,
    })
}
