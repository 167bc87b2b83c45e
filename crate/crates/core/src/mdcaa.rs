//! Multi-directional contextual anchor attention (MDCAA).
//!
//! Pipeline for an input feature `F` with `C` channels:
//!
//! 1. `P = pointwise(avg_pool(F))` (stride-1 "same" pooling);
//! 2. `HV = horizontal(vertical(P))`, depthwise strips of length `m`;
//! 3. `H = horizontal'(P)`, `V = vertical'(P)`, `CHV = [H | V]`;
//! 4. main diagonal: rotate `HV` clockwise, diagonal strip conv, rotate back;
//!    anti diagonal: rotate `HV` counter-clockwise, diagonal strip conv,
//!    rotate back;
//! 5. `A = sigmoid(fusion([main | anti | CHV]))`.
//!
//! The attention `A` has the dims of `F` and is applied as `F * A`.
//!
//! A diagonal strip is an `m x m` depthwise kernel whose only non-zero taps
//! lie on one diagonal line. A plain `1 x m` strip would come back from the
//! quarter-turn round trip as an ordinary vertical strip, so the line is laid
//! out such that, seen in the unrotated frame, the main branch aggregates
//! along the main diagonal (top-left to bottom-right) and the anti branch
//! along the anti-diagonal.

use crate::error::{contract_err, shape_err, Result};
use crate::nn::{join, Conv2d, Initializer, ParamRole, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{Direction, PoolParams, Tape, Tensor, Var};

pub const DEFAULT_STRIP: usize = 11;
pub const DEFAULT_POOL_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    /// Rotated by -90 degrees (clockwise) before the strip conv.
    Main,
    /// Rotated by +90 degrees (counter-clockwise) before the strip conv.
    Anti,
}

impl Diagonal {
    /// Kernel cell of tap `t` (`0..m`) in the rotated frame.
    pub fn tap_cell(self, m: usize, t: usize) -> (usize, usize) {
        match self {
            Diagonal::Main => (m - 1 - t, t),
            Diagonal::Anti => (t, t),
        }
    }

    fn into_rotation(self) -> Direction {
        match self {
            Diagonal::Main => Direction::Cw,
            Diagonal::Anti => Direction::Ccw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdcaaWeights<T> {
    channels: usize,
    strip: usize,
    pool_window: usize,
    pub pointwise: Conv2d<T>,
    pub hv_vertical: Conv2d<T>,
    pub hv_horizontal: Conv2d<T>,
    pub horizontal: Conv2d<T>,
    pub vertical: Conv2d<T>,
    pub diag_main: Conv2d<T>,
    pub diag_anti: Conv2d<T>,
    pub fusion: Conv2d<T>,
}

impl<T: Scalar> MdcaaWeights<T> {
    pub fn new(init: &mut Initializer, channels: usize, strip: usize, pool_window: usize) -> Result<Self> {
        if strip < 3 || strip.is_multiple_of(2) {
            return Err(contract_err!("strip length must be odd and >= 3, got {strip}"));
        }
        if pool_window == 0 || pool_window.is_multiple_of(2) {
            return Err(contract_err!("pool window must be odd, got {pool_window}"));
        }
        let c = channels;
        let w = Self {
            channels,
            strip,
            pool_window,
            pointwise: init.same_conv(c, c, (1, 1), 1)?,
            hv_vertical: init.same_conv(c, c, (strip, 1), c)?,
            hv_horizontal: init.same_conv(c, c, (1, strip), c)?,
            horizontal: init.same_conv(c, c, (1, strip), c)?,
            vertical: init.same_conv(c, c, (strip, 1), c)?,
            diag_main: diagonal_conv(init, c, strip, Diagonal::Main)?,
            diag_anti: diagonal_conv(init, c, strip, Diagonal::Anti)?,
            fusion: init.same_conv(c, 4 * c, (1, 1), 1)?,
        };
        w.validate()?;
        Ok(w)
    }

    /// Checks the depthwise and fusion-width invariants; call after editing
    /// the public conv fields.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        for (name, conv) in [
            ("hv_vertical", &self.hv_vertical),
            ("hv_horizontal", &self.hv_horizontal),
            ("horizontal", &self.horizontal),
            ("vertical", &self.vertical),
            ("diag_main", &self.diag_main),
            ("diag_anti", &self.diag_anti),
        ] {
            if conv.params.groups != c || conv.in_channels() != c || conv.out_channels() != c {
                return Err(shape_err!("{name} must be depthwise over {c} channels"));
            }
        }
        for (which, conv) in [(Diagonal::Main, &self.diag_main), (Diagonal::Anti, &self.diag_anti)] {
            let m = self.strip;
            if conv.kernel_size() != (m, m) {
                return Err(shape_err!("{which:?} diagonal kernel must be {m}x{m}"));
            }
            let on_line: Vec<(usize, usize)> = (0..m).map(|t| which.tap_cell(m, t)).collect();
            let k = &conv.kernel;
            for ch in 0..c {
                for a in 0..m {
                    for b in 0..m {
                        if !on_line.contains(&(a, b)) && k.at4(ch, 0, a, b) != T::zero() {
                            return Err(contract_err!("{which:?} diagonal kernel has an off-line tap at ({a}, {b})"));
                        }
                    }
                }
            }
        }
        if self.pointwise.in_channels() != c || self.pointwise.out_channels() != c {
            return Err(shape_err!("pointwise conv must map {c} -> {c} channels"));
        }
        // [main | anti | H | V]
        if self.fusion.in_channels() != 4 * c || self.fusion.out_channels() != c {
            return Err(shape_err!("fusion conv must map {} -> {c} channels", 4 * c));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn strip(&self) -> usize {
        self.strip
    }

    pub fn pool_window(&self) -> usize {
        self.pool_window
    }

    fn check_input(&self, tape: &Tape<T>, f: Var) -> Result<()> {
        let d = tape.dims(f);
        if d.len() != 4 || d[1] != self.channels {
            return Err(shape_err!(
                "MDCAA expects {} channels, got dims {:?}",
                self.channels,
                d
            ));
        }
        Ok(())
    }

    /// Rotate, strip conv, rotate back.
    pub fn diagonal_branch(&self, tape: &mut Tape<T>, hv: Var, which: Diagonal) -> Result<Var> {
        let rot = which.into_rotation();
        let conv = match which {
            Diagonal::Main => &self.diag_main,
            Diagonal::Anti => &self.diag_anti,
        };
        let r = tape.rot90(hv, rot)?;
        let c = conv.forward(tape, r)?;
        tape.rot90(c, rot.inverse())
    }

    /// Attention map in `(0, 1)` with the dims of `f`.
    pub fn attention(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        self.check_input(tape, f)?;
        let pooled = tape.avg_pool(f, PoolParams::same(self.pool_window))?;
        let p = self.pointwise.forward(tape, pooled)?;

        let v = self.hv_vertical.forward(tape, p)?;
        let hv = self.hv_horizontal.forward(tape, v)?;

        let h_single = self.horizontal.forward(tape, p)?;
        let v_single = self.vertical.forward(tape, p)?;

        let main = self.diagonal_branch(tape, hv, Diagonal::Main)?;
        let anti = self.diagonal_branch(tape, hv, Diagonal::Anti)?;

        let stacked = tape.concat_channels(&[main, anti, h_single, v_single])?;
        let fused = self.fusion.forward(tape, stacked)?;
        tape.sigmoid(fused)
    }

    /// `f * attention(f)`.
    pub fn apply(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        let a = self.attention(tape, f)?;
        tape.mul(f, a)
    }
}

impl<T: Scalar> Parameterized<T> for MdcaaWeights<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>)) {
        for (name, conv) in [
            ("pointwise", &self.pointwise),
            ("hv_vertical", &self.hv_vertical),
            ("hv_horizontal", &self.hv_horizontal),
            ("horizontal", &self.horizontal),
            ("vertical", &self.vertical),
            ("diag_main", &self.diag_main),
            ("diag_anti", &self.diag_anti),
            ("fusion", &self.fusion),
        ] {
            conv.visit_params(&join(prefix, name), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>)) {
        for (name, conv) in [
            ("pointwise", &mut self.pointwise),
            ("hv_vertical", &mut self.hv_vertical),
            ("hv_horizontal", &mut self.hv_horizontal),
            ("horizontal", &mut self.horizontal),
            ("vertical", &mut self.vertical),
            ("diag_main", &mut self.diag_main),
            ("diag_anti", &mut self.diag_anti),
            ("fusion", &mut self.fusion),
        ] {
            conv.visit_params_mut(&join(prefix, name), f);
        }
    }
}

/// Expands per-channel taps `(C, 1, 1, m)` into the `(C, 1, m, m)` diagonal
/// strip kernel of the given branch.
pub fn diagonal_strip<T: Scalar>(taps: &Tensor<T>, which: Diagonal) -> Result<Tensor<T>> {
    let [c, one, h, m] = taps.dims4()?;
    if one != 1 || h != 1 {
        return Err(shape_err!("diagonal taps must be (C, 1, 1, m), got {:?}", taps.dims()));
    }
    let mut data = vec![T::zero(); c * m * m];
    for ch in 0..c {
        for t in 0..m {
            let (a, b) = which.tap_cell(m, t);
            data[(ch * m + a) * m + b] = taps.at4(ch, 0, 0, t);
        }
    }
    Tensor::new(vec![c, 1, m, m], data)
}

fn diagonal_conv<T: Scalar>(init: &mut Initializer, c: usize, m: usize, which: Diagonal) -> Result<Conv2d<T>> {
    // draw the taps as a 1 x m strip so the init range follows the true fan-in
    let strip: Conv2d<T> = init.same_conv(c, c, (1, m), c)?;
    Conv2d::new(
        diagonal_strip(&strip.kernel, which)?,
        strip.bias,
        crate::tensor::Conv2dParams::same(m, m).with_groups(c),
    )
}

fn run<T: Scalar>(x: &Tensor<T>, f: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Attention weights for `f`; every value lies strictly in `(0, 1)`.
pub fn mdcaa_weights<T: Scalar>(f: &Tensor<T>, w: &MdcaaWeights<T>) -> Result<Tensor<T>> {
    run(f, |tape, v| w.attention(tape, v))
}

pub fn diagonal_branch<T: Scalar>(hv: &Tensor<T>, w: &MdcaaWeights<T>, which: Diagonal) -> Result<Tensor<T>> {
    run(hv, |tape, v| w.diagonal_branch(tape, v, which))
}

pub fn mdcaa_apply<T: Scalar>(f: &Tensor<T>, w: &MdcaaWeights<T>) -> Result<Tensor<T>> {
    run(f, |tape, v| w.apply(tape, v))
}
