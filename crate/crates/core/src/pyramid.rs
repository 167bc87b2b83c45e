//! Network assembly: stub backbone, MSK tower, MDCAA on the upper tower
//! levels, the bottom-up path, channel-concat fusion and a shared head.
//!
//! Strides for an `H x W` input (all extents must be multiples of 64):
//!
//! | tensor        | stride | channels                      |
//! |---------------|--------|-------------------------------|
//! | stem          | 4      | `stem_channels`               |
//! | C3, C4, C5    | 8/16/32| `backbone_channels`           |
//! | M1..M4        | 4..32  | `5 * branch_out`              |
//! | CP2..CP4      | 8/16/32| `5 * branch_out`              |
//! | N3, N4, N5    | 8/16/32| `5 * branch_out`              |
//! | F3 = [C3, CP2]| 8      | `C3 + 5b`                     |
//! | F4 = [C4, CP3]| 16     | `C4 + 5b`                     |
//! | F5 = [C5, CP4, N5] | 32 | `C5 + 10b`                   |
//! | logits_k      | 8/16/32| `anchors * classes`           |
//! | boxes_k       | 8/16/32| `anchors * 6`                 |
//!
//! Box channels per anchor are `(dcx, dcy, dw, dh, x, y)`, the last two
//! being the raw angle code.

use crate::error::{contract_err, shape_err, Result};
use crate::mdcaa::{MdcaaWeights, DEFAULT_POOL_WINDOW, DEFAULT_STRIP};
use crate::msk::{MskBlock, MSK_PARTS};
use crate::nn::{join, Conv2d, Initializer, ParamRole, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{tape::expect_same_dims, Conv2dParams, Tape, Tensor, Var};

/// Input extents must be multiples of this.
pub const INPUT_MULTIPLE: usize = 64;

pub const BOX_CHANNELS: usize = 6;

/// Strides of the three fused levels.
pub const LEVEL_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub backbone_channels: [usize; 3],
    pub msk_mid_channels: usize,
    pub branch_out: usize,
    pub strip: usize,
    pub pool_window: usize,
    pub head_channels: usize,
    pub anchors: usize,
    pub classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 8,
            backbone_channels: [16, 32, 64],
            msk_mid_channels: 8,
            branch_out: 8,
            strip: DEFAULT_STRIP,
            pool_window: DEFAULT_POOL_WINDOW,
            head_channels: 16,
            anchors: 1,
            classes: 2,
        }
    }
}

impl NetworkConfig {
    /// Two-channel configuration small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 2,
            backbone_channels: [2, 2, 2],
            msk_mid_channels: 2,
            branch_out: 1,
            strip: 5,
            pool_window: 3,
            head_channels: 2,
            anchors: 1,
            classes: 2,
        }
    }

    pub fn tower_channels(&self) -> usize {
        MSK_PARTS * self.branch_out
    }

    pub fn fused_channels(&self) -> [usize; 3] {
        let t = self.tower_channels();
        let [c3, c4, c5] = self.backbone_channels;
        [c3 + t, c4 + t, c5 + 2 * t]
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.in_channels,
            self.stem_channels,
            self.msk_mid_channels,
            self.branch_out,
            self.head_channels,
            self.anchors,
            self.classes,
        ];
        if counts.iter().chain(&self.backbone_channels).any(|&c| c == 0) {
            return Err(contract_err!("channel, anchor and class counts must be positive"));
        }
        if self.strip < 3 || self.strip.is_multiple_of(2) {
            return Err(contract_err!("strip length must be odd and >= 3, got {}", self.strip));
        }
        if self.pool_window.is_multiple_of(2) {
            return Err(contract_err!("pool window must be odd, got {}", self.pool_window));
        }
        Ok(())
    }
}

fn down_conv<T: Scalar>(init: &mut Initializer, cout: usize, cin: usize) -> Result<Conv2d<T>> {
    init.conv(cout, cin, (3, 3), Conv2dParams::same(3, 3).with_stride(2, 2))
}

/// Stand-in backbone: a two-conv stride-4 stem followed by three stride-2
/// stages producing C3, C4 and C5.
#[derive(Debug, Clone, PartialEq)]
pub struct StubBackbone<T> {
    pub stem: [Conv2d<T>; 2],
    pub stages: [Conv2d<T>; 3],
}

impl<T: Scalar> StubBackbone<T> {
    pub fn new(init: &mut Initializer, cfg: &NetworkConfig) -> Result<Self> {
        let s = cfg.stem_channels;
        let [c3, c4, c5] = cfg.backbone_channels;
        Ok(Self {
            stem: [down_conv(init, s, cfg.in_channels)?, down_conv(init, s, s)?],
            stages: [down_conv(init, c3, s)?, down_conv(init, c4, c3)?, down_conv(init, c5, c4)?],
        })
    }

    /// Returns the stride-4 stem output and `[C3, C4, C5]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, [Var; 3])> {
        let s1 = self.stem[0].forward(tape, x)?;
        let stem = self.stem[1].forward(tape, s1)?;
        let c3 = self.stages[0].forward(tape, stem)?;
        let c4 = self.stages[1].forward(tape, c3)?;
        let c5 = self.stages[2].forward(tape, c4)?;
        Ok((stem, [c3, c4, c5]))
    }
}

/// Bottom-up path: `N_next = refine(M_{l+1} + down(N_prev))` with `N_prev`
/// starting at `M1`. Produces three levels; the last is N5.
#[derive(Debug, Clone, PartialEq)]
pub struct BottomUpPath<T> {
    pub down: [Conv2d<T>; 3],
    pub refine: [Conv2d<T>; 3],
}

impl<T: Scalar> BottomUpPath<T> {
    pub fn new(init: &mut Initializer, channels: usize) -> Result<Self> {
        Ok(Self {
            down: [
                down_conv(init, channels, channels)?,
                down_conv(init, channels, channels)?,
                down_conv(init, channels, channels)?,
            ],
            refine: [
                init.same_conv(channels, channels, (3, 3), 1)?,
                init.same_conv(channels, channels, (3, 3), 1)?,
                init.same_conv(channels, channels, (3, 3), 1)?,
            ],
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, m: &[Var; 4]) -> Result<[Var; 3]> {
        let mut prev = m[0];
        let mut levels = [prev; 3];
        for l in 0..3 {
            let d = self.down[l].forward(tape, prev)?;
            expect_same_dims(tape, d, m[l + 1], &format!("bottom-up level {}: downsampled vs M{}", l + 1, l + 2))?;
            let s = tape.add(m[l + 1], d)?;
            prev = self.refine[l].forward(tape, s)?;
            levels[l] = prev;
        }
        Ok(levels)
    }
}

/// Per-level `1x1` laterals into a shared classification / box head.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHead<T> {
    pub laterals: [Conv2d<T>; 3],
    pub cls: Conv2d<T>,
    pub reg: Conv2d<T>,
}

impl<T: Scalar> DetectionHead<T> {
    pub fn new(init: &mut Initializer, cfg: &NetworkConfig) -> Result<Self> {
        let h = cfg.head_channels;
        let [f3, f4, f5] = cfg.fused_channels();
        Ok(Self {
            laterals: [
                init.same_conv(h, f3, (1, 1), 1)?,
                init.same_conv(h, f4, (1, 1), 1)?,
                init.same_conv(h, f5, (1, 1), 1)?,
            ],
            cls: init.same_conv(cfg.anchors * cfg.classes, h, (3, 3), 1)?,
            reg: init.same_conv(cfg.anchors * BOX_CHANNELS, h, (3, 3), 1)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, level: usize, fused: Var) -> Result<(Var, Var)> {
        let l = self.laterals[level].forward(tape, fused)?;
        Ok((self.cls.forward(tape, l)?, self.reg.forward(tape, l)?))
    }
}

/// All weights of the assembled network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    pub backbone: StubBackbone<T>,
    pub msk: MskBlock<T>,
    /// Attention for M2, M3, M4 (producing CP2, CP3, CP4).
    pub mdcaa: [MdcaaWeights<T>; 3],
    pub bottom_up: BottomUpPath<T>,
    pub head: DetectionHead<T>,
}

/// Tape handles for every named intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetworkVars {
    pub stem: Var,
    pub c: [Var; 3],
    pub m: [Var; 4],
    pub cp: [Var; 3],
    pub n: [Var; 3],
    pub fused: [Var; 3],
    pub logits: [Var; 3],
    pub boxes: [Var; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidFeatures<T> {
    pub c: [Tensor<T>; 3],
    pub m: [Tensor<T>; 4],
    pub cp: [Tensor<T>; 3],
    /// Bottom-up levels N3, N4, N5.
    pub n: [Tensor<T>; 3],
    pub fused: [Tensor<T>; 3],
}

impl<T: Scalar> PyramidFeatures<T> {
    pub fn n5(&self) -> &Tensor<T> {
        &self.n[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T> {
    pub logits: [Tensor<T>; 3],
    pub boxes: [Tensor<T>; 3],
}

impl<T: Scalar> Network<T> {
    pub fn new(init: &mut Initializer, config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let t = config.tower_channels();
        let mdcaa = [
            MdcaaWeights::new(init, t, config.strip, config.pool_window)?,
            MdcaaWeights::new(init, t, config.strip, config.pool_window)?,
            MdcaaWeights::new(init, t, config.strip, config.pool_window)?,
        ];
        Ok(Self {
            backbone: StubBackbone::new(init, &config)?,
            msk: MskBlock::new(init, config.stem_channels, config.msk_mid_channels, config.branch_out)?,
            mdcaa,
            bottom_up: BottomUpPath::new(init, t)?,
            head: DetectionHead::new(init, &config)?,
            config,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn check_input(&self, dims: &[usize]) -> Result<()> {
        match dims {
            [_, c, h, w] if *c == self.config.in_channels => {
                if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
                    return Err(shape_err!(
                        "input extent {h}x{w} not divisible by {INPUT_MULTIPLE}"
                    ));
                }
                Ok(())
            }
            _ => Err(shape_err!(
                "expected (N, {}, H, W) image, got {dims:?}",
                self.config.in_channels
            )),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, image: Var) -> Result<NetworkVars> {
        self.check_input(tape.dims(image))?;
        let (stem, c) = self.backbone.forward(tape, image)?;
        let m = self.msk.forward(tape, stem)?;
        let cp = [
            self.mdcaa[0].apply(tape, m[1])?,
            self.mdcaa[1].apply(tape, m[2])?,
            self.mdcaa[2].apply(tape, m[3])?,
        ];
        let n = self.bottom_up.forward(tape, &m)?;

        let sources: [Vec<Var>; 3] = [vec![c[0], cp[0]], vec![c[1], cp[1]], vec![c[2], cp[2], n[2]]];
        let mut fused = [image; 3];
        let mut logits = [image; 3];
        let mut boxes = [image; 3];
        for (level, parts) in sources.iter().enumerate() {
            for &p in &parts[1..] {
                let (a, b) = (tape.dims(parts[0]), tape.dims(p));
                if a[2..] != b[2..] {
                    return Err(shape_err!("fusion level {level}: extents {a:?} vs {b:?}"));
                }
            }
            fused[level] = tape.concat_channels(parts)?;
            let (l, b) = self.head.forward(tape, level, fused[level])?;
            logits[level] = l;
            boxes[level] = b;
        }
        Ok(NetworkVars {
            stem,
            c,
            m,
            cp,
            n,
            fused,
            logits,
            boxes,
        })
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<(PyramidFeatures<T>, HeadOutputs<T>)> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let v = self.forward_tape(&mut tape, x)?;
        let get = |var: Var| tape.value(var).clone();
        Ok((
            PyramidFeatures {
                c: v.c.map(get),
                m: v.m.map(get),
                cp: v.cp.map(get),
                n: v.n.map(get),
                fused: v.fused.map(get),
            },
            HeadOutputs {
                logits: v.logits.map(get),
                boxes: v.boxes.map(get),
            },
        ))
    }
}

impl<T: Scalar> Parameterized<T> for Network<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &Tensor<T>)) {
        let bb = join(prefix, "backbone");
        for (i, c) in self.backbone.stem.iter().enumerate() {
            c.visit_params(&join(&bb, &format!("stem{i}")), f);
        }
        for (i, c) in self.backbone.stages.iter().enumerate() {
            c.visit_params(&join(&bb, &format!("c{}", i + 3)), f);
        }
        self.msk.visit_params(&join(prefix, "msk"), f);
        for (i, m) in self.mdcaa.iter().enumerate() {
            m.visit_params(&join(prefix, &format!("mdcaa{}", i + 2)), f);
        }
        let bu = join(prefix, "bottom_up");
        for i in 0..3 {
            self.bottom_up.down[i].visit_params(&join(&bu, &format!("down{i}")), f);
            self.bottom_up.refine[i].visit_params(&join(&bu, &format!("refine{i}")), f);
        }
        let hd = join(prefix, "head");
        for (i, c) in self.head.laterals.iter().enumerate() {
            c.visit_params(&join(&hd, &format!("lateral{}", i + 3)), f);
        }
        self.head.cls.visit_params(&join(&hd, "cls"), f);
        self.head.reg.visit_params(&join(&hd, "reg"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamRole, &mut Tensor<T>)) {
        let bb = join(prefix, "backbone");
        for (i, c) in self.backbone.stem.iter_mut().enumerate() {
            c.visit_params_mut(&join(&bb, &format!("stem{i}")), f);
        }
        for (i, c) in self.backbone.stages.iter_mut().enumerate() {
            c.visit_params_mut(&join(&bb, &format!("c{}", i + 3)), f);
        }
        self.msk.visit_params_mut(&join(prefix, "msk"), f);
        for (i, m) in self.mdcaa.iter_mut().enumerate() {
            m.visit_params_mut(&join(prefix, &format!("mdcaa{}", i + 2)), f);
        }
        let bu = join(prefix, "bottom_up");
        for i in 0..3 {
            self.bottom_up.down[i].visit_params_mut(&join(&bu, &format!("down{i}")), f);
            self.bottom_up.refine[i].visit_params_mut(&join(&bu, &format!("refine{i}")), f);
        }
        let hd = join(prefix, "head");
        for (i, c) in self.head.laterals.iter_mut().enumerate() {
            c.visit_params_mut(&join(&hd, &format!("lateral{}", i + 3)), f);
        }
        self.head.cls.visit_params_mut(&join(&hd, "cls"), f);
        self.head.reg.visit_params_mut(&join(&hd, "reg"), f);
    }
}

/// Bottom-up path on plain tensors; returns `[N3, N4, N5]`.
pub fn bottom_up<T: Scalar>(m: &[Tensor<T>; 4], path: &BottomUpPath<T>) -> Result<[Tensor<T>; 3]> {
    let mut tape = Tape::new();
    let vars = [
        tape.constant(m[0].clone()),
        tape.constant(m[1].clone()),
        tape.constant(m[2].clone()),
        tape.constant(m[3].clone()),
    ];
    let n = path.forward(&mut tape, &vars)?;
    Ok(n.map(|v| tape.value(v).clone()))
}

pub fn assemble_forward<T: Scalar>(image: &Tensor<T>, net: &Network<T>) -> Result<(PyramidFeatures<T>, HeadOutputs<T>)> {
    net.forward(image)
}

/// Named intermediates in dump order, paired with their tensors.
pub fn named_outputs<'a, T: Scalar>(
    features: &'a PyramidFeatures<T>,
    head: &'a HeadOutputs<T>,
) -> Vec<(String, &'a Tensor<T>)> {
    let mut out = Vec::new();
    for (i, t) in features.c.iter().enumerate() {
        out.push((format!("C{}", i + 3), t));
    }
    for (i, t) in features.m.iter().enumerate() {
        out.push((format!("M{}", i + 1), t));
    }
    for (i, t) in features.cp.iter().enumerate() {
        out.push((format!("CP{}", i + 2), t));
    }
    for (i, t) in features.n.iter().enumerate() {
        out.push((format!("N{}", i + 3), t));
    }
    for (i, t) in features.fused.iter().enumerate() {
        out.push((format!("F{}", i + 3), t));
    }
    for (i, t) in head.logits.iter().enumerate() {
        out.push((format!("logits{}", i + 3), t));
    }
    for (i, t) in head.boxes.iter().enumerate() {
        out.push((format!("boxes{}", i + 3), t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let mut c = NetworkConfig::default();
        c.strip = 4;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.classes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_indivisible_and_wrong_channel_inputs() {
        let net: Network<f32> = Network::new(&mut Initializer::Zeros, NetworkConfig::tiny()).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 3, 96, 64]).unwrap()).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 1, 64, 64]).unwrap()).is_err());
        assert!(net.forward(&Tensor::zeros(&[3, 64, 64]).unwrap()).is_err());
    }
}
