//! Reverse-mode differentiation over an append-only record of ops.
//!
//! Nodes are created in execution order, so walking the record backwards
//! visits every node after all of its consumers.

use crate::error::{contract_err, shape_err, Result};
use crate::scalar::Scalar;

use super::kernels::{self, Conv2dParams, Direction, PoolParams};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        params: Conv2dParams,
    },
    Rot90 {
        input: Var,
        dir: Direction,
    },
    AvgPool {
        input: Var,
        params: PoolParams,
    },
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Square(Var),
    Sqrt(Var),
    SmoothL1 {
        input: Var,
        beta: T,
    },
    Broadcast(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed ops with the values needed to run them backwards.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradient per recorded value, as produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`. Values that did not
    /// influence the loss have no entry.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf held fixed (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(crate::Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, params: Conv2dParams) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            &params,
        )?;
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                params,
            },
            &ins,
        )
    }

    pub fn rot90(&mut self, input: Var, dir: Direction) -> Result<Var> {
        let out = kernels::rot90(self.value(input), dir)?;
        self.push("rot90", out, Op::Rot90 { input, dir }, &[input])
    }

    pub fn avg_pool(&mut self, input: Var, params: PoolParams) -> Result<Var> {
        let out = kernels::avg_pool(self.value(input), &params)?;
        self.push("avg_pool", out, Op::AvgPool { input, params }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = kernels::sigmoid(self.value(input));
        self.push("sigmoid", out, Op::Sigmoid(input), &[input])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat_channels(&tensors)?;
        self.push("concat_channels", out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice_channels(self.value(input), start, len)?;
        self.push("slice_channels", out, Op::SliceChannels { input, start }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        self.push("div", out, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.value(input).map(|x| x * factor);
        self.push("scale", out, Op::Scale(input, factor), &[input])
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|x| x * x);
        self.push("square", out, Op::Square(input), &[input])
    }

    pub fn sqrt(&mut self, input: Var) -> Result<Var> {
        if self.value(input).data().iter().any(|&x| x <= T::zero()) {
            return Err(contract_err!("sqrt needs strictly positive input"));
        }
        let out = self.value(input).map(T::sqrt);
        self.push("sqrt", out, Op::Sqrt(input), &[input])
    }

    pub fn smooth_l1(&mut self, input: Var, beta: T) -> Result<Var> {
        let out = self.value(input).map(|x| kernels::smooth_l1_scalar(x, beta));
        self.push("smooth_l1", out, Op::SmoothL1 { input, beta }, &[input])
    }

    /// Right-aligned broadcast to `dims` (numpy rules, size-1 axes repeat).
    pub fn broadcast(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let out = kernels::broadcast_to(self.value(input), dims)?;
        self.push("broadcast", out, Op::Broadcast(input), &[input])
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(input).sum());
        self.push("sum", out, Op::Sum(input), &[input])
    }

    /// Accumulates d(loss)/d(node) for every node that depends on a
    /// gradient-requiring leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(contract_err!(
                "backward needs a single-element loss, got dims {:?}",
                lv.dims()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.dims(), T::one())?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (target, contrib) in self.local_grads(&node.op, &node.value, &g)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => {
                        *acc = acc.zip_map(&contrib, |a, b| a + b)?;
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }

        // leaves that require a gradient but were unused get zeros
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.dims())?);
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let v = |x: Var| self.value(x);
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                params,
            } => {
                let (gx, gk, gb) = kernels::conv2d_backward(v(*input), v(*kernel), g, params)?;
                let mut r = vec![(*input, gx), (*kernel, gk)];
                if let Some(b) = bias {
                    r.push((*b, gb.reshape(v(*b).dims())?));
                }
                r
            }
            Op::Rot90 { input, dir } => vec![(*input, kernels::rot90(g, dir.inverse())?)],
            Op::AvgPool { input, params } => {
                vec![(*input, kernels::avg_pool_backward(v(*input), g, params)?)]
            }
            Op::Sigmoid(input) => vec![(*input, out.zip_map(g, |s, gv| gv * s * (T::one() - s))?)],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut r = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = v(p).dims()[1];
                    r.push((p, kernels::slice_channels(g, start, c)?));
                    start += c;
                }
                r
            }
            Op::SliceChannels { input, start } => {
                vec![(*input, kernels::unslice_channels(g, v(*input).dims(), *start)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(v(*b), |gv, y| gv * y)?),
                (*b, g.zip_map(v(*a), |gv, x| gv * x)?),
            ],
            Op::Div(a, b) => {
                let ga = g.zip_map(v(*b), |gv, y| gv / y)?;
                let gb = g
                    .zip_map(out, |gv, q| gv * q)?
                    .zip_map(v(*b), |t, y| -t / y)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(input, f) => {
                let f = *f;
                vec![(*input, g.map(|x| x * f))]
            }
            Op::Square(input) => vec![(*input, g.zip_map(v(*input), |gv, x| gv * (x + x))?)],
            Op::Sqrt(input) => vec![(*input, g.zip_map(out, |gv, s| gv / (s + s))?)],
            Op::SmoothL1 { input, beta } => {
                let beta = *beta;
                vec![(
                    *input,
                    g.zip_map(v(*input), |gv, x| gv * kernels::smooth_l1_grad(x, beta))?,
                )]
            }
            Op::Broadcast(input) => vec![(*input, kernels::reduce_to(g, v(*input).dims())?)],
            Op::Sum(input) => {
                let s = g.data()[0];
                vec![(*input, Tensor::full(v(*input).dims(), s)?)]
            }
        })
    }
}

/// Checks that two vars share spatial extent; used where blocks concatenate or add.
pub(crate) fn expect_same_dims<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.dims(a) != tape.dims(b) {
        return Err(shape_err!(
            "{what}: {:?} vs {:?}",
            tape.dims(a),
            tape.dims(b)
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_at_zero_has_quarter_slope() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        let y = tape.sigmoid(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unused_leaf_gets_zero_and_non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2], 3.0).unwrap());
        let unused = tape.param(Tensor::full(&[3], 1.0).unwrap());
        let sq = tape.square(x).unwrap();
        assert!(matches!(tape.backward(sq), Err(crate::Error::Contract(_))));
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, 6.0]);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[1, 1, 1, 1], 2.0).unwrap());
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[1], 1.0).unwrap());
        let b = tape.constant(Tensor::full(&[1], 0.0).unwrap());
        assert!(matches!(tape.div(a, b), Err(crate::Error::NonFinite("div"))));
    }
}
