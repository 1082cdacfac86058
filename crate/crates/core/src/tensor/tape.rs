//! Reverse-mode gradient tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the handles of its inputs. Node indices are therefore a topological order,
//! and `backward` walks them once in reverse.

use super::conv::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    SumSquares {
        input: Var,
    },
    SumAbs {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .take()
            .map(|g| Tensor::from_vec(&self.shapes[v.0], g).expect("gradient shape"))
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => *slot = Some(g),
    }
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let one = T::one();
    let y = one / (one + (-x).exp());
    // keep the open interval even where exp saturates
    let hi = one - T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(hi)
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// New constant leaf carrying `v`'s current value; no gradient flows back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = conv::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let geom = conv::conv2d_geom(self.value(input), self.value(weight), stride, padding)?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &ins,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let out = conv::conv_transpose2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
            output_padding,
        )?;
        let geom = conv::conv_transpose2d_geom(
            self.value(input),
            self.value(weight),
            stride,
            padding,
            output_padding,
        )?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            &ins,
        ))
    }

    /// Group normalization over `[N,C,H,W]` with per-channel affine.
    pub fn group_norm(
        &mut self,
        input: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::dim(
                "input rank",
                format!("group_norm expects [N,C,H,W], got {:?}", x.shape()),
            ));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "{c} channels cannot be split into {groups} groups"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Config("group_norm eps must be positive".into()));
        }
        self.value(gamma).expect_shape(&[c], "gamma")?;
        self.value(beta).expect_shape(&[c], "beta")?;
        let plane = x.shape()[2] * x.shape()[3];
        let per_group = c / groups * plane;
        let eps = T::of(eps);
        let m = T::from_usize(per_group).unwrap();
        let mut mean = Vec::with_capacity(n * groups);
        let mut rstd = Vec::with_capacity(n * groups);
        let mut out = vec![T::zero(); x.numel()];
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        for (gi, (chunk, o)) in x
            .data()
            .chunks(per_group)
            .zip(out.chunks_mut(per_group))
            .enumerate()
        {
            let mu = chunk.iter().copied().sum::<T>() / m;
            let var = chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
            let r = T::one() / (var + eps).sqrt();
            let c0 = (gi % groups) * (c / groups);
            for (j, (&v, y)) in chunk.iter().zip(o.iter_mut()).enumerate() {
                let ch = c0 + j / plane;
                *y = (v - mu) * r * gd[ch] + bd[ch];
            }
            mean.push(mu);
            rstd.push(r);
        }
        let shape = x.shape().to_vec();
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Config(format!("leaky slope {slope} outside [0,1)")));
        }
        let s = T::of(slope);
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { s * v });
        Ok(self.push(out, Op::LeakyRelu { input, slope: s }, &[input]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid { input }, &[input])
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let out = self.value(input).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { input, lo, hi }, &[input])
    }

    /// Elementwise product. `b` may omit the leading (batch) axis of `a`.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            av.zip_map(bv, |x, y| x * y)?
        } else if av.rank() == bv.rank() + 1 && av.shape()[1..] == *bv.shape() {
            let inner = bv.numel();
            let data = av
                .data()
                .chunks(inner)
                .flat_map(|chunk| chunk.iter().zip(bv.data()).map(|(&x, &y)| x * y))
                .collect();
            Tensor::from_vec(av.shape(), data)?
        } else {
            return Err(Error::dim(
                "hadamard operand",
                format!("{:?} and {:?} are not compatible", av.shape(), bv.shape()),
            ));
        };
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let out = self.value(input).map(|v| v * f);
        self.push(out, Op::Scale { input, factor: f }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    /// Sum of squared elements.
    pub fn sum_squares(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).data().iter().map(|&v| v * v).sum());
        self.push(out, Op::SumSquares { input }, &[input])
    }

    /// Sum of absolute values; the subgradient at zero is zero.
    pub fn sum_abs(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).data().iter().map(|v| v.abs()).sum());
        self.push(out, Op::SumAbs { input }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }, &[input]))
    }

    /// Slice `start..start+len` along axis 1.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow_axis1(start, len)?;
        Ok(self.push(out, Op::Narrow { input, start, len }, &[input]))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let shape0 = self.shape(first).to_vec();
        if shape0.len() < 2 {
            return Err(Error::dim("axis 1", "concat needs rank >= 2"));
        }
        let inner: usize = shape0[2..].iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != shape0.len() || s[0] != shape0[0] || s[2..] != shape0[2..] {
                return Err(Error::dim(
                    "concat operand",
                    format!("{s:?} incompatible with {shape0:?}"),
                ));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(shape0[0] * total * inner);
        for o in 0..shape0[0] {
            for &p in parts {
                let v = self.value(p);
                let row = v.shape()[1] * inner;
                data.extend_from_slice(&v.data()[o * row..(o + 1) * row]);
            }
        }
        let mut shape = shape0;
        shape[1] = total;
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Back-propagates from the scalar `loss` to every reachable node that
    /// requires a gradient. Fan-out contributions accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            visited,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    geom,
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(dx) = dx {
                    accumulate(&mut grads[input.0], dx);
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[weight.0], dw);
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    geom,
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(dx) = dx {
                    accumulate(&mut grads[input.0], dx);
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[weight.0], dw);
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let x = self.value(*input);
                let c = x.shape()[1];
                let plane = x.shape()[2] * x.shape()[3];
                let cpg = c / groups;
                let per_group = cpg * plane;
                let m = T::from_usize(per_group).unwrap();
                let gd = self.value(*gamma).data();
                let mut dx = vec![T::zero(); x.numel()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (gi, ((xc, gc), dxc)) in x
                    .data()
                    .chunks(per_group)
                    .zip(g.chunks(per_group))
                    .zip(dx.chunks_mut(per_group))
                    .enumerate()
                {
                    let (mu, r) = (mean[gi], rstd[gi]);
                    let c0 = (gi % groups) * cpg;
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for (j, (&xv, &gv)) in xc.iter().zip(gc).enumerate() {
                        let ch = c0 + j / plane;
                        let xhat = (xv - mu) * r;
                        dgamma[ch] += gv * xhat;
                        dbeta[ch] += gv;
                        let d = gv * gd[ch];
                        sum_d += d;
                        sum_dx += d * xhat;
                    }
                    for (j, (&xv, &gv)) in xc.iter().zip(gc).enumerate() {
                        let ch = c0 + j / plane;
                        let xhat = (xv - mu) * r;
                        let d = gv * gd[ch];
                        dxc[j] = r / m * (m * d - sum_d - xhat * sum_dx);
                    }
                }
                if self.wants(*input) {
                    accumulate(&mut grads[input.0], dx);
                }
                if self.wants(*gamma) {
                    accumulate(&mut grads[gamma.0], dgamma);
                }
                if self.wants(*beta) {
                    accumulate(&mut grads[beta.0], dbeta);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { gv * *slope })
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let d = y
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v < *lo || v > *hi { T::zero() } else { gv })
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let inner = bv.numel();
                if self.wants(*a) {
                    let d = g
                        .chunks(inner)
                        .flat_map(|gc| gc.iter().zip(bv.data()).map(|(&gv, &y)| gv * y))
                        .collect();
                    accumulate(&mut grads[a.0], d);
                }
                if self.wants(*b) {
                    let mut d = vec![T::zero(); inner];
                    for (gc, ac) in g.chunks(inner).zip(av.data().chunks(inner)) {
                        for ((dv, &gv), &x) in d.iter_mut().zip(gc).zip(ac) {
                            *dv += gv * x;
                        }
                    }
                    accumulate(&mut grads[b.0], d);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.iter().map(|&v| -v).collect());
                }
            }
            Op::Scale { input, factor } => {
                accumulate(&mut grads[input.0], g.iter().map(|&v| v * *factor).collect());
            }
            Op::Sum { input } => {
                accumulate(&mut grads[input.0], vec![g[0]; self.value(*input).numel()]);
            }
            Op::SumSquares { input } => {
                let two = T::of(2.0);
                let d = self
                    .value(*input)
                    .data()
                    .iter()
                    .map(|&v| two * v * g[0])
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::SumAbs { input } => {
                let d = self
                    .value(*input)
                    .data()
                    .iter()
                    .map(|&v| {
                        if v > T::zero() {
                            g[0]
                        } else if v < T::zero() {
                            -g[0]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(&mut grads[input.0], d);
            }
            Op::Reshape { input } => accumulate(&mut grads[input.0], g.to_vec()),
            Op::Narrow { input, start, len } => {
                let x = self.value(*input);
                let inner: usize = x.shape()[2..].iter().product();
                let row = x.shape()[1] * inner;
                let mut d = vec![T::zero(); x.numel()];
                for (o, gc) in g.chunks(len * inner).enumerate() {
                    let base = o * row + start * inner;
                    d[base..base + len * inner].copy_from_slice(gc);
                }
                accumulate(&mut grads[input.0], d);
            }
            Op::Concat { parts } => {
                let shape = node.value.shape();
                let inner: usize = shape[2..].iter().product();
                let row = shape[1] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[1] * inner;
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(self.value(p).numel());
                        for o in 0..shape[0] {
                            let base = o * row + offset;
                            d.extend_from_slice(&g[base..base + len]);
                        }
                        accumulate(&mut grads[p.0], d);
                    }
                    offset += len;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let sq = tape.sum_squares(x);
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap(), true);
        let y = tape.add(x, x).unwrap();
        let z = tape.hadamard(y, x).unwrap(); // 2x^2
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[12.0, 16.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        assert!(Tape::<f64>::new().backward(Var(0)).is_err());
    }

    #[test]
    fn leaky_relu_values_and_kink() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![0.0, 2.0, -1.0]).unwrap(), true);
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, -0.2]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.2, 1.0, 0.2]);
        assert!(tape.leaky_relu(x, 1.0).is_err());
    }

    #[test]
    fn sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(&[4], vec![0.0, 1.0, 50.0, -800.0]).unwrap(),
            false,
        );
        let s = tape.sigmoid(x);
        let y = tape.value(s).clone();
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(y.data()[2] < 1.0 && y.data()[3] > 0.0);
    }

    #[test]
    fn hadamard_identities_and_broadcast() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 2, 2], |i| i as f64 - 3.0), true);
        let one = tape.constant(Tensor::ones(&[2, 2, 2]));
        let zero = tape.constant(Tensor::zeros(&[2, 2, 2]));
        let p = tape.hadamard(a, one).unwrap();
        assert_eq!(tape.value(p), tape.value(a));
        let q = tape.hadamard(a, zero).unwrap();
        assert!(tape.value(q).data().iter().all(|&v| v == 0.0));

        let batch = tape.leaf(Tensor::from_fn(&[3, 2, 2, 2], |i| i as f64), true);
        let r = tape.hadamard(batch, a).unwrap();
        assert_eq!(tape.shape(r), &[3, 2, 2, 2]);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        // d/da sums the batch
        let ga = g.get(a).unwrap();
        assert_eq!(ga.data()[0], 0.0 + 8.0 + 16.0);

        let bad = tape.constant(Tensor::ones(&[3, 3]));
        assert!(matches!(tape.hadamard(a, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn group_norm_edge_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 4, 3, 3], 2.5));
        let gamma = tape.constant(Tensor::ones(&[4]));
        let beta = tape.constant(Tensor::zeros(&[4]));
        let y = tape.group_norm(x, 2, gamma, beta, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let xr = tape.constant(Tensor::from_fn(&[1, 4, 3, 3], |i| (i as f64).sin()));
        let g0 = tape.constant(Tensor::zeros(&[4]));
        let b = tape.constant(Tensor::full(&[4], 0.7));
        let y = tape.group_norm(xr, 2, g0, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.7));

        assert!(matches!(
            tape.group_norm(x, 3, gamma, beta, 1e-5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn narrow_concat_roundtrip_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 4, 3], |i| i as f64), true);
        let a = tape.narrow(x, 0, 1).unwrap();
        let b = tape.narrow(x, 1, 3).unwrap();
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c), tape.value(x));
        let w = tape.constant(Tensor::from_fn(&[2, 4, 3], |i| i as f64 * 0.5));
        let p = tape.hadamard(c, w).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), *tape.value(w));
    }

    #[test]
    fn detached_values_block_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let d = tape.detach(x);
        let y = tape.hadamard(x, d).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
        assert!(g.get(d).is_none());
    }
}
