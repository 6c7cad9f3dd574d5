//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape;
//! [`Graph::backward`] walks the tape in reverse insertion order.

use crate::error::{shape_err, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Resize {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
    },
    AvgPool2 {
        x: Var,
        planes: usize,
    },
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    WeightedSqError {
        pred: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
    Dot {
        x: Var,
        coeffs: Vec<f64>,
    },
    LinComb(Vec<(Var, f64)>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free variable whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a named parameter onto the tape; its gradient is reported by [`Graph::param_grads`].
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let v = self.leaf(params.get(name)?.clone());
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv2d")?;
        let (cout, wcin, k, k2) = self.value(w).dims4("conv2d")?;
        if wcin != cin || k != k2 || self.value(b).shape() != [cout] || stride == 0 {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}, stride {stride}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} larger than padded {h}x{wd}"),
            ));
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
        };
        let (out, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::from_vec(&[n, cout, geom.out_h(), geom.out_w()], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::from_vec(v.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Align-corners bilinear resize of the two trailing axes.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("resize_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(shape_err("resize_bilinear", "empty target"));
        }
        if (oh, ow) == (h, w) {
            return Ok(x);
        }
        let planes = n * c;
        let out = kernels::resize_forward(self.value(x).data(), planes, h, w, oh, ow);
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Resize { x, planes, h, w }, needs))
    }

    pub fn upsample_bilinear2x(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4("upsample_bilinear2x")?;
        self.resize_bilinear(x, 2 * h, 2 * w)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("avg_pool2")?;
        if h < 2 || w < 2 {
            return Err(shape_err("avg_pool2", format!("{h}x{w} too small")));
        }
        let planes = n * c;
        let out = kernels::avg_pool2_forward(self.value(x).data(), planes, h, w);
        let value = Tensor::from_vec(&[n, c, h / 2, w / 2], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AvgPool2 { x, planes }, needs))
    }

    /// Concatenates 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4("concat_channels")?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!(
                        "{:?} vs {:?}",
                        self.value(p).shape(),
                        self.value(first).shape()
                    ),
                ));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (&p, &pc) in parts.iter().zip(&channels) {
                data.extend_from_slice(&self.value(p).data()[b * pc * plane..][..pc * plane]);
            }
        }
        let value = Tensor::from_vec(&[n, total, h, w], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// Channels `start..start + len` of a 4-D tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_channels", format!("{start}+{len} of {c}")));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * plane..][..len * plane]);
        }
        let value = Tensor::from_vec(&[n, len, h, w], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceChannels { x, start }, needs))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Scalar `Σ weight·(pred − target)²` with constant target and weight.
    pub fn weighted_sq_error(
        &mut self,
        pred: Var,
        target: &Tensor,
        weight: &Tensor,
    ) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != weight.shape() {
            return Err(shape_err(
                "weighted_sq_error",
                format!(
                    "{:?} / {:?} / {:?}",
                    p.shape(),
                    target.shape(),
                    weight.shape()
                ),
            ));
        }
        let mut acc = 0.0;
        for ((a, t), w) in p.data().iter().zip(target.data()).zip(weight.data()) {
            let d = a - t;
            acc += w * d * d;
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSqError {
                pred,
                target: target.data().to_vec(),
                weight: weight.data().to_vec(),
            },
            needs,
        ))
    }

    /// Scalar `Σ coeffs·x`; handy as a random projection in gradient checks.
    pub fn dot(&mut self, x: Var, coeffs: &Tensor) -> Result<Var> {
        let v = self.value(x);
        if v.len() != coeffs.len() {
            return Err(shape_err(
                "dot",
                format!("{:?} vs {:?}", v.shape(), coeffs.shape()),
            ));
        }
        let acc = v.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::Dot {
                x,
                coeffs: coeffs.data().to_vec(),
            },
            needs,
        ))
    }

    /// Scalar `Σ coef·term` over scalar nodes.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err(
                    "lincomb",
                    format!("non-scalar term {:?}", t.shape()),
                ));
            }
            acc += c * t.data()[0];
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(acc), Op::LinComb(terms.to_vec()), needs))
    }

    /// Reverse pass from a scalar node. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |v: Var, delta: Vec<f64>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let want_input = nodes[x.0].needs_grad;
                    let cg = kernels::conv2d_backward(
                        &g,
                        nodes[w.0].value.data(),
                        cols,
                        geom,
                        want_input,
                    );
                    if let Some(dx) = cg.input {
                        send(*x, dx);
                    }
                    send(*w, cg.weight);
                    send(*b, cg.bias);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Relu(x) => {
                    let xin = nodes[x.0].value.data();
                    let d = g
                        .iter()
                        .zip(xin)
                        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
                        .collect();
                    send(*x, d);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)).collect();
                    send(*x, d);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)).collect();
                    send(*x, d);
                }
                Op::Resize { x, planes, h, w } => {
                    let s = node.value.shape();
                    let d = kernels::resize_backward(&g, *planes, *h, *w, s[2], s[3]);
                    send(*x, d);
                }
                Op::AvgPool2 { x, planes } => {
                    let s = nodes[x.0].value.shape();
                    let d = kernels::avg_pool2_backward(&g, *planes, s[2], s[3]);
                    send(*x, d);
                }
                Op::Concat(parts) => {
                    let s = node.value.shape();
                    let (n, total, plane) = (s[0], s[1], s[2] * s[3]);
                    let mut offset = 0;
                    for &p in parts {
                        let pc = nodes[p.0].value.shape()[1];
                        let mut d = Vec::with_capacity(n * pc * plane);
                        for bi in 0..n {
                            d.extend_from_slice(&g[(bi * total + offset) * plane..][..pc * plane]);
                        }
                        offset += pc;
                        send(p, d);
                    }
                }
                Op::SliceChannels { x, start } => {
                    let s = nodes[x.0].value.shape();
                    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                    let len = node.value.shape()[1];
                    let mut d = vec![0.0; n * c * plane];
                    for bi in 0..n {
                        d[(bi * c + start) * plane..][..len * plane]
                            .copy_from_slice(&g[bi * len * plane..][..len * plane]);
                    }
                    send(*x, d);
                }
                Op::WeightedSqError {
                    pred,
                    target,
                    weight,
                } => {
                    let p = nodes[pred.0].value.data();
                    let d = p
                        .iter()
                        .zip(target)
                        .zip(weight)
                        .map(|((a, t), w)| 2.0 * w * (a - t) * g[0])
                        .collect();
                    send(*pred, d);
                }
                Op::Dot { x, coeffs } => {
                    send(*x, coeffs.iter().map(|c| c * g[0]).collect());
                }
                Op::LinComb(terms) => {
                    for &(v, c) in terms {
                        send(v, vec![c * g[0]]);
                    }
                }
                Op::Reshape(x) => send(*x, g.clone()),
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradients of every parameter loaded with [`Graph::param`], summed per name.
    pub fn param_grads(&self) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, v) in &self.params {
            let shape = self.value(*v).shape();
            let g = match self.grad(*v) {
                Some(g) => Tensor::from_vec(shape, g.to_vec())?,
                None => Tensor::zeros(shape),
            };
            if out.contains(name) {
                let mut single = ParamSet::new();
                single.insert(name.clone(), g)?;
                out.accumulate(&single)?;
            } else {
                out.insert(name.clone(), g)?;
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn one_by_one_unit_kernel_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.input(t4([1, 1, 4, 6], data.clone()));
        let w = g.input(t4([1, 1, 1, 1], vec![1.0]));
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn box_kernel_sums_neighbourhood() {
        let c = 1.75;
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 5, 5], c));
        let w = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[1, 1, 5, 5]);
        assert_eq!(out.data()[2 * 5 + 2], 9.0 * c);
        // corner sees only 4 pixels inside the zero padding
        assert_eq!(out.data()[0], 4.0 * c);
    }

    #[test]
    fn strided_output_size() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3, 16, 32]));
        let w = g.input(Tensor::zeros(&[4, 3, 7, 7]));
        let b = g.input(Tensor::zeros(&[4]));
        let y = g.conv2d(x, w, b, 2, 3).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 8, 16]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, 8, 8]));
        let w = g.input(Tensor::zeros(&[4, 2, 3, 3]));
        let b = g.input(Tensor::zeros(&[4]));
        assert!(g.conv2d(x, w, b, 1, 1).is_err());
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn bilinear_upsample_keeps_constants() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 2, 3, 5], 0.3));
        let y = g.upsample_bilinear2x(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 6, 10]);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn bilinear_resize_hits_corners_and_midpoints() {
        let mut g = Graph::new();
        let x = g.input(t4([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]));
        let y = g.resize_bilinear(x, 3, 3).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]
        );
    }

    #[test]
    fn avg_pool_halves() {
        let mut g = Graph::new();
        let x = g.input(t4(
            [1, 1, 2, 4],
            vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 4.0, 8.0],
        ));
        let y = g.avg_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 3.0]);
    }

    #[test]
    fn concat_then_slice_returns_originals() {
        let mut g = Graph::new();
        let a = t4([2, 1, 2, 2], (0..8).map(f64::from).collect());
        let b = t4([2, 3, 2, 2], (0..24).map(|i| -f64::from(i)).collect());
        let va = g.input(a.clone());
        let vb = g.input(b.clone());
        let c = g.concat_channels(&[va, vb]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4, 2, 2]);
        let sa = g.slice_channels(c, 0, 1).unwrap();
        let sb = g.slice_channels(c, 1, 3).unwrap();
        assert_eq!(g.value(sa), &a);
        assert_eq!(g.value(sb), &b);
    }

    #[test]
    fn reshape_keeps_values_and_checks_size() {
        let mut g = Graph::new();
        let x = g.input(t4([2, 3, 1, 2], (0..12).map(f64::from).collect()));
        let y = g.reshape(x, &[2, 6, 1, 1]).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 6, 1, 1]);
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert!(g.reshape(x, &[5]).is_err());
    }

    #[test]
    fn weighted_sq_error_and_its_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 0.0]).unwrap());
        let t = Tensor::from_vec(&[3], vec![0.0, 2.0, 1.0]).unwrap();
        let w = Tensor::from_vec(&[3], vec![4.0, 1.0, 0.5]).unwrap();
        let l = g.weighted_sq_error(p, &t, &w).unwrap();
        assert_eq!(g.value(l).data(), &[4.5]);
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[8.0, 0.0, -1.0]);
    }

    #[test]
    fn constant_inputs_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 0.5));
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let l = g.dot(y, &Tensor::full(&[9], 1.0)).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(b).unwrap(), &[9.0]);
    }

    #[test]
    fn param_grads_cover_loaded_params() {
        let mut params = ParamSet::new();
        params
            .insert("a", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let a = g.param(&params, "a").unwrap();
        let l = g
            .dot(a, &Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap())
            .unwrap();
        g.backward(l).unwrap();
        let grads = g.param_grads().unwrap();
        assert_eq!(grads.get("a").unwrap().data(), &[3.0, 4.0]);
    }
}
