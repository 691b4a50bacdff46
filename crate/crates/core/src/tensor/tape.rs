//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every differentiable operation of one forward pass in
//! execution order. [`Tape::backward`] replays it in exact reverse order and
//! returns [`Gradients`]; the tape is dropped afterwards.

use std::fmt;

use super::kernels::{self, ConvGeom, Padding};
use super::{ParamStore, Parameter, Tensor};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Var>;
    /// One entry per input, in `inputs()` order; `None` when the input does
    /// not need a gradient.
    fn backward(&self, ctx: &BackwardCtx<'_>, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

pub struct BackwardCtx<'a> {
    tape: &'a Tape,
    output: Var,
}

impl BackwardCtx<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn output(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.tape.requires_grad(v)
    }
}

enum Op {
    Leaf {
        name: Option<String>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu {
        input: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Dot {
        input: Var,
        weights: Vec<f64>,
    },
    Pad {
        input: Var,
        pad: Padding,
    },
    Crop {
        input: Var,
        h: usize,
        w: usize,
    },
    Custom(Box<dyn Backward>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Relu { input }
            | Op::Upsample { input, .. }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::Dot { input, .. }
            | Op::Pad { input, .. }
            | Op::Crop { input, .. } => vec![*input],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Custom(op) => op.inputs(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu { .. } => "relu",
            Op::Upsample { .. } => "upsample_bilinear",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Dot { .. } => "dot",
            Op::Pad { .. } => "pad",
            Op::Crop { .. } => "crop",
            Op::Custom(op) => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field(
                "ops",
                &self.nodes.iter().map(|n| n.op.name()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of recorded operations in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} (element {i})", op.name())));
        }
        let requires_grad = match &op {
            Op::Leaf { .. } => value.requires_grad,
            other => other.inputs().iter().any(|&v| self.requires_grad(v)),
        };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; it receives a gradient iff `value.requires_grad`.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf { name: None })
    }

    pub fn constant(&mut self, mut value: Tensor) -> Result<Var> {
        value.requires_grad = false;
        self.leaf(value)
    }

    /// Records a parameter leaf whose gradient [`Gradients::accumulate_into`]
    /// routes back by name.
    pub fn param(&mut self, p: &Parameter) -> Result<Var> {
        let mut value = p.value.clone();
        value.grad = None;
        value.requires_grad = true;
        self.push(
            value,
            Op::Leaf {
                name: Some(p.name.clone()),
            },
        )
    }

    /// Records an externally defined op whose output was computed by the caller.
    pub fn record(&mut self, value: Tensor, op: Box<dyn Backward>) -> Result<Var> {
        for v in op.inputs() {
            if v.0 >= self.nodes.len() {
                return Err(Error::Contract(format!(
                    "{}: input from another tape",
                    op.name()
                )));
            }
        }
        self.push(value, Op::Custom(op))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_padded(input, weight, bias, stride, Padding::uniform(padding))
    }

    /// Cross-correlation with per-side zero padding.
    pub fn conv2d_padded(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: Padding,
    ) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let ws = self.value(weight).shape().to_vec();
        let [c_out, wc_in, kh, kw] = ws[..] else {
            return Err(Error::Dimension(format!(
                "conv2d weight must be rank 4, got {ws:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(Error::Dimension(format!(
                    "conv2d bias shape {:?} != [{c_out}]",
                    self.value(b).shape()
                )));
            }
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom::new(c_in, h, w, c_out, kh, kw, stride, pad).ok_or_else(|| {
            Error::Config(format!(
                "conv2d output extent not integral: {h}×{w}, kernel {kh}×{kw}, stride {stride}, pad {pad:?}"
            ))
        })?;
        let out = kernels::conv2d_forward(
            self.exec,
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts(vec![c_out, geom.h_out, geom.w_out], out);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(value, Op::Relu { input })
    }

    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let (c, h, w) = self.value(input).chw()?;
        let out = kernels::upsample_forward(self.exec, c, h, w, factor, self.value(input).data());
        let value = Tensor::from_parts(vec![c, h * factor, w * factor], out);
        self.push(value, Op::Upsample { input, factor })
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(value, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    /// `Σ weights ⊙ input` with constant weights.
    pub fn dot(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(input).len() {
            return Err(Error::Dimension(format!(
                "dot: {} weights for {} elements",
                weights.len(),
                self.value(input).len()
            )));
        }
        let s = self
            .value(input)
            .data()
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum();
        self.push(Tensor::scalar(s), Op::Dot { input, weights })
    }

    /// Zero-pads a `C×H×W` value.
    pub fn pad(&mut self, input: Var, pad: Padding) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let (hp, wp) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        let x = self.value(input).data();
        let mut out = vec![0.0; c * hp * wp];
        for ci in 0..c {
            for hi in 0..h {
                let src = (ci * h + hi) * w;
                let dst = (ci * hp + hi + pad.top) * wp + pad.left;
                out[dst..dst + w].copy_from_slice(&x[src..src + w]);
            }
        }
        self.push(
            Tensor::from_parts(vec![c, hp, wp], out),
            Op::Pad { input, pad },
        )
    }

    /// Keeps the top-left `h×w` window of a `C×H×W` value.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (c, hi, wi) = self.value(input).chw()?;
        if h == 0 || w == 0 || h > hi || w > wi {
            return Err(Error::Dimension(format!("crop {h}×{w} out of {hi}×{wi}")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for r in 0..h {
                let src = (ci * hi + r) * wi;
                out.extend_from_slice(&x[src..src + w]);
            }
        }
        self.push(
            Tensor::from_parts(vec![c, h, w], out),
            Op::Crop { input, h, w },
        )
    }

    /// Replays the tape backward from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs = node.op.inputs();
            let contribs = self.node_backward(Var(idx), &g);
            for (v, c) in inputs.into_iter().zip(contribs) {
                let Some(c) = c else { continue };
                if !self.requires_grad(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(c),
                }
            }
            grads[idx] = Some(g);
        }
        let names = self
            .nodes
            .iter()
            .map(|n| match &n.op {
                Op::Leaf { name } => name.clone(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, names })
    }

    fn node_backward(&self, out: Var, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need = |v: Var| self.requires_grad(v);
        let node = &self.nodes[out.0];
        match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let dx = need(*input).then(|| {
                    kernels::conv2d_backward_input(self.exec, geom, self.value(*weight).data(), g)
                });
                let (dw, db) = if need(*weight) || bias.is_some_and(need) {
                    let (dw, db) = kernels::conv2d_backward_params(
                        self.exec,
                        geom,
                        self.value(*input).data(),
                        g,
                    );
                    (Some(dw), Some(db))
                } else {
                    (None, None)
                };
                let mut v = vec![dx, dw];
                if bias.is_some() {
                    v.push(db);
                }
                v
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                vec![Some(
                    x.iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Upsample { input, factor } => {
                let (c, h, w) = self.value(*input).chw().expect("validated in forward");
                vec![Some(kernels::upsample_backward(
                    self.exec, c, h, w, *factor, g,
                ))]
            }
            Op::Add { .. } => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Mul { a, b } => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    need(*a).then(|| g.iter().zip(xb).map(|(g, y)| g * y).collect()),
                    need(*b).then(|| g.iter().zip(xa).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale { factor, .. } => vec![Some(g.iter().map(|v| v * factor).collect())],
            Op::Sum { input } => vec![Some(vec![g[0]; self.value(*input).len()])],
            Op::Dot { weights, .. } => vec![Some(weights.iter().map(|w| w * g[0]).collect())],
            Op::Pad { input, pad } => {
                let (c, h, w) = self.value(*input).chw().expect("validated in forward");
                let (hp, wp) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
                let mut dx = Vec::with_capacity(c * h * w);
                for ci in 0..c {
                    for hi in 0..h {
                        let src = (ci * hp + hi + pad.top) * wp + pad.left;
                        dx.extend_from_slice(&g[src..src + w]);
                    }
                }
                vec![Some(dx)]
            }
            Op::Crop { input, h, w } => {
                let (c, hi, wi) = self.value(*input).chw().expect("validated in forward");
                let mut dx = vec![0.0; c * hi * wi];
                for ci in 0..c {
                    for r in 0..*h {
                        let dst = (ci * hi + r) * wi;
                        let src = (ci * h + r) * w;
                        dx[dst..dst + w].copy_from_slice(&g[src..src + w]);
                    }
                }
                vec![Some(dx)]
            }
            Op::Custom(op) => op.backward(
                &BackwardCtx {
                    tape: self,
                    output: out,
                },
                g,
            ),
        }
    }
}

/// Result of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    names: Vec<Option<String>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Drops intermediate gradients, keeping `(parameter name, gradient)`
    /// pairs in recording order.
    pub fn into_named(self) -> Vec<(String, Vec<f64>)> {
        self.grads
            .into_iter()
            .zip(self.names)
            .filter_map(|(g, n)| Some((n?, g?)))
            .collect()
    }

    /// Adds each named leaf's gradient into the matching parameter's `grad`.
    pub fn accumulate_into(&self, params: &mut ParamStore) -> Result<()> {
        for (g, name) in self.grads.iter().zip(&self.names) {
            let (Some(g), Some(name)) = (g, name) else {
                continue;
            };
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            match &mut p.value.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }
}
