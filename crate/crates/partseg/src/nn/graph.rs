//! A small reverse-mode differentiable operator graph.
//!
//! Nodes are stored in topological order; forward keeps every activation so
//! backward can accumulate gradients into the named parameters and into the
//! graph inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param {
            name,
            shape,
            data: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Graph input slot.
    Input { slot: usize },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    Sigmoid,
    /// Nearest-neighbor 2x upsampling.
    Upsample2x,
    /// Channel concatenation of the two node inputs.
    Concat,
    /// Elementwise add of the two node inputs.
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorGraph {
    pub nodes: Vec<Node>,
    pub params: Vec<Param>,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

/// Forward activations, one per node.
pub struct Activations(pub Vec<Tensor>);

impl OperatorGraph {
    pub fn new() -> Self {
        OperatorGraph {
            nodes: Vec::new(),
            params: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, name: &str) -> usize {
        let slot = self.inputs.len();
        let id = self.push(name, Op::Input { slot }, vec![]);
        self.inputs.push(id);
        id
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_conv(
        &mut self,
        name: &str,
        input: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> usize {
        let weight = self.params.len();
        self.params.push(Param::new(
            format!("{}.weight", name),
            vec![out_ch, in_ch, kernel, kernel],
        ));
        let bias = self.params.len();
        self.params
            .push(Param::new(format!("{}.bias", name), vec![out_ch]));
        self.push(
            name,
            Op::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                weight,
                bias,
            },
            vec![input],
        )
    }

    pub fn add_relu(&mut self, name: &str, input: usize) -> usize {
        self.push(name, Op::Relu, vec![input])
    }

    pub fn add_sigmoid(&mut self, name: &str, input: usize) -> usize {
        self.push(name, Op::Sigmoid, vec![input])
    }

    pub fn add_upsample2x(&mut self, name: &str, input: usize) -> usize {
        self.push(name, Op::Upsample2x, vec![input])
    }

    pub fn add_concat(&mut self, name: &str, a: usize, b: usize) -> usize {
        self.push(name, Op::Concat, vec![a, b])
    }

    pub fn add_add(&mut self, name: &str, a: usize, b: usize) -> usize {
        self.push(name, Op::Add, vec![a, b])
    }

    pub fn set_output(&mut self, id: usize) {
        self.outputs.push(id);
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
        });
        self.nodes.len() - 1
    }

    /// He-uniform conv kernels, zero biases.
    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        for node in &self.nodes {
            if let Op::Conv2d {
                in_ch,
                kernel,
                weight,
                ..
            } = node.op
            {
                let fan_in = (in_ch * kernel * kernel) as f64;
                let limit = (6.0 / fan_in).sqrt();
                for v in self.params[weight].data.iter_mut() {
                    *v = rng.gen_range(-limit..=limit);
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// A stable hash over the operator sequence and parameter shapes.
    pub fn architecture_hash(&self) -> u64 {
        let mut desc = String::new();
        for node in &self.nodes {
            desc.push_str(&format!("{}:{:?};", node.name, node.op));
        }
        for p in &self.params {
            desc.push_str(&format!("{}{:?};", p.name, p.shape));
        }
        crate::util::fnv1a64(desc.as_bytes())
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Activations> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::shape(format!(
                "graph expects {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let out = match &node.op {
                Op::Input { slot } => inputs[*slot].clone(),
                Op::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    weight,
                    bias,
                } => {
                    let x = &acts[node.inputs[0]];
                    if x.c != *in_ch {
                        return Err(Error::shape(format!(
                            "operator {}: expected {} input channels, got {}",
                            node.name, in_ch, x.c
                        )));
                    }
                    conv2d_forward(
                        x,
                        &self.params[*weight],
                        &self.params[*bias],
                        *out_ch,
                        *kernel,
                        *stride,
                        *pad,
                    )?
                }
                Op::Relu => {
                    let x = &acts[node.inputs[0]];
                    let mut out = x.clone();
                    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    out
                }
                Op::Sigmoid => {
                    let x = &acts[node.inputs[0]];
                    let mut out = x.clone();
                    out.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
                    out
                }
                Op::Upsample2x => {
                    let x = &acts[node.inputs[0]];
                    let mut out = Tensor::zeros(x.n, x.c, x.h * 2, x.w * 2);
                    for n in 0..x.n {
                        for c in 0..x.c {
                            for h in 0..out.h {
                                for w in 0..out.w {
                                    let v = x.get(n, c, h / 2, w / 2);
                                    let i = out.idx(n, c, h, w);
                                    out.data[i] = v;
                                }
                            }
                        }
                    }
                    out
                }
                Op::Concat => {
                    let a = &acts[node.inputs[0]];
                    let b = &acts[node.inputs[1]];
                    if a.n != b.n || a.h != b.h || a.w != b.w {
                        return Err(Error::shape(format!(
                            "operator {}: concat spatial mismatch",
                            node.name
                        )));
                    }
                    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
                    for n in 0..a.n {
                        for c in 0..out.c {
                            let src = if c < a.c { a } else { b };
                            let sc = if c < a.c { c } else { c - a.c };
                            for h in 0..a.h {
                                for w in 0..a.w {
                                    let i = out.idx(n, c, h, w);
                                    out.data[i] = src.get(n, sc, h, w);
                                }
                            }
                        }
                    }
                    out
                }
                Op::Add => {
                    let a = &acts[node.inputs[0]];
                    let b = &acts[node.inputs[1]];
                    if !a.same_shape(b) {
                        return Err(Error::shape(format!(
                            "operator {}: add shape mismatch",
                            node.name
                        )));
                    }
                    let mut out = a.clone();
                    out.data.iter_mut().zip(&b.data).for_each(|(o, v)| *o += v);
                    out
                }
            };
            acts.push(out);
        }
        Ok(Activations(acts))
    }

    /// Backpropagates `output_grads` (one per graph output), accumulating
    /// parameter gradients and returning gradients w.r.t. the graph inputs.
    pub fn backward(
        &mut self,
        acts: &Activations,
        output_grads: &[Tensor],
    ) -> Result<Vec<Tensor>> {
        if output_grads.len() != self.outputs.len() {
            return Err(Error::shape("backward: wrong number of output grads"));
        }
        let mut grads: Vec<Tensor> = acts
            .0
            .iter()
            .map(|t| Tensor::zeros(t.n, t.c, t.h, t.w))
            .collect();
        for (out_id, g) in self.outputs.iter().zip(output_grads) {
            if !grads[*out_id].same_shape(g) {
                return Err(Error::shape("backward: output grad shape mismatch"));
            }
            grads[*out_id]
                .data
                .iter_mut()
                .zip(&g.data)
                .for_each(|(a, b)| *a += b);
        }
        for id in (0..self.nodes.len()).rev() {
            let node = self.nodes[id].clone();
            let gout = std::mem::replace(&mut grads[id], Tensor::zeros(0, 0, 0, 0));
            match &node.op {
                Op::Input { .. } => {
                    grads[id] = gout;
                }
                Op::Conv2d {
                    kernel,
                    stride,
                    pad,
                    weight,
                    bias,
                    ..
                } => {
                    let x = &acts.0[node.inputs[0]];
                    let gin = conv2d_backward(
                        x,
                        &gout,
                        &mut self.params,
                        *weight,
                        *bias,
                        *kernel,
                        *stride,
                        *pad,
                    );
                    accumulate(&mut grads[node.inputs[0]], &gin);
                }
                Op::Relu => {
                    let x = &acts.0[node.inputs[0]];
                    let mut gin = gout;
                    gin.data
                        .iter_mut()
                        .zip(&x.data)
                        .for_each(|(g, &v)| *g *= if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads[node.inputs[0]], &gin);
                }
                Op::Sigmoid => {
                    let y = &acts.0[id];
                    let mut gin = gout;
                    gin.data
                        .iter_mut()
                        .zip(&y.data)
                        .for_each(|(g, &s)| *g *= s * (1.0 - s));
                    accumulate(&mut grads[node.inputs[0]], &gin);
                }
                Op::Upsample2x => {
                    let x = &acts.0[node.inputs[0]];
                    let mut gin = Tensor::zeros(x.n, x.c, x.h, x.w);
                    for n in 0..gout.n {
                        for c in 0..gout.c {
                            for h in 0..gout.h {
                                for w in 0..gout.w {
                                    gin.add_at(n, c, h / 2, w / 2, gout.get(n, c, h, w));
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], &gin);
                }
                Op::Concat => {
                    let a = &acts.0[node.inputs[0]];
                    let b = &acts.0[node.inputs[1]];
                    let mut ga = Tensor::zeros(a.n, a.c, a.h, a.w);
                    let mut gb = Tensor::zeros(b.n, b.c, b.h, b.w);
                    for n in 0..gout.n {
                        for c in 0..gout.c {
                            for h in 0..gout.h {
                                for w in 0..gout.w {
                                    let v = gout.get(n, c, h, w);
                                    if c < a.c {
                                        ga.add_at(n, c, h, w, v);
                                    } else {
                                        gb.add_at(n, c - a.c, h, w, v);
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], &ga);
                    accumulate(&mut grads[node.inputs[1]], &gb);
                }
                Op::Add => {
                    accumulate(&mut grads[node.inputs[0]], &gout);
                    accumulate(&mut grads[node.inputs[1]], &gout);
                }
            }
        }
        Ok(self
            .inputs
            .iter()
            .map(|&id| std::mem::replace(&mut grads[id], Tensor::zeros(0, 0, 0, 0)))
            .collect())
    }
}

impl Default for OperatorGraph {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    dst.data.iter_mut().zip(&src.data).for_each(|(a, b)| *a += b);
}

/// Inclusive output-coordinate range for which `o*stride + k_off - pad`
/// lands inside `[0, len_in)`; None when no coordinate is valid.
fn tap_range(
    len_in: usize,
    len_out: usize,
    stride: usize,
    k_off: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    if len_in + pad <= k_off {
        return None;
    }
    let hi = ((len_in - 1 + pad - k_off) / stride).min(len_out.checked_sub(1)?);
    if lo > hi {
        return None;
    }
    Some((lo, hi))
}

fn conv2d_forward(
    x: &Tensor,
    weight: &Param,
    bias: &Param,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    if x.h + 2 * pad < kernel || x.w + 2 * pad < kernel {
        return Err(Error::shape("conv2d: input smaller than kernel"));
    }
    let oh = (x.h + 2 * pad - kernel) / stride + 1;
    let ow = (x.w + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros(x.n, out_ch, oh, ow);
    let k2 = kernel * kernel;
    let xs = &x.data;
    let ws = &weight.data;
    for n in 0..x.n {
        for oc in 0..out_ch {
            let obase = (n * out_ch + oc) * oh * ow;
            out.data[obase..obase + oh * ow].fill(bias.data[oc]);
            for ic in 0..x.c {
                let xbase = (n * x.c + ic) * x.h * x.w;
                let wbase = (oc * x.c + ic) * k2;
                for kh in 0..kernel {
                    let Some((hlo, hhi)) = tap_range(x.h, oh, stride, kh, pad) else {
                        continue;
                    };
                    for kw in 0..kernel {
                        let wv = ws[wbase + kh * kernel + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let Some((wlo, whi)) = tap_range(x.w, ow, stride, kw, pad) else {
                            continue;
                        };
                        for h in hlo..=hhi {
                            let ih = h * stride + kh - pad;
                            let orow = obase + h * ow;
                            if stride == 1 {
                                // iw = w + kw - pad; tap_range keeps it in bounds.
                                let off = wlo + kw - pad;
                                let xslice = &xs[xbase + ih * x.w + off..];
                                let oslice = &mut out.data[orow + wlo..=orow + whi];
                                for (o, xv) in oslice.iter_mut().zip(xslice) {
                                    *o += xv * wv;
                                }
                            } else {
                                for w in wlo..=whi {
                                    let iw = w * stride + kw - pad;
                                    out.data[orow + w] += xs[xbase + ih * x.w + iw] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &Tensor,
    gout: &Tensor,
    params: &mut [Param],
    weight: usize,
    bias: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let mut gin = Tensor::zeros(x.n, x.c, x.h, x.w);
    let k2 = kernel * kernel;
    let (oh, ow) = (gout.h, gout.w);
    let wdata = params[weight].data.clone();
    let xs = &x.data;
    let gs = &gout.data;
    for n in 0..gout.n {
        for oc in 0..gout.c {
            let obase = (n * gout.c + oc) * oh * ow;
            params[bias].grad[oc] += gs[obase..obase + oh * ow].iter().sum::<f64>();
            for ic in 0..x.c {
                let xbase = (n * x.c + ic) * x.h * x.w;
                let wbase = (oc * x.c + ic) * k2;
                for kh in 0..kernel {
                    let Some((hlo, hhi)) = tap_range(x.h, oh, stride, kh, pad) else {
                        continue;
                    };
                    for kw in 0..kernel {
                        let Some((wlo, whi)) = tap_range(x.w, ow, stride, kw, pad) else {
                            continue;
                        };
                        let wi = wbase + kh * kernel + kw;
                        let wv = wdata[wi];
                        let mut wg = 0.0;
                        for h in hlo..=hhi {
                            let ih = h * stride + kh - pad;
                            let orow = obase + h * ow;
                            let xoff = xbase + ih * x.w;
                            for w in wlo..=whi {
                                let iw = w * stride + kw - pad;
                                let g = gs[orow + w];
                                wg += g * xs[xoff + iw];
                                gin.data[xoff + iw] += g * wv;
                            }
                        }
                        params[weight].grad[wi] += wg;
                    }
                }
            }
        }
    }
    gin
}
