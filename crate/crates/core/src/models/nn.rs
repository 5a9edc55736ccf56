//! Minimal feed-forward network with hand-written reverse mode.
//!
//! Parameters live in one flat `Vec<f64>` owned by the caller; each layer
//! records its offset into it. Activations are `C x H x W` planes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    Linear {
        input: usize,
        output: usize,
        offset: usize,
    },
    Conv {
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        offset: usize,
    },
    ConvTranspose {
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        offset: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Reshape {
        dims: Dims,
    },
}

impl Layer {
    fn param_count(&self) -> usize {
        match *self {
            Layer::Linear { input, output, .. } => output * input + output,
            Layer::Conv {
                cin, cout, kernel, ..
            }
            | Layer::ConvTranspose {
                cin, cout, kernel, ..
            } => cin * cout * kernel * kernel + cout,
            _ => 0,
        }
    }

    fn offset(&self) -> Option<usize> {
        match *self {
            Layer::Linear { offset, .. } | Layer::Conv { offset, .. } | Layer::ConvTranspose { offset, .. } => {
                Some(offset)
            }
            _ => None,
        }
    }

    fn output_dims(&self, d: Dims) -> Result<Dims> {
        let bad = |why: &str| Err(Error::invalid(format!("layer {self:?} on {d:?}: {why}")));
        match *self {
            Layer::Linear { input, output, .. } => {
                if d.len() != input {
                    return bad("input size");
                }
                Ok(Dims::new(output, 1, 1))
            }
            Layer::Conv {
                cin,
                cout,
                kernel,
                stride,
                pad,
                ..
            } => {
                if d.c != cin || d.h + 2 * pad < kernel || d.w + 2 * pad < kernel || stride == 0 {
                    return bad("geometry");
                }
                Ok(Dims::new(
                    cout,
                    (d.h + 2 * pad - kernel) / stride + 1,
                    (d.w + 2 * pad - kernel) / stride + 1,
                ))
            }
            Layer::ConvTranspose {
                cin,
                cout,
                kernel,
                stride,
                pad,
                ..
            } => {
                if d.c != cin || d.h == 0 || (d.h - 1) * stride + kernel < 2 * pad + 1 || stride == 0 {
                    return bad("geometry");
                }
                Ok(Dims::new(
                    cout,
                    (d.h - 1) * stride + kernel - 2 * pad,
                    (d.w - 1) * stride + kernel - 2 * pad,
                ))
            }
            Layer::Reshape { dims } => {
                if dims.len() != d.len() {
                    return bad("reshape size");
                }
                Ok(dims)
            }
            _ => Ok(d),
        }
    }
}

/// Indices `t in 0..n` with `0 <= t * stride + shift < bound`.
#[inline]
fn valid_range(n: usize, bound: usize, stride: usize, shift: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
    let hi_excl = if (bound as isize) - shift <= 0 {
        0
    } else {
        ((bound as isize - shift - 1) / s + 1).min(n as isize)
    };
    let lo = lo.min(n as isize) as usize;
    (lo, (hi_excl.max(lo as isize)) as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    input: Dims,
    layers: Vec<Layer>,
    dims: Vec<Dims>,
    num_params: usize,
}

impl Sequential {
    pub fn new(input: Dims) -> Self {
        Self {
            input,
            layers: Vec::new(),
            dims: vec![input],
            num_params: 0,
        }
    }

    /// Rebuild from a stored layer list, re-validating shapes and offsets.
    pub fn from_layers(input: Dims, layers: Vec<Layer>) -> Result<Self> {
        let mut net = Self::new(input);
        for layer in layers {
            if let Some(off) = layer.offset() {
                if off != net.num_params {
                    return Err(Error::invalid(format!(
                        "layer offset {off} does not follow parameter count {}",
                        net.num_params
                    )));
                }
            }
            net.push(layer)?;
        }
        Ok(net)
    }

    fn push(&mut self, layer: Layer) -> Result<()> {
        let out = layer.output_dims(self.output_dims())?;
        self.num_params += layer.param_count();
        self.layers.push(layer);
        self.dims.push(out);
        Ok(())
    }

    pub fn linear(&mut self, output: usize) -> Result<&mut Self> {
        let input = self.output_dims().len();
        let offset = self.num_params;
        self.push(Layer::Linear { input, output, offset })?;
        Ok(self)
    }

    pub fn conv(&mut self, cout: usize, kernel: usize, stride: usize, pad: usize) -> Result<&mut Self> {
        let cin = self.output_dims().c;
        let offset = self.num_params;
        self.push(Layer::Conv {
            cin,
            cout,
            kernel,
            stride,
            pad,
            offset,
        })?;
        Ok(self)
    }

    pub fn conv_transpose(&mut self, cout: usize, kernel: usize, stride: usize, pad: usize) -> Result<&mut Self> {
        let cin = self.output_dims().c;
        let offset = self.num_params;
        self.push(Layer::ConvTranspose {
            cin,
            cout,
            kernel,
            stride,
            pad,
            offset,
        })?;
        Ok(self)
    }

    pub fn activation(&mut self, layer: Layer) -> Result<&mut Self> {
        self.push(layer)?;
        Ok(self)
    }

    pub fn reshape(&mut self, dims: Dims) -> Result<&mut Self> {
        self.push(Layer::Reshape { dims })?;
        Ok(self)
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn output_dims(&self) -> Dims {
        *self.dims.last().expect("dims always holds the input")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Weights drawn from `N(0, gain^2 / fan_in)`, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, gain: f64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params];
        for layer in &self.layers {
            let (offset, count, fan_in) = match *layer {
                Layer::Linear { input, output, offset } => (offset, input * output, input),
                Layer::Conv {
                    cin,
                    cout,
                    kernel,
                    offset,
                    ..
                } => (offset, cin * cout * kernel * kernel, cin * kernel * kernel),
                Layer::ConvTranspose {
                    cin,
                    cout,
                    kernel,
                    stride,
                    offset,
                    ..
                } => (
                    offset,
                    cin * cout * kernel * kernel,
                    (cin * kernel * kernel / (stride * stride)).max(1),
                ),
                _ => continue,
            };
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[offset..offset + count] {
                *p = normal.sample(rng);
            }
        }
        params
    }

    /// Returns every activation: `acts[0]` is the input, `acts[i + 1]` the
    /// output of layer `i`.
    pub fn forward(&self, params: &[f64], input: Vec<f64>) -> Vec<Vec<f64>> {
        debug_assert_eq!(input.len(), self.input.len());
        debug_assert_eq!(params.len(), self.num_params);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &acts[i];
            let (din, dout) = (self.dims[i], self.dims[i + 1]);
            let y = match *layer {
                Layer::Linear { input, output, offset } => {
                    let w = &params[offset..offset + input * output];
                    let b = &params[offset + input * output..offset + input * output + output];
                    (0..output)
                        .map(|o| b[o] + dot(&w[o * input..(o + 1) * input], x))
                        .collect()
                }
                Layer::Conv {
                    cin,
                    cout,
                    kernel,
                    stride,
                    pad,
                    offset,
                } => conv_forward(params, offset, x, din, dout, cin, cout, kernel, stride, pad),
                Layer::ConvTranspose {
                    cin,
                    cout,
                    kernel,
                    stride,
                    pad,
                    offset,
                } => conv_t_forward(params, offset, x, din, dout, cin, cout, kernel, stride, pad),
                Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Layer::LeakyRelu { slope } => x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
                Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
                Layer::Reshape { .. } => x.clone(),
            };
            acts.push(y);
        }
        acts
    }

    /// Reverse pass. Accumulates into `param_grads` when given and returns
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        grad_out: Vec<f64>,
        mut param_grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[i];
            let (din, dout) = (self.dims[i], self.dims[i + 1]);
            g = match *layer {
                Layer::Linear { input, output, offset } => {
                    let w = &params[offset..offset + input * output];
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (gw, rest) = pg[offset..offset + input * output + output].split_at_mut(input * output);
                        for o in 0..output {
                            axpy(g[o], x, &mut gw[o * input..(o + 1) * input]);
                            rest[o] += g[o];
                        }
                    }
                    let mut gx = vec![0.0; input];
                    for o in 0..output {
                        axpy(g[o], &w[o * input..(o + 1) * input], &mut gx);
                    }
                    gx
                }
                Layer::Conv {
                    cin,
                    cout,
                    kernel,
                    stride,
                    pad,
                    offset,
                } => conv_backward(
                    params,
                    offset,
                    x,
                    &g,
                    din,
                    dout,
                    (cin, cout, kernel, stride, pad),
                    param_grads.as_deref_mut(),
                ),
                Layer::ConvTranspose {
                    cin,
                    cout,
                    kernel,
                    stride,
                    pad,
                    offset,
                } => conv_t_backward(
                    params,
                    offset,
                    x,
                    &g,
                    din,
                    dout,
                    (cin, cout, kernel, stride, pad),
                    param_grads.as_deref_mut(),
                ),
                Layer::Relu => g.iter().zip(x).map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 }).collect(),
                Layer::LeakyRelu { slope } => g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { slope * gi })
                    .collect(),
                Layer::Tanh => {
                    let y = &acts[i + 1];
                    g.iter().zip(y).map(|(&gi, &yi)| gi * (1.0 - yi * yi)).collect()
                }
                Layer::Reshape { .. } => g,
            };
        }
        g
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    params: &[f64],
    offset: usize,
    x: &[f64],
    din: Dims,
    dout: Dims,
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let wlen = cin * cout * k * k;
    let (w, b) = (&params[offset..offset + wlen], &params[offset + wlen..offset + wlen + cout]);
    let plane = dout.h * dout.w;
    let mut y = vec![0.0; dout.len()];
    for co in 0..cout {
        let out = &mut y[co * plane..(co + 1) * plane];
        out.fill(b[co]);
        for ci in 0..cin {
            let inp = &x[ci * din.h * din.w..(ci + 1) * din.h * din.w];
            for ky in 0..k {
                let (oy0, oy1) = valid_range(dout.h, din.h, s, ky as isize - p as isize);
                for kx in 0..k {
                    let wv = w[((co * cin + ci) * k + ky) * k + kx];
                    let (ox0, ox1) = valid_range(dout.w, din.w, s, kx as isize - p as isize);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let orow = &mut out[oy * dout.w..(oy + 1) * dout.w];
                        let irow = &inp[iy * din.w..(iy + 1) * din.w];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * irow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    params: &[f64],
    offset: usize,
    x: &[f64],
    g: &[f64],
    din: Dims,
    dout: Dims,
    (cin, cout, k, s, p): (usize, usize, usize, usize, usize),
    mut param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let wlen = cin * cout * k * k;
    let w = &params[offset..offset + wlen];
    let (iplane, oplane) = (din.h * din.w, dout.h * dout.w);
    let mut gx = vec![0.0; din.len()];
    for co in 0..cout {
        let gout = &g[co * oplane..(co + 1) * oplane];
        if let Some(pg) = param_grads.as_deref_mut() {
            pg[offset + wlen + co] += gout.iter().sum::<f64>();
        }
        for ci in 0..cin {
            let inp = &x[ci * iplane..(ci + 1) * iplane];
            for ky in 0..k {
                let (oy0, oy1) = valid_range(dout.h, din.h, s, ky as isize - p as isize);
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = w[widx];
                    let (ox0, ox1) = valid_range(dout.w, din.w, s, kx as isize - p as isize);
                    let mut gw = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let grow = &gout[oy * dout.w..(oy + 1) * dout.w];
                        let gxrow = &mut gx[ci * iplane + iy * din.w..ci * iplane + (iy + 1) * din.w];
                        let irow = &inp[iy * din.w..(iy + 1) * din.w];
                        for ox in ox0..ox1 {
                            let ix = ox * s + kx - p;
                            gxrow[ix] += wv * grow[ox];
                            gw += irow[ix] * grow[ox];
                        }
                    }
                    if let Some(pg) = param_grads.as_deref_mut() {
                        pg[offset + widx] += gw;
                    }
                }
            }
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn conv_t_forward(
    params: &[f64],
    offset: usize,
    x: &[f64],
    din: Dims,
    dout: Dims,
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let wlen = cin * cout * k * k;
    let (w, b) = (&params[offset..offset + wlen], &params[offset + wlen..offset + wlen + cout]);
    let (iplane, oplane) = (din.h * din.w, dout.h * dout.w);
    let mut y = vec![0.0; dout.len()];
    for co in 0..cout {
        y[co * oplane..(co + 1) * oplane].fill(b[co]);
    }
    for ci in 0..cin {
        let inp = &x[ci * iplane..(ci + 1) * iplane];
        for co in 0..cout {
            let out = &mut y[co * oplane..(co + 1) * oplane];
            for ky in 0..k {
                let (iy0, iy1) = valid_range(din.h, dout.h, s, ky as isize - p as isize);
                for kx in 0..k {
                    let wv = w[((ci * cout + co) * k + ky) * k + kx];
                    let (ix0, ix1) = valid_range(din.w, dout.w, s, kx as isize - p as isize);
                    for iy in iy0..iy1 {
                        let oy = iy * s + ky - p;
                        let irow = &inp[iy * din.w..(iy + 1) * din.w];
                        let orow = &mut out[oy * dout.w..(oy + 1) * dout.w];
                        for ix in ix0..ix1 {
                            orow[ix * s + kx - p] += wv * irow[ix];
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_t_backward(
    params: &[f64],
    offset: usize,
    x: &[f64],
    g: &[f64],
    din: Dims,
    dout: Dims,
    (cin, cout, k, s, p): (usize, usize, usize, usize, usize),
    mut param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let wlen = cin * cout * k * k;
    let w = &params[offset..offset + wlen];
    let (iplane, oplane) = (din.h * din.w, dout.h * dout.w);
    if let Some(pg) = param_grads.as_deref_mut() {
        for co in 0..cout {
            pg[offset + wlen + co] += g[co * oplane..(co + 1) * oplane].iter().sum::<f64>();
        }
    }
    let mut gx = vec![0.0; din.len()];
    for ci in 0..cin {
        let inp = &x[ci * iplane..(ci + 1) * iplane];
        for co in 0..cout {
            let gout = &g[co * oplane..(co + 1) * oplane];
            for ky in 0..k {
                let (iy0, iy1) = valid_range(din.h, dout.h, s, ky as isize - p as isize);
                for kx in 0..k {
                    let widx = ((ci * cout + co) * k + ky) * k + kx;
                    let wv = w[widx];
                    let (ix0, ix1) = valid_range(din.w, dout.w, s, kx as isize - p as isize);
                    let mut gw = 0.0;
                    for iy in iy0..iy1 {
                        let oy = iy * s + ky - p;
                        let grow = &gout[oy * dout.w..(oy + 1) * dout.w];
                        let irow = &inp[iy * din.w..(iy + 1) * din.w];
                        let gxrow = &mut gx[ci * iplane + iy * din.w..ci * iplane + (iy + 1) * din.w];
                        for ix in ix0..ix1 {
                            let gv = grow[ix * s + kx - p];
                            gxrow[ix] += wv * gv;
                            gw += irow[ix] * gv;
                        }
                    }
                    if let Some(pg) = param_grads.as_deref_mut() {
                        pg[offset + widx] += gw;
                    }
                }
            }
        }
    }
    gx
}
