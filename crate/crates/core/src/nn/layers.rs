//! Tensors and the layer kinds of the compact kernel networks.

use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NnError> {
        if shape.len() > 5 || shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Tensor(format!(
                "shape {:?} does not hold {} values",
                shape,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![v; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Serialized layer tags.
pub mod tag {
    pub const CONV3D: u16 = 1;
    pub const CONV2D: u16 = 2;
    pub const DEPTHWISE2D: u16 = 3;
    pub const POINTWISE2D: u16 = 4;
    pub const BATCHNORM: u16 = 5;
    pub const GELU: u16 = 6;
    pub const RELU: u16 = 7;
    pub const DENSE: u16 = 8;
    pub const SOFTMAX: u16 = 9;
    pub const L1NORM: u16 = 10;
    pub const GRID_PE: u16 = 11;
    pub const FLATTEN: u16 = 12;
    pub const SIGNED_L1NORM: u16 = 13;
    pub const SELECTOR_HEAD: u16 = 14;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Cubic kernel, weight `[out, in, k, k, k]`.
    Conv3d {
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
    },
    /// Square kernel, weight `[out, in, k, k]`; `k = 1` is pointwise.
    Conv2d {
        weight: Tensor,
        bias: Option<Tensor>,
        dilation: usize,
        padding: usize,
    },
    /// Weight `[c, 1, k, k]`.
    Depthwise2d {
        weight: Tensor,
        bias: Option<Tensor>,
        dilation: usize,
        padding: usize,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        mean: Tensor,
        var: Tensor,
        eps: f32,
    },
    Gelu,
    Relu,
    Flatten,
    /// Weight `[out, in]`.
    Dense { weight: Tensor, bias: Tensor },
    Softmax,
    /// Nonnegative L1 normalization; an all-zero input becomes uniform.
    L1Norm,
    /// Sign-preserving L1 normalization; zero mass is an error.
    SignedL1Norm,
    /// Appends two coordinate channels spanning `[-1, 1]` along height and
    /// width.
    GridPe,
    /// Softmax over all but the last entry, softplus on the last.
    SelectorHead,
}

/// Side information raised during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardFlags {
    pub uniform_fallback: bool,
}

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<(), String> {
    if t.shape != shape {
        return Err(format!("{what} has shape {:?}, expected {:?}", t.shape, shape));
    }
    Ok(())
}

fn check_bias(bias: &Option<Tensor>, out: usize) -> Result<(), String> {
    match bias {
        Some(b) => expect_shape(b, &[out], "bias"),
        None => Ok(()),
    }
}

impl Layer {
    pub fn tag(&self) -> u16 {
        match self {
            Layer::Conv3d { .. } => tag::CONV3D,
            Layer::Conv2d { weight, .. } if weight.shape.get(2) == Some(&1) => tag::POINTWISE2D,
            Layer::Conv2d { .. } => tag::CONV2D,
            Layer::Depthwise2d { .. } => tag::DEPTHWISE2D,
            Layer::BatchNorm { .. } => tag::BATCHNORM,
            Layer::Gelu => tag::GELU,
            Layer::Relu => tag::RELU,
            Layer::Flatten => tag::FLATTEN,
            Layer::Dense { .. } => tag::DENSE,
            Layer::Softmax => tag::SOFTMAX,
            Layer::L1Norm => tag::L1NORM,
            Layer::SignedL1Norm => tag::SIGNED_L1NORM,
            Layer::GridPe => tag::GRID_PE,
            Layer::SelectorHead => tag::SELECTOR_HEAD,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.tag() {
            tag::CONV3D => "conv3d",
            tag::CONV2D => "conv2d",
            tag::POINTWISE2D => "pointwise2d",
            tag::DEPTHWISE2D => "depthwise2d",
            tag::BATCHNORM => "batchnorm",
            tag::GELU => "gelu",
            tag::RELU => "relu",
            tag::FLATTEN => "flatten",
            tag::DENSE => "dense",
            tag::SOFTMAX => "softmax",
            tag::L1NORM => "l1norm",
            tag::SIGNED_L1NORM => "signed_l1norm",
            tag::GRID_PE => "grid_pe",
            _ => "selector_head",
        }
    }

    pub fn attributes(&self) -> Vec<u32> {
        match self {
            Layer::Conv3d { stride, padding, .. } => vec![*stride as u32, *padding as u32],
            Layer::Conv2d { dilation, padding, .. } | Layer::Depthwise2d { dilation, padding, .. } => {
                vec![*dilation as u32, *padding as u32]
            }
            _ => Vec::new(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv3d { weight, bias, .. }
            | Layer::Conv2d { weight, bias, .. }
            | Layer::Depthwise2d { weight, bias, .. } => std::iter::once(weight).chain(bias.as_ref()).collect(),
            Layer::BatchNorm {
                gamma, beta, mean, var, ..
            } => vec![gamma, beta, mean, var],
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    /// Rebuilds a layer from its serialized parts.
    pub fn from_parts(kind: u16, attrs: &[u32], mut tensors: Vec<Tensor>) -> Result<Layer, String> {
        let want_attrs = |k: usize| -> Result<(), String> {
            if attrs.len() != k {
                return Err(format!("expected {k} attributes, found {}", attrs.len()));
            }
            Ok(())
        };
        let want_tensors = |lo: usize, hi: usize, n: usize| -> Result<(), String> {
            if n < lo || n > hi {
                return Err(format!("expected {lo}..={hi} tensors, found {n}"));
            }
            Ok(())
        };
        let plain = |layer: Layer, attrs: &[u32], n: usize| -> Result<Layer, String> {
            if !attrs.is_empty() || n != 0 {
                return Err("layer takes no attributes or tensors".into());
            }
            Ok(layer)
        };
        let n = tensors.len();
        match kind {
            tag::CONV3D | tag::CONV2D | tag::POINTWISE2D | tag::DEPTHWISE2D => {
                want_attrs(2)?;
                want_tensors(1, 2, n)?;
                let bias = if n == 2 { tensors.pop() } else { None };
                let weight = tensors.pop().unwrap();
                let (a, p) = (attrs[0] as usize, attrs[1] as usize);
                if a == 0 {
                    return Err("stride/dilation must be positive".into());
                }
                Ok(match kind {
                    tag::CONV3D => Layer::Conv3d {
                        weight,
                        bias,
                        stride: a,
                        padding: p,
                    },
                    tag::DEPTHWISE2D => Layer::Depthwise2d {
                        weight,
                        bias,
                        dilation: a,
                        padding: p,
                    },
                    _ => {
                        if kind == tag::POINTWISE2D && weight.shape.get(2) != Some(&1) {
                            return Err("pointwise kernel must be 1x1".into());
                        }
                        Layer::Conv2d {
                            weight,
                            bias,
                            dilation: a,
                            padding: p,
                        }
                    }
                })
            }
            tag::BATCHNORM => {
                want_attrs(0)?;
                want_tensors(5, 5, n)?;
                let eps_t = tensors.pop().unwrap();
                if eps_t.data.len() != 1 {
                    return Err("batchnorm eps must be a single value".into());
                }
                let var = tensors.pop().unwrap();
                let mean = tensors.pop().unwrap();
                let beta = tensors.pop().unwrap();
                let gamma = tensors.pop().unwrap();
                Ok(Layer::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps: eps_t.data[0],
                })
            }
            tag::DENSE => {
                want_attrs(0)?;
                want_tensors(2, 2, n)?;
                let bias = tensors.pop().unwrap();
                let weight = tensors.pop().unwrap();
                Ok(Layer::Dense { weight, bias })
            }
            tag::GELU => plain(Layer::Gelu, attrs, n),
            tag::RELU => plain(Layer::Relu, attrs, n),
            tag::FLATTEN => plain(Layer::Flatten, attrs, n),
            tag::SOFTMAX => plain(Layer::Softmax, attrs, n),
            tag::L1NORM => plain(Layer::L1Norm, attrs, n),
            tag::SIGNED_L1NORM => plain(Layer::SignedL1Norm, attrs, n),
            tag::GRID_PE => plain(Layer::GridPe, attrs, n),
            tag::SELECTOR_HEAD => plain(Layer::SelectorHead, attrs, n),
            other => Err(format!("unknown layer kind {other}")),
        }
    }

    /// Tensors saved for a batchnorm layer include `eps` as a final scalar.
    pub fn serialized_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.tensors().into_iter().cloned().collect();
        if let Layer::BatchNorm { eps, .. } = self {
            out.push(Tensor {
                shape: vec![1],
                data: vec![*eps],
            });
        }
        out
    }

    /// Trainable parameter count; batchnorm running statistics excluded.
    pub fn trainable_parameters(&self) -> usize {
        match self {
            Layer::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
            _ => self.tensors().iter().map(|t| t.len()).sum(),
        }
    }

    /// Validates parameters against `input` and returns the output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Conv3d {
                weight,
                bias,
                stride,
                padding,
            } => {
                if input.len() != 4 {
                    return Err(format!("conv3d expects [c,d,h,w], got {input:?}"));
                }
                let [o, i, k, k1, k2] = weight.shape[..] else {
                    return Err(format!("conv3d weight rank {}", weight.shape.len()));
                };
                if i != input[0] || k != k1 || k != k2 {
                    return Err(format!("conv3d weight {:?} vs input {:?}", weight.shape, input));
                }
                check_bias(bias, o)?;
                let mut out = vec![o];
                for &d in &input[1..] {
                    if d + 2 * padding < k {
                        return Err("conv3d input smaller than kernel".into());
                    }
                    out.push((d + 2 * padding - k) / stride + 1);
                }
                Ok(out)
            }
            Layer::Conv2d {
                weight,
                bias,
                dilation,
                padding,
            }
            | Layer::Depthwise2d {
                weight,
                bias,
                dilation,
                padding,
            } => {
                if input.len() != 3 {
                    return Err(format!("{} expects [c,h,w], got {input:?}", self.name()));
                }
                let [o, i, k, k1] = weight.shape[..] else {
                    return Err(format!("{} weight rank {}", self.name(), weight.shape.len()));
                };
                let depthwise = matches!(self, Layer::Depthwise2d { .. });
                let ok_in = if depthwise { i == 1 && o == input[0] } else { i == input[0] };
                if !ok_in || k != k1 {
                    return Err(format!("{} weight {:?} vs input {:?}", self.name(), weight.shape, input));
                }
                check_bias(bias, o)?;
                let span = dilation * (k - 1);
                let mut out = vec![o];
                for &d in &input[1..] {
                    if d + 2 * padding < span + 1 {
                        return Err("input smaller than kernel".into());
                    }
                    out.push(d + 2 * padding - span);
                }
                Ok(out)
            }
            Layer::BatchNorm {
                gamma, beta, mean, var, ..
            } => {
                let c = *input.first().ok_or("batchnorm on empty shape")?;
                for (t, what) in [(gamma, "gamma"), (beta, "beta"), (mean, "mean"), (var, "var")] {
                    expect_shape(t, &[c], what)?;
                }
                Ok(input.to_vec())
            }
            Layer::Dense { weight, bias } => {
                let len: usize = input.iter().product();
                let [o, i] = weight.shape[..] else {
                    return Err(format!("dense weight rank {}", weight.shape.len()));
                };
                if i != len {
                    return Err(format!("dense expects {i} inputs, got {len}"));
                }
                expect_shape(bias, &[o], "bias")?;
                Ok(vec![o])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::GridPe => {
                if input.len() != 3 {
                    return Err(format!("grid_pe expects [c,h,w], got {input:?}"));
                }
                Ok(vec![input[0] + 2, input[1], input[2]])
            }
            Layer::SelectorHead => {
                if input.len() != 1 || input[0] < 2 {
                    return Err(format!("selector head expects a vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            Layer::Gelu | Layer::Relu | Layer::Softmax | Layer::L1Norm | Layer::SignedL1Norm => Ok(input.to_vec()),
        }
    }

    /// Applies the layer. Shapes are assumed validated.
    pub fn forward(&self, x: Tensor, flags: &mut ForwardFlags) -> Result<Tensor, NnError> {
        Ok(match self {
            Layer::Conv3d {
                weight,
                bias,
                stride,
                padding,
            } => conv3d(&x, weight, bias.as_ref(), *stride, *padding),
            Layer::Conv2d {
                weight,
                bias,
                dilation,
                padding,
            } => conv2d(&x, weight, bias.as_ref(), *dilation, *padding, false),
            Layer::Depthwise2d {
                weight,
                bias,
                dilation,
                padding,
            } => conv2d(&x, weight, bias.as_ref(), *dilation, *padding, true),
            Layer::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let c = x.shape[0];
                let per = x.len() / c;
                let mut out = x;
                for ch in 0..c {
                    let s = gamma.data[ch] / (var.data[ch] + eps).sqrt();
                    let t = beta.data[ch] - mean.data[ch] * s;
                    for v in &mut out.data[ch * per..(ch + 1) * per] {
                        *v = *v * s + t;
                    }
                }
                out
            }
            Layer::Gelu => map(x, gelu),
            Layer::Relu => map(x, |v| v.max(0.0)),
            Layer::Flatten => Tensor {
                shape: vec![x.len()],
                data: x.data,
            },
            Layer::Dense { weight, bias } => {
                let (o, i) = (weight.shape[0], weight.shape[1]);
                let mut out = vec![0.0f32; o];
                for (r, y) in out.iter_mut().enumerate() {
                    let row = &weight.data[r * i..(r + 1) * i];
                    *y = bias.data[r] + row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f32>();
                }
                Tensor {
                    shape: vec![o],
                    data: out,
                }
            }
            Layer::Softmax => Tensor {
                shape: x.shape,
                data: softmax(&x.data),
            },
            Layer::L1Norm => {
                let mass: f64 = x.data.iter().map(|&v| v.max(0.0) as f64).sum();
                let data = if mass > 0.0 && mass.is_finite() {
                    x.data.iter().map(|&v| (v.max(0.0) as f64 / mass) as f32).collect()
                } else {
                    flags.uniform_fallback = true;
                    vec![1.0 / x.len() as f32; x.len()]
                };
                Tensor { shape: x.shape, data }
            }
            Layer::SignedL1Norm => {
                let mass: f64 = x.data.iter().map(|&v| v.abs() as f64).sum();
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(NnError::Degenerate);
                }
                Tensor {
                    data: x.data.iter().map(|&v| (v as f64 / mass) as f32).collect(),
                    shape: x.shape,
                }
            }
            Layer::GridPe => {
                let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                let mut data = x.data;
                data.reserve(2 * h * w);
                for i in 0..h {
                    data.extend(std::iter::repeat(linspace(i, h)).take(w));
                }
                for _ in 0..h {
                    data.extend((0..w).map(|j| linspace(j, w)));
                }
                Tensor {
                    shape: vec![c + 2, h, w],
                    data,
                }
            }
            Layer::SelectorHead => {
                let k = x.len() - 1;
                let mut data = softmax(&x.data[..k]);
                data.push(softplus(x.data[k]));
                Tensor { shape: x.shape, data }
            }
        })
    }
}

fn linspace(i: usize, n: usize) -> f32 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f32 / (n - 1) as f32
    }
}

fn map(mut x: Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    for v in &mut x.data {
        *v = f(*v);
    }
    x
}

pub fn gelu(v: f32) -> f32 {
    0.5 * v * (1.0 + libm::erff(v * std::f32::consts::FRAC_1_SQRT_2))
}

pub fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn softmax(x: &[f32]) -> Vec<f32> {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f64> = x.iter().map(|&v| ((v - m) as f64).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| (v / s) as f32).collect()
}

fn conv3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (c, d, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (o, k) = (w.shape[0], w.shape[2]);
    let od = (d + 2 * pad - k) / stride + 1;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; o * od * oh * ow];
    for oc in 0..o {
        let b = bias.map_or(0.0, |b| b.data[oc]);
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b;
                    for ic in 0..c {
                        for kz in 0..k {
                            let iz = (z * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let wi = (((oc * c + ic) * k + kz) * k + ky) * k + kx;
                                    let xi = ((ic * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                    acc += w.data[wi] * x.data[xi];
                                }
                            }
                        }
                    }
                    out[((oc * od + z) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor {
        shape: vec![o, od, oh, ow],
        data: out,
    }
}

fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, dil: usize, pad: usize, depthwise: bool) -> Tensor {
    let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (o, k) = (w.shape[0], w.shape[2]);
    let span = dil * (k - 1);
    let oh = h + 2 * pad - span;
    let ow = wd + 2 * pad - span;
    let mut out = vec![0.0f32; o * oh * ow];
    let in_ch = if depthwise { 1 } else { c };
    for oc in 0..o {
        let b = bias.map_or(0.0, |b| b.data[oc]);
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(b);
        for j in 0..in_ch {
            let ic = if depthwise { oc } else { j };
            let src = &x.data[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w.data[((oc * in_ch + j) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = (ky * dil) as isize - pad as isize;
                    let dx = (kx * dil) as isize - pad as isize;
                    for y in 0..oh {
                        let iy = y as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * wd..(iy as usize + 1) * wd];
                        let orow = &mut plane[y * ow..(y + 1) * ow];
                        for (xx, ov) in orow.iter_mut().enumerate() {
                            let ix = xx as isize + dx;
                            if ix >= 0 && ix < wd as isize {
                                *ov += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![o, oh, ow],
        data: out,
    }
}

/// Folds every batchnorm that directly follows a convolution or dense layer
/// into that layer's weights.
pub fn fold_batchnorm(layers: &[Layer]) -> Vec<Layer> {
    let mut out: Vec<Layer> = Vec::with_capacity(layers.len());
    for layer in layers {
        if let Layer::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps,
        } = layer
        {
            if let Some(prev) = out.last_mut() {
                let scale: Vec<f32> = (0..gamma.len())
                    .map(|c| gamma.data[c] / (var.data[c] + eps).sqrt())
                    .collect();
                let shift = |c: usize, b: f32| (b - mean.data[c]) * scale[c] + beta.data[c];
                let folded = match prev {
                    Layer::Conv3d { weight, bias, .. }
                    | Layer::Conv2d { weight, bias, .. }
                    | Layer::Depthwise2d { weight, bias, .. } => {
                        let per = weight.len() / weight.shape[0];
                        for (c, s) in scale.iter().enumerate() {
                            for v in &mut weight.data[c * per..(c + 1) * per] {
                                *v *= s;
                            }
                        }
                        let b = bias.get_or_insert_with(|| Tensor::zeros(vec![scale.len()]));
                        for (c, v) in b.data.iter_mut().enumerate() {
                            *v = shift(c, *v);
                        }
                        true
                    }
                    Layer::Dense { weight, bias } => {
                        let per = weight.shape[1];
                        for (c, s) in scale.iter().enumerate() {
                            for v in &mut weight.data[c * per..(c + 1) * per] {
                                *v *= s;
                            }
                        }
                        for (c, v) in bias.data.iter_mut().enumerate() {
                            *v = shift(c, *v);
                        }
                        true
                    }
                    _ => false,
                };
                if folded {
                    continue;
                }
            }
        }
        out.push(layer.clone());
    }
    out
}
