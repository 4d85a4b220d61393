//! Per-module forward passes and the backward step for derivative stacks.
//!
//! Feature maps are stored flat, channel-major then row-major, so flatten
//! and unflatten leave the memory layout untouched.

use crate::activation::{Activation, ActivationTables};
use crate::chain::{
    build_mixed_transform, build_unmixed_transform, propagate_mixed, propagate_unmixed, DerivStack,
    LocalJet, MixedDerivStack,
};
use crate::error::{Error, Result};
use crate::faa_di_bruno::FaaDiBrunoCoeffs;
use crate::tensor::{conv2d, conv_output_len, dilate_and_pad, hadamard_power, rot180, Matrix};

/// Shape of the value flowing between modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Map {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        let shape = match *dims {
            [n] => Shape::Flat(n),
            [c, h, w] => Shape::Map {
                channels: c,
                height: h,
                width: w,
            },
            _ => {
                return Err(Error::shape(format!(
                    "shape must have 1 or 3 dimensions, got {dims:?}"
                )))
            }
        };
        if shape.is_empty() {
            return Err(Error::shape(format!("shape {dims:?} has no elements")));
        }
        Ok(shape)
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(n) => vec![n],
            Shape::Map {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    fn map(&self) -> Result<(usize, usize, usize)> {
        match *self {
            Shape::Map {
                channels,
                height,
                width,
            } => Ok((channels, height, width)),
            Shape::Flat(n) => Err(Error::shape(format!(
                "expected a (channels, height, width) feature map, got a flat vector of {n}"
            ))),
        }
    }
}

/// Fully connected layer `z = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bias".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }
}

/// Multi-channel 2-D convolution (cross-correlation). The kernel bank is
/// stored `(out_channels, in_channels, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        weight: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::Dimension(
                "convolution sizes must be positive".into(),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Dimension("stride must be positive".into()));
        }
        if padding.0 >= kernel.0 || padding.1 >= kernel.1 {
            return Err(Error::Dimension(format!(
                "padding {padding:?} must be smaller than kernel {kernel:?}"
            )));
        }
        let expect = out_channels * in_channels * kernel.0 * kernel.1;
        if weight.len() != expect {
            return Err(Error::shape(format!(
                "kernel bank has {} values, expected {expect} ({out_channels}x{in_channels}x{}x{})",
                weight.len(),
                kernel.0,
                kernel.1
            )));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel bank".into()));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::shape(format!(
                    "conv bias has {} entries for {out_channels} output channels",
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("conv bias".into()));
            }
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        })
    }

    /// Kernel `(out_channel, in_channel)` as a matrix.
    pub fn kernel_matrix(&self, co: usize, ci: usize) -> Matrix {
        let (kh, kw) = self.kernel;
        let start = (co * self.in_channels + ci) * kh * kw;
        Matrix::from_raw(kh, kw, self.weight[start..start + kh * kw].to_vec())
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (c, h, w) = input.map()?;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok(Shape::Map {
            channels: self.out_channels,
            height: conv_output_len(h, self.kernel.0, self.stride.0, self.padding.0)?,
            width: conv_output_len(w, self.kernel.1, self.stride.1, self.padding.1)?,
        })
    }

    /// Cross-correlation without bias; channels summed input-channel-major.
    fn correlate(&self, input: &[f64], shape: Shape) -> Result<Vec<f64>> {
        let (_, h, w) = shape.map()?;
        let planes: Vec<Matrix> = input
            .chunks(h * w)
            .map(|p| Matrix::from_raw(h, w, p.to_vec()))
            .collect();
        let mut out = Vec::new();
        for co in 0..self.out_channels {
            let mut acc: Option<Matrix> = None;
            for (ci, plane) in planes.iter().enumerate() {
                let r = conv2d(
                    plane,
                    &self.kernel_matrix(co, ci),
                    self.stride,
                    self.padding,
                )?;
                acc = Some(match acc {
                    Some(a) => a.add(&r)?,
                    None => r,
                });
            }
            out.extend(acc.expect("at least one input channel").into_data());
        }
        Ok(out)
    }

    fn forward(&self, input: &[f64], shape: Shape) -> Result<Vec<f64>> {
        let mut out = self.correlate(input, shape)?;
        if let Some(bias) = &self.bias {
            let plane = out.len() / self.out_channels;
            for (co, b) in bias.iter().enumerate() {
                for v in &mut out[co * plane..(co + 1) * plane] {
                    *v += b;
                }
            }
        }
        Ok(out)
    }

    /// Dense matrix of the convolution's linear part, `out_len × in_len`.
    pub fn unrolled(&self, input: Shape) -> Result<Matrix> {
        let (_, h, w) = input.map()?;
        let out = self.output_shape(input)?;
        let (co_n, oh, ow) = out.map()?;
        let (kh, kw) = self.kernel;
        let mut u = Matrix::zeros(out.len(), input.len());
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (co * oh + oy) * ow + ox;
                    for ci in 0..self.in_channels {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y =
                                    (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
                                let x =
                                    (ox * self.stride.1 + kx) as isize - self.padding.1 as isize;
                                if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                                    continue;
                                }
                                let col = (ci * h + y as usize) * w + x as usize;
                                let kv =
                                    self.weight[((co * self.in_channels + ci) * kh + ky) * kw + kx];
                                u.set(row, col, u.get(row, col) + kv);
                            }
                        }
                    }
                }
            }
        }
        Ok(u)
    }
}

/// Pooling window geometry (no padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl Pool {
    pub fn new(kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Dimension(
                "pool kernel and stride must be positive".into(),
            ));
        }
        Ok(Self { kernel, stride })
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (c, h, w) = input.map()?;
        Ok(Shape::Map {
            channels: c,
            height: conv_output_len(h, self.kernel.0, self.stride.0, 0)?,
            width: conv_output_len(w, self.kernel.1, self.stride.1, 0)?,
        })
    }

    /// Windows overlap when the stride is smaller than the kernel.
    pub fn overlaps(&self) -> bool {
        self.stride.0 < self.kernel.0 || self.stride.1 < self.kernel.1
    }

    /// Flat input indices of every output window, in row-major window order.
    pub(crate) fn windows(&self, input: Shape) -> Result<Vec<Vec<usize>>> {
        let (c, h, w) = input.map()?;
        let (_, oh, ow) = self.output_shape(input)?.map()?;
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut win = Vec::with_capacity(self.kernel.0 * self.kernel.1);
                    for ky in 0..self.kernel.0 {
                        for kx in 0..self.kernel.1 {
                            let y = oy * self.stride.0 + ky;
                            let x = ox * self.stride.1 + kx;
                            win.push((ch * h + y) * w + x);
                        }
                    }
                    out.push(win);
                }
            }
        }
        Ok(out)
    }

    /// The convolution that computes this average pool: one averaging
    /// kernel per channel on the diagonal of the kernel bank.
    pub fn equivalent_conv(&self, channels: usize) -> Conv {
        let (kh, kw) = self.kernel;
        let area = (kh * kw) as f64;
        let mut weight = vec![0.0; channels * channels * kh * kw];
        for c in 0..channels {
            let start = (c * channels + c) * kh * kw;
            weight[start..start + kh * kw].fill(1.0 / area);
        }
        Conv {
            in_channels: channels,
            out_channels: channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: (0, 0),
            weight,
            bias: None,
        }
    }
}

/// One network module.
#[derive(Debug, Clone, PartialEq)]
pub enum ModuleSpec {
    FullyConnected(Dense),
    Conv2d(Conv),
    Activation(Activation),
    MaxPool(Pool),
    AvgPool(Pool),
    Flatten,
    Unflatten(Shape),
}

impl ModuleSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModuleSpec::FullyConnected(_) => "fully_connected",
            ModuleSpec::Conv2d(_) => "conv2d",
            ModuleSpec::Activation(_) => "activation",
            ModuleSpec::MaxPool(_) => "max_pool",
            ModuleSpec::AvgPool(_) => "avg_pool",
            ModuleSpec::Flatten => "flatten",
            ModuleSpec::Unflatten(_) => "unflatten",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            ModuleSpec::FullyConnected(d) => match input {
                Shape::Flat(n) if n == d.in_features() => Ok(Shape::Flat(d.out_features())),
                other => Err(Error::shape(format!(
                    "fully connected layer expects a flat input of {}, got {:?}",
                    d.in_features(),
                    other.dims()
                ))),
            },
            ModuleSpec::Conv2d(c) => c.output_shape(input),
            ModuleSpec::Activation(_) => Ok(input),
            ModuleSpec::MaxPool(p) | ModuleSpec::AvgPool(p) => p.output_shape(input),
            ModuleSpec::Flatten => Ok(Shape::Flat(input.len())),
            ModuleSpec::Unflatten(target) => {
                if target.len() != input.len() {
                    return Err(Error::shape(format!(
                        "cannot unflatten {} values into {:?}",
                        input.len(),
                        target.dims()
                    )));
                }
                Ok(*target)
            }
        }
    }

    /// Forward pass. For max pooling the second value holds the argmax input
    /// index of every output.
    pub fn forward(&self, input: &[f64], shape: Shape) -> Result<(Vec<f64>, Option<Vec<usize>>)> {
        let out = match self {
            ModuleSpec::FullyConnected(d) => {
                let mut z = d.weight.matvec(input)?;
                for (v, b) in z.iter_mut().zip(&d.bias) {
                    *v += b;
                }
                z
            }
            ModuleSpec::Conv2d(c) => c.forward(input, shape)?,
            ModuleSpec::Activation(a) => input.iter().map(|&x| a.apply(x)).collect(),
            ModuleSpec::MaxPool(p) => {
                let mut vals = Vec::new();
                let mut idx = Vec::new();
                for win in p.windows(shape)? {
                    // strict comparison keeps the lowest linear index on ties
                    let mut best = win[0];
                    for &i in &win[1..] {
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                    vals.push(input[best]);
                    idx.push(best);
                }
                return Ok((vals, Some(idx)));
            }
            ModuleSpec::AvgPool(p) => {
                let area = (p.kernel.0 * p.kernel.1) as f64;
                p.windows(shape)?
                    .iter()
                    .map(|win| win.iter().map(|&i| input[i]).sum::<f64>() / area)
                    .collect()
            }
            ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => input.to_vec(),
        };
        Ok((out, None))
    }

    /// Linear part of a linear module (bias dropped). `None` for modules
    /// that are not linear.
    pub fn linear_part(&self, input: &[f64], shape: Shape) -> Result<Option<Vec<f64>>> {
        Ok(Some(match self {
            ModuleSpec::FullyConnected(d) => d.weight.matvec(input)?,
            ModuleSpec::Conv2d(c) => c.correlate(input, shape)?,
            ModuleSpec::AvgPool(_) | ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => {
                self.forward(input, shape)?.0
            }
            ModuleSpec::Activation(_) | ModuleSpec::MaxPool(_) => return Ok(None),
        }))
    }

    /// Dense `out × in` matrix of a linear module.
    pub fn effective_weight(&self, shape: Shape) -> Result<Option<Matrix>> {
        Ok(Some(match self {
            ModuleSpec::FullyConnected(d) => d.weight.clone(),
            ModuleSpec::Conv2d(c) => c.unrolled(shape)?,
            ModuleSpec::AvgPool(p) => {
                let (c, _, _) = shape.map()?;
                p.equivalent_conv(c).unrolled(shape)?
            }
            ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => Matrix::identity(shape.len()),
            ModuleSpec::Activation(_) | ModuleSpec::MaxPool(_) => return Ok(None),
        }))
    }

    /// Moves a derivative stack from this module's output to its input.
    pub fn backward_unmixed(
        &self,
        v_next: &DerivStack,
        input: &[f64],
        shape: Shape,
        argmax: Option<&[usize]>,
        ctx: &BackwardContext,
    ) -> Result<DerivStack> {
        match self {
            ModuleSpec::FullyConnected(d) => fc_backward(v_next, &d.weight),
            ModuleSpec::Conv2d(c) => conv_backward(v_next, c, shape),
            ModuleSpec::Activation(a) => activation_backward(v_next, *a, input, ctx),
            ModuleSpec::MaxPool(_) => {
                let idx = argmax.ok_or_else(|| {
                    Error::MissingTrace(
                        "max pooling needs the argmax map of the forward pass".into(),
                    )
                })?;
                maxpool_backward(v_next, idx, shape.len())
            }
            ModuleSpec::AvgPool(p) => avgpool_backward(v_next, p, shape),
            ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => {
                let map: Vec<usize> = (0..shape.len()).collect();
                reshape_backward(v_next, &map)
            }
        }
    }
}

/// Order-specific tables shared by every backward step of one expansion.
#[derive(Debug, Clone)]
pub struct BackwardContext {
    pub coeffs: FaaDiBrunoCoeffs,
    pub tables: ActivationTables,
}

impl BackwardContext {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            coeffs: FaaDiBrunoCoeffs::new(n)?,
            tables: ActivationTables::new(n)?,
        })
    }

    pub fn order(&self) -> usize {
        self.coeffs.order()
    }
}

/// Cached values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `inputs[m]` is the input of module `m`; the last entry is the output.
    pub values: Vec<Vec<f64>>,
    /// Shapes matching `values`.
    pub shapes: Vec<Shape>,
    /// Argmax maps of max-pooling modules, `None` elsewhere.
    pub argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds the input")
    }
}

/// Derivative stack of the scalar output with respect to itself:
/// `[1], [0], …, [0]`.
pub fn output_init(n: usize) -> Result<DerivStack> {
    if n == 0 {
        return Err(Error::InvalidOrder(
            0,
            "expansion order must be >= 1".into(),
        ));
    }
    let mut blocks = vec![vec![0.0]; n];
    blocks[0][0] = 1.0;
    DerivStack::new(blocks)
}

/// Fully connected backward step: `block k = (Wᵀ)^{∘k} · v_next.block(k)`.
pub fn fc_backward(v_next: &DerivStack, w: &Matrix) -> Result<DerivStack> {
    if v_next.width() != w.rows() {
        return Err(Error::shape(format!(
            "stack width {} does not match {} layer outputs",
            v_next.width(),
            w.rows()
        )));
    }
    let blocks = (1..=v_next.order())
        .map(|k| hadamard_power(w, k as u32)?.matvec_transposed(v_next.block(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DerivStack::from_raw(blocks))
}

/// Mixed partials across an input-adjacent fully connected layer:
/// `block k = Q_k · v_next.block(k)`.
pub fn fc_mixed_backward(v_next: &DerivStack, w: &Matrix, p: usize) -> Result<MixedDerivStack> {
    if w.cols() != p {
        return Err(Error::MixedUnsupported(format!(
            "layer consumes {} inputs but the network input has {p}",
            w.cols()
        )));
    }
    propagate_mixed(v_next, &build_mixed_transform(w, v_next.order())?)
}

/// Convolution backward step. The order-k block on input channel `ci` is
/// `Σ_co full_correlation(dilate(v_k[co]), rot180(F[co][ci]^{∘k}))`.
pub fn conv_backward(v_next: &DerivStack, conv: &Conv, input: Shape) -> Result<DerivStack> {
    let out = conv.output_shape(input)?;
    if v_next.width() != out.len() {
        return Err(Error::shape(format!(
            "stack width {} does not match convolution output {:?}",
            v_next.width(),
            out.dims()
        )));
    }
    let (_, h, w) = input.map()?;
    let (co_n, oh, ow) = out.map()?;
    let (kh, kw) = conv.kernel;
    let full_pad = (kh - 1 - conv.padding.0, kw - 1 - conv.padding.1);
    let mut blocks = Vec::with_capacity(v_next.order());
    for k in 1..=v_next.order() {
        let v = v_next.block(k);
        let dilated: Vec<Matrix> = (0..co_n)
            .map(|co| {
                let plane = Matrix::from_raw(oh, ow, v[co * oh * ow..(co + 1) * oh * ow].to_vec());
                dilate_and_pad(&plane, conv.stride, full_pad)
            })
            .collect();
        let mut block = Vec::with_capacity(input.len());
        for ci in 0..conv.in_channels {
            let mut acc = Matrix::zeros(h, w);
            for (co, plane) in dilated.iter().enumerate() {
                let kernel = rot180(&hadamard_power(&conv.kernel_matrix(co, ci), k as u32)?);
                let r = conv2d(plane, &kernel, (1, 1), (0, 0))?;
                if r.shape() != (h, w) {
                    return Err(Error::Dimension(format!(
                        "backward correlation produced {:?}, expected {:?}",
                        r.shape(),
                        (h, w)
                    )));
                }
                acc = acc.add(&r)?;
            }
            block.extend(acc.into_data());
        }
        blocks.push(block);
    }
    Ok(DerivStack::from_raw(blocks))
}

/// Activation backward step through the elementwise Faà di Bruno transform.
pub fn activation_backward(
    v_next: &DerivStack,
    act: Activation,
    cached_input: &[f64],
    ctx: &BackwardContext,
) -> Result<DerivStack> {
    if cached_input.len() != v_next.width() {
        return Err(Error::shape(format!(
            "activation input has {} values, stack width is {}",
            cached_input.len(),
            v_next.width()
        )));
    }
    let n = v_next.order();
    if ctx.order() != n {
        return Err(Error::OrderMismatch {
            expected: ctx.order(),
            actual: n,
        });
    }
    let mut derivs = vec![Vec::with_capacity(cached_input.len()); n];
    for &x in cached_input {
        for (k, d) in ctx.tables.derivs(act, x).into_iter().enumerate() {
            derivs[k].push(d);
        }
    }
    let transform = build_unmixed_transform(&LocalJet::Elementwise { derivs }, &ctx.coeffs)?;
    propagate_unmixed(v_next, &transform)
}

/// Max-pooling backward step: every order-k output derivative lands on the
/// input position that won the forward max; overlapping wins add up.
pub fn maxpool_backward(
    v_next: &DerivStack,
    argmax: &[usize],
    input_len: usize,
) -> Result<DerivStack> {
    if argmax.len() != v_next.width() {
        return Err(Error::MissingTrace(format!(
            "argmax map has {} entries, stack width is {}",
            argmax.len(),
            v_next.width()
        )));
    }
    if let Some(&bad) = argmax.iter().find(|&&i| i >= input_len) {
        return Err(Error::shape(format!(
            "argmax index {bad} outside input of {input_len}"
        )));
    }
    let blocks = v_next
        .blocks()
        .iter()
        .map(|v| {
            let mut out = vec![0.0; input_len];
            for (o, &i) in argmax.iter().enumerate() {
                out[i] += v[o];
            }
            out
        })
        .collect();
    Ok(DerivStack::from_raw(blocks))
}

/// Average-pooling backward step: the order-k output derivative spreads
/// over its window scaled by `(1 / (kh·kw))^k`.
pub fn avgpool_backward(v_next: &DerivStack, pool: &Pool, input: Shape) -> Result<DerivStack> {
    let windows = pool.windows(input)?;
    if windows.len() != v_next.width() {
        return Err(Error::shape(format!(
            "stack width {} does not match {} pooling outputs",
            v_next.width(),
            windows.len()
        )));
    }
    let weight = 1.0 / (pool.kernel.0 * pool.kernel.1) as f64;
    let blocks = (1..=v_next.order())
        .map(|k| {
            let scale = weight.powi(k as i32);
            let v = v_next.block(k);
            let mut out = vec![0.0; input.len()];
            for (o, win) in windows.iter().enumerate() {
                for &i in win {
                    out[i] += scale * v[o];
                }
            }
            out
        })
        .collect();
    Ok(DerivStack::from_raw(blocks))
}

/// Backward step of a pure re-indexing `z[i] = x[map[i]]`.
pub fn reshape_backward(v_next: &DerivStack, map: &[usize]) -> Result<DerivStack> {
    if map.len() != v_next.width() {
        return Err(Error::shape(format!(
            "index map has {} entries, stack width is {}",
            map.len(),
            v_next.width()
        )));
    }
    let mut seen = vec![false; map.len()];
    for &i in map {
        if i >= map.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::shape("reshape index map is not a bijection"));
        }
    }
    let blocks = v_next
        .blocks()
        .iter()
        .map(|v| {
            let mut out = vec![0.0; v.len()];
            for (o, &i) in map.iter().enumerate() {
                out[i] = v[o];
            }
            out
        })
        .collect();
    Ok(DerivStack::from_raw(blocks))
}
