use rand::Rng;

use super::arch::{same_padding, ArchSpec, Layer, Shape};
use super::real::{gemm, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ParamSlot {
    weights: usize,
    biases: usize,
    w_len: usize,
    b_len: usize,
}

/// Flat parameter vector laid out by an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    arch: ArchSpec,
    shapes: Vec<Shape>,
    slots: Vec<Option<ParamSlot>>,
    params: Vec<T>,
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; pre-activations followed by ReLU are dropped.
    acts: Vec<Vec<T>>,
    pool_argmax: Vec<Vec<u32>>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Real> Network<T> {
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut slots = Vec::with_capacity(arch.layers.len());
        let mut offset = 0;
        for l in &arch.layers {
            let slot = match *l {
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some((kernel * kernel * in_channels * out_channels, out_channels)),
                Layer::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
                _ => None,
            };
            slots.push(slot.map(|(w_len, b_len)| {
                let s = ParamSlot {
                    weights: offset,
                    biases: offset + w_len,
                    w_len,
                    b_len,
                };
                offset += w_len + b_len;
                s
            }));
        }
        Ok(Self {
            arch,
            shapes,
            slots,
            params: vec![T::zero(); offset],
        })
    }

    /// Fan-in scaled uniform initialization, U(−1/√fan_in, 1/√fan_in).
    pub fn init<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for (layer, slot) in net.arch.layers.iter().zip(&net.slots) {
            let Some(slot) = slot else { continue };
            let fan_in = match *layer {
                Layer::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
                Layer::Dense { inputs, .. } => inputs,
                _ => unreachable!("only parameterized layers own slots"),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[slot.weights..slot.biases + slot.b_len] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map_or(0, Shape::len)
    }

    pub fn extra_dim(&self) -> usize {
        self.arch.extra_dim()
    }

    pub fn image_len(&self) -> usize {
        self.arch.input_shape().len()
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|&p| U::of(p.f64())).collect(),
        }
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                actual: values.len().to_string(),
            });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    /// Batched forward pass. `images` holds `batch` row-major frames, `extras` the
    /// concatenated feature vectors. With a tape, activations are kept for backward.
    pub fn forward(&self, images: &[T], extras: &[T], batch: usize, tape: Option<&mut Tape<T>>) -> Result<Vec<T>> {
        self.run(images, extras, batch, tape, None)
    }

    /// Forward pass that reuses the ReLU masks and pooling choices recorded in
    /// `pattern`, i.e. the linear piece active at the recorded point.
    pub fn forward_frozen(&self, images: &[T], extras: &[T], pattern: &Tape<T>) -> Result<Vec<T>> {
        if pattern.acts.len() != self.arch.layers.len() + 1 {
            return Err(Error::Shape {
                expected: "tape from a forward pass of this network".into(),
                actual: format!("{} recorded activations", pattern.acts.len()),
            });
        }
        self.run(images, extras, pattern.batch, None, Some(pattern))
    }

    fn run(
        &self,
        images: &[T],
        extras: &[T],
        batch: usize,
        tape: Option<&mut Tape<T>>,
        frozen: Option<&Tape<T>>,
    ) -> Result<Vec<T>> {
        let img_len = self.image_len();
        let extra = self.extra_dim();
        if images.len() != batch * img_len || extras.len() != batch * extra {
            return Err(Error::Shape {
                expected: format!("{batch} × ({img_len} image, {extra} extra)"),
                actual: format!("{} image values, {} extra values", images.len(), extras.len()),
            });
        }
        let mut tape = tape;
        if let Some(t) = tape.as_deref_mut() {
            t.batch = batch;
            t.acts.clear();
            t.pool_argmax.clear();
        }
        let mut cur = images.to_vec();
        let mut in_shape = self.arch.input_shape();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let out_shape = self.shapes[i];
            let mut argmax = Vec::new();
            let next = match *layer {
                Layer::Relu => {
                    let mut v = std::mem::take(&mut cur);
                    match frozen {
                        Some(f) => {
                            for (x, &m) in v.iter_mut().zip(&f.acts[i + 1]) {
                                if m <= T::zero() {
                                    *x = T::zero();
                                }
                            }
                        }
                        None => {
                            for x in &mut v {
                                if *x < T::zero() {
                                    *x = T::zero();
                                }
                            }
                        }
                    }
                    v
                }
                Layer::Conv { kernel, stride, .. } => {
                    let slot = self.slots[i].expect("conv slot");
                    conv_forward(&self.params, slot, &cur, in_shape, out_shape, kernel, stride, batch)
                }
                Layer::MaxPool { size } => match frozen {
                    Some(f) => {
                        let (in_len, out_len) = (in_shape.len(), out_shape.len());
                        let idx = &f.pool_argmax[i];
                        (0..batch * out_len)
                            .map(|j| cur[(j / out_len) * in_len + idx[j] as usize])
                            .collect()
                    }
                    None => {
                        let (v, idx) = maxpool_forward(&cur, in_shape, out_shape, size, batch);
                        argmax = idx;
                        v
                    }
                },
                Layer::GlobalAvgPool => gap_forward(&cur, in_shape, batch),
                Layer::Concat { extra } => {
                    let n = in_shape.len();
                    let mut v = Vec::with_capacity(batch * (n + extra));
                    for b in 0..batch {
                        v.extend_from_slice(&cur[b * n..(b + 1) * n]);
                        v.extend_from_slice(&extras[b * extra..(b + 1) * extra]);
                    }
                    v
                }
                Layer::Dense { inputs, outputs } => {
                    let slot = self.slots[i].expect("dense slot");
                    dense_forward(&self.params, slot, &cur, inputs, outputs, batch)
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                // ReLU consumed its input in place; its output is all backward needs.
                t.acts.push(if matches!(layer, Layer::Relu) { Vec::new() } else { cur });
                t.pool_argmax.push(argmax);
            }
            cur = next;
            in_shape = out_shape;
        }
        if let Some(t) = tape {
            t.acts.push(cur.clone());
        }
        Ok(cur)
    }

    pub fn forward_one(&self, image: &[T], extra: &[T]) -> Result<Vec<T>> {
        self.forward(image, extra, 1, None)
    }

    /// Reverse pass from `d_out` (batch × outputs). Accumulates parameter gradients into
    /// `grads` when given; otherwise only propagates through the dense head. Returns the
    /// gradient with respect to the concatenated extra inputs.
    pub fn backward(&self, tape: &Tape<T>, d_out: &[T], grads: Option<&mut [T]>) -> Result<Vec<T>> {
        let batch = tape.batch;
        if tape.acts.len() != self.arch.layers.len() + 1 {
            return Err(Error::Shape {
                expected: "tape from a forward pass of this network".into(),
                actual: format!("{} recorded activations", tape.acts.len()),
            });
        }
        if d_out.len() != batch * self.output_dim() {
            return Err(Error::Shape {
                expected: format!("{} output gradients", batch * self.output_dim()),
                actual: d_out.len().to_string(),
            });
        }
        if d_out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("loss gradient".into()));
        }
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::Shape {
                    expected: format!("{} gradient slots", self.params.len()),
                    actual: g.len().to_string(),
                });
            }
        }
        let mut grads = grads;
        let head_only = grads.is_none();
        let mut d = d_out.to_vec();
        let mut d_extra = Vec::new();
        for i in (0..self.arch.layers.len()).rev() {
            let in_shape = if i == 0 { self.arch.input_shape() } else { self.shapes[i - 1] };
            let out_shape = self.shapes[i];
            let first = i == 0;
            match self.arch.layers[i] {
                Layer::Relu => {
                    let out = &tape.acts[i + 1];
                    for (g, &y) in d.iter_mut().zip(out) {
                        if y <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                Layer::Dense { inputs, outputs } => {
                    let slot = self.slots[i].expect("dense slot");
                    d = dense_backward(
                        &self.params,
                        slot,
                        &tape.acts[i],
                        &d,
                        inputs,
                        outputs,
                        batch,
                        grads.as_deref_mut(),
                    );
                }
                Layer::Concat { extra } => {
                    let n = in_shape.len();
                    let mut d_feat = Vec::with_capacity(batch * n);
                    d_extra = Vec::with_capacity(batch * extra);
                    for b in 0..batch {
                        let row = &d[b * (n + extra)..(b + 1) * (n + extra)];
                        d_feat.extend_from_slice(&row[..n]);
                        d_extra.extend_from_slice(&row[n..]);
                    }
                    if head_only {
                        return Ok(d_extra);
                    }
                    d = d_feat;
                }
                Layer::GlobalAvgPool => d = gap_backward(&d, in_shape, batch),
                Layer::MaxPool { .. } => d = maxpool_backward(&d, &tape.pool_argmax[i], in_shape, out_shape, batch),
                Layer::Conv { kernel, stride, .. } => {
                    let slot = self.slots[i].expect("conv slot");
                    let g = grads.as_deref_mut().expect("full backward");
                    d = conv_backward(
                        &self.params,
                        slot,
                        &tape.acts[i],
                        &d,
                        in_shape,
                        out_shape,
                        kernel,
                        stride,
                        batch,
                        g,
                        !first,
                    );
                }
            }
        }
        Ok(d_extra)
    }
}

fn dense_forward<T: Real>(params: &[T], slot: ParamSlot, x: &[T], inputs: usize, outputs: usize, batch: usize) -> Vec<T> {
    let w = &params[slot.weights..slot.weights + slot.w_len];
    let bias = &params[slot.biases..slot.biases + slot.b_len];
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(false, true, batch, outputs, inputs, T::one(), x, w, T::one(), &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    params: &[T],
    slot: ParamSlot,
    x: &[T],
    dy: &[T],
    inputs: usize,
    outputs: usize,
    batch: usize,
    grads: Option<&mut [T]>,
) -> Vec<T> {
    let w = &params[slot.weights..slot.weights + slot.w_len];
    if let Some(g) = grads {
        let (gw, gb) = g[slot.weights..slot.biases + slot.b_len].split_at_mut(slot.w_len);
        gemm(true, false, outputs, inputs, batch, T::one(), dy, x, T::one(), gw);
        for b in 0..batch {
            for (acc, &v) in gb.iter_mut().zip(&dy[b * outputs..(b + 1) * outputs]) {
                *acc += v;
            }
        }
    }
    let mut dx = vec![T::zero(); batch * inputs];
    gemm(false, false, batch, inputs, outputs, T::one(), dy, w, T::zero(), &mut dx);
    dx
}

fn dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Image { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// Unfold one CHW sample into a (C·K·K) × (H_out·W_out) matrix.
fn im2col<T: Real>(x: &[T], in_shape: Shape, out_shape: Shape, kernel: usize, stride: usize, col: &mut [T]) {
    let (c_in, h, w) = dims(in_shape);
    let (_, ho, wo) = dims(out_shape);
    let (_, pt, _) = same_padding(h, kernel, stride);
    let (_, pl, _) = same_padding(w, kernel, stride);
    let plane = ho * wo;
    for c in 0..c_in {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pt as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    // Valid outputs satisfy 0 <= ox·stride + kj − pl < w.
                    let ox0 = pl.saturating_sub(kj).div_ceil(stride).min(wo);
                    let ox1 = ((w + pl - kj).div_ceil(stride)).clamp(ox0, wo);
                    line[..ox0].fill(T::zero());
                    line[ox1..].fill(T::zero());
                    let start = ox0 * stride + kj - pl;
                    if stride == 1 {
                        line[ox0..ox1].copy_from_slice(&src[start..start + (ox1 - ox0)]);
                    } else {
                        for (v, &s) in line[ox0..ox1].iter_mut().zip(src[start..].iter().step_by(stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], in_shape: Shape, out_shape: Shape, kernel: usize, stride: usize, dx: &mut [T]) {
    let (c_in, h, w) = dims(in_shape);
    let (_, ho, wo) = dims(out_shape);
    let (_, pt, _) = same_padding(h, kernel, stride);
    let (_, pl, _) = same_padding(w, kernel, stride);
    let plane = ho * wo;
    for c in 0..c_in {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let dst = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pl as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Real>(
    params: &[T],
    slot: ParamSlot,
    x: &[T],
    in_shape: Shape,
    out_shape: Shape,
    kernel: usize,
    stride: usize,
    batch: usize,
) -> Vec<T> {
    let (c_in, _, _) = dims(in_shape);
    let (c_out, ho, wo) = dims(out_shape);
    let plane = ho * wo;
    let k = c_in * kernel * kernel;
    let w = &params[slot.weights..slot.weights + slot.w_len];
    let bias = &params[slot.biases..slot.biases + slot.b_len];
    let mut col = vec![T::zero(); k * plane];
    let mut y = vec![T::zero(); batch * c_out * plane];
    let in_len = in_shape.len();
    for b in 0..batch {
        im2col(&x[b * in_len..(b + 1) * in_len], in_shape, out_shape, kernel, stride, &mut col);
        let yb = &mut y[b * c_out * plane..(b + 1) * c_out * plane];
        for (ch, &bv) in bias.iter().enumerate() {
            yb[ch * plane..(ch + 1) * plane].fill(bv);
        }
        gemm(false, false, c_out, plane, k, T::one(), w, &col, T::one(), yb);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    params: &[T],
    slot: ParamSlot,
    x: &[T],
    dy: &[T],
    in_shape: Shape,
    out_shape: Shape,
    kernel: usize,
    stride: usize,
    batch: usize,
    grads: &mut [T],
    need_input_grad: bool,
) -> Vec<T> {
    let (c_in, _, _) = dims(in_shape);
    let (c_out, ho, wo) = dims(out_shape);
    let plane = ho * wo;
    let k = c_in * kernel * kernel;
    let in_len = in_shape.len();
    let w = &params[slot.weights..slot.weights + slot.w_len];
    let (gw, gb) = grads[slot.weights..slot.biases + slot.b_len].split_at_mut(slot.w_len);
    let mut col = vec![T::zero(); k * plane];
    let mut dcol = if need_input_grad { vec![T::zero(); k * plane] } else { Vec::new() };
    let mut dx = if need_input_grad { vec![T::zero(); batch * in_len] } else { Vec::new() };
    for b in 0..batch {
        let dyb = &dy[b * c_out * plane..(b + 1) * c_out * plane];
        im2col(&x[b * in_len..(b + 1) * in_len], in_shape, out_shape, kernel, stride, &mut col);
        gemm(false, true, c_out, k, plane, T::one(), dyb, &col, T::one(), gw);
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc += dyb[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
        if need_input_grad {
            gemm(true, false, k, plane, c_out, T::one(), w, dyb, T::zero(), &mut dcol);
            col2im(&dcol, in_shape, out_shape, kernel, stride, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    dx
}

fn maxpool_forward<T: Real>(x: &[T], in_shape: Shape, out_shape: Shape, size: usize, batch: usize) -> (Vec<T>, Vec<u32>) {
    let (c, h, w) = dims(in_shape);
    let (_, ho, wo) = dims(out_shape);
    let mut y = Vec::with_capacity(batch * c * ho * wo);
    let mut idx = Vec::with_capacity(batch * c * ho * wo);
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let j = base + (oy * size + dy) * w + ox * size + dx;
                            if x[j] > x[best] {
                                best = j;
                            }
                        }
                    }
                    y.push(x[best]);
                    idx.push((best - b * c * h * w) as u32);
                }
            }
        }
    }
    (y, idx)
}

fn maxpool_backward<T: Real>(dy: &[T], argmax: &[u32], in_shape: Shape, out_shape: Shape, batch: usize) -> Vec<T> {
    let in_len = in_shape.len();
    let out_len = out_shape.len();
    let mut dx = vec![T::zero(); batch * in_len];
    for b in 0..batch {
        for j in 0..out_len {
            dx[b * in_len + argmax[b * out_len + j] as usize] += dy[b * out_len + j];
        }
    }
    dx
}

fn gap_forward<T: Real>(x: &[T], in_shape: Shape, batch: usize) -> Vec<T> {
    let (c, h, w) = dims(in_shape);
    let plane = h * w;
    let scale = T::of(1.0 / plane as f64);
    let mut y = Vec::with_capacity(batch * c);
    for b in 0..batch {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            y.push(x[s..s + plane].iter().copied().sum::<T>() * scale);
        }
    }
    y
}

fn gap_backward<T: Real>(dy: &[T], in_shape: Shape, batch: usize) -> Vec<T> {
    let (c, h, w) = dims(in_shape);
    let plane = h * w;
    let scale = T::of(1.0 / plane as f64);
    let mut dx = Vec::with_capacity(batch * c * plane);
    for &g in &dy[..batch * c] {
        dx.extend(std::iter::repeat_n(g * scale, plane));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::arch::ArchSpec;
    use crate::rng::substream;

    fn random_inputs(net: &Network<f64>, batch: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = substream(seed, "inputs");
        let img = (0..batch * net.image_len()).map(|_| rng.random_range(0.0..5.0)).collect();
        let extra = (0..batch * net.extra_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        (img, extra)
    }

    /// Active ReLU units and pooling winners.
    fn pattern(t: &Tape<f64>) -> (Vec<bool>, Vec<Vec<u32>>) {
        let mask = t.acts.iter().flatten().map(|&x| x > 0.0).collect();
        (mask, t.pool_argmax.clone())
    }

    fn weighted_loss(out: &[f64], w: &[f64]) -> f64 {
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Central differences on `coords` random parameters against reverse mode.
    fn check_gradients(arch: ArchSpec, batch: usize, coords: usize, seed: u64) {
        let mut rng = substream(seed, "params");
        let net = Network::<f64>::init(arch, &mut rng).unwrap();
        let (img, extra) = random_inputs(&net, batch, seed);
        let n_out = batch * net.output_dim();
        let w: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::default();
        net.forward(&img, &extra, batch, Some(&mut tape)).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        let d_extra = net.backward(&tape, &w, Some(&mut grads)).unwrap();
        let h = 1e-4;
        let probe = |params: &[f64], extra: &[f64]| {
            let mut net = net.clone();
            net.set_params(params).unwrap();
            let mut t = Tape::default();
            let plain = weighted_loss(&net.forward(&img, extra, batch, Some(&mut t)).unwrap(), &w);
            let frozen = weighted_loss(&net.forward_frozen(&img, extra, &tape).unwrap(), &w);
            (plain, frozen, pattern(&t) == pattern(&tape))
        };
        let central = |up: (f64, f64, bool), down: (f64, f64, bool)| {
            if up.2 && down.2 {
                ((up.0 - down.0) / (2.0 * h), false)
            } else {
                ((up.1 - down.1) / (2.0 * h), true)
            }
        };
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        let mut worst: f64 = 0.0;
        let mut kinked = 0;
        for _ in 0..coords {
            let j = rng.random_range(0..net.param_count());
            let mut p = net.params().to_vec();
            p[j] += h;
            let up = probe(&p, &extra);
            p[j] -= 2.0 * h;
            let down = probe(&p, &extra);
            let (fd, k) = central(up, down);
            kinked += usize::from(k);
            worst = worst.max(rel(fd, grads[j]));
        }
        for j in 0..extra.len().min(5) {
            let mut e = extra.clone();
            e[j] += h;
            let up = probe(net.params(), &e);
            e[j] -= 2.0 * h;
            let down = probe(net.params(), &e);
            let (fd, k) = central(up, down);
            kinked += usize::from(k);
            worst = worst.max(rel(fd, d_extra[j]));
        }
        eprintln!("{coords} coordinates, {kinked} across an activation kink, worst relative error {worst:.2e}");
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        check_gradients(ArchSpec::actor(), 2, 20, 1);
    }

    #[test]
    fn small_image_gradients_match_finite_differences() {
        let mut arch = ArchSpec::critic();
        arch.input = [1, 12, 12];
        check_gradients(arch, 2, 200, 7);
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        check_gradients(ArchSpec::critic(), 2, 20, 2);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        check_gradients(ArchSpec::mlp("probe", 3, &[16, 16], 4), 5, 40, 3);
    }

    #[test]
    fn zero_network_outputs_zero() {
        for arch in [ArchSpec::actor(), ArchSpec::critic()] {
            let net = Network::<f32>::zeros(arch).unwrap();
            let img = vec![2.5f32; net.image_len()];
            let extra = vec![0.3f32; net.extra_dim()];
            let out = net.forward_one(&img, &extra).unwrap();
            assert!(out.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = substream(4, "p");
        let net = Network::<f64>::init(ArchSpec::mlp("probe", 3, &[8], 2), &mut rng).unwrap();
        let mut tape = Tape::default();
        net.forward(&[], &[0.1, 0.2, 0.3], 1, Some(&mut tape)).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.backward(&tape, &[0.0, 0.0], Some(&mut g)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_probe_gradient_closed_form() {
        // y = W x + b with loss y·c: dW = c xᵀ, db = c, dx = Wᵀ c.
        let mut net = Network::<f64>::zeros(ArchSpec::mlp("lin", 3, &[], 2)).unwrap();
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5]).unwrap();
        let x = [0.1, -0.2, 0.3];
        let mut tape = Tape::default();
        let y = net.forward(&[], &x, 1, Some(&mut tape)).unwrap();
        assert!((y[0] - (0.1 - 0.4 + 0.9 + 0.5)).abs() < 1e-12);
        let c = [2.0, -1.0];
        let mut g = vec![0.0; 8];
        let dx = net.backward(&tape, &c, Some(&mut g)).unwrap();
        let want = [0.2, -0.4, 0.6, -0.1, 0.2, -0.3, 2.0, -1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let want_dx = [2.0 - 4.0, 4.0 - 5.0, 6.0 - 6.0];
        for (a, b) in dx.iter().zip(want_dx) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_only_backward_matches_full() {
        let mut rng = substream(5, "p");
        let net = Network::<f64>::init(ArchSpec::critic(), &mut rng).unwrap();
        let (img, extra) = random_inputs(&net, 2, 5);
        let mut tape = Tape::default();
        net.forward(&img, &extra, 2, Some(&mut tape)).unwrap();
        let d = [1.0, -0.5];
        let head = net.backward(&tape, &d, None).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let full = net.backward(&tape, &d, Some(&mut g)).unwrap();
        assert_eq!(head, full);
        assert_eq!(head.len(), 2 * 5);
    }

    #[test]
    fn forward_is_bit_reproducible_and_batch_consistent() {
        let mut rng = substream(6, "p");
        let net = Network::<f32>::init(ArchSpec::actor(), &mut rng).unwrap();
        let img: Vec<f32> = (0..2 * net.image_len()).map(|i| (i % 97) as f32 / 20.0).collect();
        let extra = [0.1f32, 0.2, 0.3, 0.4, -0.1, 0.0];
        let a = net.forward(&img, &extra, 2, None).unwrap();
        let b = net.forward(&img, &extra, 2, None).unwrap();
        assert_eq!(a, b);
        let single = net.forward_one(&img[net.image_len()..], &extra[3..]).unwrap();
        for (x, y) in single.iter().zip(&a[4..]) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::<f32>::zeros(ArchSpec::actor()).unwrap();
        assert!(net.forward(&[0.0; 10], &[0.0; 3], 1, None).is_err());
        assert!(net.forward(&vec![0.0; 112 * 112], &[0.0; 2], 1, None).is_err());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let net = Network::<f64>::zeros(ArchSpec::mlp("p", 3, &[4], 1)).unwrap();
        let mut tape = Tape::default();
        net.forward(&[], &[0.0; 3], 1, Some(&mut tape)).unwrap();
        let mut g = vec![0.0; net.param_count()];
        assert!(matches!(
            net.backward(&tape, &[f64::NAN], Some(&mut g)),
            Err(Error::NonFinite(_))
        ));
    }
}
