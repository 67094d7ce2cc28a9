use rand::{Rng, RngCore};

use super::loss::{argmax, cross_entropy_loss, softmax_rows};
use super::{init_params, Activation, ConvGeometry, Layer, ModelSpec, Params, Real};
use crate::data::ImageShape;
use crate::error::{Error, Result};

/// How dropout behaves during a forward pass.
pub enum Mode<'a, T> {
    /// Dropout is the identity (inverted dropout needs no rescaling).
    Eval,
    /// Fresh dropout masks are drawn from the stream; a trace is recorded.
    Train(&'a mut dyn RngCore),
    /// Replays the masks of an earlier trace; a trace is recorded.
    Frozen(&'a [Option<Vec<T>>]),
}

/// Everything backward needs from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    batch: usize,
    layer_inputs: Vec<Vec<T>>,
    masks: Vec<Option<Vec<T>>>,
    logits: Vec<T>,
    param_len: usize,
}

impl<T> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Dropout masks per layer (`None` for non-dropout layers).
    pub fn masks(&self) -> &[Option<Vec<T>>] {
        &self.masks
    }
}

impl<T: Real> ForwardTrace<T> {
    /// Sign pattern of every relu input; two passes share a pattern when
    /// no unit crossed its kink.
    pub(crate) fn relu_pattern(&self, spec: &ModelSpec) -> Vec<bool> {
        spec.layers
            .iter()
            .zip(&self.layer_inputs)
            .filter(|(l, _)| matches!(l, Layer::Relu))
            .flat_map(|(_, x)| x.iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// A model spec bound to concrete parameters.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: ModelSpec,
    shapes: Vec<Activation>,
    params: Params<T>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: ModelSpec, params: Params<T>) -> Result<Self> {
        let shapes = spec.activations()?;
        if params.len() != spec.param_count() {
            return Err(Error::structural(format!(
                "{} parameters for a spec with {}",
                params.len(),
                spec.param_count()
            )));
        }
        let expected = Params::<T>::zeros(&spec);
        if params.slots != expected.slots {
            return Err(Error::structural("parameter slot table does not match the spec"));
        }
        Ok(Self { spec, shapes, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.activations()?;
        let params = init_params(&spec, seed);
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn batch_size(&self, batch: &[T]) -> Result<usize> {
        let n = self.input_len();
        if !batch.len().is_multiple_of(n) {
            return Err(Error::structural(format!(
                "batch of {} values is not a multiple of the input size {n}",
                batch.len()
            )));
        }
        Ok(batch.len() / n)
    }

    /// Logits for a row-major batch of images (`batch x classes`). A trace
    /// is returned for `Train` and `Frozen` modes.
    pub fn forward(&self, batch: &[T], mode: Mode<'_, T>) -> Result<(Vec<T>, Option<ForwardTrace<T>>)> {
        let b = self.batch_size(batch)?;
        let record = !matches!(mode, Mode::Eval);
        let mut mode = mode;
        if let Mode::Frozen(masks) = &mode {
            if masks.len() != self.spec.layers.len() {
                return Err(Error::structural("frozen masks do not match the layer count"));
            }
        }
        let mut layer_inputs = Vec::new();
        let mut masks = Vec::new();
        let mut cur = batch.to_vec();
        for i in 0..self.spec.layers.len() {
            let (next, mask) = self.apply_layer(i, &cur, b, &mut mode)?;
            if record {
                layer_inputs.push(std::mem::replace(&mut cur, next));
                masks.push(mask);
            } else {
                cur = next;
            }
        }
        let trace = record.then(|| ForwardTrace {
            batch: b,
            layer_inputs,
            masks,
            logits: cur.clone(),
            param_len: self.params.len(),
        });
        Ok((cur, trace))
    }

    /// Eval-mode logits.
    pub fn logits(&self, batch: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(batch, Mode::Eval)?.0)
    }

    /// Eval-mode class predictions (argmax, smallest index on ties).
    pub fn predict(&self, batch: &[T]) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits.chunks_exact(self.num_classes()).map(argmax).collect())
    }

    /// Mean softmax cross-entropy of the batch under `mode`.
    pub fn loss(&self, batch: &[T], labels: &[usize], mode: Mode<'_, T>) -> Result<T> {
        let (logits, _) = self.forward(batch, mode)?;
        cross_entropy_loss(&softmax_rows(&logits, self.num_classes()), self.num_classes(), labels)
    }

    /// Eval-mode activations feeding the final dense layer, with their width.
    pub fn embed(&self, batch: &[T]) -> Result<(Vec<T>, usize)> {
        let last_dense = self
            .spec
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .ok_or_else(|| Error::structural(format!("spec `{}` has no dense layer to embed from", self.spec.name)))?;
        let b = self.batch_size(batch)?;
        let mut cur = batch.to_vec();
        let mut mode = Mode::Eval;
        for i in 0..last_dense {
            cur = self.apply_layer(i, &cur, b, &mut mode)?.0;
        }
        Ok((cur, self.shapes[last_dense].len()))
    }

    /// Gradient of the mean softmax cross-entropy with respect to every
    /// parameter, for the batch recorded in `trace`.
    pub fn backward(&self, trace: &ForwardTrace<T>, labels: &[usize]) -> Result<Vec<T>> {
        if trace.param_len != self.params.len() || trace.layer_inputs.len() != self.spec.layers.len() {
            return Err(Error::structural("trace was not produced by this network"));
        }
        let b = trace.batch;
        if labels.len() != b {
            return Err(Error::structural(format!("{} labels for a batch of {b}", labels.len())));
        }
        let k = self.num_classes();
        let scale = T::one() / T::from_usize(b.max(1)).expect("batch fits");
        let mut g = softmax_rows(&trace.logits, k);
        for (row, &label) in g.chunks_exact_mut(k).zip(labels) {
            if label >= k {
                return Err(Error::structural(format!("label {label} outside 0..{k}")));
            }
            row[label] = row[label] - T::one();
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }
        let mut grads = vec![T::zero(); self.params.len()];
        for i in (0..self.spec.layers.len()).rev() {
            let x = &trace.layer_inputs[i];
            let need_dx = i > 0;
            g = match self.spec.layers[i] {
                Layer::Dense { input, output } => {
                    let slot = self.params.slots[i].expect("dense slot");
                    let w = &self.params.values[slot.weight_range()];
                    let (gw, gb) = grads[slot.offset..slot.offset + slot.weights + slot.biases].split_at_mut(slot.weights);
                    dense_backward(w, gw, gb, x, &g, b, input, output, need_dx)
                }
                Layer::Conv(geom) => {
                    let slot = self.params.slots[i].expect("conv slot");
                    let w = &self.params.values[slot.weight_range()];
                    let (gw, gb) = grads[slot.offset..slot.offset + slot.weights + slot.biases].split_at_mut(slot.weights);
                    let Activation::Spatial(in_shape) = self.shapes[i] else { unreachable!() };
                    let Activation::Spatial(out_shape) = self.shapes[i + 1] else { unreachable!() };
                    conv_backward(w, gw, gb, x, &g, b, geom, in_shape, out_shape, need_dx)
                }
                Layer::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
                Layer::Dropout { .. } => match &trace.masks[i] {
                    Some(mask) => g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect(),
                    None => g,
                },
                Layer::Flatten => g,
            };
        }
        Ok(grads)
    }

    fn apply_layer(&self, i: usize, x: &[T], b: usize, mode: &mut Mode<'_, T>) -> Result<(Vec<T>, Option<Vec<T>>)> {
        let out = match self.spec.layers[i] {
            Layer::Dense { input, output } => {
                let slot = self.params.slots[i].expect("dense slot");
                dense_forward(
                    &self.params.values[slot.weight_range()],
                    &self.params.values[slot.bias_range()],
                    x,
                    b,
                    input,
                    output,
                )
            }
            Layer::Conv(geom) => {
                let slot = self.params.slots[i].expect("conv slot");
                let Activation::Spatial(in_shape) = self.shapes[i] else { unreachable!() };
                let Activation::Spatial(out_shape) = self.shapes[i + 1] else { unreachable!() };
                conv_forward(
                    &self.params.values[slot.weight_range()],
                    &self.params.values[slot.bias_range()],
                    x,
                    b,
                    geom,
                    in_shape,
                    out_shape,
                )
            }
            Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Layer::Flatten => x.to_vec(),
            Layer::Dropout { rate } => {
                let mask = match mode {
                    Mode::Eval => None,
                    Mode::Train(_) if rate == 0.0 => None,
                    Mode::Train(rng) => {
                        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
                        Some(
                            (0..x.len())
                                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                                .collect::<Vec<T>>(),
                        )
                    }
                    Mode::Frozen(masks) => masks[i].clone(),
                };
                if let Some(m) = &mask {
                    if m.len() != x.len() {
                        return Err(Error::structural("dropout mask size mismatch"));
                    }
                    let y = x.iter().zip(m).map(|(&v, &k)| v * k).collect();
                    return Ok((y, mask));
                }
                x.to_vec()
            }
        };
        Ok((out, None))
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ca, cb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    acc.iter().copied().fold(T::zero(), |s, v| s + v) + tail
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

fn dense_forward<T: Real>(w: &[T], bias: &[T], x: &[T], b: usize, input: usize, output: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(b * output);
    for xb in x.chunks_exact(input).take(b) {
        for o in 0..output {
            y.push(bias[o] + dot(&w[o * input..(o + 1) * input], xb));
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    w: &[T],
    gw: &mut [T],
    gb: &mut [T],
    x: &[T],
    g: &[T],
    b: usize,
    input: usize,
    output: usize,
    need_dx: bool,
) -> Vec<T> {
    let mut dx = if need_dx { vec![T::zero(); b * input] } else { Vec::new() };
    for n in 0..b {
        let xb = &x[n * input..(n + 1) * input];
        let gn = &g[n * output..(n + 1) * output];
        for o in 0..output {
            let go = gn[o];
            gb[o] = gb[o] + go;
            axpy(go, xb, &mut gw[o * input..(o + 1) * input]);
            if need_dx {
                axpy(go, &w[o * input..(o + 1) * input], &mut dx[n * input..(n + 1) * input]);
            }
        }
    }
    dx
}

/// Output columns `ox` whose input column `ox*stride + kx - pad` is in range.
fn valid_columns(g: ConvGeometry, kx: usize, in_w: usize, out_w: usize) -> std::ops::Range<usize> {
    let lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride) };
    // ox*stride + kx - pad <= in_w - 1
    let hi = if in_w + g.pad < kx + 1 {
        0
    } else {
        ((in_w + g.pad - kx - 1) / g.stride + 1).min(out_w)
    };
    lo..hi.max(lo)
}

/// Unfolds one image into a `(in_channels*k*k) x (out_h*out_w)` matrix;
/// padded taps stay zero.
fn im2col<T: Real>(xn: &[T], g: ConvGeometry, ins: ImageShape, outs: ImageShape, cols: &mut [T]) {
    let k = g.kernel;
    let (in_plane, out_plane) = (ins.height * ins.width, outs.height * outs.width);
    cols.iter_mut().for_each(|v| *v = T::zero());
    for ic in 0..g.in_channels {
        let xp = &xn[ic * in_plane..(ic + 1) * in_plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ic * k + ky) * k + kx) * out_plane..][..out_plane];
                let range = valid_columns(g, kx, ins.width, outs.width);
                for oy in 0..outs.height {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= ins.height as isize {
                        continue;
                    }
                    let src = &xp[iy as usize * ins.width..][..ins.width];
                    let dst = &mut row[oy * outs.width..][..outs.width];
                    if g.stride == 1 {
                        let start = range.start + kx - g.pad;
                        dst[range.clone()].copy_from_slice(&src[start..start + range.len()]);
                    } else {
                        for ox in range.clone() {
                            dst[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adds an unfolded gradient matrix back onto the image it came from.
fn col2im_add<T: Real>(cols: &[T], g: ConvGeometry, ins: ImageShape, outs: ImageShape, dxn: &mut [T]) {
    let k = g.kernel;
    let (in_plane, out_plane) = (ins.height * ins.width, outs.height * outs.width);
    for ic in 0..g.in_channels {
        let dp = &mut dxn[ic * in_plane..(ic + 1) * in_plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ic * k + ky) * k + kx) * out_plane..][..out_plane];
                let range = valid_columns(g, kx, ins.width, outs.width);
                for oy in 0..outs.height {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= ins.height as isize {
                        continue;
                    }
                    let dst = &mut dp[iy as usize * ins.width..][..ins.width];
                    let src = &row[oy * outs.width..][..outs.width];
                    for ox in range.clone() {
                        let ix = ox * g.stride + kx - g.pad;
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
}

/// `c += a * b` for row-major `a: m x kd`, `b: kd x n`, `c: m x n`, four
/// rows of `c` at a time.
fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, kd: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for kk in 0..kd {
            let (a0, a1, a2, a3) = (a[i * kd + kk], a[(i + 1) * kd + kk], a[(i + 2) * kd + kk], a[(i + 3) * kd + kk]);
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] = c0[j] + a0 * bv;
                c1[j] = c1[j] + a1 * bv;
                c2[j] = c2[j] + a2 * bv;
                c3[j] = c3[j] + a3 * bv;
            }
        }
        i += 4;
    }
    for r in i..m {
        let crow = &mut c[r * n..(r + 1) * n];
        for kk in 0..kd {
            axpy(a[r * kd + kk], &b[kk * n..(kk + 1) * n], crow);
        }
    }
}

fn conv_forward<T: Real>(
    w: &[T],
    bias: &[T],
    x: &[T],
    b: usize,
    g: ConvGeometry,
    ins: ImageShape,
    outs: ImageShape,
) -> Vec<T> {
    let out_plane = outs.height * outs.width;
    let kd = g.in_channels * g.kernel * g.kernel;
    let mut y = vec![T::zero(); b * outs.len()];
    let mut cols = vec![T::zero(); kd * out_plane];
    for n in 0..b {
        im2col(&x[n * ins.len()..(n + 1) * ins.len()], g, ins, outs, &mut cols);
        let yn = &mut y[n * outs.len()..(n + 1) * outs.len()];
        for (oc, yp) in yn.chunks_exact_mut(out_plane).enumerate() {
            yp.iter_mut().for_each(|v| *v = bias[oc]);
        }
        matmul_acc(w, &cols, yn, g.out_channels, kd, out_plane);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    w: &[T],
    gw: &mut [T],
    gb: &mut [T],
    x: &[T],
    gout: &[T],
    b: usize,
    g: ConvGeometry,
    ins: ImageShape,
    outs: ImageShape,
    need_dx: bool,
) -> Vec<T> {
    let out_plane = outs.height * outs.width;
    let kd = g.in_channels * g.kernel * g.kernel;
    let mut dx = if need_dx { vec![T::zero(); b * ins.len()] } else { Vec::new() };
    let mut cols = vec![T::zero(); kd * out_plane];
    let mut dcols = if need_dx { vec![T::zero(); kd * out_plane] } else { Vec::new() };
    // w transposed to kd x out_channels
    let mut wt = vec![T::zero(); kd * g.out_channels];
    for oc in 0..g.out_channels {
        for kk in 0..kd {
            wt[kk * g.out_channels + oc] = w[oc * kd + kk];
        }
    }
    for n in 0..b {
        im2col(&x[n * ins.len()..(n + 1) * ins.len()], g, ins, outs, &mut cols);
        let gn = &gout[n * outs.len()..(n + 1) * outs.len()];
        for oc in 0..g.out_channels {
            let gp = &gn[oc * out_plane..(oc + 1) * out_plane];
            gb[oc] = gb[oc] + gp.iter().copied().fold(T::zero(), |s, v| s + v);
            for kk in 0..kd {
                let widx = oc * kd + kk;
                gw[widx] = gw[widx] + dot(gp, &cols[kk * out_plane..(kk + 1) * out_plane]);
            }
        }
        if need_dx {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            matmul_acc(&wt, gn, &mut dcols, kd, g.out_channels, out_plane);
            col2im_add(&dcols, g, ins, outs, &mut dx[n * ins.len()..(n + 1) * ins.len()]);
        }
    }
    dx
}
