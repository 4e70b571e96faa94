//! Primitive layers with hand-written backward passes.

use crate::error::{ensure, Error, Result};
use crate::field::FeatureField;

/// A filter bank `out × in × kh × kw` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(name: impl Into<String>, out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        Self {
            name: name.into(),
            out_ch,
            in_ch,
            kh,
            kw,
            weight: vec![0.0; out_ch * in_ch * kh * kw],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.out_ch, self.in_ch, self.kh, self.kw)
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_ch + i) * self.kh + ky) * self.kw + kx]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kh, self.kw]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const SAME3: ConvGeometry = ConvGeometry { stride: 1, padding: 1 };
    pub const VALID: ConvGeometry = ConvGeometry { stride: 1, padding: 0 };

    fn out_dim(&self, n: usize, k: usize) -> Result<usize> {
        ensure(self.stride > 0, || "stride must be positive".into())?;
        ensure(n + 2 * self.padding >= k, || {
            format!("kernel {k} larger than padded input {}", n + 2 * self.padding)
        })?;
        Ok((n + 2 * self.padding - k) / self.stride + 1)
    }

    /// Output positions `o` in `[lo, hi)` for which `o·s + k − p` lands inside `[0, n)`.
    #[inline]
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = (n as isize - 1 + p - k).div_euclid(s) + 1;
        (lo.max(0) as usize, hi.clamp(0, out as isize) as usize)
    }
}

fn check_conv(input: &FeatureField, layer: &ConvLayer) -> Result<()> {
    ensure(input.channels() == layer.in_ch, || {
        format!(
            "{}: input has {} channels, filters expect {}",
            layer.name,
            input.channels(),
            layer.in_ch
        )
    })?;
    ensure(
        layer.weight.len() == layer.out_ch * layer.in_ch * layer.kh * layer.kw
            && layer.bias.len() == layer.out_ch,
        || format!("{}: inconsistent parameter lengths", layer.name),
    )
}

/// Cross-correlation `out[o,y,x] = b[o] + Σ w[o,i,ky,kx] · in[i, y·s+ky−p, x·s+kx−p]`.
pub fn conv2d(input: &FeatureField, layer: &ConvLayer, geo: ConvGeometry) -> Result<FeatureField> {
    check_conv(input, layer)?;
    let (h, w) = (input.height(), input.width());
    let oh = geo.out_dim(h, layer.kh)?;
    let ow = geo.out_dim(w, layer.kw)?;
    let s = geo.stride;
    let mut out = FeatureField::zeros(layer.out_ch, oh, ow);
    for o in 0..layer.out_ch {
        let plane = out.plane_mut(o);
        plane.fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let src = input.plane(i);
            for ky in 0..layer.kh {
                let (y0, y1) = geo.valid_range(ky, h, oh);
                for kx in 0..layer.kw {
                    let wv = layer.w(o, i, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = geo.valid_range(kx, w, ow);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - geo.padding;
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        let row = &src[iy * w..(iy + 1) * w];
                        if s == 1 {
                            let off = x0 + kx - geo.padding;
                            for (d, v) in dst[x0..x1].iter_mut().zip(&row[off..off + (x1 - x0)]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[ox] += wv * row[ox * s + kx - geo.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(dL/d input, dL/d filters and bias)`.
pub fn conv2d_backward(
    input: &FeatureField,
    layer: &ConvLayer,
    geo: ConvGeometry,
    grad_out: &FeatureField,
) -> Result<(FeatureField, ConvLayer)> {
    check_conv(input, layer)?;
    let (h, w) = (input.height(), input.width());
    let oh = geo.out_dim(h, layer.kh)?;
    let ow = geo.out_dim(w, layer.kw)?;
    ensure(grad_out.shape() == (layer.out_ch, oh, ow), || {
        format!(
            "{}: upstream gradient shape {:?} does not match output {:?}",
            layer.name,
            grad_out.shape(),
            (layer.out_ch, oh, ow)
        )
    })?;
    let s = geo.stride;
    let mut grad_in = FeatureField::zeros(layer.in_ch, h, w);
    let mut grads = layer.zeros_like();
    for o in 0..layer.out_ch {
        let g = grad_out.plane(o);
        grads.bias[o] = g.iter().sum();
        for i in 0..layer.in_ch {
            let src = input.plane(i);
            for ky in 0..layer.kh {
                let (y0, y1) = geo.valid_range(ky, h, oh);
                for kx in 0..layer.kw {
                    let widx = ((o * layer.in_ch + i) * layer.kh + ky) * layer.kw + kx;
                    let wv = layer.weight[widx];
                    let (x0, x1) = geo.valid_range(kx, w, ow);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - geo.padding;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let off = x0 + kx - geo.padding;
                            let n = x1 - x0;
                            let srow = &src[iy * w + off..iy * w + off + n];
                            acc += grow[x0..x1].iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                            let dst = &mut grad_in.plane_mut(i)[iy * w + off..iy * w + off + n];
                            for (d, gv) in dst.iter_mut().zip(&grow[x0..x1]) {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in x0..x1 {
                                let ix = ox * s + kx - geo.padding;
                                acc += grow[ox] * src[iy * w + ix];
                                grad_in.plane_mut(i)[iy * w + ix] += wv * grow[ox];
                            }
                        }
                    }
                    grads.weight[widx] = acc;
                }
            }
        }
    }
    Ok((grad_in, grads))
}

/// Argmax location (flat `y·W + x` in the input plane) of every 2×2 window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub argmax: Vec<u32>,
}

/// 2×2 / stride-2 max pooling. Ties resolve to the first window position in
/// row-major order (top-left).
pub fn maxpool2x2(input: &FeatureField) -> Result<(FeatureField, PoolIndices)> {
    let (c, h, w) = input.shape();
    ensure(h % 2 == 0 && w % 2 == 0, || {
        format!("max pooling needs even dimensions, got {h}x{w}")
    })?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureField::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[oy * ow + ox] = src[best];
                argmax.push(best as u32);
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            channels: c,
            in_height: h,
            in_width: w,
            argmax,
        },
    ))
}

fn check_indices(input: &FeatureField, idx: &PoolIndices) -> Result<()> {
    ensure(
        idx.channels == input.channels()
            && idx.in_height == 2 * input.height()
            && idx.in_width == 2 * input.width()
            && idx.argmax.len() == input.as_slice().len(),
        || {
            format!(
                "pool indices for {}x{}x{} do not fit a {:?} field",
                idx.channels,
                idx.in_height,
                idx.in_width,
                input.shape()
            )
        },
    )
}

/// Places every value at its memorized argmax; zeros elsewhere. Also the backward of
/// [`maxpool2x2`].
pub fn unpool2x2(
    input: &FeatureField,
    idx: &PoolIndices,
    out_shape: (usize, usize),
) -> Result<FeatureField> {
    check_indices(input, idx)?;
    if out_shape != (idx.in_height, idx.in_width) {
        return Err(Error::invalid(format!(
            "unpool target {:?} disagrees with indices recorded at {:?}",
            out_shape,
            (idx.in_height, idx.in_width)
        )));
    }
    let (oh, ow) = out_shape;
    let window = input.plane_len();
    let mut out = FeatureField::zeros(input.channels(), oh, ow);
    for ch in 0..input.channels() {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for (k, &v) in src.iter().enumerate() {
            dst[idx.argmax[ch * window + k] as usize] += v;
        }
    }
    Ok(out)
}

/// Backward of [`unpool2x2`]: gathers the upstream gradient at the memorized positions.
pub fn unpool2x2_backward(grad_out: &FeatureField, idx: &PoolIndices) -> Result<FeatureField> {
    ensure(
        grad_out.shape() == (idx.channels, idx.in_height, idx.in_width),
        || "unpool gradient shape disagrees with indices".into(),
    )?;
    let (oh, ow) = (idx.in_height / 2, idx.in_width / 2);
    let mut g = FeatureField::zeros(idx.channels, oh, ow);
    for ch in 0..idx.channels {
        let src = grad_out.plane(ch);
        let dst = g.plane_mut(ch);
        for (k, d) in dst.iter_mut().enumerate() {
            *d = src[idx.argmax[ch * oh * ow + k] as usize];
        }
    }
    Ok(g)
}

pub fn relu(input: &FeatureField) -> FeatureField {
    let mut out = input.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Subgradient 0 at 0.
pub fn relu_backward(input: &FeatureField, grad_out: &FeatureField) -> FeatureField {
    let mut g = grad_out.clone();
    for (d, &x) in g.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-axis interpolation taps for align-corners-false bilinear upsampling.
fn taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    ensure(matches!(factor, 2 | 4 | 8), || {
        format!("upsampling factor must be 2, 4 or 8, got {factor}")
    })
}

/// Bilinear upsampling with half-pixel centers and edge clamping.
pub fn bilinear_upsample(input: &FeatureField, factor: usize) -> Result<FeatureField> {
    check_factor(factor)?;
    let (c, h, w) = input.shape();
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = FeatureField::zeros(c, oh, ow);
    let mut rows = vec![0.0; oh * w];
    for ch in 0..c {
        let src = input.plane(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for x in 0..w {
                rows[oy * w + x] = (1.0 - fy) * src[y0 * w + x] + fy * src[y1 * w + x];
            }
        }
        let dst = out.plane_mut(ch);
        for oy in 0..oh {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                dst[oy * ow + ox] = (1.0 - fx) * rows[oy * w + x0] + fx * rows[oy * w + x1];
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_upsample`].
pub fn bilinear_upsample_backward(grad_out: &FeatureField, factor: usize) -> Result<FeatureField> {
    check_factor(factor)?;
    let (c, oh, ow) = grad_out.shape();
    ensure(oh % factor == 0 && ow % factor == 0, || {
        format!("gradient {oh}x{ow} is not a multiple of factor {factor}")
    })?;
    let (h, w) = (oh / factor, ow / factor);
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let mut g = FeatureField::zeros(c, h, w);
    let mut rows = vec![0.0; oh * w];
    for ch in 0..c {
        let src = grad_out.plane(ch);
        rows.fill(0.0);
        for oy in 0..oh {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                rows[oy * w + x0] += (1.0 - fx) * v;
                rows[oy * w + x1] += fx * v;
            }
        }
        let dst = g.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for x in 0..w {
                let v = rows[oy * w + x];
                dst[y0 * w + x] += (1.0 - fy) * v;
                dst[y1 * w + x] += fy * v;
            }
        }
    }
    Ok(g)
}
