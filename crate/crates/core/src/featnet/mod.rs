//! The unary encoder/decoder and the pairwise edge-affinity branch.
//!
//! Layer naming: `enc1..encD` encoder blocks (conv 3×3 + relu + 2×2 max-pool),
//! `decD..dec1` mirror decoder blocks (memorized unpool + conv 3×3 + relu, the last
//! one linear), `pw1..pwP` pairwise-only conv blocks, and the `edge_h` (1×2) /
//! `edge_v` (2×1) edge convolutions. The first `shared_blocks` encoder blocks feed
//! both branches.

mod checkpoint;
pub mod layers;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{ConvGeometry, ConvLayer, PoolIndices};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::field::FeatureField;
use crate::spgraph::{PairAxis, PixelPair};
use layers::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    /// Encoder widths; the depth is `widths.len()`.
    pub widths: Vec<usize>,
    pub classes: usize,
    pub shared_blocks: usize,
    pub pairwise_width: usize,
    pub pairwise_blocks: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: vec![8, 16, 32],
            classes: 3,
            shared_blocks: 2,
            pairwise_width: 16,
            pairwise_blocks: 2,
        }
    }
}

/// Which branch a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Shared,
    Unary,
    Pairwise,
}

impl Architecture {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.widths.is_empty(), || "architecture needs at least one encoder block".into())?;
        ensure(self.widths.iter().all(|&w| w > 0) && self.in_channels > 0, || {
            "layer widths must be positive".into()
        })?;
        ensure(self.classes >= 2, || format!("need at least 2 classes, got {}", self.classes))?;
        ensure(
            (1..=self.depth()).contains(&self.shared_blocks) && self.shared_blocks <= 3,
            || {
                format!(
                    "shared_blocks must be in 1..={}, got {}",
                    self.depth().min(3),
                    self.shared_blocks
                )
            },
        )?;
        ensure(self.pairwise_blocks == 0 || self.pairwise_width > 0, || {
            "pairwise_width must be positive".into()
        })
    }

    /// Inputs must be divisible by this in both dimensions.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth()
    }

    pub fn upsample_factor(&self) -> usize {
        1 << self.shared_blocks
    }

    fn edge_in(&self) -> usize {
        if self.pairwise_blocks > 0 {
            self.pairwise_width
        } else {
            self.widths[self.shared_blocks - 1]
        }
    }

    /// `(name, out, in, kh, kw, branch)` for every block, in parameter order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize, usize, Branch)> {
        let d = self.depth();
        let mut v = Vec::new();
        for i in 1..=d {
            let inp = if i == 1 { self.in_channels } else { self.widths[i - 2] };
            let branch = if i <= self.shared_blocks { Branch::Shared } else { Branch::Unary };
            v.push((format!("enc{i}"), self.widths[i - 1], inp, 3, 3, branch));
        }
        for i in (1..=d).rev() {
            let out = if i == 1 { self.classes } else { self.widths[i - 2] };
            v.push((format!("dec{i}"), out, self.widths[i - 1], 3, 3, Branch::Unary));
        }
        for j in 1..=self.pairwise_blocks {
            let inp = if j == 1 { self.widths[self.shared_blocks - 1] } else { self.pairwise_width };
            v.push((format!("pw{j}"), self.pairwise_width, inp, 3, 3, Branch::Pairwise));
        }
        v.push(("edge_h".into(), 1, self.edge_in(), 1, 2, Branch::Pairwise));
        v.push(("edge_v".into(), 1, self.edge_in(), 2, 1, Branch::Pairwise));
        v
    }

    pub fn check_input(&self, h: usize, w: usize, channels: usize) -> Result<()> {
        let m = self.size_multiple();
        ensure(h.is_multiple_of(m) && w.is_multiple_of(m) && h > 0 && w > 0, || {
            format!("input {h}x{w} is not divisible by {m}")
        })?;
        ensure(channels == self.in_channels, || {
            format!("input has {channels} channels, network expects {}", self.in_channels)
        })
    }
}

/// All trainable filter banks, ordered as [`Architecture::layer_specs`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    layers: Vec<ConvLayer>,
    branches: Vec<Branch>,
}

impl NetParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let specs = arch.layer_specs();
        Ok(Self {
            layers: specs
                .iter()
                .map(|(n, o, i, kh, kw, _)| ConvLayer::zeros(n.clone(), *o, *i, *kh, *kw))
                .collect(),
            branches: specs.iter().map(|s| s.5).collect(),
        })
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut p.layers {
            let fan_in = (l.in_ch * l.kh * l.kw) as f64;
            let fan_out = (l.out_ch * l.kh * l.kw) as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            l.weight.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(ConvLayer::zeros_like).collect(),
            branches: self.branches.clone(),
        }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn branch(&self, layer_index: usize) -> Branch {
        self.branches[layer_index]
    }

    pub fn layer(&self, name: &str) -> &ConvLayer {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .unwrap_or_else(|| panic!("no layer named {name}"))
    }

    fn layer_mut(&mut self, name: &str) -> &mut ConvLayer {
        self.layers
            .iter_mut()
            .find(|l| l.name == name)
            .unwrap_or_else(|| panic!("no layer named {name}"))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Flat view for optimizers and gradient probes: each layer's weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Layer index and branch owning flat parameter `k`.
    pub fn locate(&self, mut k: usize) -> Option<(usize, Branch)> {
        for (i, l) in self.layers.iter().enumerate() {
            if k < l.param_count() {
                return Some((i, self.branches[i]));
            }
            k -= l.param_count();
        }
        None
    }

    pub fn get(&self, k: usize) -> f64 {
        *self.iter().nth(k).expect("parameter index out of range")
    }

    pub fn set(&mut self, k: usize, v: f64) {
        *self.iter_mut().nth(k).expect("parameter index out of range") = v;
    }

    pub fn add_assign(&mut self, other: &NetParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Zeroes every block belonging to `branch`.
    pub fn zero_branch(&mut self, branch: Branch) {
        for (l, b) in self.layers.iter_mut().zip(&self.branches) {
            if *b == branch {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
    }

    pub fn branch_norm(&self, branch: Branch) -> f64 {
        self.layers
            .iter()
            .zip(&self.branches)
            .filter(|(_, b)| **b == branch)
            .flat_map(|(l, _)| l.weight.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Non-negative affinities between 4-adjacent pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelAffinity {
    height: usize,
    width: usize,
    /// `H × (W−1)`, entry `(y, x)` links `(y, x)`–`(y, x+1)`.
    horizontal: Vec<f64>,
    /// `(H−1) × W`, entry `(y, x)` links `(y, x)`–`(y+1, x)`.
    vertical: Vec<f64>,
}

impl PixelAffinity {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            horizontal: vec![v; height * (width - 1)],
            vertical: vec![v; (height - 1) * width],
        }
    }

    pub fn from_parts(height: usize, width: usize, horizontal: Vec<f64>, vertical: Vec<f64>) -> Result<Self> {
        ensure(
            horizontal.len() == height * (width - 1) && vertical.len() == (height - 1) * width,
            || format!("affinity maps do not fit a {height}x{width} image"),
        )?;
        Ok(Self {
            height,
            width,
            horizontal,
            vertical,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[f64] {
        &self.vertical
    }

    pub fn horizontal_mut(&mut self) -> &mut [f64] {
        &mut self.horizontal
    }

    pub fn vertical_mut(&mut self) -> &mut [f64] {
        &mut self.vertical
    }

    fn slot(&self, pair: &PixelPair) -> (bool, usize) {
        match pair.axis {
            PairAxis::Horizontal => (true, pair.y * (self.width - 1) + pair.x),
            PairAxis::Vertical => (false, pair.y * self.width + pair.x),
        }
    }

    pub fn get(&self, pair: &PixelPair) -> f64 {
        match self.slot(pair) {
            (true, i) => self.horizontal[i],
            (false, i) => self.vertical[i],
        }
    }

    pub fn add(&mut self, pair: &PixelPair, v: f64) {
        match self.slot(pair) {
            (true, i) => self.horizontal[i] += v,
            (false, i) => self.vertical[i] += v,
        }
    }

    pub fn dot(&self, other: &PixelAffinity) -> f64 {
        let h: f64 = self.horizontal.iter().zip(&other.horizontal).map(|(a, b)| a * b).sum();
        let v: f64 = self.vertical.iter().zip(&other.vertical).map(|(a, b)| a * b).sum();
        h + v
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.horizontal.iter().chain(&self.vertical)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.horizontal.iter_mut().chain(self.vertical.iter_mut())
    }
}

#[derive(Debug, Clone)]
struct EncoderCache {
    /// Conv inputs `x_0 .. x_{k-1}` (x_0 is the image).
    inputs: Vec<FeatureField>,
    /// Conv outputs before relu.
    pre: Vec<FeatureField>,
    indices: Vec<PoolIndices>,
    /// Pooled output of the last computed block.
    output: FeatureField,
}

#[derive(Debug, Clone)]
struct DecoderCache {
    /// Per decoder block, ordered `dec_D .. dec_1`: unpooled input and conv output.
    unpooled: Vec<FeatureField>,
    pre: Vec<FeatureField>,
}

#[derive(Debug, Clone)]
struct PairwiseCache {
    inputs: Vec<FeatureField>,
    pre: Vec<FeatureField>,
    upsampled: FeatureField,
    edge_h: FeatureField,
    edge_v: FeatureField,
}

/// Everything the backward passes need from a forward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    encoder: EncoderCache,
    /// Output of the last shared block, kept for the pairwise branch.
    shared_out: FeatureField,
    decoder: Option<DecoderCache>,
    pairwise: Option<PairwiseCache>,
    pub z: Option<FeatureField>,
    pub wp: Option<PixelAffinity>,
}

/// Stateless wrapper binding an architecture to its forward/backward passes.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    fn check_params(&self, params: &NetParams) -> Result<()> {
        let specs = self.arch.layer_specs();
        ensure(specs.len() == params.layers.len(), || {
            format!(
                "parameter set has {} blocks, architecture has {}",
                params.layers.len(),
                specs.len()
            )
        })?;
        for ((n, o, i, kh, kw, _), l) in specs.iter().zip(&params.layers) {
            if *n != l.name || [*o, *i, *kh, *kw] != l.weight_shape() {
                return Err(Error::invalid(format!(
                    "layer {} has shape {:?}, architecture expects {} {:?}",
                    l.name,
                    l.weight_shape(),
                    n,
                    [o, i, kh, kw]
                )));
            }
        }
        Ok(())
    }

    /// Runs the encoder, then the decoder when `unary`, the pairwise branch when `pairwise`.
    pub fn forward(&self, image: &FeatureField, params: &NetParams, unary: bool, pairwise: bool) -> Result<NetCache> {
        self.check_params(params)?;
        self.arch.check_input(image.height(), image.width(), image.channels())?;
        let depth = if unary { self.arch.depth() } else { self.arch.shared_blocks };
        let mut enc = EncoderCache {
            inputs: Vec::with_capacity(depth),
            pre: Vec::with_capacity(depth),
            indices: Vec::with_capacity(depth),
            output: image.clone(),
        };
        let mut shared_out = None;
        for i in 1..=depth {
            let x = std::mem::replace(&mut enc.output, FeatureField::zeros(0, 0, 0));
            let a = conv2d(&x, params.layer(&format!("enc{i}")), ConvGeometry::SAME3)?;
            let (pooled, idx) = maxpool2x2(&relu(&a))?;
            enc.inputs.push(x);
            enc.pre.push(a);
            enc.indices.push(idx);
            enc.output = pooled;
            if i == self.arch.shared_blocks {
                shared_out = Some(enc.output.clone());
            }
        }
        let shared_out = shared_out.expect("shared blocks lie within the encoder");

        let (decoder, z) = if unary {
            let d = self.arch.depth();
            let mut dec = DecoderCache {
                unpooled: Vec::with_capacity(d),
                pre: Vec::with_capacity(d),
            };
            let mut y = enc.output.clone();
            for i in (1..=d).rev() {
                let r = &enc.pre[i - 1];
                let u = unpool2x2(&y, &enc.indices[i - 1], (r.height(), r.width()))?;
                let b = conv2d(&u, params.layer(&format!("dec{i}")), ConvGeometry::SAME3)?;
                y = if i > 1 { relu(&b) } else { b.clone() };
                dec.unpooled.push(u);
                dec.pre.push(b);
            }
            (Some(dec), Some(y))
        } else {
            (None, None)
        };

        let (pw_cache, wp) = if pairwise {
            let (c, wp) = self.pairwise_head(&shared_out, params)?;
            (Some(c), Some(wp))
        } else {
            (None, None)
        };

        Ok(NetCache {
            encoder: enc,
            shared_out,
            decoder,
            pairwise: pw_cache,
            z,
            wp,
        })
    }

    fn pairwise_head(&self, shared: &FeatureField, params: &NetParams) -> Result<(PairwiseCache, PixelAffinity)> {
        let mut f = shared.clone();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for j in 1..=self.arch.pairwise_blocks {
            let c = conv2d(&f, params.layer(&format!("pw{j}")), ConvGeometry::SAME3)?;
            inputs.push(std::mem::replace(&mut f, relu(&c)));
            pre.push(c);
        }
        let up = bilinear_upsample(&f, self.arch.upsample_factor())?;
        let eh = conv2d(&up, params.layer("edge_h"), ConvGeometry::VALID)?;
        let ev = conv2d(&up, params.layer("edge_v"), ConvGeometry::VALID)?;
        let (h, w) = (up.height(), up.width());
        let wp = PixelAffinity::from_parts(
            h,
            w,
            eh.as_slice().iter().map(|&v| softplus_scalar(v)).collect(),
            ev.as_slice().iter().map(|&v| softplus_scalar(v)).collect(),
        )?;
        inputs.push(f);
        Ok((
            PairwiseCache {
                inputs,
                pre,
                upsampled: up,
                edge_h: eh,
                edge_v: ev,
            },
            wp,
        ))
    }

    pub fn unary_forward(&self, image: &FeatureField, params: &NetParams) -> Result<(FeatureField, NetCache)> {
        let cache = self.forward(image, params, true, false)?;
        Ok((cache.z.clone().unwrap(), cache))
    }

    pub fn pairwise_forward(&self, image: &FeatureField, params: &NetParams) -> Result<(PixelAffinity, NetCache)> {
        let cache = self.forward(image, params, false, true)?;
        Ok((cache.wp.clone().unwrap(), cache))
    }

    /// Gradients for the shared and unary blocks from `dL/dZ`.
    pub fn unary_backward(&self, cache: &NetCache, params: &NetParams, dz: &FeatureField) -> Result<NetParams> {
        self.backward(cache, params, Some(dz), None)
    }

    /// Gradients for the shared and pairwise blocks from `dL/dWP`.
    pub fn pairwise_backward(&self, cache: &NetCache, params: &NetParams, dwp: &PixelAffinity) -> Result<NetParams> {
        self.backward(cache, params, None, Some(dwp))
    }

    /// Joint backward; shared blocks receive the sum of both branches' contributions.
    pub fn backward(
        &self,
        cache: &NetCache,
        params: &NetParams,
        dz: Option<&FeatureField>,
        dwp: Option<&PixelAffinity>,
    ) -> Result<NetParams> {
        let mut grads = params.zeros_like();
        let enc = &cache.encoder;
        let shared = self.arch.shared_blocks;

        // gradient w.r.t. the pooled output of the deepest encoder block that was run
        let mut g_top: Option<FeatureField> = None;
        if let Some(dz) = dz {
            let dec = cache
                .decoder
                .as_ref()
                .ok_or_else(|| Error::invalid("unary backward without a unary forward"))?;
            let d = self.arch.depth();
            ensure(dz.shape() == dec.pre[d - 1].shape(), || {
                format!("dL/dZ shape {:?} does not match Z {:?}", dz.shape(), dec.pre[d - 1].shape())
            })?;
            let mut g = dz.clone();
            // dec blocks were cached in order dec_D .. dec_1
            for i in 1..=d {
                let k = d - i;
                if i > 1 {
                    g = relu_backward(&dec.pre[k], &g);
                }
                let name = format!("dec{i}");
                let (gu, gl) = conv2d_backward(&dec.unpooled[k], params.layer(&name), ConvGeometry::SAME3, &g)?;
                *grads.layer_mut(&name) = gl;
                g = unpool2x2_backward(&gu, &enc.indices[i - 1])?;
            }
            g_top = Some(g);
        }

        let mut g_shared: Option<FeatureField> = None;
        if let Some(dwp) = dwp {
            let pw = cache
                .pairwise
                .as_ref()
                .ok_or_else(|| Error::invalid("pairwise backward without a pairwise forward"))?;
            let (h, w) = (pw.upsampled.height(), pw.upsampled.width());
            ensure(dwp.dims() == (h, w), || {
                format!("dL/dWP is {:?}, affinities are {:?}", dwp.dims(), (h, w))
            })?;
            let gh: Vec<f64> = pw
                .edge_h
                .as_slice()
                .iter()
                .zip(dwp.horizontal())
                .map(|(&x, &g)| g * sigmoid(x))
                .collect();
            let gv: Vec<f64> = pw
                .edge_v
                .as_slice()
                .iter()
                .zip(dwp.vertical())
                .map(|(&x, &g)| g * sigmoid(x))
                .collect();
            let gh = FeatureField::from_vec(1, h, w - 1, gh)?;
            let gv = FeatureField::from_vec(1, h - 1, w, gv)?;
            let (mut gup, gl) = conv2d_backward(&pw.upsampled, params.layer("edge_h"), ConvGeometry::VALID, &gh)?;
            *grads.layer_mut("edge_h") = gl;
            let (gup_v, gl) = conv2d_backward(&pw.upsampled, params.layer("edge_v"), ConvGeometry::VALID, &gv)?;
            *grads.layer_mut("edge_v") = gl;
            gup.add_assign(&gup_v);
            let mut g = bilinear_upsample_backward(&gup, self.arch.upsample_factor())?;
            for j in (1..=self.arch.pairwise_blocks).rev() {
                g = relu_backward(&pw.pre[j - 1], &g);
                let name = format!("pw{j}");
                let (gi, gl) = conv2d_backward(&pw.inputs[j - 1], params.layer(&name), ConvGeometry::SAME3, &g)?;
                *grads.layer_mut(&name) = gl;
                g = gi;
            }
            debug_assert_eq!(g.shape(), cache.shared_out.shape());
            g_shared = Some(g);
        }

        let top = enc.inputs.len();
        let mut g = g_top;
        for i in (1..=top).rev() {
            if i == shared {
                g = match (g, g_shared.take()) {
                    (Some(mut a), Some(b)) => {
                        a.add_assign(&b);
                        Some(a)
                    }
                    (a, b) => a.or(b),
                };
            }
            let Some(gi) = g.take() else { continue };
            let r = &enc.pre[i - 1];
            let gr = unpool2x2(&gi, &enc.indices[i - 1], (r.height(), r.width()))?;
            let ga = relu_backward(r, &gr);
            let name = format!("enc{i}");
            let (gx, gl) = conv2d_backward(&enc.inputs[i - 1], params.layer(&name), ConvGeometry::SAME3, &ga)?;
            *grads.layer_mut(&name) = gl;
            if i > 1 {
                g = Some(gx);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, h: usize, w: usize) -> FeatureField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureField::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn jitter_biases(p: &mut NetParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }

    #[test]
    fn layer_specs_follow_the_toy_architecture() {
        let arch = Architecture::default();
        let names: Vec<String> = arch.layer_specs().into_iter().map(|s| s.0).collect();
        assert_eq!(
            names,
            ["enc1", "enc2", "enc3", "dec3", "dec2", "dec1", "pw1", "pw2", "edge_h", "edge_v"]
        );
        let p = NetParams::zeros(&arch).unwrap();
        assert_eq!(p.layer("enc1").weight_shape(), [8, 3, 3, 3]);
        assert_eq!(p.layer("dec1").weight_shape(), [3, 8, 3, 3]);
        assert_eq!(p.layer("pw1").weight_shape(), [16, 16, 3, 3]);
        assert_eq!(p.layer("edge_h").weight_shape(), [1, 16, 1, 2]);
        assert_eq!(p.layer("edge_v").weight_shape(), [1, 16, 2, 1]);
        assert_eq!(p.branch(0), Branch::Shared);
        assert_eq!(p.branch(2), Branch::Unary);
        assert_eq!(p.branch(8), Branch::Pairwise);
    }

    #[test]
    fn zero_params_give_zero_scores() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::zeros(&arch).unwrap();
        let (z, _) = net.unary_forward(&FeatureField::zeros(3, 16, 16), &p).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shapes() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::init(&arch, 3).unwrap();
        let img = random_image(1, 32, 32);
        let cache = net.forward(&img, &p, true, true).unwrap();
        assert_eq!(cache.z.as_ref().unwrap().shape(), (3, 32, 32));
        let wp = cache.wp.as_ref().unwrap();
        assert_eq!(wp.horizontal().len(), 32 * 31);
        assert_eq!(wp.vertical().len(), 31 * 32);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::init(&arch, 3).unwrap();
        assert!(matches!(
            net.unary_forward(&FeatureField::zeros(3, 12, 16), &p),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_image_gives_constant_affinities() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let mut p = NetParams::init(&arch, 4).unwrap();
        jitter_biases(&mut p, 5);
        let img = FeatureField::filled(3, 64, 64, 0.4);
        let (wp, _) = net.pairwise_forward(&img, &p).unwrap();
        // zero padding makes a band along the borders differ; the rest is translation invariant
        let h = &wp.horizontal()[..];
        let v0 = h[32 * 63 + 31];
        for y in 24..40 {
            for x in 24..40 {
                assert!((h[y * 63 + x] - v0).abs() < 1e-12, "({y},{x})");
            }
        }
        assert!(wp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn joint_backward_is_sum_of_branches() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let mut p = NetParams::init(&arch, 6).unwrap();
        jitter_biases(&mut p, 7);
        let img = random_image(8, 16, 16);
        let cache = net.forward(&img, &p, true, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dz = FeatureField::from_fn(3, 16, 16, |_, _, _| rng.random_range(-1.0..1.0));
        let mut dwp = PixelAffinity::zeros(16, 16);
        dwp.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let joint = net.backward(&cache, &p, Some(&dz), Some(&dwp)).unwrap();
        let mut sum = net.unary_backward(&cache, &p, &dz).unwrap();
        let pw = net.pairwise_backward(&cache, &p, &dwp).unwrap();
        assert_eq!(sum.branch_norm(Branch::Pairwise), 0.0);
        assert_eq!(pw.branch_norm(Branch::Unary), 0.0);
        assert!(pw.branch_norm(Branch::Shared) > 0.0);
        sum.add_assign(&pw);
        for (a, b) in joint.iter().zip(sum.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    fn probe_gradients(unary: bool, seed: u64) {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let mut p = NetParams::init(&arch, seed).unwrap();
        jitter_biases(&mut p, seed + 1);
        let img = random_image(seed + 2, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let dz = FeatureField::from_fn(3, 16, 16, |_, _, _| rng.random_range(-1.0..1.0));
        let mut dwp = PixelAffinity::zeros(16, 16);
        dwp.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let loss = |p: &NetParams| {
            let c = net.forward(&img, p, unary, !unary).unwrap();
            if unary {
                c.z.unwrap().dot(&dz)
            } else {
                c.wp.unwrap().dot(&dwp)
            }
        };
        let cache = net.forward(&img, &p, unary, !unary).unwrap();
        let grads = if unary {
            net.unary_backward(&cache, &p, &dz).unwrap()
        } else {
            net.pairwise_backward(&cache, &p, &dwp).unwrap()
        };
        let eps = 1e-5;
        let n = p.param_count();
        let mut checked = 0;
        while checked < 20 {
            let k = rng.random_range(0..n);
            let (_, branch) = p.locate(k).unwrap();
            if branch == if unary { Branch::Pairwise } else { Branch::Unary } {
                assert_eq!(grads.get(k), 0.0);
                continue;
            }
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.set(k, p.get(k) + eps);
            pm.set(k, p.get(k) - eps);
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
            let an = grads.get(k);
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err <= 1e-3, "param {k}: fd {fd} analytic {an}");
            checked += 1;
        }
    }

    #[test]
    fn unary_parameter_gradcheck() {
        probe_gradients(true, 20);
    }

    #[test]
    fn pairwise_parameter_gradcheck() {
        probe_gradients(false, 30);
    }
}
