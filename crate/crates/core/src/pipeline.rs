//! End-to-end composition: image → unary scores and pixel affinities → superpixel
//! pooling → continuous CRF → per-pixel softmax, the full backward chain, and the
//! SGD training loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ccrf::{
    assemble_system, ccrf_backward_phi, ccrf_backward_w, ccrf_backward_zs, ccrf_forward, CrfOutput, CrfSystem,
    SolverConfig, DEFAULT_LAMBDA,
};
use crate::error::{ensure, Error, Result};
use crate::evalio::{Confusion, EvalReport};
use crate::featnet::{NetCache, NetParams, Network, PixelAffinity};
use crate::field::FeatureField;
use crate::spgraph::{build_graph, oversegment, ImagePlane, SuperpixelGraph, SuperpixelMap};
use crate::sppool::{
    pool_pairwise, pool_pairwise_backward, pool_unary, pool_unary_backward, RegionAffinity, RegionFeatures,
    UnaryPoolGrad,
};

pub use crate::sppool::{broadcast_backward, broadcast_to_pixels};

/// Per-pixel class ids in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        ensure(labels.len() == height * width && height > 0 && width > 0, || {
            format!("{} labels for a {height}x{width} map", labels.len())
        })?;
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn max_class(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize >= classes) {
            Some(i) => Err(Error::invalid(format!(
                "label {} at pixel {} is not below K={classes}",
                self.labels[i], i
            ))),
            None => Ok(()),
        }
    }
}

/// Deliberate defects for checking that the gradient suite notices them.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    pub flip_phi_sign: bool,
    pub drop_pair_normalization: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub lambda: f64,
    pub solver: SolverConfig,
    /// When false the pairwise branch is skipped and `W ≡ 0`.
    pub pairwise: bool,
    pub unary_pool_grad: UnaryPoolGrad,
    #[doc(hidden)]
    pub faults: Faults,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            solver: SolverConfig::default(),
            pairwise: true,
            unary_pool_grad: UnaryPoolGrad::Adjoint,
            faults: Faults::default(),
        }
    }
}

/// An image with its cached oversegmentation and optional ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ImagePlane,
    pub labels: Option<LabelMap>,
    pub spmap: SuperpixelMap,
    pub graph: SuperpixelGraph,
}

impl Sample {
    pub fn prepare(image: ImagePlane, labels: Option<LabelMap>, target_regions: usize, compactness: f64) -> Result<Self> {
        if let Some(l) = &labels {
            ensure(l.height() == image.height() && l.width() == image.width(), || {
                format!(
                    "labels are {}x{} but the image is {}x{}",
                    l.height(),
                    l.width(),
                    image.height(),
                    image.width()
                )
            })?;
        }
        let spmap = oversegment(&image, target_regions, compactness).map_err(|e| e.in_stage("oversegment"))?;
        let graph = build_graph(&spmap);
        Ok(Self {
            image,
            labels,
            spmap,
            graph,
        })
    }

    pub fn with_spmap(image: ImagePlane, labels: Option<LabelMap>, spmap: SuperpixelMap) -> Result<Self> {
        ensure(spmap.height() == image.height() && spmap.width() == image.width(), || {
            "superpixel map does not match the image".into()
        })?;
        let graph = build_graph(&spmap);
        Ok(Self {
            image,
            labels,
            spmap,
            graph,
        })
    }
}

/// Numerically stable per-pixel softmax over channels.
pub fn softmax(logits: &FeatureField) -> FeatureField {
    let (k, h, w) = logits.shape();
    let mut out = FeatureField::zeros(k, h, w);
    let n = h * w;
    for i in 0..n {
        let m = (0..k).map(|c| logits.as_slice()[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for c in 0..k {
            let e = (logits.as_slice()[c * n + i] - m).exp();
            out.as_mut_slice()[c * n + i] = e;
            s += e;
        }
        for c in 0..k {
            out.as_mut_slice()[c * n + i] /= s;
        }
    }
    out
}

/// Mean per-pixel cross-entropy and its gradient `(softmax − onehot) / HW`.
pub fn softmax_xent(logits: &FeatureField, labels: &LabelMap) -> Result<(f64, FeatureField)> {
    let (k, h, w) = logits.shape();
    ensure(labels.height() == h && labels.width() == w, || {
        format!("labels are {}x{}, logits {h}x{w}", labels.height(), labels.width())
    })?;
    labels.check_classes(k)?;
    let n = h * w;
    let probs = softmax(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &l) in labels.as_slice().iter().enumerate() {
        let l = l as usize;
        let z = |c: usize| logits.as_slice()[c * n + i];
        let top = (1..k).fold(0, |b, c| if z(c) > z(b) { c } else { b });
        // ln Σ exp(z_c − z_l) = (z_top − z_l) + ln(1 + Σ_{c≠top} exp(z_c − z_top))
        let rest: f64 = (0..k).filter(|&c| c != top).map(|c| (z(c) - z(top)).exp()).sum();
        loss += (z(top) - z(l)) + rest.ln_1p();
        grad.as_mut_slice()[l * n + i] -= 1.0;
    }
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, grad))
}

/// Everything computed by [`forward`]; consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    net: NetCache,
    pub z: FeatureField,
    pub zs: RegionFeatures,
    pub wp: Option<PixelAffinity>,
    pub w: RegionAffinity,
    pub system: CrfSystem,
    pub crf: CrfOutput,
    pub logits: FeatureField,
    pub probabilities: FeatureField,
    pub loss: Option<f64>,
    grad_logits: Option<FeatureField>,
}

impl ForwardPass {
    /// Argmax class per pixel.
    pub fn prediction(&self) -> LabelMap {
        let (k, h, w) = self.probabilities.shape();
        let n = h * w;
        let p = self.probabilities.as_slice();
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..k {
                    if p[c * n + i] > p[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            height: h,
            width: w,
            labels,
        }
    }
}

pub fn forward(net: &Network, params: &NetParams, sample: &Sample, cfg: &PipelineConfig) -> Result<ForwardPass> {
    let cache = net
        .forward(sample.image.field(), params, true, cfg.pairwise)
        .map_err(|e| e.in_stage("network"))?;
    let z = cache.z.clone().expect("unary forward requested");
    let zs = pool_unary(&z, &sample.spmap).map_err(|e| e.in_stage("pool_unary"))?;
    let (wp, w) = match &cache.wp {
        Some(wp) => {
            let w = pool_pairwise(wp, &sample.graph).map_err(|e| e.in_stage("pool_pairwise"))?;
            (Some(wp.clone()), w)
        }
        None => (None, RegionAffinity::zeros(&sample.graph)),
    };
    let system = assemble_system(&w, cfg.lambda)
        .map_err(|e| e.in_stage("assemble_system"))?
        .with_solver(cfg.solver);
    let crf = ccrf_forward(&zs, &system).map_err(|e| e.in_stage("ccrf_forward"))?;
    let logits = broadcast_to_pixels(&crf.zc, &sample.spmap)?;
    let probabilities = softmax(&logits);
    let (loss, grad_logits) = match &sample.labels {
        Some(l) => {
            let (loss, g) = softmax_xent(&logits, l).map_err(|e| e.in_stage("softmax_xent"))?;
            (Some(loss), Some(g))
        }
        None => (None, None),
    };
    Ok(ForwardPass {
        net: cache,
        z,
        zs,
        wp,
        w,
        system,
        crf,
        logits,
        probabilities,
        loss,
        grad_logits,
    })
}

/// Intermediate gradients of one backward pass, exposed for inspection.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub params: NetParams,
    pub grad_zc: RegionFeatures,
    pub grad_zs: RegionFeatures,
    pub grad_w: Option<RegionAffinity>,
}

pub(crate) fn pool_pairwise_backward_unnormalized(grad: &RegionAffinity, graph: &SuperpixelGraph) -> PixelAffinity {
    let (h, w) = graph.image_dims();
    let mut out = PixelAffinity::zeros(h, w);
    for (g, e) in grad.weights().iter().zip(graph.edges()) {
        for pair in &e.boundary {
            out.add(pair, *g);
        }
    }
    out
}

/// Parameter gradients of the mean cross-entropy.
pub fn backward(
    net: &Network,
    params: &NetParams,
    sample: &Sample,
    pass: &ForwardPass,
    cfg: &PipelineConfig,
) -> Result<BackwardPass> {
    let grad_logits = pass
        .grad_logits
        .as_ref()
        .ok_or_else(|| Error::invalid("backward needs a forward pass with labels"))?;
    let grad_zc = broadcast_backward(grad_logits, &sample.spmap)?;
    let grad_zs = ccrf_backward_zs(&grad_zc, &pass.system).map_err(|e| e.in_stage("ccrf_backward_zs"))?;
    let dz = pool_unary_backward(&grad_zs, &sample.spmap, cfg.unary_pool_grad)?;

    let (grad_w, dwp) = if cfg.pairwise {
        let mut dphi = ccrf_backward_phi(&grad_zs, &pass.crf.zc, &pass.system)?;
        if cfg.faults.flip_phi_sign {
            dphi.negate();
        }
        let dw = ccrf_backward_w(&dphi, pass.system.size())?;
        let dwp = if cfg.faults.drop_pair_normalization {
            pool_pairwise_backward_unnormalized(&dw, &sample.graph)
        } else {
            pool_pairwise_backward(&dw, &sample.graph)?
        };
        (Some(dw), Some(dwp))
    } else {
        (None, None)
    };
    let params = net
        .backward(&pass.net, params, Some(&dz), dwp.as_ref())
        .map_err(|e| e.in_stage("network backward"))?;
    Ok(BackwardPass {
        params,
        grad_zc,
        grad_zs,
        grad_w,
    })
}

/// `v ← momentum·v − lr·g; θ ← θ + v`.
pub fn sgd_step_slice(theta: &mut [f64], grad: &[f64], lr: f64, momentum: f64, velocity: &mut [f64]) {
    for ((t, g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
}

pub fn sgd_step(params: &mut NetParams, grads: &NetParams, lr: f64, momentum: f64, velocity: &mut NetParams) {
    for ((t, g), v) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiply the learning rate by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub classes: usize,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            epochs: 50,
            batch_size: 1,
            lr_decay_every: 20,
            lr_decay_factor: 0.5,
            classes: 3,
            seed: 42,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.learning_rate > 0.0 && self.learning_rate.is_finite(), || {
            format!("learning rate must be positive, got {}", self.learning_rate)
        })?;
        ensure((0.0..1.0).contains(&self.momentum), || {
            format!("momentum must be in [0, 1), got {}", self.momentum)
        })?;
        ensure(self.classes >= 2, || format!("need K >= 2, got {}", self.classes))?;
        ensure(self.batch_size >= 1, || "batch size must be at least 1".into())?;
        ensure(self.lr_decay_every >= 1, || "lr_decay_every must be at least 1".into())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi(((epoch - 1) / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub pixel_acc: f64,
    pub mean_f: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.9} pixel_acc={:.6} mean_f={:.6}",
            self.epoch, self.loss, self.pixel_acc, self.mean_f
        )
    }
}

pub struct TrainOutcome {
    pub params: NetParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Seeded SGD over `dataset`. `on_epoch` sees each epoch's metrics and parameters.
///
/// Metrics are accumulated from the forward passes made during the epoch, each
/// before its example's update.
pub fn train(
    net: &Network,
    init: NetParams,
    dataset: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &NetParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure(!dataset.is_empty(), || "training set is empty".into())?;
    ensure(net.arch().classes == cfg.classes, || {
        format!("network has {} classes, config says {}", net.arch().classes, cfg.classes)
    })?;
    for (i, s) in dataset.iter().enumerate() {
        let l = s
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("training example {i} has no labels")))?;
        l.check_classes(cfg.classes)?;
    }
    let mut params = init;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut confusion = Confusion::new(cfg.classes);
        let mut acc = params.zeros_like();
        let mut in_batch = 0;
        for (step, &i) in order.iter().enumerate() {
            let sample = &dataset[i];
            let pass = forward(net, &params, sample, &cfg.pipeline).map_err(|e| e.in_stage("train forward"))?;
            loss_sum += pass.loss.unwrap();
            confusion.add(&pass.prediction(), sample.labels.as_ref().unwrap())?;
            let grads = backward(net, &params, sample, &pass, &cfg.pipeline)?.params;
            acc.add_assign(&grads);
            in_batch += 1;
            if in_batch == cfg.batch_size || step + 1 == order.len() {
                acc.scale(1.0 / in_batch as f64);
                sgd_step(&mut params, &acc, lr, cfg.momentum, &mut velocity);
                acc.scale(0.0);
                in_batch = 0;
            }
        }
        if !params.is_finite() {
            return Err(Error::invalid(format!("parameters diverged in epoch {epoch}")));
        }
        let report = EvalReport::from_confusion(&confusion);
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            pixel_acc: report.overall_accuracy,
            mean_f: report.mean_f(),
        };
        on_epoch(&m, &params)?;
        metrics.push(m);
    }
    Ok(TrainOutcome { params, metrics })
}

/// Argmax labels for an unlabeled sample.
pub fn infer(net: &Network, params: &NetParams, sample: &Sample, cfg: &PipelineConfig) -> Result<LabelMap> {
    Ok(forward(net, params, sample, cfg)?.prediction())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{Architecture, Branch};
    use rand::Rng;

    fn sample(seed: u64, size: usize, regions: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = FeatureField::from_fn(3, size, size, |c, y, x| {
            let base = if x < size / 2 { 0.2 } else { 0.7 } + 0.1 * c as f64;
            (base + 0.05 * ((y * 3 + x) % 5) as f64 + rng.random_range(0.0..0.05)).min(1.0)
        });
        let labels = LabelMap::new(
            size,
            size,
            (0..size * size)
                .map(|i| if i % size < size / 2 { 0 } else if i / size < size / 2 { 1 } else { 2 })
                .collect(),
        )
        .unwrap();
        Sample::prepare(ImagePlane::new(img).unwrap(), Some(labels), regions, 10.0).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::zeros(&arch).unwrap();
        let s = sample(1, 16, 8);
        let pass = forward(&net, &p, &s, &PipelineConfig::default()).unwrap();
        assert!(pass.probabilities.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((pass.loss.unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::init(&arch, 2).unwrap();
        let s = sample(3, 16, 8);
        let pass = forward(&net, &p, &s, &PipelineConfig::default()).unwrap();
        let n = 256;
        for i in 0..n {
            let sum: f64 = (0..3).map(|c| pass.probabilities.as_slice()[c * n + i]).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        assert!(pass.loss.unwrap() >= 0.0);
    }

    #[test]
    fn ablated_pairwise_equals_pooled_unary_softmax() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::init(&arch, 4).unwrap();
        let s = sample(5, 16, 8);
        let cfg = PipelineConfig {
            pairwise: false,
            ..PipelineConfig::default()
        };
        let pass = forward(&net, &p, &s, &cfg).unwrap();
        let (z, _) = net.unary_forward(s.image.field(), &p).unwrap();
        let direct = softmax(&broadcast_to_pixels(&pool_unary(&z, &s.spmap).unwrap(), &s.spmap).unwrap());
        for (a, b) in pass.probabilities.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = backward(&net, &p, &s, &pass, &cfg).unwrap();
        assert_eq!(g.params.branch_norm(Branch::Pairwise), 0.0);
        assert!(g.params.branch_norm(Branch::Unary) > 0.0);
    }

    #[test]
    fn softmax_xent_examples() {
        let l = LabelMap::new(1, 1, vec![0]).unwrap();
        let eq = FeatureField::from_vec(3, 1, 1, vec![0.5; 3]).unwrap();
        assert!((softmax_xent(&eq, &l).unwrap().0 - 3f64.ln()).abs() < 1e-15);
        let z = FeatureField::from_vec(2, 1, 1, vec![10.0, -10.0]).unwrap();
        let (loss, _) = softmax_xent(&z, &l).unwrap();
        // −ln σ(20) = ln(1 + e^−20)
        assert!((loss - (-20f64).exp().ln_1p()).abs() < 1e-20);
        assert!((loss - 2.06e-9).abs() < 0.01e-9);
        let bad = LabelMap::new(1, 1, vec![2]).unwrap();
        assert!(matches!(softmax_xent(&z, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn softmax_xent_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = FeatureField::from_fn(3, 2, 3, |_, _, _| rng.random_range(-2.0..2.0));
        let l = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let (_, g) = softmax_xent(&z, &l).unwrap();
        let eps = 1e-5;
        for k in 0..18 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.as_mut_slice()[k] += eps;
            zm.as_mut_slice()[k] -= eps;
            let fd = (softmax_xent(&zp, &l).unwrap().0 - softmax_xent(&zm, &l).unwrap().0) / (2.0 * eps);
            let a = g.as_slice()[k];
            assert!((fd - a).abs() <= 1e-6 * fd.abs().max(a.abs()).max(1e-3));
        }
    }

    #[test]
    fn sgd_examples() {
        let mut theta = vec![1.5, -2.0];
        let g = theta.clone();
        let mut v = vec![0.0; 2];
        sgd_step_slice(&mut theta, &g, 1.0, 0.0, &mut v);
        assert_eq!(theta, vec![0.0, 0.0]);

        let mut theta = vec![1.0, 2.0];
        let mut v = vec![0.0; 2];
        sgd_step_slice(&mut theta, &[0.5, -1.0], 0.1, 0.9, &mut v);
        assert_eq!(theta, vec![1.0 - 0.05, 2.0 + 0.1]);

        // f(θ) = ½ Σ a_i (θ_i − c_i)², minimized at c
        let a = [1.0, 4.0, 0.5];
        let c = [3.0, -1.0, 0.25];
        let mut theta = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        for _ in 0..200 {
            let g: Vec<f64> = (0..3).map(|i| a[i] * (theta[i] - c[i])).collect();
            sgd_step_slice(&mut theta, &g, 0.1, 0.5, &mut v);
        }
        for i in 0..3 {
            assert!((theta[i] - c[i]).abs() < 1e-6, "{theta:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let data: Vec<Sample> = (0..3).map(|i| sample(10 + i, 16, 8)).collect();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let init = NetParams::init(&arch, 1).unwrap();
        let init_loss: f64 = data
            .iter()
            .map(|s| forward(&net, &init, s, &cfg.pipeline).unwrap().loss.unwrap())
            .sum::<f64>()
            / 3.0;
        let a = train(&net, init.clone(), &data, &cfg, |_, _| Ok(())).unwrap();
        let b = train(&net, init, &data, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        let after: f64 = data
            .iter()
            .map(|s| forward(&net, &a.params, s, &cfg.pipeline).unwrap().loss.unwrap())
            .sum::<f64>()
            / 3.0;
        assert!(after < init_loss, "{after} vs {init_loss}");
    }

    #[test]
    fn inferred_labels_are_constant_per_superpixel() {
        let arch = Architecture::default();
        let net = Network::new(arch.clone()).unwrap();
        let p = NetParams::init(&arch, 8).unwrap();
        let s = sample(9, 16, 8);
        let pred = infer(&net, &p, &s, &PipelineConfig::default()).unwrap();
        let mut seen = vec![None; s.spmap.region_count()];
        for (i, &r) in s.spmap.assignment().iter().enumerate() {
            let slot = &mut seen[r as usize];
            match slot {
                None => *slot = Some(pred.as_slice()[i]),
                Some(v) => assert_eq!(*v, pred.as_slice()[i]),
            }
        }
    }
}
