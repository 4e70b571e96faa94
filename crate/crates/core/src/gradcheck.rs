//! Finite-difference and oracle checks over every backward pass.
//!
//! Each check builds a small seeded instance, evaluates a scalar loss
//! `L = ⟨G, f(x)⟩` for a random upstream `G` (or the real loss for softmax and the
//! full pipeline), and compares the analytic gradient with central differences
//! using `|a − n| / max(|a|, |n|, floor)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ccrf::{
    assemble_system, ccrf_backward_phi, ccrf_backward_w, ccrf_backward_zs, ccrf_forward, gauss_seidel_solve,
    CrfSystem, SolverConfig,
};
use crate::error::{Error, Result};
use crate::featnet::layers::{
    bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward, maxpool2x2, relu, relu_backward,
    unpool2x2, unpool2x2_backward, ConvGeometry, ConvLayer,
};
use crate::featnet::{Architecture, Branch, NetParams, Network, PixelAffinity};
use crate::field::FeatureField;
use crate::pipeline::{backward, forward, pool_pairwise_backward_unnormalized, softmax_xent, Faults, LabelMap, PipelineConfig, Sample};
use crate::spgraph::{ImagePlane, SuperpixelGraph};
use crate::sppool::{pool_pairwise, pool_pairwise_backward, pool_unary, pool_unary_backward, RegionAffinity, RegionFeatures, UnaryPoolGrad};

/// Threshold for single operations.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Threshold for the network branches and the full pipeline.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Solver settings used inside gradient checks. The default tolerance would leave
/// solve error of order `1e-8 / eps` in every finite difference.
pub const CHECK_SOLVER: SolverConfig = SolverConfig {
    tolerance: 1e-14,
    max_iterations: 20_000,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Parameters probed in the full-pipeline check, split evenly over branches.
    pub pipeline_probes: usize,
    pub image_size: usize,
    pub target_regions: usize,
    pub lambda: f64,
    #[doc(hidden)]
    pub faults: Faults,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            pipeline_probes: 30,
            image_size: 16,
            target_regions: 8,
            lambda: 1.0,
            faults: Faults::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub metric: Metric,
    pub max_error: f64,
    pub threshold: f64,
    pub probes: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.threshold
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.metric {
            Metric::Relative => "max_rel_err",
            Metric::Absolute => "max_abs_err",
        };
        write!(
            f,
            "{} {:<20} {kind}={:.3e} threshold={:.0e} probes={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.threshold,
            self.probes
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between `analytic[k]` and a central difference of `loss`
/// at `x`, over the probed indices `idx`. With several step sizes each probe keeps
/// its best agreement.
pub fn fd_max_error(
    x: &[f64],
    analytic: &[f64],
    idx: &[usize],
    steps: &[f64],
    floor: f64,
    loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    fd_probe(x, analytic, idx, steps, floor, false, loss)
}

/// Like [`fd_max_error`] but for piecewise-smooth losses (relu, max-pool): each
/// probe also accepts the one-sided differences. When a kink lies within a step of
/// `x`, the central difference averages two slopes while the analytic gradient is
/// the slope on one side; a wrong gradient still disagrees with all three.
pub fn fd_max_error_piecewise(
    x: &[f64],
    analytic: &[f64],
    idx: &[usize],
    steps: &[f64],
    floor: f64,
    loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    fd_probe(x, analytic, idx, steps, floor, true, loss)
}

fn fd_probe(
    x: &[f64],
    analytic: &[f64],
    idx: &[usize],
    steps: &[f64],
    floor: f64,
    one_sided: bool,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    let base = if one_sided { loss(x)? } else { 0.0 };
    for &k in idx {
        let mut best = f64::INFINITY;
        for &eps in steps {
            xp[k] = x[k] + eps;
            let lp = loss(&xp)?;
            xp[k] = x[k] - eps;
            let lm = loss(&xp)?;
            xp[k] = x[k];
            let mut candidates = vec![(lp - lm) / (2.0 * eps)];
            if one_sided {
                candidates.push((lp - base) / eps);
                candidates.push((base - lm) / eps);
            }
            for numeric in candidates {
                let e = relative_error(analytic[k], numeric, floor);
                best = if e.is_nan() || best.is_nan() { f64::NAN } else { best.min(e) };
            }
        }
        worst = if best.is_nan() { f64::NAN } else { worst.max(best) };
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn field(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureField {
    FeatureField::from_vec(c, h, w, uniform(rng, c * h * w, -1.0, 1.0)).unwrap()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Gaussian elimination with partial pivoting. Returns `None` for a singular matrix.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 {
            return None;
        }
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Some(x)
}

fn dense_solve_columns(a: &[Vec<f64>], rhs: &RegionFeatures) -> Result<RegionFeatures> {
    let mut out = RegionFeatures::zeros(rhs.regions(), rhs.channels());
    for c in 0..rhs.channels() {
        let x = dense_solve(a, &rhs.column(c)).ok_or_else(|| Error::invalid("singular system"))?;
        out.set_column(c, &x);
    }
    Ok(out)
}

struct Instance {
    sample: Sample,
}

impl Instance {
    fn new(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = cfg.image_size;
        // a few flat patches with mild noise, so SLIC finds a handful of regions
        let cols: Vec<[f64; 3]> = (0..4).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut img = FeatureField::zeros(3, n, n);
        let mut labels = vec![0u8; n * n];
        let split = rng.random_range(n / 3..2 * n / 3);
        for y in 0..n {
            for x in 0..n {
                let q = (y >= split) as usize * 2 + (x >= n / 2) as usize;
                labels[y * n + x] = (q % 3) as u8;
                for c in 0..3 {
                    let v = cols[q][c] * 0.8 + 0.1 + rng.random_range(-0.05..0.05);
                    img.set(c, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        let sample = Sample::prepare(
            ImagePlane::new(img)?,
            Some(LabelMap::new(n, n, labels)?),
            cfg.target_regions,
            10.0,
        )?;
        if sample.spmap.region_count() > 12 {
            return Err(Error::invalid(format!(
                "check instance has {} regions, more than 12",
                sample.spmap.region_count()
            )));
        }
        Ok(Self { sample })
    }

    fn graph(&self) -> &SuperpixelGraph {
        &self.sample.graph
    }

    fn random_affinity(&self, rng: &mut ChaCha8Rng) -> RegionAffinity {
        let mut w = RegionAffinity::zeros(self.graph());
        w.weights_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        w
    }
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for (kh, kw, geo) in [(3, 3, ConvGeometry::SAME3), (1, 2, ConvGeometry::VALID), (2, 1, ConvGeometry::VALID)] {
        let input = field(rng, 2, 6, 6);
        let mut layer = ConvLayer::zeros("c", 3, 2, kh, kw);
        layer.weight = uniform(rng, layer.weight.len(), -1.0, 1.0);
        layer.bias = uniform(rng, 3, -1.0, 1.0);
        let out = conv2d(&input, &layer, geo)?;
        let g = field(rng, out.channels(), out.height(), out.width());
        let (gi, gl) = conv2d_backward(&input, &layer, geo, &g)?;
        worst = worst.max(fd_max_error(input.as_slice(), gi.as_slice(), &all(input.as_slice().len()), &[1e-6], 1e-6, |x| {
            let f = FeatureField::from_vec(2, 6, 6, x.to_vec())?;
            Ok(conv2d(&f, &layer, geo)?.dot(&g))
        })?);
        let mut theta = layer.weight.clone();
        theta.extend(&layer.bias);
        let mut an = gl.weight.clone();
        an.extend(&gl.bias);
        let nw = layer.weight.len();
        worst = worst.max(fd_max_error(&theta, &an, &all(theta.len()), &[1e-6], 1e-6, |t| {
            let mut l = layer.clone();
            l.weight.copy_from_slice(&t[..nw]);
            l.bias.copy_from_slice(&t[nw..]);
            Ok(conv2d(&input, &l, geo)?.dot(&g))
        })?);
        probes += input.as_slice().len() + theta.len();
    }
    Ok(CheckResult {
        name: "conv2d",
        metric: Metric::Relative,
        max_error: worst,
        threshold: PRIMITIVE_TOLERANCE,
        probes,
    })
}

fn check_pooling_ops(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let x = field(rng, 2, 6, 8);
    let (y, idx) = maxpool2x2(&x)?;
    let g = field(rng, 2, 3, 4);
    let gx = unpool2x2(&g, &idx, (6, 8))?;
    // minimum spacing of the random inputs is far above eps, so the argmax is stable
    let pool = fd_max_error(x.as_slice(), gx.as_slice(), &all(48), &[1e-7], 1e-6, |v| {
        let f = FeatureField::from_vec(2, 6, 8, v.to_vec())?;
        Ok(maxpool2x2(&f)?.0.dot(&g))
    })?;
    let gu = field(rng, 2, 6, 8);
    let gy = unpool2x2_backward(&gu, &idx)?;
    let unpool = fd_max_error(y.as_slice(), gy.as_slice(), &all(24), &[1e-6], 1e-6, |v| {
        let f = FeatureField::from_vec(2, 3, 4, v.to_vec())?;
        Ok(unpool2x2(&f, &idx, (6, 8))?.dot(&gu))
    })?;
    let r = relu_backward(&x, &gu);
    let relu_err = fd_max_error(x.as_slice(), r.as_slice(), &all(48), &[1e-7], 1e-6, |v| {
        let f = FeatureField::from_vec(2, 6, 8, v.to_vec())?;
        Ok(relu(&f).dot(&gu))
    })?;
    let small = field(rng, 2, 3, 3);
    let gup = field(rng, 2, 12, 12);
    let gsmall = bilinear_upsample_backward(&gup, 4)?;
    let up = fd_max_error(small.as_slice(), gsmall.as_slice(), &all(18), &[1e-6], 1e-6, |v| {
        let f = FeatureField::from_vec(2, 3, 3, v.to_vec())?;
        Ok(bilinear_upsample(&f, 4)?.dot(&gup))
    })?;
    let mk = |name, err, probes| CheckResult {
        name,
        metric: Metric::Relative,
        max_error: err,
        threshold: PRIMITIVE_TOLERANCE,
        probes,
    };
    Ok(vec![
        mk("maxpool2x2", pool, 48),
        mk("unpool2x2", unpool, 24),
        mk("relu", relu_err, 48),
        mk("bilinear_upsample", up, 18),
    ])
}

fn check_pool_unary(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let sp = &inst.sample.spmap;
    let (h, w) = (sp.height(), sp.width());
    let z = field(rng, 3, h, w);
    let g = RegionFeatures::from_vec(sp.region_count(), 3, uniform(rng, sp.region_count() * 3, -1.0, 1.0))?;
    let an = pool_unary_backward(&g, sp, UnaryPoolGrad::Adjoint)?;
    let err = fd_max_error(z.as_slice(), an.as_slice(), &all(z.as_slice().len()), &[1e-6], 1e-6, |v| {
        let f = FeatureField::from_vec(3, h, w, v.to_vec())?;
        Ok(pool_unary(&f, sp)?.dot(&g))
    })?;
    Ok(CheckResult {
        name: "pool_unary",
        metric: Metric::Relative,
        max_error: err,
        threshold: PRIMITIVE_TOLERANCE,
        probes: z.as_slice().len(),
    })
}

fn check_pool_pairwise(inst: &Instance, rng: &mut ChaCha8Rng, faults: Faults) -> Result<CheckResult> {
    let graph = inst.graph();
    let (h, w) = graph.image_dims();
    let mut wp = PixelAffinity::zeros(h, w);
    wp.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let mut g = RegionAffinity::zeros(graph);
    g.weights_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let an = if faults.drop_pair_normalization {
        pool_pairwise_backward_unnormalized(&g, graph)
    } else {
        pool_pairwise_backward(&g, graph)?
    };
    let flat: Vec<f64> = wp.iter().copied().collect();
    let an: Vec<f64> = an.iter().copied().collect();
    let nh = wp.horizontal().len();
    let err = fd_max_error(&flat, &an, &all(flat.len()), &[1e-6], 1e-6, |v| {
        let a = PixelAffinity::from_parts(h, w, v[..nh].to_vec(), v[nh..].to_vec())?;
        Ok(pool_pairwise(&a, graph)?.dot(&g))
    })?;
    Ok(CheckResult {
        name: "pool_pairwise",
        metric: Metric::Relative,
        max_error: err,
        threshold: PRIMITIVE_TOLERANCE,
        probes: flat.len(),
    })
}

fn system(w: &RegionAffinity, lambda: f64) -> Result<CrfSystem> {
    Ok(assemble_system(w, lambda)?.with_solver(CHECK_SOLVER))
}

fn check_ccrf(inst: &Instance, rng: &mut ChaCha8Rng, lambda: f64, faults: Faults) -> Result<Vec<CheckResult>> {
    let n = inst.graph().region_count();
    let w = inst.random_affinity(rng);
    let sys = system(&w, lambda)?;
    let zs = RegionFeatures::from_vec(n, 3, uniform(rng, n * 3, -1.0, 1.0))?;
    let g = RegionFeatures::from_vec(n, 3, uniform(rng, n * 3, -1.0, 1.0))?;
    let zc = ccrf_forward(&zs, &sys)?.zc;
    let gzs = ccrf_backward_zs(&g, &sys)?;

    let zs_err = fd_max_error(zs.as_slice(), gzs.as_slice(), &all(n * 3), &[1e-6], 1e-6, |v| {
        let z = RegionFeatures::from_vec(n, 3, v.to_vec())?;
        Ok(ccrf_forward(&z, &sys)?.zc.dot(&g))
    })?;

    // dL/dA entry by entry through a dense direct solve, independent of Gauss-Seidel
    let mut dphi = ccrf_backward_phi(&gzs, &zc, &sys)?;
    if faults.flip_phi_sign {
        dphi.negate();
    }
    let dense = sys.to_dense();
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|p| (p, p, dphi.diag[p])).collect();
    for (&(p, q), &(gpq, gqp)) in dphi.pairs.iter().zip(&dphi.off) {
        entries.push((p, q, gpq));
        entries.push((q, p, gqp));
    }
    let x: Vec<f64> = entries.iter().map(|&(p, q, _)| dense[p][q]).collect();
    let an: Vec<f64> = entries.iter().map(|e| e.2).collect();
    let phi_err = fd_max_error(&x, &an, &all(x.len()), &[1e-6], 1e-6, |v| {
        let mut a = dense.clone();
        for (&(p, q, _), &val) in entries.iter().zip(v) {
            a[p][q] = val;
        }
        Ok(dense_solve_columns(&a, &zs)?.dot(&g))
    })?;

    let dw = ccrf_backward_w(&dphi, n)?;
    let w_err = fd_max_error(w.weights(), dw.weights(), &all(w.weights().len()), &[1e-6], 1e-6, |v| {
        let mut wv = w.clone();
        wv.weights_mut().copy_from_slice(v);
        Ok(ccrf_forward(&zs, &system(&wv, lambda)?)?.zc.dot(&g))
    })?;

    let mk = |name, err, probes| CheckResult {
        name,
        metric: Metric::Relative,
        max_error: err,
        threshold: PRIMITIVE_TOLERANCE,
        probes,
    };
    Ok(vec![
        mk("ccrf_backward_zs", zs_err, n * 3),
        mk("ccrf_backward_phi", phi_err, x.len()),
        mk("ccrf_backward_w", w_err, w.weights().len()),
    ])
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let z = FeatureField::from_vec(3, 4, 4, uniform(rng, 48, -3.0, 3.0))?;
    let labels = LabelMap::new(4, 4, (0..16).map(|_| rng.random_range(0..3u8)).collect())?;
    let (_, g) = softmax_xent(&z, &labels)?;
    let err = fd_max_error(z.as_slice(), g.as_slice(), &all(48), &[1e-6], 1e-6, |v| {
        Ok(softmax_xent(&FeatureField::from_vec(3, 4, 4, v.to_vec())?, &labels)?.0)
    })?;
    Ok(CheckResult {
        name: "softmax_xent",
        metric: Metric::Relative,
        max_error: err,
        threshold: PRIMITIVE_TOLERANCE,
        probes: 48,
    })
}

fn random_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<NetParams> {
    let mut p = NetParams::init(arch, rng.random())?;
    for l in p.layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    Ok(p)
}

fn with_values(template: &NetParams, v: &[f64]) -> NetParams {
    let mut p = template.clone();
    p.iter_mut().zip(v).for_each(|(a, b)| *a = *b);
    p
}

/// Probe indices spread evenly over the shared, unary and pairwise blocks.
fn stratified(p: &NetParams, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let branches = [Branch::Shared, Branch::Unary, Branch::Pairwise];
    let by_branch: Vec<Vec<usize>> = branches
        .iter()
        .map(|&b| (0..p.param_count()).filter(|&k| p.locate(k).map(|l| l.1) == Some(b)).collect())
        .collect();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let pool = &by_branch[i % 3];
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    out
}

fn check_network(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let arch = Architecture::default();
    let net = Network::new(arch.clone())?;
    let p = random_params(&arch, rng)?;
    let img = inst.sample.image.field();
    let (h, w) = (img.height(), img.width());
    let dz = field(rng, arch.classes, h, w);
    let mut dwp = PixelAffinity::zeros(h, w);
    dwp.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let cache = net.forward(img, &p, true, true)?;
    let gu: Vec<f64> = net.unary_backward(&cache, &p, &dz)?.iter().copied().collect();
    let gp: Vec<f64> = net.pairwise_backward(&cache, &p, &dwp)?.iter().copied().collect();
    let theta: Vec<f64> = p.iter().copied().collect();
    let probes = stratified(&p, 30, rng);
    let unary_idx: Vec<usize> = probes.iter().copied().filter(|&k| p.locate(k).unwrap().1 != Branch::Pairwise).collect();
    let pair_idx: Vec<usize> = probes.iter().copied().filter(|&k| p.locate(k).unwrap().1 != Branch::Unary).collect();
    let eu = fd_max_error_piecewise(&theta, &gu, &unary_idx, &[1e-5, 1e-6], 1e-6, |v| {
        Ok(net.unary_forward(img, &with_values(&p, v))?.0.dot(&dz))
    })?;
    let ep = fd_max_error_piecewise(&theta, &gp, &pair_idx, &[1e-5, 1e-6], 1e-6, |v| {
        Ok(net.pairwise_forward(img, &with_values(&p, v))?.0.dot(&dwp))
    })?;
    Ok(vec![
        CheckResult {
            name: "unary_net",
            metric: Metric::Relative,
            max_error: eu,
            threshold: COMPOSITE_TOLERANCE,
            probes: unary_idx.len(),
        },
        CheckResult {
            name: "pairwise_net",
            metric: Metric::Relative,
            max_error: ep,
            threshold: COMPOSITE_TOLERANCE,
            probes: pair_idx.len(),
        },
    ])
}

fn check_pipeline(inst: &Instance, rng: &mut ChaCha8Rng, cfg: &GradcheckConfig) -> Result<CheckResult> {
    let arch = Architecture::default();
    let net = Network::new(arch.clone())?;
    let p = random_params(&arch, rng)?;
    let pcfg = PipelineConfig {
        lambda: cfg.lambda,
        solver: CHECK_SOLVER,
        faults: cfg.faults,
        ..PipelineConfig::default()
    };
    let s = &inst.sample;
    let pass = forward(&net, &p, s, &pcfg)?;
    let grads: Vec<f64> = backward(&net, &p, s, &pass, &pcfg)?.params.iter().copied().collect();
    let theta: Vec<f64> = p.iter().copied().collect();
    let idx = stratified(&p, cfg.pipeline_probes, rng);
    // pipeline gradients are often ~1e-6, so the larger step keeps roundoff in the
    // mean loss from dominating the difference
    let err = fd_max_error_piecewise(&theta, &grads, &idx, &[1e-4, 1e-5, 1e-6], 1e-6, |v| {
        Ok(forward(&net, &with_values(&p, v), s, &pcfg)?.loss.unwrap())
    })?;
    Ok(CheckResult {
        name: "pipeline",
        metric: Metric::Relative,
        max_error: err,
        threshold: COMPOSITE_TOLERANCE,
        probes: idx.len(),
    })
}

/// Gauss-Seidel against the dense solve on a few random systems.
fn check_solver(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let n = inst.graph().region_count();
    for lambda in [0.1, 1.0, 10.0] {
        let w = inst.random_affinity(rng);
        let sys = assemble_system(&w, lambda)?;
        let b = uniform(rng, n, -1.0, 1.0);
        let x = gauss_seidel_solve(&sys, &b, &b)?.into_result(0)?.x;
        let d = dense_solve(&sys.to_dense(), &b).ok_or_else(|| Error::invalid("singular system"))?;
        for (a, o) in x.iter().zip(&d) {
            worst = worst.max((a - o).abs());
        }
    }
    Ok(CheckResult {
        name: "solver_oracle",
        metric: Metric::Absolute,
        max_error: worst,
        threshold: 1e-6,
        probes: 3,
    })
}

/// The two-region system `W_01 = 1, λ = 1, Z_s = [3, 0]`, `dL/dZ_c = [1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandExample {
    pub zc: [f64; 2],
    pub grad_zs: [f64; 2],
    /// `[[Φ_00, Φ_01], [Φ_10, Φ_11]]`
    pub grad_phi: [[f64; 2]; 2],
    pub grad_w01: f64,
}

impl HandExample {
    pub const EXPECTED: HandExample = HandExample {
        zc: [2.0, 1.0],
        grad_zs: [2.0 / 3.0, 1.0 / 3.0],
        grad_phi: [[-4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, -1.0 / 3.0]],
        grad_w01: -1.0 / 3.0,
    };

    pub fn compute(faults: Faults) -> Result<Self> {
        let w = RegionAffinity::from_triples(2, &[(0, 1, 1.0)])?;
        let sys = assemble_system(&w, 1.0)?.with_solver(CHECK_SOLVER);
        let zs = RegionFeatures::from_vec(2, 1, vec![3.0, 0.0])?;
        let zc = ccrf_forward(&zs, &sys)?.zc;
        let gzc = RegionFeatures::from_vec(2, 1, vec![1.0, 0.0])?;
        let gzs = ccrf_backward_zs(&gzc, &sys)?;
        let mut dphi = ccrf_backward_phi(&gzs, &zc, &sys)?;
        if faults.flip_phi_sign {
            dphi.negate();
        }
        let dw = ccrf_backward_w(&dphi, 2)?;
        Ok(HandExample {
            zc: [zc.get(0, 0), zc.get(1, 0)],
            grad_zs: [gzs.get(0, 0), gzs.get(1, 0)],
            grad_phi: [[dphi.diag[0], dphi.off[0].0], [dphi.off[0].1, dphi.diag[1]]],
            grad_w01: dw.weights()[0],
        })
    }

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.zc[0], self.zc[1], self.grad_zs[0], self.grad_zs[1]];
        v.extend(self.grad_phi.iter().flatten());
        v.push(self.grad_w01);
        v
    }

    pub fn max_deviation(&self, other: &HandExample) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for HandExample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Z_c      = [{:.12}, {:.12}]", self.zc[0], self.zc[1])?;
        writeln!(f, "dL/dZ_s  = [{:.12}, {:.12}]", self.grad_zs[0], self.grad_zs[1])?;
        writeln!(
            f,
            "dL/dPhi  = [[{:.12}, {:.12}], [{:.12}, {:.12}]]",
            self.grad_phi[0][0], self.grad_phi[0][1], self.grad_phi[1][0], self.grad_phi[1][1]
        )?;
        write!(f, "dL/dW_01 = {:.12}", self.grad_w01)
    }
}

fn check_hand_example(faults: Faults) -> Result<CheckResult> {
    let got = HandExample::compute(faults)?;
    Ok(CheckResult {
        name: "ccrf_hand_example",
        metric: Metric::Absolute,
        max_error: got.max_deviation(&HandExample::EXPECTED),
        threshold: 1e-12,
        probes: 9,
    })
}

/// Runs every check. Each check draws from its own seeded stream.
pub fn run_all(cfg: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(stream);
        r
    };
    let inst = Instance::new(cfg, &mut rng(0))?;
    let mut out = vec![check_conv(&mut rng(1))?];
    out.extend(check_pooling_ops(&mut rng(2))?);
    out.push(check_pool_unary(&inst, &mut rng(3))?);
    out.push(check_pool_pairwise(&inst, &mut rng(4), cfg.faults)?);
    out.extend(check_ccrf(&inst, &mut rng(5), cfg.lambda, cfg.faults)?);
    out.push(check_softmax(&mut rng(6))?);
    out.extend(check_network(&inst, &mut rng(7))?);
    out.push(check_pipeline(&inst, &mut rng(8), cfg)?);
    out.push(check_solver(&inst, &mut rng(9))?);
    out.push(check_hand_example(cfg.faults)?);
    Ok(out)
}
