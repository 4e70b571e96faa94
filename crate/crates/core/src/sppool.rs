//! Superpixel pooling: pixel scores to region scores, pixel affinities to region
//! affinities, and the adjoints of both.

use std::fmt::Write;

use crate::error::{ensure, Result};
use crate::featnet::PixelAffinity;
use crate::field::FeatureField;
use crate::spgraph::{SuperpixelGraph, SuperpixelMap};

/// Row-major `N × C` region scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    regions: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RegionFeatures {
    pub fn zeros(regions: usize, channels: usize) -> Self {
        Self {
            regions,
            channels,
            data: vec![0.0; regions * channels],
        }
    }

    pub fn from_vec(regions: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == regions * channels, || {
            format!("{} values for {regions}x{channels} region features", data.len())
        })?;
        Ok(Self {
            regions,
            channels,
            data,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, p: usize, c: usize) -> f64 {
        self.data[p * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, p: usize, c: usize, v: f64) {
        self.data[p * self.channels + c] = v;
    }

    #[inline]
    pub fn add(&mut self, p: usize, c: usize, v: f64) {
        self.data[p * self.channels + c] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.regions).map(|p| self.get(p, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[f64]) {
        for (p, &v) in col.iter().enumerate() {
            self.set(p, c, v);
        }
    }

    pub fn dot(&self, other: &RegionFeatures) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Symmetric non-negative region affinities, one weight per graph edge, in
/// [`SuperpixelGraph::edges`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAffinity {
    regions: usize,
    pairs: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl RegionAffinity {
    /// Zero weight on every edge of `graph`.
    pub fn zeros(graph: &SuperpixelGraph) -> Self {
        Self {
            regions: graph.region_count(),
            pairs: graph.edges().iter().map(|e| (e.p, e.q)).collect(),
            weights: vec![0.0; graph.edges().len()],
        }
    }

    /// Builds from explicit `(p, q, w)` triples; pairs are normalized to `p < q` and sorted.
    pub fn from_triples(regions: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut v: Vec<((usize, usize), f64)> = triples
            .iter()
            .map(|&(p, q, w)| ((p.min(q), p.max(q)), w))
            .collect();
        v.sort_by_key(|e| e.0);
        for w in v.windows(2) {
            ensure(w[0].0 != w[1].0, || format!("duplicate edge {:?}", w[0].0))?;
        }
        for &((p, q), _) in &v {
            ensure(p != q && q < regions, || format!("invalid edge ({p}, {q}) for N={regions}"))?;
        }
        Ok(Self {
            regions,
            pairs: v.iter().map(|e| e.0).collect(),
            weights: v.iter().map(|e| e.1).collect(),
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Edge endpoints `(p, q)`, `p < q`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// `W_pq`, or `None` off the support.
    pub fn get(&self, p: usize, q: usize) -> Option<f64> {
        let key = (p.min(q), p.max(q));
        self.pairs.binary_search(&key).ok().map(|i| self.weights[i])
    }

    pub fn dot(&self, other: &RegionAffinity) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }

    /// One `p q w` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (&(p, q), w) in self.pairs.iter().zip(&self.weights) {
            writeln!(s, "{p} {q} {w}").unwrap();
        }
        s
    }
}

/// How [`pool_unary_backward`] distributes a region gradient over its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnaryPoolGrad {
    /// `dL/dZ(i) = dL/dZ_s(p) / |S_p|`, the adjoint of the mean.
    #[default]
    Adjoint,
    /// `dL/dZ(i) = dL/dZ_s(p)`, copying the region gradient unscaled.
    Unscaled,
}

fn check_map(h: usize, w: usize, spmap: &SuperpixelMap) -> Result<()> {
    ensure(h == spmap.height() && w == spmap.width(), || {
        format!(
            "field is {h}x{w} but the superpixel map is {}x{}",
            spmap.height(),
            spmap.width()
        )
    })
}

/// Per-region channel means of `z`.
pub fn pool_unary(z: &FeatureField, spmap: &SuperpixelMap) -> Result<RegionFeatures> {
    check_map(z.height(), z.width(), spmap)?;
    let n = spmap.region_count();
    let c = z.channels();
    let mut out = RegionFeatures::zeros(n, c);
    let assign = spmap.assignment();
    for ch in 0..c {
        for (&p, &v) in assign.iter().zip(z.plane(ch)) {
            out.add(p as usize, ch, v);
        }
    }
    for (p, size) in spmap.region_sizes().into_iter().enumerate() {
        for ch in 0..c {
            let v = out.get(p, ch) / size as f64;
            out.set(p, ch, v);
        }
    }
    Ok(out)
}

pub fn pool_unary_backward(
    grad: &RegionFeatures,
    spmap: &SuperpixelMap,
    mode: UnaryPoolGrad,
) -> Result<FeatureField> {
    ensure(grad.regions() == spmap.region_count(), || {
        format!(
            "gradient has {} regions, map has {}",
            grad.regions(),
            spmap.region_count()
        )
    })?;
    let scale: Vec<f64> = match mode {
        UnaryPoolGrad::Adjoint => spmap.region_sizes().iter().map(|&s| 1.0 / s as f64).collect(),
        UnaryPoolGrad::Unscaled => vec![1.0; spmap.region_count()],
    };
    let mut out = FeatureField::zeros(grad.channels(), spmap.height(), spmap.width());
    for ch in 0..grad.channels() {
        for (d, &p) in out.plane_mut(ch).iter_mut().zip(spmap.assignment()) {
            let p = p as usize;
            *d = grad.get(p, ch) * scale[p];
        }
    }
    Ok(out)
}

fn check_affinity(wp: (usize, usize), graph: &SuperpixelGraph) -> Result<()> {
    ensure(wp == graph.image_dims(), || {
        format!(
            "pixel affinities are {:?} but the graph was built on {:?}",
            wp,
            graph.image_dims()
        )
    })
}

/// `W_pq` = mean of the pixel affinities across the boundary of `p` and `q`.
pub fn pool_pairwise(wp: &PixelAffinity, graph: &SuperpixelGraph) -> Result<RegionAffinity> {
    check_affinity(wp.dims(), graph)?;
    let mut w = RegionAffinity::zeros(graph);
    for (slot, e) in w.weights.iter_mut().zip(graph.edges()) {
        let sum: f64 = e.boundary.iter().map(|pair| wp.get(pair)).sum();
        *slot = sum / e.boundary.len() as f64;
    }
    Ok(w)
}

/// Each boundary pair receives `dL/dW_pq / |B_pq|` from the one edge it lies on;
/// interior pairs receive zero.
pub fn pool_pairwise_backward(grad: &RegionAffinity, graph: &SuperpixelGraph) -> Result<PixelAffinity> {
    ensure(grad.pairs.len() == graph.edges().len(), || {
        format!(
            "gradient has {} edges, graph has {}",
            grad.pairs.len(),
            graph.edges().len()
        )
    })?;
    let (h, w) = graph.image_dims();
    let mut out = PixelAffinity::zeros(h, w);
    for (g, e) in grad.weights.iter().zip(graph.edges()) {
        let share = g / e.boundary.len() as f64;
        for pair in &e.boundary {
            out.add(pair, share);
        }
    }
    Ok(out)
}

/// Copies each region's score vector onto all of its pixels.
pub fn broadcast_to_pixels(zc: &RegionFeatures, spmap: &SuperpixelMap) -> Result<FeatureField> {
    ensure(zc.regions() == spmap.region_count(), || {
        format!("{} regions vs map with {}", zc.regions(), spmap.region_count())
    })?;
    let mut out = FeatureField::zeros(zc.channels(), spmap.height(), spmap.width());
    for ch in 0..zc.channels() {
        for (d, &p) in out.plane_mut(ch).iter_mut().zip(spmap.assignment()) {
            *d = zc.get(p as usize, ch);
        }
    }
    Ok(out)
}

/// Sums pixel gradients per region.
pub fn broadcast_backward(grad: &FeatureField, spmap: &SuperpixelMap) -> Result<RegionFeatures> {
    check_map(grad.height(), grad.width(), spmap)?;
    let mut out = RegionFeatures::zeros(spmap.region_count(), grad.channels());
    for ch in 0..grad.channels() {
        for (&g, &p) in grad.plane(ch).iter().zip(spmap.assignment()) {
            out.add(p as usize, ch, g);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spgraph::build_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bands() -> SuperpixelMap {
        SuperpixelMap::new(4, 4, [vec![0; 8], vec![1; 8]].concat()).unwrap()
    }

    #[test]
    fn constant_field_pools_to_constant() {
        let map = bands();
        let z = FeatureField::filled(2, 4, 4, 7.0);
        let zs = pool_unary(&z, &map).unwrap();
        assert!(zs.as_slice().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn two_pixel_region_mean() {
        let map = SuperpixelMap::new(1, 3, vec![0, 0, 1]).unwrap();
        let z = FeatureField::from_vec(1, 1, 3, vec![1.0, 3.0, 5.0]).unwrap();
        assert_eq!(pool_unary(&z, &map).unwrap().as_slice(), &[2.0, 5.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let map = bands();
        assert!(pool_unary(&FeatureField::zeros(1, 4, 5), &map).is_err());
        let g = build_graph(&map);
        assert!(pool_pairwise(&PixelAffinity::zeros(5, 4), &g).is_err());
    }

    #[test]
    fn global_region_adjoint() {
        let map = SuperpixelMap::new(2, 3, vec![0; 6]).unwrap();
        let g = RegionFeatures::from_vec(1, 1, vec![1.0]).unwrap();
        let dz = pool_unary_backward(&g, &map, UnaryPoolGrad::Adjoint).unwrap();
        assert!(dz.as_slice().iter().all(|&v| v == 1.0 / 6.0));
        let dz = pool_unary_backward(&g, &map, UnaryPoolGrad::Unscaled).unwrap();
        assert!(dz.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn singleton_regions_scatter_identity() {
        let map = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let g = RegionFeatures::from_vec(4, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let dz = pool_unary_backward(&g, &map, UnaryPoolGrad::Adjoint).unwrap();
        assert_eq!(dz.as_slice(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn pool_unary_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = SuperpixelMap::new(3, 4, vec![0, 0, 1, 1, 0, 2, 2, 1, 3, 3, 3, 1]).unwrap();
        let z = FeatureField::from_fn(2, 3, 4, |_, _, _| rng.random_range(-1.0..1.0));
        let g = RegionFeatures::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let an = pool_unary_backward(&g, &map, UnaryPoolGrad::Adjoint).unwrap();
        let eps = 1e-5;
        for k in 0..24 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.as_mut_slice()[k] += eps;
            zm.as_mut_slice()[k] -= eps;
            let fd = (pool_unary(&zp, &map).unwrap().dot(&g) - pool_unary(&zm, &map).unwrap().dot(&g)) / (2.0 * eps);
            let a = an.as_slice()[k];
            assert!((fd - a).abs() <= 1e-6 * fd.abs().max(a.abs()).max(1e-3));
        }
    }

    #[test]
    fn boundary_mean_of_bands() {
        let map = bands();
        let graph = build_graph(&map);
        let mut wp = PixelAffinity::zeros(4, 4);
        for x in 0..4 {
            wp.vertical_mut()[4 + x] = (x + 1) as f64;
        }
        let w = pool_pairwise(&wp, &graph).unwrap();
        assert_eq!(w.get(0, 1), Some(2.5));
        assert_eq!(w.get(1, 0), Some(2.5));
    }

    #[test]
    fn constant_affinity_and_support() {
        let map = SuperpixelMap::new(2, 3, vec![0, 0, 1, 2, 2, 1]).unwrap();
        let graph = build_graph(&map);
        let w = pool_pairwise(&PixelAffinity::filled(2, 3, 0.3), &graph).unwrap();
        assert!(w.weights().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let quads = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let w = pool_pairwise(&PixelAffinity::filled(2, 2, 1.0), &build_graph(&quads)).unwrap();
        assert_eq!(w.get(0, 3), None);
        assert_eq!(w.get(1, 2), None);
        assert_eq!(w.pairs(), &[(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn pairwise_backward_spreads_quarter_shares() {
        let map = bands();
        let graph = build_graph(&map);
        let g = RegionAffinity::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        let d = pool_pairwise_backward(&g, &graph).unwrap();
        for (i, &v) in d.vertical().iter().enumerate() {
            assert_eq!(v, if (4..8).contains(&i) { 0.25 } else { 0.0 });
        }
        assert!(d.horizontal().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pairwise_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = SuperpixelMap::new(3, 4, vec![0, 0, 1, 1, 0, 2, 2, 1, 3, 3, 3, 1]).unwrap();
        let graph = build_graph(&map);
        let mut wp = PixelAffinity::zeros(3, 4);
        wp.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        let mut g = RegionAffinity::zeros(&graph);
        g.weights_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let an = pool_pairwise_backward(&g, &graph).unwrap();
        let an: Vec<f64> = an.iter().copied().collect();
        let eps = 1e-5;
        for k in 0..an.len() {
            let (mut p, mut m) = (wp.clone(), wp.clone());
            *p.iter_mut().nth(k).unwrap() += eps;
            *m.iter_mut().nth(k).unwrap() -= eps;
            let fd = (pool_pairwise(&p, &graph).unwrap().dot(&g) - pool_pairwise(&m, &graph).unwrap().dot(&g)) / (2.0 * eps);
            assert!((fd - an[k]).abs() <= 1e-6 * fd.abs().max(an[k].abs()).max(1e-3));
        }
    }

    #[test]
    fn broadcast_examples() {
        let map = SuperpixelMap::new(1, 4, vec![0, 0, 0, 1]).unwrap();
        let zc = RegionFeatures::from_vec(2, 1, vec![4.0, -1.0]).unwrap();
        let b = broadcast_to_pixels(&zc, &map).unwrap();
        assert_eq!(b.as_slice(), &[4.0, 4.0, 4.0, -1.0]);
        let g = FeatureField::from_vec(1, 1, 4, vec![1.0, 2.0, 3.0, 9.0]).unwrap();
        assert_eq!(broadcast_backward(&g, &map).unwrap().as_slice(), &[6.0, 9.0]);
        let one = SuperpixelMap::new(2, 2, vec![0; 4]).unwrap();
        let zc = RegionFeatures::from_vec(1, 2, vec![0.1, 0.2]).unwrap();
        let b = broadcast_to_pixels(&zc, &one).unwrap();
        assert_eq!(b.plane(0), &[0.1; 4]);
        assert_eq!(b.plane(1), &[0.2; 4]);
    }

    #[test]
    fn edge_list_dump() {
        let w = RegionAffinity::from_triples(3, &[(2, 1, 0.5), (0, 1, 1.25)]).unwrap();
        assert_eq!(w.to_edge_list(), "0 1 1.25\n1 2 0.5\n");
        assert!(RegionAffinity::from_triples(3, &[(0, 1, 1.0), (1, 0, 2.0)]).is_err());
    }
}
