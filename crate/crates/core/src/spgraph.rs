//! SLIC oversegmentation and the region adjacency graph.
//!
//! A [`SuperpixelMap`] is a dense partition of the pixel grid into 4-connected
//! regions with ids `0..N`. [`build_graph`] turns it into a [`SuperpixelGraph`]
//! whose edges carry the list of 4-adjacent pixel pairs straddling each pair of
//! regions; those pairs are what the pairwise branch's affinities are indexed by.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{ensure, Error, Result};
use crate::field::FeatureField;
use crate::pnm::Raster;

pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const SLIC_ITERATIONS: usize = 10;

/// Input image with intensities in `[0, 1]`, at least 8×8.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    field: FeatureField,
}

impl ImagePlane {
    pub fn new(field: FeatureField) -> Result<Self> {
        ensure(field.height() >= 8 && field.width() >= 8, || {
            format!(
                "image must be at least 8x8, got {}x{}",
                field.height(),
                field.width()
            )
        })?;
        ensure(field.channels() >= 1, || "image has no channels".into())?;
        ensure(
            field
                .as_slice()
                .iter()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            || "image values must be finite and within [0, 1]".into(),
        )?;
        Ok(Self { field })
    }

    pub fn from_raster(r: &Raster) -> Result<Self> {
        let field = FeatureField::from_fn(r.channels, r.height, r.width, |c, y, x| {
            r.pixel(y, x)[c] as f64 / 255.0
        });
        Self::new(field)
    }

    pub fn to_raster(&self) -> Raster {
        let f = &self.field;
        let mut r = Raster::new(f.width(), f.height(), f.channels());
        for y in 0..f.height() {
            for x in 0..f.width() {
                let px = r.pixel_mut(y, x);
                for (c, v) in px.iter_mut().enumerate() {
                    *v = (f.get(c, y, x) * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        r
    }

    pub fn field(&self) -> &FeatureField {
        &self.field
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    pub fn channels(&self) -> usize {
        self.field.channels()
    }
}

/// Pixel-to-region partition with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    region_count: usize,
    assignment: Vec<u32>,
}

const SPMAP_MAGIC: &[u8; 4] = b"SPXM";
const SPMAP_VERSION: u32 = 1;

impl SuperpixelMap {
    /// Validates the partition invariants: dense nonempty ids and 4-connected regions.
    pub fn new(height: usize, width: usize, assignment: Vec<u32>) -> Result<Self> {
        ensure(height > 0 && width > 0, || "empty superpixel map".into())?;
        ensure(assignment.len() == height * width, || {
            format!(
                "assignment has {} entries for a {}x{} map",
                assignment.len(),
                height,
                width
            )
        })?;
        let n = assignment.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
        let mut seen = vec![false; n];
        for &a in &assignment {
            seen[a as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("region id {missing} is empty")));
        }
        let comps = Components::label(&assignment, height, width);
        ensure(comps.sizes.len() == n, || {
            format!(
                "regions are not 4-connected ({} components for {} ids)",
                comps.sizes.len(),
                n
            )
        })?;
        Ok(Self {
            height,
            width,
            region_count: n,
            assignment,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    #[inline]
    pub fn region_at(&self, y: usize, x: usize) -> usize {
        self.assignment[y * self.width + x] as usize
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &a in &self.assignment {
            sizes[a as usize] += 1;
        }
        sizes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.assignment.len());
        out.extend_from_slice(SPMAP_MAGIC);
        for v in [
            SPMAP_VERSION,
            self.height as u32,
            self.width as u32,
            self.region_count as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &a in &self.assignment {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            let off = 4 + 4 * i;
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
        };
        if bytes.len() < 4 || &bytes[..4] != SPMAP_MAGIC {
            return Err(Error::format(0, "bad superpixel map magic"));
        }
        let version = word(0)?;
        if version != SPMAP_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let (h, w, n) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
        let body = &bytes[20..];
        if body.len() < 4 * h * w {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated body: expected {} ids", h * w),
            ));
        }
        let assignment: Vec<u32> = body[..4 * h * w]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = assignment.iter().position(|&a| a as usize >= n) {
            return Err(Error::format(
                20 + 4 * i as u64,
                format!("region id {} out of range for N={n}", assignment[i]),
            ));
        }
        let map = Self::new(h, w, assignment)?;
        if map.region_count != n {
            return Err(Error::format(16, format!("header N={n} but map uses {}", map.region_count)));
        }
        Ok(map)
    }

    /// Region ids rendered with a fixed pseudo-random palette.
    pub fn to_indexed_color(&self) -> Raster {
        let mut r = Raster::new(self.width, self.height, 3);
        for y in 0..self.height {
            for x in 0..self.width {
                r.pixel_mut(y, x).copy_from_slice(&palette(self.region_at(y, x)));
            }
        }
        r
    }

    /// The image with region boundaries painted red.
    pub fn boundary_overlay(&self, image: &ImagePlane) -> Raster {
        let mut r = image.to_raster();
        if r.channels == 1 {
            let gray = r.data.clone();
            r = Raster::new(r.width, r.height, 3);
            for (i, g) in gray.into_iter().enumerate() {
                r.data[3 * i..3 * i + 3].fill(g);
            }
        }
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.region_at(y, x);
                let edge = (x + 1 < self.width && self.region_at(y, x + 1) != p)
                    || (y + 1 < self.height && self.region_at(y + 1, x) != p);
                if edge {
                    r.pixel_mut(y, x).copy_from_slice(&[255, 0, 0]);
                }
            }
        }
        r
    }
}

fn palette(id: usize) -> [u8; 3] {
    let h = (id as u32).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
}

/// Orientation of a 4-adjacent pixel pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairAxis {
    /// `(y, x)` – `(y, x + 1)`
    Horizontal,
    /// `(y, x)` – `(y + 1, x)`
    Vertical,
}

/// A 4-adjacent pixel pair anchored at its top/left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelPair {
    pub axis: PairAxis,
    pub y: usize,
    pub x: usize,
}

impl PixelPair {
    pub fn second(&self) -> (usize, usize) {
        match self.axis {
            PairAxis::Horizontal => (self.y, self.x + 1),
            PairAxis::Vertical => (self.y + 1, self.x),
        }
    }
}

/// Undirected edge `p < q` and its boundary pixel pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionEdge {
    pub p: usize,
    pub q: usize,
    pub boundary: Vec<PixelPair>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelGraph {
    height: usize,
    width: usize,
    region_sizes: Vec<usize>,
    edges: Vec<RegionEdge>,
}

impl SuperpixelGraph {
    pub fn region_count(&self) -> usize {
        self.region_sizes.len()
    }

    pub fn region_sizes(&self) -> &[usize] {
        &self.region_sizes
    }

    /// Edges sorted by `(p, q)` with `p < q`.
    pub fn edges(&self) -> &[RegionEdge] {
        &self.edges
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Index of edge `{p, q}` in [`edges`](Self::edges), in either order.
    pub fn edge_index(&self, p: usize, q: usize) -> Option<usize> {
        let key = (p.min(q), p.max(q));
        self.edges.binary_search_by(|e| (e.p, e.q).cmp(&key)).ok()
    }

    /// Boundary pairs between `p` and `q`; empty when not adjacent.
    pub fn boundary_pairs(&self, p: usize, q: usize) -> &[PixelPair] {
        self.edge_index(p, q)
            .map(|i| self.edges[i].boundary.as_slice())
            .unwrap_or(&[])
    }
}

pub fn build_graph(spmap: &SuperpixelMap) -> SuperpixelGraph {
    let (h, w) = (spmap.height, spmap.width);
    let mut edges: BTreeMap<(usize, usize), Vec<PixelPair>> = BTreeMap::new();
    let mut push = |a: usize, b: usize, pair: PixelPair| {
        if a != b {
            edges.entry((a.min(b), a.max(b))).or_default().push(pair);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let a = spmap.region_at(y, x);
            if x + 1 < w {
                let axis = PairAxis::Horizontal;
                push(a, spmap.region_at(y, x + 1), PixelPair { axis, y, x });
            }
            if y + 1 < h {
                let axis = PairAxis::Vertical;
                push(a, spmap.region_at(y + 1, x), PixelPair { axis, y, x });
            }
        }
    }
    SuperpixelGraph {
        height: h,
        width: w,
        region_sizes: spmap.region_sizes(),
        edges: edges
            .into_iter()
            .map(|((p, q), boundary)| RegionEdge { p, q, boundary })
            .collect(),
    }
}

/// 4-connected components of a label image.
struct Components {
    id: Vec<usize>,
    sizes: Vec<usize>,
    label: Vec<u32>,
}

impl Components {
    fn label(labels: &[u32], h: usize, w: usize) -> Self {
        let mut id = vec![usize::MAX; h * w];
        let mut sizes = Vec::new();
        let mut label = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if id[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let l = labels[start];
            id[start] = c;
            queue.push_back(start);
            let mut size = 0;
            while let Some(i) = queue.pop_front() {
                size += 1;
                let (y, x) = (i / w, i % w);
                let mut visit = |j: usize| {
                    if id[j] == usize::MAX && labels[j] == l {
                        id[j] = c;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            sizes.push(size);
            label.push(l);
        }
        Self { id, sizes, label }
    }
}

/// Converts an image to the clustering color space: CIELAB for RGB, `100·v` otherwise.
fn clustering_colors(image: &ImagePlane) -> Vec<Vec<f64>> {
    let f = image.field();
    let n = f.plane_len();
    if f.channels() == 3 {
        let mut out = vec![vec![0.0; n]; 3];
        for i in 0..n {
            let lab = srgb_to_lab([f.plane(0)[i], f.plane(1)[i], f.plane(2)[i]]);
            for c in 0..3 {
                out[c][i] = lab[c];
            }
        }
        out
    } else {
        (0..f.channels())
            .map(|c| f.plane(c).iter().map(|v| 100.0 * v).collect())
            .collect()
    }
}

fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|v| {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    });
    let x = (0.412_456_4 * lin[0] + 0.357_576_1 * lin[1] + 0.180_437_5 * lin[2]) / 0.950_47;
    let y = 0.212_672_9 * lin[0] + 0.715_152_2 * lin[1] + 0.072_175_0 * lin[2];
    let z = (0.019_333_9 * lin[0] + 0.119_192_0 * lin[1] + 0.950_304_1 * lin[2]) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone)]
struct Center {
    y: f64,
    x: f64,
    color: Vec<f64>,
}

/// SLIC oversegmentation followed by connectivity enforcement.
///
/// Seeds sit on a regular `ny × nx` grid with `nx·ny ≈ target_regions`, nudged to the
/// lowest-gradient pixel of their 3×3 neighbourhood. After [`SLIC_ITERATIONS`] rounds of
/// localized k-means, every cluster keeps only its largest connected component; the other
/// components are absorbed into the largest adjacent region. Ids are renumbered in raster
/// order of first appearance.
pub fn oversegment(
    image: &ImagePlane,
    target_regions: usize,
    compactness: f64,
) -> Result<SuperpixelMap> {
    let (h, w) = (image.height(), image.width());
    ensure(target_regions >= 2, || {
        format!("target_regions must be at least 2, got {target_regions}")
    })?;
    ensure(target_regions <= h * w / 4, || {
        format!(
            "target_regions {} too large for a {}x{} image (max {})",
            target_regions,
            h,
            w,
            h * w / 4
        )
    })?;
    ensure(compactness.is_finite() && compactness > 0.0, || {
        format!("compactness must be positive, got {compactness}")
    })?;

    let colors = clustering_colors(image);
    let nc = colors.len();
    let step = ((h * w) as f64 / target_regions as f64).sqrt();
    let ny = ((target_regions as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let nx = ((target_regions as f64 / ny as f64).round() as usize).clamp(1, w);

    let grad = |y: usize, x: usize| -> f64 {
        if y == 0 || x == 0 || y + 1 >= h || x + 1 >= w {
            return f64::INFINITY;
        }
        (0..nc)
            .map(|c| {
                let ch = &colors[c];
                let dx = ch[y * w + x + 1] - ch[y * w + x - 1];
                let dy = ch[(y + 1) * w + x] - ch[(y - 1) * w + x];
                dx * dx + dy * dy
            })
            .sum()
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cy = ((j as f64 + 0.5) * h as f64 / ny as f64) as usize;
            let cx = ((i as f64 + 0.5) * w as f64 / nx as f64) as usize;
            let (mut by, mut bx, mut best) = (cy, cx, grad(cy, cx));
            for yy in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for xx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = grad(yy, xx);
                    if g < best {
                        (by, bx, best) = (yy, xx, g);
                    }
                }
            }
            centers.push(Center {
                y: by as f64,
                x: bx as f64,
                color: (0..nc).map(|c| colors[c][by * w + bx]).collect(),
            });
        }
    }

    let mut labels: Vec<u32> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            ((y * ny / h) * nx + x * nx / w) as u32
        })
        .collect();
    let spatial_weight = (compactness / step).powi(2);
    let radius = step.ceil() as isize;
    let mut dist = vec![f64::INFINITY; h * w];

    for _ in 0..SLIC_ITERATIONS {
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cy, cx) = (c.y.round() as isize, c.x.round() as isize);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let dc: f64 = (0..nc).map(|ch| (colors[ch][i] - c.color[ch]).powi(2)).sum();
                    let ds = (y as f64 - c.y).powi(2) + (x as f64 - c.x).powi(2);
                    let d = dc + ds * spatial_weight;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; nc], 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s.0 += (i / w) as f64;
            s.1 += (i % w) as f64;
            for ch in 0..nc {
                s.2[ch] += colors[ch][i];
            }
            s.3 += 1;
        }
        for (c, (sy, sx, sc, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                c.y = sy / n;
                c.x = sx / n;
                c.color = sc.into_iter().map(|v| v / n).collect();
            }
        }
    }

    enforce_connectivity(&mut labels, h, w);
    relabel_dense(&mut labels);
    SuperpixelMap::new(h, w, labels)
}

/// Keeps the largest component of each label; merges the rest into the largest adjacent
/// kept region until every label is connected.
fn enforce_connectivity(labels: &mut [u32], h: usize, w: usize) {
    loop {
        let comps = Components::label(labels, h, w);
        let nlabels = comps.label.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut keeper = vec![usize::MAX; nlabels];
        for (c, &l) in comps.label.iter().enumerate() {
            let k = &mut keeper[l as usize];
            if *k == usize::MAX || comps.sizes[c] > comps.sizes[*k] {
                *k = c;
            }
        }
        let is_keeper = |c: usize| keeper[comps.label[c] as usize] == c;
        if (0..comps.sizes.len()).all(is_keeper) {
            return;
        }
        // For every orphan component, the largest adjacent kept component.
        let mut target = vec![usize::MAX; comps.sizes.len()];
        let mut consider = |a: usize, b: usize| {
            if !is_keeper(a) && is_keeper(b) {
                let t = &mut target[a];
                if *t == usize::MAX
                    || comps.sizes[b] > comps.sizes[*t]
                    || (comps.sizes[b] == comps.sizes[*t] && b < *t)
                {
                    *t = b;
                }
            }
        };
        for y in 0..h {
            for x in 0..w {
                let a = comps.id[y * w + x];
                if x + 1 < w {
                    let b = comps.id[y * w + x + 1];
                    consider(a, b);
                    consider(b, a);
                }
                if y + 1 < h {
                    let b = comps.id[(y + 1) * w + x];
                    consider(a, b);
                    consider(b, a);
                }
            }
        }
        for (i, l) in labels.iter_mut().enumerate() {
            let t = target[comps.id[i]];
            if t != usize::MAX {
                *l = comps.label[t];
            }
        }
    }
}

fn relabel_dense(labels: &mut [u32]) {
    let mut map: Vec<u32> = vec![u32::MAX; labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)];
    let mut next = 0;
    for l in labels.iter_mut() {
        let m = &mut map[*l as usize];
        if *m == u32::MAX {
            *m = next;
            next += 1;
        }
        *l = *m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImagePlane {
        ImagePlane::new(FeatureField::from_fn(1, h, w, |_, y, x| f(y, x))).unwrap()
    }

    fn is_partition(map: &SuperpixelMap) -> bool {
        SuperpixelMap::new(map.height(), map.width(), map.assignment().to_vec()).is_ok()
    }

    #[test]
    fn constant_image_splits_into_four() {
        let img = gray(8, 8, |_, _| 0.5);
        let map = oversegment(&img, 4, DEFAULT_COMPACTNESS).unwrap();
        assert_eq!(map.region_count(), 4);
        assert_eq!(map.region_sizes().iter().sum::<usize>(), 64);
        assert!(is_partition(&map));
    }

    #[test]
    fn two_halves_are_recovered() {
        let img = gray(16, 16, |_, x| if x < 8 { 0.0 } else { 1.0 });
        let map = oversegment(&img, 2, 40.0).unwrap();
        assert_eq!(map.region_count(), 2);
        for r in 0..2 {
            let (mut black, mut total) = (0, 0);
            for y in 0..16 {
                for x in 0..16 {
                    if map.region_at(y, x) == r {
                        total += 1;
                        black += (x < 8) as usize;
                    }
                }
            }
            let purity = black.max(total - black) as f64 / total as f64;
            assert!(purity >= 0.95, "region {r} purity {purity}");
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let img = gray(8, 8, |_, _| 0.1);
        assert!(matches!(oversegment(&img, 1, 10.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(oversegment(&img, 17, 10.0), Err(Error::InvalidArgument(_))));
        assert!(oversegment(&img, 16, 10.0).is_ok());
    }

    #[test]
    fn small_images_are_rejected() {
        let f = FeatureField::zeros(1, 7, 9);
        assert!(ImagePlane::new(f).is_err());
    }

    #[test]
    fn graph_of_two_horizontal_bands() {
        let map = SuperpixelMap::new(4, 4, [vec![0; 8], vec![1; 8]].concat()).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.edges().len(), 1);
        let e = &g.edges()[0];
        assert_eq!((e.p, e.q), (0, 1));
        assert_eq!(e.boundary.len(), 4);
        assert!(e.boundary.iter().all(|p| p.axis == PairAxis::Vertical && p.y == 1));
        assert_eq!(g.region_sizes(), &[8, 8]);
    }

    #[test]
    fn single_region_has_no_edges() {
        let map = SuperpixelMap::new(3, 3, vec![0; 9]).unwrap();
        assert!(build_graph(&map).edges().is_empty());
    }

    #[test]
    fn four_quadrants_2x2() {
        let map = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let g = build_graph(&map);
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.p, e.q, e.boundary.len())).collect();
        assert_eq!(pairs, vec![(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1)]);
        assert_eq!(g.boundary_pairs(3, 1), g.boundary_pairs(1, 3));
        assert!(g.boundary_pairs(0, 3).is_empty());
    }

    #[test]
    fn disconnected_ids_are_rejected() {
        assert!(SuperpixelMap::new(1, 3, vec![0, 1, 0]).is_err());
        assert!(SuperpixelMap::new(1, 3, vec![0, 2, 2]).is_err());
    }

    #[test]
    fn orphan_components_are_absorbed() {
        // label 1 appears in two pieces; the single-pixel piece must go
        #[rustfmt::skip]
        let mut labels = vec![
            1, 1, 0, 0,
            1, 1, 0, 1,
            2, 2, 0, 0,
            2, 2, 2, 2,
        ];
        enforce_connectivity(&mut labels, 4, 4);
        assert_eq!(labels[7], 0);
        relabel_dense(&mut labels);
        assert!(SuperpixelMap::new(4, 4, labels).is_ok());
    }

    #[test]
    fn map_serialization_roundtrip_and_truncation() {
        let map = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(SuperpixelMap::from_bytes(&bytes).unwrap(), map);
        assert!(matches!(
            SuperpixelMap::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SuperpixelMap::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn lab_of_white_and_black() {
        let w = srgb_to_lab([1.0; 3]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-2 && w[2].abs() < 1e-2);
        let b = srgb_to_lab([0.0; 3]);
        assert!(b.iter().all(|v| v.abs() < 1e-9));
    }
}
