//! Clusters of the vacant set and the percolation events built from them.
//!
//! Connectivity is nearest-neighbour throughout; ℓ∞ enters only through
//! diameters. Diameter thresholds are compared in integers (5·diam ≥ r).

use std::io::Write;

use serde::Serialize;

use crate::interlacement::InterlacementSample;
use crate::lattice::{BoxIndex, LatticeBox, Point, PointSet, Region};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("vacant site {0} lies outside the domain")]
    NotInDomain(Point),
    #[error("domain of radius {have} does not contain the required box of radius {need}")]
    DomainTooSmall { need: i64, have: i64 },
    #[error("sample window is not a box")]
    NotABox,
    #[error("stage index {index} outside 0..={max}")]
    BadStage { index: usize, max: usize },
    #[error("bad levels: {0}")]
    BadLevels(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    /// ℓ¹ distance one.
    Nearest,
    /// ℓ∞ distance one.
    Star,
}

const CLOSED: u32 = u32::MAX;

/// Connected components of the open sites of a rectangle.
#[derive(Debug, Clone)]
pub struct Components {
    index: BoxIndex,
    comp: Vec<u32>,
    sizes: Vec<usize>,
    envelopes: Vec<(Point, Point)>,
}

impl Components {
    pub fn index(&self) -> &BoxIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Component of `x`, or `None` when `x` is closed or outside.
    pub fn id(&self, x: &Point) -> Option<usize> {
        let k = self.index.index(x)?;
        self.id_at(k)
    }

    #[inline]
    pub fn id_at(&self, k: usize) -> Option<usize> {
        match self.comp[k] {
            CLOSED => None,
            c => Some(c as usize),
        }
    }

    pub fn size(&self, id: usize) -> usize {
        self.sizes[id]
    }

    pub fn envelope(&self, id: usize) -> (Point, Point) {
        self.envelopes[id]
    }

    /// ℓ∞ diameter of component `id`.
    pub fn diameter(&self, id: usize) -> i64 {
        let (lo, hi) = self.envelopes[id];
        (0..lo.dim()).map(|i| hi[i] - lo[i]).max().unwrap_or(0)
    }

    pub fn members(&self, id: usize) -> PointSet {
        (0..self.comp.len()).filter(|&k| self.comp[k] == id as u32).map(|k| self.index.point(k)).collect()
    }

    /// Sorted, de-duplicated ids of the components meeting `sites`.
    pub fn ids_meeting<'a>(&self, sites: impl IntoIterator<Item = &'a Point>) -> Vec<usize> {
        let mut v: Vec<usize> = sites.into_iter().filter_map(|x| self.id(x)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// For every component, the smallest |x − center|∞ over its sites.
    pub fn min_norms(&self, center: &Point) -> Vec<i64> {
        let mut out = vec![i64::MAX; self.len()];
        for (k, &c) in self.comp.iter().enumerate() {
            if c != CLOSED {
                let n = self.index.point(k).linf_dist(center);
                let m = &mut out[c as usize];
                *m = (*m).min(n);
            }
        }
        out
    }
}

/// Labels the components of `{x ∈ rect : open(x)}`; ids follow the
/// lexicographic order of each component's smallest site.
pub fn label_components(index: &BoxIndex, adjacency: Adjacency, mut open: impl FnMut(&Point) -> bool) -> Components {
    let n = index.len();
    let d = index.lo().dim();
    let (lo, hi) = (index.lo(), index.hi());
    let strides = index.strides().to_vec();
    let mask: Vec<bool> = index.points().map(|p| open(&p)).collect();
    let mut comp = vec![CLOSED; n];
    let mut sizes = Vec::new();
    let mut envelopes = Vec::new();
    let mut stack = Vec::new();
    let star_offsets: Vec<Point> = match adjacency {
        Adjacency::Star => crate::lattice::neighbors(&Point::origin(d), true),
        Adjacency::Nearest => Vec::new(),
    };
    for start in 0..n {
        if !mask[start] || comp[start] != CLOSED {
            continue;
        }
        let id = sizes.len() as u32;
        comp[start] = id;
        stack.push(start);
        let p0 = index.point(start);
        let (mut elo, mut ehi) = (p0, p0);
        let mut size = 0;
        while let Some(k) = stack.pop() {
            size += 1;
            let p = index.point(k);
            for i in 0..d {
                if p[i] < elo[i] {
                    elo.set(i, p[i]);
                }
                if p[i] > ehi[i] {
                    ehi.set(i, p[i]);
                }
            }
            let mut visit = |q: usize| {
                if mask[q] && comp[q] == CLOSED {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            match adjacency {
                Adjacency::Nearest => {
                    for i in 0..d {
                        if p[i] > lo[i] {
                            visit(k - strides[i]);
                        }
                        if p[i] < hi[i] {
                            visit(k + strides[i]);
                        }
                    }
                }
                Adjacency::Star => {
                    for off in &star_offsets {
                        if let Some(q) = index.index(&(p + *off)) {
                            visit(q);
                        }
                    }
                }
            }
        }
        sizes.push(size);
        envelopes.push((elo, ehi));
    }
    Components { index: index.clone(), comp, sizes, envelopes }
}

/// Vacancy of every site of a box at every level, encoded by the smallest
/// label of a trajectory visiting the site: x ∈ V^u ⇔ label(x) > u.
#[derive(Debug, Clone, PartialEq)]
pub struct VacancyField {
    domain: LatticeBox,
    index: BoxIndex,
    labels: Vec<f64>,
}

impl VacancyField {
    /// Every site gets `label`; `f64::INFINITY` is vacant at all levels and
    /// `0.0` occupied at all positive levels.
    pub fn filled(domain: LatticeBox, label: f64) -> Self {
        let index = BoxIndex::of_box(&domain);
        let labels = vec![label; index.len()];
        VacancyField { domain, index, labels }
    }

    /// Labels in the order of [`LatticeBox::points`].
    pub fn from_labels(domain: LatticeBox, labels: Vec<f64>) -> Self {
        let index = BoxIndex::of_box(&domain);
        assert_eq!(labels.len(), index.len(), "label count");
        VacancyField { domain, index, labels }
    }

    pub fn from_sample(sample: &InterlacementSample) -> Result<Self, ClusterError> {
        let b = *sample.window().as_box().ok_or(ClusterError::NotABox)?;
        Ok(Self::from_labels(b, sample.first_labels().to_vec()))
    }

    pub fn domain(&self) -> &LatticeBox {
        &self.domain
    }

    pub fn center(&self) -> Point {
        self.domain.center
    }

    pub fn label(&self, x: &Point) -> f64 {
        self.index.index(x).map_or(0.0, |k| self.labels[k])
    }

    pub fn set_label(&mut self, x: &Point, label: f64) {
        let k = self.index.index(x).expect("site outside the domain");
        self.labels[k] = label;
    }

    pub fn is_vacant(&self, x: &Point, u: f64) -> bool {
        self.label(x) > u
    }

    /// V^u ∩ b.
    pub fn vacant_set(&self, u: f64, b: &LatticeBox) -> PointSet {
        b.points().filter(|x| self.domain.contains(x) && self.is_vacant(x, u)).collect()
    }

    fn require(&self, radius: i64) -> Result<LatticeBox, ClusterError> {
        let b = LatticeBox { center: self.domain.center, radius };
        let need = radius + b.center.linf_dist(&self.domain.center);
        if need > self.domain.radius {
            return Err(ClusterError::DomainTooSmall { need, have: self.domain.radius });
        }
        Ok(b)
    }

    /// Components of V^u ∩ b.
    pub fn components(&self, u: f64, b: &LatticeBox) -> Components {
        self.components_with(b, |x| self.label(x) > u)
    }

    fn components_with(&self, b: &LatticeBox, open: impl FnMut(&Point) -> bool) -> Components {
        label_components(&BoxIndex::of_box(b), Adjacency::Nearest, open)
    }
}

/// Cluster structure of an arbitrary vacant set inside a finite domain.
#[derive(Debug, Clone)]
pub struct ClusterDecomposition {
    components: Components,
    domain: PointSet,
    touches_boundary: Vec<bool>,
}

impl ClusterDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn domain(&self) -> &PointSet {
        &self.domain
    }

    pub fn component_of(&self, x: &Point) -> Option<usize> {
        self.components.id(x)
    }

    pub fn size(&self, id: usize) -> usize {
        self.components.size(id)
    }

    pub fn diameter(&self, id: usize) -> i64 {
        self.components.diameter(id)
    }

    /// Whether the component contains a site of the inner boundary of the domain.
    pub fn touches_boundary(&self, id: usize) -> bool {
        self.touches_boundary[id]
    }

    pub fn members(&self, id: usize) -> PointSet {
        self.components.members(id)
    }

    pub fn components(&self) -> &Components {
        &self.components
    }
}

pub fn decompose(vacant: &PointSet, domain: &PointSet) -> Result<ClusterDecomposition, ClusterError> {
    if let Some(x) = vacant.iter().find(|x| !domain.contains(x)) {
        return Err(ClusterError::NotInDomain(*x));
    }
    let Some((lo, hi)) = vacant.bounds() else {
        let index = BoxIndex::new(Point::origin(domain.dim().unwrap_or(3)), Point::splat(domain.dim().unwrap_or(3), -1));
        let components = label_components(&index, Adjacency::Nearest, |_| false);
        return Ok(ClusterDecomposition { components, domain: domain.clone(), touches_boundary: Vec::new() });
    };
    let components = label_components(&BoxIndex::new(lo, hi), Adjacency::Nearest, |x| vacant.contains(x));
    let mut touches_boundary = vec![false; components.len()];
    for x in crate::lattice::boundary(domain).iter() {
        if let Some(c) = components.id(x) {
            touches_boundary[c] = true;
        }
    }
    Ok(ClusterDecomposition { components, domain: domain.clone(), touches_boundary })
}

fn check_levels(v: f64, u: f64) -> Result<(), ClusterError> {
    if !(v >= 0.0 && v <= u) {
        return Err(ClusterError::BadLevels(format!("need 0 ≤ v ≤ u, got v = {v}, u = {u}")));
    }
    Ok(())
}

/// Exist(r, u): V^u ∩ B_r has a cluster of ℓ∞-diameter at least r/5.
pub fn detect_exist(field: &VacancyField, r: i64, u: f64) -> Result<bool, ClusterError> {
    let b = field.require(r)?;
    let comps = field.components(u, &b);
    Ok((0..comps.len()).any(|c| 5 * comps.diameter(c) >= r))
}

/// Unique(r, u, v): all clusters of V^u ∩ B_r with diameter at least r/10
/// are connected to each other in V^v ∩ B_{2r}.
pub fn detect_unique(field: &VacancyField, r: i64, u: f64, v: f64) -> Result<bool, ClusterError> {
    check_levels(v, u)?;
    let outer = field.require(2 * r)?;
    let inner = LatticeBox { center: field.center(), radius: r };
    let cu = field.components(u, &inner);
    let cv = field.components(v, &outer);
    let mut target = None;
    for c in (0..cu.len()).filter(|&c| 10 * cu.diameter(c) >= r) {
        let rep = cu.envelope(c);
        let site = first_site(&cu, c, &rep);
        let id = cv.id(&site).expect("V^u ⊆ V^v");
        match target {
            None => target = Some(id),
            Some(t) if t != id => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

/// Some site of component `c`, searched inside its envelope.
fn first_site(comps: &Components, c: usize, env: &(Point, Point)) -> Point {
    crate::lattice::RectIter::new(env.0, env.1)
        .find(|x| comps.id(x) == Some(c))
        .expect("component has a site in its envelope")
}

/// Ids of the components meeting both the ball B(center, inner) and the
/// sphere ∂B(center, outer).
fn crossing_ids(comps: &Components, center: &Point, inner: i64, outer: i64) -> Vec<usize> {
    let mut near = vec![false; comps.len()];
    let mut far = vec![false; comps.len()];
    for k in 0..comps.index().len() {
        if let Some(c) = comps.id_at(k) {
            let n = comps.index().point(k).linf_dist(center);
            if n <= inner {
                near[c] = true;
            }
            if n == outer {
                far[c] = true;
            }
        }
    }
    (0..comps.len()).filter(|&c| near[c] && far[c]).collect()
}

/// UC(M, u, v): B_M ↔ ∂B_{6M} in V^u, and all clusters of V^u ∩ B_{4M}
/// crossing B_{4M} \ B_{2M} are connected to each other in V^v ∩ B_{4M}.
pub fn detect_uc(field: &VacancyField, m: i64, u: f64, v: f64) -> Result<bool, ClusterError> {
    check_levels(v, u)?;
    let b6 = field.require(6 * m)?;
    let c = field.center();
    let first = !crossing_ids(&field.components(u, &b6), &c, m, 6 * m).is_empty();
    if !first {
        return Ok(false);
    }
    Ok(uc_uniqueness(field, m, u, v))
}

/// The second clause of UC on its own.
pub fn uc_uniqueness(field: &VacancyField, m: i64, u: f64, v: f64) -> bool {
    let c = field.center();
    let b4 = LatticeBox { center: c, radius: 4 * m };
    let cu = field.components(u, &b4);
    let cv = field.components(v, &b4);
    let ids: Vec<usize> = crossing_ids(&cu, &c, 2 * m, 4 * m)
        .into_iter()
        .map(|k| cv.id(&first_site(&cu, k, &cu.envelope(k))).expect("V^u ⊆ V^v"))
        .collect();
    ids.windows(2).all(|w| w[0] == w[1])
}

/// B_r ↮ ∂B_M in V^u: no cluster of V^u ∩ B_M meets both B_r and ∂B_M.
pub fn detect_disconnect(field: &VacancyField, r: i64, m: i64, u: f64) -> Result<bool, ClusterError> {
    let bm = field.require(m)?;
    Ok(crossing_ids(&field.components(u, &bm), &field.center(), r, m).is_empty())
}

/// M(r) = exp((log r)^γ), floored; `None` when it does not fit in a u64.
pub fn m_of_r(r: f64, gamma: f64) -> Option<u64> {
    let v = r.ln().powf(gamma).exp();
    (v.is_finite() && v < u64::MAX as f64).then(|| v.floor() as u64)
}

/// (M/r)^d · p̂, the weighted disconnection statistic.
pub fn weighted_disconnection(p_hat: f64, r: i64, m: i64, d: usize) -> f64 {
    (m as f64 / r as f64).powi(d as i32) * p_hat
}

/// Radius of V_i = B_{4M − ⌊i√M⌋}.
pub fn annulus_radius(m: i64, i: usize) -> i64 {
    4 * m - isqrt((i as i64) * (i as i64) * m)
}

fn isqrt(n: i64) -> i64 {
    let mut x = (n as f64).sqrt() as i64;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// The stage configuration η_j: V^u inside V_{2j}, V^{u−δ} outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub m: i64,
    pub j: usize,
    pub u: f64,
    pub delta: f64,
}

impl Stage {
    pub fn is_open(&self, field: &VacancyField, x: &Point) -> bool {
        let inner = annulus_radius(self.m, 2 * self.j);
        let level = if x.linf_dist(&field.center()) <= inner { self.u } else { self.u - self.delta };
        field.label(x) > level
    }
}

/// Ground clusters 𝒞 (clusters of V^u ∩ B_{4M} meeting ∂B_{4M}) and their
/// grouping under connectivity in a stage configuration.
#[derive(Debug, Clone)]
pub struct ClassPartition {
    /// Cluster sites, indexed like `clusters`.
    pub clusters: Vec<PointSet>,
    /// min |x|∞ over each cluster.
    pub min_norms: Vec<i64>,
    /// η-component of each cluster; equal values mean C ~_η C′.
    pub class_of: Vec<usize>,
}

impl ClassPartition {
    /// Classes of the clusters meeting B_radius, as sorted lists of cluster
    /// indices; the list is sorted by first element.
    pub fn classes_meeting(&self, radius: i64) -> Vec<Vec<usize>> {
        let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (c, &cls) in self.class_of.iter().enumerate() {
            if self.min_norms[c] <= radius {
                by_class.entry(cls).or_default().push(c);
            }
        }
        let mut v: Vec<Vec<usize>> = by_class.into_values().collect();
        v.sort();
        v
    }

    fn class_min_norm(&self, class: &[usize]) -> i64 {
        class.iter().map(|&c| self.min_norms[c]).min().unwrap_or(i64::MAX)
    }

    pub fn support(&self, class: &[usize]) -> PointSet {
        class.iter().flat_map(|&c| self.clusters[c].iter().copied()).collect()
    }

    /// 𝒰_i(η).
    pub fn u_classes(&self, m: i64, i: usize) -> Vec<Vec<usize>> {
        self.classes_meeting(annulus_radius(m, 2 * i))
    }

    /// 𝒰_{i+k,i+1}(η) for k ∈ {0, ½}; `half` selects k = ½.
    pub fn straddling(&self, m: i64, i: usize, half: bool) -> Vec<Vec<usize>> {
        let near = annulus_radius(m, 2 * i + usize::from(half));
        let next = annulus_radius(m, 2 * i + 2);
        self.u_classes(m, i)
            .into_iter()
            .filter(|cl| {
                let n = self.class_min_norm(cl);
                n <= near && n > next
            })
            .collect()
    }
}

/// Builds 𝒞 and its partition under connectivity in `stage` (evaluated in
/// the field's domain, which must contain B_{4M}).
pub fn class_partition(field: &VacancyField, stage: &Stage) -> Result<ClassPartition, ClusterError> {
    let m = stage.m;
    if !(stage.delta >= 0.0 && stage.delta <= stage.u) {
        return Err(ClusterError::BadLevels(format!("need 0 ≤ δ ≤ u, got δ = {}, u = {}", stage.delta, stage.u)));
    }
    let max = isqrt(m) as usize;
    if stage.j > max {
        return Err(ClusterError::BadStage { index: stage.j, max });
    }
    let b4 = field.require(4 * m)?;
    let c = field.center();
    let cu = field.components(stage.u, &b4);
    let ground = crossing_ids(&cu, &c, 4 * m, 4 * m);
    let eta = field.components_with(field.domain(), |x| stage.is_open(field, x));
    let norms = cu.min_norms(&c);
    let mut clusters = Vec::with_capacity(ground.len());
    let mut min_norms = Vec::with_capacity(ground.len());
    let mut class_of = Vec::with_capacity(ground.len());
    for &g in &ground {
        let site = first_site(&cu, g, &cu.envelope(g));
        class_of.push(eta.id(&site).expect("V^u ⊆ {η = 1}"));
        clusters.push(cu.members(g));
        min_norms.push(norms[g]);
    }
    Ok(ClassPartition { clusters, min_norms, class_of })
}

/// Summary of the class structure at stage j.
#[derive(Debug, Clone, Serialize)]
pub struct ClassCounts {
    pub m: i64,
    pub j: usize,
    /// |𝒞|.
    pub n_clusters: usize,
    /// U_i(η_j) for 0 ≤ i ≤ ⌊√M⌋.
    pub u_counts: Vec<usize>,
    /// U_{i,i+1}(η_j) for 0 ≤ i < ⌊√M⌋.
    pub straddle_counts: Vec<usize>,
    /// 𝒰̃(η_j) as lists of cluster indices; empty when j = ⌊√M⌋.
    pub tilde: Vec<Vec<usize>>,
}

pub fn class_counts(field: &VacancyField, m: i64, j: usize, u: f64, delta: f64) -> Result<ClassCounts, ClusterError> {
    let stage = Stage { m, j, u, delta };
    let part = class_partition(field, &stage)?;
    let top = isqrt(m) as usize;
    let u_counts = (0..=top).map(|i| part.u_classes(m, i).len()).collect();
    let straddle_counts = (0..top).map(|i| part.straddling(m, i, false).len()).collect();
    let tilde = if j < top { tilde_family(&part, m, j) } else { Vec::new() };
    Ok(ClassCounts { m, j, n_clusters: part.clusters.len(), u_counts, straddle_counts, tilde })
}

/// 𝒰̃: 𝒰_j minus its straddling classes, plus their merger when some class
/// reaches V_{2j+1} without reaching V_{2j+2}.
pub fn tilde_family(part: &ClassPartition, m: i64, j: usize) -> Vec<Vec<usize>> {
    let straddle = part.straddling(m, j, false);
    let mut out: Vec<Vec<usize>> = part.u_classes(m, j).into_iter().filter(|c| !straddle.contains(c)).collect();
    if !part.straddling(m, j, true).is_empty() {
        let mut merged: Vec<usize> = straddle.into_iter().flatten().collect();
        merged.sort_unstable();
        out.push(merged);
    }
    out
}

/// U_i(η_i) for 0 ≤ i ≤ ⌊√M⌋: each count uses its own partially sprinkled stage.
pub fn sequential_counts(field: &VacancyField, m: i64, u: f64, delta: f64) -> Result<Vec<usize>, ClusterError> {
    (0..=isqrt(m) as usize)
        .map(|i| Ok(class_partition(field, &Stage { m, j: i, u, delta })?.u_classes(m, i).len()))
        .collect()
}

/// Success count of a Bernoulli event over independent trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tally {
    pub event: String,
    pub r: i64,
    pub m: i64,
    pub u: f64,
    pub v: f64,
    pub n_trials: u64,
    pub n_true: u64,
    pub seed: u64,
}

impl Tally {
    pub fn new(event: &str, r: i64, m: i64, u: f64, v: f64, seed: u64) -> Self {
        Tally { event: event.to_string(), r, m, u, v, n_trials: 0, n_true: 0, seed }
    }

    pub fn record(&mut self, outcome: bool) {
        self.n_trials += 1;
        self.n_true += u64::from(outcome);
    }

    /// Adds the counts of `other`, which must describe the same event.
    pub fn merge(&mut self, other: &Tally) {
        debug_assert_eq!((&self.event, self.r, self.m), (&other.event, other.r, other.m));
        self.n_trials += other.n_trials;
        self.n_true += other.n_true;
    }

    pub fn p_hat(&self) -> f64 {
        if self.n_trials == 0 {
            0.0
        } else {
            self.n_true as f64 / self.n_trials as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n_trials == 0 {
            return 0.0;
        }
        let p = self.p_hat();
        (p * (1.0 - p) / self.n_trials as f64).sqrt()
    }

    pub const CSV_HEADER: &'static str = "event,r,M,u,v,n_trials,n_true,p_hat,stderr,seed";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            self.event,
            self.r,
            self.m,
            self.u,
            self.v,
            self.n_trials,
            self.n_true,
            self.p_hat(),
            self.stderr(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn full_box_is_one_component() {
        let b = LatticeBox::ball(3, 3);
        let dec = decompose(&b.to_set(), &b.to_set()).unwrap();
        assert_eq!(dec.len(), 1);
        assert_eq!(dec.diameter(0), 6);
        assert!(dec.touches_boundary(0));
    }

    #[test]
    fn opposite_corners_are_separate() {
        let b = LatticeBox::ball(3, 3).to_set();
        let v: PointSet = [p(&[-3, -3, -3]), p(&[3, 3, 3])].into_iter().collect();
        let dec = decompose(&v, &b).unwrap();
        assert_eq!(dec.len(), 2);
        assert_eq!(dec.size(0), 1);
        assert_eq!(dec.diameter(1), 0);
        assert!(decompose(&[p(&[9, 0, 0])].into_iter().collect(), &b).is_err());
    }

    #[test]
    fn exist_threshold_is_exact() {
        let r = 20;
        let mut f = VacancyField::filled(LatticeBox::ball(3, r), 0.0);
        for x in 0..=3 {
            f.set_label(&p(&[x, 0, 0]), f64::INFINITY);
        }
        assert!(!detect_exist(&f, r, 1.0).unwrap());
        f.set_label(&p(&[4, 0, 0]), f64::INFINITY);
        assert!(detect_exist(&f, r, 1.0).unwrap());
        assert!(detect_exist(&VacancyField::filled(LatticeBox::ball(3, r), f64::INFINITY), r, 1.0).unwrap());
        assert!(!detect_exist(&VacancyField::filled(LatticeBox::ball(3, r), 0.0), r, 1.0).unwrap());
    }

    #[test]
    fn disconnect_trivial_cases() {
        let b = LatticeBox::ball(3, 8);
        let mut f = VacancyField::filled(b, 0.0);
        assert!(detect_disconnect(&f, 2, 8, 1.0).unwrap());
        for x in 0..=8 {
            f.set_label(&p(&[x, 0, 0]), 5.0);
        }
        assert!(!detect_disconnect(&f, 2, 8, 1.0).unwrap());
        assert!(detect_disconnect(&f, 2, 8, 5.0).unwrap());
        assert!(detect_disconnect(&f, 2, 9, 1.0).is_err());
    }

    #[test]
    fn annulus_radii() {
        assert_eq!(annulus_radius(9, 0), 36);
        assert_eq!(annulus_radius(9, 1), 33);
        assert_eq!(annulus_radius(10, 1), 37);
        assert_eq!(annulus_radius(10, 2), 34);
        assert_eq!(isqrt(99), 9);
        assert_eq!(m_of_r(std::f64::consts::E, 2.0), Some(2));
        assert_eq!(m_of_r(1e6, 3.0), None);
    }

    #[test]
    fn single_spanning_cluster_counts_one() {
        let m = 4;
        let f = VacancyField::filled(LatticeBox::ball(3, 4 * m), f64::INFINITY);
        let cc = class_counts(&f, m, 0, 1.0, 0.5).unwrap();
        assert_eq!(cc.n_clusters, 1);
        assert!(cc.u_counts.iter().all(|&n| n == 1));
        assert!(cc.straddle_counts.iter().all(|&n| n == 0));
    }

    #[test]
    fn tally_merge() {
        let mut a = Tally::new("exist", 6, 0, 0.5, 0.0, 1);
        a.record(true);
        a.record(false);
        let mut b = a.clone();
        b.record(true);
        a.merge(&b);
        assert_eq!((a.n_trials, a.n_true), (5, 3));
        let mut buf = Vec::new();
        a.write_csv_row(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("exist,6,0,0.5,0,5,3,0.6,"));
    }
}
