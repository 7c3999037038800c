//! The interlacement point process restricted to a finite window.
//!
//! One sample carries every trajectory that hits the window up to level
//! `u_max`, each with its own uniform label. Lower levels are views obtained
//! by thresholding labels, so all levels of one sample are coupled.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::lattice::{boundary, BoxIndex, DenseSet, LatticeBox, Point, PointSet, Region};
use crate::potential::{equilibrium_measure_with, EquilibriumMeasure, PotentialError, PotentialOptions};
use crate::walk::{
    default_truncation, escape_attempt, no_return_walk, open_closed_unit, walk_to_exit, RngStream, WalkError,
    WalkPath, DEFAULT_REJECTION_CAP,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterlacementError {
    #[error("empty window")]
    EmptyWindow,
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("trajectory {index}: {source}")]
    Walk { index: usize, source: WalkError },
    #[error("level {u} outside (0, {u_max}]")]
    BadLevel { u: f64, u_max: f64 },
    #[error("truncation radius {radius} too small for window radius {window_radius}")]
    TruncationTooSmall { radius: i64, window_radius: i64 },
    #[error("monte carlo equilibrium: no escape in {0} pilot walks")]
    NoEscape(u64),
}

/// How the window's equilibrium measure is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquilibriumMode {
    /// Dense Green-matrix solve; limited by the potential module's size cap.
    Exact,
    /// Anchors drawn uniformly on ∂W and kept when an escape attempt
    /// succeeds; the capacity comes from a pilot run of `pilot` attempts.
    MonteCarlo { pilot: u64, seed: u64 },
    /// Exact when the window fits the size cap, Monte Carlo otherwise.
    Auto { pilot: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Defaults to max(50, 20 · window radius).
    pub truncation_radius: Option<i64>,
    pub rejection_cap: u64,
    pub equilibrium: EquilibriumMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            truncation_radius: None,
            rejection_cap: DEFAULT_REJECTION_CAP,
            equilibrium: EquilibriumMode::Auto { pilot: 100_000, seed: 0 },
        }
    }
}

#[derive(Debug, Clone)]
enum Equilibrium {
    Exact { measure: EquilibriumMeasure<f64>, cumulative: Vec<f64> },
    MonteCarlo { capacity: f64, stderr: f64 },
}

/// A finite window with precomputed membership bitmap and boundary.
#[derive(Debug, Clone)]
pub struct Window {
    set: PointSet,
    dense: DenseSet,
    boundary: Vec<Point>,
    as_box: Option<LatticeBox>,
}

impl Window {
    pub fn new(set: PointSet) -> Result<Self, InterlacementError> {
        if set.is_empty() {
            return Err(InterlacementError::EmptyWindow);
        }
        let dense = DenseSet::from_set(&set);
        let boundary = boundary(&set).into_iter().collect();
        Ok(Window { set, dense, boundary, as_box: None })
    }

    pub fn from_box(b: LatticeBox) -> Self {
        let set = b.to_set();
        let boundary = b.sphere().into_iter().collect();
        Window { dense: DenseSet::from_box(&b), set, boundary, as_box: Some(b) }
    }

    pub fn set(&self) -> &PointSet {
        &self.set
    }

    pub fn as_box(&self) -> Option<&LatticeBox> {
        self.as_box.as_ref()
    }

    pub fn index(&self) -> &BoxIndex {
        self.dense.index()
    }

    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn dim(&self) -> usize {
        self.set.dim().unwrap()
    }

    pub fn radius(&self) -> i64 {
        self.set.linf_radius()
    }
}

impl Region for Window {
    #[inline]
    fn contains(&self, p: &Point) -> bool {
        self.dense.contains(p)
    }

    fn envelope(&self) -> Option<(Point, Point)> {
        self.dense.envelope()
    }
}

/// One trajectory hitting the window: both halves start at the anchor.
#[derive(Debug, Clone)]
pub struct LabeledTrajectory {
    pub forward: WalkPath,
    pub backward: WalkPath,
    pub label: f64,
    pub anchor: Point,
}

impl LabeledTrajectory {
    /// Sites in time order: the backward half reversed, then the forward half.
    pub fn sites(&self) -> impl Iterator<Item = Point> + '_ {
        let back: Vec<Point> = self.backward.to_vec();
        back.into_iter().rev().chain(self.forward.sites().skip(1))
    }

    /// Index of the anchor in [`sites`](Self::sites).
    pub fn anchor_time(&self) -> usize {
        self.backward.n_steps()
    }
}

/// Prepared sampler for a fixed window; reusable across replicas.
#[derive(Debug, Clone)]
pub struct Sampler {
    window: Arc<Window>,
    equilibrium: Equilibrium,
    trunc: LatticeBox,
    rejection_cap: u64,
}

impl Sampler {
    pub fn new(window: Window, cfg: &SamplerConfig) -> Result<Self, InterlacementError> {
        let d = window.dim();
        let wr = window.radius();
        let radius = cfg.truncation_radius.unwrap_or_else(|| default_truncation(wr));
        if radius < 2 * wr || radius < 1 {
            return Err(InterlacementError::TruncationTooSmall { radius, window_radius: wr });
        }
        let trunc = LatticeBox::ball(d, radius);
        let opts = PotentialOptions::default();
        let exact = match cfg.equilibrium {
            EquilibriumMode::Exact => true,
            EquilibriumMode::MonteCarlo { .. } => false,
            EquilibriumMode::Auto { .. } => window.set.len() <= opts.size_cap && (d == 3 || d == 4),
        };
        let equilibrium = if exact {
            let measure = match equilibrium_measure_with::<f64>(&window.set, &opts) {
                Ok(m) => m,
                Err(
                    PotentialError::TableTooLarge { .. }
                    | PotentialError::TooLarge { .. }
                    | PotentialError::UnsupportedDimension(_),
                ) if matches!(cfg.equilibrium, EquilibriumMode::Auto { .. }) => {
                    return Sampler::new(window, &SamplerConfig { equilibrium: mc_of(cfg.equilibrium), ..*cfg });
                }
                Err(e) => return Err(e.into()),
            };
            let mut acc = 0.0;
            let cumulative = measure
                .weights
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect();
            Equilibrium::Exact { measure, cumulative }
        } else {
            let (pilot, seed) = match cfg.equilibrium {
                EquilibriumMode::MonteCarlo { pilot, seed } | EquilibriumMode::Auto { pilot, seed } => (pilot, seed),
                EquilibriumMode::Exact => unreachable!(),
            };
            let mut rng = RngStream::new(seed, u64::MAX);
            let nb = window.boundary.len();
            let mut hits = 0u64;
            for _ in 0..pilot {
                let x = window.boundary[rng.random_range(0..nb)];
                if escape_attempt(x, &window, &trunc, &mut rng, None) {
                    hits += 1;
                }
            }
            if hits == 0 {
                return Err(InterlacementError::NoEscape(pilot));
            }
            let p = hits as f64 / pilot as f64;
            let stderr = (p * (1.0 - p) / pilot as f64).sqrt() * nb as f64;
            Equilibrium::MonteCarlo { capacity: p * nb as f64, stderr }
        };
        Ok(Sampler { window: Arc::new(window), equilibrium, trunc, rejection_cap: cfg.rejection_cap })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn capacity(&self) -> f64 {
        match &self.equilibrium {
            Equilibrium::Exact { measure, .. } => measure.total,
            Equilibrium::MonteCarlo { capacity, .. } => *capacity,
        }
    }

    /// Standard error of the capacity; zero for the exact solve.
    pub fn capacity_stderr(&self) -> f64 {
        match &self.equilibrium {
            Equilibrium::Exact { .. } => 0.0,
            Equilibrium::MonteCarlo { stderr, .. } => *stderr,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.equilibrium, Equilibrium::Exact { .. })
    }

    pub fn equilibrium_measure(&self) -> Option<&EquilibriumMeasure<f64>> {
        match &self.equilibrium {
            Equilibrium::Exact { measure, .. } => Some(measure),
            Equilibrium::MonteCarlo { .. } => None,
        }
    }

    pub fn truncation_radius(&self) -> i64 {
        self.trunc.radius
    }

    /// cap(W)/R^{d−2}: order of magnitude of the chance that a truncated
    /// forward half would have come back.
    pub fn truncation_bias_bound(&self) -> f64 {
        self.capacity() / (self.trunc.radius as f64).powi(self.window.dim() as i32 - 2)
    }

    fn anchor_and_backward(&self, rng: &mut RngStream, index: usize) -> Result<(Point, WalkPath), InterlacementError> {
        match &self.equilibrium {
            Equilibrium::Exact { measure, cumulative } => {
                let total = *cumulative.last().unwrap();
                let v = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= v).min(cumulative.len() - 1);
                let anchor = measure.support[i];
                let walk = no_return_walk(anchor, &*self.window, &self.trunc, self.rejection_cap, rng)
                    .map_err(|source| InterlacementError::Walk { index, source })?;
                Ok((anchor, walk.path))
            }
            Equilibrium::MonteCarlo { .. } => {
                let nb = self.window.boundary.len();
                let mut path = WalkPath::new(self.window.boundary[0]);
                for _ in 0..self.rejection_cap {
                    let x = self.window.boundary[rng.random_range(0..nb)];
                    path = WalkPath::new(x);
                    if escape_attempt(x, &*self.window, &self.trunc, rng, Some(&mut path)) {
                        return Ok((x, path));
                    }
                }
                let _ = path;
                Err(InterlacementError::Walk { index, source: WalkError::RejectionCapExceeded(self.rejection_cap) })
            }
        }
    }

    pub fn sample(&self, u_max: f64, rng: &mut RngStream) -> Result<InterlacementSample, InterlacementError> {
        if !(u_max >= 0.0) || !u_max.is_finite() {
            return Err(InterlacementError::BadLevel { u: u_max, u_max });
        }
        let mean = u_max * self.capacity();
        let n = if mean > 0.0 { Poisson::new(mean).expect("poisson mean").sample(rng) as usize } else { 0 };
        let mut labels: Vec<f64> = (0..n).map(|_| u_max * open_closed_unit(rng)).collect();
        labels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut trajectories = Vec::with_capacity(n);
        for (index, label) in labels.into_iter().enumerate() {
            let (anchor, backward) = self.anchor_and_backward(rng, index)?;
            let forward = walk_to_exit(anchor, &self.trunc, rng);
            trajectories.push(LabeledTrajectory { forward, backward, label, anchor });
        }
        Ok(InterlacementSample::from_trajectories(self.window.clone(), u_max, trajectories))
    }
}

fn mc_of(mode: EquilibriumMode) -> EquilibriumMode {
    match mode {
        EquilibriumMode::Auto { pilot, seed } | EquilibriumMode::MonteCarlo { pilot, seed } => {
            EquilibriumMode::MonteCarlo { pilot, seed }
        }
        EquilibriumMode::Exact => EquilibriumMode::Exact,
    }
}

/// One-shot sampling with the default configuration and a given truncation.
pub fn sample(
    window: &PointSet,
    u_max: f64,
    rng: &mut RngStream,
    truncation_radius: Option<i64>,
) -> Result<InterlacementSample, InterlacementError> {
    let cfg = SamplerConfig { truncation_radius, ..SamplerConfig::default() };
    Sampler::new(Window::new(window.clone())?, &cfg)?.sample(u_max, rng)
}

/// Appends the window indices of the sites of `path` after the first
/// `skip`, jumping over stretches that are too far away to matter.
fn record_visits(window: &Window, path: &WalkPath, skip: usize, out: &mut Vec<u32>) {
    let (lo, hi) = window.envelope().unwrap();
    let ix = window.index();
    let mut cur = path.start();
    let mut free = 0i64;
    for (t, &dir) in std::iter::once(&u8::MAX).chain(path.steps()).enumerate() {
        if t > 0 {
            cur.step_mut(dir);
        }
        if free > 0 {
            free -= 1;
            continue;
        }
        let dist = cur.rect_distance(&lo, &hi);
        if dist > 0 {
            free = dist - 1;
            continue;
        }
        if t >= skip && window.contains(&cur) {
            out.push(ix.index(&cur).unwrap() as u32);
        }
    }
}

/// A realisation of the process on the window, with label-threshold views.
#[derive(Debug, Clone)]
pub struct InterlacementSample {
    window: Arc<Window>,
    u_max: f64,
    trajectories: Vec<LabeledTrajectory>,
    /// Per trajectory: (window index, visits).
    visits: Vec<Vec<(u32, u32)>>,
    /// Smallest label among trajectories visiting each window site.
    first_label: Vec<f64>,
    occupation: Vec<u32>,
}

impl InterlacementSample {
    /// Builds the views from explicit trajectories (sorted by label here).
    pub fn from_trajectories(window: Arc<Window>, u_max: f64, mut trajectories: Vec<LabeledTrajectory>) -> Self {
        trajectories.sort_by(|a, b| a.label.partial_cmp(&b.label).unwrap());
        let ix = window.index().clone();
        let mut first_label = vec![f64::INFINITY; ix.len()];
        let mut occupation = vec![0u32; ix.len()];
        let mut visits = Vec::with_capacity(trajectories.len());
        let mut scratch: Vec<u32> = Vec::new();
        for t in &trajectories {
            scratch.clear();
            record_visits(&window, &t.forward, 0, &mut scratch);
            record_visits(&window, &t.backward, 1, &mut scratch);
            scratch.sort_unstable();
            let mut v: Vec<(u32, u32)> = Vec::new();
            for &k in scratch.iter() {
                match v.last_mut() {
                    Some((last, c)) if *last == k => *c += 1,
                    _ => v.push((k, 1)),
                }
            }
            for &(k, c) in &v {
                occupation[k as usize] += c;
                if first_label[k as usize] > t.label {
                    first_label[k as usize] = t.label;
                }
            }
            visits.push(v);
        }
        InterlacementSample { window, u_max, trajectories, visits, first_label, occupation }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn window_arc(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn trajectories(&self) -> &[LabeledTrajectory] {
        &self.trajectories
    }

    fn check_level(&self, u: f64) -> Result<(), InterlacementError> {
        if u > 0.0 && u <= self.u_max {
            Ok(())
        } else {
            Err(InterlacementError::BadLevel { u, u_max: self.u_max })
        }
    }

    /// Number of trajectories with label ≤ u.
    pub fn count_at_level(&self, u: f64) -> usize {
        self.trajectories.partition_point(|t| t.label <= u)
    }

    /// Smallest label of a trajectory visiting `x`; infinite when unvisited
    /// or outside the window.
    pub fn first_label(&self, x: &Point) -> f64 {
        match self.window.index().index(x) {
            Some(k) if self.window.contains(x) => self.first_label[k],
            _ => f64::INFINITY,
        }
    }

    /// Dense first-label array over the window's bounding rectangle.
    pub fn first_labels(&self) -> &[f64] {
        &self.first_label
    }

    pub fn is_vacant(&self, x: &Point, u: f64) -> bool {
        self.window.contains(x) && self.first_label(x) > u
    }

    /// V^u ∩ window.
    pub fn vacant_at_level(&self, u: f64) -> Result<PointSet, InterlacementError> {
        self.check_level(u)?;
        Ok(self.window.set.iter().filter(|x| self.first_label(x) > u).copied().collect())
    }

    /// I^u ∩ window.
    pub fn interlacement_at_level(&self, u: f64) -> Result<PointSet, InterlacementError> {
        self.check_level(u)?;
        Ok(self.window.set.iter().filter(|x| self.first_label(x) <= u).copied().collect())
    }

    /// True when no trajectory with label ≤ u touches the window.
    pub fn window_vacant(&self, u: f64) -> bool {
        self.count_at_level(u) == 0
    }

    /// Sites of the window visited by trajectories with label in (lo, hi].
    pub fn trace_between(&self, lo: f64, hi: f64) -> PointSet {
        let ix = self.window.index();
        let mut out = PointSet::new();
        for (t, v) in self.trajectories.iter().zip(&self.visits) {
            if t.label > lo && t.label <= hi {
                out.extend(v.iter().map(|&(k, _)| ix.point(k as usize)));
            }
        }
        out
    }

    /// ℓ^u_x for a single site.
    pub fn occupation_at(&self, x: &Point, u: f64) -> u64 {
        let Some(k) = self.window.index().index(x) else { return 0 };
        if !self.window.contains(x) {
            return 0;
        }
        let n = self.count_at_level(u);
        self.visits[..n]
            .iter()
            .filter_map(|v| v.binary_search_by_key(&(k as u32), |&(i, _)| i).ok().map(|j| v[j].1 as u64))
            .sum()
    }

    /// ℓ^u on the window as (site, count) with count > 0.
    pub fn occupation_at_level(&self, u: f64) -> Vec<(Point, u64)> {
        let n = self.count_at_level(u);
        let ix = self.window.index();
        let mut acc = vec![0u64; ix.len()];
        for v in &self.visits[..n] {
            for &(k, c) in v {
                acc[k as usize] += c as u64;
            }
        }
        acc.iter().enumerate().filter(|(_, c)| **c > 0).map(|(k, c)| (ix.point(k), *c)).collect()
    }

    /// ℓ^{u_max} on the window.
    pub fn occupation(&self) -> Vec<(Point, u64)> {
        let ix = self.window.index();
        self.occupation
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| (ix.point(k), *c as u64))
            .collect()
    }

    /// One line per trajectory: `{"label":..,"anchor":[..],"fwd":[[..]..],"bwd":[[..]..]}`.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Rec {
            label: f64,
            anchor: Point,
            fwd: Vec<Point>,
            bwd: Vec<Point>,
        }
        for t in &self.trajectories {
            let rec = Rec { label: t.label, anchor: t.anchor, fwd: t.forward.to_vec(), bwd: t.backward.to_vec() };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// `x1,...,xd,count` rows of ℓ^{u_max}, with header.
    pub fn write_occupancy_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.window.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).chain(["count".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (p, c) in self.occupation() {
            let row: Vec<String> = p.coords().iter().map(|v| v.to_string()).chain([c.to_string()]).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-site comparison of the increment process against fresh samples.
#[derive(Debug, Clone, Serialize)]
pub struct IncrementReport {
    pub u: f64,
    pub v: f64,
    pub n_coupled: usize,
    pub n_fresh: usize,
    /// (site, frequency in the (u, v] trace, frequency in fresh I^{v−u}, z-score)
    pub sites: Vec<(Point, f64, f64, f64)>,
    pub max_abs_z: f64,
    /// Frequencies of the plain set difference I^v \ I^u, for reference.
    pub set_difference: Vec<(Point, f64)>,
}

/// Compares, site by site, the trace of trajectories with labels in (u, v]
/// (from `coupled`, sampled up to at least v) with I^{v−u} from `fresh`.
pub fn increment_law_check(
    coupled: &[InterlacementSample],
    fresh: &[InterlacementSample],
    u: f64,
    v: f64,
) -> IncrementReport {
    assert!(u <= v);
    let window = match coupled.first().or(fresh.first()) {
        Some(s) => s.window.set.clone(),
        None => PointSet::new(),
    };
    let n1 = coupled.len().max(1) as f64;
    let n2 = fresh.len().max(1) as f64;
    let mut sites = Vec::new();
    let mut set_difference = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for x in &window {
        let a = coupled.iter().filter(|s| s.trajectories.iter().zip(&s.visits).any(|(t, vv)| {
            t.label > u && t.label <= v && {
                let k = s.window.index().index(x).unwrap() as u32;
                vv.binary_search_by_key(&k, |&(i, _)| i).is_ok()
            }
        }));
        let p1 = a.count() as f64 / n1;
        let p2 = fresh.iter().filter(|s| s.first_label(x) <= v - u).count() as f64 / n2;
        let pd = coupled.iter().filter(|s| s.first_label(x) > u && s.first_label(x) <= v).count() as f64 / n1;
        let pool = (p1 * n1 + p2 * n2) / (n1 + n2);
        let se = (pool * (1.0 - pool) * (1.0 / n1 + 1.0 / n2)).sqrt();
        let z = if se > 0.0 { (p1 - p2) / se } else { 0.0 };
        max_abs_z = max_abs_z.max(z.abs());
        sites.push((*x, p1, p2, z));
        set_difference.push((*x, pd));
    }
    IncrementReport { u, v, n_coupled: coupled.len(), n_fresh: fresh.len(), sites, max_abs_z, set_difference }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_sampler(r: i64) -> Sampler {
        Sampler::new(Window::from_box(LatticeBox::ball(3, r)), &SamplerConfig::default()).unwrap()
    }

    #[test]
    fn zero_level_gives_empty_sample() {
        let s = ball_sampler(1);
        let mut rng = RngStream::new(1, 0);
        let smp = s.sample(0.0, &mut rng).unwrap();
        assert!(smp.trajectories().is_empty());
        assert!(smp.window_vacant(0.0));
    }

    #[test]
    fn levels_are_monotone_views() {
        let s = ball_sampler(2);
        let mut rng = RngStream::new(2, 0);
        let smp = s.sample(2.0, &mut rng).unwrap();
        let mut prev = smp.vacant_at_level(0.1).unwrap();
        for u in [0.5, 1.0, 1.5, 2.0] {
            let cur = smp.vacant_at_level(u).unwrap();
            assert!(cur.is_subset(&prev));
            prev = cur;
        }
        assert!(smp.vacant_at_level(2.5).is_err());
        assert!(smp.vacant_at_level(0.0).is_err());
        let full = smp.vacant_at_level(2.0).unwrap();
        let occ: PointSet = smp.occupation().into_iter().map(|(p, _)| p).collect();
        assert_eq!(full, s.window().set().difference(&occ));
    }

    #[test]
    fn trajectory_invariants() {
        let s = ball_sampler(1);
        let mut rng = RngStream::new(3, 0);
        let smp = s.sample(3.0, &mut rng).unwrap();
        for t in smp.trajectories() {
            assert_eq!(t.forward.start(), t.anchor);
            assert_eq!(t.backward.start(), t.anchor);
            assert!(s.window().boundary().contains(&t.anchor));
            assert!(t.backward.sites().skip(1).all(|p| !s.window().contains(&p)));
            assert!(t.label > 0.0 && t.label <= 3.0);
        }
        assert!(smp.trajectories().windows(2).all(|w| w[0].label <= w[1].label));
    }

    #[test]
    fn occupation_matches_interlacement_set() {
        let s = ball_sampler(2);
        let mut rng = RngStream::new(4, 0);
        let smp = s.sample(1.0, &mut rng).unwrap();
        for u in [0.25, 0.5, 1.0] {
            let occ: PointSet = smp.occupation_at_level(u).into_iter().map(|(p, _)| p).collect();
            assert_eq!(occ, smp.interlacement_at_level(u).unwrap());
            for x in s.window().set() {
                assert_eq!(smp.occupation_at(x, u) > 0, occ.contains(x));
            }
        }
    }
}
