//! Excursions of trajectories between A and ∂_out U, the clothesline of
//! their endpoints, and the finite-energy box events.

use std::io::Write;

use serde::Serialize;

use crate::clusters::{label_components, Adjacency};
use crate::interlacement::{InterlacementSample, LabeledTrajectory};
use crate::lattice::{BoxIndex, LatticeBox, Point, PointSet, Region};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExcursionError {
    #[error("A is not contained in U (witness {0})")]
    NotNested(Point),
    #[error("set not contained in the sample window (witness {0})")]
    OutsideWindow(Point),
    #[error("trajectory {traj} ends inside U during excursion {k}")]
    PendingExcursion { traj: usize, k: usize },
    #[error("bad parameters: {0}")]
    BadParameters(String),
}

/// One excursion w[R_k, D_k]: from its first visit to A until its first
/// visit outside U.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excursion {
    pub k: usize,
    pub entry_time: usize,
    pub exit_time: usize,
    pub sites: Vec<Point>,
    /// The path ended inside U before D_k; `sites` stops at the last step.
    pub truncated: bool,
}

impl Excursion {
    pub fn entry(&self) -> Point {
        self.sites[0]
    }

    pub fn exit(&self) -> Point {
        *self.sites.last().unwrap()
    }
}

/// Splits a finite path into its excursions between `a` and ∂_out `u`.
pub fn decompose_path<A: Region + ?Sized, U: Region + ?Sized>(sites: &[Point], a: &A, u: &U) -> Vec<Excursion> {
    let mut out = Vec::new();
    let mut t = 0;
    loop {
        let Some(r) = (t..sites.len()).find(|&i| a.contains(&sites[i])) else {
            return out;
        };
        let exit = (r..sites.len()).find(|&i| !u.contains(&sites[i]));
        let k = out.len() + 1;
        match exit {
            Some(d) => {
                out.push(Excursion { k, entry_time: r, exit_time: d, sites: sites[r..=d].to_vec(), truncated: false });
                t = d;
            }
            None => {
                let d = sites.len() - 1;
                out.push(Excursion { k, entry_time: r, exit_time: d, sites: sites[r..].to_vec(), truncated: true });
                return out;
            }
        }
    }
}

/// Excursions of a labelled two-sided trajectory.
pub fn decompose_excursions(traj: &LabeledTrajectory, a: &PointSet, u: &PointSet) -> Result<Vec<Excursion>, ExcursionError> {
    if let Some(x) = a.iter().find(|x| !u.contains(x)) {
        return Err(ExcursionError::NotNested(*x));
    }
    let Some((lo, hi)) = u.bounds() else {
        return Ok(Vec::new());
    };
    let (ca, cu) = (Clipped { set: a, lo, hi }, Clipped { set: u, lo, hi });
    // Only sites within distance 1 of the rectangle around U can matter, and
    // an excursion never leaves that zone before its exit.
    let near = near_sites(traj, &lo, &hi);
    let mut out: Vec<Excursion> = Vec::new();
    let mut i = 0;
    while i < near.len() {
        let mut j = i + 1;
        while j < near.len() && near[j].0 == near[j - 1].0 + 1 {
            j += 1;
        }
        let t0 = near[i].0;
        let run: Vec<Point> = near[i..j].iter().map(|&(_, p)| p).collect();
        for mut e in decompose_path(&run, &ca, &cu) {
            e.k = out.len() + 1;
            e.entry_time += t0;
            e.exit_time += t0;
            out.push(e);
        }
        i = j;
    }
    Ok(out)
}

/// (time, site) pairs of the trajectory within ℓ∞ distance 1 of [lo, hi].
fn near_sites(traj: &LabeledTrajectory, lo: &Point, hi: &Point) -> Vec<(usize, Point)> {
    fn scan(start: Point, steps: &[u8], lo: &Point, hi: &Point, mut f: impl FnMut(usize, Point)) {
        let mut cur = start;
        let mut free = 0i64;
        for t in 0..=steps.len() {
            if t > 0 {
                cur.step_mut(steps[t - 1]);
            }
            if free > 0 {
                free -= 1;
                continue;
            }
            let dist = cur.rect_distance(lo, hi);
            if dist > 1 {
                free = dist - 2;
            } else {
                f(t, cur);
            }
        }
    }
    let nb = traj.backward.n_steps();
    let mut out = Vec::new();
    scan(traj.backward.start(), traj.backward.steps(), lo, hi, |t, p| out.push((nb - t, p)));
    out.reverse();
    scan(traj.forward.start(), traj.forward.steps(), lo, hi, |t, p| {
        if t > 0 {
            out.push((nb + t, p))
        }
    });
    out
}

/// A set with its bounding rectangle, tested before hashing.
struct Clipped<'a> {
    set: &'a PointSet,
    lo: Point,
    hi: Point,
}

impl Region for Clipped<'_> {
    fn contains(&self, p: &Point) -> bool {
        p.rect_distance(&self.lo, &self.hi) == 0 && self.set.contains(p)
    }
}

/// Endpoints of one excursion together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClotheslineRecord {
    pub traj_id: usize,
    pub k: usize,
    pub entry: Point,
    pub exit: Point,
    pub label: f64,
}

/// All excursion endpoint pairs of a sample, ordered by label and then by
/// appearance within the trajectory.
#[derive(Debug, Clone)]
pub struct Clothesline {
    pub records: Vec<ClotheslineRecord>,
    /// Excursions in the same order as `records`.
    pub excursions: Vec<Excursion>,
}

impl Clothesline {
    /// C_u as a sorted multiset of (entry, exit) pairs.
    pub fn pairs(&self, u: f64) -> Vec<(Point, Point)> {
        let mut v: Vec<(Point, Point)> =
            self.records.iter().filter(|r| r.label <= u).map(|r| (r.entry, r.exit)).collect();
        v.sort();
        v
    }

    /// The labelled sequence view at level u.
    pub fn sequence(&self, u: f64) -> impl Iterator<Item = &ClotheslineRecord> + '_ {
        self.records.iter().filter(move |r| r.label <= u)
    }

    /// `traj_id,k,entry_x1..,exit_x1..,label`, with header.
    pub fn write_csv<W: Write>(&self, mut w: W, d: usize) -> std::io::Result<()> {
        let mut header = vec!["traj_id".to_string(), "k".to_string()];
        header.extend((1..=d).map(|i| format!("entry_x{i}")));
        header.extend((1..=d).map(|i| format!("exit_x{i}")));
        header.push("label".to_string());
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.traj_id.to_string(), r.k.to_string()];
            row.extend(r.entry.coords().iter().map(|c| c.to_string()));
            row.extend(r.exit.coords().iter().map(|c| c.to_string()));
            row.push(r.label.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_inside(sample: &InterlacementSample, s: &PointSet) -> Result<(), ExcursionError> {
    match s.iter().find(|x| !sample.window().contains(x)) {
        Some(x) => Err(ExcursionError::OutsideWindow(*x)),
        None => Ok(()),
    }
}

/// Clothesline of a sample for A ⊆ U ⊆ window. A trajectory ending inside
/// U is an error: its last excursion would be silently cut.
pub fn clothesline(sample: &InterlacementSample, a: &PointSet, u: &PointSet) -> Result<Clothesline, ExcursionError> {
    check_inside(sample, u)?;
    let mut records = Vec::new();
    let mut excursions = Vec::new();
    for (traj_id, t) in sample.trajectories().iter().enumerate() {
        for e in decompose_excursions(t, a, u)? {
            if e.truncated {
                return Err(ExcursionError::PendingExcursion { traj: traj_id, k: e.k });
            }
            records.push(ClotheslineRecord { traj_id, k: e.k, entry: e.entry(), exit: e.exit(), label: t.label });
            excursions.push(e);
        }
    }
    Ok(Clothesline { records, excursions })
}

/// D_u: for each clothesline pair with label ≤ u, the piece of its excursion
/// from the first visit to B to the last visit to A, or `None` (the cemetery
/// state) when the excursion misses B.
#[derive(Debug, Clone)]
pub struct InnerView {
    pub level: f64,
    pub pieces: Vec<Option<Vec<Point>>>,
}

impl InnerView {
    /// ⋃ range(w) ∩ B over the pieces.
    pub fn trace(&self, b: &PointSet) -> PointSet {
        self.pieces.iter().flatten().flat_map(|w| w.iter().filter(|x| b.contains(x)).copied()).collect()
    }
}

pub fn restrict_to_inner(
    line: &Clothesline,
    b: &PointSet,
    a: &PointSet,
    level: f64,
) -> Result<InnerView, ExcursionError> {
    if let Some(x) = b.iter().find(|x| !a.contains(x)) {
        return Err(ExcursionError::NotNested(*x));
    }
    let pieces = line
        .records
        .iter()
        .zip(&line.excursions)
        .filter(|(r, _)| r.label <= level)
        .map(|(_, e)| {
            let first = e.sites.iter().position(|x| b.contains(x))?;
            let last = e.sites.iter().rposition(|x| a.contains(x)).unwrap();
            Some(e.sites[first..=last].to_vec())
        })
        .collect();
    Ok(InnerView { level, pieces })
}

/// Checks I^u ∩ B = I(D_u) on one sample; returns the symmetric difference.
pub fn inner_identity_violations(
    sample: &InterlacementSample,
    b: &PointSet,
    a: &PointSet,
    u_set: &PointSet,
    level: f64,
) -> Result<PointSet, ExcursionError> {
    let line = clothesline(sample, a, u_set)?;
    let view = restrict_to_inner(&line, b, a, level)?;
    let lhs: PointSet = b.iter().filter(|x| sample.first_label(x) <= level).copied().collect();
    let rhs = view.trace(b);
    Ok(lhs.difference(&rhs).union(&rhs.difference(&lhs)))
}

/// The sets A ⊂ U around B_r: unions of Euclidean balls of radius s = r^{1/b}
/// centred in B_{r+s} and B_{r+2s} respectively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundedBoxes {
    pub center: Point,
    pub r: i64,
    pub s: f64,
    pub exponent: f64,
}

impl RoundedBoxes {
    /// b = ½(1 + (4d − 4)/(3d − 2)).
    pub fn default_exponent(d: usize) -> f64 {
        let d = d as f64;
        0.5 * (1.0 + (4.0 * d - 4.0) / (3.0 * d - 2.0))
    }

    pub fn new(center: Point, r: i64) -> Self {
        Self::with_exponent(center, r, Self::default_exponent(center.dim()))
    }

    pub fn with_exponent(center: Point, r: i64, exponent: f64) -> Self {
        let s = (r as f64).powf(1.0 / exponent);
        RoundedBoxes { center, r, s, exponent }
    }

    fn member(&self, y: &Point, reach: f64) -> bool {
        let core = (self.r as f64 + reach).floor() as i64;
        let excess: f64 = (0..y.dim())
            .map(|i| {
                let e = ((y[i] - self.center[i]).abs() - core).max(0) as f64;
                e * e
            })
            .sum();
        excess <= self.s * self.s
    }

    pub fn in_a(&self, y: &Point) -> bool {
        self.member(y, self.s)
    }

    pub fn in_u(&self, y: &Point) -> bool {
        self.member(y, 2.0 * self.s)
    }

    /// Radius of the smallest box centred at `center` containing U.
    pub fn outer_radius(&self) -> i64 {
        (self.r as f64 + 2.0 * self.s).floor() as i64 + self.s.floor() as i64
    }

    fn collect(&self, f: impl Fn(&Self, &Point) -> bool) -> PointSet {
        LatticeBox { center: self.center, radius: self.outer_radius() }.points().filter(|y| f(self, y)).collect()
    }

    pub fn a(&self) -> PointSet {
        self.collect(Self::in_a)
    }

    pub fn u(&self) -> PointSet {
        self.collect(Self::in_u)
    }
}

/// Levels and scale of the finite-energy events; requires
/// u1 ≥ u2 ≥ u3 > δ2 > δ1 > 0 and r0 ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteEnergyParams {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub r0: i64,
}

impl FiniteEnergyParams {
    /// The diagonal choice (u, u, u, δ/2, δ).
    pub fn diagonal(u: f64, delta: f64, r0: i64) -> Self {
        FiniteEnergyParams { u1: u, u2: u, u3: u, delta1: delta / 2.0, delta2: delta, r0 }
    }

    pub fn validate(&self) -> Result<(), ExcursionError> {
        let ok = self.u1 >= self.u2
            && self.u2 >= self.u3
            && self.u3 > self.delta2
            && self.delta2 > self.delta1
            && self.delta1 > 0.0
            && self.r0 >= 1;
        if ok {
            Ok(())
        } else {
            Err(ExcursionError::BadParameters(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FiniteEnergyOutcome {
    pub f1: bool,
    pub f2: bool,
    pub f3: bool,
}

impl FiniteEnergyOutcome {
    pub fn all(&self) -> bool {
        self.f1 && self.f2 && self.f3
    }
}

/// B̂ = B(x, r + 7 r0).
pub fn hat_box(b: &LatticeBox, r0: i64) -> LatticeBox {
    b.inflate(7 * r0)
}

/// The three events F̂¹, F̂², F̂³ for the box `b` = B(x, r).
pub fn detect_finite_energy_good(
    sample: &InterlacementSample,
    b: &LatticeBox,
    p: &FiniteEnergyParams,
) -> Result<FiniteEnergyOutcome, ExcursionError> {
    p.validate()?;
    if p.u1 > sample.u_max() {
        return Err(ExcursionError::BadParameters(format!("u1 = {} exceeds u_max = {}", p.u1, sample.u_max())));
    }
    let (x, r, r0) = (b.center, b.radius, p.r0);
    let outer = b.inflate(8 * r0);
    for corner in [outer.lo(), outer.hi()] {
        if !sample.window().contains(&corner) {
            return Err(ExcursionError::OutsideWindow(corner));
        }
    }
    let occupied = |y: &Point, u: f64| sample.first_label(y) <= u;

    // F̂¹: I^{u2−δ1} ∩ A lies in a single component of I^{u2} ∩ Ã.
    let a_tilde = b.inflate(6 * r0);
    let comps = label_components(&BoxIndex::of_box(&a_tilde), Adjacency::Nearest, |y| {
        y.linf_dist(&x) > r + 2 * r0 && occupied(y, p.u2)
    });
    let mut first = None;
    let mut f1 = true;
    for y in b.inflate(5 * r0).points() {
        let n = y.linf_dist(&x);
        if n > r + 3 * r0 && occupied(&y, p.u2 - p.delta1) {
            let c = comps.id(&y).expect("I^{u2−δ1} ⊆ I^{u2}");
            match first {
                None => first = Some(c),
                Some(f) if f != c => {
                    f1 = false;
                    break;
                }
                _ => {}
            }
        }
    }

    // F̂²: some site of B^{r0} has its first label in (u3 − δ2, u3 − δ1].
    let f2 = b.inflate(r0).points().any(|y| {
        let l = sample.first_label(&y);
        l > p.u3 - p.delta2 && l <= p.u3 - p.delta1
    });

    // F̂³: ℓ^{u1} ≤ r0 on B^{8 r0}.
    let f3 = sample
        .occupation_at_level(p.u1)
        .iter()
        .all(|(y, c)| !outer.contains(y) || *c <= r0 as u64);

    Ok(FiniteEnergyOutcome { f1, f2, f3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interlacement::Window;
    use crate::walk::WalkPath;
    use std::sync::Arc;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn hand_traced_single_pass() {
        let a: PointSet = [p(&[0, 0, 0])].into_iter().collect();
        let u = LatticeBox::ball(3, 1);
        // 7 steps: in from the left, one site inside U, through the origin, out on the right.
        let path: Vec<Point> = [-3, -2, -1, 0, 1, 2, 3, 4].iter().map(|&x| p(&[x, 0, 0])).collect();
        let ex = decompose_path(&path, &a, &u);
        assert_eq!(ex.len(), 1);
        assert_eq!((ex[0].entry_time, ex[0].exit_time), (3, 5));
        assert_eq!(ex[0].entry(), p(&[0, 0, 0]));
        assert_eq!(ex[0].exit(), p(&[2, 0, 0]));
        assert!(!ex[0].truncated);
    }

    #[test]
    fn never_entering_gives_nothing() {
        let a: PointSet = [p(&[0, 0, 0])].into_iter().collect();
        let path: Vec<Point> = (2..9).map(|x| p(&[x, 0, 0])).collect();
        assert!(decompose_path(&path, &a, &a).is_empty());
    }

    #[test]
    fn pending_excursion_is_flagged() {
        let a: PointSet = [p(&[0, 0, 0])].into_iter().collect();
        let u = LatticeBox::ball(3, 2);
        let path: Vec<Point> = (-3..=1).map(|x| p(&[x, 0, 0])).collect();
        let ex = decompose_path(&path, &a, &u);
        assert_eq!(ex.len(), 1);
        assert!(ex[0].truncated);
    }

    #[test]
    fn rounded_boxes_nest() {
        let rb = RoundedBoxes::new(Point::origin(3), 4);
        let b = LatticeBox::ball(3, 4).to_set();
        let (a, u) = (rb.a(), rb.u());
        assert!(b.is_subset(&a));
        assert!(a.is_subset(&u));
        assert!(u.iter().all(|y| y.linf() <= rb.outer_radius()));
        assert!((RoundedBoxes::default_exponent(3) - 15.0 / 14.0).abs() < 1e-12);
    }

    fn fixture(labels: &[f64], visits: usize) -> InterlacementSample {
        let w = Arc::new(Window::from_box(LatticeBox::ball(3, 10)));
        let trajectories = labels
            .iter()
            .map(|&label| {
                let anchor = p(&[-10, 0, 0]);
                let mut fwd = WalkPath::new(anchor);
                for _ in 0..visits {
                    for _ in 0..20 {
                        fwd.push(0);
                    }
                    for _ in 0..20 {
                        fwd.push(1);
                    }
                }
                for _ in 0..21 {
                    fwd.push(1);
                }
                let mut bwd = WalkPath::new(anchor);
                bwd.push(1);
                LabeledTrajectory { forward: fwd, backward: bwd, label, anchor }
            })
            .collect();
        InterlacementSample::from_trajectories(w, 2.0, trajectories)
    }

    #[test]
    fn finite_energy_trivial_cases() {
        let b = LatticeBox::ball(3, 1);
        let prm = FiniteEnergyParams { u1: 1.0, u2: 1.0, u3: 1.0, delta1: 0.25, delta2: 0.5, r0: 0 };
        assert!(prm.validate().is_err());
        let prm = FiniteEnergyParams { r0: 1, ..prm };
        let empty = fixture(&[], 1);
        let out = detect_finite_energy_good(&empty, &b, &prm).unwrap();
        assert_eq!(out, FiniteEnergyOutcome { f1: true, f2: false, f3: true });

        let straddling = fixture(&[0.6], 1);
        assert!(detect_finite_energy_good(&straddling, &b, &prm).unwrap().f2);
        let early = fixture(&[0.4], 1);
        assert!(!detect_finite_energy_good(&early, &b, &prm).unwrap().f2);

        let spike = fixture(&[0.9], 1);
        assert!(!detect_finite_energy_good(&spike, &b, &prm).unwrap().f3);
        let big = FiniteEnergyParams { r0: 2, ..prm };
        assert!(detect_finite_energy_good(&spike, &LatticeBox::ball(3, 0), &big).is_err());
    }
}
