//! *-paths running along the interface of two sets covering an annulus, and
//! the boxes of contact extracted from them at a coarse scale.

use std::collections::VecDeque;

use serde::Serialize;

use crate::clusters::{label_components, Adjacency, Components};
use crate::lattice::{neighbors, BoxIndex, LatticeBox, Point, PointSet, Region};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterfaceError {
    #[error("need 1 ≤ n < m, got n = {n}, m = {m}")]
    BadRadii { n: i64, m: i64 },
    #[error("site {0} of the annulus is in neither set")]
    NotCovered(Point),
    #[error("site {0} lies outside the annulus")]
    OutsideAnnulus(Point),
    #[error("{0} has no crossing from the inner to the outer sphere")]
    NoCrossing(&'static str),
    #[error("boundary of complement component {component} is not *-connected; pieces start at {witnesses:?}")]
    BoundaryNotStarConnected { component: usize, witnesses: Vec<Point> },
    #[error("the union of pieces has no *-crossing")]
    NoStarCrossing,
    #[error("found {found} contact boxes, {needed} needed")]
    NotEnoughBoxes { found: usize, needed: usize },
}

/// A *-crossing of B_m \ B_{n−1} staying within distance one of both sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarPath {
    pub sites: Vec<Point>,
    /// Whether the V-crossing used by the construction starts inside the
    /// chosen crossing cluster of U.
    pub starts_in_cluster: bool,
    /// Number of complement components whose boundaries were spliced in.
    pub spliced: usize,
}

fn check_radii(n: i64, m: i64) -> Result<(), InterfaceError> {
    if n < 1 || m <= n {
        return Err(InterfaceError::BadRadii { n, m });
    }
    Ok(())
}

/// Shortest path inside `open` from the sites with |x|∞ = from to those with
/// |x|∞ = to, within the box B_m.
fn bfs_crossing(
    index: &BoxIndex,
    adjacency: Adjacency,
    open: &dyn Fn(&Point) -> bool,
    from: i64,
    to: i64,
) -> Option<Vec<Point>> {
    let n = index.len();
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for (k, p) in index.points().enumerate() {
        if p.linf() == from && open(&p) {
            seen[k] = true;
            queue.push_back(k);
        }
    }
    let star = adjacency == Adjacency::Star;
    while let Some(k) = queue.pop_front() {
        let p = index.point(k);
        if p.linf() == to {
            let mut path = vec![p];
            let mut cur = k;
            while prev[cur] != usize::MAX {
                cur = prev[cur];
                path.push(index.point(cur));
            }
            path.reverse();
            return Some(path);
        }
        for q in neighbors(&p, star) {
            if let Some(j) = index.index(&q) {
                if !seen[j] && open(&q) {
                    seen[j] = true;
                    prev[j] = k;
                    queue.push_back(j);
                }
            }
        }
    }
    None
}

/// Checks the hypotheses: U ∪ V = B_m \ B_{n−1}, both inside the annulus.
pub fn check_partition(u: &PointSet, v: &PointSet, n: i64, m: i64) -> Result<(), InterfaceError> {
    check_radii(n, m)?;
    if let Some(x) = u.iter().chain(v.iter()).find(|x| x.linf() < n || x.linf() > m) {
        return Err(InterfaceError::OutsideAnnulus(*x));
    }
    let d = u.dim().or(v.dim()).unwrap_or(3);
    if let Some(x) = LatticeBox::ball(d, m).points().find(|x| x.linf() >= n && !u.contains(x) && !v.contains(x)) {
        return Err(InterfaceError::NotCovered(x));
    }
    Ok(())
}

/// Builds a *-path from ∂B_n to ∂B_m with d(π(i), U) ∨ d(π(i), V) ≤ 1.
pub fn interface_star_path(u: &PointSet, v: &PointSet, n: i64, m: i64) -> Result<StarPath, InterfaceError> {
    check_partition(u, v, n, m)?;
    let d = u.dim().or(v.dim()).unwrap();
    let index = BoxIndex::of_box(&LatticeBox::ball(d, m));

    let cu = label_components(&index, Adjacency::Nearest, |x| u.contains(x));
    let c_id = first_crossing(&cu, n, m).ok_or(InterfaceError::NoCrossing("U"))?;
    let in_c = |x: &Point| cu.id(x) == Some(c_id);

    let pi_v = bfs_crossing(&index, Adjacency::Nearest, &|x| v.contains(x), n, m).ok_or(InterfaceError::NoCrossing("V"))?;

    let rest = label_components(&index, Adjacency::Nearest, |x| x.linf() >= n && !in_c(x));
    let mut used: Vec<usize> = Vec::new();
    let mut pieces = vec![false; index.len()];
    for x in &pi_v {
        if in_c(x) {
            pieces[index.index(x).unwrap()] = true;
        } else {
            let j = rest.id(x).expect("off-cluster site of the annulus");
            if !used.contains(&j) {
                used.push(j);
            }
        }
    }
    for &j in &used {
        let boundary: Vec<Point> = index
            .points()
            .filter(|x| rest.id(x) == Some(j) && neighbors(x, false).iter().any(|y| in_c(y)))
            .collect();
        let bset: PointSet = boundary.iter().copied().collect();
        let bc = label_components(&index, Adjacency::Star, |x| bset.contains(x));
        if bc.len() > 1 {
            let witnesses = (0..bc.len()).map(|c| bc.members(c).first().copied().unwrap()).collect();
            return Err(InterfaceError::BoundaryNotStarConnected { component: j, witnesses });
        }
        for x in &boundary {
            pieces[index.index(x).unwrap()] = true;
        }
    }
    let open = |x: &Point| index.index(x).is_some_and(|k| pieces[k]);
    let sites = bfs_crossing(&index, Adjacency::Star, &open, n, m).ok_or(InterfaceError::NoStarCrossing)?;
    Ok(StarPath { sites, starts_in_cluster: in_c(&pi_v[0]), spliced: used.len() })
}

/// The crossing component with the lexicographically smallest site.
fn first_crossing(comps: &Components, n: i64, m: i64) -> Option<usize> {
    let mut inner = vec![false; comps.len()];
    let mut outer = vec![false; comps.len()];
    for k in 0..comps.index().len() {
        if let Some(c) = comps.id_at(k) {
            let r = comps.index().point(k).linf();
            inner[c] |= r == n;
            outer[c] |= r == m;
        }
    }
    (0..comps.len()).find(|&c| inner[c] && outer[c])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PathViolation {
    Empty,
    NotStarAdjacent(usize),
    MissesInnerSphere,
    MissesOuterSphere,
    FarFromU(usize),
    FarFromV(usize),
}

fn within_one(x: &Point, s: &PointSet) -> bool {
    s.contains(x) || neighbors(x, true).iter().any(|y| s.contains(y))
}

/// The acceptance check for a star path: *-adjacency, both spheres met, and
/// every site within ℓ∞ distance one of U and of V.
pub fn check_cond_path(path: &[Point], u: &PointSet, v: &PointSet, n: i64, m: i64) -> Result<(), PathViolation> {
    if path.is_empty() {
        return Err(PathViolation::Empty);
    }
    if let Some(i) = path.windows(2).position(|w| !w[0].is_star_adjacent(&w[1])) {
        return Err(PathViolation::NotStarAdjacent(i));
    }
    if !path.iter().any(|x| x.linf() == n) {
        return Err(PathViolation::MissesInnerSphere);
    }
    if !path.iter().any(|x| x.linf() == m) {
        return Err(PathViolation::MissesOuterSphere);
    }
    for (i, x) in path.iter().enumerate() {
        if !within_one(x, u) {
            return Err(PathViolation::FarFromU(i));
        }
        if !within_one(x, v) {
            return Err(PathViolation::FarFromV(i));
        }
    }
    Ok(())
}

/// Geometry of the contact-box extraction: the annulus B_outer \ B_inner
/// (centred at the origin), the scale N and the scale M fixing the count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContactParams {
    pub inner: i64,
    pub outer: i64,
    pub n: i64,
    pub m: i64,
}

impl ContactParams {
    /// K = ⌈√M / (400 N)⌉.
    pub fn count(&self) -> usize {
        let den = 400 * self.n;
        // smallest K with (K·400N)² ≥ M
        let mut k = ((self.m as f64).sqrt() / den as f64).ceil() as i64;
        while k > 1 && ((k - 1) * den) * ((k - 1) * den) >= self.m {
            k -= 1;
        }
        while (k * den) * (k * den) < self.m {
            k += 1;
        }
        k.max(1) as usize
    }

    fn coarse_radii(&self) -> (i64, i64) {
        let unit = 10 * self.n;
        ((self.inner + unit) / unit, self.outer / unit)
    }

    /// Whether B(10N·y, 25N) lies inside the annulus.
    fn deep(&self, y: &Point) -> bool {
        let r = 10 * self.n * y.linf();
        r - 25 * self.n > self.inner && r + 25 * self.n <= self.outer
    }
}

/// {y : B(10N·y, 10N) ∩ s ≠ ∅}.
pub fn coarse_grain(s: &PointSet, n: i64) -> PointSet {
    let unit = 10 * n;
    let mut out = PointSet::new();
    for x in s {
        let d = x.dim();
        let lo: Vec<i64> = x.coords().iter().map(|&c| (c - unit).div_euclid(unit) + i64::from((c - unit).rem_euclid(unit) != 0)).collect();
        let hi: Vec<i64> = x.coords().iter().map(|&c| (c + unit).div_euclid(unit)).collect();
        let lo = Point::new(&lo).unwrap();
        let hi = Point::new(&hi).unwrap();
        debug_assert_eq!(lo.dim(), d);
        out.extend(crate::lattice::RectIter::new(lo, hi));
    }
    out
}

/// Λ_k = B(x_k, 20N) with x_k ∈ 10N·Z^d.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactBoxes {
    pub boxes: Vec<LatticeBox>,
    pub path: StarPath,
}

/// Greedy choice along a coarse *-path: each new point is deep, at coarse
/// distance ≥ 10 from all chosen ones and ≤ 20 from the previous one.
pub fn extract(path: &[Point], k: usize, deep: impl Fn(&Point) -> bool) -> Vec<Point> {
    let mut chosen: Vec<Point> = Vec::new();
    for y in path {
        if chosen.len() == k {
            break;
        }
        if !deep(y) {
            continue;
        }
        let far = chosen.iter().all(|c| c.linf_dist(y) >= 10);
        let near = chosen.last().is_none_or(|c| c.linf_dist(y) <= 20);
        if far && near {
            chosen.push(*y);
        }
    }
    chosen
}

pub fn contact_boxes(s1: &PointSet, s2: &PointSet, p: &ContactParams) -> Result<ContactBoxes, InterfaceError> {
    let (cn, cm) = p.coarse_radii();
    check_radii(cn, cm)?;
    let ring = |s: PointSet| -> PointSet { s.into_iter().filter(|y| y.linf() >= cn && y.linf() <= cm).collect() };
    let u = ring(coarse_grain(s1, p.n));
    let v = ring(coarse_grain(s2, p.n));
    let path = interface_star_path(&u, &v, cn, cm)?;
    let needed = p.count();
    let centers = extract(&path.sites, needed, |y| p.deep(y));
    if centers.len() < needed {
        return Err(InterfaceError::NotEnoughBoxes { found: centers.len(), needed });
    }
    let boxes = centers.iter().map(|y| LatticeBox { center: y.scaled(10 * p.n), radius: 20 * p.n }).collect();
    Ok(ContactBoxes { boxes, path })
}

/// Every clause of the contact-box family; returns the first failure.
pub fn check_contact_boxes(fam: &[LatticeBox], s1: &PointSet, s2: &PointSet, p: &ContactParams) -> Result<(), String> {
    let unit = 10 * p.n;
    for (k, b) in fam.iter().enumerate() {
        if b.radius != 20 * p.n || b.center.coords().iter().any(|c| c.rem_euclid(unit) != 0) {
            return Err(format!("box {k}: wrong radius or centre off the grid"));
        }
        if !s1.iter().any(|x| b.contains(x)) || !s2.iter().any(|x| b.contains(x)) {
            return Err(format!("box {k}: misses S1 or S2"));
        }
        let r = b.center.linf();
        if r - 25 * p.n <= p.inner || r + 25 * p.n > p.outer {
            return Err(format!("box {k}: B(x, 25N) leaves the annulus"));
        }
        if k + 1 < fam.len() && b.center.linf_dist(&fam[k + 1].center) > 200 * p.n {
            return Err(format!("boxes {k}, {}: consecutive centres too far apart", k + 1));
        }
        for (j, c) in fam.iter().enumerate().skip(k + 1) {
            if b.center.linf_dist(&c.center) < 100 * p.n {
                return Err(format!("boxes {k}, {j}: centres closer than 100N"));
            }
        }
    }
    Ok(())
}
