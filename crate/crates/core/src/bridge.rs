//! Multi-scale bridges: families of boxes joining two sets inside a tube.
//!
//! A bridge is built from a dyadic coarse path between the two sets, whose
//! boxes are shrunk apart and then joined by thin tubes. Each tube is filled
//! by a recursive partition of its axis into separated intervals, and what is
//! left over at the bottom scale becomes the holes.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lattice::{LatticeBox, Point, PointSet, Region, Tube};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BridgeError {
    #[error("bad parameters: {0}")]
    Parameters(String),
    #[error("{0} does not meet the tube")]
    MissesTube(&'static str),
    #[error("C and D share the site {0}")]
    NotDisjoint(Point),
    #[error("separation fails for interval [{lo:.3}, {hi:.3}] in round {round}")]
    Separation { lo: f64, hi: f64, round: usize },
    #[error("interval family grew from {prev} to {next} in one round")]
    Growth { prev: usize, next: usize },
    #[error("coarse path: {0}")]
    CoarsePath(String),
    #[error("scale too small for the lattice: {0}")]
    TooSmall(String),
    #[error("assembled bridge fails {clause:?}: {detail}")]
    Invalid { clause: Clause, detail: String },
    #[error("infeasible: {0}")]
    Infeasible(String),
}

/// Constants of the construction that the existence argument leaves free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeConstants {
    /// Boxes of the coarse path of radius r shrink by a·r^ξ + b.
    pub margin_factor: f64,
    pub margin_offset: f64,
    /// End boxes of the coarse path have side at most s / depth_divisor.
    pub depth_divisor: f64,
    /// Tube bridges run at scale s / sub_divisor in tubes of cross radius
    /// r, both raised to ξ when `power_xi` is set; r is the radius of the
    /// coarse box the tube leaves.
    pub sub_divisor: f64,
    pub power_xi: bool,
    /// The first partition of a tube of cross radius L uses intervals of
    /// length at most first_fraction·L.
    pub first_fraction: f64,
}

impl BridgeConstants {
    /// The constants of the existence proof; they need s in the tens of
    /// thousands before any box survives the shrinking.
    pub const ASYMPTOTIC: BridgeConstants =
        BridgeConstants { margin_factor: 4.0, margin_offset: 0.0, depth_divisor: 16.0, sub_divisor: 64.0, power_xi: true, first_fraction: 0.5 };

    /// Smallest margins that still leave the lattice separation intact.
    pub const DESK: BridgeConstants =
        BridgeConstants { margin_factor: 1.0, margin_offset: 2.0, depth_divisor: 1.0, sub_divisor: 2.0, power_xi: false, first_fraction: 0.5 };

    fn margin(&self, r: f64, xi: f64) -> f64 {
        self.margin_factor * r.powf(xi) + self.margin_offset
    }

    fn sub_scale(&self, s: f64, xi: f64) -> f64 {
        let base = s / self.sub_divisor;
        if self.power_xi {
            base.powf(xi)
        } else {
            base
        }
    }

    fn tube_radius(&self, r: f64, xi: f64) -> f64 {
        if self.power_xi {
            r.powf(xi)
        } else {
            r
        }
    }
}

impl Default for BridgeConstants {
    fn default() -> Self {
        Self::DESK
    }
}

/// Calibrated complexity exponent m(ξ) for the desk constants.
pub fn default_m(xi: f64) -> f64 {
    calibrated(xi, &[(0.55, 4.1), (0.6, 4.8), (0.75, 5.5)])
}

/// Calibrated floor s_min(ξ) for the desk constants.
pub fn default_s_floor(xi: f64) -> f64 {
    calibrated(xi, &[(0.55, 32.0), (0.6, 32.0), (0.75, 48.0)])
}

/// Table lookup; between entries the larger neighbour is used.
fn calibrated(xi: f64, table: &[(f64, f64)]) -> f64 {
    for w in table.windows(2) {
        if xi <= w[0].0 {
            return w[0].1;
        }
        if xi < w[1].0 {
            return w[0].1.max(w[1].1);
        }
    }
    table.last().unwrap().1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeParams {
    pub s: f64,
    pub xi: f64,
    pub m: f64,
    pub s_floor: f64,
    pub constants: BridgeConstants,
}

impl BridgeParams {
    pub fn new(s: f64, xi: f64) -> Self {
        BridgeParams { s, xi, m: default_m(xi), s_floor: default_s_floor(xi), constants: BridgeConstants::DESK }
    }

    pub fn asymptotic(s: f64, xi: f64, m: f64) -> Self {
        BridgeParams { s, xi, m, s_floor: 1.0, constants: BridgeConstants::ASYMPTOTIC }
    }

    fn check(&self) -> Result<(), BridgeError> {
        if !(self.xi > 0.5 && self.xi < 1.0) {
            return Err(BridgeError::Parameters(format!("ξ = {} outside (1/2, 1)", self.xi)));
        }
        if !(self.s >= self.s_floor) {
            return Err(BridgeError::Parameters(format!("s = {} below the floor {}", self.s, self.s_floor)));
        }
        if !(self.m > 0.0) {
            return Err(BridgeError::Parameters(format!("m = {} must be positive", self.m)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Boxes, bridges, anchors

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BridgeBox {
    pub center: Point,
    pub radius: i64,
    /// Two points of the inner boundary; empty for holes.
    pub marked: Vec<Point>,
}

impl BridgeBox {
    pub fn as_box(&self) -> LatticeBox {
        LatticeBox { center: self.center, radius: self.radius }
    }

    fn hole(center: Point, radius: i64) -> Self {
        BridgeBox { center, radius, marked: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bridge {
    /// 𝔹_1, …, 𝔹_J; the last level holds the holes.
    pub levels: Vec<Vec<BridgeBox>>,
    pub s: f64,
    pub s_prime: f64,
    pub m: f64,
    pub xi: f64,
    pub tube: Tube,
}

impl Bridge {
    /// J.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn holes(&self) -> &[BridgeBox] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("bridge serializes")
    }

    /// Boxes meeting the plane through `at` spanned by axes i and j, drawn
    /// as rectangles; holes in red, coarser levels darker.
    pub fn to_svg(&self, i: usize, j: usize, at: &Point, c: &PointSet, d: &PointSet) -> String {
        let (lo, hi) = rect_of_tube(&self.tube);
        let pad = self.s.ceil() as i64 + 1;
        let (x0, y0) = (lo[i] - pad, lo[j] - pad);
        let (w, h) = (hi[i] - lo[i] + 2 * pad + 1, hi[j] - lo[j] + 2 * pad + 1);
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0} {y0} {w} {h}">"#);
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="0.3"/>"#,
            lo[i],
            lo[j],
            hi[i] - lo[i] + 1,
            hi[j] - lo[j] + 1
        );
        let meets = |b: &BridgeBox| (0..at.dim()).filter(|&k| k != i && k != j).all(|k| (b.center[k] - at[k]).abs() <= b.radius);
        let last = self.levels.len().saturating_sub(1);
        for (lvl, boxes) in self.levels.iter().enumerate() {
            let shade = 40 + (160 * lvl / self.levels.len().max(1)) as u32;
            let fill = if lvl == last { "rgb(220,60,60)".to_string() } else { format!("rgb({shade},{shade},220)") };
            for b in boxes.iter().filter(|b| meets(b)) {
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" fill-opacity="0.6"/>"#,
                    b.center[i] - b.radius,
                    b.center[j] - b.radius,
                    2 * b.radius + 1,
                    2 * b.radius + 1
                );
            }
        }
        for (set, colour) in [(c, "green"), (d, "orange")] {
            for p in set.iter().filter(|p| (0..p.dim()).filter(|&k| k != i && k != j).all(|k| p[k] == at[k])) {
                let _ = writeln!(out, r#"<rect x="{}" y="{}" width="1" height="1" fill="{colour}"/>"#, p[i], p[j]);
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

/// The sets a bridge joins: explicit sites, or a rectangle such as a face.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    Sites(PointSet),
    Rect { lo: Point, hi: Point },
}

impl Anchor {
    pub fn left_face(t: &Tube) -> Self {
        let (lo, mut hi) = t.rect();
        hi.set(t.axis, lo[t.axis]);
        Anchor::Rect { lo, hi }
    }

    pub fn right_face(t: &Tube) -> Self {
        let (mut lo, hi) = t.rect();
        lo.set(t.axis, hi[t.axis]);
        Anchor::Rect { lo, hi }
    }

    fn rects(&self) -> Vec<Rect> {
        match self {
            Anchor::Sites(s) => s.iter().map(|p| Rect::point(*p)).collect(),
            Anchor::Rect { lo, hi } => vec![Rect { lo: *lo, hi: *hi }],
        }
    }
}

/// Closed integer rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    lo: Point,
    hi: Point,
}

impl Rect {
    fn point(p: Point) -> Self {
        Rect { lo: p, hi: p }
    }

    fn of_box(center: &Point, radius: i64) -> Self {
        let d = center.dim();
        Rect { lo: *center - Point::splat(d, radius), hi: *center + Point::splat(d, radius) }
    }

    fn intersects(&self, o: &Rect) -> bool {
        (0..self.lo.dim()).all(|i| self.lo[i] <= o.hi[i] && o.lo[i] <= self.hi[i])
    }

    /// Whether the union is connected: the rectangles intersect, or they are
    /// separated by exactly one unit along one axis and overlap on the others.
    fn meets(&self, o: &Rect) -> bool {
        let mut touching = 0;
        for i in 0..self.lo.dim() {
            if self.lo[i] > o.hi[i] {
                if self.lo[i] != o.hi[i] + 1 {
                    return false;
                }
                touching += 1;
            } else if o.lo[i] > self.hi[i] {
                if o.lo[i] != self.hi[i] + 1 {
                    return false;
                }
                touching += 1;
            }
        }
        touching <= 1
    }

    fn contains_rect(&self, o: &Rect) -> bool {
        (0..self.lo.dim()).all(|i| self.lo[i] <= o.lo[i] && o.hi[i] <= self.hi[i])
    }
}

fn rect_of_tube(t: &Tube) -> (Point, Point) {
    t.rect()
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Clause {
    /// Level count, containment in T and B(T, s), marked points.
    Structure,
    /// Inflated boxes avoid the closure of C ∪ D; holes are s′-separated.
    Separation,
    /// C and D are joined through the holes.
    Connectivity,
    /// Box radii at least s′, hole radii at most s.
    Size,
    /// |𝔹| and J within the m bounds.
    Complexity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClauseResult {
    pub clause: Clause,
    pub pass: bool,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeReport {
    pub results: Vec<ClauseResult>,
    pub n_boxes: usize,
    pub depth: usize,
    /// Smallest m for which the complexity clause holds.
    pub m_required: f64,
}

impl BridgeReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&ClauseResult> {
        self.results.iter().find(|r| !r.pass)
    }

    pub fn get(&self, clause: Clause) -> &ClauseResult {
        self.results.iter().find(|r| r.clause == clause).expect("every clause is reported")
    }
}

/// The two bounds of the complexity clause: |𝔹| ≤ (N/L + 8d log eL)(log eL)^m
/// and J ≤ m log log e²L, returned as the m each of them needs.
pub fn complexity_exponents(n_boxes: usize, depth: usize, t: &Tube) -> (f64, f64) {
    let l = t.cross_radius.max(1) as f64;
    let n = t.length as f64;
    let d = t.dim() as f64;
    let log_el = 1.0 + l.ln();
    let base = n / l + 8.0 * d * log_el;
    let m_count = if (n_boxes as f64) <= base { 0.0 } else { (n_boxes as f64 / base).ln() / log_el.ln() };
    let m_depth = depth as f64 / (2.0 + l.ln()).ln();
    (m_count, m_depth)
}

pub fn validate_bridge(b: &Bridge, c: &Anchor, d: &Anchor) -> BridgeReport {
    let results = vec![
        check_structure(b),
        check_separation(b, c, d),
        check_connectivity(b, c, d),
        check_size(b),
        check_complexity(b),
    ];
    let (mc, md) = complexity_exponents(b.len(), b.depth(), &b.tube);
    BridgeReport { results, n_boxes: b.len(), depth: b.depth(), m_required: mc.max(md) }
}

fn result(clause: Clause, witness: Option<String>) -> ClauseResult {
    ClauseResult { clause, pass: witness.is_none(), witness }
}

fn check_structure(b: &Bridge) -> ClauseResult {
    let fail = |w: String| result(Clause::Structure, Some(w));
    if b.levels.is_empty() {
        return fail("no levels".into());
    }
    let (tlo, thi) = b.tube.rect();
    let t = Rect { lo: tlo, hi: thi };
    let grow = b.s.floor() as i64;
    let d = tlo.dim();
    let ts = Rect { lo: tlo - Point::splat(d, grow), hi: thi + Point::splat(d, grow) };
    let last = b.levels.len() - 1;
    for (j, level) in b.levels.iter().enumerate() {
        for (k, bx) in level.iter().enumerate() {
            let r = Rect::of_box(&bx.center, bx.radius);
            if bx.radius < 0 {
                return fail(format!("level {} box {k}: negative radius", j + 1));
            }
            if !ts.contains_rect(&r) {
                return fail(format!("level {} box {k} at {} leaves B(T, s)", j + 1, bx.center));
            }
            if j < last {
                if !t.contains_rect(&r) {
                    return fail(format!("level {} box {k} at {} leaves T", j + 1, bx.center));
                }
                if bx.marked.len() != 2 {
                    return fail(format!("level {} box {k}: {} marked points", j + 1, bx.marked.len()));
                }
                for p in &bx.marked {
                    let off = p.linf_dist(&bx.center);
                    if off != bx.radius {
                        return fail(format!("level {} box {k}: marked point {p} not on the boundary", j + 1));
                    }
                }
            } else if !bx.marked.is_empty() {
                return fail(format!("hole {k} carries marked points"));
            }
        }
    }
    result(Clause::Structure, None)
}

fn check_separation(b: &Bridge, c: &Anchor, d: &Anchor) -> ClauseResult {
    let anchors: Vec<Rect> = c.rects().into_iter().chain(d.rects()).collect();
    let boxes: Vec<(usize, usize, Rect)> = b
        .levels
        .iter()
        .enumerate()
        .flat_map(|(j, l)| l.iter().enumerate().map(move |(k, bx)| (j, k, Rect::of_box(&bx.center, bx.radius))))
        .collect();
    let last = b.levels.len() - 1;
    for &(j, k, _) in boxes.iter().filter(|x| x.0 < last) {
        let bx = &b.levels[j][k];
        let grow = (bx.radius as f64).powf(b.xi).ceil() as i64;
        let tilde = Rect::of_box(&bx.center, bx.radius + grow);
        for &(j2, k2, ref r2) in boxes.iter().filter(|x| x.0 <= j) {
            if (j2, k2) != (j, k) && tilde.meets(r2) {
                return result(
                    Clause::Separation,
                    Some(format!("inflated box {} (level {}) meets the closure of box {} (level {})", bx.center, j + 1, b.levels[j2][k2].center, j2 + 1)),
                );
            }
        }
        if let Some(a) = anchors.iter().find(|a| tilde.meets(a)) {
            return result(Clause::Separation, Some(format!("inflated box {} (level {}) meets the closure of C ∪ D near {}", bx.center, j + 1, a.lo)));
        }
    }
    let holes = b.holes();
    for (i, h) in holes.iter().enumerate() {
        for h2 in &holes[i + 1..] {
            let r1 = Rect::of_box(&h.center, (h.radius as f64 + b.s_prime).floor() as i64);
            let r2 = Rect::of_box(&h2.center, (h2.radius as f64 + b.s_prime).floor() as i64);
            if r1.intersects(&r2) {
                return result(Clause::Separation, Some(format!("holes at {} and {} are not s'-separated", h.center, h2.center)));
            }
        }
    }
    result(Clause::Separation, None)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connectivity for every choice of the paths π_B: only the marked points of
/// a box are guaranteed, and they are joined to each other.
fn check_connectivity(b: &Bridge, c: &Anchor, d: &Anchor) -> ClauseResult {
    let mut nodes: Vec<Rect> = Vec::new();
    let crects = c.rects();
    let drects = d.rects();
    if crects.is_empty() || drects.is_empty() {
        return result(Clause::Connectivity, Some("C or D is empty".into()));
    }
    let c0 = nodes.len();
    nodes.extend(crects);
    let d0 = nodes.len();
    nodes.extend(drects);
    for h in b.holes() {
        nodes.push(Rect::of_box(&h.center, h.radius));
    }
    let mut pairs = Vec::new();
    let last = b.levels.len() - 1;
    for level in &b.levels[..last] {
        for bx in level {
            let i = nodes.len();
            nodes.extend(bx.marked.iter().map(|p| Rect::point(*p)));
            if bx.marked.len() == 2 {
                pairs.push((i, i + 1));
            }
        }
    }
    let mut uf = UnionFind::new(nodes.len());
    for (a, bb) in pairs {
        uf.union(a, bb);
    }
    // point nodes are bucketed so that site sets stay cheap; rectangles are
    // compared with everything
    let mut by_site: HashMap<Point, usize> = HashMap::new();
    let mut big = Vec::new();
    for (k, r) in nodes.iter().enumerate() {
        if r.lo == r.hi {
            if let Some(&o) = by_site.get(&r.lo) {
                uf.union(k, o);
            } else {
                by_site.insert(r.lo, k);
            }
        } else {
            big.push(k);
        }
    }
    for (&p, &k) in &by_site {
        for q in crate::lattice::neighbors(&p, false) {
            if let Some(&o) = by_site.get(&q) {
                uf.union(k, o);
            }
        }
    }
    for (x, &a) in big.iter().enumerate() {
        for &bb in &big[x + 1..] {
            if nodes[a].meets(&nodes[bb]) {
                uf.union(a, bb);
            }
        }
        for &k in by_site.values() {
            if nodes[a].meets(&nodes[k]) {
                uf.union(a, k);
            }
        }
    }
    let root = uf.find(c0);
    if let Some(k) = (0..nodes.len()).find(|&k| uf.find(k) != root) {
        let what = if k < d0 { "a site of C" } else if k < d0 + (nodes.len() - d0) && uf.find(d0) != root { "D" } else { "a piece" };
        return result(Clause::Connectivity, Some(format!("{what} near {} is not joined to C", nodes[k].lo)));
    }
    result(Clause::Connectivity, None)
}

fn check_size(b: &Bridge) -> ClauseResult {
    let last = b.levels.len() - 1;
    for (j, level) in b.levels.iter().enumerate() {
        for bx in level {
            let r = bx.radius as f64;
            if j < last && r < b.s_prime {
                return result(Clause::Size, Some(format!("box {} of radius {} below s' = {:.4}", bx.center, bx.radius, b.s_prime)));
            }
            if j == last && r > b.s {
                return result(Clause::Size, Some(format!("hole {} of radius {} above s = {}", bx.center, bx.radius, b.s)));
            }
        }
    }
    result(Clause::Size, None)
}

fn check_complexity(b: &Bridge) -> ClauseResult {
    let (mc, md) = complexity_exponents(b.len(), b.depth(), &b.tube);
    if mc > b.m {
        return result(Clause::Complexity, Some(format!("|𝔹| = {} needs m ≥ {mc:.3} > {}", b.len(), b.m)));
    }
    if md > b.m {
        return result(Clause::Complexity, Some(format!("J = {} needs m ≥ {md:.3} > {}", b.depth(), b.m)));
    }
    result(Clause::Complexity, None)
}

// ---------------------------------------------------------------------------
// One-dimensional partitions

/// Minimal r for which the last interval of the claim keeps length ≥ r^ξ.
pub fn claim_floor(xi: f64) -> f64 {
    3f64.powf(1.0 / (1.0 - xi))
}

/// Ordered disjoint sub-intervals of [0, R] with gaps 2r^ξ between them,
/// end gaps in [2r^ξ, 7r^ξ] and lengths in [r^ξ, r].
pub fn interval_bridge(big_r: f64, r: f64, xi: f64) -> Result<Vec<(f64, f64)>, BridgeError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(BridgeError::Parameters(format!("ξ = {xi} outside (0, 1)")));
    }
    if !(big_r >= 4.0) || !(r <= big_r / 4.0) || !(r >= claim_floor(xi)) {
        return Err(BridgeError::Parameters(format!(
            "need R ≥ 4 and {:.3} ≤ r ≤ R/4, got R = {big_r}, r = {r}",
            claim_floor(xi)
        )));
    }
    Ok(claim_intervals(big_r, r, xi))
}

/// The claim construction without its floor; a shortened last interval
/// below r^ξ is dropped.
fn claim_intervals(big_r: f64, r: f64, xi: f64) -> Vec<(f64, f64)> {
    let g = r.powf(xi);
    let kt = (big_r / (r + 2.0 * g)).floor() as usize;
    if kt == 0 {
        return Vec::new();
    }
    let j = |i: usize| ((i - 1) as f64 * r + 2.0 * i as f64 * g, i as f64 * (r + 2.0 * g));
    let mut out: Vec<(f64, f64)> = (1..kt).map(j).collect();
    let rem = big_r - kt as f64 * (r + 2.0 * g);
    if rem <= 5.0 * g {
        let last = ((kt - 1) as f64 * r + 2.0 * kt as f64 * g, kt as f64 * (r + 2.0 * g) - 2.0 * g);
        if last.1 - last.0 >= g {
            out.push(last);
        }
    } else {
        out.push(j(kt));
        out.push((kt as f64 * r + 2.0 * (kt + 1) as f64 * g, big_r - 2.0 * g));
    }
    out
}

/// Recursive partition of [0, len]: the claim at scale r1, then again in
/// every residual longer than s. Returns the families 𝕀_1, 𝕀_2, ….
pub fn interval_families(len: f64, r1: f64, s: f64, xi: f64) -> Result<Vec<Vec<(f64, f64)>>, BridgeError> {
    let mut families: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut all: Vec<(f64, f64)> = Vec::new();
    let first = if len > s && len >= 4.0 { first_round(len, r1, s, xi) } else { Vec::new() };
    if first.is_empty() {
        return if len <= s { Ok(families) } else { Err(BridgeError::Infeasible(format!("no interval fits in [0, {len:.3}]"))) };
    }
    let mut fresh = first;
    for round in 1..=64 {
        all.extend(fresh.iter().copied());
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        check_interval_separation(&all, &fresh, len, s, xi, round)?;
        if let Some(prev) = families.last() {
            if fresh.len() > 8 * prev.len() {
                return Err(BridgeError::Growth { prev: prev.len(), next: fresh.len() });
            }
        }
        families.push(fresh);
        let residuals = residual_intervals(&all, len);
        let big: Vec<(f64, f64)> = residuals.into_iter().filter(|(a, b)| b - a > s).collect();
        if big.is_empty() {
            return Ok(families);
        }
        fresh = Vec::new();
        for (a, b) in big {
            let found = split_residual(b - a, s, xi);
            if found.is_empty() {
                return Err(BridgeError::Infeasible(format!("residual [{a:.3}, {b:.3}] cannot be split")));
            }
            fresh.extend(found.into_iter().map(|(x, y)| (a + x, a + y)));
        }
    }
    Err(BridgeError::Infeasible("recursion did not terminate".into()))
}

/// The claim at r1 ∧ len/4, or the fallback of `split_residual`.
fn first_round(len: f64, r1: f64, s: f64, xi: f64) -> Vec<(f64, f64)> {
    let found = claim_intervals(len, r1.min(len / 4.0), xi);
    if found.is_empty() {
        split_residual(len, s, xi)
    } else {
        found
    }
}

/// The claim at r = |I|/4; when that leaves nothing, the longest centred
/// interval that keeps the separation from both ends.
fn split_residual(len: f64, s: f64, xi: f64) -> Vec<(f64, f64)> {
    let found = claim_intervals(len, len / 4.0, xi);
    if !found.is_empty() {
        return found;
    }
    let fits = |l: f64| (len - l) / 2.0 >= (2.0 * l.powf(xi)).max(s.powf(xi) / 2.0) * (1.0 + 1e-9);
    let (mut lo, mut hi) = (3.0, len);
    if !fits(lo) {
        return Vec::new();
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    vec![((len - lo) / 2.0, (len + lo) / 2.0)]
}

/// Closures of the components of [0, len] minus the intervals (sorted).
fn residual_intervals(sorted: &[(f64, f64)], len: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cur = 0.0;
    for &(a, b) in sorted {
        if a > cur {
            out.push((cur, a));
        }
        cur = b;
    }
    if len > cur {
        out.push((cur, len));
    }
    out
}

/// Each new interval keeps distance 2|I|^ξ ∨ s^ξ/2 from every other interval
/// and from the ends, and has length at least √s/100.
fn check_interval_separation(all: &[(f64, f64)], fresh: &[(f64, f64)], len: f64, s: f64, xi: f64, round: usize) -> Result<(), BridgeError> {
    let eps = 1e-9 * len.max(1.0);
    for &(a, b) in fresh {
        let need = (2.0 * (b - a).powf(xi)).max(s.powf(xi) / 2.0) - eps;
        let pos = all.partition_point(|x| x.0 < a);
        let left = if pos == 0 { 0.0 } else { all[pos - 1].1 };
        let right = all.get(pos + 1).map_or(len, |x| x.0);
        if a - left < need || right - b < need || b - a < s.sqrt() / 100.0 - eps {
            return Err(BridgeError::Separation { lo: a, hi: b, round });
        }
    }
    Ok(())
}

/// Non-hole levels and holes along the lattice segment from `start`
/// (exclusive) to start + len·dir·e_axis (exclusive); both ends are sites of
/// the neighbouring pieces.
fn line_bridge(
    start: Point,
    axis: usize,
    dir: i64,
    len: i64,
    r1: f64,
    s: f64,
    xi: f64,
    hole_cap: i64,
) -> Result<(Vec<Vec<BridgeBox>>, Vec<BridgeBox>), BridgeError> {
    let families = interval_families(len as f64, r1, s, xi)?;
    let at = |t: i64| start.shifted(axis, dir * t);
    let mut levels = Vec::new();
    let mut spans: Vec<(i64, i64)> = Vec::new();
    for fam in &families {
        let mut level = Vec::new();
        for &(x, y) in fam {
            let a = (x - 1e-9).ceil() as i64;
            let mut b = (y + 1e-9).floor() as i64;
            if (b - a) % 2 != 0 {
                b -= 1;
            }
            if b - a < 2 {
                return Err(BridgeError::TooSmall(format!("interval [{x:.3}, {y:.3}] has no lattice box")));
            }
            spans.push((a, b));
            let center = at((a + b) / 2);
            level.push(BridgeBox { center, radius: (b - a) / 2, marked: vec![at(a), at(b)] });
        }
        levels.push(level);
    }
    spans.sort_unstable();
    let mut holes = Vec::new();
    let mut prev = 0;
    for &(a, b) in spans.iter().chain(std::iter::once(&(len, len))) {
        let gap = a - prev - 1;
        if gap < 0 {
            return Err(BridgeError::TooSmall(format!("lattice pieces overlap near offset {a}")));
        }
        let mut t = prev + 1;
        for piece in hole_chain(gap, hole_cap) {
            holes.push(BridgeBox::hole(at(t + piece / 2), piece / 2));
            t += piece;
        }
        prev = b;
    }
    Ok((levels, holes))
}

/// Odd lengths of at most 2·cap + 1 summing to `gap`, as few and as even as
/// possible: the side lengths of touching holes filling a gap on a line.
fn hole_chain(gap: i64, cap: i64) -> Vec<i64> {
    if gap <= 0 {
        return Vec::new();
    }
    let widest = 2 * cap.max(0) + 1;
    let mut k = (gap + widest - 1) / widest;
    if k % 2 != gap % 2 {
        k += 1;
    }
    let mut pieces = vec![1; k as usize];
    let mut left = gap - k;
    let mut i = 0;
    while left > 0 {
        pieces[i] += 2;
        left -= 2;
        i = (i + 1) % pieces.len();
    }
    pieces
}

/// The bridge between the two faces of T: the recursive partition of its
/// axis, with s′ = √s/100 and every box inside T.
pub fn specialized_bridge(t: &Tube, params: &BridgeParams) -> Result<Bridge, BridgeError> {
    params.check()?;
    let l = t.cross_radius as f64;
    if l < params.s {
        return Err(BridgeError::Parameters(format!("L = {l} below s = {}", params.s)));
    }
    let start = t.base.shifted(t.axis, -t.cross_radius);
    let len = t.length + 2 * t.cross_radius;
    let (mut levels, holes) = line_bridge(start, t.axis, 1, len, l * params.constants.first_fraction, params.s, params.xi, i64::MAX / 4)?;
    levels.push(holes);
    Ok(Bridge { levels, s: params.s, s_prime: params.s.sqrt() / 100.0, m: params.m, xi: params.xi, tube: *t })
}

// ---------------------------------------------------------------------------
// Coarse paths

/// The half-open box corner·L_n + [0, L_n)^d with L_n = L / 2^level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct DyadicBox {
    pub level: u32,
    pub corner: Vec<i64>,
}

impl DyadicBox {
    pub fn side(&self, l: f64) -> f64 {
        l / f64::from(1u32 << self.level.min(31)) / if self.level > 31 { f64::from(1u32 << (self.level - 31)) } else { 1.0 }
    }

    pub fn lo(&self, l: f64) -> Vec<f64> {
        let s = self.side(l);
        self.corner.iter().map(|&a| a as f64 * s).collect()
    }

    pub fn center(&self, l: f64) -> Vec<f64> {
        let s = self.side(l);
        self.corner.iter().map(|&a| (a as f64 + 0.5) * s).collect()
    }

    /// Half-open range along axis i in units of L_m, m ≥ level.
    fn range(&self, i: usize, m: u32) -> (i64, i64) {
        let k = 1i64 << (m - self.level);
        (self.corner[i] * k, (self.corner[i] + 1) * k)
    }

    /// The axis along which the closures share a face, with the sign of the
    /// step from self to o; None unless the boxes are adjacent.
    pub fn contact(&self, o: &DyadicBox) -> Option<(usize, i64)> {
        let m = self.level.max(o.level);
        let mut found = None;
        for i in 0..self.corner.len() {
            let (a0, a1) = self.range(i, m);
            let (b0, b1) = o.range(i, m);
            if a1 == b0 || b1 == a0 {
                if found.is_some() {
                    return None;
                }
                found = Some((i, if a1 == b0 { 1 } else { -1 }));
            } else if a0.max(b0) >= a1.min(b1) {
                return None;
            }
        }
        found
    }

    pub fn adjacent(&self, o: &DyadicBox) -> bool {
        self.contact(o).is_some()
    }

    pub fn disjoint(&self, o: &DyadicBox) -> bool {
        let m = self.level.max(o.level);
        (0..self.corner.len()).any(|i| {
            let (a0, a1) = self.range(i, m);
            let (b0, b1) = o.range(i, m);
            a0.max(b0) >= a1.min(b1)
        })
    }

    fn children(&self) -> Vec<DyadicBox> {
        let d = self.corner.len();
        (0..1usize << d)
            .map(|bits| DyadicBox {
                level: self.level + 1,
                corner: (0..d).map(|i| 2 * self.corner[i] + ((bits >> (d - 1 - i)) & 1) as i64).collect(),
            })
            .collect()
    }

    fn parent_is(&self, p: &DyadicBox) -> bool {
        self.level == p.level + 1 && self.corner.iter().zip(&p.corner).all(|(a, b)| a.div_euclid(2) == *b)
    }
}

/// A simple coarse path in the normalized tube [−L, N+L] × [−L, L]^{d−1}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarsePath {
    pub boxes: Vec<DyadicBox>,
    pub l: f64,
    pub n: f64,
    pub max_level: u32,
    /// γ_0, …, γ_K of the refinement, ends included.
    pub rounds: Vec<Vec<DyadicBox>>,
}

fn ceil_log2(x: f64) -> u32 {
    if x <= 1.0 {
        0
    } else {
        x.log2().ceil() as u32
    }
}

/// The k-box containing y, with cross coordinates kept inside [−L, L).
fn containing(y: &[f64], k: u32, l: f64) -> DyadicBox {
    let side = DyadicBox { level: k, corner: vec![] }.side(l);
    let top = 1i64 << k;
    let corner = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let a = (v / side).floor() as i64;
            if i == 0 {
                a
            } else {
                a.clamp(-top, top - 1)
            }
        })
        .collect();
    DyadicBox { level: k, corner }
}

fn inside_tube(b: &DyadicBox, l: f64, n: f64) -> bool {
    let s = b.side(l);
    let lo = b.lo(l);
    lo[0] >= -l - 1e-9 && lo[0] + s <= n + l + 1e-9 && lo[1..].iter().all(|&x| x >= -l - 1e-9 && x + s <= l + 1e-9)
}

/// Shortest simple path through `allowed` starting in `starts`, ending at a
/// box satisfying `goal`, with at least `min_len` boxes.
fn simple_path(allowed: &[DyadicBox], starts: &[usize], goal: &dyn Fn(&DyadicBox) -> bool, min_len: usize) -> Option<Vec<usize>> {
    let n = allowed.len();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && allowed[i].adjacent(&allowed[j])).collect()).collect();
    fn dfs(adj: &[Vec<usize>], goal: &dyn Fn(usize) -> bool, path: &mut Vec<usize>, used: &mut [bool], target: usize) -> bool {
        let cur = *path.last().unwrap();
        if path.len() == target {
            return goal(cur);
        }
        for &nx in &adj[cur] {
            if !used[nx] {
                used[nx] = true;
                path.push(nx);
                if dfs(adj, goal, path, used, target) {
                    return true;
                }
                path.pop();
                used[nx] = false;
            }
        }
        false
    }
    let g = |i: usize| goal(&allowed[i]);
    for target in min_len.max(1)..=n {
        for &s in starts {
            let mut used = vec![false; n];
            used[s] = true;
            let mut path = vec![s];
            if dfs(&adj, &g, &mut path, &mut used, target) {
                return Some(path);
            }
        }
    }
    None
}

fn refine(path: &[DyadicBox], k: u32, yc: &[f64], yd: &[f64], l: f64) -> Result<Vec<DyadicBox>, BridgeError> {
    let err = |m: &str| BridgeError::CoarsePath(format!("round {}: {m}", k + 1));
    let m = path.len();
    let (f, p, e) = (&path[0], &path[m - 2], &path[m - 1]);
    let bl = containing(yc, k + 1, l);
    let br = containing(yd, k + 1, l);
    if !bl.parent_is(f) || !br.parent_is(e) {
        return Err(err("end boxes do not contain the anchors"));
    }
    let d = e.corner.len();
    let (middle, right): (&[DyadicBox], Option<Vec<DyadicBox>>) = if br.corner[0] == 2 * e.corner[0] + 1 {
        let mut r1 = br.clone();
        r1.corner[0] -= 1;
        let mut tail = Vec::new();
        if d > 1 {
            let mut r2 = r1.clone();
            r2.corner[1] ^= 1;
            tail.push(r2);
        }
        tail.push(r1);
        tail.push(br.clone());
        if !tail[0].adjacent(p) {
            return Err(err("right tail does not meet the previous box"));
        }
        (&path[1..m - 1], Some(tail))
    } else if m > 3 {
        let q = &path[m - 3];
        let kids = p.children();
        let starts: Vec<usize> = (0..kids.len()).filter(|&i| kids[i].adjacent(q)).collect();
        let goal = |b: &DyadicBox| b.adjacent(&br);
        let found = simple_path(&kids, &starts, &goal, 2).ok_or_else(|| err("no path across the last box"))?;
        let mut tail: Vec<DyadicBox> = found.into_iter().map(|i| kids[i].clone()).collect();
        tail.push(br.clone());
        (&path[1..m - 2], Some(tail))
    } else {
        (&path[1..1], None)
    };
    let out = match right {
        Some(tail) => {
            let kids = f.children();
            let start = kids.iter().position(|b| *b == bl).unwrap();
            let first = &middle[0];
            let goal = |b: &DyadicBox| b.adjacent(first);
            let found = simple_path(&kids, &[start], &goal, 3).ok_or_else(|| err("no path out of the first box"))?;
            let mut out: Vec<DyadicBox> = found.into_iter().map(|i| kids[i].clone()).collect();
            out.extend(middle.iter().cloned());
            out.extend(tail);
            out
        }
        None => {
            let mut allowed = f.children();
            allowed.extend(p.children());
            allowed.push(br.clone());
            let start = allowed.iter().position(|b| *b == bl).unwrap();
            let goal = |b: &DyadicBox| *b == br;
            let found = simple_path(&allowed, &[start], &goal, 4).ok_or_else(|| err("no path through a short path"))?;
            found.into_iter().map(|i| allowed[i].clone()).collect()
        }
    };
    for w in out.windows(2) {
        if !w[0].adjacent(&w[1]) {
            return Err(err("consecutive boxes are not adjacent"));
        }
    }
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            if !out[i].disjoint(&out[j]) {
                return Err(err("path is not simple"));
            }
        }
    }
    Ok(out)
}

/// Coarse path in the normalized tube with y_C on the left face and y_D on
/// the right face, refined until its end boxes have side at most s/divisor.
pub fn coarse_path_normalized(l: f64, n: f64, yc: &[f64], yd: &[f64], s: f64, divisor: f64) -> Result<CoarsePath, BridgeError> {
    if !(l >= s) || !(s > 0.0) || n < 0.0 {
        return Err(BridgeError::Parameters(format!("coarse path needs L ≥ s > 0, N ≥ 0; got L = {l}, s = {s}, N = {n}")));
    }
    if (yc[0] + l).abs() > 1e-9 || (yd[0] - n - l).abs() > 1e-9 {
        return Err(BridgeError::Parameters("anchors are not on the end faces".into()));
    }
    let depth = ceil_log2(divisor * l / s);
    let f = containing(yc, 0, l);
    let e = containing(yd, 0, l);
    let mut cur = f.clone();
    let mut path = vec![f];
    for i in 1..cur.corner.len() {
        while cur.corner[i] != e.corner[i] {
            cur.corner[i] += (e.corner[i] - cur.corner[i]).signum();
            path.push(cur.clone());
        }
    }
    while cur.corner[0] < e.corner[0] {
        cur.corner[0] += 1;
        path.push(cur.clone());
    }
    let mut rounds = vec![path];
    for k in 0..depth {
        let next = refine(rounds.last().unwrap(), k, yc, yd, l)?;
        rounds.push(next);
    }
    let last = rounds.last().unwrap();
    let boxes = last[1..last.len() - 1].to_vec();
    Ok(CoarsePath { boxes, l, n, max_level: depth, rounds })
}

/// Coarse path in a lattice tube; y_C on ∂_L T and y_D on ∂_R T.
pub fn coarse_path(t: &Tube, yc: &Point, yd: &Point, s: f64, divisor: f64) -> Result<CoarsePath, BridgeError> {
    if !t.on_left_face(yc) || !t.on_right_face(yd) {
        return Err(BridgeError::Parameters("anchors are not on the end faces".into()));
    }
    let frame = Frame::of_tube(t);
    coarse_path_normalized(frame.l, frame.n, &frame.to_std(&to_f(yc)), &frame.to_std(&to_f(yd)), s, divisor)
}

impl CoarsePath {
    /// Items i)–iv): ends adjacent to same-size boxes holding the anchors,
    /// boxes inside T with levels ≤ max_level and level steps ≤ 1, end boxes
    /// at the maximal level, and 2 ≤ ℓ ≤ N/L + 5d·log₂(64L/s).
    pub fn check(&self, s: f64) -> Result<(), String> {
        let g = &self.boxes;
        let ell = g.len();
        let d = g.first().map_or(0, |b| b.corner.len());
        let last = self.rounds.last().ok_or("no rounds")?;
        let (first_end, last_end) = (&last[0], &last[last.len() - 1]);
        if ell < 2 {
            return Err(format!("ℓ = {ell} < 2"));
        }
        let bound = self.n / self.l + 5.0 * d as f64 * (64.0 * self.l / s).log2();
        if ell as f64 > bound {
            return Err(format!("ℓ = {ell} exceeds {bound:.2}"));
        }
        if first_end.level != g[0].level || !first_end.adjacent(&g[0]) || last_end.level != g[ell - 1].level || !last_end.adjacent(&g[ell - 1]) {
            return Err("end boxes are not adjacent to same-size anchor boxes".into());
        }
        if g[0].level != self.max_level || g[ell - 1].level != self.max_level {
            return Err("end boxes are not at the maximal level".into());
        }
        for (i, b) in g.iter().enumerate() {
            if !inside_tube(b, self.l, self.n) || b.level > self.max_level {
                return Err(format!("box {i} leaves T or is too fine"));
            }
            if i + 1 < ell && (!b.adjacent(&g[i + 1]) || b.level.abs_diff(g[i + 1].level) > 1) {
                return Err(format!("boxes {i}, {} are not a coarse step", i + 1));
            }
            for b2 in &g[i + 1..] {
                if !b.disjoint(b2) {
                    return Err("path is not simple".into());
                }
            }
        }
        Ok(())
    }
}

/// The invariants carried from round to round: anchors in the end boxes,
/// three boxes at level k at each end, interior boxes inside T, level steps
/// of at most one, and 3 ≤ ℓ_k ≤ N/L + 4(k+1)d with ℓ_k ≥ 4 once k ≥ 1.
pub fn check_round(round: &[DyadicBox], k: u32, l: f64, n: f64, yc: &[f64], yd: &[f64]) -> Result<(), String> {
    let m = round.len();
    if m < 3 || (k >= 1 && m < 4) {
        return Err(format!("round {k}: length {m}"));
    }
    let d = round[0].corner.len();
    if m as f64 > n / l + 4.0 * (k as f64 + 1.0) * d as f64 {
        return Err(format!("round {k}: length {m} too large"));
    }
    if round[0] != containing(yc, k, l) || round[m - 1] != containing(yd, k, l) {
        return Err(format!("round {k}: anchors not in the end boxes"));
    }
    for i in [0, 1, 2, m - 3, m - 2, m - 1] {
        if round[i].level != k {
            return Err(format!("round {k}: box {i} at level {}", round[i].level));
        }
    }
    for i in 1..m - 1 {
        if !inside_tube(&round[i], l, n) {
            return Err(format!("round {k}: box {i} leaves T"));
        }
    }
    for w in round.windows(2) {
        if !w[0].adjacent(&w[1]) || w[0].level.abs_diff(w[1].level) > 1 {
            return Err(format!("round {k}: not a coarse path"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// General bridges

fn to_f(p: &Point) -> Vec<f64> {
    p.coords().iter().map(|&c| c as f64).collect()
}

/// Affine map to the normalized tube: the axis becomes coordinate 0, pointing
/// from the left face to the right face, and the remaining axes keep their
/// order.
#[derive(Debug, Clone)]
struct Frame {
    axis: usize,
    sign: f64,
    left: f64,
    center: Vec<f64>,
    l: f64,
    n: f64,
    perm: Vec<usize>,
}

impl Frame {
    fn new(axis: usize, sign: f64, left: f64, center: Vec<f64>, l: f64, n: f64) -> Self {
        let d = center.len();
        let mut perm = vec![axis];
        perm.extend((0..d).filter(|&i| i != axis));
        Frame { axis, sign, left, center, l, n, perm }
    }

    fn of_tube(t: &Tube) -> Self {
        let l = t.cross_radius as f64;
        Frame::new(t.axis, 1.0, (t.base[t.axis] - t.cross_radius) as f64, to_f(&t.base), l, t.length as f64)
    }

    fn to_std(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; x.len()];
        u[0] = self.sign * (x[self.axis] - self.left) - self.l;
        for k in 1..x.len() {
            u[k] = x[self.perm[k]] - self.center[self.perm[k]];
        }
        u
    }

    fn from_std(&self, u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; u.len()];
        x[self.axis] = self.left + self.sign * (u[0] + self.l);
        for k in 1..u.len() {
            x[self.perm[k]] = u[k] + self.center[self.perm[k]];
        }
        x
    }

    /// Original axis and sign of the normalized direction (k, dir).
    fn direction(&self, k: usize, dir: i64) -> (usize, i64) {
        if k == 0 {
            (self.axis, dir * self.sign as i64)
        } else {
            (self.perm[k], dir)
        }
    }
}

fn round_point(x: &[f64]) -> Point {
    let c: Vec<i64> = x.iter().map(|v| v.round() as i64).collect();
    Point::new(&c).expect("dimension already checked")
}

/// The tube after the reduction step, or the single-hole bridge.
enum Reduced {
    Degenerate(BridgeBox),
    Tube { frame: Frame, yc: Point, yd: Point },
}

fn closest_pair(c: &[Point], d: &[Point]) -> (Point, Point, i64) {
    let mut best = (c[0], d[0], i64::MAX);
    for x in c {
        for y in d {
            let dist = x.linf_dist(y);
            if dist < best.2 {
                best = (*x, *y, dist);
            }
        }
    }
    best
}

fn reduce(c: &[Point], d: &[Point], t: &Tube, s: f64) -> Reduced {
    let (yc, yd, dist) = closest_pair(c, d);
    let dim = t.dim();
    let j = t.axis;
    let l = t.cross_radius;
    let jp = if (yd[j] - yc[j]).abs() == dist { j } else { (0..dim).find(|&i| (yd[i] - yc[i]).abs() == dist).unwrap() };
    let sign = (yd[jp] - yc[jp]).signum();
    if jp == j && dist >= 2 * l {
        let frame = Frame::new(j, sign as f64, yc[j] as f64, to_f(&t.base), l as f64, (dist - 2 * l) as f64);
        return Reduced::Tube { frame, yc, yd };
    }
    let (tlo, thi) = t.rect();
    let mut lo = vec![0i64; dim];
    for i in (0..dim).filter(|&i| i != jp) {
        lo[i] = (yc[i].max(yd[i]) - dist).clamp(tlo[i], thi[i] - dist);
    }
    let half = dist as f64 / 2.0;
    if (dist + 1) / 2 <= s.floor() as i64 {
        let mut x = vec![0i64; dim];
        for i in 0..dim {
            x[i] = if i == jp { yc[jp] + sign * (dist / 2) } else { lo[i] + dist / 2 };
        }
        return Reduced::Degenerate(BridgeBox::hole(Point::new(&x).unwrap(), s.floor() as i64));
    }
    let center: Vec<f64> = (0..dim).map(|i| if i == jp { 0.0 } else { lo[i] as f64 + half }).collect();
    Reduced::Tube { frame: Frame::new(jp, sign as f64, yc[jp] as f64, center, half, 0.0), yc, yd }
}

/// Lattice box inside the continuous box B(c, ρ).
fn inner_box(c: &[f64], rho: f64) -> Option<(Point, i64)> {
    let x = round_point(c);
    let off = c.iter().zip(x.coords()).map(|(a, &b)| (a - b as f64).abs()).fold(0.0, f64::max);
    let r = (rho - off + 1e-9).floor() as i64;
    (r >= 1).then_some((x, r))
}

/// Smallest box holding y and q, extended away from `away` where it has room.
fn joining_hole(y: &Point, q: &Point, away: &Point) -> BridgeBox {
    let dim = y.dim();
    let span = y.linf_dist(q);
    let rho = (span + 1) / 2;
    let mut c = vec![0i64; dim];
    for i in 0..dim {
        let (lo, hi) = (y[i].min(q[i]), y[i].max(q[i]));
        let start = if y[i] < away[i] { hi - 2 * rho } else { lo };
        c[i] = start + rho;
    }
    BridgeBox::hole(Point::new(&c).unwrap(), rho)
}

/// Sites on the boundary of B(x, r) within ℓ∞ distance `reach` of y,
/// enumerated face by face.
fn boundary_near(x: &Point, r: i64, y: &Point, reach: i64) -> Vec<Point> {
    let d = x.dim();
    let mut out = PointSet::new();
    for i in 0..d {
        for side in [-r, r] {
            let face = x[i] + side;
            if (face - y[i]).abs() > reach {
                continue;
            }
            let mut lo = *x;
            let mut hi = *x;
            let mut empty = false;
            for k in 0..d {
                if k == i {
                    lo.set(k, face);
                    hi.set(k, face);
                } else {
                    lo.set(k, (x[k] - r).max(y[k] - reach));
                    hi.set(k, (x[k] + r).min(y[k] + reach));
                    empty |= lo[k] > hi[k];
                }
            }
            if !empty {
                out.extend(crate::lattice::RectIter::new(lo, hi));
            }
        }
    }
    out.into_iter().collect()
}

/// Hole joining y to the boundary of B(x, r), clear of the given holes after
/// s'-inflation. The boundary point is the nearest one to y that works,
/// ties broken by coordinates.
fn end_hole(y: &Point, (x, r): (Point, i64), holes: &[BridgeBox], s: f64, s_prime: f64) -> Result<(BridgeBox, Point), BridgeError> {
    let grow = |h: &BridgeBox| Rect::of_box(&h.center, (h.radius as f64 + s_prime).floor() as i64);
    let near: Vec<Rect> = holes.iter().map(grow).collect();
    let base = y.linf_dist(&Point::new(&(0..y.dim()).map(|i| y[i].clamp(x[i] - r, x[i] + r)).collect::<Vec<_>>()).unwrap());
    let mut w = 0;
    loop {
        let mut candidates = boundary_near(&x, r, y, base + w);
        candidates.sort_by_key(|q| (q.linf_dist(y), *q));
        for q in candidates {
            let h = joining_hole(y, &q, &x);
            if h.radius as f64 > s {
                break;
            }
            let g = grow(&h);
            if near.iter().all(|o| !o.intersects(&g)) {
                return Ok((h, q));
            }
        }
        if (base + w) as f64 > 2.0 * s + 1.0 {
            break;
        }
        w = (2 * w).max(1);
    }
    Err(BridgeError::TooSmall(format!("no end hole joins {y} to the box at {x}")))
}

/// Bridge between C and D inside T, for L ≥ 2s: reduction to a tube with
/// the anchors on its faces, coarse path, shrunk boxes joined by tube
/// bridges, and holes at both ends. The result is validated before return.
pub fn general_bridge(c: &PointSet, d: &PointSet, t: &Tube, params: &BridgeParams) -> Result<Bridge, BridgeError> {
    let bridge = general_bridge_unchecked(c, d, t, params)?;
    let report = validate_bridge(&bridge, &Anchor::Sites(c.clone()), &Anchor::Sites(d.clone()));
    if let Some(f) = report.first_failure() {
        return Err(BridgeError::Invalid { clause: f.clause, detail: f.witness.clone().unwrap_or_default() });
    }
    Ok(bridge)
}

/// The construction of `general_bridge` without the final validation, for
/// inspecting failures.
pub fn general_bridge_unchecked(c: &PointSet, d: &PointSet, t: &Tube, params: &BridgeParams) -> Result<Bridge, BridgeError> {
    params.check()?;
    let (s, xi) = (params.s, params.xi);
    if (t.cross_radius as f64) < 2.0 * s {
        return Err(BridgeError::Parameters(format!("L = {} below 2s = {}", t.cross_radius, 2.0 * s)));
    }
    if let Some(x) = c.iter().find(|x| d.contains(x)) {
        return Err(BridgeError::NotDisjoint(*x));
    }
    let cs: Vec<Point> = c.iter().filter(|x| t.contains(x)).copied().collect();
    let ds: Vec<Point> = d.iter().filter(|x| t.contains(x)).copied().collect();
    if cs.is_empty() {
        return Err(BridgeError::MissesTube("C"));
    }
    if ds.is_empty() {
        return Err(BridgeError::MissesTube("D"));
    }
    let s_prime = s.powf(0.25) / 200.0;
    let levels = match reduce(&cs, &ds, t, s) {
        Reduced::Degenerate(h) => vec![vec![h]],
        Reduced::Tube { frame, yc, yd } => assemble(&frame, &yc, &yd, params)?,
    };
    Ok(Bridge { levels, s, s_prime, m: params.m, xi, tube: *t })
}

fn assemble(frame: &Frame, yc: &Point, yd: &Point, params: &BridgeParams) -> Result<Vec<Vec<BridgeBox>>, BridgeError> {
    let (s, xi, k) = (params.s, params.xi, &params.constants);
    let ycs = frame.to_std(&to_f(yc));
    let yds = frame.to_std(&to_f(yd));
    let path = coarse_path_normalized(frame.l, frame.n, &ycs, &yds, s, k.depth_divisor)?;
    let g = &path.boxes;
    let mut shrunk = Vec::with_capacity(g.len());
    for b in g {
        let r = b.side(frame.l) / 2.0;
        let rho = r - k.margin(r, xi);
        let c = frame.from_std(&b.center(frame.l));
        let (x, rl) = inner_box(&c, rho).ok_or_else(|| BridgeError::TooSmall(format!("box of radius {r:.2} vanishes after shrinking")))?;
        shrunk.push((x, rl));
    }
    let s_sub = k.sub_scale(s, xi);
    let mut marked: Vec<Vec<Point>> = vec![Vec::new(); g.len()];
    let mut sub_levels: Vec<Vec<Vec<BridgeBox>>> = Vec::new();
    let mut holes = Vec::new();
    for j in 0..g.len() - 1 {
        let (ks, dir_s) = g[j].contact(&g[j + 1]).expect("coarse path steps are adjacent");
        let (axis, dir) = frame.direction(ks, dir_s);
        let small = if g[j + 1].level > g[j].level { &g[j + 1] } else { &g[j] };
        let mut face = small.center(frame.l);
        let half = small.side(frame.l) / 2.0;
        face[ks] += if std::ptr::eq(small, &g[j]) { dir_s as f64 * half } else { -dir_s as f64 * half };
        // the smaller face's centre, moved into the part of both faces that
        // stays clear of their edges
        let mut line = round_point(&frame.from_std(&face));
        let ((x0, r0), (x1, r1)) = (shrunk[j], shrunk[j + 1]);
        for i in (0..line.dim()).filter(|&i| i != axis) {
            let lo = (x0[i] - r0).max(x1[i] - r1);
            let hi = (x0[i] + r0).min(x1[i] + r1);
            if lo > hi {
                return Err(BridgeError::TooSmall(format!("connecting tube {j} misses the facing faces")));
            }
            let edge = (r0.min(r1) / 2).min((hi - lo) / 2);
            line.set(i, line[i].clamp(lo + edge, hi - edge));
        }
        let f0 = x0[axis] + dir * r0;
        let f1 = x1[axis] - dir * r1;
        let len = dir * (f1 - f0);
        if len < 2 {
            return Err(BridgeError::TooSmall(format!("boxes {j} and {} are too close", j + 1)));
        }
        let mut p0 = line;
        p0.set(axis, f0);
        let mut p1 = line;
        p1.set(axis, f1);
        marked[j].push(p0);
        marked[j + 1].push(p1);
        let l_cross = k.tube_radius(g[j].side(frame.l) / 2.0, xi);
        let (lv, hs) = line_bridge(p0, axis, dir, len, l_cross * k.first_fraction, s_sub, xi, r0.min(r1) / 2)?;
        sub_levels.push(lv);
        holes.extend(hs);
    }
    let s_prime = s.powf(0.25) / 200.0;
    let (hc, qc) = end_hole(yc, shrunk[0], &holes, s, s_prime)?;
    holes.push(hc.clone());
    let last = g.len() - 1;
    let (hd, qd) = end_hole(yd, shrunk[last], &holes, s, s_prime)?;
    holes.pop();
    marked[0].insert(0, qc);
    marked[last].push(qd);
    let mut end_holes = vec![hc, hd];
    end_holes.append(&mut holes);
    let first: Vec<BridgeBox> = shrunk
        .iter()
        .zip(marked)
        .map(|(&(center, radius), m)| BridgeBox { center, radius, marked: m })
        .collect();
    let deepest = sub_levels.iter().map(Vec::len).max().unwrap_or(0);
    let mut levels = vec![first];
    for i in 0..deepest {
        levels.push(sub_levels.iter().filter_map(|lv| lv.get(i)).flatten().cloned().collect());
    }
    levels.push(end_holes);
    Ok(levels)
}

// ---------------------------------------------------------------------------
// Random instances

/// A random input for `general_bridge` in d = 3.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzInstance {
    pub c: PointSet,
    pub d: PointSet,
    pub tube: Tube,
}

fn walk_blob<R: rand::Rng>(rng: &mut R, start: Point, steps: usize) -> PointSet {
    let mut out = PointSet::new();
    let mut x = start;
    out.insert(x);
    for _ in 0..steps {
        let i = rng.random_range(0..x.dim());
        let sgn = if rng.random::<bool>() { 1 } else { -1 };
        x = x.shifted(i, sgn);
        out.insert(x);
    }
    out
}

/// Tube of cross radius L with random axis, base and length in [0, 2L];
/// C and D are disjoint random-walk traces started inside it. Starting
/// points are uniform, at opposite ends, or within distance 2s of each other.
pub fn fuzz_instance<R: rand::Rng>(rng: &mut R, l: i64, s: f64) -> FuzzInstance {
    let axis = rng.random_range(0..3);
    let base = Point::new(&[rng.random_range(-50..=50), rng.random_range(-50..=50), rng.random_range(-50..=50)]).unwrap();
    let tube = Tube::new(base, axis, l, rng.random_range(0..=2 * l)).unwrap();
    let (lo, hi) = tube.rect();
    let uniform = |rng: &mut R| {
        let c: Vec<i64> = (0..3).map(|i| rng.random_range(lo[i]..=hi[i])).collect();
        Point::new(&c).unwrap()
    };
    let steps = |rng: &mut R| rng.random_range(20..=200);
    loop {
        let (x, y) = match rng.random_range(0..3) {
            0 => (uniform(rng), uniform(rng)),
            1 => {
                let (mut x, mut y) = (uniform(rng), uniform(rng));
                let k = (l / 4).max(1);
                x.set(axis, lo[axis] + rng.random_range(0..k));
                y.set(axis, hi[axis] - rng.random_range(0..k));
                (x, y)
            }
            _ => {
                let x = uniform(rng);
                let reach = (2.0 * s) as i64;
                let c: Vec<i64> = (0..3).map(|i| (x[i] + rng.random_range(-reach..=reach)).clamp(lo[i], hi[i])).collect();
                (x, Point::new(&c).unwrap())
            }
        };
        let n1 = steps(rng);
        let n2 = steps(rng);
        let c = walk_blob(rng, x, n1);
        let d = walk_blob(rng, y, n2);
        if c.iter().all(|p| !d.contains(p)) {
            return FuzzInstance { c, d, tube };
        }
    }
}

// ---------------------------------------------------------------------------
// Dense subfamilies

/// From indices ⊆ {1, …, K} with at least βK elements, ⌈βΓ⌉ consecutive
/// elements whose successive differences are at most Γ, taken from the first
/// longest run of such differences.
pub fn dense_subfamily(indices: &[usize], k: usize, beta: f64, gamma: usize) -> Result<Vec<usize>, BridgeError> {
    if !(beta > 0.0 && beta <= 1.0) || gamma == 0 {
        return Err(BridgeError::Parameters(format!("need 0 < β ≤ 1 and Γ ≥ 1, got β = {beta}, Γ = {gamma}")));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i == 0 || i > k) {
        return Err(BridgeError::Parameters("indices must be increasing within 1..=K".into()));
    }
    if (indices.len() as f64) < beta * k as f64 {
        return Err(BridgeError::Infeasible(format!("{} indices, fewer than βK = {}", indices.len(), beta * k as f64)));
    }
    let want = (beta * gamma as f64 - 1e-12).ceil().max(1.0) as usize;
    let (mut best, mut best_len, mut start) = (0, 0, 0);
    for i in 0..=indices.len() {
        let breaks = i == indices.len() || (i > 0 && indices[i] - indices[i - 1] > gamma);
        if breaks && i > start {
            if i - start > best_len {
                best = start;
                best_len = i - start;
            }
            start = i;
        } else if breaks {
            start = i;
        }
    }
    if best_len < want {
        return Err(BridgeError::Infeasible(format!("longest run has {best_len} elements, {want} needed")));
    }
    Ok(indices[best..best + want].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn claim_example() {
        let iv = interval_bridge(100.0, 25.0, 0.6).unwrap();
        assert!(iv.len() <= 5);
        assert!(interval_bridge(100.0, 5.0, 0.6).is_err());
    }

    #[test]
    fn rect_meets() {
        let a = Rect::of_box(&p(&[0, 0, 0]), 1);
        assert!(a.meets(&Rect::point(p(&[2, 0, 0]))));
        assert!(!a.meets(&Rect::point(p(&[2, 2, 0]))));
        assert!(!a.meets(&Rect::point(p(&[3, 0, 0]))));
        assert!(a.meets(&Rect::of_box(&p(&[1, 1, 0]), 0)));
    }

    #[test]
    fn dyadic_adjacency() {
        let a = DyadicBox { level: 0, corner: vec![0, 0, 0] };
        let b = DyadicBox { level: 1, corner: vec![2, 1, 0] };
        let c = DyadicBox { level: 1, corner: vec![2, 2, 0] };
        assert_eq!(a.contact(&b), Some((0, 1)));
        assert!(!a.adjacent(&c));
        assert!(!a.adjacent(&DyadicBox { level: 1, corner: vec![1, 1, 0] }));
    }

    #[test]
    fn hand_built_bridge() {
        // tube of length 20 in d = 3 along axis 0, one box joined to both faces by holes
        let t = Tube::new(p(&[0, 0, 0]), 0, 10, 0).unwrap();
        let c = Anchor::left_face(&t);
        let d = Anchor::right_face(&t);
        let mid = BridgeBox { center: p(&[0, 0, 0]), radius: 2, marked: vec![p(&[-2, 0, 0]), p(&[2, 0, 0])] };
        let h1 = BridgeBox::hole(p(&[-6, 0, 0]), 3);
        let h2 = BridgeBox::hole(p(&[6, 0, 0]), 3);
        let b = Bridge { levels: vec![vec![mid], vec![h1, h2]], s: 4.0, s_prime: 0.02, m: 3.0, xi: 0.6, tube: t };
        let rep = validate_bridge(&b, &c, &d);
        assert!(rep.all_pass(), "{rep:?}");

        let mut bad = b.clone();
        bad.levels[1].push(BridgeBox::hole(p(&[-4, 0, 0]), 1));
        assert!(!validate_bridge(&bad, &c, &d).get(Clause::Separation).pass);

        let mut cut = b.clone();
        cut.levels[1].pop();
        assert!(!validate_bridge(&cut, &c, &d).get(Clause::Connectivity).pass);
    }

    #[test]
    fn dense_subfamily_whole_range() {
        let idx: Vec<usize> = (1..=20).collect();
        assert_eq!(dense_subfamily(&idx, 20, 0.5, 4).unwrap(), vec![1, 2]);
    }
}
