//! Integer geometry of Z^d: points, norms, boxes, tubes and vertex boundaries.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, Index, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Smallest supported dimension; interlacements need a transient walk.
pub const MIN_DIM: usize = 3;
/// Largest supported dimension. Points are stored inline, so this bounds their size.
pub const MAX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LatticeError {
    #[error("dimension {0} outside the supported range {MIN_DIM}..={MAX_DIM}")]
    BadDimension(usize),
    #[error("mixed dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("distance to an empty point set")]
    EmptySet,
    #[error("axis {axis} out of range for dimension {dim}")]
    BadAxis { axis: usize, dim: usize },
    #[error("negative radius {0}")]
    NegativeRadius(i64),
    #[error("bad point record: {0}")]
    Parse(String),
}

pub fn check_dim(d: usize) -> Result<usize, LatticeError> {
    if (MIN_DIM..=MAX_DIM).contains(&d) {
        Ok(d)
    } else {
        Err(LatticeError::BadDimension(d))
    }
}

/// A site of Z^d. Unused trailing coordinates are kept at zero so that
/// equality, hashing and ordering only see the first `dim` entries.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    dim: u8,
    c: [i64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[i64]) -> Result<Self, LatticeError> {
        let d = check_dim(coords.len())?;
        let mut c = [0; MAX_DIM];
        c[..d].copy_from_slice(coords);
        Ok(Point { dim: d as u8, c })
    }

    /// Panics if `d` is unsupported.
    pub fn origin(d: usize) -> Self {
        check_dim(d).expect("unsupported dimension");
        Point { dim: d as u8, c: [0; MAX_DIM] }
    }

    /// Unit vector along `axis` (0-based).
    pub fn unit(d: usize, axis: usize) -> Self {
        let mut p = Point::origin(d);
        assert!(axis < d, "axis {axis} out of range for d={d}");
        p.c[axis] = 1;
        p
    }

    /// Point with every coordinate equal to `v`.
    pub fn splat(d: usize, v: i64) -> Self {
        let mut p = Point::origin(d);
        for i in 0..d {
            p.c[i] = v;
        }
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, v: i64) {
        assert!(axis < self.dim());
        self.c[axis] = v;
    }

    /// Moves one unit in direction `dir` (axis `dir / 2`, forwards when even).
    #[inline]
    pub fn step_mut(&mut self, dir: u8) {
        self.c[(dir >> 1) as usize] += 1 - 2 * (dir & 1) as i64;
    }

    /// ℓ∞ distance to the rectangle [lo, hi]; zero inside.
    #[inline]
    pub fn rect_distance(&self, lo: &Point, hi: &Point) -> i64 {
        let mut m = 0;
        for i in 0..self.dim() {
            m = m.max(lo.c[i] - self.c[i]).max(self.c[i] - hi.c[i]);
        }
        m
    }

    #[inline]
    pub fn shifted(&self, axis: usize, delta: i64) -> Point {
        let mut p = *self;
        p.c[axis] += delta;
        p
    }

    pub fn scaled(&self, k: i64) -> Point {
        let mut p = *self;
        for v in p.c.iter_mut() {
            *v *= k;
        }
        p
    }

    #[inline]
    pub fn linf(&self) -> i64 {
        self.coords().iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    pub fn l1(&self) -> i64 {
        self.coords().iter().map(|v| v.abs()).sum()
    }

    pub fn l2_sq(&self) -> i64 {
        self.coords().iter().map(|v| v * v).sum()
    }

    #[inline]
    pub fn linf_dist(&self, other: &Point) -> i64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = 0;
        for i in 0..self.dim() {
            m = m.max((self.c[i] - other.c[i]).abs());
        }
        m
    }

    pub fn l1_dist(&self, other: &Point) -> i64 {
        (0..self.dim()).map(|i| (self.c[i] - other.c[i]).abs()).sum()
    }

    /// Nearest-neighbour adjacency (ℓ¹ distance one).
    pub fn is_adjacent(&self, other: &Point) -> bool {
        self.l1_dist(other) == 1
    }

    /// *-adjacency (ℓ∞ distance one).
    pub fn is_star_adjacent(&self, other: &Point) -> bool {
        self.linf_dist(other) == 1
    }
}

impl Index<usize> for Point {
    type Output = i64;
    fn index(&self, i: usize) -> &i64 {
        assert!(i < self.dim());
        &self.c[i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        assert_eq!(self.dim, o.dim, "mixed dimensions");
        let mut p = self;
        for i in 0..MAX_DIM {
            p.c[i] += o.c[i];
        }
        p
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        assert_eq!(self.dim, o.dim, "mixed dimensions");
        let mut p = self;
        for i in 0..MAX_DIM {
            p.c[i] -= o.c[i];
        }
        p
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self.scaled(-1)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(de)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// The 2d nearest neighbours (`star = false`) or the 3^d − 1 ℓ∞-neighbours.
pub fn neighbors(x: &Point, star: bool) -> Vec<Point> {
    let d = x.dim();
    if !star {
        let mut out = Vec::with_capacity(2 * d);
        for i in 0..d {
            out.push(x.shifted(i, 1));
            out.push(x.shifted(i, -1));
        }
        return out;
    }
    let mut out = Vec::with_capacity(3usize.pow(d as u32) - 1);
    let mut off = vec![-1i64; d];
    loop {
        if off.iter().any(|&o| o != 0) {
            let mut p = *x;
            for i in 0..d {
                p.c[i] += off[i];
            }
            out.push(p);
        }
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if off[i] < 1 {
                off[i] += 1;
                break;
            }
            off[i] = -1;
        }
    }
}

/// Calls `f` on each nearest neighbour of `x` without allocating.
#[inline]
pub fn for_each_neighbor(x: &Point, mut f: impl FnMut(Point)) {
    for i in 0..x.dim() {
        f(x.shifted(i, 1));
        f(x.shifted(i, -1));
    }
}

/// Anything that can answer membership queries for lattice sites.
pub trait Region {
    fn contains(&self, p: &Point) -> bool;

    /// A rectangle containing the region, when cheaply known. Walks use it
    /// to skip membership tests while far away.
    fn envelope(&self) -> Option<(Point, Point)> {
        None
    }
}

impl<R: Region + ?Sized> Region for &R {
    fn contains(&self, p: &Point) -> bool {
        (**self).contains(p)
    }

    fn envelope(&self) -> Option<(Point, Point)> {
        (**self).envelope()
    }
}

/// Finite set of sites, kept sorted so iteration order is deterministic.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct PointSet {
    pts: BTreeSet<Point>,
}

impl PointSet {
    pub fn new() -> Self {
        PointSet::default()
    }

    /// Panics when mixing dimensions.
    pub fn insert(&mut self, p: Point) -> bool {
        if let Some(q) = self.pts.first() {
            assert_eq!(q.dim(), p.dim(), "mixed dimensions in point set");
        }
        self.pts.insert(p)
    }

    pub fn remove(&mut self, p: &Point) -> bool {
        self.pts.remove(p)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.pts.contains(p)
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> + '_ {
        self.pts.iter()
    }

    pub fn first(&self) -> Option<&Point> {
        self.pts.first()
    }

    pub fn dim(&self) -> Option<usize> {
        self.pts.first().map(|p| p.dim())
    }

    pub fn union(&self, o: &PointSet) -> PointSet {
        self.pts.union(&o.pts).copied().collect()
    }

    pub fn intersection(&self, o: &PointSet) -> PointSet {
        self.pts.intersection(&o.pts).copied().collect()
    }

    pub fn difference(&self, o: &PointSet) -> PointSet {
        self.pts.difference(&o.pts).copied().collect()
    }

    pub fn is_subset(&self, o: &PointSet) -> bool {
        self.pts.is_subset(&o.pts)
    }

    pub fn is_disjoint(&self, o: &PointSet) -> bool {
        self.pts.is_disjoint(&o.pts)
    }

    /// Smallest radius r with the set inside B(0, r).
    pub fn linf_radius(&self) -> i64 {
        self.pts.iter().map(|p| p.linf()).max().unwrap_or(0)
    }

    /// Coordinate-wise bounding rectangle, as (lo, hi).
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.pts.iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            for i in 0..p.dim() {
                lo.c[i] = lo.c[i].min(p.c[i]);
                hi.c[i] = hi.c[i].max(p.c[i]);
            }
        }
        Some((lo, hi))
    }

    /// ℓ∞ diameter.
    pub fn diameter(&self) -> i64 {
        match self.bounds() {
            Some((lo, hi)) => (0..lo.dim()).map(|i| hi.c[i] - lo.c[i]).max().unwrap_or(0),
            None => 0,
        }
    }
}

impl Region for PointSet {
    fn contains(&self, p: &Point) -> bool {
        self.pts.contains(p)
    }
}

impl fmt::Debug for PointSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.pts.iter()).finish()
    }
}

impl FromIterator<Point> for PointSet {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        let mut s = PointSet::new();
        s.extend(iter);
        s
    }
}

impl Extend<Point> for PointSet {
    fn extend<I: IntoIterator<Item = Point>>(&mut self, iter: I) {
        for p in iter {
            self.insert(p);
        }
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a Point;
    type IntoIter = std::collections::btree_set::Iter<'a, Point>;
    fn into_iter(self) -> Self::IntoIter {
        self.pts.iter()
    }
}

impl IntoIterator for PointSet {
    type Item = Point;
    type IntoIter = std::collections::btree_set::IntoIter<Point>;
    fn into_iter(self) -> Self::IntoIter {
        self.pts.into_iter()
    }
}

/// ℓ∞ ball B(center, radius).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct LatticeBox {
    pub center: Point,
    pub radius: i64,
}

impl LatticeBox {
    pub fn new(center: Point, radius: i64) -> Result<Self, LatticeError> {
        if radius < 0 {
            return Err(LatticeError::NegativeRadius(radius));
        }
        Ok(LatticeBox { center, radius })
    }

    /// B(0, r) in dimension d. Panics on negative radius.
    pub fn ball(d: usize, r: i64) -> Self {
        LatticeBox::new(Point::origin(d), r).expect("negative radius")
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// (2r+1)^d.
    pub fn len(&self) -> u64 {
        ((2 * self.radius + 1) as u64).pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> Point {
        self.center - Point::splat(self.dim(), self.radius)
    }

    pub fn hi(&self) -> Point {
        self.center + Point::splat(self.dim(), self.radius)
    }

    pub fn inflate(&self, by: i64) -> LatticeBox {
        LatticeBox::new(self.center, self.radius + by).expect("negative radius")
    }

    /// Sites in lexicographic order.
    pub fn points(&self) -> RectIter {
        RectIter::new(self.lo(), self.hi())
    }

    /// |x − center|∞ == radius, i.e. the interior vertex boundary ∂B.
    pub fn on_sphere(&self, p: &Point) -> bool {
        self.center.linf_dist(p) == self.radius
    }

    pub fn sphere(&self) -> PointSet {
        self.points().filter(|p| self.on_sphere(p)).collect()
    }

    pub fn to_set(&self) -> PointSet {
        self.points().collect()
    }

    pub fn intersects(&self, o: &LatticeBox) -> bool {
        self.center.linf_dist(&o.center) <= self.radius + o.radius
    }

    /// ℓ∞ distance between the two boxes as point sets.
    pub fn distance(&self, o: &LatticeBox) -> i64 {
        (self.center.linf_dist(&o.center) - self.radius - o.radius).max(0)
    }
}

impl Region for LatticeBox {
    #[inline]
    fn contains(&self, p: &Point) -> bool {
        self.center.linf_dist(p) <= self.radius
    }

    fn envelope(&self) -> Option<(Point, Point)> {
        Some((self.lo(), self.hi()))
    }
}

/// Odometer over the integer rectangle [lo, hi].
#[derive(Clone, Debug)]
pub struct RectIter {
    lo: Point,
    hi: Point,
    cur: Option<Point>,
}

impl RectIter {
    pub fn new(lo: Point, hi: Point) -> Self {
        let empty = (0..lo.dim()).any(|i| lo.c[i] > hi.c[i]);
        RectIter { lo, hi, cur: if empty { None } else { Some(lo) } }
    }
}

impl Iterator for RectIter {
    type Item = Point;
    fn next(&mut self) -> Option<Point> {
        let out = self.cur?;
        let mut nxt = out;
        let mut i = out.dim();
        loop {
            if i == 0 {
                self.cur = None;
                break;
            }
            i -= 1;
            if nxt.c[i] < self.hi.c[i] {
                nxt.c[i] += 1;
                self.cur = Some(nxt);
                break;
            }
            nxt.c[i] = self.lo.c[i];
        }
        Some(out)
    }
}

/// Dense indexing of an integer rectangle, for array-backed fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxIndex {
    lo: Point,
    hi: Point,
    strides: [usize; MAX_DIM],
    len: usize,
}

impl BoxIndex {
    pub fn new(lo: Point, hi: Point) -> Self {
        let d = lo.dim();
        let mut strides = [0usize; MAX_DIM];
        let mut len = 1usize;
        for i in (0..d).rev() {
            strides[i] = len;
            len *= (hi.c[i] - lo.c[i] + 1).max(0) as usize;
        }
        BoxIndex { lo, hi, strides, len }
    }

    pub fn of_box(b: &LatticeBox) -> Self {
        BoxIndex::new(b.lo(), b.hi())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lo(&self) -> Point {
        self.lo
    }

    pub fn hi(&self) -> Point {
        self.hi
    }

    /// Row-major strides; the last axis varies fastest.
    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.lo.dim()]
    }

    #[inline]
    pub fn index(&self, p: &Point) -> Option<usize> {
        let mut k = 0;
        for i in 0..self.lo.dim() {
            let v = p.c[i];
            if v < self.lo.c[i] || v > self.hi.c[i] {
                return None;
            }
            k += (v - self.lo.c[i]) as usize * self.strides[i];
        }
        Some(k)
    }

    pub fn point(&self, mut k: usize) -> Point {
        let mut p = self.lo;
        for i in 0..self.lo.dim() {
            p.c[i] += (k / self.strides[i]) as i64;
            k %= self.strides[i];
        }
        p
    }

    pub fn points(&self) -> RectIter {
        RectIter::new(self.lo, self.hi)
    }
}

/// Bitmap over a rectangle; constant-time membership for hot loops.
#[derive(Clone, Debug)]
pub struct DenseSet {
    index: BoxIndex,
    bits: Vec<bool>,
    count: usize,
}

impl DenseSet {
    /// Panics on an empty set.
    pub fn from_set(set: &PointSet) -> Self {
        let (lo, hi) = set.bounds().expect("empty set");
        let index = BoxIndex::new(lo, hi);
        let mut bits = vec![false; index.len()];
        for p in set {
            bits[index.index(p).unwrap()] = true;
        }
        DenseSet { index, bits, count: set.len() }
    }

    pub fn from_box(b: &LatticeBox) -> Self {
        let index = BoxIndex::of_box(b);
        let n = index.len();
        DenseSet { index, bits: vec![true; n], count: n }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn index(&self) -> &BoxIndex {
        &self.index
    }

    pub fn to_set(&self) -> PointSet {
        self.iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| self.index.point(k))
    }
}

impl Region for DenseSet {
    #[inline]
    fn contains(&self, p: &Point) -> bool {
        match self.index.index(p) {
            Some(k) => self.bits[k],
            None => false,
        }
    }

    fn envelope(&self) -> Option<(Point, Point)> {
        Some((self.index.lo(), self.index.hi()))
    }
}

/// `T = ∪_{0≤n≤N} B(base + n e_axis, L)`. The axis is 0-based.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Tube {
    pub base: Point,
    pub axis: usize,
    pub cross_radius: i64,
    pub length: i64,
}

impl Tube {
    pub fn new(base: Point, axis: usize, cross_radius: i64, length: i64) -> Result<Self, LatticeError> {
        if axis >= base.dim() {
            return Err(LatticeError::BadAxis { axis, dim: base.dim() });
        }
        if cross_radius < 0 {
            return Err(LatticeError::NegativeRadius(cross_radius));
        }
        if length < 0 {
            return Err(LatticeError::NegativeRadius(length));
        }
        Ok(Tube { base, axis, cross_radius, length })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Corners of the tube as a rectangle.
    pub fn rect(&self) -> (Point, Point) {
        let d = self.dim();
        let l = self.cross_radius;
        let mut lo = self.base - Point::splat(d, l);
        let mut hi = self.base + Point::splat(d, l);
        lo.c[self.axis] = self.base.c[self.axis] - l;
        hi.c[self.axis] = self.base.c[self.axis] + self.length + l;
        (lo, hi)
    }

    pub fn points(&self) -> RectIter {
        let (lo, hi) = self.rect();
        RectIter::new(lo, hi)
    }

    /// The face ∂_L T: sites of T with minimal coordinate along the axis.
    pub fn on_left_face(&self, p: &Point) -> bool {
        self.contains(p) && p.c[self.axis] == self.base.c[self.axis] - self.cross_radius
    }

    /// The face ∂_R T.
    pub fn on_right_face(&self, p: &Point) -> bool {
        self.contains(p) && p.c[self.axis] == self.base.c[self.axis] + self.length + self.cross_radius
    }
}

impl Region for Tube {
    fn contains(&self, p: &Point) -> bool {
        let (lo, hi) = self.rect();
        (0..self.dim()).all(|i| p.c[i] >= lo.c[i] && p.c[i] <= hi.c[i])
    }
}

/// ∂U = {x ∈ U : some nearest neighbour lies outside U}.
pub fn boundary(region: &PointSet) -> PointSet {
    region
        .iter()
        .filter(|x| {
            let mut out = false;
            for_each_neighbor(x, |y| out |= !region.contains(&y));
            out
        })
        .copied()
        .collect()
}

/// ∂_out U = ∂(U^c): sites outside U with a neighbour in U.
pub fn outer_boundary(region: &PointSet) -> PointSet {
    let mut out = PointSet::new();
    for x in region {
        for_each_neighbor(x, |y| {
            if !region.contains(&y) {
                out.insert(y);
            }
        });
    }
    out
}

/// Ū = U ∪ ∂_out U.
pub fn closure(region: &PointSet) -> PointSet {
    region.union(&outer_boundary(region))
}

/// ∂_B S = {x ∈ B \ S : x has a nearest neighbour in S}.
pub fn relative_boundary(s: &PointSet, within: &LatticeBox) -> PointSet {
    outer_boundary(s).iter().filter(|x| within.contains(x)).copied().collect()
}

/// min over pairs of |a − b|∞.
pub fn linf_distance(a: &PointSet, b: &PointSet) -> Result<i64, LatticeError> {
    if a.is_empty() || b.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = i64::MAX;
    for x in small {
        if large.contains(x) {
            return Ok(0);
        }
        best = best.min(dist_to_set(x, large));
    }
    Ok(best)
}

/// min over y ∈ set of |x − y|∞; `i64::MAX` for the empty set.
pub fn dist_to_set(x: &Point, set: &PointSet) -> i64 {
    set.iter().map(|y| x.linf_dist(y)).min().unwrap_or(i64::MAX)
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    p: Point,
}

/// One `{"p": [...]}` record per line.
pub fn write_ndjson<W: Write>(set: &PointSet, mut w: W) -> std::io::Result<()> {
    for p in set {
        serde_json::to_writer(&mut w, &PointRecord { p: *p })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(r: R) -> Result<PointSet, LatticeError> {
    let mut out = PointSet::new();
    for line in r.lines() {
        let line = line.map_err(|e| LatticeError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PointRecord = serde_json::from_str(&line).map_err(|e| LatticeError::Parse(e.to_string()))?;
        if let Some(d) = out.dim() {
            if d != rec.p.dim() {
                return Err(LatticeError::DimensionMismatch(d, rec.p.dim()));
            }
        }
        out.insert(rec.p);
    }
    Ok(out)
}
