//! Simple random walk with stopping times, the no-return walk, and seeded streams.

use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{boundary, DenseSet, LatticeBox, Point, PointSet, Region};

/// Identifies the generator behind [`RngStream`]; recorded in every output.
pub const ALGORITHM_ID: &str = "chacha8:rand_chacha-0.9:seed_from_u64+set_stream";

/// Attempts allowed before a no-return walk is declared a failure.
pub const DEFAULT_REJECTION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WalkError {
    #[error("truncation radius {radius} too small for a set of radius {set_radius}")]
    TruncationTooSmall { radius: i64, set_radius: i64 },
    #[error("start {0} is not in the set")]
    StartOutside(Point),
    #[error("start {0} is not on the interior boundary of the set")]
    StartNotOnBoundary(Point),
    #[error("no escaping walk after {0} attempts")]
    RejectionCapExceeded(u64),
    #[error("walk steps are not nearest-neighbour at index {0}")]
    NotAdjacent(usize),
    #[error("empty walk")]
    Empty,
}

/// ChaCha8 keyed by (master seed, stream index). Streams with different
/// indices never overlap, so replicas can be handed out by index.
#[derive(Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
    digits: u64,
    ndigits: u32,
    radix: u32,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        RngStream { master_seed, stream_index, rng, digits: 0, ndigits: 0, radix: 0 }
    }

    pub fn algorithm_id(&self) -> &'static str {
        ALGORITHM_ID
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform on `0..n` for `1 ≤ n ≤ 256`. A 64-bit word accepted below a
    /// multiple of n^k is read as k independent base-n digits, so one word
    /// serves many walk steps.
    #[inline]
    pub fn small_uniform(&mut self, n: u32) -> u32 {
        debug_assert!((1..=256).contains(&n));
        match n {
            6 => self.digit::<6>(),
            8 => self.digit::<8>(),
            4 => self.digit::<4>(),
            10 => self.digit::<10>(),
            12 => self.digit::<12>(),
            _ => self.digit_dyn(n),
        }
    }

    #[inline]
    fn digit<const N: u64>(&mut self) -> u32 {
        if self.radix != N as u32 || self.ndigits == 0 {
            self.refill(N as u32);
        }
        let v = self.digits % N;
        self.digits /= N;
        self.ndigits -= 1;
        v as u32
    }

    fn digit_dyn(&mut self, n: u32) -> u32 {
        if n == 1 {
            return 0;
        }
        if self.radix != n || self.ndigits == 0 {
            self.refill(n);
        }
        let v = self.digits % n as u64;
        self.digits /= n as u64;
        self.ndigits -= 1;
        v as u32
    }

    #[cold]
    fn refill(&mut self, n: u32) {
        let n = n as u128;
        let (mut k, mut pow) = (0u32, 1u128);
        while pow * n <= 1u128 << 64 {
            pow *= n;
            k += 1;
        }
        let limit = (1u128 << 64) / pow * pow;
        loop {
            let w = self.rng.next_u64();
            if (w as u128) < limit {
                self.digits = w;
                self.ndigits = k;
                self.radix = n as u32;
                return;
            }
        }
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("algorithm_id", &ALGORITHM_ID)
            .field("master_seed", &self.master_seed)
            .field("stream_index", &self.stream_index)
            .finish()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A nearest-neighbour path stored as a start site plus step directions.
/// Direction `k` moves along axis `k / 2`, forwards when `k` is even.
#[derive(Clone, PartialEq, Eq)]
pub struct WalkPath {
    start: Point,
    steps: Vec<u8>,
}

impl WalkPath {
    pub fn new(start: Point) -> Self {
        WalkPath { start, steps: Vec::new() }
    }

    pub fn from_sites(sites: &[Point]) -> Result<Self, WalkError> {
        let first = *sites.first().ok_or(WalkError::Empty)?;
        let mut w = WalkPath::new(first);
        for (i, pair) in sites.windows(2).enumerate() {
            let diff = pair[1] - pair[0];
            if diff.l1() != 1 {
                return Err(WalkError::NotAdjacent(i + 1));
            }
            let axis = diff.coords().iter().position(|&v| v != 0).unwrap();
            w.push((2 * axis + usize::from(diff[axis] < 0)) as u8);
        }
        Ok(w)
    }

    #[inline]
    pub fn push(&mut self, dir: u8) {
        self.steps.push(dir);
    }

    pub fn start(&self) -> Point {
        self.start
    }

    /// Number of sites (steps + 1).
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[u8] {
        &self.steps
    }

    pub fn sites(&self) -> Sites<'_> {
        Sites { cur: self.start, steps: self.steps.iter(), first: true }
    }

    pub fn to_vec(&self) -> Vec<Point> {
        self.sites().collect()
    }

    pub fn last(&self) -> Point {
        self.sites().last().unwrap()
    }

    /// The same sites in reverse order.
    pub fn reversed(&self) -> WalkPath {
        let mut w = WalkPath::new(self.last());
        for &s in self.steps.iter().rev() {
            w.push(s ^ 1);
        }
        w
    }
}

impl fmt::Debug for WalkPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.sites()).finish()
    }
}

pub struct Sites<'a> {
    cur: Point,
    steps: std::slice::Iter<'a, u8>,
    first: bool,
}

impl Iterator for Sites<'_> {
    type Item = Point;
    #[inline]
    fn next(&mut self) -> Option<Point> {
        if self.first {
            self.first = false;
            return Some(self.cur);
        }
        let s = *self.steps.next()?;
        self.cur = apply_step(&self.cur, s);
        Some(self.cur)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.steps.len() + usize::from(self.first);
        (n, Some(n))
    }
}

#[inline]
pub fn apply_step(x: &Point, dir: u8) -> Point {
    let axis = (dir >> 1) as usize;
    x.shifted(axis, if dir & 1 == 0 { 1 } else { -1 })
}

#[inline]
fn random_step(x: &Point, rng: &mut RngStream) -> (Point, u8) {
    let dir = rng.small_uniform(2 * x.dim() as u32) as u8;
    (apply_step(x, dir), dir)
}

/// Which stopping time ends the walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// T_K: first n ≥ 0 with X_n ∉ K.
    Exit,
    /// H_K: first n ≥ 0 with X_n ∈ K.
    Hit,
    /// H̃_K: first n ≥ 1 with X_n ∈ K.
    Return,
    /// Run until the step budget is used up.
    Budget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Exited,
    Hit,
    Returned,
    BudgetExhausted,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Exited => "exited",
            Termination::Hit => "hit",
            Termination::Returned => "returned",
            Termination::BudgetExhausted => "budget_exhausted",
        }
    }
}

/// Runs a walk from `start` until `rule` fires for `k`, or `budget` steps
/// have been taken. The terminal site is always included in the path.
pub fn walk_until<K: Region + ?Sized>(
    start: Point,
    rule: StopRule,
    k: &K,
    budget: u64,
    rng: &mut RngStream,
) -> (WalkPath, Termination) {
    let mut path = WalkPath::new(start);
    match rule {
        StopRule::Exit if !k.contains(&start) => return (path, Termination::Exited),
        StopRule::Hit if k.contains(&start) => return (path, Termination::Hit),
        _ => {}
    }
    let mut x = start;
    for _ in 0..budget {
        let (y, dir) = random_step(&x, rng);
        path.push(dir);
        x = y;
        let inside = k.contains(&x);
        match rule {
            StopRule::Exit if !inside => return (path, Termination::Exited),
            StopRule::Hit if inside => return (path, Termination::Hit),
            StopRule::Return if inside => return (path, Termination::Returned),
            _ => {}
        }
    }
    (path, Termination::BudgetExhausted)
}

/// R = max(50, 20 · window radius).
pub fn default_truncation(window_radius: i64) -> i64 {
    50.max(20 * window_radius)
}

/// Steps that certainly neither reach `envelope` nor leave `trunc`.
#[inline]
fn free_steps(cur: &Point, envelope: &Option<(Point, Point)>, trunc: &LatticeBox) -> i64 {
    let out = trunc.radius - trunc.center.linf_dist(cur);
    match envelope {
        Some((lo, hi)) => out.min(cur.rect_distance(lo, hi) - 1).max(0),
        None => 0,
    }
}

/// One attempt at escaping: step off `x`, then walk until either `k` is
/// re-entered (failure) or the truncation box is left (success).
#[inline]
pub(crate) fn escape_attempt<K: Region + ?Sized>(
    x: Point,
    k: &K,
    trunc: &LatticeBox,
    rng: &mut RngStream,
    mut path: Option<&mut WalkPath>,
) -> bool {
    let envelope = k.envelope();
    let n = 2 * x.dim() as u32;
    let mut cur = x;
    loop {
        for _ in 0..free_steps(&cur, &envelope, trunc) {
            let dir = rng.small_uniform(n) as u8;
            cur.step_mut(dir);
            if let Some(p) = path.as_deref_mut() {
                p.push(dir);
            }
        }
        let dir = rng.small_uniform(n) as u8;
        cur.step_mut(dir);
        if let Some(p) = path.as_deref_mut() {
            p.push(dir);
        }
        if k.contains(&cur) {
            return false;
        }
        if !trunc.contains(&cur) {
            return true;
        }
    }
}

/// Unconditioned walk from `x` until it leaves the truncation box.
pub fn walk_to_exit(x: Point, trunc: &LatticeBox, rng: &mut RngStream) -> WalkPath {
    let n = 2 * x.dim() as u32;
    let mut path = WalkPath::new(x);
    let mut cur = x;
    loop {
        let slack = trunc.radius - trunc.center.linf_dist(&cur);
        if slack < 0 {
            return path;
        }
        for _ in 0..=slack {
            let dir = rng.small_uniform(n) as u8;
            cur.step_mut(dir);
            path.push(dir);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EscapeEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub truncation_radius: i64,
    /// cap(K)/R^{d−2} with cap(K) replaced by its upper bound |∂K|.
    pub truncation_bias_bound: f64,
}

fn check_truncation(k: &PointSet, radius: i64) -> Result<(), WalkError> {
    let set_radius = k.linf_radius();
    if radius < 2 * set_radius || radius < 1 {
        return Err(WalkError::TruncationTooSmall { radius, set_radius });
    }
    Ok(())
}

/// Monte Carlo estimate of P_x[H̃_K = ∞], with escape meaning exit of
/// B(0, R) before returning to K.
pub fn escape_probability_mc(
    x: Point,
    k: &PointSet,
    truncation_radius: i64,
    n_samples: u64,
    rng: &mut RngStream,
) -> Result<EscapeEstimate, WalkError> {
    if !k.contains(&x) {
        return Err(WalkError::StartOutside(x));
    }
    check_truncation(k, truncation_radius)?;
    let dense = DenseSet::from_set(k);
    let trunc = LatticeBox::ball(x.dim(), truncation_radius);
    let mut hits = 0u64;
    for _ in 0..n_samples {
        if escape_attempt(x, &dense, &trunc, rng, None) {
            hits += 1;
        }
    }
    let n = n_samples.max(1) as f64;
    let p = hits as f64 / n;
    let cap_upper = boundary(k).len() as f64;
    Ok(EscapeEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        n_samples,
        truncation_radius,
        truncation_bias_bound: cap_upper / (truncation_radius as f64).powi(x.dim() as i32 - 2),
    })
}

#[derive(Clone, Debug)]
pub struct NoReturnWalk {
    pub path: WalkPath,
    pub attempts: u64,
}

/// Rejection sampler for the walk from `x` conditioned never to return to
/// K: the first attempt that leaves B(0, R) without re-entering K.
pub fn sample_no_return_walk(
    x: Point,
    k: &PointSet,
    truncation_radius: i64,
    max_attempts: u64,
    rng: &mut RngStream,
) -> Result<NoReturnWalk, WalkError> {
    if !k.contains(&x) {
        return Err(WalkError::StartOutside(x));
    }
    let mut outside = false;
    crate::lattice::for_each_neighbor(&x, |y| outside |= !k.contains(&y));
    if !outside {
        return Err(WalkError::StartNotOnBoundary(x));
    }
    check_truncation(k, truncation_radius)?;
    let dense = DenseSet::from_set(k);
    let trunc = LatticeBox::ball(x.dim(), truncation_radius);
    no_return_walk(x, &dense, &trunc, max_attempts, rng)
}

pub(crate) fn no_return_walk<K: Region + ?Sized>(
    x: Point,
    k: &K,
    trunc: &LatticeBox,
    max_attempts: u64,
    rng: &mut RngStream,
) -> Result<NoReturnWalk, WalkError> {
    let mut path = WalkPath::new(x);
    for attempt in 1..=max_attempts {
        path.steps.clear();
        if escape_attempt(x, k, trunc, rng, Some(&mut path)) {
            return Ok(NoReturnWalk { path, attempts: attempt });
        }
    }
    Err(WalkError::RejectionCapExceeded(max_attempts))
}

#[derive(Serialize, Deserialize)]
struct WalkRecord {
    sites: Vec<Point>,
    tag: String,
}

/// `{"sites": [[...], ...], "tag": "..."}` followed by a newline.
pub fn write_walk_ndjson<W: Write>(path: &WalkPath, tag: &str, mut w: W) -> std::io::Result<()> {
    let rec = WalkRecord { sites: path.to_vec(), tag: tag.to_string() };
    serde_json::to_writer(&mut w, &rec)?;
    w.write_all(b"\n")
}

/// Uniform on (0, 1]; used for labels so that zero is never drawn.
pub(crate) fn open_closed_unit(rng: &mut RngStream) -> f64 {
    1.0 - rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{neighbors, outer_boundary};

    #[test]
    fn hit_surrounding_set_takes_one_step() {
        let start = Point::origin(3);
        let k: PointSet = neighbors(&start, false).into_iter().collect();
        let mut rng = RngStream::new(1, 0);
        let (path, tag) = walk_until(start, StopRule::Hit, &k, 100, &mut rng);
        assert_eq!(tag, Termination::Hit);
        assert_eq!(path.len(), 2);
    }

    #[test]
    fn exit_of_single_site_box() {
        let start = Point::new(&[4, 0, -1]).unwrap();
        let b = LatticeBox::new(start, 0).unwrap();
        let mut rng = RngStream::new(2, 0);
        let (path, tag) = walk_until(start, StopRule::Exit, &b, 100, &mut rng);
        assert_eq!(tag, Termination::Exited);
        assert_eq!(path.len(), 2);
        assert!(outer_boundary(&b.to_set()).contains(&path.last()));
    }

    #[test]
    fn budget_is_reported() {
        let b = LatticeBox::ball(3, 1000);
        let mut rng = RngStream::new(3, 0);
        let (path, tag) = walk_until(Point::origin(3), StopRule::Exit, &b, 10, &mut rng);
        assert_eq!(tag, Termination::BudgetExhausted);
        assert_eq!(path.n_steps(), 10);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: Vec<u64> = (0..4).map(|_| RngStream::new(7, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut s0 = RngStream::new(7, 0);
        let mut s1 = RngStream::new(7, 1);
        assert_ne!(s0.next_u64(), s1.next_u64());
    }

    #[test]
    fn small_uniform_covers_range() {
        let mut rng = RngStream::new(9, 0);
        let mut seen = [0u32; 6];
        for _ in 0..6000 {
            seen[rng.small_uniform(6) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850 && c < 1150), "{seen:?}");
    }

    #[test]
    fn path_roundtrip_and_reverse() {
        let mut rng = RngStream::new(11, 0);
        let b = LatticeBox::ball(3, 3);
        let (path, _) = walk_until(Point::origin(3), StopRule::Exit, &b, 1000, &mut rng);
        let sites = path.to_vec();
        assert_eq!(WalkPath::from_sites(&sites).unwrap(), path);
        let mut rev = sites.clone();
        rev.reverse();
        assert_eq!(path.reversed().to_vec(), rev);
    }

    #[test]
    fn rejects_small_truncation() {
        let k = LatticeBox::ball(3, 5).to_set();
        let mut rng = RngStream::new(0, 0);
        let err = escape_probability_mc(Point::splat(3, 5), &k, 5, 10, &mut rng).unwrap_err();
        assert!(matches!(err, WalkError::TruncationTooSmall { .. }));
    }

    #[test]
    fn walk_ndjson_shape() {
        let w = WalkPath::from_sites(&[Point::origin(3), Point::unit(3, 1)]).unwrap();
        let mut buf = Vec::new();
        write_walk_ndjson(&w, "hit", &mut buf).unwrap();
        assert_eq!(std::str::from_utf8(&buf).unwrap(), "{\"sites\":[[0,0,0],[0,1,0]],\"tag\":\"hit\"}\n");
    }
}
