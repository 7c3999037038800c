//! Green function, equilibrium measure and capacity of small sets.
//!
//! G(0, x) is evaluated from its Fourier representation on the torus. The
//! integral over the last coordinate is done in closed form, the remaining
//! (d−1)-dimensional integral by the periodic trapezoid rule on grids of
//! doubling size, followed by Richardson extrapolation in the powers
//! h^{d−2}, h^{d−1}, h^d, h^{d+2}, ... produced by the 1/|k| singularity at
//! k = 0 and by leaving that node out of the sum.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::lattice::{boundary, Point, PointSet};
use crate::scalar::Real;

/// Default bound on |K| for the dense solve.
pub const DEFAULT_SIZE_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PotentialError {
    #[error("exact Green function only supported for d = 3, 4 (got {0})")]
    UnsupportedDimension(usize),
    #[error("|x − y|∞ = {dist} exceeds the table radius {radius}")]
    OutOfTable { dist: i64, radius: i64 },
    #[error("table radius {requested} exceeds the limit {limit} for d = {d}")]
    TableTooLarge { d: usize, requested: i64, limit: i64 },
    #[error("set of {size} points exceeds the size cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("singular system at pivot {0}")]
    Singular(usize),
    #[error("ill-conditioned system (condition estimate {0:e})")]
    IllConditioned(f64),
    #[error("negative equilibrium weight {weight:e} at {at}")]
    NegativeWeight { at: Point, weight: f64 },
    #[error("level must be positive, got {0}")]
    BadLevel(f64),
}

/// Largest table radius built on demand, per dimension.
pub fn table_radius_limit(d: usize) -> i64 {
    match d {
        3 => 24,
        4 => 8,
        _ => 0,
    }
}

/// Radius used by [`green_function`] when no larger table exists yet.
pub fn default_table_radius(d: usize) -> i64 {
    match d {
        3 => 12,
        4 => 4,
        _ => 0,
    }
}

/// G(0, x) for all x with |x|∞ ≤ radius, exploiting the symmetry under
/// coordinate permutations and reflections.
#[derive(Debug, Clone)]
pub struct GreenTable {
    d: usize,
    radius: i64,
    values: Vec<f64>,
    error_estimate: f64,
}

/// Quadrature grids: n0 · 2^i points per dimension for i = 0..=levels.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureRule {
    pub n0: usize,
    pub levels: usize,
}

/// Target for the Richardson error estimate of a freshly built table.
pub const QUADRATURE_TARGET: f64 = 1e-9;

fn max_grid(d: usize) -> usize {
    if d == 3 {
        4096
    } else {
        512
    }
}

fn tuples(d: usize, radius: i64) -> Vec<Vec<usize>> {
    fn rec(d: usize, r: usize, lo: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for c in lo..=r {
            cur.push(c);
            rec(d, r, c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, radius as usize, 0, &mut Vec::new(), &mut out);
    out
}

/// Trapezoid sums on the folded grid for every sorted tuple at once.
fn trapezoid_sums(d: usize, radius: i64, n: usize, tups: &[Vec<usize>]) -> Vec<f64> {
    let q = d - 1;
    let r = radius as usize;
    let side = r + 1;
    let half = n / 2;
    let cos_tab: Vec<f64> = (0..=half)
        .flat_map(|j| (0..=r).map(move |c| (2.0 * PI * ((j * c) % n) as f64 / n as f64).cos()))
        .collect();
    let sin2: Vec<f64> = (0..=half).map(|j| 2.0 * (PI * j as f64 / n as f64).sin().powi(2)).collect();
    let weight = |j: usize| if j == 0 || j == half { 1.0 } else { 2.0 };
    // Tuple layout: q quadrature coordinates followed by the analytic one.
    let flat: Vec<usize> = tups.iter().flat_map(|t| t.iter().copied()).collect();
    let mut sums = vec![0.0; tups.len()];
    let mut rho_pow = vec![0.0; side];
    let mut idx = vec![0usize; q];
    let mut rows: Vec<&[f64]> = vec![&cos_tab[..side]; q];
    loop {
        if idx.iter().any(|&j| j != 0) {
            let a1: f64 = idx.iter().map(|&j| sin2[j]).sum();
            let s = (a1 * (a1 + 2.0)).sqrt();
            let rho = 1.0 + a1 - s;
            let w: f64 = idx.iter().map(|&j| weight(j)).product::<f64>() * d as f64 / s;
            rho_pow[0] = w;
            for c in 1..side {
                rho_pow[c] = rho_pow[c - 1] * rho;
            }
            for i in 0..q {
                rows[i] = &cos_tab[idx[i] * side..(idx[i] + 1) * side];
            }
            if q == 2 {
                let (r0, r1) = (rows[0], rows[1]);
                for (t, acc) in flat.chunks_exact(3).zip(sums.iter_mut()) {
                    *acc += rho_pow[t[2]] * r0[t[0]] * r1[t[1]];
                }
            } else if q == 3 {
                let (r0, r1, r2) = (rows[0], rows[1], rows[2]);
                for (t, acc) in flat.chunks_exact(4).zip(sums.iter_mut()) {
                    *acc += rho_pow[t[3]] * r0[t[0]] * r1[t[1]] * r2[t[2]];
                }
            } else {
                for (t, acc) in flat.chunks_exact(d).zip(sums.iter_mut()) {
                    let mut v = rho_pow[t[q]];
                    for i in 0..q {
                        v *= rows[i][t[i]];
                    }
                    *acc += v;
                }
            }
        }
        let mut i = q;
        loop {
            if i == 0 {
                let norm = (n as f64).powi(q as i32);
                return sums.into_iter().map(|s| s / norm).collect();
            }
            i -= 1;
            if idx[i] < half {
                idx[i] += 1;
                break;
            }
            idx[i] = 0;
        }
    }
}

/// Exponents of h in the trapezoid error: d−2, d, d+2, ... from the
/// singular part, plus d−1 from the node at k = 0 that the rule omits.
fn error_powers(d: usize, n: usize) -> Vec<i32> {
    let mut p: Vec<i32> = (0..n).map(|j| (d - 2 + 2 * j) as i32).collect();
    p.push(d as i32 - 1);
    p.sort_unstable();
    p.truncate(n);
    p
}

impl GreenTable {
    /// Adds grid levels until the error estimate drops below
    /// [`QUADRATURE_TARGET`] or the grid limit for `d` is reached.
    pub fn compute(d: usize, radius: i64) -> Result<Self, PotentialError> {
        GreenTable::build(d, radius, 16, 3, max_grid(d))
    }

    pub fn compute_with(d: usize, radius: i64, rule: QuadratureRule) -> Result<Self, PotentialError> {
        GreenTable::build(d, radius, rule.n0, rule.levels, rule.n0 << rule.levels)
    }

    fn build(d: usize, radius: i64, n0: usize, min_levels: usize, n_max: usize) -> Result<Self, PotentialError> {
        if d != 3 && d != 4 {
            return Err(PotentialError::UnsupportedDimension(d));
        }
        let tups = tuples(d, radius);
        let powers = error_powers(d, 32);
        let mut prev_row: Vec<Vec<f64>> = Vec::new();
        let mut level = 0;
        loop {
            let n = n0 << level;
            let mut row = vec![trapezoid_sums(d, radius, n, &tups)];
            for j in 1..=level {
                let f = 2f64.powi(powers[j - 1]) - 1.0;
                let next: Vec<f64> =
                    row[j - 1].iter().zip(&prev_row[j - 1]).map(|(c, p)| c + (c - p) / f).collect();
                row.push(next);
            }
            let error_estimate = if level > 0 {
                row[level].iter().zip(&row[level - 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            let done = (level >= min_levels && error_estimate <= QUADRATURE_TARGET) || 2 * n > n_max;
            if done {
                let side = radius as usize + 1;
                let mut values = vec![f64::NAN; side.pow(d as u32)];
                for (t, v) in tups.iter().zip(&row[level]) {
                    let k = t.iter().fold(0, |acc, &c| acc * side + c);
                    values[k] = *v;
                }
                return Ok(GreenTable { d, radius, values, error_estimate });
            }
            prev_row = row;
            level += 1;
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    /// Largest change between the last two Richardson columns.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    /// G(0, x).
    pub fn at(&self, x: &Point) -> Result<f64, PotentialError> {
        let dist = x.linf();
        if dist > self.radius {
            return Err(PotentialError::OutOfTable { dist, radius: self.radius });
        }
        let mut c: Vec<usize> = x.coords().iter().map(|v| v.unsigned_abs() as usize).collect();
        c.sort_unstable();
        let side = self.radius as usize + 1;
        Ok(self.values[c.iter().fold(0, |acc, &v| acc * side + v)])
    }

    pub fn green(&self, x: &Point, y: &Point) -> Result<f64, PotentialError> {
        self.at(&(*y - *x))
    }
}

fn table_cache() -> &'static Mutex<HashMap<usize, Arc<GreenTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GreenTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared table covering at least `radius`; built once and then frozen.
pub fn green_table(d: usize, radius: i64) -> Result<Arc<GreenTable>, PotentialError> {
    if d != 3 && d != 4 {
        return Err(PotentialError::UnsupportedDimension(d));
    }
    let limit = table_radius_limit(d);
    if radius > limit {
        return Err(PotentialError::TableTooLarge { d, requested: radius, limit });
    }
    let mut cache = table_cache().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(t) = cache.get(&d) {
        if t.radius >= radius {
            return Ok(t.clone());
        }
    }
    let want = radius.max(default_table_radius(d));
    let t = Arc::new(GreenTable::compute(d, want)?);
    cache.insert(d, t.clone());
    Ok(t)
}

/// G(x, y), the expected number of visits to y of the walk started at x.
pub fn green_function(x: &Point, y: &Point) -> Result<f64, PotentialError> {
    let d = x.dim();
    let current = {
        let cache = table_cache().lock().unwrap_or_else(|e| e.into_inner());
        cache.get(&d).map(|t| t.radius).unwrap_or(0)
    };
    green_table(d, current.max(default_table_radius(d)))?.green(x, y)
}

/// LU factorisation with partial pivoting of a dense row-major matrix.
#[derive(Debug, Clone)]
pub struct Lu<F> {
    n: usize,
    a: Vec<F>,
    piv: Vec<usize>,
}

impl<F: Real> Lu<F> {
    pub fn factor(mut a: Vec<F>, n: usize) -> Result<Self, PotentialError> {
        assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == F::zero() {
                return Err(PotentialError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != F::zero() {
                    let (top, bottom) = a.split_at_mut(i * n);
                    let rk = &top[k * n + k + 1..k * n + n];
                    let ri = &mut bottom[k + 1..n];
                    for (x, y) in ri.iter_mut().zip(rk) {
                        *x = *x - f * *y;
                    }
                }
            }
        }
        Ok(Lu { n, a, piv })
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut x: Vec<F> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s = s - self.a[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - self.a[i * n + j] * x[j];
            }
            x[i] = s / self.a[i * n + i];
        }
        x
    }

    /// Solves Aᵀ x = b.
    pub fn solve_transpose(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s = s - self.a[j * n + i] * z[j];
            }
            z[i] = s / self.a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s = s - self.a[j * n + i] * z[j];
            }
            z[i] = s;
        }
        let mut x = vec![F::zero(); n];
        for (i, &p) in self.piv.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Hager's estimate of ‖A⁻¹‖₁.
    pub fn inverse_norm1_estimate(&self) -> F {
        let n = self.n;
        let nf = F::from_usize(n).unwrap();
        let mut x = vec![F::one() / nf; n];
        let mut est = F::zero();
        for _ in 0..5 {
            let y = self.solve(&x);
            let ny = y.iter().fold(F::zero(), |s, v| s + v.abs());
            if ny <= est {
                break;
            }
            est = ny;
            let xi: Vec<F> = y.iter().map(|v| if *v >= F::zero() { F::one() } else { -F::one() }).collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
            let ztx = z.iter().zip(&x).fold(F::zero(), |s, (a, b)| s + *a * *b);
            if zmax <= ztx {
                break;
            }
            x = vec![F::zero(); n];
            x[jmax] = F::one();
        }
        est
    }
}

fn norm1<F: Real>(a: &[F], n: usize) -> F {
    (0..n)
        .map(|j| (0..n).fold(F::zero(), |s, i| s + a[i * n + j].abs()))
        .fold(F::zero(), |m, v| if v > m { v } else { m })
}

/// e_K together with cap(K) = Σ e_K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumMeasure<F> {
    pub support: Vec<Point>,
    pub weights: Vec<F>,
    pub total: F,
    pub condition_estimate: F,
    /// max over x ∈ K of |Σ_y G(x,y) e(y) − 1|.
    pub residual: F,
}

impl<F: Real> EquilibriumMeasure<F> {
    pub fn empty() -> Self {
        EquilibriumMeasure {
            support: Vec::new(),
            weights: Vec::new(),
            total: F::zero(),
            condition_estimate: F::one(),
            residual: F::zero(),
        }
    }

    pub fn capacity(&self) -> F {
        self.total
    }

    pub fn weight(&self, x: &Point) -> F {
        match self.support.binary_search(x) {
            Ok(i) => self.weights[i],
            Err(_) => F::zero(),
        }
    }

    /// Index into `support` for a uniform draw `v ∈ [0, 1)`, proportional to the weights.
    pub fn pick(&self, v: f64) -> usize {
        let target = v * self.total.to_f64_lossy();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.to_f64_lossy();
            if target < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PotentialOptions {
    pub size_cap: usize,
    /// Systems whose condition estimate times machine epsilon exceeds this are refused.
    pub max_relative_error: f64,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        PotentialOptions { size_cap: DEFAULT_SIZE_CAP, max_relative_error: 1e-3 }
    }
}

/// Solves Σ_y G(x,y) e(y) = 1 on K with e supported on ∂K.
///
/// The unknowns are restricted to ∂K; the residual is then checked on the
/// whole of K, where it must vanish as well.
pub fn equilibrium_measure<F: Real>(k: &PointSet) -> Result<EquilibriumMeasure<F>, PotentialError> {
    equilibrium_measure_with(k, &PotentialOptions::default())
}

pub fn equilibrium_measure_with<F: Real>(
    k: &PointSet,
    opts: &PotentialOptions,
) -> Result<EquilibriumMeasure<F>, PotentialError> {
    if k.is_empty() {
        return Ok(EquilibriumMeasure::empty());
    }
    if k.len() > opts.size_cap {
        return Err(PotentialError::TooLarge { size: k.len(), cap: opts.size_cap });
    }
    let d = k.dim().unwrap();
    let table = green_table(d, k.diameter())?;
    let support: Vec<Point> = boundary(k).into_iter().collect();
    let n = support.len();
    let mut a = vec![F::zero(); n * n];
    for (i, x) in support.iter().enumerate() {
        for (j, y) in support.iter().enumerate().skip(i) {
            let g = F::from_f64_lossy(table.green(x, y)?);
            a[i * n + j] = g;
            a[j * n + i] = g;
        }
    }
    let anorm = norm1(&a, n);
    let lu = Lu::factor(a, n)?;
    let cond = anorm * lu.inverse_norm1_estimate();
    if cond.to_f64_lossy() * F::epsilon().to_f64_lossy() > opts.max_relative_error {
        return Err(PotentialError::IllConditioned(cond.to_f64_lossy()));
    }
    let mut weights = lu.solve(&vec![F::one(); n]);
    let tol = 1e3 * F::epsilon().to_f64_lossy() * cond.to_f64_lossy();
    for (x, w) in support.iter().zip(weights.iter_mut()) {
        let wf = w.to_f64_lossy();
        if wf < -tol {
            return Err(PotentialError::NegativeWeight { at: *x, weight: wf });
        }
        if wf < 0.0 {
            *w = F::zero();
        }
    }
    let mut residual = 0.0f64;
    for x in k {
        let mut s = 0.0;
        for (y, w) in support.iter().zip(&weights) {
            s += table.green(x, y)? * w.to_f64_lossy();
        }
        residual = residual.max((s - 1.0).abs());
    }
    let total = weights.iter().fold(F::zero(), |s, w| s + *w);
    Ok(EquilibriumMeasure { support, weights, total, condition_estimate: cond, residual: F::from_f64_lossy(residual) })
}

pub fn capacity<F: Real>(k: &PointSet) -> Result<F, PotentialError> {
    Ok(equilibrium_measure::<F>(k)?.total)
}

/// P[K ⊆ V^u] = exp(−u · cap(K)).
pub fn vacancy_probability<F: Real>(k: &PointSet, u: F) -> Result<F, PotentialError> {
    if !(u > F::zero()) {
        return Err(PotentialError::BadLevel(u.to_f64_lossy()));
    }
    let cap = capacity::<F>(k)?;
    Ok((-u * cap).exp())
}

/// Row of the capacity report.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityRecord {
    pub set_id: String,
    pub n_points: usize,
    pub capacity: f64,
    pub condition_estimate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeBox;

    #[test]
    fn lu_solves_small_system() {
        let a = vec![4.0, 1.0, 2.0, 1.0, 3.0, 0.0, 2.0, 0.0, 5.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((s - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let xt = lu.solve_transpose(&[1.0, 0.0, 0.0]);
        let back: f64 = (0..3).map(|j| a[j * 3] * xt[j]).sum();
        assert!((back - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(matches!(Lu::<f64>::factor(a, 2), Err(PotentialError::Singular(_))));
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        assert_eq!(capacity::<f64>(&PointSet::new()).unwrap(), 0.0);
        assert_eq!(vacancy_probability::<f64>(&PointSet::new(), 3.0).unwrap(), 1.0);
    }

    #[test]
    fn table_rejects_far_arguments() {
        let t = GreenTable::compute(3, 2).unwrap();
        let far = Point::new(&[3, 0, 0]).unwrap();
        assert!(matches!(t.at(&far), Err(PotentialError::OutOfTable { .. })));
    }

    #[test]
    fn unsupported_dimension() {
        let x = Point::origin(5);
        assert_eq!(green_function(&x, &x), Err(PotentialError::UnsupportedDimension(5)));
    }

    #[test]
    fn single_point_measure() {
        let k: PointSet = [Point::origin(3)].into_iter().collect();
        let e = equilibrium_measure::<f64>(&k).unwrap();
        let g0 = green_function(&Point::origin(3), &Point::origin(3)).unwrap();
        assert!((e.total - 1.0 / g0).abs() < 1e-14);
        let b = LatticeBox::ball(3, 1).to_set();
        let eb = equilibrium_measure::<f64>(&b).unwrap();
        assert!(eb.total > e.total);
        assert_eq!(eb.weight(&Point::origin(3)), 0.0);
    }
}
