#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use interlace::clusters::VacancyField;
use interlace::lattice::{LatticeBox, Point, PointSet, Region};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random cover of B_m \ B_{n-1}: a noisy level set of a random linear or
/// radial field splits the annulus, and a random fraction of sites goes to both.
pub fn random_partition(rng: &mut ChaCha8Rng, n: i64, m: i64) -> (PointSet, PointSet) {
    let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let radial = rng.random_bool(0.3);
    let t = rng.random_range(-2.0..2.0);
    let noise = rng.random_range(0.0..3.0);
    let both = rng.random_range(0.0..0.4);
    let (mut u, mut v) = (PointSet::new(), PointSet::new());
    for x in LatticeBox::ball(3, m).points().filter(|x| x.linf() >= n) {
        let f = if radial {
            (0..3).map(|i| (x[i] as f64 - 4.0 * w[i]).powi(2)).sum::<f64>().sqrt() - 5.0 - t
        } else {
            (0..3).map(|i| w[i] * x[i] as f64).sum::<f64>() - t
        };
        let f = f + noise * rng.random_range(-1.0..1.0);
        if rng.random_bool(both) {
            u.insert(x);
            v.insert(x);
        } else if f < 0.0 {
            u.insert(x);
        } else {
            v.insert(x);
        }
    }
    (u, v)
}

/// Labels i.i.d. exponential with a random rate, optionally overlaid with
/// occupied random boxes so that vacancy is spatially correlated.
pub fn random_field(rng: &mut ChaCha8Rng, radius: i64) -> VacancyField {
    let domain = LatticeBox::ball(3, radius);
    let rate = rng.random_range(0.3..2.2);
    let labels: Vec<f64> = domain.points().map(|_| -rng.random::<f64>().ln() / rate).collect();
    let mut field = VacancyField::from_labels(domain, labels);
    if rng.random_bool(0.3) {
        for _ in 0..rng.random_range(1..12) {
            let c: Vec<i64> = (0..3).map(|_| rng.random_range(-radius..=radius)).collect();
            let b = LatticeBox::new(Point::new(&c).unwrap(), rng.random_range(0..3)).unwrap();
            let level = rng.random_range(0.0..1.5);
            for x in b.points().filter(|x| domain.contains(x)) {
                field.set_label(&x, level);
            }
        }
    }
    field
}

/// Flat index of x in B_radius, or None outside.
fn slot(x: &Point, radius: i64) -> Option<usize> {
    let w = 2 * radius + 1;
    if x.linf() > radius {
        return None;
    }
    Some((((x[0] + radius) * w + x[1] + radius) * w + x[2] + radius) as usize)
}

/// BFS over nearest neighbours from `start`, restricted to `open` sites of
/// B_radius; marks reached slots in `seen` and returns them.
fn bfs(start: Point, radius: i64, seen: &mut [bool], open: &impl Fn(&Point) -> bool) -> Vec<Point> {
    seen[slot(&start, radius).unwrap()] = true;
    let mut comp = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(y) = queue.pop_front() {
        for i in 0..3 {
            for s in [-1, 1] {
                let z = y.shifted(i, s);
                if let Some(k) = slot(&z, radius) {
                    if !seen[k] && open(&z) {
                        seen[k] = true;
                        comp.push(z);
                        queue.push_back(z);
                    }
                }
            }
        }
    }
    comp
}

/// Nearest-neighbour clusters of {x ∈ B_radius : label(x) > u}, by BFS.
pub fn bfs_clusters(field: &VacancyField, u: f64, radius: i64) -> Vec<Vec<Point>> {
    let open = |x: &Point| field.label(x) > u;
    let w = (2 * radius + 1) as usize;
    let mut seen = vec![false; w * w * w];
    let mut out = Vec::new();
    for x in LatticeBox::ball(3, radius).points() {
        if seen[slot(&x, radius).unwrap()] || !open(&x) {
            continue;
        }
        out.push(bfs(x, radius, &mut seen, &open));
    }
    out
}

pub fn linf_diameter(c: &[Point]) -> i64 {
    (0..3).map(|i| c.iter().map(|p| p[i]).max().unwrap() - c.iter().map(|p| p[i]).min().unwrap()).max().unwrap()
}

/// Cluster id of each slot of B_radius.
fn cluster_map(clusters: &[Vec<Point>], radius: i64) -> Vec<usize> {
    let w = (2 * radius + 1) as usize;
    let mut ids = vec![usize::MAX; w * w * w];
    for (k, c) in clusters.iter().enumerate() {
        for p in c {
            ids[slot(p, radius).unwrap()] = k;
        }
    }
    ids
}

pub fn oracle_exist(f: &VacancyField, r: i64, u: f64) -> bool {
    bfs_clusters(f, u, r).iter().any(|c| 5 * linf_diameter(c) >= r)
}

pub fn oracle_unique(f: &VacancyField, r: i64, u: f64, v: f64) -> bool {
    let outer = cluster_map(&bfs_clusters(f, v, 2 * r), 2 * r);
    let ids: HashSet<usize> = bfs_clusters(f, u, r)
        .iter()
        .filter(|c| 10 * linf_diameter(c) >= r)
        .map(|c| outer[slot(&c[0], 2 * r).unwrap()])
        .collect();
    ids.len() <= 1
}

fn crossing(c: &[Point], inner: i64, outer: i64) -> bool {
    c.iter().any(|p| p.linf() <= inner) && c.iter().any(|p| p.linf() == outer)
}

pub fn oracle_uc(f: &VacancyField, m: i64, u: f64, v: f64) -> bool {
    if !bfs_clusters(f, u, 6 * m).iter().any(|c| crossing(c, m, 6 * m)) {
        return false;
    }
    let outer = cluster_map(&bfs_clusters(f, v, 4 * m), 4 * m);
    let ids: HashSet<usize> = bfs_clusters(f, u, 4 * m)
        .iter()
        .filter(|c| crossing(c, 2 * m, 4 * m))
        .map(|c| outer[slot(&c[0], 4 * m).unwrap()])
        .collect();
    ids.len() <= 1
}

pub fn oracle_disconnect(f: &VacancyField, r: i64, m: i64, u: f64) -> bool {
    !bfs_clusters(f, u, m).iter().any(|c| crossing(c, r, m))
}

/// U_i(η_j) for all i, from BFS: ground clusters of V^u ∩ B_{4M} touching
/// ∂B_{4M}, grouped by connectivity of η_j in the whole domain.
pub fn oracle_u_counts(f: &VacancyField, m: i64, j: usize, u: f64, delta: f64) -> Vec<usize> {
    let top = (m as f64).sqrt().floor() as usize;
    let rad = |i: usize| 4 * m - ((i * i) as f64 * m as f64).sqrt().floor() as i64;
    let dom = f.domain().radius;
    let inner = rad(2 * j);
    let eta = |x: &Point| {
        let level = if x.linf() <= inner { u } else { u - delta };
        f.label(x) > level
    };
    let w = (2 * dom + 1) as usize;
    let ground: Vec<Vec<Point>> = bfs_clusters(f, u, 4 * m).into_iter().filter(|c| c.iter().any(|p| p.linf() == 4 * m)).collect();
    // η-class of each ground cluster, by BFS from its first site
    let mut class = vec![usize::MAX; ground.len()];
    for g in 0..ground.len() {
        if class[g] != usize::MAX {
            continue;
        }
        let mut seen = vec![false; w * w * w];
        bfs(ground[g][0], dom, &mut seen, &eta);
        for h in g..ground.len() {
            if seen[slot(&ground[h][0], dom).unwrap()] {
                class[h] = g;
            }
        }
    }
    (0..=top)
        .map(|i| {
            let r = rad(2 * i);
            let hit: HashSet<usize> = (0..ground.len()).filter(|&g| ground[g].iter().any(|p| p.linf() <= r)).map(|g| class[g]).collect();
            hit.len()
        })
        .collect()
}
