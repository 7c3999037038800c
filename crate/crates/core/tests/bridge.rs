use interlace::bridge::*;
use interlace::lattice::{Point, PointSet, Tube};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(c: &[i64]) -> Point {
    Point::new(c).unwrap()
}

/// The three clause families of the one-dimensional claim, checked directly.
fn claim_clauses(big_r: f64, r: f64, xi: f64, iv: &[(f64, f64)]) -> Result<(), String> {
    let g = r.powf(xi);
    let tol = 1e-9 * big_r.max(1.0);
    let k = iv.len();
    if k == 0 || k as f64 > 1.0 + big_r / r {
        return Err(format!("k = {k}"));
    }
    let left = iv[0].0;
    let right = big_r - iv[k - 1].1;
    for gap in [left, right] {
        if gap < 2.0 * g - tol || gap > 7.0 * g + tol {
            return Err(format!("end gap {gap} outside [{}, {}]", 2.0 * g, 7.0 * g));
        }
    }
    for w in iv.windows(2) {
        if ((w[1].0 - w[0].1) - 2.0 * g).abs() > tol {
            return Err(format!("internal gap {}", w[1].0 - w[0].1));
        }
    }
    for &(a, b) in iv {
        if b - a < g - tol || b - a > r + tol {
            return Err(format!("length {} outside [{g}, {r}]", b - a));
        }
    }
    let total: f64 = iv.iter().map(|(a, b)| b - a).sum::<f64>() + left + right + 2.0 * g * (k - 1) as f64;
    if total > big_r + tol {
        return Err(format!("lengths and gaps add to {total} > {big_r}"));
    }
    Ok(())
}

#[test]
fn claim_example_and_boundary() {
    let iv = interval_bridge(100.0, 25.0, 0.6).unwrap();
    assert!(iv.len() <= 5);
    claim_clauses(100.0, 25.0, 0.6, &iv).unwrap();
    let iv = interval_bridge(400.0, 100.0, 0.6).unwrap();
    claim_clauses(400.0, 100.0, 0.6, &iv).unwrap();
}

#[test]
fn claim_rejects_below_floor() {
    assert!(interval_bridge(3.0, 0.5, 0.6).is_err());
    assert!(interval_bridge(1000.0, claim_floor(0.6) * 0.99, 0.6).is_err());
    assert!(interval_bridge(100.0, 26.0, 0.6).is_err());
}

proptest! {
    #[test]
    fn claim_clauses_hold(xi in 0.51f64..0.95, t in 0.0f64..1.0, big_r in 4.0f64..1e5) {
        let floor = claim_floor(xi);
        prop_assume!(4.0 * floor <= big_r);
        let r = floor + t * (big_r / 4.0 - floor);
        let iv = interval_bridge(big_r, r, xi).unwrap();
        prop_assert!(claim_clauses(big_r, r, xi, &iv).is_ok(), "{:?}", claim_clauses(big_r, r, xi, &iv));
    }
}

#[test]
fn coarse_path_example() {
    let t = Tube::new(p(&[0, 0, 0]), 0, 64, 0).unwrap();
    let yc = p(&[-64, 5, -17]);
    let yd = p(&[64, -30, 40]);
    let path = coarse_path(&t, &yc, &yd, 16.0, 16.0).unwrap();
    path.check(16.0).unwrap();
    assert!(path.boxes.len() <= 120);
    assert_eq!(path.max_level, 6);
    // end boxes have side at most s/16
    assert!(path.boxes[0].side(64.0) <= 1.0);
}

fn anchors(rng: &mut ChaCha8Rng, l: f64, n: f64) -> (Vec<f64>, Vec<f64>) {
    let mut yc = vec![-l];
    let mut yd = vec![n + l];
    for _ in 1..3 {
        yc.push(rng.random_range(-l..=l).round());
        yd.push(rng.random_range(-l..=l).round());
    }
    (yc, yd)
}

#[test]
fn coarse_path_rounds_keep_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let l = rng.random_range(16..=512) as f64;
        let n = rng.random_range(0..=3 * l as i64) as f64;
        let s = rng.random_range(2.0..=l);
        let (yc, yd) = anchors(&mut rng, l, n);
        let path = coarse_path_normalized(l, n, &yc, &yd, s, 16.0).unwrap();
        for (k, round) in path.rounds.iter().enumerate() {
            check_round(round, k as u32, l, n, &yc, &yd).unwrap();
        }
        path.check(s).unwrap();
        assert!(path.boxes[0].side(l) <= s / 16.0 + 1e-9);
        assert!(path.boxes.last().unwrap().side(l) <= s / 16.0 + 1e-9);
    }
}

#[test]
fn coarse_path_rejects_bad_input() {
    let t = Tube::new(p(&[0, 0, 0]), 0, 8, 0).unwrap();
    assert!(coarse_path(&t, &p(&[-8, 0, 0]), &p(&[8, 0, 0]), 16.0, 16.0).is_err());
    assert!(coarse_path(&t, &p(&[-7, 0, 0]), &p(&[8, 0, 0]), 4.0, 16.0).is_err());
}

#[test]
fn specialized_bridge_validates() {
    for xi in [0.55, 0.6, 0.75] {
        let s = default_s_floor(xi);
        for k in 6..=12 {
            let l = 1i64 << k;
            if (l as f64) < s {
                continue;
            }
            for n in [0, l / 3, 2 * l] {
                let t = Tube::new(p(&[3, -2, 7]), 1, l, n).unwrap();
                let b = specialized_bridge(&t, &BridgeParams::new(s, xi)).unwrap();
                let rep = validate_bridge(&b, &Anchor::left_face(&t), &Anchor::right_face(&t));
                assert!(rep.all_pass(), "ξ = {xi}, L = {l}, N = {n}: {:?}", rep.first_failure());
                assert!((b.s_prime - s.sqrt() / 100.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn specialized_depth_against_formula() {
    // J − 1 families of intervals, against (log 1/ξ)^{−1} log log 10L
    for xi in [0.55, 0.6, 0.75] {
        let s = default_s_floor(xi);
        for k in 6..=12 {
            let l = 1i64 << k;
            let t = Tube::new(p(&[0, 0, 0]), 0, l, l).unwrap();
            let b = specialized_bridge(&t, &BridgeParams::new(s, xi)).unwrap();
            let bound = (10.0 * l as f64).ln().ln() / (1.0 / xi).ln();
            assert!(((b.depth() - 1) as f64) <= bound, "ξ = {xi}, L = {l}: J = {} vs {bound:.2}", b.depth());
        }
    }
}

#[test]
fn interval_families_grow_slowly() {
    for (len, r1, s, xi) in [(3000.0, 500.0, 32.0, 0.6), (5000.0, 1000.0, 48.0, 0.75), (2048.0, 512.0, 32.0, 0.55)] {
        let fams = interval_families(len, r1, s, xi).unwrap();
        for w in fams.windows(2) {
            assert!(w[1].len() <= 8 * w[0].len());
        }
    }
}

#[test]
fn degenerate_bridge_is_one_hole() {
    let t = Tube::new(p(&[0, 0, 0]), 2, 80, 10).unwrap();
    let c: PointSet = [p(&[0, 0, 0]), p(&[1, 0, 0])].into_iter().collect();
    let d: PointSet = [p(&[5, 3, 0])].into_iter().collect();
    let b = general_bridge(&c, &d, &t, &BridgeParams::new(32.0, 0.6)).unwrap();
    assert_eq!(b.depth(), 1);
    assert_eq!(b.holes().len(), 1);
    assert_eq!(b.holes()[0].radius, 32);
}

#[test]
fn general_bridge_preconditions() {
    let t = Tube::new(p(&[0, 0, 0]), 0, 80, 10).unwrap();
    let c: PointSet = [p(&[0, 0, 0])].into_iter().collect();
    let far: PointSet = [p(&[500, 0, 0])].into_iter().collect();
    let prm = BridgeParams::new(32.0, 0.6);
    assert_eq!(general_bridge(&c, &c, &t, &prm), Err(BridgeError::NotDisjoint(p(&[0, 0, 0]))));
    assert_eq!(general_bridge(&c, &far, &t, &prm), Err(BridgeError::MissesTube("D")));
    let thin = Tube::new(p(&[0, 0, 0]), 0, 40, 10).unwrap();
    let d: PointSet = [p(&[30, 0, 0])].into_iter().collect();
    assert!(matches!(general_bridge(&c, &d, &thin, &prm), Err(BridgeError::Parameters(_))));
    assert!(matches!(general_bridge(&c, &d, &t, &BridgeParams::new(8.0, 0.6)), Err(BridgeError::Parameters(_))));
}

#[test]
fn general_bridge_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..120 {
        let xi = [0.55, 0.6, 0.75][i % 3];
        let s = default_s_floor(xi);
        let l = rng.random_range((2.0 * s) as i64..=512);
        let inst = fuzz_instance(&mut rng, l, s);
        let b = general_bridge(&inst.c, &inst.d, &inst.tube, &BridgeParams::new(s, xi)).unwrap();
        let rep = validate_bridge(&b, &Anchor::Sites(inst.c.clone()), &Anchor::Sites(inst.d.clone()));
        assert!(rep.all_pass());
        assert!(rep.m_required <= b.m);
    }
}

#[test]
fn asymptotic_constants_at_large_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for xi in [0.55, 0.6, 0.75] {
        let s = 65536.0;
        for _ in 0..4 {
            let l = rng.random_range(131072..=262144);
            let inst = fuzz_instance(&mut rng, l, s);
            let b = general_bridge(&inst.c, &inst.d, &inst.tube, &BridgeParams::asymptotic(s, xi, 100.0)).unwrap();
            assert!(b.depth() >= 1);
        }
    }
}

#[test]
fn bridges_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inst = fuzz_instance(&mut rng, 300, 32.0);
    let prm = BridgeParams::new(32.0, 0.6);
    let a = general_bridge(&inst.c, &inst.d, &inst.tube, &prm).unwrap();
    let b = general_bridge(&inst.c, &inst.d, &inst.tube, &prm).unwrap();
    assert_eq!(serde_json::to_string(&a.to_json()).unwrap(), serde_json::to_string(&b.to_json()).unwrap());
}

#[test]
fn json_shape() {
    let t = Tube::new(p(&[0, 0, 0]), 0, 64, 0).unwrap();
    let b = specialized_bridge(&t, &BridgeParams::new(32.0, 0.6)).unwrap();
    let v = b.to_json();
    let first = &v["levels"][0][0];
    assert_eq!(first["center"].as_array().unwrap().len(), 3);
    assert!(first["radius"].is_i64());
    assert_eq!(first["marked"].as_array().unwrap().len(), 2);
    let svg = b.to_svg(0, 1, &p(&[0, 0, 0]), &PointSet::new(), &PointSet::new());
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

/// Whether some ⌈βΓ⌉ consecutive elements have all successive gaps ≤ Γ.
fn window_exists(idx: &[usize], want: usize, gamma: usize) -> bool {
    want <= idx.len() && (0..=idx.len() - want).any(|i| idx[i..i + want].windows(2).all(|w| w[1] - w[0] <= gamma))
}

fn check_dense(idx: &[usize], k: usize, beta: f64, gamma: usize) {
    let want = (beta * gamma as f64 - 1e-12).ceil().max(1.0) as usize;
    match dense_subfamily(idx, k, beta, gamma) {
        Ok(out) => {
            assert_eq!(out.len(), want);
            assert!(out.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= gamma));
            let pos = idx.iter().position(|&x| x == out[0]).unwrap();
            assert_eq!(&idx[pos..pos + want], &out[..]);
        }
        Err(BridgeError::Infeasible(_)) => {
            assert!((idx.len() as f64) < beta * k as f64 || !window_exists(idx, want, gamma));
        }
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn dense_subfamily_example() {
    let idx: Vec<usize> = (1..=10).chain(31..=40).collect();
    let out = dense_subfamily(&idx, 40, 0.25, 8).unwrap();
    assert_eq!(out, vec![1, 2]);
    let idx: Vec<usize> = [1, 12, 24, 30, 31, 33, 36, 37, 38, 39, 40].to_vec();
    let out = dense_subfamily(&idx, 40, 0.25, 8).unwrap();
    assert_eq!(out, vec![24, 30]);
}

#[test]
fn dense_subfamily_exhaustive_small() {
    let betas = [0.1, 0.25, 0.5, 0.75, 1.0];
    for k in 1..=16usize {
        for mask in 0u32..1 << k {
            let idx: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
            for gamma in 1..=k {
                for &beta in &betas {
                    check_dense(&idx, k, beta, gamma);
                }
            }
        }
    }
}

#[test]
fn dense_subfamily_random_large() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100_000 {
        let k = rng.random_range(17..=40);
        let dens: f64 = rng.random();
        let idx: Vec<usize> = (1..=k).filter(|_| rng.random::<f64>() < dens).collect();
        let gamma = rng.random_range(1..=k);
        let beta = rng.random_range(0.01..=1.0);
        check_dense(&idx, k, beta, gamma);
    }
}
