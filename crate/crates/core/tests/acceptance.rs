//! Acceptance run: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any failure.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use interlace::bridge::{
    default_m, default_s_floor, dense_subfamily, fuzz_instance, general_bridge_unchecked, validate_bridge, Anchor,
    BridgeParams,
};
use interlace::clusters::{class_counts, detect_disconnect, detect_exist, detect_uc, detect_unique, VacancyField};
use interlace::excursion::{clothesline, inner_identity_violations, RoundedBoxes};
use interlace::interface::{check_cond_path, interface_star_path, InterfaceError};
use interlace::interlacement::{Sampler, SamplerConfig, Window};
use interlace::lattice::{LatticeBox, Point, PointSet};
use interlace::potential::capacity;
use interlace::walk::RngStream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_241_018;

// Pinned tolerances and sizes.
const VACANCY_TRIALS: usize = 100_000;
const SIGMAS: f64 = 3.0;
const VACANCY_BUDGET: Duration = Duration::from_secs(600);
const DISPERSION: (f64, f64) = (0.97, 1.03);
const BRIDGE_INSTANCES: usize = 500;
const BRIDGE_BUDGET: Duration = Duration::from_secs(300);
const BRIDGE_L_MAX: i64 = 1 << 10;
const INTERFACE_PARTITIONS: usize = 1000;
const EXCURSION_SAMPLES: usize = 1000;
const CLUSTER_CONFIGS: usize = 1000;
const DENSE_EXHAUSTIVE_K: usize = 18;
const DENSE_RANDOM_CASES: usize = 200_000;
const SMOKE_TRIALS: usize = 10_000;
const SMOKE_THRESHOLD: f64 = 0.05;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, name: &'static str, pass: bool, detail: String, t: Instant) {
    let detail = format!("{detail} [{:.1}s]", t.elapsed().as_secs_f64());
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { name, pass, detail });
}

fn sampler(window: PointSet) -> Sampler {
    Sampler::new(Window::new(window).unwrap(), &SamplerConfig::default()).unwrap()
}

fn singleton() -> PointSet {
    [Point::origin(3)].into_iter().collect()
}

/// Two-sample z-score for proportions with pooled variance.
fn z_two(k1: usize, n1: usize, k2: usize, n2: usize) -> f64 {
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pool = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pool * (1.0 - pool) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se > 0.0 {
        (p1 - p2) / se
    } else {
        0.0
    }
}

/// Vacancy law, Poisson count and increment law share one pass of coupled
/// samples per window.
fn sampling_criteria(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let levels = [0.5, 1.0, 2.0];
    let windows = [("{0}", singleton()), ("B_1", LatticeBox::ball(3, 1).to_set()), ("B_2", LatticeBox::ball(3, 2).to_set())];
    let mut worst: f64 = 0.0;
    let mut counts = Vec::new();
    let mut b1_index = None;
    for (w, (name, set)) in windows.iter().enumerate() {
        let s = sampler(set.clone());
        let cap: f64 = capacity(set).unwrap();
        let mut rng = RngStream::new(SEED, w as u64);
        let mut vacant = [0usize; 3];
        let sites: Vec<Point> = set.iter().copied().collect();
        let mut hits = vec![0usize; sites.len()];
        for _ in 0..VACANCY_TRIALS {
            let smp = s.sample(2.0, &mut rng).unwrap();
            for (k, &u) in levels.iter().enumerate() {
                vacant[k] += usize::from(smp.window_vacant(u));
            }
            match *name {
                "B_2" => counts.push(smp.count_at_level(1.0) as f64),
                "B_1" => {
                    let tr = smp.trace_between(0.5, 1.0);
                    for (h, x) in hits.iter_mut().zip(&sites) {
                        *h += usize::from(tr.contains(x));
                    }
                }
                _ => {}
            }
        }
        for (k, &u) in levels.iter().enumerate() {
            let p = (-u * cap).exp();
            let se = (p * (1.0 - p) / VACANCY_TRIALS as f64).sqrt();
            let z = (vacant[k] as f64 / VACANCY_TRIALS as f64 - p) / se;
            worst = worst.max(z.abs());
            println!("     {name} u={u}: p̂ = {:.5}, exp(−u·cap) = {p:.5}, z = {z:+.2}", vacant[k] as f64 / VACANCY_TRIALS as f64);
        }
        if *name == "B_1" {
            b1_index = Some((sites, hits));
        }
    }
    let elapsed = t.elapsed();
    report(
        lines,
        "vacancy law",
        worst <= SIGMAS && elapsed <= VACANCY_BUDGET,
        format!("{} windows × 3 levels, {VACANCY_TRIALS} coupled trials, max |z| = {worst:.2} ≤ {SIGMAS}, runtime ≤ {}s", windows.len(), VACANCY_BUDGET.as_secs()),
        t,
    );

    let t = Instant::now();
    let cap: f64 = capacity(&LatticeBox::ball(3, 2).to_set()).unwrap();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = (mean - cap) / (cap / n).sqrt();
    let disp = var / mean;
    report(
        lines,
        "Poisson count",
        z.abs() <= SIGMAS && disp >= DISPERSION.0 && disp <= DISPERSION.1,
        format!("B_2, u=1: mean {mean:.4} vs u·cap {cap:.4} (z = {z:+.2}), dispersion {disp:.4} in [{}, {}]", DISPERSION.0, DISPERSION.1),
        t,
    );

    let t = Instant::now();
    let (sites, hits) = b1_index.unwrap();
    let s = sampler(LatticeBox::ball(3, 1).to_set());
    let mut rng = RngStream::new(SEED, 10);
    let mut fresh = vec![0usize; sites.len()];
    for _ in 0..VACANCY_TRIALS {
        let smp = s.sample(0.5, &mut rng).unwrap();
        for (h, x) in fresh.iter_mut().zip(&sites) {
            *h += usize::from(!smp.is_vacant(x, 0.5));
        }
    }
    let worst = hits.iter().zip(&fresh).map(|(&a, &b)| z_two(a, VACANCY_TRIALS, b, VACANCY_TRIALS).abs()).fold(0.0, f64::max);
    report(
        lines,
        "increment law",
        worst <= SIGMAS,
        format!("B_1, (u, v) = (0.5, 1): {} sites, max |z| = {worst:.2} ≤ {SIGMAS} over {VACANCY_TRIALS} + {VACANCY_TRIALS} trials", sites.len()),
        t,
    );
}

fn bridge_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let xis = [0.55, 0.6, 0.75];
    let (mut pass, mut depth_ok, mut worst_ratio) = (0, 0, 0.0f64);
    let mut first_failure = None;
    for i in 0..BRIDGE_INSTANCES {
        let xi = xis[i % xis.len()];
        let floor = default_s_floor(xi);
        let s = rng.random_range(floor..=2.0 * floor).floor();
        let l = rng.random_range((2.0 * s).ceil() as i64..=BRIDGE_L_MAX);
        let inst = fuzz_instance(&mut rng, l, s);
        let params = BridgeParams::new(s, xi);
        match general_bridge_unchecked(&inst.c, &inst.d, &inst.tube, &params) {
            Ok(b) => {
                let r = validate_bridge(&b, &Anchor::Sites(inst.c.clone()), &Anchor::Sites(inst.d.clone()));
                if r.all_pass() {
                    pass += 1;
                } else if first_failure.is_none() {
                    first_failure = Some(format!("ξ={xi} s={s} L={l}: {:?}", r.first_failure().unwrap()));
                }
                let bound = default_m(xi) * (2.0 + (l as f64).ln()).ln();
                worst_ratio = worst_ratio.max(b.depth() as f64 / bound);
                depth_ok += usize::from(b.depth() as f64 <= bound);
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(format!("ξ={xi} s={s} L={l}: {e}"));
                }
            }
        }
    }
    let ok = pass == BRIDGE_INSTANCES && depth_ok == pass && t.elapsed() <= BRIDGE_BUDGET;
    let mut detail = format!(
        "{pass}/{BRIDGE_INSTANCES} pass separation, connectivity, size and complexity, L ∈ [2s, {BRIDGE_L_MAX}], ξ ∈ {xis:?}; J ≤ m·log log(e²L) on {depth_ok} (max J/bound = {worst_ratio:.2}); runtime ≤ {}s",
        BRIDGE_BUDGET.as_secs()
    );
    if let Some(f) = first_failure {
        detail.push_str(&format!("; first failure {f}"));
    }
    report(lines, "bridge validators", ok, detail, t);
}

fn interface_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut ok, mut inside, mut rejected, mut bad) = (0, 0, 0, 0);
    while ok + bad < INTERFACE_PARTITIONS {
        let (u, v) = common::random_partition(&mut rng, 2, 8);
        match interface_star_path(&u, &v, 2, 8) {
            Ok(p) if check_cond_path(&p.sites, &u, &v, 2, 8).is_ok() => {
                ok += 1;
                inside += usize::from(p.starts_in_cluster);
            }
            Ok(_) => bad += 1,
            Err(InterfaceError::NoCrossing(_)) => rejected += 1,
            Err(_) => bad += 1,
        }
    }
    report(
        lines,
        "interface path",
        bad == 0 && inside > 0 && inside < ok,
        format!(
            "{ok}/{INTERFACE_PARTITIONS} admissible partitions of B_8 \\ B_1 pass; branches: {inside} start in the cluster, {} outside; {rejected} inadmissible draws skipped",
            ok - inside
        ),
        t,
    );
}

fn excursion_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let rb = RoundedBoxes::new(Point::origin(3), 2);
    let s = Sampler::new(Window::from_box(LatticeBox::ball(3, rb.outer_radius())), &SamplerConfig::default()).unwrap();
    let b = LatticeBox::ball(3, 2).to_set();
    let (a, u) = (rb.a(), rb.u());
    let mut rng = RngStream::new(SEED, 20);
    let (mut violations, mut disorder, mut records) = (0, 0, 0);
    for _ in 0..EXCURSION_SAMPLES {
        let smp = s.sample(1.5, &mut rng).unwrap();
        for level in [0.5, 1.5] {
            violations += inner_identity_violations(&smp, &b, &a, &u, level).unwrap().len();
        }
        let line = clothesline(&smp, &a, &u).unwrap();
        records += line.records.len();
        disorder += line
            .records
            .windows(2)
            .filter(|w| w[0].label > w[1].label || (w[0].traj_id == w[1].traj_id && w[0].k + 1 != w[1].k))
            .count();
    }
    report(
        lines,
        "excursion identity",
        violations == 0 && disorder == 0,
        format!("{EXCURSION_SAMPLES} samples at 2 levels: {violations} violating sites; clothesline order broken {disorder} times over {records} records"),
        t,
    );
}

fn cluster_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut disagree, mut identity, mut checks) = (0, 0, 0);
    for _ in 0..CLUSTER_CONFIGS {
        let f: VacancyField = common::random_field(&mut rng, 12);
        let u = rng.random_range(0.2..1.6);
        let v = rng.random_range(0.05..u);
        let r = rng.random_range(3..=12);
        let ru = rng.random_range(2..=6);
        let m = rng.random_range(1..=2);
        let (rd, md) = (rng.random_range(1..=5), rng.random_range(6..=12));
        let pairs = [
            (detect_exist(&f, r, u).unwrap(), common::oracle_exist(&f, r, u)),
            (detect_unique(&f, ru, u, v).unwrap(), common::oracle_unique(&f, ru, u, v)),
            (detect_uc(&f, m, u, v).unwrap(), common::oracle_uc(&f, m, u, v)),
            (detect_disconnect(&f, rd, md, u).unwrap(), common::oracle_disconnect(&f, rd, md, u)),
        ];
        checks += pairs.len();
        disagree += pairs.iter().filter(|(a, b)| a != b).count();

        let mut prev_delta: Option<Vec<Vec<usize>>> = None;
        for delta in [0.0, 0.3 * u, 0.6 * u] {
            let mut per_j: Vec<Vec<usize>> = Vec::new();
            for j in 0..=1 {
                let cc = class_counts(&f, 3, j, u, delta).unwrap();
                checks += 1;
                disagree += usize::from(cc.u_counts != common::oracle_u_counts(&f, 3, j, u, delta));
                for i in 0..cc.straddle_counts.len() {
                    identity += usize::from(cc.u_counts[i] != cc.u_counts[i + 1] + cc.straddle_counts[i]);
                    identity += usize::from(cc.u_counts[i + 1] > cc.u_counts[i]);
                }
                if let Some(p) = per_j.last() {
                    identity += usize::from(!cc.u_counts.iter().zip(p.iter()).all(|(a, b)| a <= b));
                }
                per_j.push(cc.u_counts);
            }
            if let Some(p) = &prev_delta {
                for (now, before) in per_j.iter().zip(p) {
                    identity += usize::from(!now.iter().zip(before).all(|(a, b)| a <= b));
                }
            }
            prev_delta = Some(per_j);
        }
    }
    report(
        lines,
        "cluster detectors",
        disagree == 0 && identity == 0,
        format!("{CLUSTER_CONFIGS} configurations on B_12: {disagree} disagreements in {checks} comparisons with BFS; {identity} broken U_i identities"),
        t,
    );
}

/// Brute-force window search: every run of ⌈βΓ⌉ consecutive indices whose
/// successive gaps are at most Γ.
fn windows(indices: &[usize], beta: f64, gamma: usize) -> HashSet<Vec<usize>> {
    let want = (beta * gamma as f64 - 1e-12).ceil().max(1.0) as usize;
    if want > indices.len() {
        return HashSet::new();
    }
    (0..=indices.len() - want)
        .map(|i| indices[i..i + want].to_vec())
        .filter(|w| w.windows(2).all(|p| p[1] - p[0] <= gamma))
        .collect()
}

fn dense_case(indices: &[usize], k: usize, beta: f64, gamma: usize) -> Option<bool> {
    if (indices.len() as f64) < beta * k as f64 {
        return None;
    }
    let all = windows(indices, beta, gamma);
    Some(match dense_subfamily(indices, k, beta, gamma) {
        Ok(out) => all.contains(&out),
        Err(_) => all.is_empty(),
    })
}

fn dense_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let betas = [0.1, 0.25, 0.5, 0.75, 1.0];
    let (mut cases, mut wrong) = (0usize, 0usize);
    for k in 1..=DENSE_EXHAUSTIVE_K {
        for mask in 0u32..(1 << k) {
            let idx: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
            for gamma in 1..=k {
                for &beta in &betas {
                    if let Some(ok) = dense_case(&idx, k, beta, gamma) {
                        cases += 1;
                        wrong += usize::from(!ok);
                    }
                }
            }
        }
    }
    let exhaustive = cases;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut sampled = 0;
    while sampled < DENSE_RANDOM_CASES {
        let k = rng.random_range(DENSE_EXHAUSTIVE_K + 1..=40);
        let density = rng.random_range(0.05..1.0);
        let idx: Vec<usize> = (1..=k).filter(|_| rng.random_bool(density)).collect();
        let gamma = rng.random_range(1..=k);
        let beta = rng.random_range(0.01..=1.0);
        if let Some(ok) = dense_case(&idx, k, beta, gamma) {
            sampled += 1;
            wrong += usize::from(!ok);
        }
    }
    let example: Vec<usize> = (1..=10).chain(31..=40).collect();
    let ex = dense_subfamily(&example, 40, 0.25, 8).ok();
    let ex_ok = ex.as_ref().is_some_and(|o| windows(&example, 0.25, 8).contains(o));
    report(
        lines,
        "dense subfamily",
        wrong == 0 && ex_ok,
        format!(
            "{wrong} disagreements with brute-force window search: exhaustive over all index sets for K ≤ {DENSE_EXHAUSTIVE_K} ({exhaustive} cases), {DENSE_RANDOM_CASES} random cases for K in {}..=40 (full enumeration to K = 40 is out of reach); K = 40 gap example → {ex:?}",
            DENSE_EXHAUSTIVE_K + 1
        ),
        t,
    );
}

fn smoke_criterion(lines: &mut Vec<Line>) {
    let t = Instant::now();
    let (u, r, m) = (0.1, 6, 24);
    let s = Sampler::new(Window::from_box(LatticeBox::ball(3, m)), &SamplerConfig::default()).unwrap();
    let mut rng = RngStream::new(SEED, 30);
    let mut hits = 0;
    for _ in 0..SMOKE_TRIALS {
        let smp = s.sample(u, &mut rng).unwrap();
        let f = VacancyField::from_sample(&smp).unwrap();
        hits += usize::from(detect_disconnect(&f, r, m, u).unwrap());
    }
    let p = hits as f64 / SMOKE_TRIALS as f64;
    report(
        lines,
        "supercritical smoke test",
        p < SMOKE_THRESHOLD,
        format!("d=3, u={u}, r={r}, M={m}: P̂[B_r ↮ ∂B_M] = {p:.4} < {SMOKE_THRESHOLD} over {SMOKE_TRIALS} trials"),
        t,
    );
}

fn main() {
    // Let `cargo test <filter>` runs for other targets skip this one.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut lines = Vec::new();
    bridge_criterion(&mut lines);
    interface_criterion(&mut lines);
    excursion_criterion(&mut lines);
    cluster_criterion(&mut lines);
    dense_criterion(&mut lines);
    sampling_criteria(&mut lines);
    smoke_criterion(&mut lines);
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.name).collect();
    println!("acceptance: {}/{} criteria pass", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        for l in lines.iter().filter(|l| !l.pass) {
            eprintln!("failed: {} ({})", l.name, l.detail);
        }
        std::process::exit(1);
    }
}
