use std::io::Write;
use std::time::Instant;

use interlace::clusters::{
    class_counts, detect_disconnect, detect_exist, detect_uc, detect_unique, weighted_disconnection, VacancyField,
};
use interlace::excursion::{detect_finite_energy_good, FiniteEnergyParams};
use interlace::interlacement::{EquilibriumMode, InterlacementSample, Sampler, SamplerConfig, Window};
use interlace::lattice::LatticeBox;
use interlace::walk::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EventKind, ExperimentConfig};

/// Abort threshold on the fraction of trials lost to sampler failures.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Trials handled per parallel batch; bounds memory on long runs.
const BATCH: u64 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sampler setup failed: {0}")]
    Setup(String),
    #[error("{failed} of {trials} trials failed, above the {:.0}% limit", MAX_FAILURE_RATE * 100.0)]
    FailureRate { failed: u64, trials: u64 },
}

/// One grid point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub event: EventKind,
    pub r: Option<i64>,
    pub m: Option<i64>,
    pub u: f64,
    pub v: Option<f64>,
    pub delta: Option<f64>,
    pub j: Option<usize>,
}

/// Counts for one grid point. `trials = successes + failures + sampler_failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRecord {
    pub event: String,
    pub r: Option<i64>,
    #[serde(rename = "M")]
    pub m: Option<i64>,
    pub u: f64,
    pub v: Option<f64>,
    pub delta: Option<f64>,
    pub j: Option<usize>,
    pub n_trials: u64,
    pub n_true: u64,
    pub n_false: u64,
    pub n_failed: u64,
    pub p_hat: f64,
    pub stderr: f64,
    /// (M/r)^d · p̂ for disconnection tallies.
    pub weighted_p: Option<f64>,
    pub seed: u64,
}

impl TallyRecord {
    fn new(g: &GridPoint, seed: u64) -> Self {
        TallyRecord {
            event: g.event.name().to_string(),
            r: g.r,
            m: g.m,
            u: g.u,
            v: g.v,
            delta: g.delta,
            j: g.j,
            n_trials: 0,
            n_true: 0,
            n_false: 0,
            n_failed: 0,
            p_hat: 0.0,
            stderr: 0.0,
            weighted_p: None,
            seed,
        }
    }

    fn finish(&mut self, d: usize) {
        let n = self.n_true + self.n_false;
        if n > 0 {
            self.p_hat = self.n_true as f64 / n as f64;
            self.stderr = (self.p_hat * (1.0 - self.p_hat) / n as f64).sqrt();
        }
        if let (Some(EventKind::Disconnect), Some(r), Some(m)) = (self.kind(), self.r, self.m) {
            self.weighted_p = Some(weighted_disconnection(self.p_hat, r, m, d));
        }
    }

    pub fn kind(&self) -> Option<EventKind> {
        use clap::ValueEnum;
        EventKind::value_variants().iter().copied().find(|e| e.name() == self.event)
    }
}

/// Mean of U_i(η_j) over the trials of one class-count grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    #[serde(rename = "M")]
    pub m: i64,
    pub j: usize,
    pub u: f64,
    pub delta: f64,
    pub i: usize,
    pub mean_u: f64,
    pub mean_straddle: Option<f64>,
    pub n: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub tallies: Vec<TallyRecord>,
    pub classes: Vec<ClassSummary>,
    pub wall_time_s: f64,
    pub capacity: f64,
    pub truncation_bias_bound: f64,
}

pub fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let mut out = Vec::new();
    let base = |event| GridPoint { event, r: None, m: None, u: 0.0, v: None, delta: None, j: None };
    let mut events = cfg.events.clone();
    events.sort();
    events.dedup();
    for e in events {
        for &u in &cfg.u {
            let g = GridPoint { u, ..base(e) };
            match e {
                EventKind::Exist => out.extend(cfg.r.iter().map(|&r| GridPoint { r: Some(r), ..g })),
                EventKind::Unique => {
                    for &r in &cfg.r {
                        out.extend(cfg.v.iter().filter(|&&v| v <= u).map(|&v| GridPoint { r: Some(r), v: Some(v), ..g }));
                    }
                }
                EventKind::Uc => {
                    for &m in &cfg.m {
                        out.extend(cfg.v.iter().filter(|&&v| v <= u).map(|&v| GridPoint { m: Some(m), v: Some(v), ..g }));
                    }
                }
                EventKind::Disconnect => {
                    for &r in &cfg.r {
                        out.extend(cfg.m.iter().filter(|&&m| m > r).map(|&m| GridPoint { r: Some(r), m: Some(m), ..g }));
                    }
                }
                EventKind::Classes => {
                    for &m in &cfg.m {
                        for &j in &cfg.j {
                            out.extend(
                                cfg.delta.iter().filter(|&&dl| dl <= u).map(|&dl| GridPoint { m: Some(m), j: Some(j), delta: Some(dl), ..g }),
                            );
                        }
                    }
                }
                EventKind::FiniteEnergy => {
                    for &r in &cfg.r {
                        out.extend(cfg.delta.iter().filter(|&&dl| dl > 0.0 && dl < u).map(|&dl| GridPoint { r: Some(r), delta: Some(dl), ..g }));
                    }
                }
            }
        }
    }
    out
}

pub fn build_sampler(cfg: &ExperimentConfig, radius: i64) -> Result<Sampler, SweepError> {
    let sc = SamplerConfig {
        truncation_radius: cfg.truncation,
        equilibrium: EquilibriumMode::Auto { pilot: 100_000, seed: cfg.seed },
        ..SamplerConfig::default()
    };
    Sampler::new(Window::from_box(LatticeBox::ball(cfg.d, radius)), &sc).map_err(|e| SweepError::Setup(e.to_string()))
}

/// Outcome of one trial: per grid point `Some(event)` or `None` on failure,
/// plus U_i and straddle counts for class grid points.
struct Trial {
    outcomes: Vec<Option<bool>>,
    classes: Vec<Option<(Vec<usize>, Vec<usize>)>>,
}

fn evaluate(g: &GridPoint, sample: &InterlacementSample, field: &VacancyField, d: usize, r0: i64) -> (Option<bool>, Option<(Vec<usize>, Vec<usize>)>) {
    let u = g.u;
    let ok = |r: Result<bool, _>| r.ok();
    match g.event {
        EventKind::Exist => (ok(detect_exist(field, g.r.unwrap(), u)), None),
        EventKind::Unique => (ok(detect_unique(field, g.r.unwrap(), u, g.v.unwrap())), None),
        EventKind::Uc => (ok(detect_uc(field, g.m.unwrap(), u, g.v.unwrap())), None),
        EventKind::Disconnect => (ok(detect_disconnect(field, g.r.unwrap(), g.m.unwrap(), u)), None),
        EventKind::Classes => match class_counts(field, g.m.unwrap(), g.j.unwrap(), u, g.delta.unwrap()) {
            Ok(c) => (Some(c.u_counts[0] <= 1), Some((c.u_counts, c.straddle_counts))),
            Err(_) => (None, None),
        },
        EventKind::FiniteEnergy => {
            let b = LatticeBox::ball(d, g.r.unwrap());
            let p = FiniteEnergyParams::diagonal(u, g.delta.unwrap(), r0);
            (detect_finite_energy_good(sample, &b, &p).ok().map(|o| o.all()), None)
        }
    }
}

fn run_trial(sampler: &Sampler, grid: &[GridPoint], cfg: &ExperimentConfig, index: u64) -> Trial {
    let mut rng = RngStream::new(cfg.seed, index);
    let sample = sampler.sample(cfg.u_max(), &mut rng).ok();
    let field = sample.as_ref().and_then(|s| VacancyField::from_sample(s).ok());
    let (mut outcomes, mut classes) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for g in grid {
        let (o, c) = match (&sample, &field) {
            (Some(s), Some(f)) => evaluate(g, s, f, cfg.d, cfg.fe_r0),
            _ => (None, None),
        };
        outcomes.push(o);
        classes.push(c);
    }
    Trial { outcomes, classes }
}

/// Samples `cfg.trials` independent configurations and evaluates every grid
/// point on each; trial `i` draws from stream `i` of the seed, so results do
/// not depend on the thread count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    let start = Instant::now();
    if cfg.trials == 0 {
        return Ok(SweepResult::default());
    }
    let grid = grid(cfg);
    let sampler = build_sampler(cfg, cfg.window())?;
    let mut tallies: Vec<TallyRecord> = grid.iter().map(|g| TallyRecord::new(g, cfg.seed)).collect();
    let mut sums: Vec<(Vec<u64>, Vec<u64>, u64)> = vec![(Vec::new(), Vec::new(), 0); grid.len()];
    let mut failed_trials = 0u64;
    let mut lo = 0;
    while lo < cfg.trials {
        let hi = (lo + BATCH).min(cfg.trials);
        let batch: Vec<Trial> = (lo..hi).into_par_iter().map(|i| run_trial(&sampler, &grid, cfg, i)).collect();
        for t in batch {
            failed_trials += u64::from(t.outcomes.iter().any(Option::is_none));
            for (k, o) in t.outcomes.iter().enumerate() {
                let tl = &mut tallies[k];
                tl.n_trials += 1;
                match o {
                    Some(true) => tl.n_true += 1,
                    Some(false) => tl.n_false += 1,
                    None => tl.n_failed += 1,
                }
            }
            for (k, c) in t.classes.into_iter().enumerate() {
                if let Some((uc, sc)) = c {
                    let s = &mut sums[k];
                    s.0.resize(uc.len(), 0);
                    s.1.resize(sc.len(), 0);
                    s.0.iter_mut().zip(&uc).for_each(|(a, b)| *a += *b as u64);
                    s.1.iter_mut().zip(&sc).for_each(|(a, b)| *a += *b as u64);
                    s.2 += 1;
                }
            }
        }
        lo = hi;
    }
    if failed_trials as f64 > MAX_FAILURE_RATE * cfg.trials as f64 {
        return Err(SweepError::FailureRate { failed: failed_trials, trials: cfg.trials });
    }
    tallies.iter_mut().for_each(|t| t.finish(cfg.d));
    let mut classes = Vec::new();
    for (g, (us, ss, n)) in grid.iter().zip(&sums) {
        if *n == 0 {
            continue;
        }
        for (i, &tot) in us.iter().enumerate() {
            classes.push(ClassSummary {
                m: g.m.unwrap(),
                j: g.j.unwrap(),
                u: g.u,
                delta: g.delta.unwrap(),
                i,
                mean_u: tot as f64 / *n as f64,
                mean_straddle: ss.get(i).map(|&s| s as f64 / *n as f64),
                n: *n,
            });
        }
    }
    Ok(SweepResult {
        tallies,
        classes,
        wall_time_s: start.elapsed().as_secs_f64(),
        capacity: sampler.capacity(),
        truncation_bias_bound: sampler.truncation_bias_bound(),
    })
}

pub fn write_tallies<W: Write>(tallies: &[TallyRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if tallies.is_empty() {
        out.write_record(TALLY_HEADER)?;
    }
    for t in tallies {
        out.serialize(t)?;
    }
    out.flush()?;
    Ok(())
}

pub const TALLY_HEADER: [&str; 15] = [
    "event", "r", "M", "u", "v", "delta", "j", "n_trials", "n_true", "n_false", "n_failed", "p_hat", "stderr", "weighted_p", "seed",
];

pub fn read_tallies<R: std::io::Read>(r: R) -> csv::Result<Vec<TallyRecord>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

pub fn write_classes<W: Write>(classes: &[ClassSummary], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if classes.is_empty() {
        out.write_record(["M", "j", "u", "delta", "i", "mean_u", "mean_straddle", "n"])?;
    }
    for c in classes {
        out.serialize(c)?;
    }
    out.flush()?;
    Ok(())
}

/// M(r) = exp((log r)^γ) for each r, with a warning line when it overflows.
pub fn m_of_r_lines(rs: &[i64], gamma: f64) -> Vec<String> {
    rs.iter()
        .map(|&r| match interlace::clusters::m_of_r(r as f64, gamma) {
            Some(m) => format!("r = {r}: M(r) = {m}"),
            None => format!("r = {r}: M(r) overflows u64 (warning: not representable at this γ)"),
        })
        .collect()
}

/// A per-trial outcome row for the `events` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeRow {
    pub trial: u64,
    pub event: &'static str,
    pub r: Option<i64>,
    #[serde(rename = "M")]
    pub m: Option<i64>,
    pub u: f64,
    pub v: Option<f64>,
    pub delta: Option<f64>,
    pub j: Option<usize>,
    pub outcome: Option<bool>,
}

/// Per-trial outcomes of every grid point, in trial order.
pub fn run_events(cfg: &ExperimentConfig) -> Result<Vec<OutcomeRow>, SweepError> {
    let grid = grid(cfg);
    if cfg.trials == 0 {
        return Ok(Vec::new());
    }
    let sampler = build_sampler(cfg, cfg.window())?;
    let trials: Vec<Trial> = (0..cfg.trials).into_par_iter().map(|i| run_trial(&sampler, &grid, cfg, i)).collect();
    let mut rows = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        for (g, &o) in grid.iter().zip(&t.outcomes) {
            rows.push(OutcomeRow { trial: i as u64, event: g.event.name(), r: g.r, m: g.m, u: g.u, v: g.v, delta: g.delta, j: g.j, outcome: o });
        }
    }
    Ok(rows)
}
