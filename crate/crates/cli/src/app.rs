use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use interlace::bridge::general_bridge_unchecked;
use interlace::excursion::{clothesline, inner_identity_violations, RoundedBoxes};
use interlace::interlacement::{Sampler, SamplerConfig, Window};
use interlace::lattice::{read_ndjson, LatticeBox, Point, PointSet};
use interlace::potential::{equilibrium_measure, CapacityRecord};
use interlace::walk::RngStream;
use serde::Serialize;

use crate::config::{ConfigError, EventKind, ExperimentConfig};
use crate::corpus::{corpus_instance, run_bridge_corpus};
use crate::plots::emit_plots;
use crate::sweep::{build_sampler, m_of_r_lines, read_tallies, run_events, run_sweep, write_classes, write_tallies, SweepError};

#[derive(Debug, Parser)]
#[command(name = "interlace", version, about = "Monte Carlo experiments on the vacant set of random interlacements")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Every flag overrides the config key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML experiment config; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub window_radius: Option<i64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub u: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub v: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub events: Option<Vec<EventKind>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub r: Option<Vec<i64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub m: Option<Vec<i64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub j: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub fe_r0: Option<i64>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub truncation: Option<i64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// γ_M; prints M(r) = exp((log r)^γ) for the configured r before running.
    #[arg(long, global = true, alias = "m-of-r")]
    pub gamma_m: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub xi: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub instances: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub s: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub l_max: Option<i64>,
    #[arg(long, global = true)]
    pub bridge_m: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Capacity report for boxes B_r and NDJSON point sets.
    Capacity {
        #[arg(long, value_delimiter = ',')]
        radius: Vec<i64>,
        #[arg(long)]
        set: Vec<PathBuf>,
        /// Also compare Monte Carlo P[K ⊆ V^u] with exp(−u·cap K) at every u.
        #[arg(long)]
        vacancy_check: bool,
    },
    /// One sample on the window: trajectory NDJSON and occupancy CSV.
    Sample,
    /// Per-trial outcomes of the selected events.
    Events,
    /// Builds and validates the bridge corpus.
    Bridge {
        /// Also write JSON and an SVG slice of instance 0.
        #[arg(long)]
        dump: bool,
    },
    /// Clothesline CSV for the rounded boxes around B_r, r the first configured scale.
    Excursions,
    /// Tallies of every event over the full parameter grid.
    Sweep,
    /// Plot-ready CSV and plot description from a tallies CSV.
    Plots {
        /// Defaults to <out_dir>/tallies.csv.
        #[arg(long)]
        tallies: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bridge corpus: {0} of {1} instances failed")]
    Corpus(usize, usize),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Corpus(..) => 3,
            CliError::Sweep(SweepError::FailureRate { .. }) => 4,
            CliError::Sweep(_) | CliError::Run(_) => 1,
        }
    }
}

fn run_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Run(e.to_string())
}

pub fn resolve(o: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut c = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = &o.$field { c.$field = v.clone(); })* };
    }
    set!(d, u, v, delta, events, r, m, j, fe_r0, trials, seed, out_dir);
    macro_rules! set_opt {
        ($($field:ident),*) => { $(if o.$field.is_some() { c.$field = o.$field.clone(); })* };
    }
    set_opt!(window_radius, truncation, threads, gamma_m);
    if let Some(v) = &o.xi {
        c.bridge.xi = v.clone();
    }
    if let Some(v) = o.instances {
        c.bridge.instances = v;
    }
    if let Some(v) = &o.s {
        c.bridge.s = v.clone();
    }
    if let Some(v) = o.l_max {
        c.bridge.l_max = v;
    }
    if o.bridge_m.is_some() {
        c.bridge.m = o.bridge_m;
    }
    c.validate()?;
    Ok(c)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(run_err)?;
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(run_err)?))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    wall_time_s: f64,
    window_radius: i64,
    capacity: f64,
    truncation_bias_bound: f64,
    failed_tallies: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.overrides)?;
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, which keeps its own size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Some(g) = cfg.gamma_m {
        for line in m_of_r_lines(&cfg.r, g) {
            eprintln!("{line}");
        }
    }
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Capacity { radius, set, vacancy_check } => capacity(&cfg, &radius, &set, vacancy_check),
        Command::Sample => {
            let sampler = build_sampler(&cfg, cfg.window())?;
            let mut rng = RngStream::new(cfg.seed, 0);
            let smp = sampler.sample(cfg.u_max(), &mut rng).map_err(run_err)?;
            smp.write_ndjson(create(&out, "sample.ndjson")?).map_err(run_err)?;
            smp.write_occupancy_csv(create(&out, "occupancy.csv")?).map_err(run_err)?;
            eprintln!("{} trajectories up to u = {}", smp.trajectories().len(), cfg.u_max());
            Ok(())
        }
        Command::Events => {
            let rows = run_events(&cfg)?;
            let mut w = csv::Writer::from_writer(create(&out, "events.csv")?);
            if rows.is_empty() {
                w.write_record(["trial", "event", "r", "M", "u", "v", "delta", "j", "outcome"]).map_err(run_err)?;
            }
            for r in &rows {
                w.serialize(r).map_err(run_err)?;
            }
            w.flush().map_err(run_err)?;
            let failed = rows.iter().filter(|r| r.outcome.is_none()).count();
            if failed > 0 {
                eprintln!("{failed} evaluations failed");
            }
            Ok(())
        }
        Command::Bridge { dump } => {
            let report = run_bridge_corpus(&cfg.bridge, cfg.seed);
            report.write_csv(create(&out, "bridge_corpus.csv")?).map_err(run_err)?;
            if dump && cfg.bridge.instances > 0 && !cfg.bridge.xi.is_empty() {
                let (params, inst) = corpus_instance(&cfg.bridge, cfg.seed, 0);
                if let Ok(b) = general_bridge_unchecked(&inst.c, &inst.d, &inst.tube, &params) {
                    serde_json::to_writer_pretty(create(&out, "bridge_0.json")?, &b.to_json()).map_err(run_err)?;
                    let (i, j) = ((inst.tube.axis + 1) % 3, inst.tube.axis);
                    std::fs::write(out.join("bridge_0.svg"), b.to_svg(j, i, &inst.tube.base, &inst.c, &inst.d)).map_err(run_err)?;
                }
            }
            eprintln!("{} instances, {} failed", report.rows.len(), report.failures());
            if report.all_pass() {
                Ok(())
            } else {
                Err(CliError::Corpus(report.failures(), report.rows.len()))
            }
        }
        Command::Excursions => {
            let r = cfg.r.first().copied().unwrap_or(1);
            let rb = RoundedBoxes::new(Point::origin(cfg.d), r);
            let sc = SamplerConfig { truncation_radius: cfg.truncation, ..SamplerConfig::default() };
            let sampler =
                Sampler::new(Window::from_box(LatticeBox::ball(cfg.d, rb.outer_radius())), &sc).map_err(run_err)?;
            let mut rng = RngStream::new(cfg.seed, 0);
            let smp = sampler.sample(cfg.u_max(), &mut rng).map_err(run_err)?;
            let (a, u) = (rb.a(), rb.u());
            let line = clothesline(&smp, &a, &u).map_err(run_err)?;
            line.write_csv(create(&out, "clothesline.csv")?, cfg.d).map_err(run_err)?;
            let b = LatticeBox::ball(cfg.d, r).to_set();
            let bad = inner_identity_violations(&smp, &b, &a, &u, cfg.u_max()).map_err(run_err)?;
            eprintln!("{} excursions; inner identity violations: {}", line.records.len(), bad.len());
            Ok(())
        }
        Command::Sweep => {
            let res = run_sweep(&cfg)?;
            write_tallies(&res.tallies, create(&out, "tallies.csv")?).map_err(run_err)?;
            write_classes(&res.classes, create(&out, "classes.csv")?).map_err(run_err)?;
            let manifest = RunManifest {
                command: "sweep",
                config: &cfg,
                wall_time_s: res.wall_time_s,
                window_radius: cfg.window(),
                capacity: res.capacity,
                truncation_bias_bound: res.truncation_bias_bound,
                failed_tallies: res.tallies.iter().map(|t| t.n_failed).sum(),
            };
            serde_json::to_writer_pretty(create(&out, "run.json")?, &manifest).map_err(run_err)?;
            eprintln!("{} tallies over {} trials in {:.1}s", res.tallies.len(), cfg.trials, res.wall_time_s);
            Ok(())
        }
        Command::Plots { tallies } => {
            let path = tallies.unwrap_or_else(|| out.join("tallies.csv"));
            let file = File::open(&path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
            let rows = read_tallies(file).map_err(run_err)?;
            for p in emit_plots(&rows, &out).map_err(run_err)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct VacancyRow {
    set_id: String,
    u: f64,
    trials: u64,
    p_hat: f64,
    p_exact: f64,
    z: f64,
}

fn capacity(cfg: &ExperimentConfig, radius: &[i64], sets: &[PathBuf], vacancy_check: bool) -> Result<(), CliError> {
    let mut named: Vec<(String, PointSet)> =
        radius.iter().map(|&r| (format!("B_{r}"), LatticeBox::ball(cfg.d, r).to_set())).collect();
    for p in sets {
        let f = File::open(p).map_err(|e| CliError::Run(format!("{}: {e}", p.display())))?;
        let set = read_ndjson(std::io::BufReader::new(f)).map_err(run_err)?;
        let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        named.push((id, set));
    }
    if named.is_empty() {
        named.push(("origin".into(), [Point::origin(cfg.d)].into_iter().collect()));
    }
    let mut w = csv::Writer::from_writer(create(&cfg.out_dir, "capacity.csv")?);
    let mut checks = Vec::new();
    for (id, set) in &named {
        let em = equilibrium_measure::<f64>(set).map_err(run_err)?;
        let rec = CapacityRecord { set_id: id.clone(), n_points: set.len(), capacity: em.total, condition_estimate: em.condition_estimate };
        w.serialize(&rec).map_err(run_err)?;
        println!("{id}: cap = {:.12}", em.total);
        if vacancy_check {
            let sampler = Sampler::new(Window::new(set.clone()).map_err(run_err)?, &SamplerConfig::default()).map_err(run_err)?;
            let mut vacant = vec![0u64; cfg.u.len()];
            for t in 0..cfg.trials {
                let mut rng = RngStream::new(cfg.seed, t);
                let smp = sampler.sample(cfg.u_max(), &mut rng).map_err(run_err)?;
                for (k, &u) in cfg.u.iter().enumerate() {
                    vacant[k] += u64::from(smp.window_vacant(u));
                }
            }
            for (k, &u) in cfg.u.iter().enumerate() {
                let p = (-u * em.total).exp();
                let n = cfg.trials.max(1) as f64;
                let p_hat = vacant[k] as f64 / n;
                let z = (p_hat - p) / (p * (1.0 - p) / n).sqrt();
                println!("  u = {u}: P̂[K ⊆ V^u] = {p_hat:.5}, exp(−u·cap) = {p:.5}, z = {z:+.2}");
                checks.push(VacancyRow { set_id: id.clone(), u, trials: cfg.trials, p_hat, p_exact: p, z });
            }
        }
    }
    w.flush().map_err(run_err)?;
    if vacancy_check {
        let mut w = csv::Writer::from_writer(create(&cfg.out_dir, "vacancy_check.csv")?);
        for c in &checks {
            w.serialize(c).map_err(run_err)?;
        }
        w.flush().map_err(run_err)?;
    }
    Ok(())
}
