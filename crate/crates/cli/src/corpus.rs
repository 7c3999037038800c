use std::io::Write;

use interlace::bridge::{
    complexity_exponents, default_m, default_s_floor, fuzz_instance, general_bridge_unchecked, validate_bridge, Anchor,
    Bridge, BridgeParams, FuzzInstance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::BridgeCorpusConfig;

/// B4 statistics of one corpus instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusRow {
    pub instance: usize,
    pub xi: f64,
    pub s: f64,
    #[serde(rename = "L")]
    pub l: i64,
    #[serde(rename = "N")]
    pub n: i64,
    pub n_boxes: usize,
    pub depth: usize,
    pub m: f64,
    /// Smallest m meeting the count bound and the depth bound.
    pub m_count: f64,
    pub m_depth: f64,
    /// m · log log(e²L).
    pub depth_bound: f64,
    /// m / max(m_count, m_depth).
    pub headroom: f64,
    pub pass: bool,
    pub failure: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusReport {
    pub rows: Vec<CorpusRow>,
}

impl CorpusReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record([
                "instance", "xi", "s", "L", "N", "n_boxes", "depth", "m", "m_count", "m_depth", "depth_bound", "headroom", "pass", "failure",
            ])?;
        }
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Instance `i` of the corpus and its parameters; stream `i` of the seed.
pub fn corpus_instance(cfg: &BridgeCorpusConfig, seed: u64, i: usize) -> (BridgeParams, FuzzInstance) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let xi = cfg.xi[i % cfg.xi.len()];
    let s = if cfg.s.is_empty() { default_s_floor(xi) } else { cfg.s[(i / cfg.xi.len()) % cfg.s.len()] };
    let l_min = (2.0 * s).ceil() as i64;
    let l = rng.random_range(l_min..=cfg.l_max.max(l_min));
    let mut params = BridgeParams::new(s, xi);
    params.m = cfg.m.unwrap_or_else(|| default_m(xi));
    params.s_floor = params.s_floor.min(s);
    (params, fuzz_instance(&mut rng, l, s))
}

fn row(i: usize, params: &BridgeParams, inst: &FuzzInstance, built: Result<Bridge, String>) -> CorpusRow {
    let t = &inst.tube;
    let depth_bound = params.m * (2.0 + (t.cross_radius as f64).ln()).ln();
    let mut r = CorpusRow {
        instance: i,
        xi: params.xi,
        s: params.s,
        l: t.cross_radius,
        n: t.length,
        n_boxes: 0,
        depth: 0,
        m: params.m,
        m_count: f64::NAN,
        m_depth: f64::NAN,
        depth_bound,
        headroom: f64::NAN,
        pass: false,
        failure: String::new(),
    };
    match built {
        Ok(b) => {
            let report = validate_bridge(&b, &Anchor::Sites(inst.c.clone()), &Anchor::Sites(inst.d.clone()));
            let (mc, md) = complexity_exponents(b.len(), b.depth(), t);
            r.n_boxes = b.len();
            r.depth = b.depth();
            r.m_count = mc;
            r.m_depth = md;
            r.headroom = params.m / mc.max(md);
            r.pass = report.all_pass() && b.depth() as f64 <= depth_bound;
            if let Some(f) = report.first_failure() {
                r.failure = format!("{:?}: {}", f.clause, f.witness.clone().unwrap_or_default());
            } else if !r.pass {
                r.failure = format!("J = {} above m log log e²L = {depth_bound:.3}", b.depth());
            }
        }
        Err(e) => r.failure = e,
    }
    r
}

/// Builds and validates a bridge for every corpus instance. Any failing
/// instance makes the corpus fail; the rows are in instance order.
pub fn run_bridge_corpus(cfg: &BridgeCorpusConfig, seed: u64) -> CorpusReport {
    if cfg.xi.is_empty() {
        return CorpusReport::default();
    }
    let rows = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let (params, inst) = corpus_instance(cfg, seed, i);
            let built = general_bridge_unchecked(&inst.c, &inst.d, &inst.tube, &params).map_err(|e| e.to_string());
            row(i, &params, &inst, built)
        })
        .collect();
    CorpusReport { rows }
}
