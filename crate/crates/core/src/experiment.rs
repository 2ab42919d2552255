//! Configuration-driven Monte Carlo sweep over (dimension, sample size,
//! seed, method) cells, with deterministic per-cell seeds, ordered
//! incremental CSV output, resumption, and the SMOTE-vs-bootstrap excess
//! risk ratio summary.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{fstar_gaussian, sample_observed, MixtureSpec, TargetSpec};
use crate::erm::{evaluate_risk, RiskReport};
use crate::error::{Error, Result};
use crate::pipelines::{train, Method, PipelineConfig, RunManifest};
use crate::rng;
use crate::stats::{median, quantile};

/// Header of `results.csv`.
pub const RESULTS_HEADER: &str =
    "d,n,seed,method,generator,J,excess_risk,excess_risk_se,est_error_q,type2_error,status";

pub const SUMMARY_HEADER: &str =
    "d,n,numerator,denominator,pairs,median_ratio,q25,q75,flagged,missing,theory_shape";

/// Mixture family swept over dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecTemplate {
    pub pi0: f64,
    pub sigma: f64,
    /// Use `mu0 = 0`, `mu1 = (mu1_norm / sqrt(d)) 1_d`.
    pub scaled_ones: bool,
    pub mu1_norm: f64,
    /// Explicit means, used when `scaled_ones` is false.
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
}

impl Default for SpecTemplate {
    fn default() -> Self {
        SpecTemplate {
            pi0: 0.9,
            sigma: 1.0,
            scaled_ones: true,
            mu1_norm: 1.0,
            mu0: None,
            mu1: None,
        }
    }
}

impl SpecTemplate {
    pub fn build(&self, d: usize) -> Result<MixtureSpec> {
        if self.scaled_ones {
            let v = self.mu1_norm / (d as f64).sqrt();
            return MixtureSpec::new(self.pi0, vec![0.0; d], vec![v; d], self.sigma);
        }
        let (Some(mu0), Some(mu1)) = (&self.mu0, &self.mu1) else {
            return Err(Error::config(
                "explicit means required when scaled_ones is false",
            ));
        };
        if mu0.len() != d {
            return Err(Error::config(format!(
                "explicit means have dimension {}, sweep asks for {d}",
                mu0.len()
            )));
        }
        MixtureSpec::new(self.pi0, mu0.clone(), mu1.clone(), self.sigma)
    }
}

fn default_n_eval() -> usize {
    100_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub spec_template: SpecTemplate,
    pub dims: Vec<usize>,
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<PipelineConfig>,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Root of every per-cell seed derivation.
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// The default SMOTE-vs-bootstrap sweep: `pi0 = 0.9`, unit separation,
    /// `d in {2, 4, 8, 16}`, `n in {1000, 4000}`, 20 seeds, `k = 5`.
    pub fn smote_vs_bootstrap() -> Self {
        ExperimentConfig {
            spec_template: SpecTemplate::default(),
            dims: vec![2, 4, 8, 16],
            train_sizes: vec![1000, 4000],
            seeds: (0..20).collect(),
            methods: vec![
                PipelineConfig::rebalance(crate::generators::GeneratorSpec::Smote { k: 5 }),
                PipelineConfig::rebalance(crate::generators::GeneratorSpec::Bootstrap),
            ],
            n_eval: default_n_eval(),
            output_dir: default_output_dir(),
            master_seed: 0,
            workers: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_reader(File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.train_sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(
                "dims, train_sizes and seeds must be nonempty",
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        if self.dims.contains(&0) || self.train_sizes.contains(&0) {
            return Err(Error::config("dimensions and train sizes must be positive"));
        }
        if self.n_eval < 10_000 {
            return Err(Error::config(format!(
                "n_eval must be >= 10000, got {}",
                self.n_eval
            )));
        }
        let mut keys: Vec<String> = self.methods.iter().map(|m| m.method.key()).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("methods must be distinct"));
        }
        for &d in &self.dims {
            self.spec_template.build(d)?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &n in &self.train_sizes {
                for &seed in &self.seeds {
                    for (m, _) in self.methods.iter().enumerate() {
                        out.push(CellKey {
                            d,
                            n,
                            seed,
                            method: m,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CellKey {
    d: usize,
    n: usize,
    seed: u64,
    method: usize,
}

/// Data seed: shared by every method of a (d, n, seed) triple, so method
/// comparisons are paired on identical training data.
pub fn data_seed(master: u64, d: usize, n: usize, seed: u64) -> u64 {
    rng::split(master, &[rng::label("data"), d as u64, n as u64, seed])
}

/// Evaluation seed, also shared across methods (common random numbers).
pub fn eval_seed(master: u64, d: usize, n: usize, seed: u64) -> u64 {
    rng::split(master, &[rng::label("eval"), d as u64, n as u64, seed])
}

/// Seed handed to the pipeline (generator draws, subsampling).
pub fn method_seed(master: u64, d: usize, n: usize, seed: u64, method: &Method) -> u64 {
    rng::split(
        master,
        &[
            rng::label("method"),
            d as u64,
            n as u64,
            seed,
            rng::label(&method.key()),
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub method: String,
    pub generator: String,
    pub j: Option<usize>,
    pub risk: Option<RiskReport>,
    /// `ok`, `ridge_fallback`, or `error:<tag>`.
    pub status: String,
    pub manifest: Option<RunManifest>,
}

impl CellResult {
    pub fn is_ok(&self) -> bool {
        self.risk.is_some()
    }

    fn identity(&self) -> (usize, usize, u64, String, String) {
        (
            self.d,
            self.n,
            self.seed,
            self.method.clone(),
            self.generator.clone(),
        )
    }

    fn to_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let r = self.risk.as_ref();
        vec![
            self.d.to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            self.method.clone(),
            self.generator.clone(),
            self.j.map(|j| j.to_string()).unwrap_or_default(),
            opt(r.map(|r| r.excess_risk)),
            opt(r.map(|r| r.excess_risk_se)),
            opt(r.map(|r| r.est_error_q)),
            opt(r.map(|r| r.type2_error)),
            self.status.clone(),
        ]
    }

    fn from_record(rec: &csv::StringRecord, n_eval: usize) -> Result<Self> {
        if rec.len() != 11 {
            return Err(Error::config(format!(
                "results row has {} fields",
                rec.len()
            )));
        }
        let bad = |what: &str| Error::config(format!("results row: bad {what}"));
        let num = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse().map(Some).map_err(|_| bad("number"))
            }
        };
        let risk = match (num(6)?, num(7)?, num(8)?, num(9)?) {
            (Some(excess_risk), Some(excess_risk_se), Some(est_error_q), Some(type2_error)) => {
                Some(RiskReport {
                    excess_risk,
                    excess_risk_se,
                    est_error_q,
                    type2_error,
                    n_eval,
                })
            }
            _ => None,
        };
        Ok(CellResult {
            d: rec[0].parse().map_err(|_| bad("d"))?,
            n: rec[1].parse().map_err(|_| bad("n"))?,
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            method: rec[3].to_string(),
            generator: rec[4].to_string(),
            j: if rec[5].is_empty() {
                None
            } else {
                Some(rec[5].parse().map_err(|_| bad("J"))?)
            },
            risk,
            status: rec[10].to_string(),
            manifest: None,
        })
    }
}

/// Train and evaluate one cell. Failures become an `error:<tag>` row.
pub fn run_cell(
    cfg: &ExperimentConfig,
    d: usize,
    n: usize,
    seed: u64,
    method: &PipelineConfig,
) -> CellResult {
    let mut row = CellResult {
        d,
        n,
        seed,
        method: method.method.name().into(),
        generator: method.method.detail(),
        j: None,
        risk: None,
        status: String::new(),
        manifest: None,
    };
    let outcome = (|| -> Result<(RiskReport, RunManifest)> {
        let spec = cfg.spec_template.build(d)?;
        let data = sample_observed(&spec, n, data_seed(cfg.master_seed, d, n, seed))?;
        let trained = train(
            &data,
            method,
            Some(&spec),
            method_seed(cfg.master_seed, d, n, seed, &method.method),
        )?;
        let fstar = fstar_gaussian(&spec);
        let risk = evaluate_risk(
            &trained.model,
            &fstar,
            &spec,
            &TargetSpec::balanced(),
            cfg.n_eval,
            eval_seed(cfg.master_seed, d, n, seed),
        )?;
        Ok((risk, trained.manifest))
    })();
    match outcome {
        Ok((risk, manifest)) => {
            row.j = manifest.j;
            row.status = manifest.optimizer_status.as_str().into();
            row.risk = Some(risk);
            row.manifest = Some(manifest);
        }
        Err(e) => row.status = format!("error:{}", e.tag()),
    }
    row
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub workers: Option<usize>,
}

/// Worker count: explicit option, then `RL_WORKERS`, then the config.
pub fn resolve_workers(opts: &RunOptions, cfg: &ExperimentConfig) -> Option<usize> {
    opts.workers
        .or_else(|| {
            std::env::var("RL_WORKERS")
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .or(cfg.workers)
        .filter(|&w| w > 0)
}

fn read_existing(path: &Path, n_eval: usize) -> Result<Vec<CellResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::config(format!(
            "{} does not carry the results header",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        // a torn final line from an interrupted run is recomputed
        match rec {
            Ok(rec) => match CellResult::from_record(&rec, n_eval) {
                Ok(row) => out.push(row),
                Err(_) => continue,
            },
            Err(_) => continue,
        }
    }
    Ok(out)
}

/// Run every cell of the sweep and write `results.csv` and `summary.csv`
/// into the output directory. Rows are written in canonical
/// (d, n, seed, method) order as soon as each prefix is complete.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let results_path = cfg.output_dir.join("results.csv");

    let mut known: HashMap<(usize, usize, u64, String, String), CellResult> = HashMap::new();
    if opts.resume && results_path.exists() {
        for row in read_existing(&results_path, cfg.n_eval)? {
            known.insert(row.identity(), row);
        }
    }

    let cells = cfg.cells();
    let mut slots: Vec<Option<CellResult>> = cells
        .iter()
        .map(|c| {
            let m = &cfg.methods[c.method].method;
            known.remove(&(c.d, c.n, c.seed, m.name().to_string(), m.detail()))
        })
        .collect();
    let todo: Vec<(usize, CellKey)> = cells
        .iter()
        .enumerate()
        .filter(|(i, _)| slots[*i].is_none())
        .map(|(i, c)| (i, *c))
        .collect();

    // existing rows are already in memory, so the file is rewritten in place
    let mut out = BufWriter::new(File::create(&results_path)?);
    writeln!(out, "{RESULTS_HEADER}")?;
    let mut written = 0usize;
    let mut flush_ready = |slots: &[Option<CellResult>], out: &mut BufWriter<File>| -> Result<()> {
        while written < slots.len() {
            let Some(row) = &slots[written] else { break };
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(row.to_record())?;
            out.write_all(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            written += 1;
        }
        out.flush()?;
        Ok(())
    };
    flush_ready(&slots, &mut out)?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = resolve_workers(opts, cfg) {
            b = b.num_threads(w);
        }
        b.build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
    };
    let (tx, rx) = mpsc::channel::<(usize, CellResult)>();
    std::thread::scope(|scope| -> Result<()> {
        let todo = &todo;
        scope.spawn(move || {
            pool.install(|| {
                todo.par_iter().for_each_with(tx, |tx, (i, c)| {
                    let row = run_cell(cfg, c.d, c.n, c.seed, &cfg.methods[c.method]);
                    let _ = tx.send((*i, row));
                });
            });
        });
        for (i, row) in rx {
            slots[i] = Some(row);
            flush_ready(&slots, &mut out)?;
        }
        Ok(())
    })?;
    drop(out);

    let results: Vec<CellResult> = slots
        .into_iter()
        .map(|s| s.expect("all cells filled"))
        .collect();
    if let Some((num, den)) = default_ratio_pair(cfg) {
        let table = summarize_ratio(&results, &num, &den);
        write_summary(
            &cfg.output_dir.join("summary.csv"),
            &table,
            &num,
            &den,
            cfg.spec_template.pi0,
        )?;
    }
    Ok(results)
}

/// First SMOTE and bootstrap rebalancing methods, as `generator` labels.
pub fn default_ratio_pair(cfg: &ExperimentConfig) -> Option<(String, String)> {
    let label = |pred: &dyn Fn(&str) -> bool| {
        cfg.methods
            .iter()
            .filter(|m| matches!(m.method, Method::Rebalance { .. }))
            .map(|m| m.method.detail())
            .find(|d| pred(d))
    };
    let num = label(&|d| d.starts_with("smote"))?;
    let den = label(&|d| d == "bootstrap")?;
    Some((num, den))
}

/// Median and interquartile range of the paired per-seed ratio for one
/// (d, n) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub d: usize,
    pub n: usize,
    pub pairs: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Pairs where an excess risk was <= 0 and got floored at its SE.
    pub flagged: usize,
    /// Seeds missing one side of the pair (or failed).
    pub missing: usize,
}

fn floored(r: &RiskReport) -> (f64, bool) {
    if r.excess_risk > 0.0 {
        (r.excess_risk, false)
    } else {
        (r.excess_risk_se.max(f64::MIN_POSITIVE), true)
    }
}

/// Ratio `excess_risk(numerator) / excess_risk(denominator)` paired per
/// seed, keyed by the `generator` column (e.g. `smote:k=5` over
/// `bootstrap`).
pub fn summarize_ratio(
    results: &[CellResult],
    numerator: &str,
    denominator: &str,
) -> Vec<RatioRow> {
    type BySeed<'a> = BTreeMap<u64, &'a CellResult>;
    let mut groups: BTreeMap<(usize, usize), (BySeed, BySeed)> = BTreeMap::new();
    for r in results {
        let e = groups.entry((r.d, r.n)).or_default();
        if r.generator == numerator {
            e.0.insert(r.seed, r);
        }
        if r.generator == denominator {
            e.1.insert(r.seed, r);
        }
    }
    let mut out = Vec::new();
    for ((d, n), (nums, dens)) in groups {
        if nums.is_empty() && dens.is_empty() {
            continue;
        }
        let mut seeds: Vec<u64> = nums.keys().chain(dens.keys()).copied().collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut ratios = Vec::new();
        let (mut flagged, mut missing) = (0, 0);
        for s in seeds {
            match (
                nums.get(&s).and_then(|r| r.risk.as_ref()),
                dens.get(&s).and_then(|r| r.risk.as_ref()),
            ) {
                (Some(a), Some(b)) => {
                    let (ea, fa) = floored(a);
                    let (eb, fb) = floored(b);
                    if fa || fb {
                        flagged += 1;
                    }
                    ratios.push(ea / eb);
                }
                _ => missing += 1,
            }
        }
        out.push(RatioRow {
            d,
            n,
            pairs: ratios.len(),
            median: median(&ratios),
            q25: quantile(&ratios, 0.25),
            q75: quantile(&ratios, 0.75),
            flagged,
            missing,
        });
    }
    out
}

/// Shape `n1^(1/2 - 1/d)` of the predicted ratio, with `n1 = (1 - pi0) n`.
pub fn theory_shape(d: usize, n: usize, pi0: f64) -> f64 {
    ((1.0 - pi0) * n as f64).powf(0.5 - 1.0 / d as f64)
}

pub fn write_summary(path: &Path, rows: &[RatioRow], num: &str, den: &str, pi0: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER.split(','))?;
    let f = |v: f64| {
        if v.is_nan() {
            String::new()
        } else {
            v.to_string()
        }
    };
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.n.to_string(),
            num.to_string(),
            den.to_string(),
            r.pairs.to_string(),
            f(r.median),
            f(r.q25),
            f(r.q75),
            r.flagged.to_string(),
            r.missing.to_string(),
            f(theory_shape(r.d, r.n, pi0)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Look up a ratio row.
pub fn ratio_at(rows: &[RatioRow], d: usize, n: usize) -> Option<&RatioRow> {
    rows.iter().find(|r| r.d == d && r.n == n)
}
