//! Batch property checks with measured values, emitted as CSV rows.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::distributions::{
    bayes_type2_error_balanced, bayes_type2_error_observed, fstar_gaussian, gstar_gaussian,
    sample_class, MixtureSpec, TargetSpec,
};
use crate::divergence::{chi2_discrete, maximal_coupling_sample, tv_discrete, DiscreteDist};
use crate::error::{Error, Result};
use crate::knn::{indegree_bound, kissing_number, KnnIndex};
use crate::model::LogisticModel;
use crate::pipelines::PluginModel;
use crate::rng;
use crate::stats::{mean_se, ols_slope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Coupling,
    Geometry,
    Formulas,
    PluginBound,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Formulas,
        Suite::Coupling,
        Suite::Geometry,
        Suite::PluginBound,
    ];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Coupling => "coupling",
            Suite::Geometry => "geometry",
            Suite::Formulas => "formulas",
            Suite::PluginBound => "plugin-bound",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupling" => Ok(Suite::Coupling),
            "geometry" => Ok(Suite::Geometry),
            "formulas" => Ok(Suite::Formulas),
            "plugin-bound" | "plugin" => Ok(Suite::PluginBound),
            _ => Err(Error::config(format!("unknown diagnostic suite {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub suite: Suite,
    pub check: String,
    pub measured: f64,
    pub reference: f64,
    /// Allowed deviation or bound the measured value is compared against.
    pub bound: f64,
    pub pass: bool,
}

pub const DIAG_HEADER: &str = "suite,check,measured,reference,bound,pass";

pub fn write_rows<W: Write>(rows: &[DiagRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(DIAG_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.suite.to_string(),
            r.check.clone(),
            r.measured.to_string(),
            r.reference.to_string(),
            r.bound.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_diagnostics(suite: Suite, seed: u64) -> Result<Vec<DiagRow>> {
    match suite {
        Suite::Formulas => formulas(seed, 1_000_000),
        Suite::Coupling => coupling(seed, 20, 100_000),
        Suite::Geometry => geometry(seed, 1000),
        Suite::PluginBound => plugin_bound(seed, 100, 1_000_000),
    }
}

/// Miss rate of `1{model(x) >= 1/2}` on `n` class-1 draws.
fn type2_mc(spec: &MixtureSpec, model: &LogisticModel, n: usize, seed: u64) -> f64 {
    let pts = sample_class(spec, 1, n, seed);
    pts.iter().filter(|x| model.margin(x) < 0.0).count() as f64 / n as f64
}

/// Closed-form type-II errors against Monte Carlo, `|z| <= 3`.
pub fn formulas(seed: u64, n: usize) -> Result<Vec<DiagRow>> {
    let mut rows = Vec::new();
    for gap in [1.0, 2.0, 3.0] {
        for pi0 in [0.5, 0.9, 0.99] {
            let spec = MixtureSpec::new(pi0, vec![0.0], vec![gap], 1.0)?;
            let cases = [
                (
                    "observed",
                    bayes_type2_error_observed(&spec)?,
                    gstar_gaussian(&spec),
                ),
                (
                    "balanced",
                    bayes_type2_error_balanced(&spec)?,
                    fstar_gaussian(&spec),
                ),
            ];
            for (i, (name, formula, model)) in cases.into_iter().enumerate() {
                let s = rng::split(
                    seed,
                    &[
                        rng::label("formulas"),
                        gap.to_bits(),
                        pi0.to_bits(),
                        i as u64,
                    ],
                );
                let mc = type2_mc(&spec, &model, n, s);
                let se = (formula * (1.0 - formula) / n as f64).sqrt();
                rows.push(DiagRow {
                    suite: Suite::Formulas,
                    check: format!("type2_{name}[gap={gap},pi0={pi0}]"),
                    measured: mc,
                    reference: formula,
                    bound: 3.0 * se,
                    pass: (mc - formula).abs() <= 3.0 * se,
                });
            }
        }
    }
    Ok(rows)
}

/// Random pair of discrete distributions on a few integer atoms with
/// partially overlapping supports.
pub fn random_pair(r: &mut rng::Stream) -> Result<(DiscreteDist, DiscreteDist)> {
    let k = r.random_range(2..=8usize);
    let draw = |r: &mut rng::Stream, offset: usize| -> Result<DiscreteDist> {
        let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let mut m: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let head: f64 = m[..k - 1].iter().sum();
        m[k - 1] = 1.0 - head;
        DiscreteDist::new(
            m.into_iter()
                .enumerate()
                .map(|(i, v)| (vec![(i + offset) as f64], v))
                .collect(),
        )
    };
    let shift = r.random_range(0..=2usize);
    let p = draw(r, 0)?;
    let q = draw(r, shift)?;
    Ok((p, q))
}

/// Chi-square goodness-of-fit p-value of observed frequencies against
/// expected masses (atoms with zero expected mass must be empty).
pub fn gof_pvalue(observed_freq: &[f64], expected: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed_freq.iter().zip(expected) {
        if e > 0.0 {
            stat += (o * nf - e * nf).powi(2) / (e * nf);
            cells += 1;
        } else if o > 0.0 {
            return 0.0;
        }
    }
    if cells < 2 {
        return 1.0;
    }
    let chi = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    1.0 - chi.cdf(stat)
}

/// Maximal coupling mismatch against TV and second-marginal fit.
pub fn coupling(seed: u64, pairs: usize, n: usize) -> Result<Vec<DiagRow>> {
    let mut r = rng::stream(rng::split(seed, &[rng::label("coupling")]));
    let mut rows = Vec::new();
    for i in 0..pairs {
        let (p1, p2) = random_pair(&mut r)?;
        let tv = tv_discrete(&p1, &p2);
        let trace = maximal_coupling_sample(&p1, &p2, n, r.random())?;
        let sigma = (tv * (1.0 - tv) / n as f64).sqrt();
        let mis = trace.mismatch_fraction();
        rows.push(DiagRow {
            suite: Suite::Coupling,
            check: format!("mismatch_vs_tv[{i}]"),
            measured: mis,
            reference: tv,
            bound: 4.0 * sigma,
            pass: (mis - tv).abs() <= 4.0 * sigma,
        });
        let expected: Vec<f64> = trace.atoms.iter().map(|a| p2.mass(a)).collect();
        let pv = gof_pvalue(&trace.second_marginal(), &expected, n);
        rows.push(DiagRow {
            suite: Suite::Coupling,
            check: format!("u2_marginal_gof_pvalue[{i}]"),
            measured: pv,
            reference: 1e-3,
            bound: 1e-3,
            pass: pv >= 1e-3,
        });
    }
    Ok(rows)
}

/// Uniform point in the unit cube (`d = 1`) or unit ball (`d >= 2`).
fn uniform_point(r: &mut rng::Stream, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![r.random()];
    }
    loop {
        let p: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return p;
        }
    }
}

/// Random configuration used by the in-degree check: uniform in the unit
/// cube with `1e-9` jitter.
pub fn jittered_cloud(r: &mut rng::Stream, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| r.random::<f64>() + 1e-9 * r.random_range(-1.0..1.0))
                .collect()
        })
        .collect()
}

/// Max 1-NN in-degree over `configs` random clouds of 200 points.
pub fn max_indegree_over(seed: u64, d: usize, k: usize, configs: usize) -> Result<usize> {
    let mut worst = 0;
    let mut r = rng::stream(rng::split(
        seed,
        &[rng::label("indegree"), d as u64, k as u64],
    ));
    for _ in 0..configs {
        let idx = KnnIndex::new(jittered_cloud(&mut r, 200, d))?;
        worst = worst.max(idx.max_indegree(k)?);
    }
    Ok(worst)
}

/// `(log2 n, mean r_k)` sweep for `n = 2^7 .. 2^13`.
pub fn rk_sweep(seed: u64, d: usize, k: usize) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = rng::stream(rng::split(seed, &[rng::label("rk"), d as u64, k as u64]));
    (7..=13)
        .map(|e| {
            let n = 1usize << e;
            let pts: Vec<Vec<f64>> = (0..n).map(|_| uniform_point(&mut r, d)).collect();
            let (mean, max) = KnnIndex::new(pts)?.rk_stats(k)?;
            Ok((n, mean, max))
        })
        .collect()
}

/// Log-log slope of mean r_k against n.
pub fn rk_slope(sweep: &[(usize, f64, f64)]) -> f64 {
    let x: Vec<f64> = sweep.iter().map(|s| (s.0 as f64).ln()).collect();
    let y: Vec<f64> = sweep.iter().map(|s| s.1.ln()).collect();
    ols_slope(&x, &y)
}

pub fn geometry(seed: u64, configs: usize) -> Result<Vec<DiagRow>> {
    let mut rows = Vec::new();
    for d in 1..=3 {
        let tau = kissing_number(d).expect("tabulated") as f64;
        let worst = max_indegree_over(seed, d, 1, configs)? as f64;
        rows.push(DiagRow {
            suite: Suite::Geometry,
            check: format!("max_1nn_indegree[d={d}]"),
            measured: worst,
            reference: tau,
            bound: tau,
            pass: worst <= tau,
        });
        let worst5 = max_indegree_over(seed, d, 5, configs.min(100))? as f64;
        rows.push(DiagRow {
            suite: Suite::Geometry,
            check: format!("max_5nn_indegree[d={d}]"),
            measured: worst5,
            reference: indegree_bound(5, d),
            bound: indegree_bound(5, d),
            pass: worst5 <= indegree_bound(5, d),
        });
    }
    for d in [1, 2, 4] {
        let slope = rk_slope(&rk_sweep(seed, d, 1)?);
        let target = -1.0 / d as f64;
        rows.push(DiagRow {
            suite: Suite::Geometry,
            check: format!("rk_loglog_slope[d={d}]"),
            measured: slope,
            reference: target,
            bound: 0.2,
            pass: (slope - target).abs() <= 0.2,
        });
    }
    Ok(rows)
}

/// One plug-in bound evaluation for a logit perturbation `delta(x) =
/// a + v.x` of the source conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluginBoundCheck {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

impl PluginBoundCheck {
    pub fn slack(&self) -> f64 {
        3.0 * (self.lhs_se.powi(2) + self.rhs_se.powi(2)).sqrt()
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + self.slack()
    }
}

fn l2_with_se(sq: &[f64]) -> (f64, f64) {
    let (m, se) = mean_se(sq);
    let root = m.sqrt();
    // delta method for sqrt of a mean
    let se_root = if root > 0.0 { se / (2.0 * root) } else { 0.0 };
    (root, se_root)
}

/// `||f_plug - f*||_{Q_X}` against `(sqrt(pi0/2)/pi1) ||g_hat - g*||_{P_X}`
/// on fixed covariate draws from `Q_X` and `P_X`.
pub fn plugin_bound_check(
    spec: &MixtureSpec,
    offset: f64,
    slope: &[f64],
    q_draws: &[Vec<f64>],
    p_draws: &[Vec<f64>],
) -> Result<PluginBoundCheck> {
    let g = gstar_gaussian(spec);
    let f = fstar_gaussian(spec);
    let w: Vec<f64> = g.w().iter().zip(slope).map(|(a, b)| a + b).collect();
    let g_hat = LogisticModel::new(w, g.b() + offset);
    let plug = PluginModel::new(g_hat.clone(), spec.pi0())?;
    let lhs_sq: Vec<f64> = q_draws
        .iter()
        .map(|x| (plug.predict(x) - f.predict(x)).powi(2))
        .collect();
    let rhs_sq: Vec<f64> = p_draws
        .iter()
        .map(|x| (g_hat.predict(x) - g.predict(x)).powi(2))
        .collect();
    let c = (spec.pi0() / 2.0).sqrt() / spec.pi1();
    let (lhs, lhs_se) = l2_with_se(&lhs_sq);
    let (r, r_se) = l2_with_se(&rhs_sq);
    Ok(PluginBoundCheck {
        lhs,
        lhs_se,
        rhs: c * r,
        rhs_se: c * r_se,
    })
}

/// Covariate draws from the mixture with the given target prior.
pub fn covariates(
    spec: &MixtureSpec,
    target: &TargetSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(crate::distributions::sample_target(spec, target, n, seed)?
        .samples()
        .iter()
        .map(|s| s.x.clone())
        .collect())
}

pub fn plugin_bound(seed: u64, perturbations: usize, n: usize) -> Result<Vec<DiagRow>> {
    let spec = MixtureSpec::scaled_ones(0.9, 2, 1.0)?;
    let q = covariates(
        &spec,
        &TargetSpec::balanced(),
        n,
        rng::split(seed, &[rng::label("qx")]),
    )?;
    let p = covariates(
        &spec,
        &TargetSpec::new(spec.pi0())?,
        n,
        rng::split(seed, &[rng::label("px")]),
    )?;
    let mut r = rng::stream(rng::split(seed, &[rng::label("perturb")]));
    let mut rows = Vec::new();
    for i in 0..perturbations {
        // first case is the constant logit shift of 0.1
        let (offset, slope) = if i == 0 {
            (0.1, vec![0.0; spec.dim()])
        } else {
            let scale = 10f64.powf(r.random_range(-2.0..0.5));
            let offset = scale * r.random_range(-1.0..1.0);
            let slope: Vec<f64> = (0..spec.dim())
                .map(|_| scale * r.random_range(-1.0..1.0))
                .collect();
            (offset, slope)
        };
        let chk = plugin_bound_check(&spec, offset, &slope, &q, &p)?;
        rows.push(DiagRow {
            suite: Suite::PluginBound,
            check: format!("plugin_l2_bound[{i}]"),
            measured: chk.lhs,
            reference: chk.rhs,
            bound: chk.rhs + chk.slack(),
            pass: chk.holds(),
        });
    }
    Ok(rows)
}

/// In-degree histogram `(degree, count)` pooled over random clouds.
pub fn indegree_histogram(
    seed: u64,
    d: usize,
    k: usize,
    configs: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut r = rng::stream(rng::split(
        seed,
        &[rng::label("histogram"), d as u64, k as u64],
    ));
    let mut hist: Vec<usize> = Vec::new();
    for _ in 0..configs {
        for deg in KnnIndex::new(jittered_cloud(&mut r, 200, d))?.indegrees(k)? {
            if deg >= hist.len() {
                hist.resize(deg + 1, 0);
            }
            hist[deg] += 1;
        }
    }
    Ok(hist.into_iter().enumerate().collect())
}

/// Plain CSV table with a header row.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<String>], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Equal-weight mixture of two discrete distributions.
pub fn midpoint(p: &DiscreteDist, q: &DiscreteDist) -> Result<DiscreteDist> {
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
    for (a, _) in p.atoms().iter().chain(q.atoms()) {
        if !atoms.iter().any(|(b, _)| b == a) {
            atoms.push((a.clone(), 0.5 * (p.mass(a) + q.mass(a))));
        }
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    DiscreteDist::new(atoms)
}

pub const DIVERGENCE_HEADER: [&str; 6] =
    ["pair", "atoms", "tv", "chi2", "half_sqrt_chi2", "mismatch"];

/// TV, chi-square (against the pair's midpoint as dominating measure) and
/// coupling mismatch for random discrete pairs.
pub fn divergence_table(seed: u64, pairs: usize, n: usize) -> Result<Vec<Vec<String>>> {
    let mut r = rng::stream(rng::split(seed, &[rng::label("divergence-table")]));
    (0..pairs)
        .map(|i| {
            let (p1, pt) = random_pair(&mut r)?;
            let q = midpoint(&p1, &pt)?;
            let chi2 = chi2_discrete(&pt, &p1, &q)?;
            let trace = maximal_coupling_sample(&pt, &p1, n, r.random())?;
            Ok(vec![
                i.to_string(),
                q.atoms().len().to_string(),
                tv_discrete(&pt, &p1).to_string(),
                chi2.to_string(),
                (0.5 * chi2.sqrt()).to_string(),
                trace.mismatch_fraction().to_string(),
            ])
        })
        .collect()
}

pub const HISTOGRAM_HEADER: [&str; 4] = ["d", "k", "indegree", "count"];

pub fn histogram_table(
    seed: u64,
    dims: &[usize],
    k: usize,
    configs: usize,
) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for &d in dims {
        for (deg, count) in indegree_histogram(seed, d, k, configs)? {
            rows.push(vec![
                d.to_string(),
                k.to_string(),
                deg.to_string(),
                count.to_string(),
            ]);
        }
    }
    Ok(rows)
}

pub const RK_HEADER: [&str; 5] = ["d", "k", "n", "mean_rk", "max_rk"];

pub fn rk_table(seed: u64, dims: &[usize], k: usize) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for &d in dims {
        for (n, mean, max) in rk_sweep(seed, d, k)? {
            rows.push(vec![
                d.to_string(),
                k.to_string(),
                n.to_string(),
                mean.to_string(),
                max.to_string(),
            ]);
        }
    }
    Ok(rows)
}
