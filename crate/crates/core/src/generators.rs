//! Synthetic minority generators: bootstrap (random oversampling), SMOTE
//! and Gaussian-kernel KDE sampling, plus the rule for how many synthetic
//! points to draw.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

/// Procedure for drawing synthetic minority covariates.
///
/// Parsed from and printed as `bootstrap`, `smote:k=5`, `kde:h=auto` or
/// `kde:h=0.3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GeneratorSpec {
    Bootstrap,
    Smote { k: usize },
    Kde { bandwidth: Bandwidth },
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::Bootstrap => write!(f, "bootstrap"),
            GeneratorSpec::Smote { k } => write!(f, "smote:k={k}"),
            GeneratorSpec::Kde {
                bandwidth: Bandwidth::Auto,
            } => write!(f, "kde:h=auto"),
            GeneratorSpec::Kde {
                bandwidth: Bandwidth::Fixed(h),
            } => write!(f, "kde:h={h}"),
        }
    }
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let value = |key: &str| -> Result<&str> {
            let arg = arg.ok_or_else(|| Error::config(format!("{s:?}: missing {key}=...")))?;
            arg.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::config(format!("{s:?}: expected {key}=<value>")))
        };
        match kind {
            "bootstrap" if arg.is_none() => Ok(GeneratorSpec::Bootstrap),
            "smote" => {
                let k: usize = value("k")?
                    .parse()
                    .map_err(|e| Error::config(format!("{s:?}: bad k: {e}")))?;
                if k == 0 {
                    return Err(Error::config("smote k must be at least 1"));
                }
                Ok(GeneratorSpec::Smote { k })
            }
            "kde" => {
                let h = value("h")?;
                let bandwidth = if h == "auto" {
                    Bandwidth::Auto
                } else {
                    let h: f64 = h
                        .parse()
                        .map_err(|e| Error::config(format!("{s:?}: bad bandwidth: {e}")))?;
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::config("kde bandwidth must be positive"));
                    }
                    Bandwidth::Fixed(h)
                };
                Ok(GeneratorSpec::Kde { bandwidth })
            }
            _ => Err(Error::config(format!("unknown generator {s:?}"))),
        }
    }
}

impl TryFrom<String> for GeneratorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GeneratorSpec> for String {
    fn from(g: GeneratorSpec) -> Self {
        g.to_string()
    }
}

/// One SMOTE draw: `point = (1 - lambda) * X[source] + lambda * X[partner]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteDraw {
    pub source: usize,
    pub partner: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub points: Vec<Vec<f64>>,
    pub generator: GeneratorSpec,
    pub source_size: usize,
    /// Per-point generation record, filled by SMOTE only.
    pub smote_trace: Option<Vec<SmoteDraw>>,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JMode {
    /// Uses the true majority prior: `ceil((2 pi0 - 1) n)`.
    Exact { pi0: f64 },
    /// Uses the empirical prior, which reduces to `n0 - n1`.
    Estimated,
}

/// Number of synthetic minority points to add, never negative.
pub fn choose_j(n: usize, n0: usize, n1: usize, mode: JMode) -> Result<usize> {
    if n != n0 + n1 {
        return Err(Error::config(format!("n = {n} but n0 + n1 = {}", n0 + n1)));
    }
    Ok(match mode {
        JMode::Estimated => n0.saturating_sub(n1),
        JMode::Exact { pi0 } => {
            let raw = (2.0 * pi0 - 1.0) * n as f64;
            // (2 * 0.9 - 1) * 1000 evaluates to 800.0000000000001
            let j = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
            if j > 0.0 {
                j as usize
            } else {
                0
            }
        }
    })
}

fn check_points(minority: &[Vec<f64>]) -> Result<()> {
    let d = minority.first().map_or(0, Vec::len);
    if minority.iter().any(|p| p.len() != d) {
        return Err(Error::config("minority points differ in dimension"));
    }
    Ok(())
}

/// Uniform draws with replacement from the minority covariates.
pub fn bootstrap_sample(minority: &[Vec<f64>], j: usize, seed: u64) -> Result<SyntheticBatch> {
    check_points(minority)?;
    if j > 0 && minority.is_empty() {
        return Err(Error::insufficient(
            "bootstrap needs at least one minority point",
        ));
    }
    let mut r = rng::stream(seed);
    let n1 = minority.len();
    let points = (0..j)
        .map(|_| minority[r.random_range(0..n1)].clone())
        .collect();
    Ok(SyntheticBatch {
        points,
        generator: GeneratorSpec::Bootstrap,
        source_size: n1,
        smote_trace: None,
    })
}

/// SMOTE: pick a minority point uniformly, one of its `k` nearest other
/// minority points uniformly, and a uniform point on the segment between
/// them.
pub fn smote_sample(
    minority: &[Vec<f64>],
    k: usize,
    j: usize,
    seed: u64,
) -> Result<SyntheticBatch> {
    check_points(minority)?;
    if k == 0 {
        return Err(Error::config("smote k must be at least 1"));
    }
    let generator = GeneratorSpec::Smote { k };
    let n1 = minority.len();
    if j == 0 {
        return Ok(SyntheticBatch {
            points: Vec::new(),
            generator,
            source_size: n1,
            smote_trace: Some(Vec::new()),
        });
    }
    if n1 <= k {
        return Err(Error::insufficient(format!(
            "smote with k = {k} needs more than {k} minority points, got {n1}"
        )));
    }
    let index = KnnIndex::new(minority.to_vec())?;
    let neighbors = index.all_knn(k)?;
    let mut r = rng::stream(seed);
    let mut points = Vec::with_capacity(j);
    let mut trace = Vec::with_capacity(j);
    for _ in 0..j {
        let source = r.random_range(0..n1);
        let partner = neighbors[source][r.random_range(0..k)];
        let lambda: f64 = r.random();
        let a = &minority[source];
        let b = &minority[partner];
        points.push(a.iter().zip(b).map(|(x, y)| x + lambda * (y - x)).collect());
        trace.push(SmoteDraw {
            source,
            partner,
            lambda,
        });
    }
    Ok(SyntheticBatch {
        points,
        generator,
        source_size: n1,
        smote_trace: Some(trace),
    })
}

/// Rule-of-thumb bandwidth `1.06 * s * n^(-1/(4+d))`, with `s` the mean of
/// the per-coordinate sample standard deviations.
pub fn silverman_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    check_points(points)?;
    let n = points.len();
    if n < 2 {
        return Err(Error::insufficient(
            "automatic bandwidth needs at least two points",
        ));
    }
    let d = points[0].len();
    let nf = n as f64;
    let pooled = (0..d)
        .map(|c| {
            let mean = points.iter().map(|p| p[c]).sum::<f64>() / nf;
            let var = points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            var.sqrt()
        })
        .sum::<f64>()
        / d as f64;
    let h = 1.06 * pooled * nf.powf(-1.0 / (4.0 + d as f64));
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::insufficient(
            "automatic bandwidth is zero: minority points have no spread",
        ))
    }
}

/// Draws from the Gaussian-kernel density estimate: a uniformly chosen
/// minority point plus `h * N(0, I)` noise.
pub fn kde_sample(
    minority: &[Vec<f64>],
    bandwidth: Bandwidth,
    j: usize,
    seed: u64,
) -> Result<SyntheticBatch> {
    check_points(minority)?;
    let generator = GeneratorSpec::Kde { bandwidth };
    let n1 = minority.len();
    if j == 0 {
        return Ok(SyntheticBatch {
            points: Vec::new(),
            generator,
            source_size: n1,
            smote_trace: None,
        });
    }
    if minority.is_empty() {
        return Err(Error::insufficient("kde needs at least one minority point"));
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(minority)?,
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::config(format!(
                "kde bandwidth must be positive, got {h}"
            )))
        }
    };
    let mut r = rng::stream(seed);
    let points = (0..j)
        .map(|_| {
            let src = &minority[r.random_range(0..n1)];
            src.iter()
                .map(|x| x + h * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(SyntheticBatch {
        points,
        generator,
        source_size: n1,
        smote_trace: None,
    })
}

/// Dispatch on a [`GeneratorSpec`].
pub fn generate(
    spec: &GeneratorSpec,
    minority: &[Vec<f64>],
    j: usize,
    seed: u64,
) -> Result<SyntheticBatch> {
    match *spec {
        GeneratorSpec::Bootstrap => bootstrap_sample(minority, j, seed),
        GeneratorSpec::Smote { k } => smote_sample(minority, k, j, seed),
        GeneratorSpec::Kde { bandwidth } => kde_sample(minority, bandwidth, j, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn parse_and_print() {
        for s in ["bootstrap", "smote:k=5", "kde:h=auto", "kde:h=0.3"] {
            let g: GeneratorSpec = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        assert_eq!(
            "smote:k=3".parse::<GeneratorSpec>().unwrap(),
            GeneratorSpec::Smote { k: 3 }
        );
        for bad in [
            "smote",
            "smote:k=0",
            "smote:j=2",
            "kde:h=-1",
            "kde:h=0",
            "diffusion",
            "bootstrap:k=1",
        ] {
            assert!(bad.parse::<GeneratorSpec>().is_err(), "{bad}");
        }
        let json = serde_json::to_string(&GeneratorSpec::Smote { k: 5 }).unwrap();
        assert_eq!(json, "\"smote:k=5\"");
    }

    #[test]
    fn choose_j_rules() {
        assert_eq!(choose_j(1000, 900, 100, JMode::Estimated).unwrap(), 800);
        assert_eq!(choose_j(10, 5, 5, JMode::Estimated).unwrap(), 0);
        assert_eq!(choose_j(10, 2, 8, JMode::Estimated).unwrap(), 0);
        assert_eq!(
            choose_j(1000, 900, 100, JMode::Exact { pi0: 0.9 }).unwrap(),
            800
        );
        assert_eq!(
            choose_j(1001, 900, 101, JMode::Exact { pi0: 0.9 }).unwrap(),
            801
        );
        assert_eq!(choose_j(100, 50, 50, JMode::Exact { pi0: 0.3 }).unwrap(), 0);
        assert!(choose_j(10, 5, 4, JMode::Estimated).is_err());
    }

    #[test]
    fn bootstrap_edge_cases() {
        let b = bootstrap_sample(&[vec![1.0]], 0, 1).unwrap();
        assert!(b.is_empty());
        let v = vec![2.0, -1.0];
        let b = bootstrap_sample(std::slice::from_ref(&v), 50, 1).unwrap();
        assert!(b.points.iter().all(|p| *p == v));
        assert!(matches!(
            bootstrap_sample(&[], 3, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(bootstrap_sample(&[], 0, 1).unwrap().is_empty());
    }

    #[test]
    fn bootstrap_index_frequencies() {
        let src: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let b = bootstrap_sample(&src, 100_000, 9).unwrap();
        let mut counts = [0usize; 10];
        for p in &b.points {
            counts[p[0] as usize] += 1;
        }
        let tol = 4.0 * (0.1f64 * 0.9 / 1e5).sqrt() * 1e5;
        for c in counts {
            assert!((c as f64 - 1e4).abs() <= tol, "{counts:?}");
        }
    }

    #[test]
    fn smote_two_points_on_segment() {
        let a = vec![0.0, 1.0];
        let b = vec![2.0, 5.0];
        let batch = smote_sample(&[a.clone(), b.clone()], 1, 500, 4).unwrap();
        for p in &batch.points {
            let t = p[0] / 2.0;
            assert!((0.0..=1.0).contains(&t));
            assert!((p[1] - (1.0 + 4.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn smote_identical_points() {
        let v = vec![0.5, 0.25, -3.0];
        let batch = smote_sample(&vec![v.clone(); 6], 3, 200, 2).unwrap();
        assert!(batch.points.iter().all(|p| *p == v));
    }

    #[test]
    fn smote_collinear_stays_in_hull() {
        // points on the line y = 2x + 1, x in {0, 1, 3}
        let src = vec![vec![0.0, 1.0], vec![1.0, 3.0], vec![3.0, 7.0]];
        let batch = smote_sample(&src, 2, 10_000, 6).unwrap();
        for p in &batch.points {
            assert!((p[1] - (2.0 * p[0] + 1.0)).abs() < 1e-12);
            assert!(p[0] >= 0.0 && p[0] <= 3.0);
        }
        // with k = 2 every pair of points is a segment
        let trace = batch.smote_trace.unwrap();
        let pairs: std::collections::BTreeSet<(usize, usize)> =
            trace.iter().map(|t| (t.source, t.partner)).collect();
        assert_eq!(pairs.len(), 6);
    }

    #[test]
    fn smote_needs_k_plus_one_points() {
        let src = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            smote_sample(&src, 2, 10, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(smote_sample(&src, 2, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn kde_tiny_bandwidth_hugs_sources() {
        let src = vec![vec![1.0, 2.0], vec![-4.0, 0.5]];
        let batch = kde_sample(&src, Bandwidth::Fixed(1e-12), 1000, 8).unwrap();
        for p in &batch.points {
            let near = src
                .iter()
                .any(|s| s.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!(near);
        }
    }

    #[test]
    fn kde_single_atom_moments() {
        let batch = kde_sample(&[vec![0.0]], Bandwidth::Fixed(1.0), 100_000, 3).unwrap();
        let xs: Vec<f64> = batch.points.iter().map(|p| p[0]).collect();
        let mean = xs.iter().sum::<f64>() / 1e5;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (1e5 - 1.0);
        assert!(mean.abs() < 4.0 / 1e5f64.sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn silverman_on_normal_sample() {
        let src: Vec<Vec<f64>> = {
            let mut r = rng::stream(10);
            (0..100)
                .map(|_| vec![r.sample::<f64, _>(StandardNormal)])
                .collect()
        };
        let h = silverman_bandwidth(&src).unwrap();
        // independent evaluation of 1.06 * sd * n^(-1/5)
        let xs: Vec<f64> = src.iter().map(|p| p[0]).collect();
        let m = xs.iter().sum::<f64>() / 100.0;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 99.0).sqrt();
        assert!((h - 1.06 * sd * 100f64.powf(-0.2)).abs() < 1e-14);
        assert!(silverman_bandwidth(&[vec![1.0]]).is_err());
        assert!(silverman_bandwidth(&[vec![1.0], vec![1.0]]).is_err());
        let b = kde_sample(&src, Bandwidth::Auto, 10, 1).unwrap();
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn kde_matches_analytic_cdf() {
        let mut r = rng::stream(44);
        let src: Vec<Vec<f64>> = (0..2000).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
        let h = 0.3;
        let batch = kde_sample(&src, Bandwidth::Fixed(h), 10_000, 45).unwrap();
        let mut xs: Vec<f64> = batch.points.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        let cdf =
            |x: f64| src.iter().map(|s| normal_cdf((x - s[0]) / h)).sum::<f64>() / src.len() as f64;
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS = {ks}");
    }

    #[test]
    fn k1_partner_is_true_nearest_neighbor() {
        let mut r = rng::stream(71);
        let src: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![r.random(), r.random(), r.random()])
            .collect();
        let batch = smote_sample(&src, 1, 2000, 72).unwrap();
        for t in batch.smote_trace.unwrap() {
            let best = (0..src.len())
                .filter(|&j| j != t.source)
                .min_by(|&a, &b| {
                    let da: f64 = src[a]
                        .iter()
                        .zip(&src[t.source])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    let db: f64 = src[b]
                        .iter()
                        .zip(&src[t.source])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(t.partner, best);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn bootstrap_support_and_determinism(seed in any::<u64>(), n1 in 1usize..30, j in 0usize..200) {
            let mut r = rng::stream(seed);
            let src: Vec<Vec<f64>> = (0..n1).map(|_| vec![r.random(), r.random()]).collect();
            let a = bootstrap_sample(&src, j, seed).unwrap();
            prop_assert_eq!(a.len(), j);
            prop_assert!(a.points.iter().all(|p| src.contains(p)));
            prop_assert_eq!(&a, &bootstrap_sample(&src, j, seed).unwrap());
        }

        #[test]
        fn smote_points_recoverable_from_trace(seed in any::<u64>(), n1 in 2usize..40, k in 1usize..6, d in 1usize..4) {
            prop_assume!(n1 > k);
            let mut r = rng::stream(seed);
            let src: Vec<Vec<f64>> = (0..n1).map(|_| (0..d).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
            let batch = smote_sample(&src, k, 100, seed).unwrap();
            let index = KnnIndex::new(src.clone()).unwrap();
            let trace = batch.smote_trace.clone().unwrap();
            for (p, t) in batch.points.iter().zip(&trace) {
                prop_assert!((0.0..=1.0).contains(&t.lambda));
                prop_assert!(index.knn(t.source, k).unwrap().contains(&t.partner));
                for c in 0..d {
                    let rebuilt = (1.0 - t.lambda) * src[t.source][c] + t.lambda * src[t.partner][c];
                    prop_assert!((rebuilt - p[c]).abs() < 1e-10);
                }
            }
            prop_assert_eq!(&batch, &smote_sample(&src, k, 100, seed).unwrap());
        }
    }
}
