//! Source and target label-shift distributions with Gaussian class
//! conditionals `N(mu_y, sigma^2 I)`.
//!
//! The observed (source) distribution draws `y ~ Bernoulli(pi1)` with a
//! small minority prior; the target keeps the same class conditionals but
//! reweights the labels, the balanced target using `1/2` for each class.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogisticModel;
use crate::rng;
use crate::stats::{dot, normal_cdf};

/// Class priors and isotropic Gaussian class conditionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureSpec", into = "RawMixtureSpec")]
pub struct MixtureSpec {
    pi0: f64,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMixtureSpec {
    pi0: f64,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    sigma: f64,
}

impl TryFrom<RawMixtureSpec> for MixtureSpec {
    type Error = Error;

    fn try_from(raw: RawMixtureSpec) -> Result<Self> {
        MixtureSpec::new(raw.pi0, raw.mu0, raw.mu1, raw.sigma)
    }
}

impl From<MixtureSpec> for RawMixtureSpec {
    fn from(s: MixtureSpec) -> Self {
        RawMixtureSpec {
            pi0: s.pi0,
            mu0: s.mu0,
            mu1: s.mu1,
            sigma: s.sigma,
        }
    }
}

impl MixtureSpec {
    pub fn new(pi0: f64, mu0: Vec<f64>, mu1: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(Error::config(format!("pi0 must lie in (0, 1), got {pi0}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if mu0.is_empty() || mu0.len() != mu1.len() {
            return Err(Error::config(format!(
                "mean dimensions differ or are empty: {} vs {}",
                mu0.len(),
                mu1.len()
            )));
        }
        if mu0.iter().chain(&mu1).any(|v| !v.is_finite()) {
            return Err(Error::config("means must be finite"));
        }
        Ok(MixtureSpec {
            pi0,
            mu0,
            mu1,
            sigma,
        })
    }

    /// Zero majority mean, minority mean `(scale/sqrt(d)) * 1_d`, unit
    /// variance. With `scale = 1` the class separation stays at one standard
    /// deviation for every `d`.
    pub fn scaled_ones(pi0: f64, dim: usize, scale: f64) -> Result<Self> {
        let v = scale / (dim as f64).sqrt();
        MixtureSpec::new(pi0, vec![0.0; dim], vec![v; dim], 1.0)
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn pi1(&self) -> f64 {
        1.0 - self.pi0
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    pub fn mean(&self, label: u8) -> &[f64] {
        if label == 0 {
            &self.mu0
        } else {
            &self.mu1
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Same class conditionals with a different majority prior.
    pub fn with_pi0(&self, pi0: f64) -> Result<Self> {
        MixtureSpec::new(pi0, self.mu0.clone(), self.mu1.clone(), self.sigma)
    }

    /// Class-conditional density `N(x; mu_label, sigma^2 I)`.
    pub fn class_density(&self, label: u8, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let s2 = self.sigma * self.sigma;
        let r2: f64 = x
            .iter()
            .zip(self.mean(label))
            .map(|(a, m)| (a - m) * (a - m))
            .sum();
        (-0.5 * r2 / s2).exp() / (2.0 * std::f64::consts::PI * s2).powf(d / 2.0)
    }

    fn draw(&self, pi1: f64, n: usize, seed: u64) -> Dataset {
        let mut rng = rng::stream(seed);
        let d = self.dim();
        let samples = (0..n)
            .map(|_| {
                let y = u8::from(rng.random::<f64>() < pi1);
                let x = self
                    .mean(y)
                    .iter()
                    .map(|m| m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                LabeledSample { x, y }
            })
            .collect();
        Dataset { samples, dim: d }
    }
}

/// Target class weights `(pi0*, pi1*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget", into = "RawTarget")]
pub struct TargetSpec {
    pi0_star: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTarget {
    pi0_star: f64,
}

impl TryFrom<RawTarget> for TargetSpec {
    type Error = Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        TargetSpec::new(raw.pi0_star)
    }
}

impl From<TargetSpec> for RawTarget {
    fn from(t: TargetSpec) -> Self {
        RawTarget {
            pi0_star: t.pi0_star,
        }
    }
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::balanced()
    }
}

impl TargetSpec {
    pub fn new(pi0_star: f64) -> Result<Self> {
        if !(pi0_star > 0.0 && pi0_star < 1.0) {
            return Err(Error::config(format!(
                "target pi0* must lie in (0, 1), got {pi0_star}"
            )));
        }
        Ok(TargetSpec { pi0_star })
    }

    pub fn balanced() -> Self {
        TargetSpec { pi0_star: 0.5 }
    }

    pub fn pi0_star(&self) -> f64 {
        self.pi0_star
    }

    pub fn pi1_star(&self) -> f64 {
        1.0 - self.pi0_star
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dataset dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::config(format!(
                    "sample {i} has dimension {}, expected {dim}",
                    s.x.len()
                )));
            }
            if s.y > 1 {
                return Err(Error::config(format!("sample {i} has label {}", s.y)));
            }
        }
        Ok(Dataset { samples, dim })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.samples.iter().filter(|s| s.y == label).count()
    }

    pub fn n0(&self) -> usize {
        self.count(0)
    }

    pub fn n1(&self) -> usize {
        self.count(1)
    }

    /// Indices of samples carrying `label`, in dataset order.
    pub fn indices(&self, label: u8) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.y == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature vectors of class `label`, in dataset order.
    pub fn class_points(&self, label: u8) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .filter(|s| s.y == label)
            .map(|s| s.x.clone())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| format!("{v:?}")).collect();
            rec.push(s.y.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let expected: Vec<String> = (0..dim)
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::config(format!(
                "dataset header must be x0,...,x{{d-1}},y; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("bad number {s:?}: {e}")))
            };
            let x = (0..dim)
                .map(|j| parse(&rec[j]))
                .collect::<Result<Vec<_>>>()?;
            let y = match rec[dim].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::config(format!("bad label {other:?}"))),
            };
            samples.push(LabeledSample { x, y });
        }
        Dataset::new(samples, dim)
    }
}

/// i.i.d. draws from the observed (source) distribution.
pub fn sample_observed(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("sample size must be at least 1"));
    }
    Ok(spec.draw(spec.pi1(), n, seed))
}

/// i.i.d. draws with the class prior replaced by the target weights.
pub fn sample_target(
    spec: &MixtureSpec,
    target: &TargetSpec,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("sample size must be at least 1"));
    }
    Ok(spec.draw(target.pi1_star(), n, seed))
}

/// i.i.d. draws from the class-conditional `N(mu_label, sigma^2 I)`.
pub fn sample_class(spec: &MixtureSpec, label: u8, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed);
    (0..n)
        .map(|_| {
            spec.mean(label)
                .iter()
                .map(|m| m + spec.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn likelihood_ratio_params(spec: &MixtureSpec) -> (Vec<f64>, f64) {
    let s2 = spec.sigma() * spec.sigma();
    let w = spec
        .mu1()
        .iter()
        .zip(spec.mu0())
        .map(|(a, b)| (a - b) / s2)
        .collect();
    let b = (dot(spec.mu0(), spec.mu0()) - dot(spec.mu1(), spec.mu1())) / (2.0 * s2);
    (w, b)
}

/// Balanced-target conditional `Q(Y=1|x) = p1 / (p0 + p1)` as a logistic
/// model.
pub fn fstar_gaussian(spec: &MixtureSpec) -> LogisticModel {
    let (w, b) = likelihood_ratio_params(spec);
    LogisticModel::new(w, b)
}

/// Source conditional `P(Y=1|x)`: the balanced intercept shifted by
/// `log(pi1/pi0)`.
pub fn gstar_gaussian(spec: &MixtureSpec) -> LogisticModel {
    let (w, b) = likelihood_ratio_params(spec);
    LogisticModel::new(w, b + (spec.pi1() / spec.pi0()).ln())
}

/// Conditional `Q*(Y=1|x)` under a general target prior.
pub fn target_conditional(spec: &MixtureSpec, target: &TargetSpec) -> LogisticModel {
    let (w, b) = likelihood_ratio_params(spec);
    LogisticModel::new(w, b + (target.pi1_star() / target.pi0_star()).ln())
}

fn scalar_gap(spec: &MixtureSpec) -> Result<f64> {
    if spec.dim() != 1 {
        return Err(Error::domain(format!(
            "closed-form type-II error needs d = 1, got d = {}",
            spec.dim()
        )));
    }
    if spec.sigma() != 1.0 {
        return Err(Error::domain(format!(
            "closed-form type-II error needs sigma = 1, got {}",
            spec.sigma()
        )));
    }
    let gap = spec.mu1()[0] - spec.mu0()[0];
    if gap <= 0.0 {
        return Err(Error::domain(format!("need mu1 > mu0, got gap {gap}")));
    }
    Ok(gap)
}

/// Type-II error `P(g*(X) < 1/2 | Y = 1)` of the thresholded source
/// conditional in the 1-D unit-variance model.
pub fn bayes_type2_error_observed(spec: &MixtureSpec) -> Result<f64> {
    let gap = scalar_gap(spec)?;
    Ok(normal_cdf(
        -gap / 2.0 + (spec.pi0() / spec.pi1()).ln() / gap,
    ))
}

/// Type-II error of the thresholded balanced conditional; free of the prior.
pub fn bayes_type2_error_balanced(spec: &MixtureSpec) -> Result<f64> {
    let gap = scalar_gap(spec)?;
    Ok(normal_cdf(-gap / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec1(pi0: f64, mu0: f64, mu1: f64) -> MixtureSpec {
        MixtureSpec::new(pi0, vec![mu0], vec![mu1], 1.0).unwrap()
    }

    fn gauss_density(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
        let r2: f64 = x.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum();
        let d = x.len() as i32;
        (-r2 / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma).powi(d)
    }

    #[test]
    fn rejects_boundary_priors_and_bad_shapes() {
        assert!(matches!(
            MixtureSpec::new(1.0, vec![0.0], vec![1.0], 1.0),
            Err(Error::Config(_))
        ));
        assert!(MixtureSpec::new(0.0, vec![0.0], vec![1.0], 1.0).is_err());
        assert!(MixtureSpec::new(0.5, vec![0.0], vec![1.0, 2.0], 1.0).is_err());
        assert!(MixtureSpec::new(0.5, vec![0.0], vec![1.0], 0.0).is_err());
        assert!(TargetSpec::new(1.0).is_err());
    }

    #[test]
    fn json_is_flat_and_validated() {
        let s: MixtureSpec =
            serde_json::from_str(r#"{"pi0": 0.9, "mu0": [0, 0], "mu1": [1, 1], "sigma": 1.0}"#)
                .unwrap();
        assert_eq!(s.dim(), 2);
        assert!((s.pi1() - 0.1).abs() < 1e-15);
        let back = serde_json::to_value(&s).unwrap();
        assert_eq!(back["pi0"], 0.9);
        assert!(serde_json::from_str::<MixtureSpec>(
            r#"{"pi0": 0.9, "mu0": [0], "mu1": [1, 1], "sigma": 1.0}"#
        )
        .is_err());
    }

    #[test]
    fn symmetric_prior_fraction() {
        let s = spec1(0.5, 0.0, 0.0);
        let d = sample_observed(&s, 100_000, 3).unwrap();
        let frac = d.n1() as f64 / 1e5;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn imbalanced_prior_fraction() {
        let s = MixtureSpec::scaled_ones(0.9, 4, 1.0).unwrap();
        let d = sample_observed(&s, 100_000, 11).unwrap();
        let frac = d.n1() as f64 / 1e5;
        assert!((frac - 0.1).abs() <= 3.0 * (0.09f64 / 1e5).sqrt(), "{frac}");
        assert_eq!(d.n0() + d.n1(), d.len());
    }

    #[test]
    fn target_fractions_and_determinism() {
        let s = MixtureSpec::scaled_ones(0.9, 2, 1.0).unwrap();
        let bal = sample_target(&s, &TargetSpec::balanced(), 100_000, 5).unwrap();
        let f = bal.n1() as f64 / 1e5;
        assert!((f - 0.5).abs() < 4.0 * (0.25f64 / 1e5).sqrt());
        let t = TargetSpec::new(0.3).unwrap();
        let skew = sample_target(&s, &t, 100_000, 5).unwrap();
        let f = skew.n1() as f64 / 1e5;
        assert!((f - 0.7).abs() < 4.0 * (0.21f64 / 1e5).sqrt());
        assert_eq!(skew, sample_target(&s, &t, 100_000, 5).unwrap());
        assert_ne!(skew, sample_target(&s, &t, 100_000, 6).unwrap());
    }

    #[test]
    fn class_conditional_moments() {
        let s = MixtureSpec::new(0.5, vec![-1.0, 0.0], vec![2.0, 1.0], 2.0).unwrap();
        let d = sample_observed(&s, 50_000, 9).unwrap();
        for label in [0u8, 1] {
            let pts = d.class_points(label);
            let n = pts.len() as f64;
            for j in 0..2 {
                let m = pts.iter().map(|p| p[j]).sum::<f64>() / n;
                assert!((m - s.mean(label)[j]).abs() < 4.0 * 2.0 / n.sqrt());
            }
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let s = spec1(0.5, 0.0, 1.0);
        assert!(sample_observed(&s, 0, 1).is_err());
    }

    #[test]
    fn fstar_equal_means_is_half() {
        let f = fstar_gaussian(&spec1(0.7, 1.0, 1.0));
        assert_eq!(f.w(), &[0.0]);
        assert_eq!(f.b(), 0.0);
        assert_eq!(f.predict(&[3.0]), 0.5);
    }

    #[test]
    fn fstar_one_dimensional_closed_form() {
        let f = fstar_gaussian(&spec1(0.9, 0.0, 2.0));
        assert_eq!(f.w(), &[2.0]);
        assert_eq!(f.b(), -2.0);
        assert!((f.predict(&[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gstar_shift() {
        let s = spec1(0.9, 0.0, 2.0);
        let g = gstar_gaussian(&s);
        assert!((g.b() - (-2.0 + (1.0f64 / 9.0).ln())).abs() < 1e-14);
        let half = spec1(0.5, 0.0, 2.0);
        assert_eq!(gstar_gaussian(&half), fstar_gaussian(&half));
        assert!(g.predict(&[1e6]) > 1.0 - 1e-5);
    }

    #[test]
    fn type2_reference_values() {
        // Phi(-1) = 0.15865525393145705
        let bal = spec1(0.5, 0.0, 2.0);
        assert!((bal_obs(&bal) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!(
            (bayes_type2_error_balanced(&bal).unwrap() - 0.158_655_253_931_457_05).abs() < 1e-12
        );
        // Phi(-1 + ln 9 / 2) = Phi(0.09861228866810978) = 0.5392763...
        let imb = spec1(0.9, 0.0, 2.0);
        let z = -1.0 + 9.0f64.ln() / 2.0;
        assert!((z - 0.098_612_288_668_109_78).abs() < 1e-15);
        assert!((bal_obs(&imb) - normal_cdf(z)).abs() < 1e-15);
        assert!((bal_obs(&imb) - 0.539_276_943_682_299_4).abs() < 1e-12);
        let very = spec1(0.99, 0.0, 2.0);
        assert_eq!(
            bayes_type2_error_balanced(&very).unwrap(),
            bayes_type2_error_balanced(&bal).unwrap()
        );
        assert!(bayes_type2_error_balanced(&imb).unwrap() <= bal_obs(&imb));
    }

    fn bal_obs(s: &MixtureSpec) -> f64 {
        bayes_type2_error_observed(s).unwrap()
    }

    #[test]
    fn type2_domain_errors() {
        assert!(matches!(
            bayes_type2_error_observed(&spec1(0.9, 2.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(bayes_type2_error_balanced(&spec1(0.9, 1.0, 1.0)).is_err());
        let d2 = MixtureSpec::scaled_ones(0.9, 2, 1.0).unwrap();
        assert!(bayes_type2_error_balanced(&d2).is_err());
    }

    #[test]
    fn type2_observed_matches_simulation() {
        let s = spec1(0.9, 0.0, 2.0);
        let g = gstar_gaussian(&s);
        let data = sample_target(&s, &TargetSpec::new(0.5).unwrap(), 1_000_000, 77).unwrap();
        let pos: Vec<f64> = data
            .samples()
            .iter()
            .filter(|x| x.y == 1)
            .map(|x| f64::from(u8::from(g.predict(&x.x) < 0.5)))
            .collect();
        let (m, se) = crate::stats::mean_se(&pos);
        let p = bal_obs(&s);
        assert!((m - p).abs() <= 3.0 * se, "{m} vs {p} (se {se})");
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let s = MixtureSpec::scaled_ones(0.8, 3, 1.0).unwrap();
        let d = sample_observed(&s, 50, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,x2,y\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), d);
        assert!(Dataset::read_csv(&b"a,b\n1,0\n"[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn closed_forms_match_density_ratio(
            pi0 in 0.05f64..0.95,
            mu0 in proptest::collection::vec(-2.0f64..2.0, 3),
            mu1 in proptest::collection::vec(-2.0f64..2.0, 3),
            sigma in 0.7f64..2.0,
            seed in any::<u64>(),
        ) {
            let s = MixtureSpec::new(pi0, mu0.clone(), mu1.clone(), sigma).unwrap();
            let f = fstar_gaussian(&s);
            let g = gstar_gaussian(&s);
            let mut r = rng::stream(seed);
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| r.random_range(-10.0 / 3f64.sqrt()..10.0 / 3f64.sqrt())).collect();
                let p0 = gauss_density(&x, &mu0, sigma);
                let p1 = gauss_density(&x, &mu1, sigma);
                if p0 + p1 < 1e-250 { continue; }
                let f_ref = p1 / (p0 + p1);
                let g_ref = s.pi1() * p1 / (s.pi0() * p0 + s.pi1() * p1);
                let raw_f = crate::stats::sigmoid(f.margin(&x));
                let raw_g = crate::stats::sigmoid(g.margin(&x));
                prop_assert!((raw_f - f_ref).abs() < 1e-10);
                prop_assert!((raw_g - g_ref).abs() < 1e-10);
                prop_assert!((s.class_density(1, &x) - p1).abs() <= 1e-12 * p1.max(1e-300));
            }
        }

        #[test]
        fn prior_consistency(pi0 in 0.02f64..0.98, seed in any::<u64>()) {
            let s = MixtureSpec::new(pi0, vec![0.0], vec![1.0], 1.0).unwrap();
            let d = sample_observed(&s, 100_000, seed).unwrap();
            let frac0 = d.n0() as f64 / 1e5;
            let sd = (pi0 * (1.0 - pi0) / 1e5).sqrt();
            prop_assert!((frac0 - pi0).abs() <= 4.0 * sd);
        }
    }
}
