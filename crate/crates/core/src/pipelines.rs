//! End-to-end estimators of the balanced conditional `Q(Y=1|x)`:
//! rebalancing with synthetic minority points, majority undersampling, the
//! prior-reweighted plug-in, and plain ERM on the observed data as a
//! baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Dataset, MixtureSpec, TargetSpec};
use crate::erm::{fit, FitStatus, OptimizerSettings, WeightedSample};
use crate::error::{Error, Result};
use crate::generators::{choose_j, generate, GeneratorSpec, JMode};
use crate::model::LogisticModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JRule {
    Fixed(usize),
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    MatchMinority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    Known,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Rebalance {
        generator: GeneratorSpec,
        #[serde(default = "default_j")]
        j: JRule,
    },
    Undersample {
        #[serde(default = "default_k")]
        k_majority: KRule,
    },
    #[serde(rename = "plugin")]
    PlugIn {
        #[serde(default = "default_prior")]
        prior_source: PriorSource,
    },
    ErmRaw,
}

fn default_j() -> JRule {
    JRule::Estimated
}

fn default_k() -> KRule {
    KRule::MatchMinority
}

fn default_prior() -> PriorSource {
    PriorSource::Estimated
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rebalance { .. } => "rebalance",
            Method::Undersample { .. } => "undersample",
            Method::PlugIn { .. } => "plugin",
            Method::ErmRaw => "erm-raw",
        }
    }

    /// Variant detail shown next to the method name in result tables.
    pub fn detail(&self) -> String {
        match self {
            Method::Rebalance { generator, j } => match j {
                JRule::Estimated => generator.to_string(),
                JRule::Fixed(j) => format!("{generator};j={j}"),
            },
            Method::Undersample { k_majority } => match k_majority {
                KRule::MatchMinority => "k=match".into(),
                KRule::Fixed(k) => format!("k={k}"),
            },
            Method::PlugIn { prior_source } => match prior_source {
                PriorSource::Known => "prior=known".into(),
                PriorSource::Estimated => "prior=estimated".into(),
            },
            Method::ErmRaw => "none".into(),
        }
    }

    /// Stable identifier for seeding and deduplication.
    pub fn key(&self) -> String {
        format!("{}/{}", self.name(), self.detail())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub method: Method,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

impl PipelineConfig {
    pub fn new(method: Method) -> Self {
        PipelineConfig {
            method,
            target: TargetSpec::balanced(),
            optimizer: OptimizerSettings::default(),
        }
    }

    pub fn rebalance(generator: GeneratorSpec) -> Self {
        PipelineConfig::new(Method::Rebalance {
            generator,
            j: JRule::Estimated,
        })
    }
}

/// Provenance of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub method: String,
    pub generator: Option<String>,
    pub j: Option<usize>,
    pub k_majority: Option<usize>,
    pub optimizer_status: FitStatus,
}

impl RunManifest {
    fn new(seed: u64, method: &Method, status: FitStatus) -> Self {
        RunManifest {
            seed,
            method: method.name().into(),
            generator: None,
            j: None,
            k_majority: None,
            optimizer_status: status,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<M> {
    pub model: M,
    pub manifest: RunManifest,
}

/// `f(x) = pi0 / (pi0 + pi1 (1/g(x) - 1))`: reweights a source conditional
/// estimate into the balanced target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginModel {
    pub g_hat: LogisticModel,
    pi0: f64,
}

impl PluginModel {
    pub fn new(g_hat: LogisticModel, pi0: f64) -> Result<Self> {
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(Error::DegeneratePrior(format!("pi0 = {pi0}")));
        }
        Ok(PluginModel { g_hat, pi0 })
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn pi1(&self) -> f64 {
        1.0 - self.pi0
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let g = self.g_hat.predict(x);
        self.pi0 / (self.pi0 + self.pi1() * (1.0 / g - 1.0))
    }

    /// The plug-in map only shifts the logit by `log(pi0/pi1)`, so for a
    /// logistic `g_hat` the result is again logistic.
    pub fn to_logistic(&self) -> LogisticModel {
        self.g_hat.shifted((self.pi0 / self.pi1()).ln())
    }
}

fn uniform_weights(points: impl IntoIterator<Item = (Vec<f64>, u8)>) -> Vec<WeightedSample> {
    let mut out: Vec<WeightedSample> = points
        .into_iter()
        .map(|(x, y)| WeightedSample::new(x, y, 1.0))
        .collect();
    let w = 1.0 / out.len() as f64;
    out.iter_mut().for_each(|s| s.weight = w);
    out
}

fn labeled(data: &Dataset) -> impl Iterator<Item = (Vec<f64>, u8)> + '_ {
    data.samples().iter().map(|s| (s.x.clone(), s.y))
}

/// Plain ERM on the observed data.
pub fn erm_raw_train(
    data: &Dataset,
    opts: &OptimizerSettings,
    seed: u64,
) -> Result<Trained<LogisticModel>> {
    let train = uniform_weights(labeled(data));
    let (model, status) = fit(&train, opts).map_err(|e| e.with_context("erm-raw"))?;
    Ok(Trained {
        model,
        manifest: RunManifest::new(seed, &Method::ErmRaw, status),
    })
}

/// Synthetic-point count for a target prior. The balanced target uses
/// `n0 - n1`; otherwise the augmented class ratio is matched to
/// `pi1*/pi0*`.
pub fn target_j(n0: usize, n1: usize, target: &TargetSpec) -> Result<usize> {
    if target.pi0_star() == 0.5 {
        return choose_j(n0 + n1, n0, n1, JMode::Estimated);
    }
    let want = n0 as f64 * target.pi1_star() / target.pi0_star() - n1 as f64;
    Ok(want.round().max(0.0) as usize)
}

/// Algorithm: draw `J` synthetic minority covariates from the generator fit
/// to the observed minority class, label them 1, and run ERM on the union
/// with uniform weights `1/(N+J)`.
pub fn rebalance_train(
    data: &Dataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Trained<LogisticModel>> {
    let Method::Rebalance { generator, j } = cfg.method else {
        return Err(Error::config("rebalance_train needs a rebalance method"));
    };
    let minority = data.class_points(1);
    if minority.is_empty() {
        return Err(Error::insufficient("no minority samples").with_context("rebalance"));
    }
    let j = match j {
        JRule::Fixed(j) => j,
        JRule::Estimated => target_j(data.n0(), data.n1(), &cfg.target)?,
    };
    let batch = generate(
        &generator,
        &minority,
        j,
        rng::split(seed, &[rng::label("generator")]),
    )
    .map_err(|e| e.with_context(format!("rebalance generator {generator}")))?;
    let train = uniform_weights(labeled(data).chain(batch.points.into_iter().map(|x| (x, 1))));
    let (model, status) =
        fit(&train, &cfg.optimizer).map_err(|e| e.with_context("rebalance erm"))?;
    let mut manifest = RunManifest::new(seed, &cfg.method, status);
    manifest.generator = Some(generator.to_string());
    manifest.j = Some(j);
    Ok(Trained { model, manifest })
}

/// Rebalancing toward a user-specified target prior.
pub fn train_general_target(
    data: &Dataset,
    target: &TargetSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Trained<LogisticModel>> {
    let cfg = PipelineConfig {
        target: *target,
        ..*cfg
    };
    rebalance_train(data, &cfg, seed)
}

/// Seeded uniform subset of size `k` (without replacement) via a
/// Fisher-Yates prefix.
pub fn subsample_indices(indices: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > indices.len() {
        return Err(Error::config(format!(
            "cannot draw {k} of {} indices without replacement",
            indices.len()
        )));
    }
    let mut pool = indices.to_vec();
    let mut r = rng::stream(seed);
    for i in 0..k {
        let j = r.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    Ok(pool)
}

/// Keep `K` random majority samples and every minority sample, then ERM
/// with uniform weights `1/(K+n1)`.
pub fn undersample_train(
    data: &Dataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Trained<LogisticModel>> {
    let Method::Undersample { k_majority } = cfg.method else {
        return Err(Error::config(
            "undersample_train needs an undersample method",
        ));
    };
    if cfg.target != TargetSpec::balanced() {
        return Err(Error::config(
            "undersampling targets the balanced distribution only",
        ));
    }
    let n0 = data.n0();
    let n1 = data.n1();
    if n1 == 0 {
        return Err(Error::insufficient("no minority samples").with_context("undersample"));
    }
    let k = match k_majority {
        KRule::Fixed(k) => k,
        KRule::MatchMinority => n1,
    };
    if k > n0 {
        return Err(Error::config(format!(
            "undersample K = {k} exceeds majority count {n0}"
        )));
    }
    let kept = subsample_indices(
        &data.indices(0),
        k,
        rng::split(seed, &[rng::label("subsample")]),
    )?;
    let s = data.samples();
    let train = uniform_weights(
        kept.iter()
            .map(|&i| (s[i].x.clone(), 0))
            .chain(data.indices(1).into_iter().map(|i| (s[i].x.clone(), 1))),
    );
    let (model, status) =
        fit(&train, &cfg.optimizer).map_err(|e| e.with_context("undersample erm"))?;
    let mut manifest = RunManifest::new(seed, &cfg.method, status);
    manifest.k_majority = Some(k);
    Ok(Trained { model, manifest })
}

/// Fit `g_hat` to the observed data and reweight it with known (from
/// `spec`) or empirical class priors.
pub fn plugin_train(
    data: &Dataset,
    cfg: &PipelineConfig,
    spec: Option<&MixtureSpec>,
    seed: u64,
) -> Result<Trained<PluginModel>> {
    let Method::PlugIn { prior_source } = cfg.method else {
        return Err(Error::config("plugin_train needs a plugin method"));
    };
    if cfg.target != TargetSpec::balanced() {
        return Err(Error::config(
            "the plug-in estimator targets the balanced distribution only",
        ));
    }
    let (n0, n1) = (data.n0(), data.n1());
    let pi0 = match prior_source {
        PriorSource::Known => spec
            .ok_or_else(|| Error::config("known prior requested but no mixture spec given"))?
            .pi0(),
        PriorSource::Estimated => {
            if n0 == 0 || n1 == 0 {
                return Err(Error::DegeneratePrior(format!(
                    "empirical prior needs both classes (n0 = {n0}, n1 = {n1})"
                )));
            }
            n0 as f64 / data.len() as f64
        }
    };
    let train = uniform_weights(labeled(data));
    let (g_hat, status) = fit(&train, &cfg.optimizer).map_err(|e| e.with_context("plugin erm"))?;
    Ok(Trained {
        model: PluginModel::new(g_hat, pi0)?,
        manifest: RunManifest::new(seed, &cfg.method, status),
    })
}

/// Run any configured pipeline and return a logistic estimate of the
/// target conditional.
pub fn train(
    data: &Dataset,
    cfg: &PipelineConfig,
    spec: Option<&MixtureSpec>,
    seed: u64,
) -> Result<Trained<LogisticModel>> {
    match cfg.method {
        Method::Rebalance { .. } => rebalance_train(data, cfg, seed),
        Method::Undersample { .. } => undersample_train(data, cfg, seed),
        Method::PlugIn { .. } => plugin_train(data, cfg, spec, seed).map(|t| Trained {
            model: t.model.to_logistic(),
            manifest: t.manifest,
        }),
        Method::ErmRaw => erm_raw_train(data, &cfg.optimizer, seed),
    }
}
