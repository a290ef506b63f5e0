//! Synthetic worlds for scenarios S1-S6, replicate studies and their metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::basis::quadrature::GaussLegendre;
use crate::basis::{cross_integral, QuantilePieceBasis, ThetaVector, LOWER_CLIP, UPPER_CLIP};
use crate::error::{Error, Result};
use crate::gmrf::{GmrfHyper, GmrfSpec};
use crate::health_stage::{
    effect_summaries, integral_draws, run_health_mcmc, tau_grid, waic, ExposureInput, ExposureMode,
    HealthConfig,
};
use crate::mcmc::{derive_seed, mean, variance};
use crate::panel::ExposurePanel;
use crate::quantile_stage::{
    posterior_theta_summary, run_quantile_mcmc, QuantileModelConfig, ThetaSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
        ScenarioId::S6,
    ];

    pub fn beta(self, tau: f64) -> f64 {
        match self {
            ScenarioId::S1 => 0.5,
            ScenarioId::S2 => tau,
            ScenarioId::S3 => 1.5 * tau * tau,
            ScenarioId::S4 => {
                if tau < 0.5 {
                    4.0 / 3.0 * tau
                } else {
                    2.0 / 3.0
                }
            }
            ScenarioId::S5 => (-tau * tau / 0.328).exp(),
            ScenarioId::S6 => 1.0 - tau,
        }
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(ScenarioId::S1),
            "S2" => Ok(ScenarioId::S2),
            "S3" => Ok(ScenarioId::S3),
            "S4" => Ok(ScenarioId::S4),
            "S5" => Ok(ScenarioId::S5),
            "S6" => Ok(ScenarioId::S6),
            _ => Err(Error::Config(format!(
                "unknown scenario {s:?}, expected S1..S6"
            ))),
        }
    }
}

/// True coefficient function of a scenario.
pub fn beta_true(id: ScenarioId, tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain {
            what: "tau",
            value: tau,
            domain: "[0, 1]",
        });
    }
    Ok(id.beta(tau))
}

/// Fixed quadrature on `[0, 1]` used for simulation truth.
///
/// Panels break at every quarter (the kinks of a 4-piece basis and the jump of S4)
/// and shrink geometrically toward both ends where `Q` is singular.
#[derive(Debug, Clone)]
pub struct TruthQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TruthQuadrature {
    pub fn new() -> Self {
        let gl = GaussLegendre::new(24);
        let mut breaks = vec![0.0];
        for k in (1..=10).rev() {
            breaks.push(0.25 * 10f64.powi(-k));
        }
        breaks.extend([0.25, 0.5, 0.75]);
        for k in 1..=10 {
            breaks.push(1.0 - 0.25 * 10f64.powi(-k));
        }
        breaks.push(1.0);
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        for w in breaks.windows(2) {
            for (x, wt) in gl.mapped(w[0], w[1]) {
                nodes.push(x);
                weights.push(wt);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl Default for TruthQuadrature {
    fn default() -> Self {
        Self::new()
    }
}

/// `int_0^1 beta(tau) dtau` by the truth quadrature.
pub fn beta_integral(id: ScenarioId) -> f64 {
    TruthQuadrature::new().integrate(|t| id.beta(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub m: usize,
    pub theta0: f64,
    pub theta_l: f64,
    pub sigma0sq: f64,
    pub rho0: f64,
    pub sigma1sq: f64,
    pub rho1: f64,
    pub beta0: f64,
    pub xi_true: f64,
    pub pieces: usize,
    pub floor: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::desk(ScenarioId::S1)
    }
}

/// Count overdispersion of desk-scale worlds (`n = 200`).
///
/// Together with [`FULL_XI_TRUE`] at `n = 1000` this gives both scales about the
/// same posterior precision for `int beta`, an SD near 0.007.
pub const DESK_XI_TRUE: f64 = 125.0;

/// Count overdispersion of full-scale worlds (`n = 1000`).
pub const FULL_XI_TRUE: f64 = 25.0;

impl ScenarioSpec {
    /// `n = 200` groups and 20 replicates.
    pub fn desk(id: ScenarioId) -> Self {
        Self {
            id,
            n: 200,
            m: 100,
            theta0: 7.2,
            theta_l: 0.9,
            sigma0sq: 1.0,
            rho0: 0.9,
            sigma1sq: 0.02,
            rho1: 0.9,
            beta0: -3.5,
            xi_true: DESK_XI_TRUE,
            pieces: 4,
            floor: crate::basis::DEFAULT_FLOOR,
            replicates: 20,
            seed: 1,
        }
    }

    /// `n = 1000` groups and 100 replicates.
    pub fn full(id: ScenarioId) -> Self {
        Self {
            n: 1000,
            replicates: 100,
            xi_true: FULL_XI_TRUE,
            ..Self::desk(id)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "n = {} but the chain graph needs n >= 2",
                self.n
            )));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.pieces < 1 {
            return Err(Error::Config("at least one basis piece is needed".into()));
        }
        if !(self.sigma0sq > 0.0 && self.sigma1sq > 0.0) {
            return Err(Error::Config("process variances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho0) || !(0.0..1.0).contains(&self.rho1) {
            return Err(Error::Config("rho0 and rho1 must lie in [0, 1)".into()));
        }
        if !(self.xi_true > 0.0 && self.xi_true.is_finite()) {
            return Err(Error::Config(format!(
                "xi_true = {} must be positive",
                self.xi_true
            )));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("floor must be positive".into()));
        }
        if !(self.theta0.is_finite() && self.theta_l.is_finite() && self.beta0.is_finite()) {
            return Err(Error::Config("non-finite scenario constant".into()));
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<QuantilePieceBasis> {
        QuantilePieceBasis::gamma(self.pieces)
    }
}

/// Draws the `(theta_0, theta_1, ..., theta_L)` rows over the chain graph, floored.
pub fn simulate_quantile_process<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let graph = GmrfSpec::chain(spec.n)?;
    let h0 = GmrfHyper::new(spec.sigma0sq, spec.rho0, spec.theta0)?;
    let h1 = GmrfHyper::new(spec.sigma1sq, spec.rho1, spec.theta_l)?;
    let t0 = graph.sample(&h0, rng)?;
    let field = graph.sampler(&h1)?;
    let shape: Vec<Vec<f64>> = (0..spec.pieces).map(|_| field.draw(rng)).collect();
    Ok((0..spec.n)
        .map(|i| {
            let mut row = vec![t0[i]];
            row.extend(shape.iter().map(|s| s[i].max(spec.floor)));
            row
        })
        .collect())
}

/// `m` draws `Q(U)` with `U ~ Uniform(LOWER_CLIP, 1 - UPPER_CLIP)`.
pub fn simulate_exposures<R: Rng + ?Sized>(
    theta: &[f64],
    basis: &QuantilePieceBasis,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let tv = ThetaVector::from_augmented(theta);
    let curve = crate::basis::QuantileCurve::new(basis, &tv)?;
    (0..m)
        .map(|_| curve.eval(rng.random_range(LOWER_CLIP..1.0 - UPPER_CLIP)))
        .collect()
}

/// `int beta(tau) Q(tau) dtau` for one augmented coefficient row.
pub fn linear_effect(
    id: ScenarioId,
    basis: &QuantilePieceBasis,
    theta: &[f64],
    quad: &TruthQuadrature,
) -> f64 {
    quad.integrate(|t| id.beta(t) * quantile_at(basis, theta, t))
}

/// `int Q(tau) dtau`.
pub fn mean_exposure(basis: &QuantilePieceBasis, theta: &[f64], quad: &TruthQuadrature) -> f64 {
    quad.integrate(|t| quantile_at(basis, theta, t))
}

fn quantile_at(basis: &QuantilePieceBasis, theta: &[f64], t: f64) -> f64 {
    theta[0]
        + (1..=basis.len())
            .map(|l| theta[l] * basis.eval(l, t).unwrap_or(0.0))
            .sum::<f64>()
}

/// NB counts with mean `xi_true exp(eta_i)`, `eta_i = beta_0 + int beta Q_i`, as Gamma-mixed Poisson.
pub fn simulate_counts<R: Rng + ?Sized>(
    theta: &[Vec<f64>],
    id: ScenarioId,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<Vec<u64>> {
    spec.validate()?;
    let basis = spec.basis()?;
    let quad = TruthQuadrature::new();
    let eta: Vec<f64> = theta
        .iter()
        .map(|t| spec.beta0 + linear_effect(id, &basis, t, &quad))
        .collect();
    nb_counts(&eta, spec.xi_true, rng)
}

/// Gamma-Poisson draws with shape `xi` and scale `exp(eta_i)`.
pub fn nb_counts<R: Rng + ?Sized>(eta: &[f64], xi: f64, rng: &mut R) -> Result<Vec<u64>> {
    eta.iter()
        .map(|&e| {
            let g = Gamma::new(xi, e.exp())
                .map_err(|err| Error::Numerical(format!("gamma mixing distribution: {err}")))?;
            let lam = g.sample(rng);
            if lam <= 0.0 {
                return Ok(0);
            }
            let p = Poisson::new(lam)
                .map_err(|err| Error::Numerical(format!("poisson rate {lam}: {err}")))?;
            Ok(p.sample(rng) as u64)
        })
        .collect()
}

/// Simulated exposure side of a study, shared by its health replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureWorld {
    /// Augmented, floored coefficients per group.
    pub theta: Vec<Vec<f64>>,
    pub exposures: Vec<Vec<f64>>,
    /// True mean exposure `int Q_i`.
    pub mu: Vec<f64>,
}

pub fn simulate_world<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<ExposureWorld> {
    let basis = spec.basis()?;
    let theta = simulate_quantile_process(spec, rng)?;
    let exposures = theta
        .iter()
        .map(|t| simulate_exposures(t, &basis, spec.m, rng))
        .collect::<Result<_>>()?;
    let quad = TruthQuadrature::new();
    let mu = theta
        .iter()
        .map(|t| mean_exposure(&basis, t, &quad))
        .collect();
    Ok(ExposureWorld {
        theta,
        exposures,
        mu,
    })
}

/// Scenario truth derived from a world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub integral: f64,
    /// `int beta Q_i` per group.
    pub linear_effect: Vec<f64>,
    pub attributable: f64,
    pub beta_curve: Vec<f64>,
}

pub fn scenario_truth(spec: &ScenarioSpec, world: &ExposureWorld) -> Result<Truth> {
    let basis = spec.basis()?;
    let quad = TruthQuadrature::new();
    let linear_effect: Vec<f64> = world
        .theta
        .iter()
        .map(|t| linear_effect(spec.id, &basis, t, &quad))
        .collect();
    let attributable =
        crate::health_stage::attributable_events(spec.beta0, spec.xi_true, &linear_effect);
    Ok(Truth {
        integral: quad.integrate(|t| spec.id.beta(t)),
        linear_effect,
        attributable,
        beta_curve: tau_grid().into_iter().map(|t| spec.id.beta(t)).collect(),
    })
}

/// Exposure covariate used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Mean,
    Quantile,
    QuantileWithErrors,
}

impl FitMode {
    pub fn label(self) -> &'static str {
        match self {
            FitMode::Mean => "mean",
            FitMode::Quantile => "quantile",
            FitMode::QuantileWithErrors => "quantile with errors",
        }
    }

    fn exposure_mode(self) -> ExposureMode {
        match self {
            FitMode::Mean => ExposureMode::Mean,
            FitMode::Quantile => ExposureMode::KnownQf,
            FitMode::QuantileWithErrors => ExposureMode::EstimatedQf,
        }
    }

    fn index(self) -> u64 {
        match self {
            FitMode::Mean => 0,
            FitMode::Quantile => 1,
            FitMode::QuantileWithErrors => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub modes: Vec<FitMode>,
    /// Template for stage-2 fits; mode and seed are set per fit.
    pub health: HealthConfig,
    /// Stage-1 settings for the estimated-quantile mode.
    pub quantile: QuantileModelConfig,
    /// Draw a fresh exposure world for each replicate; `false` shares one world
    /// across all count replicates.
    pub resample_exposures: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            modes: vec![FitMode::Mean, FitMode::Quantile],
            health: HealthConfig::default(),
            quantile: QuantileModelConfig::default(),
            resample_exposures: true,
        }
    }
}

/// Posterior output of one fit that the metrics need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub integral_mean: f64,
    pub integral_sd: f64,
    pub integral_lo: f64,
    pub integral_hi: f64,
    pub beta_curve: Option<Vec<[f64; 3]>>,
    /// `(mean, lo, hi)` of the exposure contribution per group.
    pub predictive: Vec<[f64; 3]>,
    pub attributable: [f64; 3],
    pub waic: f64,
    pub xi_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub fits: Vec<(FitMode, std::result::Result<FitSummary, String>)>,
}

impl ReplicateRecord {
    pub fn fit(&self, mode: FitMode) -> Option<&FitSummary> {
        self.fits
            .iter()
            .find(|(m, _)| *m == mode)
            .and_then(|(_, r)| r.as_ref().ok())
    }
}

/// One estimate with its 95% interval and target value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPoint {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    /// Mean of `(estimate - truth) / truth`; absent when a truth is zero.
    pub relative_bias: Option<f64>,
    pub bias: f64,
    pub mse: f64,
    /// MSE over the mean-covariate fit's MSE for the same target.
    pub relative_mse: Option<f64>,
    /// Percent of intervals containing the truth.
    pub coverage_95: f64,
    pub count: usize,
}

impl TargetMetrics {
    /// Averages over all points, e.g. over groups and replicates.
    pub fn from_points(points: &[MetricPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("no points to summarize".into()));
        }
        let k = points.len() as f64;
        let bias = points.iter().map(|p| p.estimate - p.truth).sum::<f64>() / k;
        let mse = points
            .iter()
            .map(|p| (p.estimate - p.truth).powi(2))
            .sum::<f64>()
            / k;
        let relative_bias = if points.iter().all(|p| p.truth != 0.0) {
            Some(
                points
                    .iter()
                    .map(|p| (p.estimate - p.truth) / p.truth)
                    .sum::<f64>()
                    / k,
            )
        } else {
            None
        };
        let covered = points
            .iter()
            .filter(|p| p.lo <= p.truth && p.truth <= p.hi)
            .count();
        Ok(Self {
            relative_bias,
            bias,
            mse,
            relative_mse: None,
            coverage_95: 100.0 * covered as f64 / k,
            count: points.len(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: FitMode,
    pub integral: TargetMetrics,
    pub beta_curve: Option<TargetMetrics>,
    pub predictive: TargetMetrics,
    pub attributable: TargetMetrics,
    pub fitted: usize,
    pub failures: usize,
    pub mean_waic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: ScenarioId,
    pub truth_integral: f64,
    pub modes: Vec<ModeMetrics>,
    /// Share of replicates where the known-quantile fit has lower WAIC than the mean fit.
    pub waic_prefers_quantile: Option<f64>,
    pub replicates: Vec<ReplicateRecord>,
}

impl MetricsReport {
    pub fn mode(&self, mode: FitMode) -> Option<&ModeMetrics> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Flat rows in the column order scenario, covariate, then
    /// (relative bias, relative MSE, CP) for the integral, (bias, MSE, CP) for the
    /// curve, and relative bias, relative MSE, CP for predictive values and
    /// attributable events.
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        self.modes
            .iter()
            .map(|m| {
                let curve = m.beta_curve.as_ref();
                vec![
                    format!("{:?}", self.scenario),
                    m.mode.label().to_string(),
                    f(m.integral.relative_bias),
                    f(m.integral.relative_mse),
                    f(Some(m.integral.coverage_95)),
                    f(curve.map(|c| c.bias)),
                    f(curve.map(|c| c.mse)),
                    f(curve.map(|c| c.coverage_95)),
                    f(m.predictive.relative_bias),
                    f(m.predictive.relative_mse),
                    f(Some(m.predictive.coverage_95)),
                    f(m.attributable.relative_bias),
                    f(m.attributable.relative_mse),
                    f(Some(m.attributable.coverage_95)),
                ]
            })
            .collect()
    }
}

pub const TABLE_HEADER: [&str; 14] = [
    "scenario",
    "covariate",
    "integral_relative_bias",
    "integral_relative_mse",
    "integral_cp",
    "beta_bias",
    "beta_mse",
    "beta_cp",
    "predictive_relative_bias",
    "predictive_relative_mse",
    "predictive_cp",
    "attributable_relative_bias",
    "attributable_relative_mse",
    "attributable_cp",
];

/// Fits one mode on one count vector.
pub fn fit_mode(
    mode: FitMode,
    world: &ExposureWorld,
    counts: &[u64],
    stage1: Option<&ThetaSummary>,
    spec: &ScenarioSpec,
    template: &HealthConfig,
    seed: u64,
) -> Result<FitSummary> {
    let basis = spec.basis()?;
    let degree = if mode == FitMode::Mean {
        0
    } else {
        template.degree
    };
    let input = match mode {
        FitMode::Mean => ExposureInput::Mean {
            mu: world.mu.clone(),
        },
        FitMode::Quantile => ExposureInput::Known {
            cross: cross_integral(degree, &basis)?,
            theta: world.theta.clone(),
        },
        FitMode::QuantileWithErrors => ExposureInput::Estimated {
            cross: cross_integral(degree, &basis)?,
            summary: stage1
                .cloned()
                .ok_or_else(|| Error::Config("estimated mode needs a stage-1 summary".into()))?,
        },
    };
    let panel = ExposurePanel::new(world.exposures.clone())?.with_counts(counts.to_vec())?;
    let config = HealthConfig {
        degree,
        exposure_mode: mode.exposure_mode(),
        seed,
        ..template.clone()
    };
    let chain = run_health_mcmc(&panel, &input, &config)?;
    let effects = effect_summaries(&chain)?;
    let integral = integral_draws(&chain)?;
    Ok(FitSummary {
        integral_mean: effects.integral.mean,
        integral_sd: variance(&integral).sqrt(),
        integral_lo: effects.integral.lo95,
        integral_hi: effects.integral.hi95,
        beta_curve: (mode != FitMode::Mean).then(|| {
            effects
                .beta_curve
                .iter()
                .map(|c| [c.mean, c.lo95, c.hi95])
                .collect()
        }),
        predictive: effects
            .predictive
            .iter()
            .map(|p| [p.mean, p.lo95, p.hi95])
            .collect(),
        attributable: [
            effects.attributable_events.mean,
            effects.attributable_events.lo95,
            effects.attributable_events.hi95,
        ],
        waic: waic(&chain)?.waic,
        xi_mean: mean(&chain.xi),
    })
}

/// Stage-1 fit of a world's exposures over the chain graph.
pub fn fit_stage1(world: &ExposureWorld, config: &QuantileModelConfig) -> Result<ThetaSummary> {
    let panel = ExposurePanel::new(world.exposures.clone())?;
    let graph = GmrfSpec::chain(panel.len())?;
    let chain = run_quantile_mcmc(&panel, config, Some(&graph))?;
    posterior_theta_summary(&chain)
}

// seed stream reserved for exposure worlds; fits use streams 1..=3
const WORLD_STREAM: u64 = u64::MAX;

/// `(count seed, world seed)` of replicate `d`.
pub fn replicate_seeds(spec: &ScenarioSpec, d: usize, resample_exposures: bool) -> (u64, u64) {
    let seed = derive_seed(spec.seed, d as u64);
    let world = if resample_exposures {
        derive_seed(seed, WORLD_STREAM)
    } else {
        derive_seed(spec.seed, WORLD_STREAM)
    };
    (seed, world)
}

/// World, truth and counts of one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub world: ExposureWorld,
    pub truth: Truth,
    pub counts: Vec<u64>,
}

pub fn simulate_replicate(
    spec: &ScenarioSpec,
    d: usize,
    resample_exposures: bool,
) -> Result<Replicate> {
    let (seed, world_seed) = replicate_seeds(spec, d, resample_exposures);
    let world = simulate_world(spec, &mut ChaCha8Rng::seed_from_u64(world_seed))?;
    let truth = scenario_truth(spec, &world)?;
    let counts = replicate_counts(spec, &truth, seed)?;
    Ok(Replicate {
        index: d,
        seed,
        world,
        truth,
        counts,
    })
}

fn replicate_counts(spec: &ScenarioSpec, truth: &Truth, seed: u64) -> Result<Vec<u64>> {
    let eta: Vec<f64> = truth.linear_effect.iter().map(|l| spec.beta0 + l).collect();
    nb_counts(&eta, spec.xi_true, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Simulates replicates, fits the requested modes and aggregates metrics.
pub fn run_study(config: &StudyConfig) -> Result<MetricsReport> {
    run_study_with_progress(config, |_| {})
}

pub fn run_study_with_progress(
    config: &StudyConfig,
    mut progress: impl FnMut(usize),
) -> Result<MetricsReport> {
    let spec = &config.scenario;
    spec.validate()?;
    config.health.validate()?;
    if spec.replicates == 0 {
        return Err(Error::Config("a study needs at least one replicate".into()));
    }
    if config.modes.is_empty() {
        return Err(Error::Config("no fit modes requested".into()));
    }
    let needs_stage1 = config.modes.contains(&FitMode::QuantileWithErrors);
    if needs_stage1 {
        config.quantile.validate()?;
    }
    type Shared = (
        ExposureWorld,
        Truth,
        Option<std::result::Result<ThetaSummary, String>>,
    );
    let mut shared: Option<Shared> = None;
    let mut records = Vec::with_capacity(spec.replicates);
    let mut truths = Vec::with_capacity(spec.replicates);
    for d in 0..spec.replicates {
        let (seed, world_seed) = replicate_seeds(spec, d, config.resample_exposures);
        if shared.is_none() || config.resample_exposures {
            let world = simulate_world(spec, &mut ChaCha8Rng::seed_from_u64(world_seed))?;
            let truth = scenario_truth(spec, &world)?;
            let stage1 = needs_stage1.then(|| {
                let qc = QuantileModelConfig {
                    seed: derive_seed(world_seed, 1),
                    ..config.quantile.clone()
                };
                fit_stage1(&world, &qc).map_err(|e| format!("stage 1: {e}"))
            });
            shared = Some((world, truth, stage1));
        }
        let (world, truth, stage1) = shared.as_ref().expect("world initialized above");
        let counts = replicate_counts(spec, truth, seed)?;
        let fits = config
            .modes
            .iter()
            .map(|&mode| {
                let fit = match (mode, stage1) {
                    (FitMode::QuantileWithErrors, Some(Err(e))) => Err(e.clone()),
                    _ => fit_mode(
                        mode,
                        world,
                        &counts,
                        stage1.as_ref().and_then(|r| r.as_ref().ok()),
                        spec,
                        &config.health,
                        derive_seed(seed, mode.index() + 1),
                    )
                    .map_err(|e| e.to_string()),
                };
                (mode, fit)
            })
            .collect();
        records.push(ReplicateRecord {
            replicate: d,
            seed,
            fits,
        });
        truths.push(truth.clone());
        progress(d);
    }
    aggregate(spec.id, &config.modes, records, &truths)
}

/// Metrics over replicate records; `truths[d]` belongs to `records[d]`.
pub fn aggregate(
    scenario: ScenarioId,
    modes: &[FitMode],
    records: Vec<ReplicateRecord>,
    truths: &[Truth],
) -> Result<MetricsReport> {
    let mut out: Vec<ModeMetrics> = Vec::new();
    for &mode in modes {
        let (mut integral, mut curve, mut predictive, mut attributable, mut waics) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut failures = 0;
        for (rec, truth) in records.iter().zip(truths) {
            let Some(fit) = rec.fit(mode) else {
                failures += 1;
                continue;
            };
            integral.push(MetricPoint {
                estimate: fit.integral_mean,
                lo: fit.integral_lo,
                hi: fit.integral_hi,
                truth: truth.integral,
            });
            if let Some(c) = &fit.beta_curve {
                for (v, &t) in c.iter().zip(&truth.beta_curve) {
                    curve.push(MetricPoint {
                        estimate: v[0],
                        lo: v[1],
                        hi: v[2],
                        truth: t,
                    });
                }
            }
            for (v, &t) in fit.predictive.iter().zip(&truth.linear_effect) {
                predictive.push(MetricPoint {
                    estimate: v[0],
                    lo: v[1],
                    hi: v[2],
                    truth: t,
                });
            }
            attributable.push(MetricPoint {
                estimate: fit.attributable[0],
                lo: fit.attributable[1],
                hi: fit.attributable[2],
                truth: truth.attributable,
            });
            waics.push(fit.waic);
        }
        let fitted = integral.len();
        if fitted == 0 {
            return Err(Error::Numerical(format!(
                "every {} fit failed",
                mode.label()
            )));
        }
        out.push(ModeMetrics {
            mode,
            integral: TargetMetrics::from_points(&integral)?,
            beta_curve: if curve.is_empty() {
                None
            } else {
                Some(TargetMetrics::from_points(&curve)?)
            },
            predictive: TargetMetrics::from_points(&predictive)?,
            attributable: TargetMetrics::from_points(&attributable)?,
            fitted,
            failures,
            mean_waic: mean(&waics),
        });
    }
    if let Some(reference) = out.iter().find(|m| m.mode == FitMode::Mean).cloned() {
        for m in &mut out {
            m.integral.relative_mse = Some(m.integral.mse / reference.integral.mse);
            m.predictive.relative_mse = Some(m.predictive.mse / reference.predictive.mse);
            m.attributable.relative_mse = Some(m.attributable.mse / reference.attributable.mse);
        }
    }
    let both: Vec<bool> = records
        .iter()
        .filter_map(|r| Some(r.fit(FitMode::Quantile)?.waic < r.fit(FitMode::Mean)?.waic))
        .collect();
    let waic_prefers_quantile =
        (!both.is_empty()).then(|| both.iter().filter(|&&b| b).count() as f64 / both.len() as f64);
    Ok(MetricsReport {
        scenario,
        truth_integral: truths.first().map_or(f64::NAN, |t| t.integral),
        modes: out,
        waic_prefers_quantile,
        replicates: records,
    })
}
