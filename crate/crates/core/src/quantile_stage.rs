//! Stage 1: group-level exposure quantile functions from individual samples.
//!
//! Each group has `Q_i(t) = theta_{0,i} + sum_l B_l(t) theta_{l,i}` with
//! `theta_{l,i} = max(theta*_{l,i}, nu)`. The likelihood of the individual
//! exposures is the product of the implied densities. Coefficients get either
//! independent `N(0, 100)` priors or CAR priors over a group adjacency graph,
//! in which case the hypermeans, variances and dependence parameters are
//! sampled as well.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{
    QuantileCurve, QuantilePieceBasis, ThetaVector, DEFAULT_FLOOR, LOWER_CLIP, UPPER_CLIP,
};
use crate::error::{Error, Result};
use crate::gmrf::{car_conditional, GmrfHyper, GmrfSpec, RhoGrid};
use crate::mcmc::{inv_gamma, metropolis, normal_ln_pdf, std_normal, McmcSettings, StepAdapter};
use crate::panel::ExposurePanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMode {
    Independent,
    Gmrf,
}

/// Prior hyperparameters shared by both modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagePriors {
    /// Variance of the normal priors on coefficients and hypermeans.
    pub location_var: f64,
    pub ig_shape: f64,
    pub ig_rate: f64,
    pub rho_grid: usize,
}

impl Default for StagePriors {
    fn default() -> Self {
        Self {
            location_var: 100.0,
            ig_shape: 0.1,
            ig_rate: 0.1,
            rho_grid: crate::gmrf::RHO_GRID_SIZE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileModelConfig {
    pub mode: QuantileMode,
    pub basis: QuantilePieceBasis,
    pub priors: StagePriors,
    pub mcmc: McmcSettings,
    /// Initial random-walk step for every coefficient; data-driven when absent.
    pub initial_step: Option<f64>,
    pub target_acceptance: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for QuantileModelConfig {
    fn default() -> Self {
        Self {
            mode: QuantileMode::Gmrf,
            basis: QuantilePieceBasis::gamma(4).expect("default basis"),
            priors: StagePriors::default(),
            mcmc: McmcSettings {
                iterations: 10_000,
                burn_in: 5_000,
                thin: 1,
            },
            initial_step: None,
            target_acceptance: 0.35,
            floor: DEFAULT_FLOOR,
            seed: 0,
        }
    }
}

impl QuantileModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if let Some(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("initial step {s} must be positive")));
            }
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config(format!(
                "floor {} must be positive",
                self.floor
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        let p = &self.priors;
        if !(p.location_var > 0.0 && p.ig_shape > 0.0 && p.ig_rate > 0.0 && p.rho_grid > 0) {
            return Err(Error::Config(
                "prior hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `sum_j log f_i(x_ij)`; `-inf` if any value falls outside the support.
pub fn group_loglik(theta: &ThetaVector, basis: &QuantilePieceBasis, x: &[f64]) -> Result<f64> {
    let curve = QuantileCurve::new(basis, theta)?;
    Ok(curve_loglik(&curve, x))
}

fn curve_loglik(curve: &QuantileCurve<'_>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in x {
        let l = curve.ln_density(v);
        if l == f64::NEG_INFINITY {
            return l;
        }
        acc += l;
    }
    acc
}

/// Hyperparameters of one stored GMRF-mode iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperDraw {
    /// Process means `(theta_0, theta_1, ..., theta_L)`.
    pub means: Vec<f64>,
    pub sigma0sq: f64,
    pub sigma1sq: f64,
    pub rho0: f64,
    pub rho1: f64,
}

/// Post-burn-in acceptance rates averaged over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub theta0: f64,
    pub thetastar: Vec<f64>,
}

/// Retained stage-1 draws. Coefficients are stored as sampled (`theta*`);
/// [`QuantileChain::theta`] applies the floor.
#[derive(Debug, Clone)]
pub struct QuantileChain {
    groups: usize,
    pieces: usize,
    floor: f64,
    // per draw: (L + 1) blocks of n values, block 0 = theta_0
    coefs: Vec<f64>,
    pub hyper: Vec<HyperDraw>,
    pub acceptance: AcceptanceReport,
    pub warnings: Vec<String>,
}

impl QuantileChain {
    /// Assembles a chain from raw draws laid out as `[draw][k][group]`.
    pub fn from_parts(
        groups: usize,
        pieces: usize,
        floor: f64,
        coefs: Vec<f64>,
        hyper: Vec<HyperDraw>,
    ) -> Result<Self> {
        let stride = groups * (pieces + 1);
        if stride == 0 || coefs.len() % stride != 0 {
            return Err(Error::Validation(
                "chain draws do not match the group/piece layout".into(),
            ));
        }
        Ok(Self {
            groups,
            pieces,
            floor,
            coefs,
            hyper,
            acceptance: AcceptanceReport {
                theta0: f64::NAN,
                thetastar: vec![f64::NAN; pieces],
            },
            warnings: Vec::new(),
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn draws(&self) -> usize {
        self.coefs.len() / (self.groups * (self.pieces + 1))
    }

    fn at(&self, s: usize, k: usize, i: usize) -> f64 {
        self.coefs[(s * (self.pieces + 1) + k) * self.groups + i]
    }

    pub fn theta0(&self, s: usize, i: usize) -> f64 {
        self.at(s, 0, i)
    }

    /// Unfloored `theta*_{l,i}` (`l` 1-based).
    pub fn thetastar(&self, s: usize, l: usize, i: usize) -> f64 {
        self.at(s, l, i)
    }

    /// Floored coefficients of group `i` at draw `s`.
    pub fn theta(&self, s: usize, i: usize) -> ThetaVector {
        let latent: Vec<f64> = (1..=self.pieces).map(|l| self.at(s, l, i)).collect();
        ThetaVector::from_latent(self.theta0(s, i), &latent, self.floor)
    }

    /// Draws of `Q_i(t)`.
    pub fn quantile_draws(&self, basis: &QuantilePieceBasis, i: usize, t: f64) -> Result<Vec<f64>> {
        let b = basis.eval_augmented(t);
        Ok((0..self.draws())
            .map(|s| {
                self.theta(s, i)
                    .to_augmented()
                    .iter()
                    .zip(&b)
                    .map(|(c, v)| c * v)
                    .sum()
            })
            .collect())
    }

    /// Raw draws in `[draw][k][group]` order.
    pub fn raw(&self) -> &[f64] {
        &self.coefs
    }
}

/// Posterior mean and covariance of one group's floored coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub theta_hat: Vec<f64>,
    /// `(L+1) x (L+1)` covariance, row-major.
    pub lambda: Vec<f64>,
}

impl GroupSummary {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub pieces: usize,
    pub groups: Vec<GroupSummary>,
}

/// Per-group mean and covariance of the floored `(theta_0, theta_1..theta_L)`
/// draws; correlation between groups is dropped.
pub fn posterior_theta_summary(chain: &QuantileChain) -> Result<ThetaSummary> {
    let d = chain.pieces + 1;
    let s_count = chain.draws();
    if s_count < d + 1 {
        return Err(Error::Numerical(format!(
            "{s_count} draws cannot support a {d}x{d} covariance (need at least {})",
            d + 1
        )));
    }
    let groups = (0..chain.groups)
        .map(|i| {
            let draws: Vec<Vec<f64>> = (0..s_count)
                .map(|s| chain.theta(s, i).to_augmented())
                .collect();
            let mut mean = vec![0.0; d];
            for v in &draws {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= s_count as f64);
            let mut cov = vec![0.0; d * d];
            for v in &draws {
                for a in 0..d {
                    for b in 0..d {
                        cov[a * d + b] += (v[a] - mean[a]) * (v[b] - mean[b]);
                    }
                }
            }
            cov.iter_mut().for_each(|c| *c /= (s_count - 1) as f64);
            GroupSummary {
                theta_hat: mean,
                lambda: cov,
            }
        })
        .collect();
    Ok(ThetaSummary {
        pieces: chain.pieces,
        groups,
    })
}

/// Sample quantile (type 7) of unsorted data.
fn empirical_quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    crate::mcmc::sorted_quantile(&v, p)
}

/// Starting coefficients for one group: median, least squares on the deciles,
/// then adjustments so every observation lies inside the support.
pub fn initial_theta(basis: &QuantilePieceBasis, x: &[f64], floor: f64) -> (f64, Vec<f64>) {
    let l = basis.len();
    let levels: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let full = basis.eval_augmented(0.5)[1..].iter().any(|&v| v != 0.0);
    // B_l(0.5) = 0 for every piece unless the basis is a single full-range piece
    let mut median = empirical_quantile(x, 0.5);
    let design = DMatrix::from_fn(levels.len(), l + usize::from(full), |r, c| {
        if full && c == l {
            1.0
        } else {
            basis.eval(c + 1, levels[r]).unwrap()
        }
    });
    let target = DVector::from_iterator(
        levels.len(),
        levels
            .iter()
            .map(|&t| empirical_quantile(x, t) - if full { 0.0 } else { median }),
    );
    let fit = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(design.ncols()));
    let mut shape: Vec<f64> = fit.iter().take(l).map(|v| v.max(floor)).collect();
    if full {
        median = fit[l];
    }
    repair_support(basis, x, &mut median, &mut shape);
    (median, shape)
}

fn repair_support(basis: &QuantilePieceBasis, x: &[f64], median: &mut f64, shape: &mut [f64]) {
    let l = shape.len();
    let lo_x = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_x = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b_lo = basis.eval(1, LOWER_CLIP).unwrap();
    let b_hi = basis.eval(l, 1.0 - UPPER_CLIP).unwrap();
    for _ in 0..100 {
        let (lo, hi) = QuantileCurve::build(basis, *median, shape).support();
        let margin = 1e-6 * (1.0 + (hi - lo).abs());
        if lo_x < lo {
            let gap = lo - lo_x + margin;
            if b_lo < 0.0 {
                shape[0] += gap / -b_lo;
            } else {
                *median -= gap;
            }
        } else if hi_x > hi {
            let gap = hi_x - hi + margin;
            shape[l - 1] += gap / b_hi;
        } else {
            return;
        }
    }
}

/// Rough scale of the base family (half the central 68% range).
fn base_scale(basis: &QuantilePieceBasis) -> f64 {
    let f = basis.family();
    0.5 * (f.quantile(0.841_344_746) - f.quantile(0.158_655_254))
}

/// Stage-1 Gibbs/Metropolis sampler. Fields are public to the crate so the
/// individual kernels can be exercised in isolation.
pub struct QuantileSampler<'a> {
    panel: &'a ExposurePanel,
    config: &'a QuantileModelConfig,
    graph: Option<&'a GmrfSpec>,
    grid: Option<RhoGrid>,
    adapter: StepAdapter,
    pub(crate) rng: ChaCha8Rng,
    /// `values[k][i]`: `k = 0` is theta_0, `k = l` is theta*_l.
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) steps: Vec<Vec<f64>>,
    pub(crate) loglik: Vec<f64>,
    pub(crate) means: Vec<f64>,
    pub(crate) sigma2: [f64; 2],
    pub(crate) rho: [f64; 2],
    accepted: Vec<Vec<u64>>,
    attempts: u64,
    adapting: bool,
    iteration: usize,
}

impl<'a> QuantileSampler<'a> {
    pub fn new(
        panel: &'a ExposurePanel,
        config: &'a QuantileModelConfig,
        graph: Option<&'a GmrfSpec>,
    ) -> Result<Self> {
        config.validate()?;
        let n = panel.len();
        let l = config.basis.len();
        let graph = match config.mode {
            QuantileMode::Independent => None,
            QuantileMode::Gmrf => {
                let g = graph
                    .ok_or_else(|| Error::Config("GMRF mode needs an adjacency graph".into()))?;
                if g.len() != n {
                    return Err(Error::Config(format!(
                        "adjacency has {} nodes but the panel has {n} groups",
                        g.len()
                    )));
                }
                Some(g)
            }
        };
        let grid = graph
            .map(|g| RhoGrid::new(g, config.priors.rho_grid))
            .transpose()?;

        let mut values = vec![vec![0.0; n]; l + 1];
        let mut steps = vec![vec![0.0; n]; l + 1];
        let scale = base_scale(&config.basis);
        for i in 0..n {
            let x = panel.group(i);
            let (m0, shape) = initial_theta(&config.basis, x, config.floor);
            values[0][i] = m0;
            for k in 0..l {
                values[k + 1][i] = shape[k];
            }
            let sd = if x.len() > 1 {
                crate::mcmc::variance(x).sqrt()
            } else {
                1.0
            };
            let base = config
                .initial_step
                .unwrap_or(sd.max(1e-3) / (x.len() as f64).sqrt());
            steps[0][i] = base;
            for k in 1..=l {
                steps[k][i] = if config.initial_step.is_some() {
                    base
                } else {
                    base / scale
                };
            }
        }
        let basis = &config.basis;
        let loglik = (0..n)
            .map(|i| {
                let shape: Vec<f64> = (1..=l).map(|k| values[k][i].max(config.floor)).collect();
                curve_loglik(
                    &QuantileCurve::build(basis, values[0][i], &shape),
                    panel.group(i),
                )
            })
            .collect();
        let means = values.iter().map(|v| crate::mcmc::mean(v)).collect();
        Ok(Self {
            panel,
            config,
            graph,
            grid,
            adapter: StepAdapter {
                target: config.target_acceptance,
                ..StepAdapter::default()
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            values,
            steps,
            loglik,
            means,
            sigma2: [1.0, 1.0],
            rho: [0.5, 0.5],
            accepted: vec![vec![0; n]; l + 1],
            attempts: 0,
            adapting: true,
            iteration: 0,
        })
    }

    fn pieces(&self) -> usize {
        self.config.basis.len()
    }

    /// Prior (or CAR full conditional) mean and variance of `values[k][i]`.
    pub fn prior_moments(&self, k: usize, i: usize) -> (f64, f64) {
        match self.graph {
            None => (0.0, self.config.priors.location_var),
            Some(g) => {
                let which = usize::from(k > 0);
                let h = GmrfHyper {
                    sigma2: self.sigma2[which],
                    rho: self.rho[which],
                    mean: self.means[k],
                };
                car_conditional(i, &self.values[k], &h, g)
            }
        }
    }

    fn loglik_with(&self, k: usize, i: usize, value: f64) -> f64 {
        let floor = self.config.floor;
        let median = if k == 0 { value } else { self.values[0][i] };
        let shape: Vec<f64> = (1..=self.pieces())
            .map(|m| if m == k { value } else { self.values[m][i] }.max(floor))
            .collect();
        curve_loglik(
            &QuantileCurve::build(&self.config.basis, median, &shape),
            self.panel.group(i),
        )
    }

    /// One random-walk Metropolis step for `theta_{0,i}` (`k = 0`) or
    /// `theta*_{k,i}`. Returns whether the proposal was accepted.
    pub fn update_site(&mut self, k: usize, i: usize) -> bool {
        let cur = self.values[k][i];
        let prop = cur + self.steps[k][i] * std_normal(&mut self.rng);
        let floor = self.config.floor;
        let ll_prop = if k > 0 && cur.max(floor) == prop.max(floor) {
            self.loglik[i]
        } else {
            self.loglik_with(k, i, prop)
        };
        let (m, v) = self.prior_moments(k, i);
        let log_ratio =
            ll_prop - self.loglik[i] + normal_ln_pdf(prop, m, v) - normal_ln_pdf(cur, m, v);
        let (accept, alpha) = if ll_prop == f64::NEG_INFINITY {
            (false, 0.0)
        } else {
            metropolis(log_ratio, &mut self.rng)
        };
        if accept {
            self.values[k][i] = prop;
            self.loglik[i] = ll_prop;
        }
        if self.adapting {
            self.steps[k][i] = self.adapter.adapt(self.steps[k][i], alpha, self.iteration);
        } else if accept {
            self.accepted[k][i] += 1;
        }
        accept
    }

    /// `(mean, variance)` of the normal full conditional of process mean `k`.
    pub fn hypermean_conditional(&self, k: usize) -> (f64, f64) {
        let g = self.graph.expect("hypermeans exist only in GMRF mode");
        let which = usize::from(k > 0);
        let (s2, rho) = (self.sigma2[which], self.rho[which]);
        let d = g.degrees();
        let prec = (1.0 - rho) * d.iter().sum::<f64>() / s2 + 1.0 / self.config.priors.location_var;
        let lin = (1.0 - rho)
            * d.iter()
                .zip(&self.values[k])
                .map(|(a, b)| a * b)
                .sum::<f64>()
            / s2;
        (lin / prec, 1.0 / prec)
    }

    /// `(shape, rate)` of the inverse-gamma full conditional of `sigma0^2`
    /// (`which = 0`) or `sigma1^2` (`which = 1`).
    pub fn sigma_conditional(&self, which: usize) -> (f64, f64) {
        let g = self.graph.expect("variances exist only in GMRF mode");
        let n = self.panel.len() as f64;
        let ks: Vec<usize> = if which == 0 {
            vec![0]
        } else {
            (1..=self.pieces()).collect()
        };
        let quad: f64 = ks
            .iter()
            .map(|&k| {
                let z: Vec<f64> = self.values[k].iter().map(|v| v - self.means[k]).collect();
                g.quad_precision(&z, self.rho[which])
            })
            .sum();
        let p = &self.config.priors;
        (
            p.ig_shape + ks.len() as f64 * n / 2.0,
            p.ig_rate + 0.5 * quad,
        )
    }

    fn update_hyper(&mut self) {
        let Some(g) = self.graph else { return };
        for k in 0..=self.pieces() {
            let (m, v) = self.hypermean_conditional(k);
            self.means[k] = m + v.sqrt() * std_normal(&mut self.rng);
        }
        for which in 0..2 {
            let (a, b) = self.sigma_conditional(which);
            self.sigma2[which] = inv_gamma(a, b, &mut self.rng);
        }
        let grid = self.grid.as_ref().expect("grid built with the graph");
        for which in 0..2 {
            let ks: Vec<usize> = if which == 0 {
                vec![0]
            } else {
                (1..=self.pieces()).collect()
            };
            let quad: f64 = ks
                .iter()
                .map(|&k| {
                    let z: Vec<f64> = self.values[k].iter().map(|v| v - self.means[k]).collect();
                    g.quad_w(&z)
                })
                .sum();
            self.rho[which] = grid.draw(ks.len(), quad / self.sigma2[which], &mut self.rng);
        }
    }

    /// One full sweep in the fixed order: theta_0 sites, theta* sites,
    /// hypermeans, variances, dependence parameters.
    pub fn sweep(&mut self) {
        let n = self.panel.len();
        for i in 0..n {
            self.update_site(0, i);
        }
        for k in 1..=self.pieces() {
            for i in 0..n {
                self.update_site(k, i);
            }
        }
        self.update_hyper();
        if !self.adapting {
            self.attempts += 1;
        }
        self.iteration += 1;
    }

    fn record(&self, out: &mut Vec<f64>, hyper: &mut Vec<HyperDraw>) {
        for v in &self.values {
            out.extend_from_slice(v);
        }
        if self.graph.is_some() {
            hyper.push(HyperDraw {
                means: self.means.clone(),
                sigma0sq: self.sigma2[0],
                sigma1sq: self.sigma2[1],
                rho0: self.rho[0],
                rho1: self.rho[1],
            });
        }
    }

    pub fn run(mut self) -> QuantileChain {
        let mcmc = self.config.mcmc;
        let n = self.panel.len();
        let l = self.pieces();
        let mut coefs = Vec::with_capacity(mcmc.retained() * n * (l + 1));
        let mut hyper = Vec::new();
        for t in 0..mcmc.iterations {
            self.adapting = t < mcmc.burn_in;
            self.sweep();
            if mcmc.keep(t) {
                self.record(&mut coefs, &mut hyper);
            }
        }
        let rate = |k: usize| {
            self.accepted[k].iter().sum::<u64>() as f64 / (self.attempts.max(1) * n as u64) as f64
        };
        let acceptance = AcceptanceReport {
            theta0: rate(0),
            thetastar: (1..=l).map(rate).collect(),
        };
        let warnings = (0..n)
            .filter(|&i| self.panel.group(i).len() < l + 1)
            .map(|i| {
                format!(
                    "group {i} has {} exposures, fewer than the {} coefficients; its prior dominates",
                    self.panel.group(i).len(),
                    l + 1
                )
            })
            .collect();
        QuantileChain {
            groups: n,
            pieces: l,
            floor: self.config.floor,
            coefs,
            hyper,
            acceptance,
            warnings,
        }
    }
}

/// Runs the stage-1 sampler and returns the thinned post-burn-in chain.
pub fn run_quantile_mcmc(
    panel: &ExposurePanel,
    config: &QuantileModelConfig,
    graph: Option<&GmrfSpec>,
) -> Result<QuantileChain> {
    Ok(QuantileSampler::new(panel, config, graph)?.run())
}
