use std::path::{Path, PathBuf};

use qfreg::basis::{BernsteinBasis, CrossIntegralMatrix};
use qfreg::gmrf::GmrfSpec;
use qfreg::health_stage::{
    effect_summaries, run_health_mcmc, waic, EffectSummary, ExposureInput, ExposureMode,
    HealthChain, Interval,
};
use qfreg::io;
use qfreg::quantile_stage::{
    posterior_theta_summary, run_quantile_mcmc, AcceptanceReport, QuantileMode, ThetaSummary,
};
use qfreg::simkit::{
    run_study_with_progress, simulate_replicate, FitMode, ScenarioId, StudyConfig,
};
use qfreg::{Error, ExposurePanel, Result};
use serde::{Deserialize, Serialize};

use crate::config::Resolved;

fn out_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Contents of `truth.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: ScenarioId,
    pub replicate: usize,
    pub seed: u64,
    pub integral: f64,
    pub attributable: f64,
    pub xi: f64,
    pub beta0: f64,
    /// Augmented coefficients `(theta_0, ..., theta_L)` per group.
    pub theta: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub linear_effect: Vec<f64>,
    pub beta_curve: Vec<f64>,
}

/// Only the `theta` key of a truth file is needed for known-quantile fits.
#[derive(Deserialize)]
struct ThetaFile {
    theta: Vec<Vec<f64>>,
}

pub fn simulate(r: &Resolved) -> Result<()> {
    let spec = r.scenario()?;
    let resample = r.raw.resample_exposures.unwrap_or(true);
    let out = out_dir(&r.out)?;
    for d in 0..spec.replicates {
        let rep = simulate_replicate(&spec, d, resample)?;
        let dir = out_dir(&out.join(format!("rep_{d:03}")))?;
        io::write_exposures_csv(&dir.join("exposures.csv"), &rep.world.exposures)?;
        io::write_counts_csv(&dir.join("counts.csv"), &rep.counts)?;
        io::write_means_csv(&dir.join("means.csv"), &rep.world.mu)?;
        let truth = TruthFile {
            scenario: spec.id,
            replicate: d,
            seed: rep.seed,
            integral: rep.truth.integral,
            attributable: rep.truth.attributable,
            xi: spec.xi_true,
            beta0: spec.beta0,
            theta: rep.world.theta,
            mu: rep.world.mu,
            linear_effect: rep.truth.linear_effect,
            beta_curve: rep.truth.beta_curve,
        };
        io::write_json(&dir.join("truth.json"), &truth)?;
    }
    io::write_json(&out.join("scenario.json"), &spec)?;
    print_json(&serde_json::json!({
        "scenario": spec.id,
        "groups": spec.n,
        "replicates": spec.replicates,
    }))
}

#[derive(Serialize)]
struct QuantileRunSummary<'a> {
    groups: usize,
    draws: usize,
    mode: QuantileMode,
    acceptance: &'a AcceptanceReport,
    warnings: &'a [String],
}

pub fn fit_quantile(r: &Resolved) -> Result<()> {
    let config = r.quantile()?;
    let exposures = r.require(&r.raw.exposures, "exposures", "fit-quantile")?;
    if config.mode == QuantileMode::Gmrf && r.raw.adjacency.is_none() {
        return Err(Error::Config(
            "gmrf mode needs an \"adjacency\" entry".into(),
        ));
    }
    let panel = io::read_exposures_csv(exposures)?;
    let graph = match (&config.mode, &r.raw.adjacency) {
        (QuantileMode::Gmrf, Some(a)) => Some(GmrfSpec::from_spec_str(a, panel.len())?),
        _ => None,
    };
    let out = out_dir(&r.out)?;
    let chain = run_quantile_mcmc(&panel, &config, graph.as_ref())?;
    let summary = posterior_theta_summary(&chain)?;
    io::write_quantile_chain_csv(&out.join("quantile_chain.csv"), &chain)?;
    io::write_json(&out.join("theta_summary.json"), &summary)?;
    for w in &chain.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&QuantileRunSummary {
        groups: panel.len(),
        draws: chain.draws(),
        mode: config.mode,
        acceptance: &chain.acceptance,
        warnings: &chain.warnings,
    })
}

/// Contents of `effects.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EffectsFile {
    pub mode: ExposureMode,
    pub degree: usize,
    pub draws: usize,
    pub xi: Interval,
    pub xi_acceptance: Option<f64>,
    pub effects: EffectSummary,
}

fn effects_file(chain: &HealthChain) -> Result<EffectsFile> {
    Ok(EffectsFile {
        mode: chain.mode,
        degree: chain.degree,
        draws: chain.draws(),
        xi: Interval::from_draws(&chain.xi),
        xi_acceptance: chain
            .xi_acceptance
            .is_finite()
            .then_some(chain.xi_acceptance),
        effects: effect_summaries(chain)?,
    })
}

fn write_health_outputs(out: &Path, chain: &HealthChain, with_chain: bool) -> Result<EffectsFile> {
    let effects = effects_file(chain)?;
    if with_chain {
        io::write_health_chain_csv(&out.join("health_chain.csv"), chain)?;
    }
    io::write_json(&out.join("waic.json"), &waic(chain)?)?;
    io::write_json(&out.join("effects.json"), &effects)?;
    if effects.degree > 0 || effects.mode != ExposureMode::Mean {
        io::write_beta_curve_csv(&out.join("beta_curve.csv"), &effects.effects.beta_curve)?;
    }
    Ok(effects)
}

pub fn fit_health(r: &Resolved) -> Result<()> {
    let config = r.health()?;
    let raw = &r.raw;
    let counts_path = r.require(&raw.counts, "counts", "fit-health")?;
    let cross = |config: &qfreg::health_stage::HealthConfig| -> Result<CrossIntegralMatrix> {
        let basis = r.quantile()?.basis;
        Ok(CrossIntegralMatrix::new(
            &BernsteinBasis::new(config.degree)?,
            &basis,
        ))
    };
    // mode/input consistency is checked before anything is read
    let input = match config.exposure_mode {
        ExposureMode::KnownQf => {
            if raw.theta.is_none() && raw.theta_summary.is_some() {
                return Err(Error::Config(
                    "known_qf mode got a stage-1 summary; use estimated_qf or pass \"theta\""
                        .into(),
                ));
            }
            let path = r.require(&raw.theta, "theta", "fit-health in known_qf mode")?;
            let theta: ThetaFile = io::read_json(path)?;
            ExposureInput::Known {
                cross: cross(&config)?,
                theta: theta.theta,
            }
        }
        ExposureMode::EstimatedQf => {
            if raw.theta_summary.is_none() && raw.theta.is_some() {
                return Err(Error::Config(
                    "estimated_qf mode got fixed theta; use known_qf or pass \"theta_summary\""
                        .into(),
                ));
            }
            let path = r.require(
                &raw.theta_summary,
                "theta_summary",
                "fit-health in estimated_qf mode",
            )?;
            let summary: ThetaSummary = io::read_json(path)?;
            ExposureInput::Estimated {
                cross: cross(&config)?,
                summary,
            }
        }
        ExposureMode::Mean => {
            if raw.theta.is_some() || raw.theta_summary.is_some() {
                return Err(Error::Config(
                    "mean mode takes \"means\" or \"exposures\", not theta".into(),
                ));
            }
            let mu = match (&raw.means, &raw.exposures) {
                (Some(p), _) => io::read_means_csv(p, None)?,
                (None, Some(p)) => io::read_exposures_csv(p)?.group_means(),
                (None, None) => {
                    return Err(Error::Config(
                        "mean mode needs \"means\" or \"exposures\"".into(),
                    ));
                }
            };
            ExposureInput::Mean { mu }
        }
    };
    let counts = io::read_counts_csv(counts_path, None)?;
    let n = counts.len();
    let panel = match &raw.exposures {
        Some(p) => io::read_exposures_csv(p)?,
        // the health sampler reads only counts and covariates from the panel
        None => ExposurePanel::new(vec![vec![0.0]; n])?,
    };
    let mut panel = panel.with_counts(counts)?;
    if let Some(p) = &raw.covariates {
        panel = panel.with_covariates(io::read_covariates_csv(p, n)?)?;
    }
    let out = out_dir(&r.out)?;
    let chain = run_health_mcmc(&panel, &input, &config)?;
    let effects = write_health_outputs(&out, &chain, true)?;
    print_json(&serde_json::json!({
        "mode": effects.mode,
        "degree": effects.degree,
        "groups": n,
        "integral": effects.effects.integral,
        "xi": effects.xi,
        "xi_acceptance": effects.xi_acceptance,
    }))
}

pub fn effects(r: &Resolved) -> Result<()> {
    let path = r.require(&r.raw.chain, "chain", "effects")?;
    let chain = io::read_health_chain_csv(path)?;
    let out = out_dir(&r.out)?;
    let effects = write_health_outputs(&out, &chain, false)?;
    print_json(&serde_json::json!({
        "degree": effects.degree,
        "draws": effects.draws,
        "integral": effects.effects.integral,
    }))
}

pub fn study(r: &Resolved) -> Result<()> {
    let config = StudyConfig {
        scenario: r.scenario()?,
        modes: r
            .raw
            .modes
            .clone()
            .unwrap_or_else(|| vec![FitMode::Mean, FitMode::Quantile]),
        health: r.health()?,
        quantile: r.quantile()?,
        resample_exposures: r.raw.resample_exposures.unwrap_or(true),
    };
    let out = out_dir(&r.out)?;
    let total = config.scenario.replicates;
    let report =
        run_study_with_progress(&config, |d| eprintln!("replicate {}/{total} done", d + 1))?;
    for rec in &report.replicates {
        for (mode, fit) in &rec.fits {
            if let Err(e) = fit {
                eprintln!(
                    "warning: replicate {} {} fit failed: {e}",
                    rec.replicate,
                    mode.label()
                );
            }
        }
    }
    io::write_table_csv(&out.join("table1.csv"), &report.table_rows())?;
    io::write_json(&out.join("metrics.json"), &report)?;
    print_json(&serde_json::json!({
        "scenario": report.scenario,
        "replicates": total,
        "waic_prefers_quantile": report.waic_prefers_quantile,
    }))
}
