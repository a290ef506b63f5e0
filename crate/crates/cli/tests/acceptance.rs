//! Acceptance checks 1-10. Each test writes one PASS/FAIL line to stderr,
//! bypassing the test harness capture, then asserts.
//!
//! The study-based checks (5, 6, 7) share one set of desk-scale studies; the
//! whole target takes close to an hour on a single core.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qfreg::basis::{
    quantile_density, BernsteinBasis, CrossIntegralMatrix, QuantileCurve, QuantilePieceBasis,
    ThetaVector,
};
use qfreg::gmrf::{car_conditional, rho_logdensity, GmrfHyper, GmrfSpec};
use qfreg::health_stage::{
    run_health_mcmc, ExposureInput, ExposureMode, HealthChain, HealthConfig,
};
use qfreg::mcmc::{equal_tailed, mean, McmcSettings};
use qfreg::pg::{pg_mean, pg_variance, PgSampler};
use qfreg::quantile_stage::{run_quantile_mcmc, QuantileModelConfig};
use qfreg::simkit::{
    aggregate, run_study, simulate_replicate, simulate_world, FitMode, FitSummary, MetricsReport,
    ReplicateRecord, ScenarioId, ScenarioSpec, StudyConfig, Truth,
};
use qfreg::ExposurePanel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, Gamma};

fn report(criterion: u32, pass: bool, detail: String) {
    let line = format!(
        "acceptance criterion {criterion}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // direct write, not eprintln!, so the line survives output capture
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut s = f(a) + f(b);
    for k in 1..intervals {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn criterion_01_basis() {
    let start = Instant::now();
    let mut gram_err: f64 = 0.0;
    for p in 1..=3 {
        let b = BernsteinBasis::new(p).unwrap();
        for i in 0..=p {
            for j in 0..=p {
                let g = simpson(
                    |t| b.eval(i, t).unwrap() * b.eval(j, t).unwrap(),
                    0.0,
                    1.0,
                    2000,
                );
                gram_err = gram_err.max((g - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let basis = QuantilePieceBasis::gamma(1).unwrap();
    let theta = ThetaVector::new(0.0, vec![1.0], 0.01).unwrap();
    let gamma = Gamma::new(5.0, 1.0).unwrap();
    let mut pdf_err: f64 = 0.0;
    for k in 0..20 {
        let x = 0.5 + 0.75 * k as f64;
        pdf_err = pdf_err.max((quantile_density(&theta, &basis, x).unwrap() - gamma.pdf(x)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        gram_err < 1e-8 && pdf_err < 1e-6 && secs < 1.0,
        format!("max Gram error {gram_err:.1e}, max pdf error {pdf_err:.1e}, {secs:.2}s"),
    );
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

#[test]
fn criterion_02_polya_gamma() {
    let start = Instant::now();
    let sampler = PgSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for (b, c) in [
        (1.0, 0.0),
        (1.0, 2.5),
        (3.0, 1.0),
        (0.5, 0.3),
        (2.7, 4.0),
        (13.4, 0.8),
    ] {
        let draws: Vec<f64> = (0..n)
            .map(|_| sampler.draw(b, c, &mut rng).unwrap())
            .collect();
        let se = (pg_variance(b, c) / n as f64).sqrt();
        worst = worst.max((mean(&draws) - pg_mean(b, c)).abs() / se);
    }
    let k = 20_000;
    let a: Vec<f64> = (0..k)
        .map(|_| sampler.draw(3.0, 1.2, &mut rng).unwrap())
        .collect();
    let s: Vec<f64> = (0..k)
        .map(|_| sampler.draw_series(3.0, 1.2, &mut rng).unwrap())
        .collect();
    let (d, p) = ks_p_value(a, s);
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        worst < 3.0 && p > 0.01 && secs < 30.0,
        format!("worst mean deviation {worst:.2} SE, KS D {d:.4} p {p:.3}, {secs:.1}s"),
    );
}

fn random_graph(rng: &mut ChaCha8Rng) -> GmrfSpec {
    let n = rng.random_range(2..=10);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((a, b));
            }
        }
    }
    edges.sort();
    edges.dedup();
    GmrfSpec::from_edges(n, &edges).unwrap()
}

fn dense_precision(spec: &GmrfSpec, rho: f64, sigma2: f64) -> DMatrix<f64> {
    let n = spec.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { spec.degrees()[i] } else { 0.0 };
        let w = if spec.neighbors(i).contains(&j) {
            1.0
        } else {
            0.0
        };
        (d - rho * w) / sigma2
    })
}

#[test]
fn criterion_03_gmrf_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cond_err, mut dens_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let spec = random_graph(&mut rng);
        let n = spec.len();
        let (s2, rho, mu) = (
            rng.random_range(0.1..3.0),
            rng.random_range(0.0..0.99),
            rng.random_range(-2.0..2.0),
        );
        let h = GmrfHyper::new(s2, rho, mu).unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q = dense_precision(&spec, rho, s2);
        for i in 0..n {
            // conditional of a Gaussian with precision Q: mean - Q_ij/Q_ii, variance 1/Q_ii
            let shift: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| q[(i, j)] * (v[j] - mu))
                .sum();
            let (dm, dv) = (mu - shift / q[(i, i)], 1.0 / q[(i, i)]);
            let (m, var) = car_conditional(i, &v, &h, &spec);
            cond_err = cond_err.max((m - dm).abs()).max((var - dv).abs());
        }
        let z = DVector::from_fn(n, |i, _| v[i] - mu);
        let dense = |r: f64| {
            let q = dense_precision(&spec, r, s2);
            0.5 * q.determinant().ln() - 0.5 * (z.transpose() * &q * &z)[(0, 0)]
        };
        let r1 = rng.random_range(0.0..0.99);
        let ours = rho_logdensity(r1, z.as_slice(), s2, &spec).unwrap()
            - rho_logdensity(rho, z.as_slice(), s2, &spec).unwrap();
        dens_err = dens_err.max((ours - (dense(r1) - dense(rho))).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        cond_err < 1e-10 && dens_err < 1e-10 && secs < 5.0,
        format!(
            "conditional error {cond_err:.1e}, rho log-density error {dens_err:.1e}, {secs:.2}s"
        ),
    );
}

#[test]
fn criterion_04_stage1_recovery() {
    let start = Instant::now();
    let spec = ScenarioSpec::desk(ScenarioId::S1);
    let world = simulate_world(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let panel = ExposurePanel::new(world.exposures.clone()).unwrap();
    let graph = GmrfSpec::chain(spec.n).unwrap();
    let config = QuantileModelConfig {
        seed: 4,
        ..Default::default()
    };
    assert_eq!(config.mcmc.iterations, 10_000);
    let chain = run_quantile_mcmc(&panel, &config, Some(&graph)).unwrap();
    let basis = spec.basis().unwrap();
    let levels = [0.1, 0.25, 0.5, 0.75, 0.9];
    let mut covered = [0usize; 5];
    for i in 0..spec.n {
        let truth =
            QuantileCurve::new(&basis, &ThetaVector::from_augmented(&world.theta[i])).unwrap();
        for (k, &t) in levels.iter().enumerate() {
            let (lo, hi) = equal_tailed(&chain.quantile_draws(&basis, i, t).unwrap(), 0.95);
            let q = truth.eval(t).unwrap();
            if lo <= q && q <= hi {
                covered[k] += 1;
            }
        }
    }
    let frac: Vec<f64> = covered.iter().map(|&c| c as f64 / spec.n as f64).collect();
    let rho0 = mean(&chain.hyper.iter().map(|h| h.rho0).collect::<Vec<_>>());
    let secs = start.elapsed().as_secs_f64();
    let pass = frac.iter().all(|&f| f >= 0.85) && (rho0 - 0.9).abs() <= 0.1 && secs < 900.0;
    report(
        4,
        pass,
        format!("coverage by level {frac:.3?}, rho0 mean {rho0:.3}, {secs:.0}s"),
    );
}

struct Studies {
    reports: HashMap<ScenarioId, MetricsReport>,
    seconds: HashMap<ScenarioId, f64>,
}

fn studies() -> &'static Studies {
    static CELL: OnceLock<Studies> = OnceLock::new();
    CELL.get_or_init(|| {
        let (mut reports, mut seconds) = (HashMap::new(), HashMap::new());
        for id in ScenarioId::ALL {
            let mut modes = vec![FitMode::Mean, FitMode::Quantile];
            if id == ScenarioId::S2 {
                modes.push(FitMode::QuantileWithErrors);
            }
            let config = StudyConfig {
                scenario: ScenarioSpec::desk(id),
                modes,
                ..Default::default()
            };
            let start = Instant::now();
            reports.insert(id, run_study(&config).unwrap());
            seconds.insert(id, start.elapsed().as_secs_f64());
        }
        Studies { reports, seconds }
    })
}

fn rel_bias(r: &MetricsReport, mode: FitMode) -> f64 {
    r.mode(mode).unwrap().integral.relative_bias.unwrap()
}

#[test]
fn criterion_05_known_quantile_bias() {
    let s = studies();
    let (s1, s3, s5) = (
        &s.reports[&ScenarioId::S1],
        &s.reports[&ScenarioId::S3],
        &s.reports[&ScenarioId::S5],
    );
    let s1_rb = rel_bias(s1, FitMode::Quantile);
    let s1_cp = s1.mode(FitMode::Quantile).unwrap().integral.coverage_95;
    let (s3_mean, s3_q) = (rel_bias(s3, FitMode::Mean), rel_bias(s3, FitMode::Quantile));
    let (s5_mean, s5_q) = (rel_bias(s5, FitMode::Mean), rel_bias(s5, FitMode::Quantile));
    let secs: f64 = [ScenarioId::S1, ScenarioId::S3, ScenarioId::S5]
        .iter()
        .map(|id| s.seconds[id])
        .sum();
    let checks = [
        s1_rb.abs() < 0.05,
        (85.0..=100.0).contains(&s1_cp),
        s3_mean > 0.0 && s3_mean > s3_q.abs(),
        s5_mean < 0.0,
        s5_q.abs() < 0.05,
        secs < 3600.0,
    ];
    report(
        5,
        checks.iter().all(|&c| c),
        format!(
            "S1 rel bias {s1_rb:.4} CP {s1_cp:.0}; S3 mean {s3_mean:.4} vs quantile {s3_q:.4}; \
             S5 mean {s5_mean:.4} quantile {s5_q:.4} (paired difference {:.4}); {secs:.0}s; checks {checks:?}",
            s5_mean - s5_q
        ),
    );
}

#[test]
fn criterion_06_uncertainty_propagation() {
    let r = &studies().reports[&ScenarioId::S2];
    let mut wider = 0;
    let mut matched = 0;
    for rec in &r.replicates {
        if let (Some(known), Some(est)) = (
            rec.fit(FitMode::Quantile),
            rec.fit(FitMode::QuantileWithErrors),
        ) {
            matched += 1;
            if est.integral_sd >= known.integral_sd {
                wider += 1;
            }
        }
    }
    let frac = wider as f64 / r.replicates.len() as f64;
    let cp = r
        .mode(FitMode::QuantileWithErrors)
        .unwrap()
        .integral
        .coverage_95;
    let secs = studies().seconds[&ScenarioId::S2];
    report(
        6,
        frac >= 0.8 && cp >= 85.0 && secs < 7200.0,
        format!("estimated SD >= known SD in {wider}/{matched} replicates, CP {cp:.0}, S2 study {secs:.0}s"),
    );
}

#[test]
fn criterion_07_waic_selection() {
    let s = studies();
    let share: Vec<(ScenarioId, f64)> = ScenarioId::ALL
        .iter()
        .map(|id| (*id, s.reports[id].waic_prefers_quantile.unwrap()))
        .collect();
    let pass = share.iter().all(|&(id, q)| match id {
        ScenarioId::S1 => 1.0 - q > 0.5,
        _ => q >= 0.7,
    });
    let detail: Vec<String> = share
        .iter()
        .map(|(id, q)| format!("{id:?} quantile {:.0}%", 100.0 * q))
        .collect();
    report(7, pass, detail.join(", "));
}

/// Mean and batch-means standard error.
fn mean_se(x: &[f64]) -> (f64, f64) {
    let batches = 20;
    let size = x.len() / batches;
    let means: Vec<f64> = x.chunks_exact(size).map(mean).collect();
    let m = mean(&means);
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (mean(x), (var / means.len() as f64).sqrt())
}

#[test]
fn criterion_08_reduction() {
    let spec = ScenarioSpec::desk(ScenarioId::S1);
    let rep = simulate_replicate(&spec, 0, true).unwrap();
    let panel = ExposurePanel::new(rep.world.exposures.clone())
        .unwrap()
        .with_counts(rep.counts.clone())
        .unwrap();
    let basis = spec.basis().unwrap();
    // intercept and log xi mix slowly in the near-Poisson regime, so use long chains
    let base = HealthConfig {
        degree: 0,
        mcmc: McmcSettings {
            iterations: 40_000,
            burn_in: 5_000,
            thin: 1,
        },
        ..Default::default()
    };
    let known = ExposureInput::Known {
        cross: CrossIntegralMatrix::new(&BernsteinBasis::new(0).unwrap(), &basis),
        theta: rep.world.theta.clone(),
    };
    let q: HealthChain = run_health_mcmc(
        &panel,
        &known,
        &HealthConfig {
            exposure_mode: ExposureMode::KnownQf,
            seed: 81,
            ..base.clone()
        },
    )
    .unwrap();
    let m: HealthChain = run_health_mcmc(
        &panel,
        &ExposureInput::Mean {
            mu: rep.world.mu.clone(),
        },
        &HealthConfig {
            exposure_mode: ExposureMode::Mean,
            seed: 82,
            ..base
        },
    )
    .unwrap();
    let pick =
        |c: &HealthChain, f: &dyn Fn(usize) -> f64| (0..c.draws()).map(f).collect::<Vec<f64>>();
    let params: [(&str, Vec<f64>, Vec<f64>); 3] = [
        (
            "slope",
            pick(&q, &|s| q.beta[s][0]),
            pick(&m, &|s| m.beta[s][0]),
        ),
        (
            "intercept",
            pick(&q, &|s| q.gamma[s][0]),
            pick(&m, &|s| m.gamma[s][0]),
        ),
        ("xi", q.xi.clone(), m.xi.clone()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, a, b) in &params {
        let ((ma, sa), (mb, sb)) = (mean_se(a), mean_se(b));
        let z = (ma - mb).abs() / (sa * sa + sb * sb).sqrt();
        pass &= z < 3.0;
        detail.push(format!("{name} {ma:.4} vs {mb:.4} ({z:.2} SE)"));
    }
    report(8, pass, detail.join(", "));
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_qfreg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_09_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let short = r#"{"iterations": 300, "burn_in": 100}"#;
    let configs = [
        (
            "sim.json",
            r#"{"scenario_id": "S4", "scenario": {"n": 25, "m": 20, "replicates": 2}}"#.to_string(),
        ),
        (
            "fq.json",
            format!(
                r#"{{"exposures": "data/rep_000/exposures.csv", "adjacency": "chain:25", "quantile": {{"mcmc": {short}}}}}"#
            ),
        ),
        (
            "fh.json",
            format!(
                r#"{{"counts": "data/rep_000/counts.csv", "theta_summary": "q/theta_summary.json",
                    "health": {{"exposure_mode": "estimated_qf", "mcmc": {short}}}}}"#
            ),
        ),
        ("ef.json", r#"{"chain": "h/health_chain.csv"}"#.to_string()),
        (
            "st.json",
            format!(
                r#"{{"scenario_id": "S4", "scenario": {{"n": 20, "m": 10, "replicates": 2}}, "health": {{"mcmc": {short}}}}}"#
            ),
        ),
    ];
    for (name, body) in &configs {
        std::fs::write(dir.join(name), body).unwrap();
    }
    // shared inputs for the fitting commands
    let mut ok = run_cli(
        &[
            "simulate", "--config", "sim.json", "--seed", "9", "--out", "data",
        ],
        dir,
    ) && run_cli(
        &[
            "fit-quantile",
            "--config",
            "fq.json",
            "--seed",
            "9",
            "--out",
            "q",
        ],
        dir,
    ) && run_cli(
        &[
            "fit-health",
            "--config",
            "fh.json",
            "--seed",
            "9",
            "--out",
            "h",
        ],
        dir,
    );
    let commands = [
        ("simulate", "sim.json"),
        ("fit-quantile", "fq.json"),
        ("fit-health", "fh.json"),
        ("effects", "ef.json"),
        ("study", "st.json"),
    ];
    let mut identical = Vec::new();
    for (cmd, cfg) in commands {
        let a = dir.join("runs").join(cmd).join("a");
        let b = dir.join("runs").join(cmd).join("b");
        for out in [&a, &b] {
            ok &= run_cli(
                &[
                    cmd,
                    "--config",
                    cfg,
                    "--seed",
                    "5",
                    "--out",
                    out.to_str().unwrap(),
                ],
                dir,
            );
        }
        let (ta, tb) = (tree(&a), tree(&b));
        identical.push((cmd, !ta.is_empty() && ta == tb));
    }
    let pass = ok && identical.iter().all(|(_, same)| *same);
    report(
        9,
        pass,
        format!("all commands succeeded: {ok}; byte-identical: {identical:?}"),
    );
}

fn fit(integral: [f64; 3], predictive: [[f64; 3]; 3], waic: f64) -> FitSummary {
    FitSummary {
        integral_mean: integral[0],
        integral_sd: 0.1,
        integral_lo: integral[1],
        integral_hi: integral[2],
        beta_curve: None,
        predictive: predictive.to_vec(),
        attributable: integral,
        waic,
        xi_mean: 1.0,
    }
}

#[test]
fn criterion_10_metric_plumbing() {
    // 2 replicates x 3 groups; predictive truths 1, 2, 3 in both replicates
    let truth = |integral: f64| Truth {
        integral,
        linear_effect: vec![1.0, 2.0, 3.0],
        attributable: integral,
        beta_curve: vec![],
    };
    let records = vec![
        ReplicateRecord {
            replicate: 0,
            seed: 0,
            fits: vec![
                (
                    FitMode::Mean,
                    Ok(fit(
                        [0.6, 0.4, 0.8],
                        [[1.1, 0.9, 1.3], [2.2, 2.1, 2.3], [2.7, 2.5, 3.5]],
                        10.0,
                    )),
                ),
                (
                    FitMode::Quantile,
                    Ok(fit(
                        [0.52, 0.3, 0.7],
                        [[1.0, 0.5, 1.5], [2.1, 1.9, 2.2], [3.0, 2.0, 4.0]],
                        9.0,
                    )),
                ),
            ],
        },
        ReplicateRecord {
            replicate: 1,
            seed: 1,
            fits: vec![
                (
                    FitMode::Mean,
                    Ok(fit(
                        [0.3, 0.1, 0.35],
                        [[0.8, 0.5, 1.5], [2.0, 1.0, 3.0], [3.6, 3.1, 3.9]],
                        8.0,
                    )),
                ),
                (
                    FitMode::Quantile,
                    Ok(fit(
                        [0.45, 0.4, 0.6],
                        [[0.9, 0.8, 0.95], [1.8, 1.7, 1.9], [3.3, 3.2, 3.4]],
                        9.5,
                    )),
                ),
            ],
        },
    ];
    let truths = [truth(0.5), truth(0.4)];
    let r = aggregate(
        ScenarioId::S1,
        &[FitMode::Mean, FitMode::Quantile],
        records,
        &truths,
    )
    .unwrap();
    let (mean_m, quant) = (
        r.mode(FitMode::Mean).unwrap(),
        r.mode(FitMode::Quantile).unwrap(),
    );

    // hand-computed
    let mean_pred_rb =
        (0.1 / 1.0 + 0.2 / 2.0 - 0.3 / 3.0 - 0.2 / 1.0 + 0.0 / 2.0 + 0.6 / 3.0) / 6.0;
    let mean_pred_mse = (0.01 + 0.04 + 0.09 + 0.04 + 0.0 + 0.36) / 6.0;
    let quant_pred_rb = (0.0 + 0.1 / 2.0 + 0.0 - 0.1 / 1.0 - 0.2 / 2.0 + 0.3 / 3.0) / 6.0;
    let quant_pred_mse = (0.0 + 0.01 + 0.0 + 0.01 + 0.04 + 0.09) / 6.0;
    let mean_int_rb = (0.1 / 0.5 - 0.1 / 0.4) / 2.0;
    let mean_int_mse = (0.01 + 0.01) / 2.0;
    let quant_int_mse = (0.0004 + 0.0025) / 2.0;
    let checks = [
        (mean_m.predictive.relative_bias.unwrap(), mean_pred_rb),
        (mean_m.predictive.mse, mean_pred_mse),
        (mean_m.predictive.coverage_95, 100.0 * 4.0 / 6.0),
        (quant.predictive.relative_bias.unwrap(), quant_pred_rb),
        (quant.predictive.mse, quant_pred_mse),
        (quant.predictive.coverage_95, 100.0 * 3.0 / 6.0),
        (
            quant.predictive.relative_mse.unwrap(),
            quant_pred_mse / mean_pred_mse,
        ),
        (mean_m.integral.relative_bias.unwrap(), mean_int_rb),
        (mean_m.integral.mse, mean_int_mse),
        (mean_m.integral.coverage_95, 50.0),
        (
            quant.integral.relative_mse.unwrap(),
            quant_int_mse / mean_int_mse,
        ),
        (quant.integral.coverage_95, 100.0),
        (r.waic_prefers_quantile.unwrap(), 0.5),
    ];
    let worst = checks
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report(
        10,
        worst < 1e-12,
        format!(
            "max deviation from hand values {worst:.1e} over {} checks",
            checks.len()
        ),
    );
}
