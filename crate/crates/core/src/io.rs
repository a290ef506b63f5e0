//! CSV and JSON formats for panels, chains and summaries.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::health_stage::{CurvePoint, ExposureMode, HealthChain};
use crate::panel::ExposurePanel;
use crate::quantile_stage::QuantileChain;

/// `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| match e.classify() {
        serde_json::error::Category::Io => Error::io(path, e.into()),
        _ => Error::Config(format!("{}: {e}", path.display())),
    })
}

/// Line number (1-based, header = line 1) of a record.
fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    col: usize,
    what: &str,
    path: &Path,
) -> Result<T> {
    let raw = rec.get(col).ok_or_else(|| {
        Error::Validation(format!(
            "{} line {}: missing {what} column",
            path.display(),
            line_of(rec)
        ))
    })?;
    raw.trim().parse().map_err(|_| {
        Error::Validation(format!(
            "{} line {}: cannot parse {what} from {raw:?}",
            path.display(),
            line_of(rec)
        ))
    })
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => Error::Validation(format!("{} line {}: {e}", path.display(), p.line())),
            None => Error::Csv(e),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Two-column `(group_id, value)` rows; ids must cover `0..n` with no gaps.
fn grouped_values<T: std::str::FromStr>(path: &Path, what: &str) -> Result<Vec<Vec<T>>> {
    let mut groups: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for rec in records(path)? {
        let id: usize = parse_field(&rec, 0, "group_id", path)?;
        let v: T = parse_field(&rec, 1, what, path)?;
        groups.entry(id).or_default().push(v);
    }
    let n = groups.keys().next_back().map_or(0, |m| m + 1);
    if n == 0 {
        return Err(Error::Validation(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        match groups.remove(&i) {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Validation(format!(
                    "group {i} has no rows in {}",
                    path.display()
                )))
            }
        }
    }
    Ok(out)
}

/// Individual exposures as `group_id,value`.
pub fn read_exposures_csv(path: &Path) -> Result<ExposurePanel> {
    ExposurePanel::new(grouped_values(path, "value")?)
}

pub fn write_exposures_csv(path: &Path, exposures: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["group_id", "value"])?;
    for (i, xs) in exposures.iter().enumerate() {
        for &x in xs {
            w.write_record([i.to_string(), fmt_f64(x)])?;
        }
    }
    flush(w, path)
}

fn one_per_group<T: std::str::FromStr + Copy>(
    path: &Path,
    what: &str,
    n: Option<usize>,
) -> Result<Vec<T>> {
    let groups: Vec<Vec<T>> = grouped_values(path, what)?;
    if let Some(n) = n {
        if groups.len() != n {
            return Err(Error::Validation(format!(
                "{} covers {} groups, expected {n}",
                path.display(),
                groups.len()
            )));
        }
    }
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| match g.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Validation(format!(
                "group {i} has {} rows in {}, expected one",
                g.len(),
                path.display()
            ))),
        })
        .collect()
}

/// Counts as `group_id,y`.
pub fn read_counts_csv(path: &Path, n: Option<usize>) -> Result<Vec<u64>> {
    one_per_group(path, "y", n)
}

pub fn write_counts_csv(path: &Path, y: &[u64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["group_id", "y"])?;
    for (i, v) in y.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    flush(w, path)
}

/// Mean exposures as `group_id,mu`.
pub fn read_means_csv(path: &Path, n: Option<usize>) -> Result<Vec<f64>> {
    one_per_group(path, "mu", n)
}

pub fn write_means_csv(path: &Path, mu: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["group_id", "mu"])?;
    for (i, v) in mu.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(*v)])?;
    }
    flush(w, path)
}

/// Covariates as `group_id,z1,...,zq`, one row per group.
pub fn read_covariates_csv(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let recs = records(path)?;
    let q = recs.first().map_or(0, |r| r.len().saturating_sub(1));
    if q == 0 {
        return Err(Error::Validation(format!(
            "{} has no covariate columns",
            path.display()
        )));
    }
    let mut z = DMatrix::from_element(n, q, f64::NAN);
    let mut seen = vec![false; n];
    for rec in &recs {
        if rec.len() != q + 1 {
            return Err(Error::Validation(format!(
                "{} line {}: expected {} columns",
                path.display(),
                line_of(rec),
                q + 1
            )));
        }
        let id: usize = parse_field(rec, 0, "group_id", path)?;
        if id >= n || seen[id] {
            return Err(Error::Validation(format!(
                "{} line {}: group_id {id} is out of range or repeated",
                path.display(),
                line_of(rec)
            )));
        }
        seen[id] = true;
        for c in 0..q {
            z[(id, c)] = parse_field(rec, c + 1, "covariate", path)?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Validation(format!(
            "group {i} has no covariate row in {}",
            path.display()
        )));
    }
    Ok(z)
}

fn flush(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per retained draw: `theta0_i`, `thetastar_l_i` (unfloored), then the
/// GMRF hyperparameters when present.
pub fn write_quantile_chain_csv(path: &Path, chain: &QuantileChain) -> Result<()> {
    let (n, l) = (chain.groups(), chain.pieces());
    let with_hyper = !chain.hyper.is_empty();
    let mut header: Vec<String> = (0..n).map(|i| format!("theta0_{i}")).collect();
    for k in 1..=l {
        header.extend((0..n).map(|i| format!("thetastar_{k}_{i}")));
    }
    if with_hyper {
        header.extend(["sigma0sq", "sigma1sq", "rho0", "rho1"].map(String::from));
    }
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    let stride = n * (l + 1);
    for (s, row) in chain.raw().chunks(stride).enumerate() {
        let mut rec: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        if with_hyper {
            let h = &chain.hyper[s];
            rec.extend([h.sigma0sq, h.sigma1sq, h.rho0, h.rho1].map(fmt_f64));
        }
        w.write_record(&rec)?;
    }
    flush(w, path)
}

/// Columns `beta_k` (or `alpha` in mean mode), `gamma_k`, `xi`, optional
/// `sigma_eps2`, `effect_i` and `ll_i`.
pub fn write_health_chain_csv(path: &Path, chain: &HealthChain) -> Result<()> {
    let nb = chain.beta.first().map_or(0, Vec::len);
    let ng = chain.gamma.first().map_or(0, Vec::len);
    let n = chain.loglik.first().map_or(0, Vec::len);
    let mut header: Vec<String> = if chain.mode == ExposureMode::Mean {
        vec!["alpha".into()]
    } else {
        (0..nb).map(|k| format!("beta_{k}")).collect()
    };
    header.extend((0..ng).map(|k| format!("gamma_{k}")));
    header.push("xi".into());
    if chain.sigma_eps2.is_some() {
        header.push("sigma_eps2".into());
    }
    header.extend((0..n).map(|i| format!("effect_{i}")));
    header.extend((0..n).map(|i| format!("ll_{i}")));
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for s in 0..chain.draws() {
        let mut rec: Vec<String> = chain.beta[s].iter().map(|&v| fmt_f64(v)).collect();
        rec.extend(chain.gamma[s].iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(chain.xi[s]));
        if let Some(se) = &chain.sigma_eps2 {
            rec.push(fmt_f64(se[s]));
        }
        rec.extend(chain.exposure_effect[s].iter().map(|&v| fmt_f64(v)));
        rec.extend(chain.loglik[s].iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    flush(w, path)
}

/// Reads a chain written by [`write_health_chain_csv`].
///
/// Latent draws (`omega`, `theta`, `epsilon`) are not persisted. Chains with a
/// `beta_k` header read back as known-quantile mode.
pub fn read_health_chain_csv(path: &Path) -> Result<HealthChain> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    let cols = |prefix: &str| -> Vec<usize> {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(prefix)
                    .is_some_and(|r| r.parse::<usize>().is_ok())
            })
            .map(|(c, _)| c)
            .collect()
    };
    let find = |name: &str| header.iter().position(|h| h == name);
    let alpha = find("alpha");
    let beta_cols = match alpha {
        Some(c) => vec![c],
        None => cols("beta_"),
    };
    let gamma_cols = cols("gamma_");
    let effect_cols = cols("effect_");
    let ll_cols = cols("ll_");
    let xi_col = find("xi")
        .ok_or_else(|| Error::Validation(format!("{}: missing xi column", path.display())))?;
    if beta_cols.is_empty() || gamma_cols.is_empty() || effect_cols.len() != ll_cols.len() {
        return Err(Error::Validation(format!(
            "{}: not a health chain file",
            path.display()
        )));
    }
    let se_col = find("sigma_eps2");
    let mut chain = HealthChain {
        mode: if alpha.is_some() {
            ExposureMode::Mean
        } else {
            ExposureMode::KnownQf
        },
        degree: beta_cols.len() - 1,
        beta: Vec::new(),
        gamma: Vec::new(),
        xi: Vec::new(),
        omega: Vec::new(),
        epsilon: None,
        sigma_eps2: se_col.map(|_| Vec::new()),
        theta: None,
        exposure_effect: Vec::new(),
        loglik: Vec::new(),
        xi_acceptance: f64::NAN,
        xi_proposal_var: f64::NAN,
    };
    for rec in rdr.records() {
        let rec = rec?;
        let get = |cs: &[usize]| -> Result<Vec<f64>> {
            cs.iter()
                .map(|&c| parse_field(&rec, c, "value", path))
                .collect()
        };
        chain.beta.push(get(&beta_cols)?);
        chain.gamma.push(get(&gamma_cols)?);
        chain.xi.push(parse_field(&rec, xi_col, "xi", path)?);
        if let (Some(c), Some(v)) = (se_col, chain.sigma_eps2.as_mut()) {
            v.push(parse_field(&rec, c, "sigma_eps2", path)?);
        }
        chain.exposure_effect.push(get(&effect_cols)?);
        chain.loglik.push(get(&ll_cols)?);
    }
    Ok(chain)
}

/// `tau,mean,lo95,hi95`.
pub fn write_beta_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["tau", "mean", "lo95", "hi95"])?;
    for c in curve {
        w.write_record([c.tau, c.mean, c.lo95, c.hi95].map(fmt_f64))?;
    }
    flush(w, path)
}

/// Flat metrics table with [`crate::simkit::TABLE_HEADER`] columns.
pub fn write_table_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(crate::simkit::TABLE_HEADER)?;
    for r in rows {
        w.write_record(r)?;
    }
    flush(w, path)
}
