use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{LdpReport, StabilityReport, TransitionReport, Verdict};
use crate::error::{Error, Result};
use crate::graph::fmt_real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// A report with a tabular view and a JSON summary.
pub trait Report: Serialize + DeserializeOwned {
    fn csv_header() -> &'static [&'static str];
    fn csv_rows(&self) -> Vec<Vec<String>>;
    fn verdicts(&self) -> Vec<Verdict>;

    fn any_inconclusive(&self) -> bool {
        self.verdicts().contains(&Verdict::Inconclusive)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

impl Report for LdpReport {
    fn csv_header() -> &'static [&'static str] {
        &[
            "ball",
            "equilibrium",
            "eps",
            "mu_hat",
            "ci_low",
            "ci_high",
            "hits",
            "neg_eps_ln_mu",
            "neg_eps_ln_low",
            "neg_eps_ln_high",
            "rate",
            "beta",
            "insufficient",
            "verdict",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                let verdict = self.balls.iter().find(|b| b.ball == c.ball).map_or("", |b| b.verdict.as_str());
                vec![
                    c.ball.to_string(),
                    c.equilibrium.to_string(),
                    fmt_real(c.eps),
                    fmt_real(c.mu_hat),
                    fmt_real(c.ci_low),
                    fmt_real(c.ci_high),
                    c.hits.to_string(),
                    opt(c.neg_eps_ln_mu),
                    fmt_real(c.neg_eps_ln_low),
                    fmt_real(c.neg_eps_ln_high),
                    fmt_real(c.rate),
                    fmt_real(c.beta),
                    c.insufficient.to_string(),
                    verdict.to_string(),
                ]
            })
            .collect()
    }

    fn verdicts(&self) -> Vec<Verdict> {
        let mut v: Vec<Verdict> = self.balls.iter().map(|b| b.verdict).collect();
        if let Some(s) = &self.stability {
            v.extend(s.verdicts());
        }
        v
    }
}

impl Report for StabilityReport {
    fn csv_header() -> &'static [&'static str] {
        &["label", "eta", "eps", "mu_hat", "ci_low", "ci_high", "eps_ln_mu", "verdict"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let verdict = self.verdict.map_or("", |v| v.as_str());
        (0..self.eps.len())
            .map(|k| {
                vec![
                    self.label.clone(),
                    fmt_real(self.eta),
                    fmt_real(self.eps[k]),
                    fmt_real(self.mu_hat[k]),
                    fmt_real(self.ci_low[k]),
                    fmt_real(self.ci_high[k]),
                    fmt_real(self.eps_ln_mu[k]),
                    verdict.to_string(),
                ]
            })
            .collect()
    }

    fn verdicts(&self) -> Vec<Verdict> {
        self.verdict.into_iter().collect()
    }
}

impl Report for TransitionReport {
    fn csv_header() -> &'static [&'static str] {
        &[
            "from",
            "to",
            "eps",
            "trials",
            "hits",
            "p_hat",
            "ci_low",
            "ci_high",
            "neg_eps_ln_p",
            "neg_eps_ln_low",
            "neg_eps_ln_high",
            "v_tilde",
            "beta",
            "resolved",
            "verdict",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                let verdict = self
                    .pairs
                    .iter()
                    .find(|p| p.from == c.from && p.to == c.to)
                    .map_or("", |p| p.verdict.as_str());
                vec![
                    c.from.to_string(),
                    c.to.to_string(),
                    fmt_real(c.eps),
                    c.trials.to_string(),
                    c.hits.to_string(),
                    fmt_real(c.p_hat),
                    fmt_real(c.ci_low),
                    fmt_real(c.ci_high),
                    opt(c.neg_eps_ln_p),
                    fmt_real(c.neg_eps_ln_low),
                    fmt_real(c.neg_eps_ln_high),
                    fmt_real(c.v_tilde),
                    opt(c.beta),
                    c.resolved.to_string(),
                    verdict.to_string(),
                ]
            })
            .collect()
    }

    fn verdicts(&self) -> Vec<Verdict> {
        self.pairs.iter().map(|p| p.verdict).collect()
    }
}

fn write_csv<R: Report>(report: &R, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(R::csv_header()).map_err(|e| Error::ser(path, e))?;
    for row in report.csv_rows() {
        w.write_record(&row).map_err(|e| Error::ser(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::ser(path, e))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Write `<dir>/<stem>.csv` and/or `<dir>/<stem>.json`; returns the paths written.
pub fn emit<R: Report>(report: &R, dir: &Path, stem: &str, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    if matches!(format, Format::Csv | Format::Both) {
        let p = dir.join(format!("{stem}.csv"));
        write_csv(report, &p)?;
        out.push(p);
    }
    if matches!(format, Format::Json | Format::Both) {
        let p = dir.join(format!("{stem}.json"));
        let s = serde_json::to_string_pretty(report).map_err(|e| Error::ser(&p, e))?;
        std::fs::write(&p, s + "\n").map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_report<R: Report>(path: &Path) -> Result<R> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::ser(path, e))
}
