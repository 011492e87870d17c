use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::ExperimentKind;
use super::slope::SlopeFit;
use crate::averaging::fmt17;
use crate::error::Result;

/// One metric at one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub eps: f64,
    /// Partition width for sweep rows; particle count or time step where
    /// the metric name says so.
    pub param: f64,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub replications: usize,
    pub aborts: usize,
}

/// Named pass/fail outcome with a one-line explanation.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub slope: Option<SlopeFit>,
    pub checks: Vec<Check>,
    pub config_echo: String,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn new(kind: ExperimentKind, seed: u64, config_echo: String) -> Self {
        Self {
            kind,
            seed,
            rows: Vec::new(),
            slope: None,
            checks: Vec::new(),
            config_echo,
            wall_clock_secs: 0.0,
        }
    }

    pub fn push(&mut self, eps: f64, param: f64, metric: &str, value: f64, se: f64, reps: usize, aborts: usize) {
        self.rows.push(ReportRow {
            eps,
            param,
            metric: metric.to_string(),
            value,
            se,
            replications: reps,
            aborts,
        });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn rows_for(&self, metric: &str) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.metric == metric).collect()
    }

    pub fn write_rows_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eps", "param", "metric", "value", "se", "replications", "aborts"])?;
        for r in &self.rows {
            w.write_record([
                fmt17(r.eps),
                fmt17(r.param),
                r.metric.clone(),
                fmt17(r.value),
                fmt17(r.se),
                r.replications.to_string(),
                r.aborts.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_checks_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "passed", "detail"])?;
        for c in &self.checks {
            w.write_record([c.name.as_str(), if c.passed { "true" } else { "false" }, c.detail.as_str()])?;
        }
        if let Some(s) = &self.slope {
            w.write_record([
                "slope_fit",
                "info",
                &format!(
                    "slope={} se={} ci=[{}, {}] used={} excluded={}",
                    fmt17(s.slope),
                    fmt17(s.se),
                    fmt17(s.ci.0),
                    fmt17(s.ci.1),
                    s.used,
                    s.excluded
                ),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<kind>.csv`, `<kind>_checks.csv`, `<kind>_config.toml` and the
    /// wall-clock time to `<kind>_timing.txt` (the only non-reproducible file).
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = self.kind.name();
        let rows = dir.join(format!("{stem}.csv"));
        let checks = dir.join(format!("{stem}_checks.csv"));
        let config = dir.join(format!("{stem}_config.toml"));
        let timing = dir.join(format!("{stem}_timing.txt"));
        self.write_rows_to(std::fs::File::create(&rows)?)?;
        self.write_checks_to(std::fs::File::create(&checks)?)?;
        std::fs::write(&config, &self.config_echo)?;
        std::fs::write(&timing, format!("wall_clock_secs = {:.3}\n", self.wall_clock_secs))?;
        Ok(vec![rows, checks, config, timing])
    }
}
