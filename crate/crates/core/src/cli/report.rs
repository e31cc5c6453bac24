//! Run artifacts. Column schemas:
//!
//! ```text
//! gradient_report.csv   iter,J,J_se,grad_norm,residual,step,seed
//! verify_report.csv     check,statistic,tolerance,pass,seed
//! policy.csv            control,feature,theta
//! diagnostics.csv       step,t,rho_mean,rho_se,z
//! metrics.csv           metric,value
//! oracle_curves.csv     t,P,Sigma,G
//! initial_summary.csv   name,mean,sd
//! ```
//!
//! Floats carry 17 significant digits. `summary.txt` holds `key = value`
//! lines for people; `manifest.toml` echoes the resolved configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::optimize::GradientReport;
use crate::policy::ControlPolicy;
use crate::simulate::{fmt_f64, MartingaleCheck};

use super::config::Config;

/// Output directory plus a record of the files written to it.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
    summary: Vec<(String, String)>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            summary: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Opens `name` in the output directory, hands a buffered writer to `f`
    /// and flushes it.
    pub fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    pub fn manifest(&mut self, command: &str, cfg: &Config) -> Result<()> {
        let text = format!(
            "# {} {}\ncommand = \"{command}\"\n\n{}",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            cfg.to_toml()
        );
        self.write("manifest.toml", |w| Ok(w.write_all(text.as_bytes())?))
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn summary_lines(&self) -> &[(String, String)] {
        &self.summary
    }

    /// Writes `summary.txt` from the accumulated notes.
    pub fn finish(&mut self) -> Result<()> {
        let lines: String = self
            .summary
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        self.write("summary.txt", |w| Ok(w.write_all(lines.as_bytes())?))
    }
}

pub fn write_gradient_report<W: Write>(reports: &[GradientReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "J", "J_se", "grad_norm", "residual", "step", "seed"])?;
    for r in reports {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.j.mean),
            fmt_f64(r.j.se),
            fmt_f64(r.grad_norm),
            fmt_f64(r.residual),
            fmt_f64(r.step),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_policy<W: Write>(pol: &ControlPolicy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["control", "feature", "theta"])?;
    let nf = pol.feature_map().feature_count();
    for (idx, v) in pol.theta().iter().enumerate() {
        w.write_record([(idx / nf).to_string(), (idx % nf).to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_martingale<W: Write>(checks: &[MartingaleCheck], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "t", "rho_mean", "rho_se", "z"])?;
    for c in checks {
        w.write_record([
            c.step.to_string(),
            fmt_f64(c.t),
            fmt_f64(c.estimate.mean),
            fmt_f64(c.estimate.se),
            c.z.map_or_else(|| "nan".into(), fmt_f64),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics<W: Write>(rows: &[(&str, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k.to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Estimate;

    #[test]
    fn gradient_report_header() {
        let r = GradientReport {
            iter: 0,
            j: Estimate {
                mean: 1.5,
                se: 0.25,
            },
            grad_norm: 2.0,
            residual: 0.5,
            step: 0.125,
            seed: 7,
        };
        let mut buf = Vec::new();
        write_gradient_report(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("iter,J,J_se,grad_norm,residual,step,seed")
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
    }

    #[test]
    fn summary_is_key_value_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        a.note("cost_gap_pct", 1.25);
        a.finish().unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert_eq!(text, "cost_gap_pct = 1.25\n");
        assert_eq!(a.written().len(), 1);
    }
}
