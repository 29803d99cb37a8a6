//! Report files. Every file starts with a format header line; bodies carry no
//! timestamps, so equal inputs give byte-identical files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hvopt::stationarity::{Certificate, Verdict};
use serde::Serialize;

pub const REPORT_FORMAT: &str = "hvopt-report 1";

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn text(&mut self, name: &str, body: &str) -> io::Result<()> {
        let p = self.path(name);
        fs::write(p, format!("# {REPORT_FORMAT}\n{body}"))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let p = self.path(name);
        let doc = serde_json::json!({ "format": REPORT_FORMAT, "report": value });
        let mut s = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
        s.push('\n');
        fs::write(p, s)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn vector(x: &[f64]) -> String {
    x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

pub fn verdict(v: &Verdict) -> &'static str {
    match v {
        Verdict::PseudoBStationary => "pseudo-b-stationary",
        Verdict::Fails { .. } => "fails",
        Verdict::Inconclusive(_) => "inconclusive",
    }
}

pub fn certificate_line(c: &Certificate) -> String {
    let mut s = format!("{} (min directional derivative {})", verdict(&c.verdict), c.min_dd);
    if let Verdict::Inconclusive(why) = &c.verdict {
        s.push_str(&format!(": {why}"));
    }
    if let Some(w) = &c.witness {
        if c.verdict.is_failure() {
            s.push_str(&format!(", descent direction [{}]", vector(w)));
        }
    }
    s
}
