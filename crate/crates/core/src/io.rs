//! CSV tables with `# key=value` metadata lines ahead of the header.
//!
//! Floats are written with 17 significant digits so that a value read back
//! is bit-identical and repeated runs produce identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gf::{GfSeries, Route};
use crate::krylov::KrylovSolution;
use crate::moments::{MomentRoute, MomentSet};
use crate::texpand::EnergyCurve;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::Parse(format!("missing metadata {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("bad value {raw:?} for {key:?}")))
    }

    /// Parsed column by header name.
    pub fn column<T: FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name:?}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[idx]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {r}, column {name:?}: {:?}", row[idx])))
            })
            .collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for (k, v) in &self.meta {
            if v.contains('\n') {
                return Err(Error::InvalidArgument(format!("metadata {k:?} spans lines")));
            }
            writeln!(w, "# {k}={v}")?;
        }
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record(&self.header)?;
        for row in &self.rows {
            csv.write_record(row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut meta = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim_start().split_once('=') {
                    meta.push((k.trim().to_string(), v.to_string()));
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let header = csv.headers()?.iter().map(str::to_string).collect();
        let rows = csv
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { meta, header, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

/// Columns `t,re,im,re_err,im_err`, plus `re_exact,im_exact` when an overlay is given.
pub fn gf_table(s: &GfSeries, exact: Option<&GfSeries>) -> Result<Table> {
    let mut header = vec!["t", "re", "im", "re_err", "im_err"];
    if let Some(e) = exact {
        if e.len() != s.len() {
            return Err(Error::InvalidGrid("overlay length differs".into()));
        }
        header.extend(["re_exact", "im_exact"]);
    }
    let mut t = Table::new(&header)
        .with_meta("route", s.route)
        .with_meta("shots", s.shots)
        .with_meta("seed", s.seed)
        .with_meta("model", &s.model);
    for k in 0..s.len() {
        let mut row = vec![
            fmt_f64(s.t[k]),
            fmt_f64(s.re[k]),
            fmt_f64(s.im[k]),
            fmt_f64(s.re_err[k]),
            fmt_f64(s.im_err[k]),
        ];
        if let Some(e) = exact {
            row.push(fmt_f64(e.re[k]));
            row.push(fmt_f64(e.im[k]));
        }
        t.push(row);
    }
    Ok(t)
}

pub fn gf_from_table(t: &Table) -> Result<GfSeries> {
    let s = GfSeries {
        t: t.column("t")?,
        re: t.column("re")?,
        im: t.column("im")?,
        re_err: t.column("re_err")?,
        im_err: t.column("im_err")?,
        shots: t.meta_parsed("shots")?,
        route: t.meta_parsed::<Route>("route")?,
        model: t.meta("model").unwrap_or_default().to_string(),
        seed: t.meta_parsed("seed")?,
    };
    s.validate()?;
    Ok(s)
}

/// Columns `K,moment,error` in the set's frame, plus `raw` (`<H^K>`).
pub fn moments_table(m: &MomentSet) -> Table {
    let raw = m.raw();
    let mut t = Table::new(&["K", "moment", "error", "raw"])
        .with_meta("route", m.route())
        .with_meta("shift", fmt_f64(m.shift()))
        .with_meta("scale", fmt_f64(m.scale()))
        .with_meta("source", m.source());
    for k in 0..=m.max_order() {
        t.push(vec![
            k.to_string(),
            fmt_f64(m.values()[k]),
            fmt_f64(m.errors()[k]),
            fmt_f64(raw[k]),
        ]);
    }
    t
}

pub fn moments_from_table(t: &Table) -> Result<MomentSet> {
    let orders: Vec<usize> = t.column("K")?;
    if orders.iter().enumerate().any(|(i, &k)| i != k) {
        return Err(Error::Parse("moment orders must run 0, 1, 2, ...".into()));
    }
    MomentSet::new(
        t.column("moment")?,
        t.column("error")?,
        t.meta_parsed::<MomentRoute>("route")?,
        t.meta_parsed("shift")?,
        t.meta_parsed("scale")?,
        t.meta("source").unwrap_or_default(),
    )
}

/// Columns `tau,E,dEdtau`, plus `E_exact,dEdtau_exact` when an oracle curve is given.
pub fn curve_table(c: &EnergyCurve, oracle: Option<&EnergyCurve>) -> Table {
    let mut header = vec!["tau", "E", "dEdtau"];
    if oracle.is_some() {
        header.extend(["E_exact", "dEdtau_exact"]);
    }
    let mut t = Table::new(&header)
        .with_meta("energy_at_end", fmt_f64(c.energy_at_end))
        .with_meta("asymptote", fmt_f64(c.asymptote))
        .with_meta("tail", fmt_f64(c.tail));
    for k in 0..c.tau.len() {
        let mut row = vec![fmt_f64(c.tau[k]), fmt_f64(c.energy[k]), fmt_f64(c.dedtau[k])];
        if let Some(o) = oracle {
            row.push(fmt_f64(o.energy[k]));
            row.push(fmt_f64(o.dedtau[k]));
        }
        t.push(row);
    }
    t
}

/// Columns `M,alpha,E,weight,retained_dim`, one block per solution.
pub fn eigen_table(solutions: &[KrylovSolution]) -> Table {
    let mut t = Table::new(&["M", "alpha", "E", "weight", "retained_dim"]);
    for s in solutions {
        for (a, (e, w)) in s.energies.iter().zip(&s.weights).enumerate() {
            t.push(vec![
                s.order.to_string(),
                a.to_string(),
                fmt_f64(*e),
                fmt_f64(*w),
                s.retained.to_string(),
            ]);
        }
    }
    t
}

/// Columns `t,P0_approx,P0_exact`.
pub fn survival_table(t: &[f64], approx: &[f64], exact: &[f64]) -> Table {
    let mut out = Table::new(&["t", "P0_approx", "P0_exact"]);
    for k in 0..t.len() {
        out.push(vec![fmt_f64(t[k]), fmt_f64(approx[k]), fmt_f64(exact[k])]);
    }
    out
}
