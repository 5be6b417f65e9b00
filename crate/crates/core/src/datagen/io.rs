//! Dataset directory layout:
//!
//! ```text
//! meta.json   {"format_version":1,"n":..,"t":..,"d":..,"regime":"..","seed":..}
//! x.csv       header t0_d0,t0_d1,..; one row per sample, column t*D + d
//! y.csv       header t0,t1,..;       one row per sample
//! truth.csv   same layout as x.csv with 0/1 entries
//! group.csv   header group;          one row per sample
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Regime, TruthMask};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub regime: Regime,
    pub seed: u64,
}

fn write_rows<I, R>(path: &Path, header: Vec<String>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path, width: usize, rows: usize) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.len() != rows || records.iter().any(|rec| rec.len() != width) {
        return Err(Error::Format(format!(
            "{}: expected {rows} rows of {width} columns",
            path.display()
        )));
    }
    Ok(records)
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{}: cannot parse `{field}`", path.display())))
}

pub fn write_dataset<S: Scalar>(dir: &Path, ds: &Dataset<S>) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let (n, t, d) = ds.dims();
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        n,
        t,
        d,
        regime: ds.regime,
        seed: ds.seed,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let cell_header: Vec<String> = (0..t).flat_map(|s| (0..d).map(move |j| format!("t{s}_d{j}"))).collect();
    let len = t * d;
    let x = ds.x.data();
    write_rows(
        &dir.join("x.csv"),
        cell_header.clone(),
        (0..n).map(|i| x[i * len..(i + 1) * len].iter().map(|v| v.to_string())),
    )?;
    let truth = ds.truth.cells();
    write_rows(
        &dir.join("truth.csv"),
        cell_header,
        (0..n).map(|i| truth[i * len..(i + 1) * len].iter().map(|&c| u8::from(c).to_string())),
    )?;
    let y = ds.y.data();
    write_rows(
        &dir.join("y.csv"),
        (0..t).map(|s| format!("t{s}")).collect(),
        (0..n).map(|i| y[i * t..(i + 1) * t].iter().map(|v| v.to_string())),
    )?;
    write_rows(
        &dir.join("group.csv"),
        vec!["group".into()],
        ds.group.iter().map(|g| std::iter::once(g.to_string())),
    )?;
    Ok(())
}

pub fn read_dataset<S: Scalar>(dir: &Path) -> Result<Dataset<S>> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset format {}", meta.format_version)));
    }
    let DatasetMeta { n, t, d, .. } = meta;
    let len = t * d;

    let path = dir.join("x.csv");
    let mut x = Vec::with_capacity(n * len);
    for rec in read_rows(&path, len, n)? {
        for f in rec.iter() {
            x.push(parse::<S>(f, &path)?);
        }
    }
    let path = dir.join("truth.csv");
    let mut truth = Vec::with_capacity(n * len);
    for rec in read_rows(&path, len, n)? {
        for f in rec.iter() {
            truth.push(match f {
                "0" => false,
                "1" => true,
                other => return Err(Error::Format(format!("truth entry `{other}` is not 0/1"))),
            });
        }
    }
    let path = dir.join("y.csv");
    let mut y = Vec::with_capacity(n * t);
    for rec in read_rows(&path, t, n)? {
        for f in rec.iter() {
            y.push(parse::<S>(f, &path)?);
        }
    }
    let path = dir.join("group.csv");
    let group = read_rows(&path, 1, n)?
        .iter()
        .map(|rec| parse::<u8>(&rec[0], &path))
        .collect::<Result<Vec<_>>>()?;

    let ds = Dataset {
        regime: meta.regime,
        seed: meta.seed,
        x: Tensor::new(vec![n, t, d], x)?,
        y: Tensor::new(vec![n, t], y)?,
        truth: TruthMask::new([n, t, d], truth)?,
        group,
    };
    ds.validate()?;
    Ok(ds)
}
