//! On-disk caches for assembled operators and numerical equilibria.
//!
//! A cache file is a short text header followed by raw little-endian `f64`
//! data:
//!
//! ```text
//! LEVYFP-CACHE
//! format_version=1
//! kind=operator
//! s=0.5
//! ...
//! data=16384
//! <16384 × 8 bytes>
//! ```
//!
//! Header floats use Rust's shortest round-trip representation and the body
//! stores the bit patterns, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;

use crate::collision::{compute_equilibrium, CollisionOperator, EquilibriumProfile};
use crate::error::{Error, Result};
use crate::fraclap::{assemble_ls, FracLapParams, OperatorKind, SpectralOperator};
use crate::grids::VelocityGrid;

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "LEVYFP-CACHE";

#[derive(Debug, Clone, PartialEq)]
struct CacheFile {
    header: BTreeMap<String, String>,
    data: Vec<f64>,
}

impl CacheFile {
    fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        // Write to a sibling and rename so readers never see a partial file.
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            writeln!(out, "{MAGIC}")?;
            writeln!(out, "format_version={CACHE_FORMAT_VERSION}")?;
            for (k, v) in &self.header {
                writeln!(out, "{k}={v}")?;
            }
            writeln!(out, "data={}", self.data.len())?;
            for x in &self.data {
                out.write_all(&x.to_le_bytes())?;
            }
            out.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut line = String::new();
        let mut next_line = |input: &mut BufReader<File>| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::CacheFormat("unexpected end of header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut input)? != MAGIC {
            return Err(Error::CacheFormat(format!(
                "{} is not a cache file",
                path.display()
            )));
        }
        let version = next_line(&mut input)?;
        if version != format!("format_version={CACHE_FORMAT_VERSION}") {
            return Err(Error::CacheFormat(format!("unsupported {version}")));
        }
        let mut header = BTreeMap::new();
        let count = loop {
            let l = next_line(&mut input)?;
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::CacheFormat(format!("bad header line {l:?}")))?;
            if k == "data" {
                break v
                    .parse::<usize>()
                    .map_err(|_| Error::CacheFormat(format!("bad data count {v:?}")))?;
            }
            header.insert(k.to_string(), v.to_string());
        };
        let mut bytes = vec![0u8; count * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::CacheFormat("truncated data block".into()))?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::CacheFormat("trailing bytes after data block".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { header, data })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CacheFormat(format!("missing header field {key}")))
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::CacheFormat(format!("cannot parse {key}={v}")))
    }
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

/// Identifies an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorKey {
    pub s: f64,
    pub n_v: usize,
    pub l_v: f64,
    pub l_lim: usize,
}

impl OperatorKey {
    pub fn of(op: &SpectralOperator) -> Self {
        Self {
            s: op.s(),
            n_v: op.len(),
            l_v: op.grid().l_v(),
            l_lim: op.l_lim(),
        }
    }

    pub fn file_name(&self, kind: OperatorKind) -> String {
        let prefix = match kind {
            OperatorKind::FracLap => "ls",
            OperatorKind::Collision => "ps",
        };
        format!(
            "{prefix}-s{:016x}-n{}-lv{:016x}-lim{}.bin",
            self.s.to_bits(),
            self.n_v,
            self.l_v.to_bits(),
            self.l_lim
        )
    }

    fn matches(&self, other: &Self) -> bool {
        self.s.to_bits() == other.s.to_bits()
            && self.n_v == other.n_v
            && self.l_v.to_bits() == other.l_v.to_bits()
            && self.l_lim == other.l_lim
    }
}

pub fn write_operator(path: &Path, op: &SpectralOperator) -> Result<()> {
    let key = OperatorKey::of(op);
    let mut header = BTreeMap::new();
    header.insert("kind".into(), "operator".into());
    header.insert("operator_kind".into(), op.kind().tag().to_string());
    header.insert("s".into(), float(key.s));
    header.insert("n_v".into(), key.n_v.to_string());
    header.insert("l_v".into(), float(key.l_v));
    header.insert("l_lim".into(), key.l_lim.to_string());
    CacheFile {
        header,
        data: op.mat().as_slice().to_vec(),
    }
    .write(path)
}

pub fn read_operator(path: &Path) -> Result<SpectralOperator> {
    let file = CacheFile::read(path)?;
    if file.get("kind")? != "operator" {
        return Err(Error::CacheFormat("not an operator cache".into()));
    }
    let kind = OperatorKind::from_tag(file.get_parsed("operator_kind")?)
        .ok_or_else(|| Error::CacheFormat("unknown operator kind".into()))?;
    let s: f64 = file.get_parsed("s")?;
    let n_v: usize = file.get_parsed("n_v")?;
    let l_v: f64 = file.get_parsed("l_v")?;
    let l_lim: usize = file.get_parsed("l_lim")?;
    if file.data.len() != n_v * n_v {
        return Err(Error::CacheFormat(format!(
            "operator data has {} entries, expected {}",
            file.data.len(),
            n_v * n_v
        )));
    }
    let grid = VelocityGrid::new(n_v, l_v)?;
    let mat = DMatrix::from_column_slice(n_v, n_v, &file.data);
    Ok(SpectralOperator::from_parts(mat, s, l_lim, grid, kind))
}

/// Returns `L_s` from `dir` if a matching cache exists, otherwise assembles
/// it and stores it there.
pub fn load_or_assemble_ls(
    dir: Option<&Path>,
    params: &FracLapParams,
    grid: &VelocityGrid,
) -> Result<SpectralOperator> {
    let key = OperatorKey {
        s: params.s(),
        n_v: grid.len(),
        l_v: grid.l_v(),
        l_lim: params.l_lim(),
    };
    let Some(dir) = dir else {
        return assemble_ls(params, grid);
    };
    let path = dir.join(key.file_name(OperatorKind::FracLap));
    if path.exists() {
        match read_operator(&path) {
            Ok(op) if op.kind() == OperatorKind::FracLap && OperatorKey::of(&op).matches(&key) => {
                return Ok(op)
            }
            Ok(_) => warn!("{} does not match its key; rebuilding", path.display()),
            Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let op = assemble_ls(params, grid)?;
    write_operator(&path, &op)?;
    Ok(op)
}

/// Identifies a numerical equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumKey {
    pub operator: OperatorKey,
    pub dt: f64,
    pub delta: f64,
}

impl EquilibriumKey {
    pub fn file_name(&self) -> String {
        let op = self.operator.file_name(OperatorKind::Collision);
        let stem = op.trim_end_matches(".bin").replacen("ps-", "eq-", 1);
        format!(
            "{stem}-dt{:016x}-d{:016x}.bin",
            self.dt.to_bits(),
            self.delta.to_bits()
        )
    }

    fn matches(&self, other: &Self) -> bool {
        self.operator.matches(&other.operator)
            && self.dt.to_bits() == other.dt.to_bits()
            && self.delta.to_bits() == other.delta.to_bits()
    }
}

pub fn write_equilibrium(path: &Path, key: &EquilibriumKey, eq: &EquilibriumProfile) -> Result<()> {
    let mut header = BTreeMap::new();
    header.insert("kind".into(), "equilibrium".into());
    header.insert("s".into(), float(key.operator.s));
    header.insert("n_v".into(), key.operator.n_v.to_string());
    header.insert("l_v".into(), float(key.operator.l_v));
    header.insert("l_lim".into(), key.operator.l_lim.to_string());
    header.insert("dt".into(), float(key.dt));
    header.insert("delta".into(), float(key.delta));
    header.insert("mass".into(), float(eq.mass));
    header.insert("tail_slope".into(), float(eq.tail_slope));
    header.insert("t_converged".into(), float(eq.t_converged));
    header.insert("steps".into(), eq.steps.to_string());
    let mut data = eq.m.clone();
    data.extend_from_slice(&eq.raw_limit);
    CacheFile { header, data }.write(path)
}

pub fn read_equilibrium(path: &Path) -> Result<(EquilibriumKey, EquilibriumProfile)> {
    let file = CacheFile::read(path)?;
    if file.get("kind")? != "equilibrium" {
        return Err(Error::CacheFormat("not an equilibrium cache".into()));
    }
    let key = EquilibriumKey {
        operator: OperatorKey {
            s: file.get_parsed("s")?,
            n_v: file.get_parsed("n_v")?,
            l_v: file.get_parsed("l_v")?,
            l_lim: file.get_parsed("l_lim")?,
        },
        dt: file.get_parsed("dt")?,
        delta: file.get_parsed("delta")?,
    };
    let n = key.operator.n_v;
    if file.data.len() != 2 * n {
        return Err(Error::CacheFormat(format!(
            "equilibrium data has {} entries, expected {}",
            file.data.len(),
            2 * n
        )));
    }
    let eq = EquilibriumProfile {
        m: file.data[..n].to_vec(),
        raw_limit: file.data[n..].to_vec(),
        mass: file.get_parsed("mass")?,
        tail_slope: file.get_parsed("tail_slope")?,
        s: key.operator.s,
        t_converged: file.get_parsed("t_converged")?,
        steps: file.get_parsed("steps")?,
    };
    Ok((key, eq))
}

/// Cached [`compute_equilibrium`].
pub fn load_or_compute_equilibrium(
    dir: Option<&Path>,
    ps: &CollisionOperator,
    dt: f64,
    delta: f64,
) -> Result<EquilibriumProfile> {
    let key = EquilibriumKey {
        operator: OperatorKey::of(ps.as_operator()),
        dt,
        delta,
    };
    let Some(dir) = dir else {
        return compute_equilibrium(ps, dt, delta);
    };
    let path: PathBuf = dir.join(key.file_name());
    if path.exists() {
        match read_equilibrium(&path) {
            Ok((k, eq)) if k.matches(&key) => return Ok(eq),
            Ok(_) => warn!("{} does not match its key; recomputing", path.display()),
            Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let eq = compute_equilibrium(ps, dt, delta)?;
    write_equilibrium(&path, &key, &eq)?;
    Ok(eq)
}
