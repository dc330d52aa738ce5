//! Flat `key = value` run configuration.
//!
//! A config file holds one assignment per line; `#` starts a comment. Keys
//! are case-insensitive, so `N_v` and `n_v` name the same field, and `T` is
//! the final time. Command-line overrides use the same `key=value` syntax
//! and are applied after the file.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ap_scheme::InitialCondition;
use crate::error::{Error, Result};
use crate::reference::{Transport, DEFAULT_CFL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    OperatorTest,
    Homogeneous,
    Ap,
    ImexReference,
    Limit,
    EpsSweep,
    DtRefinement,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::OperatorTest,
        Mode::Homogeneous,
        Mode::Ap,
        Mode::ImexReference,
        Mode::Limit,
        Mode::EpsSweep,
        Mode::DtRefinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OperatorTest => "operator_test",
            Mode::Homogeneous => "homogeneous",
            Mode::Ap => "ap",
            Mode::ImexReference => "imex_reference",
            Mode::Limit => "limit",
            Mode::EpsSweep => "eps_sweep",
            Mode::DtRefinement => "dt_refinement",
        }
    }

    /// Fields that have no default in this mode.
    fn required(self) -> &'static [&'static str] {
        match self {
            Mode::Ap | Mode::DtRefinement => &["s", "eps"],
            _ => &["s"],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode '{s}'; expected one of {}",
                    mode_list()
                ))
            })
    }
}

fn mode_list() -> String {
    Mode::ALL.map(Mode::name).join(", ")
}

/// Initial data selector. `CustomFile` reads `ic_file`, an `f` snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    Builtin(InitialCondition),
    CustomFile,
}

impl IcKind {
    pub fn name(self) -> &'static str {
        match self {
            IcKind::Builtin(InitialCondition::Ic1) => "IC1",
            IcKind::Builtin(InitialCondition::Ic2) => "IC2",
            IcKind::Builtin(InitialCondition::GaussianV) => "gaussian_v",
            IcKind::CustomFile => "custom_file",
        }
    }
}

impl FromStr for IcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ic1" => IcKind::Builtin(InitialCondition::Ic1),
            "ic2" => IcKind::Builtin(InitialCondition::Ic2),
            "gaussian_v" => IcKind::Builtin(InitialCondition::GaussianV),
            "custom_file" => IcKind::CustomFile,
            _ => {
                return Err(Error::Config(format!(
                    "ic must be one of IC1, IC2, gaussian_v, custom_file; got '{s}'"
                )))
            }
        })
    }
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub s: f64,
    /// Scaling parameter; `None` where the mode does not use one.
    pub eps: Option<f64>,
    pub gamma: f64,
    pub n_v: usize,
    pub n_x: usize,
    pub l_v: f64,
    pub l_x: f64,
    pub l_lim: usize,
    pub dt: f64,
    pub t_end: f64,
    pub ic: IcKind,
    pub ic_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Time step of the relaxation that produces the numerical equilibrium.
    pub eq_dt: f64,
    /// Stopping threshold of that relaxation.
    pub delta: f64,
    pub max_relax_steps: usize,
    pub project_growing_modes: bool,
    pub imex_transport: Transport,
    pub cfl: f64,
    pub condition_cap: f64,
    pub eps_list: Vec<f64>,
    pub dt_levels: usize,
    pub n_v_list: Vec<usize>,
    /// Write an `f`/`ρ` snapshot every this many steps (0 = final state only).
    pub snapshot_every: usize,
}

const KEYS: &[&str] = &[
    "mode",
    "s",
    "eps",
    "gamma",
    "n_v",
    "n_x",
    "l_v",
    "l_x",
    "l_lim",
    "dt",
    "t",
    "ic",
    "ic_file",
    "output_dir",
    "cache_dir",
    "eq_dt",
    "delta",
    "max_relax_steps",
    "project_growing_modes",
    "imex_transport",
    "cfl",
    "condition_cap",
    "eps_list",
    "dt_levels",
    "n_v_list",
    "snapshot_every",
];

fn canonical_key(raw: &str) -> Result<&'static str> {
    let k = raw.trim().to_ascii_lowercase();
    let k = match k.as_str() {
        "t_end" | "t_final" => "t",
        "epsilon" => "eps",
        "out" => "output_dir",
        other => other,
    };
    KEYS.iter().copied().find(|&c| c == k).ok_or_else(|| {
        Error::Config(format!(
            "unknown key '{}'; accepted keys: {}",
            raw.trim(),
            KEYS.join(", ")
        ))
    })
}

/// Splits `key=value`, trimming both sides.
pub fn parse_assignment(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{text}'")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(Error::Config(format!("missing key in '{text}'")));
    }
    Ok((k.to_string(), v.to_string()))
}

/// Reads the assignments of a config file, skipping blanks and comments.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then(|| {
                parse_assignment(line).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))
            })
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}' as a number")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse_num(key, t))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!(
            "{key} must be a non-empty comma-separated list"
        )));
    }
    Ok(items)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} must be true or false, got '{v}'"
        ))),
    }
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Config(format!(
            "{key} must be a positive finite number, got {x}"
        )))
    }
}

fn at_least(key: &str, n: usize, min: usize) -> Result<usize> {
    if n >= min {
        Ok(n)
    } else {
        Err(Error::Config(format!(
            "{key} must be at least {min}, got {n}"
        )))
    }
}

fn even(key: &str, n: usize) -> Result<usize> {
    at_least(key, n, 2)?;
    if n.is_multiple_of(2) {
        Ok(n)
    } else {
        Err(Error::Config(format!("{key} must be even, got {n}")))
    }
}

impl RunConfig {
    /// Builds a configuration from raw assignments, later ones winning.
    ///
    /// `mode` comes from the `mode` key unless `subcommand` is given, in
    /// which case a conflicting `mode` key is an error.
    pub fn from_assignments(subcommand: Option<Mode>, pairs: &[(String, String)]) -> Result<Self> {
        let mut values: Vec<(&'static str, String)> = Vec::new();
        for (k, v) in pairs {
            let key = canonical_key(k)?;
            values.retain(|(existing, _)| *existing != key);
            values.push((key, v.clone()));
        }
        let get = |key: &str| {
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.as_str())
        };

        let mode = match (subcommand, get("mode")) {
            (Some(m), Some(v)) => {
                let from_file: Mode = v.parse()?;
                if from_file != m {
                    return Err(Error::Config(format!(
                        "mode: config says '{from_file}' but the subcommand is '{m}'"
                    )));
                }
                m
            }
            (Some(m), None) => m,
            (None, Some(v)) => v.parse()?,
            (None, None) => {
                return Err(Error::Config(format!(
                    "missing required field 'mode' (one of {})",
                    mode_list()
                )))
            }
        };
        for &key in mode.required() {
            if get(key).is_none() {
                return Err(Error::Config(format!("mode={mode} requires '{key}'")));
            }
        }

        let f64_or = |key: &str, default: f64| -> Result<f64> {
            get(key).map_or(Ok(default), |v| parse_num(key, v))
        };
        let usize_or = |key: &str, default: usize| -> Result<usize> {
            get(key).map_or(Ok(default), |v| parse_num(key, v))
        };

        let s: f64 = parse_num("s", get("s").unwrap_or(""))?;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config(format!("s must lie in (0,1), got {s}")));
        }
        let eps = get("eps")
            .map(|v| parse_num("eps", v).and_then(|e| positive("eps", e)))
            .transpose()?;
        if let Some(e) = eps {
            if e > 1.0 {
                return Err(Error::Config(format!("eps must lie in (0,1], got {e}")));
            }
        }
        let gamma = f64_or("gamma", 1.0)?;
        positive("gamma", gamma)?;
        let ic: IcKind =
            get("ic").map_or(Ok(IcKind::Builtin(InitialCondition::Ic1)), str::parse)?;
        let ic_file = get("ic_file").map(PathBuf::from);
        if ic == IcKind::CustomFile && ic_file.is_none() {
            return Err(Error::Config("ic=custom_file requires 'ic_file'".into()));
        }
        let default_l_x = if ic == IcKind::Builtin(InitialCondition::Ic2) {
            5.0
        } else {
            PI
        };

        let n_v_list =
            get("n_v_list").map_or(Ok(vec![32, 64, 128, 256]), |v| parse_list("n_v_list", v))?;
        for &n in &n_v_list {
            at_least("n_v_list entries", n, 2)?;
        }
        let eps_list = get("eps_list").map_or(Ok(vec![1e-1, 1e-2, 1e-3, 1e-5]), |v| {
            parse_list("eps_list", v)
        })?;
        for &e in &eps_list {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!(
                    "eps_list entries must lie in (0,1], got {e}"
                )));
            }
        }

        let imex_transport = match get("imex_transport").unwrap_or("exact") {
            "exact" => Transport::ExactPhase,
            "euler" => Transport::ExplicitEuler,
            other => {
                return Err(Error::Config(format!(
                    "imex_transport must be 'exact' or 'euler', got '{other}'"
                )))
            }
        };

        let cfg = RunConfig {
            mode,
            s,
            eps,
            gamma,
            n_v: at_least("n_v", usize_or("n_v", 128)?, 2)?,
            n_x: even("n_x", usize_or("n_x", 100)?)?,
            l_v: positive("l_v", f64_or("l_v", 3.0)?)?,
            l_x: positive("l_x", f64_or("l_x", default_l_x)?)?,
            l_lim: at_least("l_lim", usize_or("l_lim", 300)?, 1)?,
            dt: positive("dt", f64_or("dt", 0.01)?)?,
            t_end: positive("T", f64_or("t", 0.1)?)?,
            ic,
            ic_file,
            output_dir: PathBuf::from(get("output_dir").unwrap_or("out")),
            cache_dir: get("cache_dir").map(PathBuf::from),
            eq_dt: positive("eq_dt", f64_or("eq_dt", 0.01)?)?,
            delta: positive(
                "delta",
                f64_or("delta", crate::collision::DEFAULT_EQUILIBRIUM_DELTA)?,
            )?,
            max_relax_steps: at_least(
                "max_relax_steps",
                usize_or("max_relax_steps", crate::collision::DEFAULT_MAX_RELAX_STEPS)?,
                1,
            )?,
            project_growing_modes: get("project_growing_modes")
                .map_or(Ok(true), |v| parse_bool("project_growing_modes", v))?,
            imex_transport,
            cfl: positive("cfl", f64_or("cfl", DEFAULT_CFL)?)?,
            condition_cap: positive(
                "condition_cap",
                f64_or("condition_cap", crate::linalg::DEFAULT_CONDITION_CAP)?,
            )?,
            eps_list,
            dt_levels: at_least("dt_levels", usize_or("dt_levels", 5)?, 2)?,
            n_v_list,
            snapshot_every: usize_or("snapshot_every", 0)?,
        };
        Ok(cfg)
    }

    /// `eps` if set, otherwise the kinetic value 1.
    pub fn eps_or_kinetic(&self) -> f64 {
        self.eps.unwrap_or(1.0)
    }

    /// Every field as `(key, value)`, suitable for metadata headers and for
    /// feeding back into [`RunConfig::from_assignments`].
    pub fn to_assignments(&self) -> Vec<(String, String)> {
        let f = |x: f64| format!("{x:?}");
        let join_f = |xs: &[f64]| xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("mode".to_string(), self.mode.to_string()),
            ("s".into(), f(self.s)),
        ];
        if let Some(e) = self.eps {
            out.push(("eps".into(), f(e)));
        }
        out.extend([
            ("gamma".into(), f(self.gamma)),
            ("n_v".into(), self.n_v.to_string()),
            ("n_x".into(), self.n_x.to_string()),
            ("l_v".into(), f(self.l_v)),
            ("l_x".into(), f(self.l_x)),
            ("l_lim".into(), self.l_lim.to_string()),
            ("dt".into(), f(self.dt)),
            ("T".into(), f(self.t_end)),
            ("ic".into(), self.ic.name().to_string()),
        ]);
        if let Some(p) = &self.ic_file {
            out.push(("ic_file".into(), p.display().to_string()));
        }
        out.push(("output_dir".into(), self.output_dir.display().to_string()));
        if let Some(p) = &self.cache_dir {
            out.push(("cache_dir".into(), p.display().to_string()));
        }
        out.extend([
            ("eq_dt".into(), f(self.eq_dt)),
            ("delta".into(), f(self.delta)),
            ("max_relax_steps".into(), self.max_relax_steps.to_string()),
            (
                "project_growing_modes".into(),
                self.project_growing_modes.to_string(),
            ),
            (
                "imex_transport".into(),
                match self.imex_transport {
                    Transport::ExactPhase => "exact",
                    Transport::ExplicitEuler => "euler",
                }
                .to_string(),
            ),
            ("cfl".into(), f(self.cfl)),
            ("condition_cap".into(), f(self.condition_cap)),
            ("eps_list".into(), join_f(&self.eps_list)),
            ("dt_levels".into(), self.dt_levels.to_string()),
            (
                "n_v_list".into(),
                self.n_v_list
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("snapshot_every".into(), self.snapshot_every.to_string()),
        ]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Option<Mode>, text: &str) -> Result<RunConfig> {
        RunConfig::from_assignments(mode, &parse_config_text(text)?)
    }

    #[test]
    fn defaults_are_applied() {
        let c = cfg(None, "mode = homogeneous\ns = 0.5\n").unwrap();
        assert_eq!(c.l_v, 3.0);
        assert_eq!(c.l_lim, 300);
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.mode, Mode::Homogeneous);
        assert_eq!(c.eps, None);
    }

    #[test]
    fn s_out_of_range_is_rejected() {
        let err = cfg(Some(Mode::Homogeneous), "s=1.2")
            .unwrap_err()
            .to_string();
        assert!(err.contains("s must lie in (0,1)"), "{err}");
    }

    #[test]
    fn ap_requires_eps() {
        let err = cfg(Some(Mode::Ap), "s=0.5").unwrap_err().to_string();
        assert!(err.contains("'eps'"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = cfg(Some(Mode::Limit), "s=0.5\nfoo=1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown key 'foo'"), "{err}");
    }

    #[test]
    fn later_assignments_win_and_keys_are_case_insensitive() {
        let pairs = vec![
            ("s".to_string(), "0.5".to_string()),
            ("N_v".to_string(), "64".to_string()),
            ("n_v".to_string(), "32".to_string()),
            ("T".to_string(), "0.5".to_string()),
        ];
        let c = RunConfig::from_assignments(Some(Mode::Limit), &pairs).unwrap();
        assert_eq!(c.n_v, 32);
        assert_eq!(c.t_end, 0.5);
    }

    #[test]
    fn ic2_changes_the_default_domain() {
        let c = cfg(Some(Mode::Ap), "s=0.4\neps=1e-3\nic=IC2").unwrap();
        assert_eq!(c.l_x, 5.0);
    }

    #[test]
    fn conflicting_mode_is_rejected() {
        assert!(cfg(Some(Mode::Ap), "mode=limit\ns=0.4\neps=0.1").is_err());
    }

    #[test]
    fn odd_n_x_is_rejected() {
        let err = cfg(Some(Mode::Limit), "s=0.5\nn_x=33")
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_x must be even"), "{err}");
    }

    #[test]
    fn assignments_round_trip() {
        let c = cfg(
            Some(Mode::EpsSweep),
            "s=0.6\neps_list=0.1,0.01\ncache_dir=/tmp/x\ndt=0.1\nT=1",
        )
        .unwrap();
        let back = RunConfig::from_assignments(None, &c.to_assignments()).unwrap();
        assert_eq!(back, c);
    }
}
