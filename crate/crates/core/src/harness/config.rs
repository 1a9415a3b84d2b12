use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::error::{Error, Result};
use crate::gramians::GramianRoute;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Heat {
        diffusivity: f64,
    },
    AdvectionDiffusion {
        diffusion: f64,
        velocity: f64,
    },
    External {
        a: PathBuf,
        b: Option<PathBuf>,
        c: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Solution of `A Γ + Γ A^T = -I`.
    Lyapunov,
    Band {
        seed: u64,
    },
    Identity,
    /// Matrix Market file holding the covariance.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Bt,
    Tlbt,
    BtH,
    Olr,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Bt => "BT",
            Method::Tlbt => "TLBT",
            Method::BtH => "BT-H",
            Method::Olr => "OLR",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BT" => Ok(Method::Bt),
            "TLBT" => Ok(Method::Tlbt),
            "BT-H" | "BTH" => Ok(Method::BtH),
            "OLR" => Ok(Method::Olr),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Label used in output rows and file names.
    pub name: String,
    pub model: ModelSpec,
    /// State dimension (ignored for external models).
    pub d: usize,
    pub methods: Vec<Method>,
    pub prior: PriorSpec,
    /// Also run every method with the compatible modification of the prior
    /// and measure against both reference posteriors.
    pub compare_compatible: bool,
    pub end_times: Vec<f64>,
    pub step: f64,
    pub ranks: Vec<usize>,
    pub sigma_obs: f64,
    /// 0 disables the Monte-Carlo risk.
    pub n_trials: usize,
    pub seed: u64,
    /// Route for the time-limited observability Gramian.
    pub obs_route: GramianRoute,
    /// Only run when large runs are requested.
    pub large: bool,
    pub fourdvar_steps: usize,
    pub fourdvar_rank: usize,
}

const KEYS: &[&str] = &[
    "model",
    "d",
    "diffusivity",
    "diffusion",
    "velocity",
    "a_file",
    "b_file",
    "c_file",
    "methods",
    "prior",
    "prior_seed",
    "prior_file",
    "compare_compatible",
    "end_times",
    "step",
    "ranks",
    "sigma_obs",
    "n_trials",
    "seed",
    "obs_gramian",
    "large",
    "fourdvar_steps",
    "fourdvar_rank",
];

type Props = BTreeMap<String, String>;

fn get<'a>(p: &'a Props, key: &str) -> Option<&'a str> {
    p.get(key).map(|s| s.trim())
}

fn req<'a>(p: &'a Props, key: &str) -> Result<&'a str> {
    get(p, key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

fn num<T: std::str::FromStr>(p: &Props, key: &str, default: Option<T>) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match get(p, key) {
        Some(v) => v
            .parse()
            .map_err(|e| Error::Config(format!("bad value for `{key}` ({v:?}): {e}"))),
        None => default.ok_or_else(|| Error::Config(format!("missing key `{key}`"))),
    }
}

fn flag(p: &Props, key: &str) -> Result<bool> {
    match get(p, key) {
        None => Ok(false),
        Some(v) => match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(Error::Config(format!("bad boolean for `{key}`: {v:?}"))),
        },
    }
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

/// Parse `"1-5, 8, 10-12"` into `[1, 2, 3, 4, 5, 8, 10, 11, 12]`.
pub fn parse_ranks(s: &str) -> Result<Vec<usize>> {
    let bad = |t: &str| Error::Config(format!("bad rank specification {t:?}"));
    let mut out = Vec::new();
    for tok in list(s) {
        match tok.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad(tok))?;
                let hi: usize = hi.trim().parse().map_err(|_| bad(tok))?;
                if lo > hi {
                    return Err(bad(tok));
                }
                out.extend(lo..=hi);
            }
            None => out.push(tok.parse().map_err(|_| bad(tok))?),
        }
    }
    Ok(out)
}

fn parse_times(s: &str) -> Result<Vec<f64>> {
    list(s)
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad end time {t:?}: {e}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Build from key/value pairs, resolving relative paths against `base`.
    pub fn from_pairs(name: &str, pairs: &Props, base: &Path) -> Result<Self> {
        if let Some(k) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("[{name}]: unknown key `{k}`")));
        }
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("[{name}]: {m}")),
            other => other,
        };
        Self::parse(name, pairs, base).map_err(wrap)
    }

    fn parse(name: &str, p: &Props, base: &Path) -> Result<Self> {
        let path = |key: &str| -> Result<PathBuf> { Ok(base.join(req(p, key)?)) };
        let model = match req(p, "model")?.to_ascii_lowercase().as_str() {
            "heat" => ModelSpec::Heat {
                diffusivity: num(p, "diffusivity", Some(1.0))?,
            },
            "advdiff" | "advection_diffusion" | "advection-diffusion" => {
                ModelSpec::AdvectionDiffusion {
                    diffusion: num(p, "diffusion", Some(0.02))?,
                    velocity: num(p, "velocity", Some(0.01))?,
                }
            }
            "external" => ModelSpec::External {
                a: path("a_file")?,
                b: get(p, "b_file").map(|b| base.join(b)),
                c: path("c_file")?,
            },
            other => return Err(Error::Config(format!("unknown model {other:?}"))),
        };
        let d = match model {
            ModelSpec::External { .. } => num(p, "d", Some(0))?,
            _ => num(p, "d", None)?,
        };
        let prior = match req(p, "prior")?.to_ascii_lowercase().as_str() {
            "lyapunov" => PriorSpec::Lyapunov,
            "band" => PriorSpec::Band {
                seed: num(p, "prior_seed", Some(0))?,
            },
            "identity" => PriorSpec::Identity,
            "file" => PriorSpec::File(path("prior_file")?),
            other => return Err(Error::Config(format!("unknown prior {other:?}"))),
        };
        let methods = list(req(p, "methods")?)
            .map(Method::parse)
            .collect::<Result<Vec<_>>>()?;
        let obs_route = match get(p, "obs_gramian")
            .unwrap_or("auto")
            .to_ascii_lowercase()
            .as_str()
        {
            "auto" => GramianRoute::Auto,
            "lyapunov" => GramianRoute::Lyapunov,
            "quadrature" => GramianRoute::Quadrature,
            other => return Err(Error::Config(format!("unknown Gramian route {other:?}"))),
        };
        let cfg = Self {
            name: name.to_string(),
            model,
            d,
            methods,
            prior,
            compare_compatible: flag(p, "compare_compatible")?,
            end_times: parse_times(req(p, "end_times")?)?,
            step: num(p, "step", None)?,
            ranks: parse_ranks(req(p, "ranks")?)?,
            sigma_obs: num(p, "sigma_obs", None)?,
            n_trials: num(p, "n_trials", Some(100))?,
            seed: num(p, "seed", Some(0))?,
            obs_route,
            large: flag(p, "large")?,
            fourdvar_steps: num(p, "fourdvar_steps", Some(50))?,
            fourdvar_rank: num(p, "fourdvar_rank", Some(20))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check the invariants that do not need the model matrices.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return fail(format!(
                "experiment name {:?} must be [A-Za-z0-9_-]+",
                self.name
            ));
        }
        if self.methods.is_empty() {
            return fail("no methods given".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return fail("duplicate method".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return fail(format!("step must be positive, got {}", self.step));
        }
        if self.end_times.is_empty() {
            return fail("no end times given".into());
        }
        for &t in &self.end_times {
            let ratio = t / self.step;
            if !(t > 0.0) || (ratio - ratio.round()).abs() > 1e-12 * ratio.round().max(1.0) {
                return fail(format!(
                    "end time {t} is not a positive integer multiple of the step {}",
                    self.step
                ));
            }
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return fail("ranks must be a non-empty list of positive integers".into());
        }
        if !matches!(self.model, ModelSpec::External { .. }) {
            if let Some(&r) = self.ranks.iter().find(|&&r| r > self.d) {
                return fail(format!("rank {r} exceeds the state dimension {}", self.d));
            }
        }
        if !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return fail(format!(
                "sigma_obs must be positive, got {}",
                self.sigma_obs
            ));
        }
        if self.n_trials == 1 {
            return fail("n_trials must be 0 (off) or at least 2".into());
        }
        if self.fourdvar_rank == 0 {
            return fail("fourdvar_rank must be positive".into());
        }
        Ok(())
    }
}

/// Read every section of an INI file as an experiment. Keys in the
/// unnamed top section are shared defaults; `overrides` win over both.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<Vec<ExperimentConfig>> {
    let ini = Ini::load_from_file(path).map_err(|e| match e {
        ini::Error::Io(io) => Error::Io(io),
        ini::Error::Parse(p) => Error::Format {
            path: path.display().to_string(),
            line: p.line,
            msg: p.msg.to_string(),
        },
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let defaults: Props = ini
        .general_section()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut out = Vec::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else { continue };
        let mut pairs = defaults.clone();
        for (k, v) in props.iter() {
            pairs.insert(k.to_string(), v.to_string());
        }
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        out.push(ExperimentConfig::from_pairs(name, &pairs, base)?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "{} defines no experiment sections",
            path.display()
        )));
    }
    Ok(out)
}

/// Built-in experiment names accepted by [`preset`].
pub const PRESETS: &[&str] = &["heat", "noncompat", "advdiff", "advdiff-large"];

const COMMON: &[(&str, &str)] = &[("sigma_obs", "0.008"), ("n_trials", "100"), ("seed", "1")];

fn preset_pairs(name: &str) -> Option<Vec<(&'static str, &'static str)>> {
    let heat = [
        ("model", "heat"),
        ("d", "200"),
        ("diffusivity", "0.01"),
        ("step", "0.005"),
    ];
    let advdiff = [
        ("model", "advdiff"),
        ("diffusion", "0.02"),
        ("velocity", "0.01"),
        ("prior", "identity"),
        ("methods", "TLBT, BT-H, OLR"),
        ("end_times", "0.1, 0.5, 1"),
        ("step", "0.001"),
        ("obs_gramian", "quadrature"),
    ];
    let specific: Vec<(&str, &str)> = match name {
        "heat" => [
            &heat[..],
            &[
                ("methods", "BT, TLBT, BT-H, OLR"),
                ("prior", "lyapunov"),
                ("end_times", "1, 3, 10"),
                ("ranks", "1-20"),
            ],
        ]
        .concat(),
        "noncompat" => [
            &heat[..],
            &[
                ("methods", "BT, OLR"),
                ("prior", "band"),
                ("prior_seed", "7"),
                ("compare_compatible", "true"),
                ("end_times", "10"),
                ("ranks", "1-20"),
            ],
        ]
        .concat(),
        "advdiff" => [
            &advdiff[..],
            &[("d", "200"), ("ranks", "1-10, 15, 20, 30, 40, 50")],
        ]
        .concat(),
        "advdiff-large" => [
            &advdiff[..],
            &[
                ("d", "1200"),
                ("ranks", "1-10, 15, 20, 30, 40, 50"),
                ("large", "true"),
            ],
        ]
        .concat(),
        _ => return None,
    };
    Some([COMMON, &specific[..]].concat())
}

/// A built-in experiment; see [`PRESETS`].
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    preset_with(name, &[])
}

/// [`preset`] with some keys replaced.
pub fn preset_with(name: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let pairs = preset_pairs(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset {name:?}; known: {}",
            PRESETS.join(", ")
        ))
    })?;
    let mut props: Props = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    for (k, v) in overrides {
        props.insert(k.clone(), v.clone());
    }
    ExperimentConfig::from_pairs(name, &props, Path::new("."))
}
