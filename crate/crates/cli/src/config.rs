//! Settings resolution: built-in defaults, then a preset, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use mvcsc::bench::Solver;
use mvcsc::learner::{Model, RegPolicy};
use mvcsc::simulate::log_grid;

use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Simulate,
    Fit,
    Eval,
    Experiment,
    Scaling,
    Convergence,
}

impl Section {
    /// Table name in config files; bench scenarios live under `[bench.<name>]`.
    pub fn name(self) -> &'static str {
        match self {
            Section::Simulate => "simulate",
            Section::Fit => "fit",
            Section::Eval => "eval",
            Section::Experiment => "experiment",
            Section::Scaling => "scaling-p",
            Section::Convergence => "convergence",
        }
    }

    fn table_path(self) -> Vec<&'static str> {
        match self {
            Section::Scaling | Section::Convergence => vec!["bench", self.name()],
            _ => vec![self.name()],
        }
    }
}

pub const PRESETS: [&str; 2] = ["paper-fig4", "paper-scaling"];

fn preset_patch(preset: &str, section: Section) -> CliResult<Value> {
    let v = match (preset, section) {
        ("paper-fig4", Section::Simulate) => serde_json::json!({
            "n_signals": 100, "channels": 5, "n_atoms": 2, "atom_len": 64, "n_valid": 640, "density": 0.05
        }),
        ("paper-fig4", Section::Fit) => serde_json::json!({
            "model": "rank1", "n_atoms": 2, "atom_len": 64, "reg": "frac:0.05"
        }),
        ("paper-fig4", Section::Experiment) => serde_json::json!({
            "n_signals": 100, "atom_len": 64, "n_valid": 640, "density": 0.05,
            "channels": [1, 5], "sigmas": [1e-3, 1e-2, 1e-1], "lambdas": log_grid(0.003, 0.3, 5)
        }),
        ("paper-scaling", Section::Scaling) => serde_json::json!({
            "channels": [1, 2, 4, 8, 16, 32, 64, 128, 204],
            "n_signals": 10, "n_atoms": 2, "atom_len": 128, "n_valid": 26813, "lambda_fraction": 0.005
        }),
        ("paper-scaling", Section::Convergence) => serde_json::json!({
            "channels": 5, "n_atoms": 8, "atom_len": 128, "n_valid": 20000,
            "lambdas": ["frac:0.001", "frac:0.005"]
        }),
        (p, s) if PRESETS.contains(&p) => {
            return usage(format!("preset {p} has no settings for `{}`", s.name()));
        }
        (p, _) => return usage(format!("unknown preset {p}; available: {}", PRESETS.join(", "))),
    };
    Ok(v)
}

/// Where a resolved setting came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Default,
    Preset(String),
    File { path: PathBuf, line: Option<usize> },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::Preset(p) => write!(f, "preset {p}"),
            Origin::File { path, line: Some(l) } => write!(f, "{}:{l}", path.display()),
            Origin::File { path, line: None } => write!(f, "{}", path.display()),
            Origin::Flag => write!(f, "command line"),
        }
    }
}

/// A validation failure on one named setting.
#[derive(Debug)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

pub fn field_err<T>(field: &'static str, message: impl Into<String>) -> Result<T, FieldError> {
    Err(FieldError {
        field,
        message: message.into(),
    })
}

pub trait Settings: Serialize + DeserializeOwned + Default {
    const SECTION: Section;
    fn check(&self) -> Result<(), FieldError>;
}

pub struct Resolved<T> {
    pub settings: T,
    pub origins: BTreeMap<String, Origin>,
    /// Config file actually read, if any.
    pub config_file: Option<PathBuf>,
}

impl<T: Settings> Resolved<T> {
    pub fn as_value(&self) -> Value {
        serde_json::to_value(&self.settings).expect("settings serialize")
    }

    /// Where each setting came from, as printable text.
    pub fn origin_strings(&self) -> BTreeMap<String, String> {
        self.origins.iter().map(|(k, o)| (k.clone(), o.to_string())).collect()
    }
}

/// 1-based line of `key = ...`, searching after the `[header]` line when one is given.
fn find_line(text: &str, header: Option<&str>, key: &str) -> Option<usize> {
    let start = header
        .and_then(|h| {
            text.lines()
                .position(|l| l.trim().trim_start_matches('[').trim_end_matches(']').replace('"', "") == h)
        })
        .map_or(0, |i| i + 1);
    text.lines()
        .enumerate()
        .skip(start)
        .find(|(_, l)| {
            let l = l.trim_start();
            let bare = l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='));
            let quoted = l
                .strip_prefix(&format!("\"{key}\""))
                .is_some_and(|r| r.trim_start().starts_with(['=', ':']));
            bare || quoted
        })
        .map(|(i, _)| i + 1)
}

/// Reads the section for `section` out of a TOML config or a JSON run manifest.
fn load_file(path: &Path, section: Section) -> CliResult<(Map<String, Value>, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), e.line())))?;
        // a run manifest: reuse its resolved config when the command matches
        let cmd = v.get("command").and_then(Value::as_str);
        return match (cmd, v.get("config")) {
            (Some(c), Some(Value::Object(m))) if c == section.name() => Ok((m.clone(), text)),
            (Some(c), Some(_)) => usage(format!(
                "{}: manifest is for `{c}`, not `{}`",
                path.display(),
                section.name()
            )),
            _ => usage(format!("{}: not a run manifest", path.display())),
        };
    }
    let table: toml::Table = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .map(|l| format!(":{l}"))
            .unwrap_or_default();
        CliError::Usage(format!("{}{line}: {}", path.display(), e.message()))
    })?;
    let mut cur = serde_json::to_value(&table)?;
    for key in section.table_path() {
        cur = match cur.get(key) {
            Some(v) => v.clone(),
            None => return Ok((Map::new(), text)),
        };
    }
    match cur {
        Value::Object(m) => Ok((m, text)),
        _ => usage(format!("{}: `{}` must be a table", path.display(), section.table_path().join("."))),
    }
}

/// Merges the layers and validates the result.
///
/// `flags` holds only the options given on the command line.
pub fn resolve<T: Settings>(preset: Option<&str>, file: Option<&Path>, flags: Value) -> CliResult<Resolved<T>> {
    let section = T::SECTION;
    let mut merged = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("settings are structs"),
    };
    let mut origins: BTreeMap<String, Origin> = merged.keys().map(|k| (k.clone(), Origin::Default)).collect();

    if let Some(p) = preset {
        if let Value::Object(m) = preset_patch(p, section)? {
            for (k, v) in m {
                origins.insert(k.clone(), Origin::Preset(p.to_string()));
                merged.insert(k, v);
            }
        }
    }

    if let Some(path) = file {
        let (m, text) = load_file(path, section)?;
        for (k, v) in m {
            let header = section.table_path().join(".");
            let is_toml = !path.extension().is_some_and(|e| e == "json");
            let line = find_line(&text, is_toml.then_some(header.as_str()), &k);
            let origin = Origin::File {
                path: path.to_path_buf(),
                line,
            };
            if !merged.contains_key(&k) {
                let known: Vec<&str> = merged.keys().map(String::as_str).collect();
                return usage(format!("{origin}: unknown setting `{k}` for `{}`; known: {}", section.name(), known.join(", ")));
            }
            // type-check this key alone so the message can point at its line
            let mut probe = serde_json::to_value(T::default())?;
            probe[&k] = v.clone();
            if let Err(e) = serde_json::from_value::<T>(probe) {
                return usage(format!("{origin}: {k}: {e}"));
            }
            origins.insert(k.clone(), origin);
            merged.insert(k, v);
        }
    }

    if let Value::Object(m) = flags {
        for (k, v) in m {
            origins.insert(k.clone(), Origin::Flag);
            merged.insert(k, v);
        }
    }

    let settings: T = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Err(fe) = settings.check() {
        let origin = origins.get(fe.field).cloned().unwrap_or(Origin::Default);
        let msg = match &origin {
            Origin::Flag => format!("--{}: {}", fe.field.replace('_', "-"), fe.message),
            Origin::Default => format!("{}: {}", fe.field, fe.message),
            o => format!("{o}: {}: {}", fe.field, fe.message),
        };
        return usage(msg);
    }
    Ok(Resolved {
        settings,
        origins,
        config_file: file.map(Path::to_path_buf),
    })
}

/// `frac:R` (fraction of lambda_max) or `abs:L`.
pub fn parse_reg(s: &str) -> Result<RegPolicy, String> {
    let (kind, num) = s.split_once(':').ok_or_else(|| format!("expected frac:R or abs:L, got `{s}`"))?;
    let x: f64 = num.trim().parse().map_err(|_| format!("not a number: `{num}`"))?;
    match kind.trim() {
        "frac" if x > 0.0 && x.is_finite() => Ok(RegPolicy::FractionOfLambdaMax(x)),
        "abs" if x >= 0.0 && x.is_finite() => Ok(RegPolicy::Absolute(x)),
        "frac" => Err(format!("fraction must be finite and > 0, got {x}")),
        "abs" => Err(format!("lambda must be finite and >= 0, got {x}")),
        k => Err(format!("unknown regularization kind `{k}`; use frac or abs")),
    }
}

fn positive(field: &'static str, v: usize) -> Result<(), FieldError> {
    if v == 0 {
        field_err(field, "must be >= 1")
    } else {
        Ok(())
    }
}

fn fraction(field: &'static str, v: f64) -> Result<(), FieldError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        field_err(field, format!("must be in (0, 1], got {v}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub n_signals: usize,
    pub channels: usize,
    pub n_atoms: usize,
    pub atom_len: usize,
    pub n_valid: usize,
    pub density: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let s = mvcsc::simulate::SimConfig::default();
        SimulateSettings {
            n_signals: s.n_signals,
            channels: s.n_channels,
            n_atoms: s.n_atoms,
            atom_len: s.atom_len,
            n_valid: s.n_valid,
            density: s.density,
            sigma: s.noise_sigma,
            seed: s.seed,
        }
    }
}

impl Settings for SimulateSettings {
    const SECTION: Section = Section::Simulate;

    fn check(&self) -> Result<(), FieldError> {
        positive("n_signals", self.n_signals)?;
        positive("channels", self.channels)?;
        positive("n_valid", self.n_valid)?;
        if self.n_atoms != 2 {
            return field_err("n_atoms", "the square/triangle dictionary has exactly 2 atoms");
        }
        if self.atom_len < 3 {
            return field_err("atom_len", "must be >= 3");
        }
        fraction("density", self.density)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return field_err("sigma", format!("must be finite and >= 0, got {}", self.sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// Signals file, `N x P x T` (or `P x T`).
    pub input: Option<String>,
    pub model: Model,
    pub n_atoms: usize,
    pub atom_len: usize,
    pub reg: String,
    pub n_iter: usize,
    pub z_tol: f64,
    pub z_max_updates: u64,
    pub d_eps: f64,
    pub d_max_outer: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = mvcsc::learner::FitConfig::new(Model::Rank1, 2, 64, RegPolicy::FractionOfLambdaMax(0.1));
        FitSettings {
            input: None,
            model: c.model,
            n_atoms: c.n_atoms,
            atom_len: c.atom_len,
            reg: "frac:0.1".into(),
            n_iter: c.n_iter,
            z_tol: c.z_config.tol,
            z_max_updates: c.z_config.max_updates,
            d_eps: c.d_config.eps,
            d_max_outer: c.d_config.max_outer,
            convergence_tol: c.convergence_tol,
            seed: c.seed,
        }
    }
}

impl Settings for FitSettings {
    const SECTION: Section = Section::Fit;

    fn check(&self) -> Result<(), FieldError> {
        if self.input.is_none() {
            return field_err("input", "a signals file is required");
        }
        positive("n_atoms", self.n_atoms)?;
        positive("atom_len", self.atom_len)?;
        positive("n_iter", self.n_iter)?;
        positive("d_max_outer", self.d_max_outer)?;
        if let Err(e) = parse_reg(&self.reg) {
            return field_err("reg", e);
        }
        if !(self.z_tol > 0.0) {
            return field_err("z_tol", "must be > 0");
        }
        if !(self.d_eps >= 0.0) {
            return field_err("d_eps", "must be >= 0");
        }
        if !(self.convergence_tol >= 0.0) {
            return field_err("convergence_tol", "must be >= 0");
        }
        Ok(())
    }
}

impl FitSettings {
    pub fn fit_config(&self, parallel: bool) -> mvcsc::learner::FitConfig {
        let reg = parse_reg(&self.reg).expect("checked");
        let mut c = mvcsc::learner::FitConfig::new(self.model, self.n_atoms, self.atom_len, reg);
        c.n_iter = self.n_iter;
        c.z_config.tol = self.z_tol;
        c.z_config.max_updates = self.z_max_updates;
        c.d_config.eps = self.d_eps;
        c.d_config.max_outer = self.d_max_outer;
        c.convergence_tol = self.convergence_tol;
        c.seed = self.seed;
        c.parallel = parallel;
        c
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub estimated: Option<String>,
    pub truth: Option<String>,
}

impl Settings for EvalSettings {
    const SECTION: Section = Section::Eval;

    fn check(&self) -> Result<(), FieldError> {
        if self.estimated.is_none() {
            return field_err("estimated", "an estimated dictionary file is required");
        }
        if self.truth.is_none() {
            return field_err("truth", "a truth dictionary file is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub model: Model,
    pub n_signals: usize,
    pub atom_len: usize,
    pub n_valid: usize,
    pub density: f64,
    pub channels: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Fractions of `lambda_max`.
    pub lambdas: Vec<f64>,
    pub n_seeds: usize,
    pub n_iter: usize,
    pub z_tol: f64,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        let g = mvcsc::simulate::ExperimentGrid::default();
        let s = mvcsc::simulate::SimConfig::default();
        ExperimentSettings {
            model: Model::Rank1,
            n_signals: s.n_signals,
            atom_len: s.atom_len,
            n_valid: s.n_valid,
            density: s.density,
            channels: g.channels,
            sigmas: g.sigmas,
            lambdas: g.lambda_fractions,
            n_seeds: 5,
            n_iter: 40,
            // coarser than the single-fit default; hundreds of fits per grid
            z_tol: 1e-3,
            seed: 0,
        }
    }
}

impl Settings for ExperimentSettings {
    const SECTION: Section = Section::Experiment;

    fn check(&self) -> Result<(), FieldError> {
        positive("n_signals", self.n_signals)?;
        positive("n_valid", self.n_valid)?;
        positive("n_seeds", self.n_seeds)?;
        positive("n_iter", self.n_iter)?;
        if self.atom_len < 3 {
            return field_err("atom_len", "must be >= 3");
        }
        fraction("density", self.density)?;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return field_err("channels", "need at least one channel count, all >= 1");
        }
        if self.model == Model::Univariate && self.channels.iter().any(|&p| p > 1) {
            return field_err("model", "univariate needs every channel count to be 1");
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return field_err("sigmas", "need at least one noise level, all finite and >= 0");
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return field_err("lambdas", "need at least one lambda fraction, all > 0");
        }
        if !(self.z_tol > 0.0) {
            return field_err("z_tol", "must be > 0");
        }
        Ok(())
    }
}

pub type ScalingSettings = mvcsc::bench::ScalingConfig;

impl Settings for ScalingSettings {
    const SECTION: Section = Section::Scaling;

    fn check(&self) -> Result<(), FieldError> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return field_err("channels", "need at least one channel count, all >= 1");
        }
        positive("n_signals", self.n_signals)?;
        positive("n_atoms", self.n_atoms)?;
        positive("atom_len", self.atom_len)?;
        positive("n_valid", self.n_valid)?;
        positive("grad_evals", self.grad_evals)?;
        fraction("density", self.density)?;
        if !(self.lambda_fraction > 0.0) {
            return field_err("lambda_fraction", "must be > 0");
        }
        if !(self.z_tol > 0.0) {
            return field_err("z_tol", "must be > 0");
        }
        if self.reps < 3 {
            return field_err("reps", "need at least 3 repetitions for a median and IQR");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub channels: usize,
    pub n_atoms: usize,
    pub atom_len: usize,
    pub n_valid: usize,
    pub solvers: Vec<String>,
    /// `frac:R` entries.
    pub lambdas: Vec<String>,
    pub n_inits: usize,
    pub tol: f64,
    pub max_updates: u64,
    pub fista_max_iter: usize,
    pub precision: f64,
    pub seed: u64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        let c = mvcsc::bench::ConvergenceConfig::default();
        ConvergenceSettings {
            channels: 5,
            n_atoms: 4,
            atom_len: 32,
            n_valid: 2000,
            solvers: c.solvers.iter().map(|s| s.name().to_string()).collect(),
            lambdas: c.lambda_fractions.iter().map(|f| format!("frac:{f}")).collect(),
            n_inits: c.n_inits,
            tol: c.tol,
            max_updates: c.max_updates,
            fista_max_iter: c.fista_max_iter,
            precision: c.precision,
            seed: c.seed,
        }
    }
}

impl Settings for ConvergenceSettings {
    const SECTION: Section = Section::Convergence;

    fn check(&self) -> Result<(), FieldError> {
        positive("channels", self.channels)?;
        positive("n_atoms", self.n_atoms)?;
        positive("atom_len", self.atom_len)?;
        positive("n_valid", self.n_valid)?;
        positive("n_inits", self.n_inits)?;
        if self.solvers.is_empty() {
            return field_err("solvers", "need at least one solver");
        }
        for s in &self.solvers {
            if Solver::parse(s).is_none() {
                let all: Vec<&str> = Solver::ALL.iter().map(|s| s.name()).collect();
                return field_err("solvers", format!("unknown solver `{s}`; available: {}", all.join(", ")));
            }
        }
        if self.lambdas.is_empty() {
            return field_err("lambdas", "need at least one lambda");
        }
        for l in &self.lambdas {
            match parse_reg(l) {
                Ok(RegPolicy::FractionOfLambdaMax(_)) => {}
                Ok(RegPolicy::Absolute(_)) => return field_err("lambdas", "only frac:R is supported here"),
                Err(e) => return field_err("lambdas", e),
            }
        }
        if !(self.tol > 0.0) || !(self.precision > 0.0) {
            return field_err("tol", "tol and precision must be > 0");
        }
        Ok(())
    }
}

impl ConvergenceSettings {
    pub fn config(&self) -> mvcsc::bench::ConvergenceConfig {
        mvcsc::bench::ConvergenceConfig {
            solvers: self.solvers.iter().map(|s| Solver::parse(s).expect("checked")).collect(),
            lambda_fractions: self
                .lambdas
                .iter()
                .map(|l| match parse_reg(l).expect("checked") {
                    RegPolicy::FractionOfLambdaMax(f) => f,
                    RegPolicy::Absolute(_) => unreachable!("checked"),
                })
                .collect(),
            n_inits: self.n_inits,
            tol: self.tol,
            max_updates: self.max_updates,
            fista_max_iter: self.fista_max_iter,
            precision: self.precision,
            seed: self.seed,
            ..Default::default()
        }
    }
}
