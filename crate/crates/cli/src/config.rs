//! Run configuration: flat `[section]` blocks of `key = value` lines.
//!
//! ```text
//! [system]
//! omega_hz = 46.6
//! j_hz = 3.1
//! d_hz = 640
//!
//! [relaxation]
//! mode = calibrate
//! t1 = 1.1
//! t_lls = 3.7
//!
//! [experiment]
//! kind = lls-pop
//! grid_start = 0
//! grid_end = 11
//! grid_points = 10
//!
//! [output]
//! directory = out
//! formats = csv
//! ```
//!
//! Lines starting with `#` or `;` are comments. Unknown sections and keys
//! are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;
use lls_core::experiments::{linspace, DiffusionMode, LifetimeKind, Transition};
use lls_core::sample::{OrderMap, RampShape, DEFAULT_BETA, DEFAULT_D_MAX, DEFAULT_T_C};
use lls_core::sequence::LockMode;
use lls_core::spin::{SpinSystem, PROTON_GAMMA};

use crate::CliError;

const GAUSS_PER_CM: f64 = 0.01;

const KEYS: &[(&str, &[&str])] = &[
    ("system", &["omega_hz", "j_hz", "d_hz", "gamma"]),
    (
        "schedule",
        &["t_start_k", "t_end_k", "shape", "t_c_k", "beta", "s0", "d_max_hz", "table"],
    ),
    (
        "relaxation",
        &[
            "mode",
            "dipolar",
            "uncorrelated",
            "t1",
            "t_lls",
            "above_dipolar",
            "above_uncorrelated",
            "above_t1",
            "above_t_lls",
        ],
    ),
    (
        "experiment",
        &[
            "kind",
            "grid",
            "grid_start",
            "grid_end",
            "grid_points",
            "grid_unit",
            "seed",
            "lock",
            "resolution_s",
            "trajectory",
            "d_true",
            "delta_s",
            "big_delta_s",
            "shape_factor",
            "q",
            "backend",
            "slices",
        ],
    ),
    ("output", &["directory", "formats"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Lifetime(LifetimeKind),
    Diffusion(DiffusionMode),
}

impl ExperimentKind {
    fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "diffusion-ste" => Some(Self::Diffusion(DiffusionMode::Ste)),
            "diffusion-lls" => Some(Self::Diffusion(DiffusionMode::Lls)),
            _ => LifetimeKind::from_keyword(s).map(Self::Lifetime),
        }
    }

    pub fn keyword(self) -> String {
        match self {
            Self::Lifetime(k) => k.keyword().into(),
            Self::Diffusion(m) => format!("diffusion-{}", m.keyword()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub dipolar: f64,
    pub uncorrelated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub t1: f64,
    pub t_lls: f64,
}

/// Relaxation model. `above` applies above the transition temperature and
/// is only read when a schedule is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelaxationConfig {
    None,
    Rates { below: Rates, above: Option<Rates> },
    Calibrate { below: Targets, above: Option<Targets> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub shape: RampShape,
    pub t_c: f64,
    pub d_max: f64,
    pub map: OrderMap,
}

impl ScheduleConfig {
    pub fn transition(&self) -> Transition {
        Transition {
            from: self.t_start,
            to: self.t_end,
            shape: self.shape,
            map: self.map.clone(),
            d_max: self.d_max,
            t_c: self.t_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Storage or recovery times (s), or gradient strengths (T/m).
    pub grid: Vec<f64>,
    pub seed: Option<u64>,
    pub lock: LockMode,
    pub resolution: f64,
    pub trajectory: bool,
    pub d_true: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub shape_factor: f64,
    pub q: i32,
    pub backend: Backend,
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SpinSystem,
    pub schedule: Option<ScheduleConfig>,
    pub relaxation: RelaxationConfig,
    pub experiment: Option<ExperimentConfig>,
    pub output: OutputConfig,
}

struct Section<'a> {
    name: &'a str,
    values: BTreeMap<String, String>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.bad(key, v, "a finite number"))
            })
            .transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&self, key: &str) -> Result<f64, CliError> {
        self.f64_opt(key)?
            .ok_or_else(|| CliError::Config(format!("[{}] missing `{key}`", self.name)))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T, what: &str) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, v, what)),
        }
    }

    fn bad(&self, key: &str, v: &str, what: &str) -> CliError {
        CliError::Config(format!("[{}] `{key} = {v}`: expected {what}", self.name))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// `base` resolves relative file references (order table).
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {}", e.line, e.col, e.msg))
        })?;
        let mut sections: BTreeMap<&str, Section> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(CliError::Config("key outside of any [section]".into()));
                }
                continue;
            };
            let (sname, allowed) = KEYS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| CliError::Config(format!("unknown section [{name}]")))?;
            let mut values = BTreeMap::new();
            for (k, v) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(CliError::Config(format!("[{name}] unknown key `{k}`")));
                }
                values.insert(k.to_string(), v.trim().to_string());
            }
            sections.insert(sname, Section { name: sname, values });
        }
        let empty = |name| Section {
            name,
            values: BTreeMap::new(),
        };

        let sys = sections
            .get("system")
            .ok_or_else(|| CliError::Config("missing [system] section".into()))?;
        let mut system = SpinSystem::new(sys.f64_req("omega_hz")?, sys.f64_req("j_hz")?, sys.f64_req("d_hz")?)
            .map_err(|e| CliError::Config(e.to_string()))?;
        system.gamma = sys.f64_or("gamma", PROTON_GAMMA)?;
        if system.gamma <= 0.0 {
            return Err(CliError::Config("[system] gamma must be positive".into()));
        }

        let schedule = sections.get("schedule").map(|s| parse_schedule(s, base)).transpose()?;
        let relaxation = match sections.get("relaxation") {
            Some(r) => parse_relaxation(r)?,
            None => RelaxationConfig::None,
        };
        let experiment = sections.get("experiment").map(parse_experiment).transpose()?;
        if let Some(e) = &experiment {
            if e.kind == ExperimentKind::Lifetime(LifetimeKind::Transphase) && schedule.is_none() {
                return Err(CliError::Config("transphase runs need a [schedule] section".into()));
            }
        }
        let no_output = empty("output");
        let out = sections.get("output").unwrap_or(&no_output);
        let formats: Vec<&str> = out.raw("formats").unwrap_or("csv").split(',').map(str::trim).collect();
        let output = OutputConfig {
            directory: PathBuf::from(out.raw("directory").unwrap_or("out")),
            svg: parse_formats(&formats)?,
        };
        Ok(RunConfig {
            system,
            schedule,
            relaxation,
            experiment,
            output,
        })
    }
}

/// Returns whether SVG plots were requested. CSV is always written.
pub fn parse_formats(formats: &[&str]) -> Result<bool, CliError> {
    let mut svg = false;
    for f in formats {
        match *f {
            "csv" => {}
            "svg" => svg = true,
            other => return Err(CliError::Config(format!("unknown output format `{other}`"))),
        }
    }
    Ok(svg)
}

fn parse_schedule(s: &Section, base: &Path) -> Result<ScheduleConfig, CliError> {
    let t_c = s.f64_or("t_c_k", DEFAULT_T_C)?;
    let d_max = s.f64_or("d_max_hz", DEFAULT_D_MAX)?;
    let beta = s.f64_or("beta", DEFAULT_BETA)?;
    let cfg = |e: lls_core::Error| CliError::Config(format!("[schedule] {e}"));
    let map = match (s.raw("table"), s.f64_opt("s0")?) {
        (Some(_), Some(_)) => return Err(CliError::Config("[schedule] give either `s0` or `table`".into())),
        (Some(path), None) => read_table(&base.join(path))?,
        (None, Some(s0)) => OrderMap::power_law(s0, beta, t_c).map_err(cfg)?,
        (None, None) => OrderMap::anchored(640.0, 294.0, d_max, beta, t_c).map_err(cfg)?,
    };
    let shape_kw = s.raw("shape").unwrap_or("linear");
    Ok(ScheduleConfig {
        t_start: s.f64_req("t_start_k")?,
        t_end: s.f64_req("t_end_k")?,
        shape: RampShape::from_keyword(shape_kw).ok_or_else(|| s.bad("shape", shape_kw, "linear or sigmoid"))?,
        t_c,
        d_max,
        map,
    })
}

/// Two columns `temperature_k,order`; `#` comments and a header line are
/// skipped.
fn read_table(path: &Path) -> Result<OrderMap, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("order table {}: {e}", path.display())))?;
    let (mut temps, mut vals) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(|c| c.trim().parse::<f64>());
        match (cols.next(), cols.next(), cols.next()) {
            (Some(Ok(t)), Some(Ok(v)), None) => {
                temps.push(t);
                vals.push(v);
            }
            _ if temps.is_empty() && n == 0 => {}
            _ => {
                return Err(CliError::Config(format!(
                    "order table {} line {}: expected `temperature,order`",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    OrderMap::table(temps, vals).map_err(|e| CliError::Config(format!("order table: {e}")))
}

fn parse_relaxation(s: &Section) -> Result<RelaxationConfig, CliError> {
    let rates = |a: &str, b: &str| -> Result<Option<Rates>, CliError> {
        match (s.f64_opt(a)?, s.f64_opt(b)?) {
            (Some(dipolar), Some(uncorrelated)) => Ok(Some(Rates { dipolar, uncorrelated })),
            (None, None) => Ok(None),
            _ => Err(CliError::Config(format!("[relaxation] `{a}` and `{b}` go together"))),
        }
    };
    let targets = |a: &str, b: &str| -> Result<Option<Targets>, CliError> {
        match (s.f64_opt(a)?, s.f64_opt(b)?) {
            (Some(t1), Some(t_lls)) => Ok(Some(Targets { t1, t_lls })),
            (None, None) => Ok(None),
            _ => Err(CliError::Config(format!("[relaxation] `{a}` and `{b}` go together"))),
        }
    };
    let mode = s.raw("mode").unwrap_or("none");
    match mode {
        "none" => Ok(RelaxationConfig::None),
        "rates" => Ok(RelaxationConfig::Rates {
            below: rates("dipolar", "uncorrelated")?
                .ok_or_else(|| CliError::Config("[relaxation] rates mode needs `dipolar` and `uncorrelated`".into()))?,
            above: rates("above_dipolar", "above_uncorrelated")?,
        }),
        "calibrate" => Ok(RelaxationConfig::Calibrate {
            below: targets("t1", "t_lls")?
                .ok_or_else(|| CliError::Config("[relaxation] calibrate mode needs `t1` and `t_lls`".into()))?,
            above: targets("above_t1", "above_t_lls")?,
        }),
        other => Err(s.bad("mode", other, "none, rates or calibrate")),
    }
}

fn parse_experiment(s: &Section) -> Result<ExperimentConfig, CliError> {
    let kind_kw = s
        .raw("kind")
        .ok_or_else(|| CliError::Config("[experiment] missing `kind`".into()))?;
    let kind = ExperimentKind::from_keyword(kind_kw).ok_or_else(|| {
        s.bad(
            "kind",
            kind_kw,
            "t1, lls-pop, lls-ip, transphase, diffusion-ste or diffusion-lls",
        )
    })?;
    let mut grid = match (s.raw("grid"), s.raw("grid_start")) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "[experiment] give either `grid` or `grid_start`/`grid_end`/`grid_points`".into(),
            ))
        }
        (Some(list), None) => list
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<f64>().map_err(|_| s.bad("grid", v, "comma-separated numbers")))
            .collect::<Result<Vec<f64>, _>>()?,
        (None, Some(_)) => linspace(
            s.f64_req("grid_start")?,
            s.f64_req("grid_end")?,
            s.parse_or("grid_points", 0usize, "a count")?,
        ),
        (None, None) => Vec::new(),
    };
    if grid.is_empty() {
        return Err(CliError::Config("[experiment] empty sweep grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|v| *v < 0.0) {
        return Err(CliError::Config(
            "[experiment] grid must be non-negative and strictly increasing".into(),
        ));
    }
    match s.raw("grid_unit").unwrap_or("tesla_per_m") {
        "tesla_per_m" => {}
        "gauss_per_cm" => grid.iter_mut().for_each(|g| *g *= GAUSS_PER_CM),
        other => return Err(s.bad("grid_unit", other, "tesla_per_m or gauss_per_cm")),
    }
    let seed = s.raw("seed").map(|v| v.parse::<u64>().map_err(|_| s.bad("seed", v, "an unsigned integer"))).transpose()?;
    let lock_kw = s.raw("lock").unwrap_or("ideal");
    let backend = match s.raw("backend").unwrap_or("analytic") {
        "analytic" => Backend::Analytic,
        "monte-carlo" => Backend::MonteCarlo,
        other => return Err(s.bad("backend", other, "analytic or monte-carlo")),
    };
    let cfg = ExperimentConfig {
        kind,
        grid,
        seed,
        lock: LockMode::from_keyword(lock_kw).ok_or_else(|| s.bad("lock", lock_kw, "ideal or waltz16"))?,
        resolution: s.f64_or("resolution_s", 1e-3)?,
        trajectory: s.parse_or("trajectory", false, "true or false")?,
        d_true: s.f64_or("d_true", 0.0)?,
        delta: s.f64_or("delta_s", 320e-6)?,
        big_delta: s.f64_or("big_delta_s", 1.0)?,
        shape_factor: s.f64_or("shape_factor", 2.0 / std::f64::consts::PI)?,
        q: s.parse_or("q", 1, "an integer")?,
        backend,
        slices: s.parse_or("slices", 10_000usize, "a count")?,
    };
    if cfg.resolution <= 0.0 {
        return Err(CliError::Config("[experiment] resolution_s must be positive".into()));
    }
    Ok(cfg)
}
