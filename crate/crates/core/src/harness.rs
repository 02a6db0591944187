//! Experiment configs, dispatch and result records.
//!
//! A config is a JSON object:
//!
//! ```json
//! {
//!   "kind": "discrepancy_decay",
//!   "map": "shift",
//!   "frequency": ["sqrt2m1", "sqrt3m1"],
//!   "params": { "n": { "geometric": [1000, 1000000], "count": 10 } },
//!   "thresholds": { "slope": { "max": -0.6 } },
//!   "output": "out/d2.csv"
//! }
//! ```
//!
//! `frequency` is a tag (`golden`, `sqrt2m1`, `sqrt3m1`, `liouville(γ,K)`)
//! or a decimal string, or a list of them for a multi-dimensional shift.
//! Grids are either explicit lists or `{"geometric": [lo, hi], "count": n}` /
//! `{"linear": [lo, hi], "count": n}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::arithmetic::parse_frequency;
use crate::brs::{interval_fourier_check, BrsSet, TransferFunction};
use crate::cocycle::{dt_integral, lyapunov_estimate, SamplingFunction};
use crate::covering::{covering_exponent_fit, covering_time_with};
use crate::equidistribution::{comb_identity, decay_rate_fit, discrepancy_box_with, format_f64, DiscrepancyOptions};
use crate::precision::{Frequency, Turn};
use crate::torus::{orbit, MapSpec, TorusPoint};
use crate::transport::{beta_estimate, xi_estimate};
use crate::{Error, Exec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DiscrepancyDecay,
    Covering,
    BrsRemainder,
    LyapunovScan,
    DtIntegral,
    TransportBeta,
    TransportXi,
    Identities,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::DiscrepancyDecay,
        ExperimentKind::Covering,
        ExperimentKind::BrsRemainder,
        ExperimentKind::LyapunovScan,
        ExperimentKind::DtIntegral,
        ExperimentKind::TransportBeta,
        ExperimentKind::TransportXi,
        ExperimentKind::Identities,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::DiscrepancyDecay => "discrepancy_decay",
            ExperimentKind::Covering => "covering",
            ExperimentKind::BrsRemainder => "brs_remainder",
            ExperimentKind::LyapunovScan => "lyapunov_scan",
            ExperimentKind::DtIntegral => "dt_integral",
            ExperimentKind::TransportBeta => "transport_beta",
            ExperimentKind::TransportXi => "transport_xi",
            ExperimentKind::Identities => "identities",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ExperimentKind::DiscrepancyDecay => "box discrepancy of an orbit on an N grid, with a log-log slope fit",
            ExperimentKind::Covering => "covering time of balls for each radius, with an exponent fit",
            ExperimentKind::BrsRemainder => "Birkhoff remainder sup of a bounded remainder set against 2‖g‖∞",
            ExperimentKind::LyapunovScan => "Lyapunov exponent estimates over an energy grid",
            ExperimentKind::DtIntegral => "transfer-matrix integral I(T) over a T grid",
            ExperimentKind::TransportBeta => "moment growth exponents β̂± on a time grid",
            ExperimentKind::TransportXi => "Abel-averaged spreading exponents ξ̂ on a T grid",
            ExperimentKind::Identities => "exhaustive check of the comb identity",
        }
    }

    fn randomized(self) -> bool {
        matches!(self, ExperimentKind::BrsRemainder | ExperimentKind::LyapunovScan)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    #[default]
    Shift,
    SkewShift,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FrequencyField {
    One(String),
    Many(Vec<String>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Bound {
    pub fn at_most(v: f64) -> Self {
        Bound { min: None, max: Some(v) }
    }

    pub fn at_least(v: f64) -> Self {
        Bound { min: Some(v), max: None }
    }

    pub fn within(lo: f64, hi: f64) -> Self {
        Bound {
            min: Some(lo),
            max: Some(hi),
        }
    }

    fn holds(&self, v: f64) -> bool {
        self.min.map_or(true, |m| v >= m) && self.max.map_or(true, |m| v <= m)
    }
}

/// Raw, schema-checked config.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub map: MapKind,
    #[serde(default)]
    pub frequency: Option<FrequencyField>,
    /// Torus dimension for the skew-shift.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub sampling: Option<SamplingFunction>,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, Bound>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Geometric { geometric: [f64; 2], count: usize },
    Linear { linear: [f64; 2], count: usize },
}

impl GridSpec {
    fn values(&self, path: &str) -> Result<Vec<f64>> {
        let v = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Geometric { geometric: [lo, hi], count } => {
                if !(*lo > 0.0 && hi > lo) || *count < 2 {
                    return Err(Error::config(path, "geometric grid needs 0 < lo < hi and count >= 2"));
                }
                (0..*count)
                    .map(|i| lo * (hi / lo).powf(i as f64 / (*count - 1) as f64))
                    .collect()
            }
            GridSpec::Linear { linear: [lo, hi], count } => {
                if !(hi > lo) || *count < 2 {
                    return Err(Error::config(path, "linear grid needs lo < hi and count >= 2"));
                }
                (0..*count)
                    .map(|i| lo + (hi - lo) * i as f64 / (*count - 1) as f64)
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(Error::config(path, "grid must be nonempty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(path, "grid values must be finite"));
        }
        Ok(v)
    }
}

fn default_max_s() -> usize {
    4
}
fn default_max_r() -> u64 {
    5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesParams {
    #[serde(default = "default_max_s")]
    pub max_s: usize,
    #[serde(default = "default_max_r")]
    pub max_r: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyParams {
    pub n: GridSpec,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub force_grid: bool,
    #[serde(default)]
    pub grid_resolution: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(u64),
    Many(Vec<u64>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringParams {
    pub radii: GridSpec,
    pub mmax: OneOrMany,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BrsSpec {
    Interval {
        q: i64,
        p: i64,
        #[serde(default)]
        start: f64,
    },
    Parallelogram { m: i64, l1: i64, l2: i64, q: i64, p: i64 },
}

fn default_starts() -> usize {
    8
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrsParams {
    pub set: BrsSpec,
    pub nmax: u64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub fourier_modes: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub energies: GridSpec,
    pub n: u64,
    pub phases: usize,
    #[serde(default)]
    pub imag: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtParams {
    pub t: GridSpec,
    pub rho: f64,
    pub k: f64,
    pub energies: usize,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    #[serde(default = "default_p")]
    pub p: f64,
    pub t: GridSpec,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiParams {
    pub tau: Vec<f64>,
    pub t: GridSpec,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub enum Params {
    Identities(IdentitiesParams),
    Discrepancy(DiscrepancyParams),
    Covering(CoveringParams),
    Brs(BrsParams),
    Lyapunov(LyapunovParams),
    Dt(DtParams),
    Beta(BetaParams),
    Xi(XiParams),
}

/// A validated experiment, ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub name: String,
    pub kind: ExperimentKind,
    pub map: Option<MapSpec>,
    pub frequencies: Vec<Frequency>,
    pub sampling: SamplingFunction,
    pub params: Params,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub thresholds: BTreeMap<String, Bound>,
    pub digest: String,
}

fn de_at<T: DeserializeOwned>(v: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix, inner.as_str()) {
            ("", ".") => "$".to_string(),
            ("", p) => p.to_string(),
            (pre, ".") => pre.to_string(),
            (pre, p) => format!("{pre}.{p}"),
        };
        Error::config(path, e.into_inner().to_string())
    })
}

/// SHA-256 of the compact JSON with keys sorted at every level.
pub fn config_digest(v: &Value) -> String {
    fn canonical(v: &Value) -> Value {
        match v {
            Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), canonical(x))).collect()),
            Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
            x => x.clone(),
        }
    }
    let s = serde_json::to_string(&canonical(v)).expect("JSON values serialize");
    hex::encode(Sha256::digest(s.as_bytes()))
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Experiment> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
        Experiment::from_value(v)
    }

    pub fn from_path(path: &Path) -> Result<Experiment> {
        let text = std::fs::read_to_string(path)?;
        Experiment::from_json(&text)
    }

    pub fn from_value(v: Value) -> Result<Experiment> {
        let digest = config_digest(&v);
        let cfg: ExperimentConfig = de_at(v, "")?;
        let kind = cfg.kind;

        let frequencies = match &cfg.frequency {
            None => vec![],
            Some(FrequencyField::One(s)) => vec![parse_frequency(s).map_err(|e| Error::config("frequency", e.to_string()))?],
            Some(FrequencyField::Many(list)) => {
                if list.is_empty() {
                    return Err(Error::config("frequency", "frequency list must be nonempty"));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, s)| parse_frequency(s).map_err(|e| Error::config(format!("frequency[{i}]"), e.to_string())))
                    .collect::<Result<_>>()?
            }
        };
        let map = if kind == ExperimentKind::Identities {
            None
        } else {
            if frequencies.is_empty() {
                return Err(Error::config("frequency", "this experiment needs a frequency"));
            }
            Some(match cfg.map {
                MapKind::Shift => {
                    if cfg.dim.is_some_and(|d| d != frequencies.len()) {
                        return Err(Error::config("dim", "shift dimension is the number of frequencies"));
                    }
                    MapSpec::shift(&frequencies)
                }
                MapKind::SkewShift => {
                    if frequencies.len() != 1 {
                        return Err(Error::config("frequency", "the skew-shift takes one frequency"));
                    }
                    let d = cfg.dim.ok_or_else(|| Error::config("dim", "skew-shift needs `dim`"))?;
                    if d < 2 {
                        return Err(Error::config("dim", "skew-shift needs dim >= 2"));
                    }
                    MapSpec::skew_shift(&frequencies[0], d)
                }
            })
        };
        let sampling = match cfg.sampling {
            Some(SamplingFunction::PiecewiseHolder { dim, pieces }) => {
                SamplingFunction::piecewise(dim, pieces).map_err(|e| Error::config("sampling", e.to_string()))?
            }
            Some(s) => s,
            None => SamplingFunction::free(),
        };
        if kind.randomized() && cfg.seed.is_none() {
            return Err(Error::config("seed", "seed is mandatory for randomized experiments"));
        }
        let p = if cfg.params.is_null() {
            Value::Object(Default::default())
        } else {
            cfg.params
        };
        let params = match kind {
            ExperimentKind::Identities => Params::Identities(de_at(p, "params")?),
            ExperimentKind::DiscrepancyDecay => Params::Discrepancy(de_at(p, "params")?),
            ExperimentKind::Covering => Params::Covering(de_at(p, "params")?),
            ExperimentKind::BrsRemainder => Params::Brs(de_at(p, "params")?),
            ExperimentKind::LyapunovScan => Params::Lyapunov(de_at(p, "params")?),
            ExperimentKind::DtIntegral => Params::Dt(de_at(p, "params")?),
            ExperimentKind::TransportBeta => Params::Beta(de_at(p, "params")?),
            ExperimentKind::TransportXi => Params::Xi(de_at(p, "params")?),
        };
        let known = metric_names(kind);
        if let Some(bad) = cfg.thresholds.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::config(
                format!("thresholds.{bad}"),
                format!("unknown metric; {} reports {}", kind.as_str(), known.join(", ")),
            ));
        }
        Ok(Experiment {
            name: cfg.name.unwrap_or_else(|| kind.as_str().to_string()),
            kind,
            map,
            frequencies,
            sampling,
            params,
            seed: cfg.seed,
            output: cfg.output,
            thresholds: cfg.thresholds,
            digest,
        })
    }

    fn map(&self) -> &MapSpec {
        self.map.as_ref().expect("validated: non-identity experiments carry a map")
    }

    fn point(&self, coords: &Option<Vec<f64>>, path: &str) -> Result<TorusPoint> {
        let d = self.map().dim();
        match coords {
            None => Ok(TorusPoint::origin(d)),
            Some(c) if c.len() == d => TorusPoint::from_f64s(c).map_err(|e| Error::config(path, e.to_string())),
            Some(_) => Err(Error::config(path, format!("expected {d} coordinates"))),
        }
    }
}

pub fn metric_names(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Identities => &["cases", "failures"],
        ExperimentKind::DiscrepancyDecay => &["slope", "slope_stderr", "slope_upper", "delta"],
        ExperimentKind::Covering => &["uncovered", "max_m_cover", "slope", "slope_stderr"],
        ExperimentKind::BrsRemainder => &["max_remainder", "bound", "max_ratio", "fourier_max_error"],
        ExperimentKind::LyapunovScan => &["min_value", "max_value", "mean_value"],
        ExperimentKind::DtIntegral => &["first", "last", "ratio"],
        ExperimentKind::TransportBeta => &["beta_minus", "beta_plus", "max_norm_defect", "max_boundary_mass"],
        ExperimentKind::TransportXi => &["xi_lower", "xi_upper"],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_f64(*v),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub name: String,
    pub kind: ExperimentKind,
    pub digest: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metrics: BTreeMap<String, f64>,
    /// Declared thresholds that failed and numerical failures.
    pub failures: Vec<String>,
    pub passed: bool,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> Value {
        serde_json::json!({
            "name": self.name,
            "kind": self.kind,
            "digest": self.digest,
            "metrics": self.metrics,
            "failures": self.failures,
            "passed": self.passed,
            "wall_time_s": self.wall_time_s,
        })
    }

    /// Writes `path` (CSV) and the summary next to it with a `.json` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        let json = serde_json::to_string_pretty(&self.summary())? + "\n";
        std::fs::write(path.with_extension("json"), json)?;
        Ok(())
    }
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    metrics: BTreeMap<String, f64>,
    failures: Vec<String>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
            metrics: BTreeMap::new(),
            failures: vec![],
        }
    }

    fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    fn metric(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.to_string(), v);
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.failures.push(msg.into());
    }
}

/// Runs the pipeline. Config problems are errors; numerical failures become
/// failure rows in a record with `passed = false`.
pub fn run(exp: &Experiment) -> Result<ResultRecord> {
    let start = Instant::now();
    let table = match dispatch(exp) {
        Ok(t) => t,
        Err(e @ (Error::NotCovered { .. } | Error::FlaggedState(_) | Error::InvalidInput(_))) => {
            let mut t = Table::new(&["status", "message"]);
            t.row(vec!["failed".into(), e.to_string().as_str().into()]);
            t.fail(e.to_string());
            t
        }
        Err(e) => return Err(e),
    };
    let mut failures = table.failures;
    for (name, bound) in &exp.thresholds {
        match table.metrics.get(name) {
            Some(&v) if bound.holds(v) => {}
            Some(&v) => failures.push(format!("{name} = {v} outside {bound:?}")),
            None => failures.push(format!("metric {name} not produced")),
        }
    }
    let rec = ResultRecord {
        name: exp.name.clone(),
        kind: exp.kind,
        digest: exp.digest.clone(),
        columns: table.columns,
        rows: table.rows,
        metrics: table.metrics,
        passed: failures.is_empty(),
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(path) = &exp.output {
        rec.write(path)?;
    }
    Ok(rec)
}

fn dispatch(exp: &Experiment) -> Result<Table> {
    let exec = Exec::Parallel;
    match &exp.params {
        Params::Identities(p) => run_identities(p),
        Params::Discrepancy(p) => run_discrepancy(exp, p, exec),
        Params::Covering(p) => run_covering(exp, p, exec),
        Params::Brs(p) => run_brs(exp, p, exec),
        Params::Lyapunov(p) => run_lyapunov(exp, p, exec),
        Params::Dt(p) => run_dt(exp, p, exec),
        Params::Beta(p) => run_beta(exp, p),
        Params::Xi(p) => run_xi(exp, p, exec),
    }
}

fn run_identities(p: &IdentitiesParams) -> Result<Table> {
    let mut t = Table::new(&["s", "r", "low", "top", "product", "ok"]);
    let (mut cases, mut failures) = (0usize, 0usize);
    for s in 1..=p.max_s {
        let mut r = vec![1u64; s];
        loop {
            let (low, top) = comb_identity(s, &r)?;
            let product: u64 = r.iter().product();
            let ok = low == 0.into() && top == product.into();
            cases += 1;
            if !ok {
                failures += 1;
            }
            let label: Vec<String> = r.iter().map(u64::to_string).collect();
            t.row(vec![
                s.into(),
                label.join("-").as_str().into(),
                low.to_string().as_str().into(),
                top.to_string().as_str().into(),
                product.into(),
                ok.into(),
            ]);
            // Odometer over r ∈ {1..max_r}^s.
            let mut i = 0;
            while i < s && r[i] == p.max_r {
                r[i] = 1;
                i += 1;
            }
            if i == s {
                break;
            }
            r[i] += 1;
        }
    }
    if failures > 0 {
        t.fail(format!("{failures} identity cases failed"));
    }
    t.metric("cases", cases as f64);
    t.metric("failures", failures as f64);
    Ok(t)
}

fn run_discrepancy(exp: &Experiment, p: &DiscrepancyParams, exec: Exec) -> Result<Table> {
    let raw = p.n.values("params.n")?;
    if raw.iter().any(|&n| n < 1.0 || n > 1e8) {
        return Err(Error::config("params.n", "N must lie in [1, 1e8]"));
    }
    let mut ns: Vec<usize> = raw.iter().map(|n| n.round() as usize).collect();
    ns.sort_unstable();
    ns.dedup();
    let start = exp.point(&p.start, "params.start")?;
    let nmax = *ns.last().expect("nonempty");
    let pts = orbit(exp.map(), &start, nmax)?;
    let mut opts = DiscrepancyOptions {
        force_grid: p.force_grid,
        ..Default::default()
    };
    if let Some(g) = p.grid_resolution {
        opts.grid_d2 = g;
    }
    let mut t = Table::new(&["n", "d_n", "d_upper", "error_bound", "method"]);
    let mut samples = Vec::with_capacity(ns.len());
    for &n in &ns {
        let r = discrepancy_box_with(&pts.prefix(n), opts, exec)?;
        samples.push((n as f64, r.d_n));
        t.row(vec![
            n.into(),
            r.d_n.into(),
            r.d_upper.into(),
            r.error_bound.into(),
            r.method.to_string().as_str().into(),
        ]);
    }
    if ns.len() >= 5 {
        let fit = decay_rate_fit(&samples)?;
        t.metric("slope", fit.slope);
        t.metric("slope_stderr", fit.stderr);
        t.metric("slope_upper", fit.slope + 2.0 * fit.stderr);
        t.metric("delta", fit.delta());
    }
    Ok(t)
}

fn run_covering(exp: &Experiment, p: &CoveringParams, exec: Exec) -> Result<Table> {
    let radii = p.radii.values("params.radii")?;
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::config("params.radii", "radii must be positive"));
    }
    let mmax = match &p.mmax {
        OneOrMany::One(m) => vec![*m; radii.len()],
        OneOrMany::Many(v) if v.len() == radii.len() => v.clone(),
        OneOrMany::Many(_) => return Err(Error::config("params.mmax", "give one Mmax or one per radius")),
    };
    let c = exp.point(&p.center, "params.center")?;
    let mut t = Table::new(&["radius", "m_cover", "mmax", "grid", "certified", "status"]);
    let mut uncovered = 0usize;
    let mut worst = 0u64;
    for (&r, &m) in radii.iter().zip(&mmax) {
        let res = covering_time_with(exp.map(), r, &c, m, p.grid, exec)?;
        if let Some(v) = res.m_cover {
            worst = worst.max(v);
        } else {
            uncovered += 1;
            t.fail(format!("radius {r} not covered within {m} steps"));
        }
        t.row(vec![
            r.into(),
            res.m_cover.into(),
            m.into(),
            res.grid.into(),
            res.certified.into(),
            if res.m_cover.is_some() { "covered" } else { "not_covered" }.into(),
        ]);
    }
    t.metric("uncovered", uncovered as f64);
    t.metric("max_m_cover", worst as f64);
    let decreasing = radii.windows(2).all(|w| w[1] < w[0]);
    if uncovered == 0 && radii.len() >= 4 && decreasing && radii[0] / radii[radii.len() - 1] >= 10.0 {
        let fit = covering_exponent_fit(exp.map(), &radii, &mmax, &c, exec)?;
        t.metric("slope", fit.slope);
        t.metric("slope_stderr", fit.stderr);
    }
    Ok(t)
}

fn brs_set(exp: &Experiment, spec: &BrsSpec) -> Result<BrsSet> {
    let alpha: Vec<Turn> = exp.frequencies.iter().map(Frequency::turn).collect();
    match (spec, exp.map()) {
        (BrsSpec::Interval { q, p, start }, MapSpec::Shift { .. }) if alpha.len() == 1 => Ok(BrsSet::Interval {
            alpha: alpha[0],
            q: *q,
            p: *p,
            start: Turn::from_f64(*start),
        }),
        (BrsSpec::Parallelogram { m, l1, l2, q, p }, MapSpec::Shift { .. }) if alpha.len() == 2 => Ok(BrsSet::Parallelogram {
            alpha: [alpha[0], alpha[1]],
            m: *m,
            l1: *l1,
            l2: *l2,
            q: *q,
            p: *p,
        }),
        _ => Err(Error::config(
            "params.set",
            "intervals need a 1D shift and parallelograms a 2D shift",
        )),
    }
}

fn run_brs(exp: &Experiment, p: &BrsParams, exec: Exec) -> Result<Table> {
    let set = brs_set(exp, &p.set)?;
    let g = set.transfer().map_err(|e| Error::config("params.set", e.to_string()))?;
    if p.nmax == 0 || p.starts == 0 {
        return Err(Error::config("params", "nmax and starts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed.expect("validated"));
    let starts: Vec<Vec<Turn>> = (0..p.starts)
        .map(|_| (0..set.dim()).map(|_| Turn(rng.gen())).collect())
        .collect();
    let sups = crate::brs::remainder_sup_many(&set, &starts, p.nmax, exec)?;
    let bound = 2.0 * g.bound();
    let mut t = Table::new(&["row", "start", "nmax", "value", "bound", "ok"]);
    let mut worst: f64 = 0.0;
    for (i, (x0, sup)) in starts.iter().zip(&sups).enumerate() {
        let label: Vec<String> = x0.iter().map(|c| format_f64(c.to_f64())).collect();
        let ok = *sup <= bound;
        if !ok {
            t.fail(format!("remainder {sup} exceeds 2‖g‖∞ = {bound} from start {i}"));
        }
        worst = worst.max(*sup);
        t.row(vec![
            "remainder".into(),
            label.join(" ").as_str().into(),
            p.nmax.into(),
            (*sup).into(),
            bound.into(),
            ok.into(),
        ]);
    }
    t.metric("max_remainder", worst);
    t.metric("bound", bound);
    t.metric("max_ratio", worst / bound);
    if p.fourier_modes > 0 {
        let TransferFunction::Interval(gi) = &g else {
            return Err(Error::config("params.fourier_modes", "Fourier check is available for intervals only"));
        };
        let checks = interval_fourier_check(gi, p.fourier_modes);
        let mut max_err: f64 = 0.0;
        for c in &checks {
            max_err = max_err.max(c.error);
            t.row(vec![
                "fourier".into(),
                Cell::Empty,
                c.mode.into(),
                c.error.into(),
                1e-6.into(),
                (c.error <= 1e-6).into(),
            ]);
        }
        if max_err > 1e-6 {
            t.fail(format!("Fourier identity error {max_err:e} above 1e-6"));
        }
        t.metric("fourier_max_error", max_err);
    }
    Ok(t)
}

fn run_lyapunov(exp: &Experiment, p: &LyapunovParams, exec: Exec) -> Result<Table> {
    let es = p.energies.values("params.energies")?;
    let seed = exp.seed.expect("validated");
    let mut t = Table::new(&["energy", "value", "stderr", "grid_value", "n", "phases"]);
    let mut vals = Vec::with_capacity(es.len());
    for (i, &e) in es.iter().enumerate() {
        let est = lyapunov_estimate(exp.map(), &exp.sampling, Complex64::new(e, p.imag), p.n, p.phases, seed.wrapping_add(i as u64), exec)?;
        vals.push(est.value);
        t.row(vec![e.into(), est.value.into(), est.stderr.into(), est.grid_value.into(), p.n.into(), p.phases.into()]);
    }
    t.metric("min_value", vals.iter().copied().fold(f64::INFINITY, f64::min));
    t.metric("max_value", vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    t.metric("mean_value", vals.iter().sum::<f64>() / vals.len() as f64);
    Ok(t)
}

fn run_dt(exp: &Experiment, p: &DtParams, exec: Exec) -> Result<Table> {
    let ts = p.t.values("params.t")?;
    let theta = exp.point(&p.theta, "params.theta")?;
    let mut t = Table::new(&["t", "value", "nmax", "rho", "k", "energies"]);
    let mut vals = Vec::with_capacity(ts.len());
    for &tt in &ts {
        let r = dt_integral(exp.map(), &exp.sampling, &theta, tt, p.rho, p.k, p.energies, exec)?;
        vals.push(r.value);
        t.row(vec![tt.into(), r.value.into(), r.nmax.into(), p.rho.into(), p.k.into(), p.energies.into()]);
    }
    let (first, last) = (vals[0], vals[vals.len() - 1]);
    t.metric("first", first);
    t.metric("last", last);
    t.metric("ratio", last / first);
    Ok(t)
}

fn run_beta(exp: &Experiment, p: &BetaParams) -> Result<Table> {
    let ts = p.t.values("params.t")?;
    let theta = exp.point(&p.theta, "params.theta")?;
    let b = beta_estimate(exp.map(), &theta, &exp.sampling, p.p, &ts)?;
    let mut t = Table::new(&["t", "moment", "p", "half_width", "norm_defect", "boundary_mass"]);
    for r in &b.rows {
        t.row(vec![r.t.into(), r.moment.into(), r.p.into(), r.half_width.into(), r.norm_defect.into(), r.boundary_mass.into()]);
    }
    t.metric("beta_minus", b.beta_minus);
    t.metric("beta_plus", b.beta_plus);
    t.metric("max_norm_defect", b.rows.iter().map(|r| r.norm_defect).fold(0.0, f64::max));
    t.metric("max_boundary_mass", b.rows.iter().map(|r| r.boundary_mass).fold(0.0, f64::max));
    Ok(t)
}

fn run_xi(exp: &Experiment, p: &XiParams, exec: Exec) -> Result<Table> {
    let ts = p.t.values("params.t")?;
    let theta = exp.point(&p.theta, "params.theta")?;
    let x = xi_estimate(exp.map(), &theta, &exp.sampling, &p.tau, &ts, exec)?;
    let mut t = Table::new(&["tau", "t", "l", "lower", "upper"]);
    for lv in &x.levels {
        for (tt, l) in x.t_grid.iter().zip(&lv.l) {
            t.row(vec![lv.tau.into(), (*tt).into(), (*l).into(), lv.lower.into(), lv.upper.into()]);
        }
    }
    t.metric("xi_lower", x.xi_lower);
    t.metric("xi_upper", x.xi_upper);
    Ok(t)
}

/// One-line listing for every experiment kind.
pub fn list_experiments() -> String {
    let mut s = String::new();
    for k in ExperimentKind::ALL {
        let _ = writeln!(s, "{:<18} {}", k.as_str(), k.describe());
        let _ = writeln!(s, "{:<18} metrics: {}", "", metric_names(k).join(", "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(v: Value) -> Result<Experiment> {
        Experiment::from_value(v)
    }

    fn path_of(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn identities_pass() {
        let exp = parse(json!({"kind": "identities"})).unwrap();
        let rec = run(&exp).unwrap();
        assert!(rec.passed);
        assert_eq!(rec.metrics["cases"], (5 + 25 + 125 + 625) as f64);
        assert_eq!(rec.metrics["failures"], 0.0);
    }

    #[test]
    fn malformed_frequency_has_path() {
        let e = parse(json!({"kind": "covering", "frequency": "0.1.2", "params": {"radii": [0.1], "mmax": 10}})).unwrap_err();
        assert_eq!(path_of(e), "frequency");
        let e = parse(json!({"kind": "covering", "frequency": ["golden", "nope"], "params": {"radii": [0.1], "mmax": 10}})).unwrap_err();
        assert_eq!(path_of(e), "frequency[1]");
    }

    #[test]
    fn schema_errors_have_paths() {
        let e = parse(json!({"kind": "covering", "frequency": "golden", "params": {"radii": [0.1], "mmax": "x"}})).unwrap_err();
        assert_eq!(path_of(e), "params.mmax");
        let e = parse(json!({"kind": "covering", "frequency": "golden", "params": {"radii": [], "mmax": 3}})).unwrap();
        assert_eq!(path_of(run(&e).unwrap_err()), "params.radii");
        let e = parse(json!({"kind": "bogus"})).unwrap_err();
        assert_eq!(path_of(e), "kind");
        let e = parse(json!({"kind": "identities", "extra": 1})).unwrap_err();
        assert_eq!(path_of(e), "extra");
        let e = parse(json!({"kind": "lyapunov_scan", "frequency": "golden",
            "params": {"energies": [0.0], "n": 10, "phases": 2}})).unwrap_err();
        assert_eq!(path_of(e), "seed");
        let e = parse(json!({"kind": "identities", "thresholds": {"slope": {"max": 1.0}}})).unwrap_err();
        assert_eq!(path_of(e), "thresholds.slope");
        assert_eq!(path_of(Experiment::from_json("{").unwrap_err()), "$");
    }

    #[test]
    fn digest_ignores_field_order() {
        let a = r#"{"kind":"covering","frequency":"golden","params":{"radii":[0.1],"mmax":5}}"#;
        let b = r#"{"params":{"mmax":5,"radii":[0.1]},"frequency":"golden","kind":"covering"}"#;
        assert_eq!(Experiment::from_json(a).unwrap().digest, Experiment::from_json(b).unwrap().digest);
        let c = r#"{"params":{"mmax":6,"radii":[0.1]},"frequency":"golden","kind":"covering"}"#;
        assert_ne!(Experiment::from_json(a).unwrap().digest, Experiment::from_json(c).unwrap().digest);
    }

    #[test]
    fn csv_format() {
        let exp = parse(json!({"kind": "covering", "frequency": "golden", "params": {"radii": [0.1, 0.3], "mmax": 100}})).unwrap();
        let rec = run(&exp).unwrap();
        let csv = rec.to_csv();
        assert!(csv.starts_with("radius,m_cover,mmax,grid,certified,status\n"));
        assert!(!csv.contains('\r'));
        let second = csv.lines().nth(1).unwrap();
        let r: f64 = second.split(',').next().unwrap().parse().unwrap();
        assert_eq!(r, 0.1);
        assert_eq!(second.split(',').next().unwrap(), "1.0000000000000001e-1");
        assert_eq!(run(&exp).unwrap().to_csv(), csv);
    }

    #[test]
    fn numerical_failure_is_recorded() {
        let exp = parse(json!({"kind": "covering", "frequency": "golden", "params": {"radii": [0.001], "mmax": 10}})).unwrap();
        let rec = run(&exp).unwrap();
        assert!(!rec.passed);
        assert!(rec.to_csv().contains("not_covered"));
    }

    #[test]
    fn thresholds_are_applied() {
        let base = json!({"kind": "dt_integral", "frequency": "golden", "sampling": {"kind": "cosine", "lambda": 3.0},
            "params": {"t": [10.0, 100.0], "rho": 0.5, "k": 9.0, "energies": 61}});
        let mut strict = base.clone();
        strict["thresholds"] = json!({"ratio": {"max": 1e-9}});
        let mut loose = base;
        loose["thresholds"] = json!({"ratio": {"max": 1.0}});
        assert!(!run(&parse(strict).unwrap()).unwrap().passed);
        assert!(run(&parse(loose).unwrap()).unwrap().passed);
    }

    #[test]
    fn free_transport_beta_row() {
        let exp = parse(json!({"kind": "transport_beta", "frequency": "golden",
            "params": {"p": 2.0, "t": {"geometric": [10.0, 640.0], "count": 8}},
            "thresholds": {"beta_minus": {"min": 0.95}, "beta_plus": {"max": 1.05}}})).unwrap();
        let rec = run(&exp).unwrap();
        assert!(rec.passed, "{:?}", rec.metrics);
    }

    #[test]
    fn output_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.csv");
        let exp = parse(json!({"kind": "identities", "params": {"max_s": 2, "max_r": 3}, "output": path})).unwrap();
        let rec = run(&exp).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), rec.to_csv());
        let summary: Value = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
        assert_eq!(summary["passed"], json!(true));
    }

    #[test]
    fn every_kind_is_listed() {
        let s = list_experiments();
        for k in ExperimentKind::ALL {
            assert!(s.contains(k.as_str()));
        }
    }
}
