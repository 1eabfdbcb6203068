//! Experiment runner: flat key/value run specs, sweeps, and result records
//! written as CSV tables and JSON documents.
//!
//! A record echoes every parameter the experiment read (defaults included),
//! so re-running the echoed spec reproduces the payload exactly, whatever
//! the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{b1_estimate, bound_row, BoundParams};
use crate::enhance::{Boundary, EnhanceParams, Model, ModelCrossing};
use crate::error::{check_probability, Error, Result};
use crate::estimate::{
    correlation_length, coupling_inequality_check, critical_point, lattice_critical_point, scaling_experiment,
    theta_estimate, theta_tilde_estimate, CouplingConfig, CriticalConfig, LevelSeries, MCEstimate, Target,
};
use crate::exec::Exec;
use crate::fractal::{FractalParams, FractalRealization, DEFAULT_CELL_BUDGET};
use crate::lattice::{Adjacency, Axis, BoxShape};
use crate::percolation::{
    crosses, duality_check, exact_crossing_prob, minimax_crossing, SiteConfig,
};
use crate::rng::{Purpose, RngKey};

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "FRACPERC_OUT_DIR";
/// Output directory used when neither `--out` nor the environment sets one.
pub const DEFAULT_OUT_DIR: &str = "results";
/// Version tag of the record layout, matching the shipped schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Theta,
    Sheet,
    Phi,
    Psi,
    Enhance,
    Diminish,
    Pc,
    Corrlen,
    Scaling,
    Bounds,
    Couple,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Experiment::Theta,
        Experiment::Sheet,
        Experiment::Phi,
        Experiment::Psi,
        Experiment::Enhance,
        Experiment::Diminish,
        Experiment::Pc,
        Experiment::Corrlen,
        Experiment::Scaling,
        Experiment::Bounds,
        Experiment::Couple,
        Experiment::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Theta => "theta",
            Experiment::Sheet => "sheet",
            Experiment::Phi => "phi",
            Experiment::Psi => "psi",
            Experiment::Enhance => "enhance",
            Experiment::Diminish => "diminish",
            Experiment::Pc => "pc",
            Experiment::Corrlen => "corrlen",
            Experiment::Scaling => "scaling",
            Experiment::Bounds => "bounds",
            Experiment::Couple => "couple",
            Experiment::Validate => "validate",
        }
    }

    /// Keys this experiment accepts besides the common ones.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Theta | Experiment::Sheet => &["N", "d", "k", "kmax", "p", "trials", "budget"],
            Experiment::Phi | Experiment::Psi => &["N", "d", "p", "s", "trials", "boundary"],
            Experiment::Enhance | Experiment::Diminish => &["N", "d", "p", "s", "trials", "boundary"],
            Experiment::Pc => &[
                "target", "N", "d", "k", "s", "tau", "lo", "hi", "tol", "trials", "max_trials", "budget",
            ],
            Experiment::Corrlen => &["p", "delta", "max_N", "trials"],
            Experiment::Scaling => &[
                "N", "k", "lattice_N", "tau", "lo", "hi", "tol", "trials", "max_trials", "budget",
            ],
            Experiment::Bounds => &["N", "m", "delta1", "p", "b1_trials", "y0", "c3", "c4", "g", "D", "c2", "kmax"],
            Experiment::Couple => &["chain", "N", "d", "k", "inner", "p", "trials", "budget"],
            Experiment::Validate => &[],
        }
    }

    /// Keys whose value is a list consumed by the experiment itself, never a
    /// sweep range.
    pub fn list_keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Scaling => &["N"],
            Experiment::Couple => &["p"],
            _ => &[],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown experiment `{s}`")))
    }
}

/// Keys every experiment accepts.
pub const COMMON_KEYS: [&str; 4] = ["seed", "threads", "out", "format"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => Err(Error::Usage(format!("unknown format `{other}` (csv, json or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub experiment: Experiment,
    pub params: BTreeMap<String, String>,
}

impl RunSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// Parses `--key value` pairs. Unknown keys and repeated keys are usage
    /// errors.
    pub fn parse(experiment: &str, args: &[String]) -> Result<Self> {
        let experiment: Experiment = experiment.parse()?;
        let mut spec = RunSpec::new(experiment);
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Usage(format!("expected `--key`, found `{flag}`")))?;
            let value = it
                .next()
                .ok_or_else(|| Error::Usage(format!("missing value for `--{key}`")))?;
            if spec.params.insert(key.to_string(), value.clone()).is_some() {
                return Err(Error::Usage(format!("`--{key}` given twice")));
            }
        }
        spec.check_keys()?;
        Ok(spec)
    }

    pub fn check_keys(&self) -> Result<()> {
        for key in self.params.keys() {
            if !COMMON_KEYS.contains(&key.as_str()) && !self.experiment.keys().contains(&key.as_str()) {
                return Err(Error::Usage(format!(
                    "`{key}` is not a parameter of `{}` (accepted: {})",
                    self.experiment,
                    self.experiment.keys().join(", ")
                )));
            }
        }
        Ok(())
    }

    /// The single ranged key, if any.
    pub fn ranged_key(&self) -> Result<Option<&str>> {
        let ranged: Vec<&str> = self
            .params
            .iter()
            .filter(|(k, v)| {
                !self.experiment.list_keys().contains(&k.as_str())
                    && !matches!(k.as_str(), "out" | "format")
                    && (v.contains(',') || v.contains(':'))
            })
            .map(|(k, _)| k.as_str())
            .collect();
        match ranged.as_slice() {
            [] => Ok(None),
            [k] => Ok(Some(k)),
            many => Err(Error::Usage(format!(
                "only one ranged parameter is allowed, found {}",
                many.join(", ")
            ))),
        }
    }

    /// Expands a ranged spec into one spec per grid point.
    pub fn expand(&self) -> Result<Vec<(Option<SweepPoint>, RunSpec)>> {
        self.check_keys()?;
        let Some(key) = self.ranged_key()? else {
            return Ok(vec![(None, self.clone())]);
        };
        let values = parse_range(&self.params[key])?;
        Ok(values
            .into_iter()
            .enumerate()
            .map(|(index, value)| {
                let spec = self.clone().with(key, &value);
                let point = SweepPoint {
                    key: key.to_string(),
                    value,
                    index,
                };
                (Some(point), spec)
            })
            .collect())
    }
}

/// Expands `a,b,c`, `a:b:step` (inclusive) or `a:b:*factor`; any other
/// text is a single value.
pub fn parse_range(text: &str) -> Result<Vec<String>> {
    let usage = |why: &str| Error::Usage(format!("bad range `{text}`: {why}"));
    if !text.contains(',') && !text.contains(':') {
        return Ok(vec![text.trim().to_string()]);
    }
    if text.contains(',') {
        let items: Vec<String> = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if items.is_empty() {
            return Err(usage("empty list"));
        }
        return Ok(items);
    }
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(usage("expected start:stop:step"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| usage("not a number"));
    let (a, b) = (num(a)?, num(b)?);
    let integral = !text.contains('.') && !text.contains('e');
    let fmt = |v: f64| {
        if integral {
            format!("{}", v.round() as i64)
        } else {
            format!("{}", (v * 1e12).round() / 1e12)
        }
    };
    let mut out = Vec::new();
    if let Some(f) = step.strip_prefix('*') {
        let f = num(f)?;
        if !(f > 1.0) || !(a > 0.0) {
            return Err(usage("geometric ranges need start > 0 and factor > 1"));
        }
        let mut v = a;
        while v <= b * (1.0 + 1e-12) {
            out.push(fmt(v));
            v *= f;
        }
    } else {
        let h = num(step)?;
        if !(h > 0.0) {
            return Err(usage("step must be positive"));
        }
        let mut i = 0u64;
        loop {
            let v = a + i as f64 * h;
            if v > b + h * 1e-9 {
                break;
            }
            out.push(fmt(v));
            i += 1;
        }
    }
    if out.is_empty() {
        return Err(usage("empty range"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub key: String,
    pub value: String,
    pub index: usize,
}

/// A CSV-shaped view of a payload.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment: Experiment,
    /// Every parameter the run read, defaults included.
    pub spec: BTreeMap<String, String>,
    pub sweep: Option<SweepPoint>,
    pub build: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub payload: Value,
    #[serde(skip)]
    pub table: Table,
}

impl ResultRecord {
    /// The echoed spec as a runnable spec.
    pub fn rerun_spec(&self) -> RunSpec {
        RunSpec {
            experiment: self.experiment,
            params: self.spec.clone(),
        }
    }
}

/// Build identifier: crate version plus the git revision when the build
/// environment provides `FRACPERC_GIT_REV`.
pub fn build_id() -> String {
    match option_env!("FRACPERC_GIT_REV") {
        Some(rev) => format!("fracperc {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("fracperc {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Reads parameters, records what was read, and applies defaults.
struct Params<'a> {
    given: &'a BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl<'a> Params<'a> {
    fn new(given: &'a BTreeMap<String, String>) -> Self {
        Self {
            given,
            echo: BTreeMap::new(),
        }
    }

    fn raw(&mut self, key: &'static str, default: Option<&str>) -> Result<String> {
        let v = match (self.given.get(key), default) {
            (Some(v), _) => v.clone(),
            (None, Some(d)) => d.to_string(),
            (None, None) => return Err(Error::Usage(format!("missing required parameter `--{key}`"))),
        };
        self.echo.insert(key.to_string(), v.clone());
        Ok(v)
    }

    fn opt_raw(&mut self, key: &'static str) -> Option<String> {
        let v = self.given.get(key).cloned()?;
        self.echo.insert(key.to_string(), v.clone());
        Some(v)
    }

    fn get<T: FromStr>(&mut self, key: &'static str, default: Option<&str>) -> Result<T> {
        let v = self.raw(key, default)?;
        v.parse()
            .map_err(|_| Error::Usage(format!("cannot parse `--{key} {v}`")))
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>> {
        match self.opt_raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("cannot parse `--{key} {v}`"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &'static str, default: Option<&str>) -> Result<Vec<T>> {
        let v = self.raw(key, default)?;
        parse_range(&v)?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Usage(format!("cannot parse `{s}` in `--{key}`"))))
            .collect()
    }
}

/// Runs a spec without ranged keys.
pub fn run(spec: &RunSpec) -> Result<ResultRecord> {
    spec.check_keys()?;
    if let Some(k) = spec.ranged_key()? {
        return Err(Error::Usage(format!("`{k}` is ranged; use sweep")));
    }
    run_point(spec, None)
}

/// Runs every grid point of a spec, in grid order, with a shared seed.
pub fn sweep(spec: &RunSpec) -> Result<Vec<ResultRecord>> {
    spec.expand()?
        .into_iter()
        .map(|(point, s)| run_point(&s, point))
        .collect()
}

fn run_point(spec: &RunSpec, sweep: Option<SweepPoint>) -> Result<ResultRecord> {
    let mut params = Params::new(&spec.params);
    let seed: u64 = params.get("seed", Some("1"))?;
    let threads: usize = params.get("threads", Some("0"))?;
    for key in ["out", "format"] {
        params.opt_raw(key);
    }
    let exec = Exec::new(threads);
    let start = Instant::now();
    let (payload, table) = dispatch(spec.experiment, &mut params, seed, &exec)?;
    Ok(ResultRecord {
        schema_version: SCHEMA_VERSION,
        experiment: spec.experiment,
        spec: params.echo,
        sweep,
        build: build_id(),
        threads: exec.threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        payload,
        table,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable payload")
}

fn est_cells(e: &MCEstimate) -> Vec<String> {
    vec![
        e.trials.to_string(),
        e.successes.to_string(),
        e.p_hat.to_string(),
        e.ci_low.to_string(),
        e.ci_high.to_string(),
    ]
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const EST_COLUMNS: [&str; 5] = ["trials", "successes", "p_hat", "ci_low", "ci_high"];

fn with_est(prefix: &[&'static str]) -> Vec<&'static str> {
    let mut v = prefix.to_vec();
    v.extend(EST_COLUMNS);
    v
}

fn dispatch(exp: Experiment, pr: &mut Params, seed: u64, exec: &Exec) -> Result<(Value, Table)> {
    match exp {
        Experiment::Theta | Experiment::Sheet => {
            let sheet = exp == Experiment::Sheet;
            let n: usize = pr.get("N", None)?;
            let d: usize = pr.get("d", Some(if sheet { "3" } else { "2" }))?;
            let k: u32 = pr.get("k", None)?;
            let kmax: u32 = pr.get("kmax", Some(&k.to_string()))?;
            let p: f64 = pr.get("p", None)?;
            let trials: u64 = pr.get("trials", Some("10000"))?;
            let budget: u64 = pr.get("budget", Some(&DEFAULT_CELL_BUDGET.to_string()))?;
            let params = FractalParams::new(n, d, p, kmax)?.with_budget(budget);
            let series: LevelSeries = if sheet {
                theta_tilde_estimate(&params, k, trials, seed, exec)?
            } else {
                theta_estimate(&params, k, trials, seed, exec)?
            };
            let mut t = Table::new(&with_est(&["level", "p"]));
            for (j, e) in series.levels.iter().enumerate() {
                let mut row = vec![(j + 1).to_string(), p.to_string()];
                row.extend(est_cells(e));
                t.push(row);
            }
            Ok((to_value(&series), t))
        }
        Experiment::Phi | Experiment::Psi => {
            let model = if exp == Experiment::Phi {
                Model::Diminishment
            } else {
                Model::Enhancement
            };
            let side: usize = pr.get("N", None)?;
            let d: usize = pr.get("d", Some("2"))?;
            let p: f64 = pr.get("p", None)?;
            let s: f64 = pr.get("s", Some("0"))?;
            let trials: u64 = pr.get("trials", Some("10000"))?;
            let boundary: Boundary = pr.get("boundary", Some("bernoulli"))?;
            let params = EnhanceParams::new(p, s, model, boundary)?;
            let e = if model == Model::Diminishment {
                crate::enhance::phi_ns(&params, side, d, trials, seed, exec)?
            } else {
                crate::enhance::psi_ns(&params, side, d, trials, seed, exec)?
            };
            let mut t = Table::new(&with_est(&["N", "d", "p", "s", "boundary"]));
            let mut row = vec![side.to_string(), d.to_string(), p.to_string(), s.to_string(), format!("{boundary:?}")];
            row.extend(est_cells(&e));
            t.push(row);
            Ok((json!({ "params": params, "N": side, "d": d, "estimate": e }), t))
        }
        Experiment::Enhance | Experiment::Diminish => {
            let model = if exp == Experiment::Enhance {
                Model::Enhancement
            } else {
                Model::Diminishment
            };
            let side: usize = pr.get("N", None)?;
            let d: usize = pr.get("d", Some("2"))?;
            let p: f64 = pr.get("p", None)?;
            let s: f64 = pr.get("s", None)?;
            let trials: u64 = pr.get("trials", Some("1"))?;
            let boundary: Boundary = pr.get("boundary", Some("bernoulli"))?;
            check_probability("p", p)?;
            let with = ModelCrossing::new(side, d, s, model, boundary, seed)?;
            let without = ModelCrossing { s: 0.0, ..with };
            let adj = model.adjacency();
            let rows = exec.map_trials(0..trials.max(1), |t| {
                let before = without.configuration(t, p);
                let after = with.configuration(t, p);
                (
                    t,
                    before.open_count(),
                    after.open_count(),
                    crosses(before.shape(), before.states(), adj, Axis::FIRST),
                    crosses(after.shape(), after.states(), adj, Axis::FIRST),
                )
            });
            let mut t = Table::new(&["trial", "open_before", "open_after", "crossed_before", "crossed_after"]);
            let mut js = Vec::new();
            for &(i, ob, oa, cb, ca) in &rows {
                t.push(vec![i.to_string(), ob.to_string(), oa.to_string(), cb.to_string(), ca.to_string()]);
                js.push(json!({"trial": i, "open_before": ob, "open_after": oa, "crossed_before": cb, "crossed_after": ca}));
            }
            let after = MCEstimate::from_indicators(&rows.iter().map(|r| r.4).collect::<Vec<_>>());
            Ok((json!({ "model": model, "boundary": boundary, "N": side, "d": d, "p": p, "s": s, "trials": js, "crossing_after": after }), t))
        }
        Experiment::Pc => {
            let target_name: String = pr.get("target", Some("theta"))?;
            let n: usize = pr.get("N", None)?;
            let d: usize = pr.get("d", Some("2"))?;
            let target = match target_name.as_str() {
                "theta" | "sheet" => {
                    let k: u32 = pr.get("k", Some("3"))?;
                    if target_name == "theta" {
                        Target::Theta { n, d, k }
                    } else {
                        Target::ThetaTilde { n, d, k }
                    }
                }
                "phi" | "psi" => {
                    let s: f64 = pr.get("s", Some("0"))?;
                    if target_name == "phi" {
                        Target::Phi { side: n, d, s }
                    } else {
                        Target::Psi { side: n, d, s }
                    }
                }
                other => return Err(Error::Usage(format!("unknown target `{other}` (theta, sheet, phi, psi)"))),
            };
            let cfg = critical_config(pr)?;
            let est = critical_point(target, &cfg, seed, exec)?;
            let mut t = Table::new(&with_est(&["step", "p", "side", "lo", "hi"]));
            for (i, s) in est.steps.iter().enumerate() {
                let mut row = vec![
                    i.to_string(),
                    s.p.to_string(),
                    format!("{:?}", s.side).to_lowercase(),
                    s.lo.to_string(),
                    s.hi.to_string(),
                ];
                row.extend(est_cells(&s.estimate));
                t.push(row);
            }
            Ok((json!({ "config": cfg, "estimate": est }), t))
        }
        Experiment::Corrlen => {
            let p: f64 = pr.get("p", None)?;
            let delta: f64 = pr.get("delta", Some("0.1"))?;
            let max_side: usize = pr.get("max_N", Some("1024"))?;
            let trials: u64 = pr.get("trials", Some("1000"))?;
            let c = correlation_length(p, delta, max_side, trials, seed, exec)?;
            let mut t = Table::new(&["p", "delta", "N", "p_hat_N", "ci_low_N", "p_hat_below", "ci_high_below", "separated", "unbounded"]);
            t.push(vec![
                p.to_string(),
                delta.to_string(),
                c.n.map(|n| n.to_string()).unwrap_or_default(),
                opt_cell(c.at_n.map(|e| e.p_hat)),
                opt_cell(c.at_n.map(|e| e.ci_low)),
                opt_cell(c.below_n.map(|e| e.p_hat)),
                opt_cell(c.below_n.map(|e| e.ci_high)),
                c.separated.to_string(),
                c.unbounded.to_string(),
            ]);
            Ok((to_value(&c), t))
        }
        Experiment::Scaling => {
            let ns: Vec<usize> = pr.list("N", None)?;
            let k: u32 = pr.get("k", Some("2"))?;
            let lattice_side: usize = pr.get("lattice_N", Some("256"))?;
            let cfg = critical_config(pr)?;
            let lattice = lattice_critical_point(lattice_side, &cfg, seed, exec)?;
            let fit = scaling_experiment(&ns, k, lattice, &cfg, seed, exec)?;
            let mut t = Table::new(&["N", "p_lo", "p_hi", "p_hat", "diff", "diff_half_width", "residual"]);
            for (pt, r) in fit.points.iter().zip(&fit.residuals) {
                t.push(vec![
                    pt.n.to_string(),
                    pt.estimate.bracket.0.to_string(),
                    pt.estimate.bracket.1.to_string(),
                    pt.estimate.p_hat.to_string(),
                    pt.diff.to_string(),
                    pt.diff_half_width.to_string(),
                    r.to_string(),
                ]);
            }
            Ok((json!({ "config": cfg, "fit": fit }), t))
        }
        Experiment::Bounds => {
            let n: u64 = pr.get("N", None)?;
            let m: u64 = pr.get("m", None)?;
            let b1 = match pr.opt::<f64>("delta1")? {
                Some(d) => {
                    if pr.given.contains_key("p") {
                        return Err(Error::Usage("give either `--delta1` or `--p`, not both".into()));
                    }
                    (d, None)
                }
                None => {
                    let p: f64 = pr.get("p", None).map_err(|_| {
                        Error::Usage("bounds needs `--delta1`, or `--p` to estimate it from the rectangle event".into())
                    })?;
                    let trials: u64 = pr.get("b1_trials", Some("10000"))?;
                    let e = b1_estimate(p, m as usize, trials, seed, exec)?;
                    (1.0 - e.p_hat, Some(e))
                }
            };
            let delta1 = b1.0;
            let y0: f64 = pr.get("y0", Some(&(2.0 * delta1).to_string()))?;
            let c3: f64 = pr.get("c3", Some("1"))?;
            let c4: f64 = pr.get("c4", Some("1"))?;
            let g: f64 = pr.get("g", Some("3"))?;
            let dd: f64 = pr.get("D", Some("6"))?;
            let c2: f64 = pr.get("c2", Some("1"))?;
            let kmax: u32 = pr.get("kmax", Some("10000"))?;
            let params = BoundParams::with_constants(n, m, delta1, y0, c3, c4, g, dd, c2)?;
            let row = bound_row(&params, kmax);
            let mut t = Table::new(&["N", "m", "delta1", "delta_star", "y1", "y2", "bound", "bound_y2", "status"]);
            t.push(vec![
                n.to_string(),
                m.to_string(),
                delta1.to_string(),
                opt_cell(row.delta_star),
                opt_cell(row.y1),
                opt_cell(row.y2),
                opt_cell(row.bound),
                opt_cell(row.bound_y2),
                row.status.clone(),
            ]);
            Ok((json!({ "params": params, "b1": b1.1, "row": row }), t))
        }
        Experiment::Couple => {
            let chain: String = pr.get("chain", Some("path"))?;
            let sheet = match chain.as_str() {
                "path" => false,
                "sheet" => true,
                other => return Err(Error::Usage(format!("unknown chain `{other}` (path or sheet)"))),
            };
            let n: usize = pr.get("N", Some("3"))?;
            let d: usize = pr.get("d", Some(if sheet { "3" } else { "2" }))?;
            let k: u32 = pr.get("k", Some("2"))?;
            let inner: u32 = pr.get("inner", Some(&k.to_string()))?;
            let ps: Vec<f64> = pr.list("p", None)?;
            let trials: u64 = pr.get("trials", Some("2000"))?;
            let budget: u64 = pr.get("budget", Some(&DEFAULT_CELL_BUDGET.to_string()))?;
            let cfg = CouplingConfig {
                n,
                d,
                k,
                inner,
                trials,
                cell_budget: budget,
            };
            let report = coupling_inequality_check(&ps, &cfg, sheet, seed, exec)?;
            let mut t = Table::new(&[
                "p", "lhs", "lhs_ci_low", "inner", "s", "rhs", "rhs_ci_high", "rhs_q", "rhs_q_ci_high", "holds", "holds_q",
            ]);
            for r in &report.rows {
                t.push(vec![
                    r.p.to_string(),
                    r.lhs.p_hat.to_string(),
                    r.lhs.ci_low.to_string(),
                    r.inner_estimate.p_hat.to_string(),
                    r.s.to_string(),
                    r.rhs.p_hat.to_string(),
                    r.rhs.ci_high.to_string(),
                    r.rhs_q.p_hat.to_string(),
                    r.rhs_q.ci_high.to_string(),
                    r.holds.to_string(),
                    r.holds_q.to_string(),
                ]);
            }
            Ok((to_value(&report), t))
        }
        Experiment::Validate => {
            let report = validate(seed, exec)?;
            let mut t = Table::new(&["suite", "cases", "failures"]);
            for s in &report.suites {
                t.push(vec![s.name.clone(), s.cases.to_string(), s.failures.to_string()]);
            }
            Ok((to_value(&report), t))
        }
    }
}

fn critical_config(pr: &mut Params) -> Result<CriticalConfig> {
    let d = CriticalConfig::default();
    Ok(CriticalConfig {
        tau: pr.get("tau", Some(&d.tau.to_string()))?,
        lo: pr.get("lo", Some(&d.lo.to_string()))?,
        hi: pr.get("hi", Some(&d.hi.to_string()))?,
        tol: pr.get("tol", Some(&d.tol.to_string()))?,
        initial_trials: pr.get("trials", Some(&d.initial_trials.to_string()))?,
        max_trials: pr.get("max_trials", Some(&d.max_trials.to_string()))?,
        cell_budget: pr.get("budget", Some(&d.cell_budget.to_string()))?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub suites: Vec<SuiteResult>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.failures == 0)
    }
}

/// Exhaustive and sampled self-checks on small instances.
pub fn validate(seed: u64, exec: &Exec) -> Result<ValidateReport> {
    let mut suites = Vec::new();

    // planar duality on every configuration of side 2 and 3
    let mut cases = 0;
    let mut failures = 0;
    for side in 2..=3usize {
        let shape = BoxShape::new(2, side)?;
        for mask in 0u32..(1 << shape.len()) {
            let states = (0..shape.len()).map(|i| mask >> i & 1 == 1).collect();
            let c = SiteConfig::new(shape, states, Default::default())?;
            cases += 1;
            failures += !duality_check(&c)? as u64;
        }
    }
    suites.push(SuiteResult {
        name: "duality".into(),
        cases,
        failures,
    });

    // enumeration oracle against the closed form for the 2x2 square
    let shape = BoxShape::new(2, 2)?;
    let mut failures = 0;
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for &p in &grid {
        let exact = exact_crossing_prob(&shape, Adjacency::L, Axis::FIRST, p)?;
        failures += ((exact - (2.0 * p * p - p.powi(4))).abs() > 1e-12) as u64;
    }
    suites.push(SuiteResult {
        name: "oracle_closed_form".into(),
        cases: grid.len() as u64,
        failures,
    });

    // level-one Monte Carlo against enumeration, three standard errors
    let mut failures = 0;
    let mut cases = 0;
    for n in [2usize, 3] {
        let shape = BoxShape::new(2, n)?;
        for p in [0.3, 0.5, 0.7] {
            let exact = exact_crossing_prob(&shape, Adjacency::L, Axis::FIRST, p)?;
            let params = FractalParams::new(n, 2, p, 1)?;
            let e = theta_estimate(&params, 1, 20_000, seed, exec)?.estimate;
            let se = (exact * (1.0 - exact) / e.trials as f64).sqrt();
            cases += 1;
            failures += ((e.p_hat - exact).abs() > 3.0 * se) as u64;
        }
    }
    suites.push(SuiteResult {
        name: "oracle_monte_carlo".into(),
        cases,
        failures,
    });

    // critical values against direct indicators, and monotonicity under flips
    let rows = exec.map_trials(0..500, |t| {
        let shape = BoxShape::new(2, 6).expect("valid");
        let key = RngKey::new(seed, t);
        let mut u = vec![0.0; shape.len()];
        key.stream(Purpose::Site, 6).fill_from(0, &mut u);
        let mut bad = 0u64;
        for adj in [Adjacency::L, Adjacency::M] {
            let c = minimax_crossing(&shape, &u, adj, Axis::FIRST).unwrap_or(f64::INFINITY);
            for q in [0.2, 0.4, 0.5, 0.6, 0.8] {
                let open: Vec<bool> = u.iter().map(|&x| x < q).collect();
                let hit = crosses(&shape, &open, adj, Axis::FIRST);
                bad += (hit != (c < q)) as u64;
                let mut more = open.clone();
                more[(t as usize * 7) % shape.len()] = true;
                bad += (hit && !crosses(&shape, &more, adj, Axis::FIRST)) as u64;
                if adj == Adjacency::L {
                    bad += (hit && !crosses(&shape, &open, Adjacency::M, Axis::FIRST)) as u64;
                }
            }
        }
        bad
    });
    suites.push(SuiteResult {
        name: "monotonicity".into(),
        cases: 500,
        failures: rows.iter().filter(|&&b| b > 0).count() as u64,
    });

    // fractal nesting and level monotonicity
    let rows = exec.map_trials(0..200, |t| -> Result<bool> {
        let params = FractalParams::new(3, 2, 0.8, 3)?;
        let r = FractalRealization::sample_keyed(params, RngKey::new(seed, t))?;
        let mut ok = r.check_nesting();
        let mut prev = true;
        for k in 1..=3 {
            let now = crate::fractal::level_crossing(&r, k, Axis::FIRST)?;
            ok &= prev || !now;
            prev = now;
        }
        Ok(ok)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    suites.push(SuiteResult {
        name: "fractal_nesting".into(),
        cases: rows.len() as u64,
        failures: rows.iter().filter(|&&ok| !ok).count() as u64,
    });

    Ok(ValidateReport { suites })
}

/// Where and how to write records.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub format: Format,
}

impl OutputOptions {
    /// Reads `out` and `format` from a spec, falling back to the
    /// environment override and then to `results/`.
    pub fn from_spec(spec: &RunSpec) -> Result<Self> {
        let dir = match spec.params.get("out") {
            Some(d) => PathBuf::from(d),
            None => default_out_dir(),
        };
        let format = match spec.params.get("format") {
            Some(f) => f.parse()?,
            None => Format::default(),
        };
        Ok(Self { dir, format })
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes `<experiment>.csv` (all grid points, one leading `point` column)
/// and `<experiment>.json` (one record, or an array for a sweep).
pub fn write_records(records: &[ResultRecord], opts: &OutputOptions) -> Result<Vec<PathBuf>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    fs::create_dir_all(&opts.dir)?;
    let stem = first.experiment.name();
    let mut written = Vec::new();
    if matches!(opts.format, Format::Csv | Format::Both) {
        let path = opts.dir.join(format!("{stem}.csv"));
        write_csv(&path, records)?;
        written.push(path);
    }
    if matches!(opts.format, Format::Json | Format::Both) {
        let path = opts.dir.join(format!("{stem}.json"));
        let text = if records.len() == 1 && records[0].sweep.is_none() {
            serde_json::to_string_pretty(&records[0])
        } else {
            serde_json::to_string_pretty(records)
        }
        .map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        written.push(path);
    }
    Ok(written)
}

fn write_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let columns = &records[0].table.columns;
    let mut header = vec!["point".to_string(), "sweep_value".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, r) in records.iter().enumerate() {
        let sweep_value = r.sweep.as_ref().map(|s| s.value.clone()).unwrap_or_default();
        for row in &r.table.rows {
            let mut line = vec![i.to_string(), sweep_value.clone()];
            line.extend(row.iter().cloned());
            w.write_record(&line).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parse_and_reject() {
        let s = RunSpec::parse("theta", &args("--N 2 --k 1 --p 0.5")).unwrap();
        assert_eq!(s.params["N"], "2");
        assert!(matches!(RunSpec::parse("theta", &args("--bogus 1")), Err(Error::Usage(_))));
        assert!(RunSpec::parse("theta", &args("--N")).is_err());
        assert!(RunSpec::parse("theta", &args("--N 2 --N 3")).is_err());
        assert!(RunSpec::parse("nope", &[]).is_err());
        assert!(RunSpec::parse("validate", &args("--seed 3")).is_ok());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1,2,5").unwrap(), ["1", "2", "5"]);
        assert_eq!(parse_range("2:16:*2").unwrap(), ["2", "4", "8", "16"]);
        assert_eq!(parse_range("0.1:0.3:0.1").unwrap(), ["0.1", "0.2", "0.3"]);
        assert_eq!(parse_range("4:10:3").unwrap(), ["4", "7", "10"]);
        assert!(parse_range("5:1:1").is_err());
        assert!(parse_range(",").is_err());
        assert!(parse_range("1:2").is_err());
        assert_eq!(parse_range("0.9").unwrap(), ["0.9"]);
    }

    #[test]
    fn one_ranged_key_only() {
        let s = RunSpec::new(Experiment::Theta).with("N", "2,3").with("p", "0.1:0.2:0.1");
        assert!(matches!(s.expand(), Err(Error::Usage(_))));
        let s = RunSpec::new(Experiment::Scaling).with("N", "2,3,4,5");
        assert_eq!(s.ranged_key().unwrap(), None);
    }

    #[test]
    fn missing_key_is_usage_error() {
        let r = run(&RunSpec::new(Experiment::Theta).with("N", 2));
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn echo_reproduces_payload() {
        let spec = RunSpec::new(Experiment::Theta)
            .with("N", 2)
            .with("k", 1)
            .with("p", 0.5)
            .with("trials", 2000)
            .with("threads", 1);
        let a = run(&spec).unwrap();
        assert_eq!(a.spec["seed"], "1");
        let rerun = a.rerun_spec().with("threads", 3);
        let b = run(&rerun).unwrap();
        assert_eq!(a.payload, b.payload);
    }

    #[test]
    fn sweep_is_monotone_in_p() {
        let spec = RunSpec::new(Experiment::Theta)
            .with("N", 3)
            .with("k", 2)
            .with("p", "0.6:0.9:0.1")
            .with("trials", 300);
        let recs = sweep(&spec).unwrap();
        assert_eq!(recs.len(), 4);
        let hits: Vec<u64> = recs
            .iter()
            .map(|r| r.payload["estimate"]["successes"].as_u64().unwrap())
            .collect();
        assert!(hits.windows(2).all(|w| w[0] <= w[1]), "{hits:?}");
    }

    #[test]
    fn bounds_row_at_the_pole() {
        let spec = RunSpec::new(Experiment::Bounds)
            .with("N", 1024)
            .with("m", 32)
            .with("delta1", 0.01);
        let r = run(&spec).unwrap();
        assert_eq!(r.table.rows.len(), 1);
        assert!(r.table.rows[0][8].contains("diverged"));
    }

    #[test]
    fn validate_passes() {
        let r = validate(1, &Exec::new(2)).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = RunSpec::new(Experiment::Phi).with("N", 4).with("p", 0.6).with("trials", 100);
        let rec = run(&spec).unwrap();
        let opts = OutputOptions {
            dir: dir.path().to_path_buf(),
            format: Format::Both,
        };
        let paths = write_records(&[rec.clone()], &opts).unwrap();
        assert_eq!(paths.len(), 2);
        let back: ResultRecord = serde_json::from_str(&fs::read_to_string(&paths[1]).unwrap()).unwrap();
        assert_eq!(back.payload, rec.payload);
        let csv = fs::read_to_string(&paths[0]).unwrap();
        assert!(csv.starts_with("point,sweep_value,N,d,p,s,boundary,trials"));
    }
}
