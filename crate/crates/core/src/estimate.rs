//! Monte Carlo estimators, critical points, correlation length and the
//! scaling fit.
//!
//! Every estimator is built on a [`CoupledTrial`]: a trial index maps to an
//! exact critical value `c`, and the event occurs at density `p` iff `c < p`.
//! One batch of trials therefore gives the whole curve in `p` with the
//! monotone coupling built in, and bisection runs over an empirical CDF that
//! is monotone by construction.

use serde::{Deserialize, Serialize};

use crate::enhance::{Boundary, Model, ModelCrossing};
use crate::error::{check_probability, Error, Result};
use crate::exec::Exec;
use crate::fractal::{FractalParams, FractalRealization, DEFAULT_CELL_BUDGET};
use crate::lattice::{Adjacency, Axis, BoxShape};
use crate::percolation::{crosses, minimax_crossing};
use crate::rng::{Purpose, RngKey};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Success count with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MCEstimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        assert!(trials > 0 && successes <= trials, "need 0 <= successes <= trials, trials > 0");
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            trials,
            successes,
            p_hat: p,
            ci_low: (center - half).clamp(0.0, p),
            ci_high: (center + half).clamp(p, 1.0),
        }
    }

    pub fn from_indicators(hits: &[bool]) -> Self {
        Self::from_counts(hits.iter().filter(|&&h| h).count() as u64, hits.len() as u64)
    }

    /// Estimate of the complementary event.
    pub fn complement(&self) -> Self {
        Self::from_counts(self.trials - self.successes, self.trials)
    }

    /// Binomial standard error at the point estimate.
    pub fn std_error(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.trials as f64).sqrt()
    }

    /// Where `tau` sits relative to the interval.
    pub fn side_of(&self, tau: f64) -> Side {
        if self.ci_high < tau {
            Side::Below
        } else if self.ci_low > tau {
            Side::Above
        } else {
            Side::Inconclusive
        }
    }
}

/// Position of an estimate relative to a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Below,
    Above,
    Inconclusive,
}

/// A trial with an exact critical value.
pub trait CoupledTrial: Sync {
    /// Critical value of trial `trial`: for every `p <= cap` the event occurs
    /// iff the value is `< p`. `+inf` when the event fails even at `cap`.
    fn critical_value(&self, trial: u64, cap: f64) -> Result<f64>;
}

/// Axis-0 crossing of a box in plain Bernoulli site percolation.
#[derive(Debug, Clone, Copy)]
pub struct BoxCrossing {
    pub side: usize,
    pub d: usize,
    pub adj: Adjacency,
    pub seed: u64,
}

impl BoxCrossing {
    pub fn new(side: usize, d: usize, adj: Adjacency, seed: u64) -> Result<Self> {
        BoxShape::new(d, side)?;
        Ok(Self { side, d, adj, seed })
    }

    /// Site uniforms of trial `trial`; a site is open at `p` iff its value is `< p`.
    pub fn uniforms(&self, trial: u64) -> Vec<f64> {
        let shape = BoxShape::new(self.d, self.side).expect("validated");
        let mut u = vec![0.0; shape.len()];
        RngKey::new(self.seed, trial)
            .stream(Purpose::Site, self.side as u64)
            .fill_from(0, &mut u);
        u
    }
}

impl CoupledTrial for BoxCrossing {
    fn critical_value(&self, trial: u64, _cap: f64) -> Result<f64> {
        let shape = BoxShape::new(self.d, self.side)?;
        let u = self.uniforms(trial);
        Ok(minimax_crossing(&shape, &u, self.adj, Axis::FIRST).unwrap_or(f64::INFINITY))
    }
}

/// Level-`k` path crossing (ℒ^d) or sheet (vacant ℳ^d dual) of the fractal.
#[derive(Debug, Clone, Copy)]
pub struct FractalCrossing {
    pub n: usize,
    pub d: usize,
    pub k: u32,
    pub sheet: bool,
    pub seed: u64,
    pub budget: u64,
}

impl FractalCrossing {
    fn realization(&self, trial: u64, cap: f64) -> Result<FractalRealization> {
        let params = FractalParams::new(self.n, self.d, cap, self.k)?.with_budget(self.budget);
        FractalRealization::sample_keyed(params, RngKey::new(self.seed, trial))
    }

    /// Critical values at each of `levels`, from one realization.
    pub fn critical_values_at(&self, trial: u64, cap: f64, levels: &[u32]) -> Result<Vec<f64>> {
        let r = self.realization(trial, cap)?;
        levels
            .iter()
            .map(|&j| {
                let t = if self.sheet {
                    r.sheet_threshold(j, Axis::FIRST)?
                } else {
                    r.crossing_threshold(j, Axis::FIRST)?
                };
                Ok(t.unwrap_or(f64::INFINITY))
            })
            .collect()
    }
}

impl CoupledTrial for FractalCrossing {
    fn critical_value(&self, trial: u64, cap: f64) -> Result<f64> {
        Ok(self.critical_values_at(trial, cap, &[self.k])?[0])
    }
}

/// The probabilities a critical point can be taken of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// Level-`k` path crossing of the fractal.
    Theta { n: usize, d: usize, k: u32 },
    /// Level-`k` sheet of the fractal.
    ThetaTilde { n: usize, d: usize, k: u32 },
    /// Crossing on ℒ^d after diminishment at density `s`.
    Phi { side: usize, d: usize, s: f64 },
    /// Crossing on ℳ^d after enhancement at density `s`.
    Psi { side: usize, d: usize, s: f64 },
}

impl Target {
    pub fn trial(&self, seed: u64, budget: u64) -> Result<Box<dyn CoupledTrial>> {
        Ok(match *self {
            Target::Theta { n, d, k } | Target::ThetaTilde { n, d, k } => {
                FractalParams::new(n, d, 1.0, k)?;
                Box::new(FractalCrossing {
                    n,
                    d,
                    k,
                    sheet: matches!(self, Target::ThetaTilde { .. }),
                    seed,
                    budget,
                })
            }
            Target::Phi { side, d, s } | Target::Psi { side, d, s } => {
                let model = if matches!(self, Target::Phi { .. }) {
                    Model::Diminishment
                } else {
                    Model::Enhancement
                };
                if s == 0.0 {
                    Box::new(BoxCrossing::new(side, d, model.adjacency(), seed)?)
                } else {
                    Box::new(ModelCrossing::new(side, d, s, model, Boundary::Bernoulli, seed)?)
                }
            }
        })
    }
}

/// Critical values of the first trials of a target, kept sorted for
/// empirical-CDF queries.
struct CriticalSample<'a> {
    trial: &'a dyn CoupledTrial,
    cap: f64,
    sorted: Vec<f64>,
}

impl<'a> CriticalSample<'a> {
    fn new(trial: &'a dyn CoupledTrial, cap: f64) -> Self {
        Self {
            trial,
            cap,
            sorted: Vec::new(),
        }
    }

    fn len(&self) -> u64 {
        self.sorted.len() as u64
    }

    fn extend_to(&mut self, n: u64, exec: &Exec) -> Result<()> {
        if n <= self.len() {
            return Ok(());
        }
        let (trial, cap) = (self.trial, self.cap);
        let fresh = exec.map_trials(self.len()..n, |t| trial.critical_value(t, cap));
        for v in fresh {
            self.sorted.push(v?);
        }
        self.sorted.sort_unstable_by(f64::total_cmp);
        Ok(())
    }

    fn at(&self, p: f64) -> MCEstimate {
        let hits = self.sorted.partition_point(|&c| c < p);
        MCEstimate::from_counts(hits as u64, self.len())
    }

    fn quantile(&self, tau: f64) -> f64 {
        let i = ((tau * self.sorted.len() as f64).ceil() as usize).clamp(1, self.sorted.len());
        self.sorted[i - 1]
    }
}

/// Crossing probability of `target` at each density in `ps`, from one batch
/// of coupled trials.
pub fn crossing_curve(target: Target, ps: &[f64], trials: u64, seed: u64, exec: &Exec) -> Result<Vec<MCEstimate>> {
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    for &p in ps {
        check_probability("p", p)?;
    }
    let cap = ps.iter().copied().fold(0.0, f64::max);
    let trial = target.trial(seed, DEFAULT_CELL_BUDGET)?;
    let mut sample = CriticalSample::new(trial.as_ref(), cap);
    sample.extend_to(trials, exec)?;
    Ok(ps.iter().map(|&p| sample.at(p)).collect())
}

/// An estimate at a chosen level plus the whole per-level sequence from the
/// same realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSeries {
    pub p: f64,
    pub k: u32,
    pub estimate: MCEstimate,
    /// Entry `j - 1` is the estimate at level `j`, for `j` in `1..=k_max`.
    pub levels: Vec<MCEstimate>,
}

/// Level-`k` path crossing probability of the fractal.
pub fn theta_estimate(params: &FractalParams, k: u32, trials: u64, seed: u64, exec: &Exec) -> Result<LevelSeries> {
    level_series(params, k, trials, seed, exec, false)
}

/// Level-`k` sheet probability of the fractal.
pub fn theta_tilde_estimate(params: &FractalParams, k: u32, trials: u64, seed: u64, exec: &Exec) -> Result<LevelSeries> {
    level_series(params, k, trials, seed, exec, true)
}

fn level_series(
    params: &FractalParams,
    k: u32,
    trials: u64,
    seed: u64,
    exec: &Exec,
    sheet: bool,
) -> Result<LevelSeries> {
    params.validate()?;
    if k == 0 || k > params.k_max {
        return Err(Error::param("k", format!("level {k} outside 1..={}", params.k_max)));
    }
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let params = *params;
    let rows = exec.map_trials(0..trials, |t| -> Result<Vec<bool>> {
        let r = FractalRealization::sample_keyed(params, RngKey::new(seed, t))?;
        (1..=params.k_max)
            .map(|j| {
                let shape = r.level_shape(j)?;
                let mask = r.retained_mask(j)?;
                Ok(if sheet {
                    let closed: Vec<bool> = mask.iter().map(|&m| !m).collect();
                    !crosses(&shape, &closed, Adjacency::M, Axis::FIRST)
                } else {
                    crosses(&shape, &mask, Adjacency::L, Axis::FIRST)
                })
            })
            .collect()
    });
    let mut counts = vec![0u64; params.k_max as usize];
    for row in rows {
        for (c, hit) in counts.iter_mut().zip(row?) {
            *c += hit as u64;
        }
    }
    let levels: Vec<MCEstimate> = counts.iter().map(|&c| MCEstimate::from_counts(c, trials)).collect();
    Ok(LevelSeries {
        p: params.p,
        k,
        estimate: levels[k as usize - 1],
        levels,
    })
}

/// Settings of the stochastic bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConfig {
    pub tau: f64,
    /// Initial bracket; `hi` also caps the sampled density.
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub initial_trials: u64,
    /// Per-step trial budget.
    pub max_trials: u64,
    /// Cell budget for fractal realizations.
    pub cell_budget: u64,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            lo: 0.0,
            hi: 1.0,
            tol: 1e-3,
            initial_trials: 1000,
            max_trials: 10_000,
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

impl CriticalConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::param("tau", "must lie in (0, 1)"));
        }
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::param("bracket", format!("need 0 <= lo < hi <= 1, got [{}, {}]", self.lo, self.hi)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.initial_trials == 0 || self.max_trials < self.initial_trials {
            return Err(Error::param("trials", "need 1 <= initial_trials <= max_trials"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub p: f64,
    pub estimate: MCEstimate,
    pub side: Side,
    /// Bracket after this step.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub target: Target,
    pub tau: f64,
    pub p_hat: f64,
    pub bracket: (f64, f64),
    /// Trials behind the final empirical CDF.
    pub trials_per_step: u64,
    pub steps: Vec<BisectionStep>,
    /// Bracket width reached the tolerance.
    pub resolved: bool,
    /// Some midpoint stayed inside the interval at the full trial budget.
    pub budget_exhausted: bool,
    /// Both bracket ends are still separated from `tau` at the final trial count.
    pub endpoints_verified: bool,
}

impl CriticalEstimate {
    pub fn half_width(&self) -> f64 {
        (self.bracket.1 - self.bracket.0) / 2.0
    }

    /// Whether this bracket lies entirely above `other`'s.
    pub fn above(&self, other: &CriticalEstimate) -> bool {
        self.bracket.0 > other.bracket.1
    }
}

/// Root of the crossing-probability curve of `target` at level `tau`.
///
/// Bisection on `p`: at each midpoint the trial count doubles until the
/// Wilson interval excludes `tau` or the per-step budget is spent. If a
/// midpoint cannot be classified, the bracket is tightened from both sides to
/// the region where the interval still contains `tau`, and the estimate is
/// flagged as budget-limited.
pub fn critical_point(target: Target, config: &CriticalConfig, seed: u64, exec: &Exec) -> Result<CriticalEstimate> {
    config.validate()?;
    let trial = target.trial(seed, config.cell_budget)?;
    let mut sample = CriticalSample::new(trial.as_ref(), config.hi);
    sample.extend_to(config.initial_trials, exec)?;
    let tau = config.tau;

    let classify = |p: f64, sample: &mut CriticalSample| -> Result<(Side, MCEstimate)> {
        loop {
            let e = sample.at(p);
            let side = e.side_of(tau);
            if side != Side::Inconclusive || sample.len() >= config.max_trials {
                return Ok((side, e));
            }
            sample.extend_to((sample.len() * 2).min(config.max_trials), exec)?;
        }
    };

    let (mut lo, mut hi) = (config.lo, config.hi);
    let bracket_err = || Error::Bracket { lo: config.lo, hi: config.hi, tau };
    if classify(lo, &mut sample)?.0 != Side::Below || classify(hi, &mut sample)?.0 != Side::Above {
        return Err(bracket_err());
    }

    let mut steps = Vec::new();
    let mut stuck = None;
    while hi - lo > config.tol {
        let mid = 0.5 * (lo + hi);
        let (side, estimate) = classify(mid, &mut sample)?;
        match side {
            Side::Below => lo = mid,
            Side::Above => hi = mid,
            Side::Inconclusive => stuck = Some(mid),
        }
        steps.push(BisectionStep { p: mid, estimate, side, lo, hi });
        if stuck.is_some() {
            break;
        }
    }

    if let Some(m) = stuck {
        // lower edge of the inconclusive region in [lo, m]
        let mut b = m;
        while b - lo > config.tol {
            let x = 0.5 * (lo + b);
            let (side, estimate) = classify(x, &mut sample)?;
            if side == Side::Below {
                lo = x;
            } else {
                b = x;
            }
            steps.push(BisectionStep { p: x, estimate, side, lo, hi });
        }
        // upper edge in [m, hi]
        let mut a = m;
        while hi - a > config.tol {
            let x = 0.5 * (a + hi);
            let (side, estimate) = classify(x, &mut sample)?;
            if side == Side::Above {
                hi = x;
            } else {
                a = x;
            }
            steps.push(BisectionStep { p: x, estimate, side, lo, hi });
        }
    }

    let q = sample.quantile(tau);
    let p_hat = if q > lo && q < hi { q } else { 0.5 * (lo + hi) };
    let endpoints_verified = sample.at(lo).side_of(tau) == Side::Below && sample.at(hi).side_of(tau) == Side::Above;
    Ok(CriticalEstimate {
        target,
        tau,
        p_hat,
        bracket: (lo, hi),
        trials_per_step: sample.len(),
        steps,
        resolved: hi - lo <= config.tol,
        budget_exhausted: stuck.is_some(),
        endpoints_verified,
    })
}

/// Critical point of plain site percolation on ℒ^2, estimated on one large box.
pub fn lattice_critical_point(side: usize, config: &CriticalConfig, seed: u64, exec: &Exec) -> Result<CriticalEstimate> {
    critical_point(Target::Phi { side, d: 2, s: 0.0 }, config, seed, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationLength {
    pub p: f64,
    pub delta: f64,
    /// Smallest passing side found, `None` when the search hit `max_side`.
    pub n: Option<usize>,
    pub at_n: Option<MCEstimate>,
    /// Estimate at `n - 1` (absent when `n == 1`).
    pub below_n: Option<MCEstimate>,
    /// `at_n` excludes `1 - delta` from below and `below_n` from above.
    pub separated: bool,
    pub unbounded: bool,
}

/// Smallest box side whose ℒ^2 crossing probability at `p` reaches `1 - delta`.
///
/// Doubling search on the side followed by bisection, every side using the
/// same trial indices so results are coupled across `p`.
pub fn correlation_length(
    p: f64,
    delta: f64,
    max_side: usize,
    trials: u64,
    seed: u64,
    exec: &Exec,
) -> Result<CorrelationLength> {
    check_probability("p", p)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::param("delta", "must lie in (0, 1/2)"));
    }
    if trials == 0 || max_side == 0 {
        return Err(Error::param("trials", "need trials >= 1 and max_side >= 1"));
    }
    let goal = 1.0 - delta;
    let est = |side: usize| -> Result<MCEstimate> {
        Ok(crossing_curve(Target::Phi { side, d: 2, s: 0.0 }, &[p], trials, seed, exec)?[0])
    };

    let mut fail = 0usize;
    let mut side = 1usize;
    let mut hit = None;
    while side <= max_side {
        let e = est(side)?;
        if e.p_hat >= goal {
            hit = Some((side, e));
            break;
        }
        fail = side;
        side *= 2;
    }
    let Some((mut n, mut at_n)) = hit else {
        return Ok(CorrelationLength {
            p,
            delta,
            n: None,
            at_n: None,
            below_n: None,
            separated: false,
            unbounded: true,
        });
    };
    while n - fail > 1 {
        let mid = (n + fail) / 2;
        let e = est(mid)?;
        if e.p_hat >= goal {
            n = mid;
            at_n = e;
        } else {
            fail = mid;
        }
    }
    let below_n = if n > 1 { Some(est(n - 1)?) } else { None };
    let separated = at_n.ci_low > goal || (at_n.p_hat == 1.0 && at_n.ci_low >= goal);
    let separated = separated && below_n.map_or(true, |b| b.ci_high < goal);
    Ok(CorrelationLength {
        p,
        delta,
        n: Some(n),
        at_n: Some(at_n),
        below_n,
        separated,
        unbounded: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub estimate: CriticalEstimate,
    /// `p_c(N) - p_c(lattice)` from the point estimates.
    pub diff: f64,
    pub diff_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub lattice: CriticalEstimate,
    pub points: Vec<ScalingPoint>,
    /// Slope of `ln(diff)` against `ln(1/N)`.
    pub nu_hat_inv: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub low_confidence: bool,
}

/// Weighted least squares of `ln(diff)` on `ln(1/N)`.
///
/// Rows are `(N, diff, half_width)`; each weight is the inverse variance of
/// `ln(diff)` by the delta method. Returns `(slope, se, intercept, residuals)`.
pub fn fit_scaling(rows: &[(usize, f64, f64)]) -> Result<(f64, f64, f64, Vec<f64>)> {
    if rows.len() < 2 {
        return Err(Error::Domain("a fit needs at least two points".into()));
    }
    if let Some(r) = rows.iter().find(|r| !(r.1 > 0.0)) {
        return Err(Error::Domain(format!("difference at N = {} is not positive", r.0)));
    }
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|&(n, diff, hw)| {
            let sigma = (hw / diff).max(1e-9);
            (-(n as f64).ln(), diff.ln(), 1.0 / (sigma * sigma))
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all N are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residuals: Vec<f64> = pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    let se = if pts.len() > 2 {
        let chi2: f64 = pts.iter().zip(&residuals).map(|(p, r)| p.2 * r * r).sum();
        (chi2 / (pts.len() - 2) as f64 / sxx).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };
    Ok((slope, se, intercept, residuals))
}

/// Level-`k` critical points for each `N`, differenced against a lattice
/// estimate and fitted on a log-log scale.
pub fn scaling_experiment(
    ns: &[usize],
    k: u32,
    lattice: CriticalEstimate,
    config: &CriticalConfig,
    seed: u64,
    exec: &Exec,
) -> Result<ScalingFit> {
    if ns.len() < 4 {
        return Err(Error::param("N", "the scaling fit needs at least four values of N"));
    }
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = CriticalConfig {
            lo: lattice.bracket.0.min(config.lo.max(0.0)),
            ..*config
        };
        let estimate = critical_point(Target::Theta { n, d: 2, k }, &cfg, seed, exec)?;
        let diff = estimate.p_hat - lattice.p_hat;
        let diff_half_width = estimate.half_width().hypot(lattice.half_width());
        points.push(ScalingPoint {
            n,
            estimate,
            diff,
            diff_half_width,
        });
    }
    let rows: Vec<(usize, f64, f64)> = points.iter().map(|p| (p.n, p.diff, p.diff_half_width)).collect();
    let (nu_hat_inv, slope_se, intercept, residuals) = fit_scaling(&rows)?;
    let low_confidence = points.iter().any(|p| !p.estimate.above(&lattice)) || slope_se > 0.25;
    Ok(ScalingFit {
        lattice,
        points,
        nu_hat_inv,
        slope_se,
        intercept,
        residuals,
        low_confidence,
    })
}

/// Settings of the coupling-inequality experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub n: usize,
    pub d: usize,
    /// The comparison box has side `N^k`.
    pub k: u32,
    /// Levels simulated inside each level-`k` cell; the left side is the
    /// level `k + inner` proxy and the activation density is read off level
    /// `inner`.
    pub inner: u32,
    pub trials: u64,
    pub cell_budget: u64,
}

impl CouplingConfig {
    pub fn new(n: usize, d: usize, k: u32, trials: u64) -> Self {
        Self {
            n,
            d,
            k,
            inner: k,
            trials,
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub p: f64,
    /// Fractal probability at level `k + inner`.
    pub lhs: MCEstimate,
    /// Fractal probability at level `inner`.
    pub inner_estimate: MCEstimate,
    /// Activation density plugged into the model.
    pub s: f64,
    /// Model bound under the unconditioned measure.
    pub rhs: MCEstimate,
    /// Model bound under the boundary-conditioned measure.
    pub rhs_q: MCEstimate,
    /// `lhs` does not exceed `rhs` beyond the combined intervals.
    pub holds: bool,
    pub holds_q: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub sheet: bool,
    pub config: CouplingConfig,
    pub rows: Vec<CouplingRow>,
}

impl CouplingReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds && r.holds_q)
    }
}

/// Compares the fractal crossing probability with the diminishment bound
/// `phi_{N^k}(p, 1 - theta)`, or for `sheet` the sheet probability with
/// `1 - psi_{N^k}(1 - p, 1 - theta~)`.
pub fn coupling_inequality_check(
    ps: &[f64],
    config: &CouplingConfig,
    sheet: bool,
    seed: u64,
    exec: &Exec,
) -> Result<CouplingReport> {
    if ps.is_empty() {
        return Err(Error::param("p", "need at least one density"));
    }
    for &p in ps {
        check_probability("p", p)?;
    }
    if config.trials == 0 || config.k == 0 || config.inner == 0 {
        return Err(Error::param("k", "need k >= 1, inner >= 1 and trials >= 1"));
    }
    let side = (config.n as u64)
        .checked_pow(config.k)
        .and_then(|s| usize::try_from(s).ok())
        .ok_or_else(|| Error::param("k", "N^k overflows"))?;
    let total = config.k + config.inner;
    let fractal = FractalCrossing {
        n: config.n,
        d: config.d,
        k: total,
        sheet,
        seed,
        budget: config.cell_budget,
    };
    let cap = ps.iter().copied().fold(0.0, f64::max);
    let levels = [config.inner, total];
    let crit = exec.map_trials(0..config.trials, |t| fractal.critical_values_at(t, cap, &levels));
    let crit = crit.into_iter().collect::<Result<Vec<_>>>()?;
    let count = |j: usize, p: f64| {
        let hits = crit.iter().filter(|c| c[j] < p).count() as u64;
        MCEstimate::from_counts(hits, config.trials)
    };

    let (model, q_boundary) = if sheet {
        (Model::Enhancement, Boundary::AllOpen)
    } else {
        (Model::Diminishment, Boundary::AllClosed)
    };
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let lhs = count(1, p);
        let inner_estimate = count(0, p);
        let s = 1.0 - inner_estimate.p_hat;
        let density = if sheet { 1.0 - p } else { p };
        let bound = |boundary| -> Result<MCEstimate> {
            let m = ModelCrossing::new(side, config.d, s, model, boundary, seed)?;
            let hits = exec.map_trials(0..config.trials, |t| m.indicator(t, density));
            let e = MCEstimate::from_indicators(&hits);
            Ok(if sheet { e.complement() } else { e })
        };
        let rhs = bound(Boundary::Bernoulli)?;
        let rhs_q = bound(q_boundary)?;
        rows.push(CouplingRow {
            p,
            lhs,
            inner_estimate,
            s,
            rhs,
            rhs_q,
            holds: lhs.ci_low <= rhs.ci_high,
            holds_q: lhs.ci_low <= rhs_q.ci_high,
        });
    }
    Ok(CouplingReport {
        sheet,
        config: *config,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::exact_crossing_prob;

    fn exec() -> Exec {
        Exec::new(2)
    }

    #[test]
    fn wilson_interval_known_value() {
        // 50 of 100 at z = 1.96: center 0.5, half-width 0.0962 (from the closed form)
        let e = MCEstimate::from_counts(50, 100);
        let n = 100.0;
        let z2 = Z95 * Z95;
        let half = Z95 * (0.25 / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
        assert!((e.ci_high - 0.5 - half).abs() < 1e-12);
        assert!((0.5 - e.ci_low - half).abs() < 1e-12);
        let zero = MCEstimate::from_counts(0, 10);
        assert_eq!(zero.ci_low, 0.0);
        assert!(zero.ci_high > 0.0);
        let all = MCEstimate::from_counts(10, 10);
        assert_eq!(all.ci_high, 1.0);
        assert_eq!(all.complement().successes, 0);
    }

    #[test]
    fn box_critical_values_reproduce_exact_curve() {
        let shape = BoxShape::new(2, 2).unwrap();
        let ps = [0.3, 0.5, 0.7];
        let est = crossing_curve(Target::Phi { side: 2, d: 2, s: 0.0 }, &ps, 40_000, 3, &exec()).unwrap();
        for (e, &p) in est.iter().zip(&ps) {
            let exact = exact_crossing_prob(&shape, Adjacency::L, Axis::FIRST, p).unwrap();
            assert!((e.p_hat - exact).abs() < 4.0 * e.std_error().max(1e-3), "p={p}");
        }
    }

    #[test]
    fn theta_level_one_matches_enumeration() {
        let shape = BoxShape::new(2, 2).unwrap();
        let exact = exact_crossing_prob(&shape, Adjacency::L, Axis::FIRST, 0.5).unwrap();
        let params = FractalParams::new(2, 2, 0.5, 2).unwrap();
        let s = theta_estimate(&params, 1, 20_000, 9, &exec()).unwrap();
        assert!((s.estimate.p_hat - exact).abs() < 3.5 * s.estimate.std_error());
        assert!(s.levels[1].successes <= s.levels[0].successes);
    }

    #[test]
    fn theta_curve_agrees_with_level_series() {
        let params = FractalParams::new(3, 2, 0.8, 2).unwrap();
        let s = theta_estimate(&params, 2, 300, 4, &exec()).unwrap();
        let c = crossing_curve(Target::Theta { n: 3, d: 2, k: 2 }, &[0.8], 300, 4, &exec()).unwrap();
        assert_eq!(s.estimate.successes, c[0].successes);
        let t = theta_tilde_estimate(&params.with_p(0.9), 2, 200, 4, &exec()).unwrap();
        let c = crossing_curve(Target::ThetaTilde { n: 3, d: 2, k: 2 }, &[0.9], 200, 4, &exec()).unwrap();
        assert_eq!(t.estimate.successes, c[0].successes);
    }

    #[test]
    fn critical_point_finds_the_quartic_root() {
        // root of 2p^2 - p^4 = 1/2 by Newton, independent of the estimator
        let mut r = 0.5f64;
        for _ in 0..50 {
            r -= (2.0 * r * r - r.powi(4) - 0.5) / (4.0 * r - 4.0 * r.powi(3));
        }
        let cfg = CriticalConfig {
            max_trials: 40_000,
            ..CriticalConfig::default()
        };
        let est = critical_point(Target::Theta { n: 2, d: 2, k: 1 }, &cfg, 1, &exec()).unwrap();
        assert!(est.bracket.0 < r && r < est.bracket.1, "{:?} vs {r}", est.bracket);
        assert!(est.bracket.0 < est.p_hat && est.p_hat < est.bracket.1);
        assert!(est.endpoints_verified);
        let widths: Vec<f64> = est.steps.iter().map(|s| s.hi - s.lo).collect();
        assert!(widths.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn critical_point_is_deterministic_across_threads() {
        let cfg = CriticalConfig {
            initial_trials: 200,
            max_trials: 800,
            tol: 1e-2,
            ..CriticalConfig::default()
        };
        let t = Target::Phi { side: 12, d: 2, s: 0.0 };
        let a = critical_point(t, &cfg, 5, &Exec::new(1)).unwrap();
        let b = critical_point(t, &cfg, 5, &Exec::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_bracket_is_refused() {
        let cfg = CriticalConfig {
            lo: 0.9,
            ..CriticalConfig::default()
        };
        let r = critical_point(Target::Phi { side: 4, d: 2, s: 0.0 }, &cfg, 1, &exec());
        assert!(matches!(r, Err(Error::Bracket { .. })));
    }

    #[test]
    fn correlation_length_basics() {
        let e = exec();
        let one = correlation_length(1.0, 0.1, 64, 50, 1, &e).unwrap();
        assert_eq!(one.n, Some(1));
        let a = correlation_length(0.75, 0.4, 64, 300, 2, &e).unwrap();
        let b = correlation_length(0.75, 0.1, 64, 300, 2, &e).unwrap();
        assert!(b.n.unwrap() >= a.n.unwrap());
        let c = correlation_length(0.85, 0.1, 64, 300, 2, &e).unwrap();
        assert!(c.n.unwrap() <= b.n.unwrap());
        let far = correlation_length(0.3, 0.1, 8, 100, 2, &e).unwrap();
        assert!(far.unbounded && far.n.is_none());
    }

    #[test]
    fn fit_recovers_a_power_law() {
        let rows: Vec<(usize, f64, f64)> = [2usize, 4, 8, 16, 32]
            .iter()
            .map(|&n| (n, 0.3 * (n as f64).powf(-0.75), 0.001))
            .collect();
        let (slope, se, intercept, res) = fit_scaling(&rows).unwrap();
        assert!((slope - 0.75).abs() < 1e-12);
        assert!((intercept - 0.3f64.ln()).abs() < 1e-12);
        assert!(se < 1e-9);
        assert!(res.iter().all(|r| r.abs() < 1e-12));
        assert!(fit_scaling(&[(2, -0.1, 0.01), (4, 0.1, 0.01)]).is_err());
    }

    #[test]
    fn coupling_chain_extremes() {
        let cfg = CouplingConfig::new(2, 2, 1, 200);
        let r = coupling_inequality_check(&[0.0, 1.0], &cfg, false, 1, &exec()).unwrap();
        assert_eq!(r.rows[0].lhs.p_hat, 0.0);
        assert_eq!(r.rows[1].lhs.p_hat, 1.0);
        assert_eq!(r.rows[1].s, 0.0);
        assert_eq!(r.rows[1].rhs.p_hat, 1.0);
        assert!(r.all_hold());
    }
}
