//! The deterministic bound pipeline behind the scaling lower bound.
//!
//! With `b = g y^(1/4)`:
//!
//! ```text
//! f_{N,m}(y) = c3 / (y (1 - b)) * N^2 * b^(N / 2m)
//! g_{N,m}(y) = (c4 / c3) * f_{N,m}(y) / (N m)
//! h_N(y)     = c5 / y * N^2 * b^(E ln N),   E = D^(4/3) / (2 c2)
//! ```
//!
//! The defect recursion `delta_k = delta_1 + f(delta_{k-1})` is iterated with
//! equality, which is the worst case of the inequality it stands for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{CoupledTrial, MCEstimate};
use crate::exec::Exec;
use crate::lattice::{Adjacency, Axis, BoxShape};
use crate::percolation::minimax_crossing;
use crate::rng::{Purpose, RngKey};

/// Constants of the bound pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub g: f64,
    pub n: u64,
    pub m: u64,
    pub delta1: f64,
    pub y0: f64,
    /// Constant in the definition of `p_N`.
    pub d: f64,
    /// Upper constant of the correlation-length hypothesis.
    pub c2: f64,
}

impl BoundParams {
    /// Defaults: `c3 = c4 = 1`, `g = 3`, `D = 6`, `c2 = 1`, and
    /// `y0 = 2 delta1` with `c5` derived from `y0`. The derivation needs
    /// `g y0^(1/4) < 1`; otherwise `c5` is `NaN` and every `h` evaluation
    /// reports a domain error.
    pub fn new(n: u64, m: u64, delta1: f64) -> Result<Self> {
        Self::with_constants(n, m, delta1, 2.0 * delta1, 1.0, 1.0, 3.0, 6.0, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_constants(
        n: u64,
        m: u64,
        delta1: f64,
        y0: f64,
        c3: f64,
        c4: f64,
        g: f64,
        d: f64,
        c2: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("N", "must be at least 2"));
        }
        if m == 0 || m > n {
            return Err(Error::param("m", format!("need 1 <= m <= N, got {m}")));
        }
        if !(0.0..1.0).contains(&delta1) {
            return Err(Error::param("delta1", "must lie in [0, 1)"));
        }
        if !(y0 > 0.0) {
            return Err(Error::param("y0", "must be positive"));
        }
        for (name, v) in [("c3", c3), ("c4", c4), ("g", g), ("D", d), ("c2", c2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive and finite"));
            }
        }
        let b0 = g * y0.powf(0.25);
        let c5 = if b0 < 1.0 { c3 / (1.0 - b0) } else { f64::NAN };
        Ok(Self {
            c3,
            c4,
            c5,
            g,
            n,
            m,
            delta1,
            y0,
            d,
            c2,
        })
    }

    pub fn with_n(self, n: u64) -> Self {
        Self { n, ..self }
    }

    pub fn with_m(self, m: u64) -> Self {
        Self { m, ..self }
    }

    /// `E = D^(4/3) / (2 c2)`, the coefficient of `ln N` in the exponent of `h`.
    pub fn h_exponent(&self) -> f64 {
        self.d.powf(4.0 / 3.0) / (2.0 * self.c2)
    }

    /// Largest `m` allowed by the correlation-length bound
    /// `m <= c2 / D^(4/3) * N / ln N`.
    pub fn max_m(&self) -> u64 {
        let nf = self.n as f64;
        (self.c2 / self.d.powf(4.0 / 3.0) * nf / nf.ln()).floor() as u64
    }

    /// Pole of `f` and `g`: `g y^(1/4) = 1`.
    pub fn pole(&self) -> f64 {
        self.g.powi(-4)
    }

    fn base(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::Domain(format!("y = {y} is not in (0, 1)")));
        }
        let b = self.g * y.powf(0.25);
        if b >= 1.0 {
            return Err(Error::Domain(format!("g y^(1/4) = {b} >= 1 at y = {y}")));
        }
        Ok(b)
    }
}

pub fn f_eval(params: &BoundParams, y: f64) -> Result<f64> {
    let b = params.base(y)?;
    let n = params.n as f64;
    let expo = n / (2.0 * params.m as f64);
    Ok(params.c3 / (y * (1.0 - b)) * n * n * b.powf(expo))
}

pub fn g_eval(params: &BoundParams, y: f64) -> Result<f64> {
    let b = params.base(y)?;
    let n = params.n as f64;
    let m = params.m as f64;
    Ok(params.c4 / (y * (1.0 - b)) * (n / m) * b.powf(n / (2.0 * m)))
}

/// `h_N(y)`; requires `y <= y0` and a finite `c5`.
pub fn h_eval(params: &BoundParams, y: f64) -> Result<f64> {
    if !params.c5.is_finite() {
        return Err(Error::Domain(format!(
            "c5 is undefined: g y0^(1/4) >= 1 at y0 = {}",
            params.y0
        )));
    }
    if y > params.y0 {
        return Err(Error::Domain(format!("y = {y} exceeds y0 = {}", params.y0)));
    }
    let b = params.base(y)?;
    let n = params.n as f64;
    Ok(params.c5 / y * n * n * b.powf(params.h_exponent() * n.ln()))
}

const ROOT_TOL: f64 = 1e-12;
const SCAN_POINTS: usize = 4000;

/// Smallest root of `y = delta1 + F(y)` in `[lo, hi]`.
///
/// The scan places points at geometrically growing offsets from `lo`, so
/// roots very close to `lo` are resolved, then bisects the first sign change
/// to `1e-12`. Points where `F` is undefined count as `F = +inf`.
pub fn fixed_point(delta1: f64, map: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Option<f64> {
    if !(hi >= lo) {
        return None;
    }
    let gap = |y: f64| match map(y) {
        Ok(v) if v.is_finite() => delta1 + v - y,
        _ => f64::INFINITY,
    };
    let g_lo = gap(lo);
    if g_lo == 0.0 {
        return Some(lo);
    }
    if g_lo < 0.0 {
        return None;
    }
    let span = hi - lo;
    let mut prev = lo;
    for i in 0..=SCAN_POINTS {
        let y = if i == SCAN_POINTS {
            hi
        } else {
            lo + span * 10f64.powf(-14.0 + 14.0 * i as f64 / SCAN_POINTS as f64)
        };
        if y <= prev {
            continue;
        }
        let gy = gap(y);
        if gy <= 0.0 {
            if gy == 0.0 {
                return Some(y);
            }
            let (mut a, mut b) = (prev, y);
            while b - a > ROOT_TOL {
                let mid = 0.5 * (a + b);
                if gap(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = y;
    }
    None
}

/// `y1`: smallest solution of `y = delta1 + f(y)` in `(delta1, y0]`.
pub fn y1(params: &BoundParams) -> Option<f64> {
    let hi = params.y0.min(params.pole() * (1.0 - 1e-15));
    fixed_point(params.delta1, |y| f_eval(params, y), params.delta1, hi)
}

/// `y2`: smallest solution of `y = delta1 + h(y)` in `(delta1, y0]`.
pub fn y2(params: &BoundParams) -> Option<f64> {
    let hi = params.y0.min(params.pole() * (1.0 - 1e-15));
    fixed_point(params.delta1, |y| h_eval(params, y), params.delta1, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub k: u32,
    pub delta_k: f64,
    pub pi_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    Converged,
    /// Hit the pole of `f` or left `(0, 1)`.
    Diverged,
    /// Ran out of steps without meeting the tolerance.
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaIteration {
    pub states: Vec<IterationState>,
    pub status: IterationStatus,
}

impl DeltaIteration {
    /// `delta*` when the sequence converged.
    pub fn limit(&self) -> Option<f64> {
        (self.status == IterationStatus::Converged).then(|| self.states.last().expect("non-empty").delta_k)
    }
}

/// Iterates `delta_k = delta_1 + f(delta_{k-1})` for at most `k_max` steps.
pub fn delta_iteration(params: &BoundParams, k_max: u32) -> DeltaIteration {
    delta_iteration_with(params.delta1, |y| f_eval(params, y), k_max)
}

/// The same recursion with an arbitrary map in place of `f`.
pub fn delta_iteration_with(delta1: f64, map: impl Fn(f64) -> Result<f64>, k_max: u32) -> DeltaIteration {
    let state = |k, d: f64| IterationState {
        k,
        delta_k: d,
        pi_k: 1.0 - d,
    };
    let mut states = vec![state(1, delta1)];
    let mut prev = delta1;
    for k in 2..=k_max.max(1) {
        let next = match map(prev) {
            Ok(v) if (delta1 + v).is_finite() && delta1 + v < 1.0 => delta1 + v,
            _ => {
                return DeltaIteration {
                    states,
                    status: IterationStatus::Diverged,
                }
            }
        };
        states.push(state(k, next));
        if (next - prev).abs() < ROOT_TOL {
            return DeltaIteration {
                states,
                status: IterationStatus::Converged,
            };
        }
        prev = next;
    }
    let status = if k_max <= 1 && map(delta1).map_or(false, |v| v == 0.0) {
        IterationStatus::Converged
    } else {
        IterationStatus::Unfinished
    };
    DeltaIteration { states, status }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// `1 - g_{N,m}(delta)`, clamped to `[0, 1]`.
    pub g_form: f64,
    /// `1 - (c4/c3) h_N(delta) / N`, clamped; `None` outside the domain of `h`.
    pub h_form: Option<f64>,
}

/// Lower bound on the level-`k` crossing probability from the defect `delta_k`.
pub fn crossing_lower_bound(params: &BoundParams, delta_k: f64) -> Result<LowerBound> {
    let g_form = (1.0 - g_eval(params, delta_k)?).clamp(0.0, 1.0);
    let h_form = h_eval(params, delta_k)
        .ok()
        .map(|h| (1.0 - params.c4 / params.c3 * h / params.n as f64).clamp(0.0, 1.0));
    Ok(LowerBound { g_form, h_form })
}

/// One row of the bound table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: u64,
    pub m: u64,
    pub delta1: f64,
    pub delta_star: Option<f64>,
    pub y1: Option<f64>,
    pub y2: Option<f64>,
    pub bound: Option<f64>,
    /// `1 - (c4/c3)(y2 - delta1)/N` when `y2` exists.
    pub bound_y2: Option<f64>,
    pub status: String,
}

pub fn bound_row(params: &BoundParams, k_max: u32) -> BoundRow {
    let it = delta_iteration(params, k_max);
    let delta_star = it.limit();
    let y1 = y1(params);
    let y2 = y2(params);
    let bound = delta_star.and_then(|d| crossing_lower_bound(params, d).ok()).map(|b| b.g_form);
    let bound_y2 = y2.map(|y| 1.0 - params.c4 / params.c3 * (y - params.delta1) / params.n as f64);
    let mut notes = Vec::new();
    match it.status {
        IterationStatus::Converged => notes.push("converged".to_string()),
        IterationStatus::Diverged => notes.push("iteration diverged".to_string()),
        IterationStatus::Unfinished => notes.push("iteration unfinished".to_string()),
    }
    if !params.c5.is_finite() {
        notes.push(format!("h undefined: g y0^(1/4) >= 1 at y0 = {}", params.y0));
    }
    if params.m > params.max_m() {
        notes.push(format!("m exceeds the correlation-length bound {}", params.max_m()));
    }
    BoundRow {
        n: params.n,
        m: params.m,
        delta1: params.delta1,
        delta_star,
        y1,
        y2,
        bound,
        bound_y2,
        status: notes.join("; "),
    }
}

/// The rectangle event: a left-right crossing of a `3m x m` rectangle plus
/// top-bottom crossings of its left and right thirds, on ℒ^2 site
/// percolation.
#[derive(Debug, Clone, Copy)]
pub struct RectangleEvent {
    pub m: usize,
    pub seed: u64,
}

impl RectangleEvent {
    pub fn new(m: usize, seed: u64) -> Result<Self> {
        if m < 3 || m % 3 != 0 {
            return Err(Error::param("m", format!("need m >= 3 divisible by 3, got {m}")));
        }
        BoxShape::new(2, 3 * m)?;
        Ok(Self { m, seed })
    }

    /// Uniforms of the rectangle, `x + 3m y` with `x` the long axis.
    pub fn uniforms(&self, trial: u64) -> Vec<f64> {
        let mut u = vec![0.0; 3 * self.m * self.m];
        RngKey::new(self.seed, trial)
            .stream(Purpose::Rectangle, self.m as u64)
            .fill_from(0, &mut u);
        u
    }

    /// Critical value of the event for the given rectangle uniforms.
    pub fn critical_of(&self, u: &[f64]) -> f64 {
        let m = self.m;
        let w = 3 * m;
        // the rectangle inside a (3m)^2 box, the rest never opens
        let big = BoxShape::new(2, w).expect("validated");
        let mut grid = vec![f64::INFINITY; big.len()];
        grid[..u.len()].copy_from_slice(u);
        let lr = minimax_crossing(&big, &grid, Adjacency::L, Axis(0));

        let square = BoxShape::new(2, m).expect("validated");
        let third = |x0: usize| {
            let sub: Vec<f64> = (0..m * m).map(|i| u[x0 + i % m + w * (i / m)]).collect();
            minimax_crossing(&square, &sub, Adjacency::L, Axis(1))
        };
        [lr, third(0), third(2 * m)]
            .into_iter()
            .map(|t| t.unwrap_or(f64::INFINITY))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl CoupledTrial for RectangleEvent {
    fn critical_value(&self, trial: u64, _cap: f64) -> Result<f64> {
        Ok(self.critical_of(&self.uniforms(trial)))
    }
}

/// Monte Carlo estimate of the rectangle event at density `p`.
pub fn b1_estimate(p: f64, m: usize, trials: u64, seed: u64, exec: &Exec) -> Result<MCEstimate> {
    crate::error::check_probability("p", p)?;
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let ev = RectangleEvent::new(m, seed)?;
    let hits = exec.map_trials(0..trials, |t| ev.critical_of(&ev.uniforms(t)) < p);
    Ok(MCEstimate::from_indicators(&hits))
}
