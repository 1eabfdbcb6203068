//! Enhancement percolation on `M^d` and diminishment percolation on `L^d`.
//!
//! Both start from Bernoulli site percolation and then apply a local rule
//! simultaneously at every site, each site activated independently with
//! probability `s`. The rule reads only the pre-activation configuration.
//!
//! * Enhancement: if `x - e_0` and `x + e_0` are both open, an activated `x`
//!   becomes open.
//! * Diminishment: if every `L^d` neighbor of `x` other than `x +- e_0` is
//!   closed, an activated `x` becomes closed.
//!
//! Neighbors outside the box read the configuration's [`Outside`] state.
//! The Monte Carlo estimators support three boundary conditions: i.i.d.
//! outside sites (the unconditioned measure on `Z^d`, realized with a
//! one-site halo), everything outside open, and everything outside closed.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::estimate::{CoupledTrial, MCEstimate};
use crate::exec::Exec;
use crate::lattice::{offsets, Adjacency, Axis, BoxShape};
use crate::percolation::{crosses, Outside, SiteConfig};
use crate::rng::{Purpose, RngKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    Enhancement,
    Diminishment,
}

impl Model {
    /// Lattice the model's crossings are measured on.
    pub fn adjacency(self) -> Adjacency {
        match self {
            Model::Enhancement => Adjacency::M,
            Model::Diminishment => Adjacency::L,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Boundary {
    /// Outside sites are i.i.d. with the same density as the box.
    #[default]
    Bernoulli,
    AllOpen,
    AllClosed,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" | "default" => Ok(Boundary::Bernoulli),
            "open" | "all-outside-open" => Ok(Boundary::AllOpen),
            "closed" | "all-outside-closed" => Ok(Boundary::AllClosed),
            other => Err(Error::param("boundary", format!("unknown boundary `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    pub p: f64,
    pub s: f64,
    pub model: Model,
    pub boundary: Boundary,
}

impl EnhanceParams {
    pub fn new(p: f64, s: f64, model: Model, boundary: Boundary) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("s", s)?;
        Ok(Self { p, s, model, boundary })
    }
}

/// Offsets the rule of `model` inspects.
fn rule_offsets(dim: usize, model: Model) -> Vec<Vec<i64>> {
    let is_axis0 = |o: &Vec<i64>| o[0] != 0 && o[1..].iter().all(|&c| c == 0);
    match model {
        Model::Enhancement => offsets(dim, Adjacency::L).into_iter().filter(is_axis0).collect(),
        Model::Diminishment => offsets(dim, Adjacency::L)
            .into_iter()
            .filter(|o| !is_axis0(o))
            .collect(),
    }
}

/// Whether the rule of `model` applies at flat index `i` of `config`.
fn qualifies(config: &SiteConfig, model: Model, rule: &[Vec<i64>], i: usize, buf: &mut Vec<i64>) -> bool {
    let coords = config.shape().coords(i);
    let mut read = |off: &Vec<i64>| {
        buf.clear();
        buf.extend(coords.iter().zip(off).map(|(&c, &o)| c as i64 + o));
        config.get_or_outside(buf)
    };
    match model {
        Model::Enhancement => rule.iter().all(|o| read(o)),
        Model::Diminishment => rule.iter().all(|o| !read(o)),
    }
}

/// Applies the rule of `model` simultaneously, activating site `i` iff
/// `active(i)`.
pub fn apply_rule(config: &SiteConfig, model: Model, active: impl Fn(usize) -> bool) -> SiteConfig {
    let rule = rule_offsets(config.shape().dim(), model);
    let mut out = config.clone();
    let mut buf = Vec::with_capacity(config.shape().dim());
    for i in 0..config.shape().len() {
        if active(i) && qualifies(config, model, &rule, i, &mut buf) {
            out.states_mut()[i] = model == Model::Enhancement;
        }
    }
    out
}

/// Enhancement with activation density `s`; activation uniforms come from
/// `key` and the site's flat index.
pub fn apply_enhancement(config: &SiteConfig, s: f64, key: RngKey) -> Result<SiteConfig> {
    check_probability("s", s)?;
    let act = activation_table(config.shape(), s, key);
    Ok(apply_rule(config, Model::Enhancement, |i| act[i]))
}

/// Diminishment with activation density `s`.
pub fn apply_diminishment(config: &SiteConfig, s: f64, key: RngKey) -> Result<SiteConfig> {
    check_probability("s", s)?;
    let act = activation_table(config.shape(), s, key);
    Ok(apply_rule(config, Model::Diminishment, |i| act[i]))
}

fn activation_table(shape: &BoxShape, s: f64, key: RngKey) -> Vec<bool> {
    let mut u = vec![0.0; shape.len()];
    key.stream(Purpose::Activation, shape.side() as u64).fill_from(0, &mut u);
    u.into_iter().map(|v| v < s).collect()
}

/// A configuration and a site at which activating the rule alone flips the
/// axis-0 crossing indicator.
#[derive(Debug, Clone)]
pub struct EssentialityWitness {
    pub config: SiteConfig,
    pub site: Vec<usize>,
    pub crossed_before: bool,
    pub crossed_after: bool,
}

/// Builds a 5x5 witness: for diminishment a single open row whose middle
/// site gets closed; for enhancement the same row with a gap that gets
/// filled.
pub fn essentiality_witness(model: Model) -> EssentialityWitness {
    let shape = BoxShape::new(2, 5).expect("valid shape");
    let row: Vec<Vec<usize>> = (0..5).map(|x| vec![x, 2]).collect();
    let mut config = SiteConfig::from_open_cells(shape, &row).expect("in box");
    let site = vec![2, 2];
    if model == Model::Enhancement {
        config.set(&site, false).expect("in box");
    }
    let target = shape.index(&site).expect("in box");
    let adj = model.adjacency();
    let crossed_before = crosses(&shape, config.states(), adj, Axis::FIRST);
    let after = apply_rule(&config, model, |i| i == target);
    let crossed_after = crosses(&shape, after.states(), adj, Axis::FIRST);
    EssentialityWitness {
        config,
        site,
        crossed_before,
        crossed_after,
    }
}

/// One coupled trial of the enhanced/diminished crossing event on a box.
///
/// Site uniforms and activation uniforms live on the box padded by one
/// layer, so the three boundary conditions share the interior randomness.
#[derive(Debug, Clone, Copy)]
pub struct ModelCrossing {
    pub side: usize,
    pub dim: usize,
    pub s: f64,
    pub model: Model,
    pub boundary: Boundary,
    pub seed: u64,
}

struct TrialDraw {
    padded: BoxShape,
    sites: Vec<f64>,
    active: Vec<bool>,
}

impl ModelCrossing {
    pub fn new(side: usize, dim: usize, s: f64, model: Model, boundary: Boundary, seed: u64) -> Result<Self> {
        check_probability("s", s)?;
        BoxShape::new(dim, side)?;
        BoxShape::new(dim, side + 2)?;
        Ok(Self {
            side,
            dim,
            s,
            model,
            boundary,
            seed,
        })
    }

    pub fn shape(&self) -> BoxShape {
        BoxShape::new(self.dim, self.side).expect("validated")
    }

    fn draw(&self, trial: u64) -> TrialDraw {
        let padded = BoxShape::new(self.dim, self.side + 2).expect("validated");
        let key = RngKey::new(self.seed, trial);
        let mut sites = vec![0.0; padded.len()];
        key.stream(Purpose::Site, self.side as u64).fill_from(0, &mut sites);
        let mut act = vec![0.0; padded.len()];
        key.stream(Purpose::Activation, self.side as u64).fill_from(0, &mut act);
        let active = act.into_iter().map(|u| u < self.s).collect();
        TrialDraw { padded, sites, active }
    }

    fn inner_of(&self, padded: &BoxShape) -> Vec<usize> {
        let inner = self.shape();
        (0..inner.len())
            .map(|i| {
                let x: Vec<usize> = inner.coords(i).into_iter().map(|c| c + 1).collect();
                padded.index_unchecked(&x)
            })
            .collect()
    }

    /// The post-rule configuration on the box at density `p`.
    pub fn configuration(&self, trial: u64, p: f64) -> SiteConfig {
        let draw = self.draw(trial);
        self.configure(&draw, &self.inner_of(&draw.padded), p)
    }

    fn configure(&self, draw: &TrialDraw, inner: &[usize], p: f64) -> SiteConfig {
        let shape = self.shape();
        match self.boundary {
            Boundary::Bernoulli => {
                let padded = SiteConfig::new(
                    draw.padded,
                    draw.sites.iter().map(|&u| u < p).collect(),
                    Outside::Closed,
                )
                .expect("sized");
                let ruled = apply_rule(&padded, self.model, |i| draw.active[i]);
                let states = inner.iter().map(|&j| ruled.states()[j]).collect();
                SiteConfig::new(shape, states, Outside::Closed).expect("sized")
            }
            Boundary::AllOpen | Boundary::AllClosed => {
                let outside = if self.boundary == Boundary::AllOpen {
                    Outside::Open
                } else {
                    Outside::Closed
                };
                let states = inner.iter().map(|&j| draw.sites[j] < p).collect();
                let config = SiteConfig::new(shape, states, outside).expect("sized");
                let ruled = apply_rule(&config, self.model, |i| draw.active[inner[i]]);
                ruled.with_outside(outside)
            }
        }
    }

    fn crossing_in(&self, draw: &TrialDraw, inner: &[usize], p: f64) -> bool {
        let c = self.configure(draw, inner, p);
        crosses(c.shape(), c.states(), self.model.adjacency(), Axis::FIRST)
    }

    /// Crossing indicator of trial `trial` at density `p`.
    pub fn indicator(&self, trial: u64, p: f64) -> bool {
        let draw = self.draw(trial);
        self.crossing_in(&draw, &self.inner_of(&draw.padded), p)
    }
}

impl CoupledTrial for ModelCrossing {
    /// The configuration only changes when `p` passes one of the site
    /// uniforms, and the crossing is monotone in `p`, so a binary search over
    /// the sorted uniforms finds the exact critical value.
    fn critical_value(&self, trial: u64, _cap: f64) -> Result<f64> {
        let draw = self.draw(trial);
        let inner = self.inner_of(&draw.padded);
        let mut levels: Vec<f64> = match self.boundary {
            Boundary::Bernoulli => draw.sites.clone(),
            _ => inner.iter().map(|&j| draw.sites[j]).collect(),
        };
        levels.sort_unstable_by(f64::total_cmp);
        // open set just above levels[j] is {u <= levels[j]}
        let above = |j: usize| next_up(levels[j]);
        let last = levels.len() - 1;
        if !self.crossing_in(&draw, &inner, above(last)) {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = (0usize, last);
        if self.crossing_in(&draw, &inner, above(0)) {
            return Ok(levels[0]);
        }
        // invariant: no crossing above levels[lo], crossing above levels[hi]
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.crossing_in(&draw, &inner, above(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(levels[hi])
    }
}

/// Smallest float strictly above `x` for `x` in `[0, 1)`.
fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// Monte Carlo crossing estimate after diminishment on `L^d`.
pub fn phi_ns(params: &EnhanceParams, side: usize, d: usize, trials: u64, seed: u64, exec: &Exec) -> Result<MCEstimate> {
    model_estimate(params, Model::Diminishment, side, d, trials, seed, exec)
}

/// Monte Carlo crossing estimate after enhancement on `M^d`.
pub fn psi_ns(params: &EnhanceParams, side: usize, d: usize, trials: u64, seed: u64, exec: &Exec) -> Result<MCEstimate> {
    model_estimate(params, Model::Enhancement, side, d, trials, seed, exec)
}

fn model_estimate(
    params: &EnhanceParams,
    model: Model,
    side: usize,
    d: usize,
    trials: u64,
    seed: u64,
    exec: &Exec,
) -> Result<MCEstimate> {
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    let m = ModelCrossing::new(side, d, params.s, model, params.boundary, seed)?;
    let hits = exec.map_trials(0..trials, |t| m.indicator(t, params.p));
    Ok(MCEstimate::from_indicators(&hits))
}
