//! Site configurations on a box and their crossing structure.
//!
//! Connectivity is computed with a [`DisjointSet`] in a single raster pass
//! that only looks at the positive half of each cell's neighbor offsets. Two
//! virtual nodes stand for the low and high faces of the queried axis, so a
//! crossing exists iff they end up in the same set.

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSet;
use crate::error::{check_probability, Error, Result};
use crate::lattice::{advance, Adjacency, Axis, BoxShape, Stencil};

/// Largest box that [`exact_crossing_prob`] enumerates by default.
pub const ENUMERATION_CAP: usize = 25;

/// State of every site outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Outside {
    #[default]
    Closed,
    Open,
}

/// Open/closed states on a box plus a single state for everything outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteConfig {
    shape: BoxShape,
    states: Vec<bool>,
    outside: Outside,
}

impl SiteConfig {
    pub fn new(shape: BoxShape, states: Vec<bool>, outside: Outside) -> Result<Self> {
        if states.len() != shape.len() {
            return Err(Error::param(
                "states",
                format!("expected {} entries, got {}", shape.len(), states.len()),
            ));
        }
        Ok(Self {
            shape,
            states,
            outside,
        })
    }

    pub fn filled(shape: BoxShape, open: bool) -> Self {
        Self {
            shape,
            states: vec![open; shape.len()],
            outside: Outside::Closed,
        }
    }

    /// Configuration whose open sites are exactly `cells`.
    pub fn from_open_cells(shape: BoxShape, cells: &[Vec<usize>]) -> Result<Self> {
        let mut c = Self::filled(shape, false);
        for x in cells {
            c.set(x, true)?;
        }
        Ok(c)
    }

    pub fn shape(&self) -> &BoxShape {
        &self.shape
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [bool] {
        &mut self.states
    }

    pub fn outside(&self) -> Outside {
        self.outside
    }

    pub fn with_outside(mut self, outside: Outside) -> Self {
        self.outside = outside;
        self
    }

    pub fn get(&self, x: &[usize]) -> Result<bool> {
        Ok(self.states[self.shape.index(x)?])
    }

    pub fn set(&mut self, x: &[usize], open: bool) -> Result<()> {
        let i = self.shape.index(x)?;
        self.states[i] = open;
        Ok(())
    }

    /// State at possibly out-of-box integer coordinates; outside reads
    /// [`Self::outside`].
    pub fn get_or_outside(&self, x: &[i64]) -> bool {
        let side = self.shape.side() as i64;
        if x.iter().all(|&c| (0..side).contains(&c)) {
            let idx: Vec<usize> = x.iter().map(|&c| c as usize).collect();
            self.states[self.shape.index_unchecked(&idx)]
        } else {
            self.outside == Outside::Open
        }
    }

    pub fn open_count(&self) -> usize {
        self.states.iter().filter(|&&s| s).count()
    }

    /// Swaps open and closed everywhere, including outside.
    pub fn complement(&self) -> Self {
        Self {
            shape: self.shape,
            states: self.states.iter().map(|&s| !s).collect(),
            outside: match self.outside {
                Outside::Closed => Outside::Open,
                Outside::Open => Outside::Closed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub crossed: bool,
    /// Number of open clusters under the queried adjacency.
    pub cluster_count: usize,
    /// An open path from the low face to the high face, when requested.
    pub witness: Option<Vec<Vec<usize>>>,
}

/// Crossing of the open cells of `open` along `axis`; the fast path used by
/// every estimator.
pub fn crosses(shape: &BoxShape, open: &[bool], adj: Adjacency, axis: Axis) -> bool {
    debug_assert_eq!(open.len(), shape.len());
    let n = shape.len();
    let (low, high) = (n, n + 1);
    let last = shape.side() - 1;
    let stencil = Stencil::new(*shape, adj);
    let mut dsu = DisjointSet::new(n + 2);
    let mut coords = vec![0usize; shape.dim()];
    for i in 0..n {
        if open[i] {
            if coords[axis.0] == 0 {
                dsu.union(i, low);
            }
            if coords[axis.0] == last {
                dsu.union(i, high);
            }
            stencil.for_each_forward(i, &coords, |j| {
                if open[j] {
                    dsu.union(i, j);
                }
            });
        }
        advance(&mut coords, shape.side());
    }
    dsu.same(low, high)
}

fn cluster_count(shape: &BoxShape, open: &[bool], adj: Adjacency) -> usize {
    let n = shape.len();
    let stencil = Stencil::new(*shape, adj);
    let mut dsu = DisjointSet::new(n);
    let mut coords = vec![0usize; shape.dim()];
    let mut merges = 0usize;
    for i in 0..n {
        if open[i] {
            stencil.for_each_forward(i, &coords, |j| {
                if open[j] && dsu.union(i, j) {
                    merges += 1;
                }
            });
        }
        advance(&mut coords, shape.side());
    }
    open.iter().filter(|&&o| o).count() - merges
}

/// Whether some open cluster touches both faces perpendicular to `axis`.
/// Sites outside the box do not take part.
pub fn crossing(config: &SiteConfig, adj: Adjacency, axis: Axis) -> Result<CrossingReport> {
    axis.check(&config.shape)?;
    Ok(CrossingReport {
        crossed: crosses(&config.shape, &config.states, adj, axis),
        cluster_count: cluster_count(&config.shape, &config.states, adj),
        witness: None,
    })
}

/// As [`crossing`], additionally returning a shortest open crossing path.
pub fn crossing_with_witness(
    config: &SiteConfig,
    adj: Adjacency,
    axis: Axis,
) -> Result<CrossingReport> {
    let mut report = crossing(config, adj, axis)?;
    if report.crossed {
        report.witness = shortest_crossing_path(config, adj, axis);
    }
    Ok(report)
}

fn shortest_crossing_path(config: &SiteConfig, adj: Adjacency, axis: Axis) -> Option<Vec<Vec<usize>>> {
    let shape = config.shape;
    let n = shape.len();
    let last = shape.side() - 1;
    let stencil = Stencil::new(shape, adj);
    let mut parent = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    let mut coords = vec![0usize; shape.dim()];
    for i in 0..n {
        shape.coords_into(i, &mut coords);
        if config.states[i] && coords[axis.0] == 0 {
            parent[i] = i;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        shape.coords_into(i, &mut coords);
        if coords[axis.0] == last {
            let mut path = vec![shape.coords(i)];
            let mut cur = i;
            while parent[cur] != cur {
                cur = parent[cur];
                path.push(shape.coords(cur));
            }
            path.reverse();
            return Some(path);
        }
        stencil.for_each_neighbor(i, &coords, |j| {
            if config.states[j] && parent[j] == usize::MAX {
                parent[j] = i;
                queue.push_back(j);
            }
        });
    }
    None
}

/// True iff the closed cells admit an `M` crossing along `axis`, i.e. the
/// open cells do not contain a sheet separating the two faces.
pub fn sheet_blocked(config: &SiteConfig, axis: Axis) -> Result<bool> {
    axis.check(&config.shape)?;
    let closed: Vec<bool> = config.states.iter().map(|&s| !s).collect();
    Ok(crosses(&config.shape, &closed, Adjacency::M, axis))
}

/// Checks the planar duality identity on a two-dimensional configuration:
/// an open `L` crossing along axis 0 exists iff no closed `M` crossing along
/// axis 1 exists. Returns whether the identity holds.
pub fn duality_check(config: &SiteConfig) -> Result<bool> {
    if config.shape.dim() != 2 {
        return Err(Error::param("dim", "duality check needs dimension 2"));
    }
    let open = crosses(&config.shape, &config.states, Adjacency::L, Axis(0));
    let closed: Vec<bool> = config.states.iter().map(|&s| !s).collect();
    let blocked = crosses(&config.shape, &closed, Adjacency::M, Axis(1));
    Ok(open != blocked)
}

/// Number of crossing configurations with exactly `j` open cells, for every
/// `j` in `0..=len`. Enumerates all `2^len` configurations.
pub fn crossing_counts(shape: &BoxShape, adj: Adjacency, axis: Axis, cap: usize) -> Result<Vec<u64>> {
    axis.check(shape)?;
    let n = shape.len();
    if n > cap || n > 40 {
        return Err(Error::EnumerationCap { cells: n, cap });
    }
    let stencil = Stencil::new(*shape, adj);
    let last = shape.side() - 1;
    let mut nbr = vec![0u64; n];
    let (mut low, mut high) = (0u64, 0u64);
    let mut coords = vec![0usize; shape.dim()];
    for (i, mask) in nbr.iter_mut().enumerate() {
        stencil.for_each_neighbor(i, &coords, |j| *mask |= 1 << j);
        if coords[axis.0] == 0 {
            low |= 1 << i;
        }
        if coords[axis.0] == last {
            high |= 1 << i;
        }
        advance(&mut coords, shape.side());
    }
    let mut counts = vec![0u64; n + 1];
    for config in 0u64..(1u64 << n) {
        if config & low == 0 || config & high == 0 {
            continue;
        }
        if flood_crosses(config, low, high, &nbr) {
            counts[config.count_ones() as usize] += 1;
        }
    }
    Ok(counts)
}

#[inline]
fn flood_crosses(open: u64, low: u64, high: u64, nbr: &[u64]) -> bool {
    let mut reach = open & low;
    let mut frontier = reach;
    while frontier != 0 {
        if reach & high != 0 {
            return true;
        }
        let mut next = 0u64;
        let mut f = frontier;
        while f != 0 {
            next |= nbr[f.trailing_zeros() as usize];
            f &= f - 1;
        }
        next &= open & !reach;
        reach |= next;
        frontier = next;
    }
    reach & high != 0
}

/// Exact crossing probability at density `p` by enumeration, for boxes of at
/// most [`ENUMERATION_CAP`] cells.
pub fn exact_crossing_prob(shape: &BoxShape, adj: Adjacency, axis: Axis, p: f64) -> Result<f64> {
    exact_crossing_prob_capped(shape, adj, axis, p, ENUMERATION_CAP)
}

pub fn exact_crossing_prob_capped(
    shape: &BoxShape,
    adj: Adjacency,
    axis: Axis,
    p: f64,
    cap: usize,
) -> Result<f64> {
    check_probability("p", p)?;
    let counts = crossing_counts(shape, adj, axis, cap)?;
    Ok(eval_counts(&counts, p))
}

/// Evaluates `sum_j counts[j] p^j (1-p)^(n-j)`.
pub fn eval_counts(counts: &[u64], p: f64) -> f64 {
    let n = counts.len() - 1;
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| c as f64 * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
        .sum()
}

/// Smallest `t` such that the cells with weight `<= t` cross along `axis`.
///
/// With cells declared open when `weight < p`, the box crosses at `p` iff
/// `p > t`. Cells with non-finite weight never open. Returns `None` when even
/// all finite-weight cells do not cross.
pub fn minimax_crossing(shape: &BoxShape, weights: &[f64], adj: Adjacency, axis: Axis) -> Option<f64> {
    bottleneck(shape, weights, adj, axis, false)
}

/// Largest `t` such that the cells with weight `>= t` cross along `axis`.
///
/// With cells declared closed when `weight >= p`, the closed cells cross at
/// `p` iff `p <= t`. Returns `None` when no crossing exists at all, which
/// cannot happen for finite weights on a box.
pub fn maximin_crossing(shape: &BoxShape, weights: &[f64], adj: Adjacency, axis: Axis) -> Option<f64> {
    bottleneck(shape, weights, adj, axis, true)
}

fn bottleneck(shape: &BoxShape, weights: &[f64], adj: Adjacency, axis: Axis, descending: bool) -> Option<f64> {
    debug_assert_eq!(weights.len(), shape.len());
    let n = shape.len();
    let mut order: Vec<(f64, u32)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| descending || w.is_finite())
        .map(|(i, &w)| (w, i as u32))
        .collect();
    if descending {
        order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    } else {
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let stencil = Stencil::new(*shape, adj);
    let last = shape.side() - 1;
    let (low, high) = (n, n + 1);
    let mut dsu = DisjointSet::new(n + 2);
    let mut active = vec![false; n];
    let mut coords = vec![0usize; shape.dim()];
    for (w, i) in order {
        let i = i as usize;
        active[i] = true;
        shape.coords_into(i, &mut coords);
        if coords[axis.0] == 0 {
            dsu.union(i, low);
        }
        if coords[axis.0] == last {
            dsu.union(i, high);
        }
        stencil.for_each_neighbor(i, &coords, |j| {
            if active[j] {
                dsu.union(i, j);
            }
        });
        if dsu.same(low, high) {
            return Some(w);
        }
    }
    None
}
