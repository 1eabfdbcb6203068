//! Hierarchical retention process down to a truncation level.
//!
//! Level `k` cells are the `N^k` per axis subcubes, identified with integer
//! coordinates in `[0, N^k)^d`. A level-`k` cell is retained iff its parent
//! is retained and its own uniform is below `p`. Each cell therefore carries
//! a *threshold*, the maximum of the uniforms along its ancestry, and is
//! retained at density `p` iff `threshold < p`.
//!
//! The uniform of a cell is a pure function of `(seed, trial, level, cell)`:
//! the cell's stream position is its hierarchical key, `parent_key * N^d +
//! local_index`, so the `N^d` children of a parent are contiguous and cost one
//! seek. Realizations drawn with the same key at different `p` are nested.
//!
//! A realization stores only cells with `threshold < p`, so its `p` doubles
//! as a cap: it answers every query at any `p' <= p` exactly.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::lattice::{Adjacency, Axis, BoxShape};
use crate::percolation::{crosses, maximin_crossing, minimax_crossing};
use crate::rng::{Purpose, RngKey};

/// Default truncation level.
pub const DEFAULT_K_MAX: u32 = 4;

/// Default limit on retained cells per level.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractalParams {
    /// Subdivision factor.
    pub n: usize,
    /// Dimension.
    pub d: usize,
    /// Retention probability.
    pub p: f64,
    /// Truncation level.
    pub k_max: u32,
    /// Maximum number of retained cells stored at any level.
    pub budget: u64,
}

impl FractalParams {
    pub fn new(n: usize, d: usize, p: f64, k_max: u32) -> Result<Self> {
        let params = Self {
            n,
            d,
            p,
            k_max,
            budget: DEFAULT_CELL_BUDGET,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::param("N", format!("{} < 2", self.n)));
        }
        if self.d < 2 {
            return Err(Error::param("d", format!("{} < 2", self.d)));
        }
        if self.k_max < 1 {
            return Err(Error::param("k", "truncation level must be at least 1"));
        }
        check_probability("p", self.p)?;
        let exp = self.d as u32 * self.k_max;
        if (self.n as u64).checked_pow(exp).is_none() {
            return Err(Error::param(
                "k",
                format!("N^(d k) = {}^{} overflows 64-bit cell keys", self.n, exp),
            ));
        }
        Ok(())
    }

    /// Cells per axis at level `k`.
    pub fn side(&self, k: u32) -> u64 {
        (self.n as u64).pow(k)
    }

    /// Children per cell, `N^d`.
    pub fn children(&self) -> u64 {
        (self.n as u64).pow(self.d as u32)
    }
}

/// A retained cell: flat index at its level plus its retention threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetainedCell {
    pub index: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct FractalRealization {
    params: FractalParams,
    key: RngKey,
    /// `levels[k - 1]` holds the retained level-`k` cells sorted by index.
    levels: Vec<Vec<RetainedCell>>,
}

impl FractalRealization {
    /// Samples with trial 0 of `seed`.
    pub fn sample(params: FractalParams, seed: u64) -> Result<Self> {
        Self::sample_keyed(params, RngKey::new(seed, 0))
    }

    pub fn sample_keyed(params: FractalParams, key: RngKey) -> Result<Self> {
        params.validate()?;
        let n = params.n as u64;
        let d = params.d;
        let children = params.children() as usize;

        // local child offsets: coordinates in [0, N)^d, axis 0 fastest
        let local: Vec<Vec<u64>> = (0..children)
            .map(|l| {
                let mut l = l as u64;
                (0..d)
                    .map(|_| {
                        let c = l % n;
                        l /= n;
                        c
                    })
                    .collect()
            })
            .collect();

        // (hierarchical key, flat index, threshold) of the current level;
        // the root is the unit cube with threshold 0
        let mut current: Vec<(u64, u64, f64)> = vec![(0, 0, 0.0)];
        let mut levels = Vec::with_capacity(params.k_max as usize);
        let mut uniforms = vec![0.0f64; children];
        let mut parent_coords = vec![0u64; d];

        for k in 1..=params.k_max {
            let parent_side = params.side(k - 1);
            let side = params.side(k);
            let mut stream = key.stream(Purpose::Retention, k as u64);
            let mut next: Vec<(u64, u64, f64)> = Vec::new();
            for &(pkey, pindex, pthr) in &current {
                stream.fill_from(pkey * children as u64, &mut uniforms);
                let mut idx = pindex;
                for c in parent_coords.iter_mut() {
                    *c = idx % parent_side;
                    idx /= parent_side;
                }
                for (l, &u) in uniforms.iter().enumerate() {
                    if u < params.p {
                        let mut flat = 0u64;
                        for axis in (0..d).rev() {
                            flat = flat * side + parent_coords[axis] * n + local[l][axis];
                        }
                        next.push((pkey * children as u64 + l as u64, flat, pthr.max(u)));
                    }
                }
                if next.len() as u64 > params.budget {
                    return Err(Error::Budget {
                        level: k,
                        cells: next.len() as u64,
                        budget: params.budget,
                    });
                }
            }
            let mut cells: Vec<RetainedCell> = next
                .iter()
                .map(|&(_, index, threshold)| RetainedCell { index, threshold })
                .collect();
            cells.sort_unstable_by_key(|c| c.index);
            levels.push(cells);
            current = next;
        }
        Ok(Self { params, key, levels })
    }

    pub fn params(&self) -> &FractalParams {
        &self.params
    }

    pub fn key(&self) -> RngKey {
        self.key
    }

    fn check_level(&self, k: u32) -> Result<()> {
        if k >= 1 && k <= self.params.k_max {
            Ok(())
        } else {
            Err(Error::param(
                "k",
                format!("level {k} outside 1..={}", self.params.k_max),
            ))
        }
    }

    /// Retained level-`k` cells sorted by flat index.
    pub fn retained(&self, k: u32) -> Result<&[RetainedCell]> {
        self.check_level(k)?;
        Ok(&self.levels[k as usize - 1])
    }

    /// Retained level-`k` cells at a density `p <= self.params().p`.
    pub fn retained_at(&self, k: u32, p: f64) -> Result<impl Iterator<Item = &RetainedCell>> {
        self.check_cap(p)?;
        Ok(self.retained(k)?.iter().filter(move |c| c.threshold < p))
    }

    fn check_cap(&self, p: f64) -> Result<()> {
        if p <= self.params.p {
            Ok(())
        } else {
            Err(Error::param(
                "p",
                format!("{p} exceeds the sampled density {}", self.params.p),
            ))
        }
    }

    pub fn level_shape(&self, k: u32) -> Result<BoxShape> {
        self.check_level(k)?;
        BoxShape::new(self.params.d, self.params.side(k) as usize)
    }

    pub fn is_retained(&self, k: u32, x: &[usize]) -> Result<bool> {
        let shape = self.level_shape(k)?;
        let i = shape.index(x)? as u64;
        Ok(self.levels[k as usize - 1]
            .binary_search_by_key(&i, |c| c.index)
            .is_ok())
    }

    /// Dense occupancy of level `k` at the sampled density.
    pub fn retained_mask(&self, k: u32) -> Result<Vec<bool>> {
        let shape = self.level_shape(k)?;
        let mut mask = vec![false; shape.len()];
        for c in &self.levels[k as usize - 1] {
            mask[c.index as usize] = true;
        }
        Ok(mask)
    }

    /// Dense thresholds of level `k`; cells above the sampled density read
    /// as `+inf`.
    pub fn threshold_grid(&self, k: u32) -> Result<Vec<f64>> {
        let shape = self.level_shape(k)?;
        let mut grid = vec![f64::INFINITY; shape.len()];
        for c in &self.levels[k as usize - 1] {
            grid[c.index as usize] = c.threshold;
        }
        Ok(grid)
    }

    /// Critical value of the level-`k` path crossing: the crossing occurs at
    /// density `q <= p` iff `q > t`. `None` if there is no crossing even at
    /// the sampled density.
    pub fn crossing_threshold(&self, k: u32, axis: Axis) -> Result<Option<f64>> {
        let shape = self.level_shape(k)?;
        axis.check(&shape)?;
        let grid = self.threshold_grid(k)?;
        Ok(minimax_crossing(&shape, &grid, Adjacency::L, axis))
    }

    /// Critical value of the level-`k` sheet: a sheet exists at density
    /// `q <= p` iff `q > t`. `None` if there is no sheet even at the sampled
    /// density.
    pub fn sheet_threshold(&self, k: u32, axis: Axis) -> Result<Option<f64>> {
        let shape = self.level_shape(k)?;
        axis.check(&shape)?;
        let grid = self.threshold_grid(k)?;
        let t = maximin_crossing(&shape, &grid, Adjacency::M, axis)
            .expect("a box always has an M path through all cells");
        Ok((t < self.params.p).then_some(t))
    }

    /// Walks the tree and checks that every retained cell has a retained
    /// parent with a threshold no larger than its own.
    pub fn check_nesting(&self) -> bool {
        let n = self.params.n as u64;
        let d = self.params.d;
        for k in 2..=self.params.k_max {
            let side = self.params.side(k);
            let parent_side = self.params.side(k - 1);
            let parents = &self.levels[k as usize - 2];
            for c in &self.levels[k as usize - 1] {
                let mut idx = c.index;
                let mut pflat = 0u64;
                let mut stride = 1u64;
                for _ in 0..d {
                    pflat += (idx % side) / n * stride;
                    idx /= side;
                    stride *= parent_side;
                }
                match parents.binary_search_by_key(&pflat, |q| q.index) {
                    Ok(j) if parents[j].threshold <= c.threshold => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// Writes one line `level,x_0,...,x_{d-1}` per retained cell, levels in
    /// increasing order and cells in flat-index order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for k in 1..=self.params.k_max {
            let side = self.params.side(k);
            for c in &self.levels[k as usize - 1] {
                write!(out, "{k}")?;
                let mut idx = c.index;
                for _ in 0..self.params.d {
                    write!(out, ",{}", idx % side)?;
                    idx /= side;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Parses a realization dump back into `(level, coordinates)` records.
pub fn read_dump<R: BufRead>(input: R) -> Result<Vec<(u32, Vec<u64>)>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Io(format!("malformed dump line {}: {line:?}", lineno + 1));
        let mut fields = line.split(',');
        let level = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let coords = fields
            .map(|f| f.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        out.push((level, coords));
    }
    Ok(out)
}

/// Level-`k` path-crossing indicator: retained level-`k` cells, `L`
/// adjacency, crossing along `axis`.
pub fn level_crossing(r: &FractalRealization, k: u32, axis: Axis) -> Result<bool> {
    let shape = r.level_shape(k)?;
    axis.check(&shape)?;
    Ok(crosses(&shape, &r.retained_mask(k)?, Adjacency::L, axis))
}

/// Level-`k` sheet indicator: true iff the discarded region at level `k`
/// has no `M` crossing along `axis`.
pub fn level_sheet(r: &FractalRealization, k: u32, axis: Axis) -> Result<bool> {
    let shape = r.level_shape(k)?;
    axis.check(&shape)?;
    let closed: Vec<bool> = r.retained_mask(k)?.into_iter().map(|o| !o).collect();
    Ok(!crosses(&shape, &closed, Adjacency::M, axis))
}
