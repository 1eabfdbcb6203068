//! Box geometry and the two neighbor relations used throughout the crate.
//!
//! Cells of a box with `side` cells per axis in dimension `dim` carry 0-based
//! integer coordinates in `[0, side)^dim`. Flat (raster) indices put axis 0
//! fastest: `index = x_0 + side * x_1 + side^2 * x_2 + ...`.
//!
//! Two adjacency relations are supported:
//!
//! * [`Adjacency::L`]: `x ~ y` iff `x != y`, `|x_i - y_i| <= 1` for every `i`,
//!   and `x_i == y_i` for at least one `i`. In two dimensions this is the
//!   square lattice.
//! * [`Adjacency::M`]: `x ~ y` iff `x != y` and `|x_i - y_i| <= 1` for every
//!   `i` (all diagonals, the close-packed lattice).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `side^dim` box of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxShape {
    dim: usize,
    side: usize,
}

/// Upper bound on the number of cells a dense box may hold.
pub const MAX_DENSE_CELLS: u64 = 1 << 32;

impl BoxShape {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::param("dim", format!("{dim} < 2")));
        }
        if side < 1 {
            return Err(Error::param("side", "side must be at least 1"));
        }
        match (side as u64).checked_pow(dim as u32) {
            Some(n) if n <= MAX_DENSE_CELLS => Ok(Self { dim, side }),
            _ => Err(Error::param(
                "side",
                format!("{side}^{dim} cells exceed the dense limit {MAX_DENSE_CELLS}"),
            )),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of cells, `side^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.dim && x.iter().all(|&c| c < self.side)
    }

    fn check(&self, x: &[usize]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfBox {
                coord: x.to_vec(),
                side: self.side,
                dim: self.dim,
            })
        }
    }

    /// Flat index of an in-box coordinate.
    pub fn index(&self, x: &[usize]) -> Result<usize> {
        self.check(x)?;
        Ok(self.index_unchecked(x))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, x: &[usize]) -> usize {
        x.iter().rev().fold(0, |acc, &c| acc * self.side + c)
    }

    /// Coordinates of a flat index.
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(index % self.side);
            index /= self.side;
        }
        out
    }

    #[inline]
    pub(crate) fn coords_into(&self, mut index: usize, out: &mut [usize]) {
        for c in out.iter_mut() {
            *c = index % self.side;
            index /= self.side;
        }
    }

    /// Stride of `axis` in flat indexing.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow(axis as u32)
    }
}

/// Neighbor rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Adjacency {
    /// Neighbors agree in at least one coordinate (no pure-diagonal steps).
    L,
    /// Close-packed: every `y != x` in the surrounding `3^d` block.
    M,
}

impl Adjacency {
    fn admits(self, offset: &[i64]) -> bool {
        if offset.iter().all(|&o| o == 0) {
            return false;
        }
        match self {
            Adjacency::M => true,
            Adjacency::L => offset.iter().any(|&o| o == 0),
        }
    }
}

impl std::fmt::Display for Adjacency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Adjacency::L => write!(f, "L"),
            Adjacency::M => write!(f, "M"),
        }
    }
}

impl std::str::FromStr for Adjacency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(Adjacency::L),
            "M" | "m" => Ok(Adjacency::M),
            other => Err(Error::param("adjacency", format!("unknown lattice `{other}`"))),
        }
    }
}

/// A coordinate direction. Crossing queries default to [`Axis::FIRST`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Axis(pub usize);

impl Axis {
    pub const FIRST: Axis = Axis(0);

    pub(crate) fn check(self, shape: &BoxShape) -> Result<()> {
        if self.0 < shape.dim() {
            Ok(())
        } else {
            Err(Error::param(
                "axis",
                format!("axis {} out of range for dimension {}", self.0, shape.dim()),
            ))
        }
    }
}

impl Default for Axis {
    fn default() -> Self {
        Axis::FIRST
    }
}

/// Which of the two faces perpendicular to an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceSide {
    Low,
    High,
}

/// All offsets in `{-1, 0, 1}^dim` admitted by `adj`, in lexicographic order
/// (axis 0 most significant).
pub fn offsets(dim: usize, adj: Adjacency) -> Vec<Vec<i64>> {
    let total = 3usize.pow(dim as u32);
    let mut out = Vec::new();
    for code in 0..total {
        // most significant digit is axis 0
        let mut off = vec![0i64; dim];
        let mut c = code;
        for i in (0..dim).rev() {
            off[i] = (c % 3) as i64 - 1;
            c /= 3;
        }
        if adj.admits(&off) {
            out.push(off);
        }
    }
    out
}

/// In-box neighbors of `x` under `adj`, ordered lexicographically by offset.
pub fn neighbors(x: &[usize], shape: &BoxShape, adj: Adjacency) -> Result<Vec<Vec<usize>>> {
    shape.check(x)?;
    let side = shape.side() as i64;
    let out = offsets(shape.dim(), adj)
        .into_iter()
        .filter_map(|off| {
            let y: Option<Vec<usize>> = x
                .iter()
                .zip(&off)
                .map(|(&c, &o)| {
                    let v = c as i64 + o;
                    (0..side).contains(&v).then_some(v as usize)
                })
                .collect();
            y
        })
        .collect();
    Ok(out)
}

/// All cells with coordinate `0` (low) or `side - 1` (high) on `axis`.
pub fn face_cells(shape: &BoxShape, axis: Axis, side_sel: FaceSide) -> Result<Vec<Vec<usize>>> {
    axis.check(shape)?;
    let target = match side_sel {
        FaceSide::Low => 0,
        FaceSide::High => shape.side() - 1,
    };
    Ok((0..shape.len())
        .map(|i| shape.coords(i))
        .filter(|x| x[axis.0] == target)
        .collect())
}

/// Precomputed flat-index view of an adjacency relation on one box.
///
/// Iterating neighbors through a stencil avoids allocating coordinate vectors
/// in the hot loops of the connectivity code.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    shape: BoxShape,
    offsets: Vec<Vec<i64>>,
    deltas: Vec<isize>,
    /// Indices into `offsets` whose flat delta is positive.
    forward: Vec<usize>,
}

impl Stencil {
    pub(crate) fn new(shape: BoxShape, adj: Adjacency) -> Self {
        let offsets = offsets(shape.dim(), adj);
        let deltas: Vec<isize> = offsets
            .iter()
            .map(|off| {
                off.iter()
                    .enumerate()
                    .map(|(i, &o)| o as isize * shape.stride(i) as isize)
                    .sum()
            })
            .collect();
        // positive flat delta: the highest nonzero axis moves up
        let forward = offsets
            .iter()
            .enumerate()
            .filter(|(_, off)| off.iter().rev().find(|&&o| o != 0).is_some_and(|&o| o > 0))
            .map(|(j, _)| j)
            .collect();
        Self {
            shape,
            offsets,
            deltas,
            forward,
        }
    }

    #[inline]
    fn valid(&self, coords: &[usize], j: usize) -> bool {
        let side = self.shape.side();
        self.offsets[j]
            .iter()
            .zip(coords)
            .all(|(&o, &c)| match o {
                -1 => c > 0,
                1 => c + 1 < side,
                _ => true,
            })
    }

    /// Calls `f` for every in-box neighbor of the cell at `index` whose
    /// coordinates are `coords`.
    #[inline]
    pub(crate) fn for_each_neighbor(&self, index: usize, coords: &[usize], mut f: impl FnMut(usize)) {
        for j in 0..self.offsets.len() {
            if self.valid(coords, j) {
                f((index as isize + self.deltas[j]) as usize);
            }
        }
    }

    /// Like [`Self::for_each_neighbor`] but only over the positive half of
    /// the offsets, so each undirected edge is visited once in a raster pass.
    #[inline]
    pub(crate) fn for_each_forward(&self, index: usize, coords: &[usize], mut f: impl FnMut(usize)) {
        for &j in &self.forward {
            if self.valid(coords, j) {
                f((index as isize + self.deltas[j]) as usize);
            }
        }
    }
}

/// Advances a coordinate vector to the next raster position (axis 0 fastest).
#[inline]
pub(crate) fn advance(coords: &mut [usize], side: usize) {
    for c in coords.iter_mut() {
        *c += 1;
        if *c < side {
            return;
        }
        *c = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(v: Vec<Vec<usize>>) -> BTreeSet<Vec<usize>> {
        v.into_iter().collect()
    }

    #[test]
    fn corner_neighbors_in_two_dimensions() {
        let shape = BoxShape::new(2, 2).unwrap();
        let l = neighbors(&[0, 0], &shape, Adjacency::L).unwrap();
        assert_eq!(set(l), set(vec![vec![1, 0], vec![0, 1]]));
        let m = neighbors(&[0, 0], &shape, Adjacency::M).unwrap();
        assert_eq!(set(m), set(vec![vec![1, 0], vec![0, 1], vec![1, 1]]));
    }

    #[test]
    fn center_of_three_cube() {
        let shape = BoxShape::new(3, 3).unwrap();
        // enumerate {-1,0,1}^3 by hand and filter with each rule
        let mut m_count = 0;
        let mut l_count = 0;
        for a in -1i64..=1 {
            for b in -1i64..=1 {
                for c in -1i64..=1 {
                    if (a, b, c) == (0, 0, 0) {
                        continue;
                    }
                    m_count += 1;
                    if a == 0 || b == 0 || c == 0 {
                        l_count += 1;
                    }
                }
            }
        }
        assert_eq!((m_count, l_count), (26, 18));
        assert_eq!(neighbors(&[1, 1, 1], &shape, Adjacency::M).unwrap().len(), 26);
        assert_eq!(neighbors(&[1, 1, 1], &shape, Adjacency::L).unwrap().len(), 18);
    }

    #[test]
    fn interior_counts_by_dimension() {
        // L excludes exactly the offsets with no zero entry: 2^d of them.
        for dim in 2..=4 {
            let shape = BoxShape::new(dim, 3).unwrap();
            let center = vec![1; dim];
            let m = neighbors(&center, &shape, Adjacency::M).unwrap().len();
            let l = neighbors(&center, &shape, Adjacency::L).unwrap().len();
            assert_eq!(m, 3usize.pow(dim as u32) - 1);
            assert_eq!(l, m - 2usize.pow(dim as u32));
        }
        let shape = BoxShape::new(2, 3).unwrap();
        assert_eq!(neighbors(&[1, 1], &shape, Adjacency::L).unwrap().len(), 4);
        assert_eq!(neighbors(&[1, 1], &shape, Adjacency::M).unwrap().len(), 8);
    }

    #[test]
    fn neighbor_order_is_lexicographic() {
        let shape = BoxShape::new(2, 3).unwrap();
        let m = neighbors(&[1, 1], &shape, Adjacency::M).unwrap();
        let mut sorted = m.clone();
        sorted.sort();
        assert_eq!(m, sorted);
    }

    #[test]
    fn out_of_box_is_rejected() {
        let shape = BoxShape::new(2, 3).unwrap();
        assert!(matches!(
            neighbors(&[3, 0], &shape, Adjacency::L),
            Err(Error::OutOfBox { .. })
        ));
        assert!(neighbors(&[0, 0, 0], &shape, Adjacency::L).is_err());
    }

    #[test]
    fn faces() {
        let shape = BoxShape::new(2, 3).unwrap();
        let low = face_cells(&shape, Axis(0), FaceSide::Low).unwrap();
        assert_eq!(set(low), set(vec![vec![0, 0], vec![0, 1], vec![0, 2]]));

        let unit = BoxShape::new(2, 1).unwrap();
        let lo = face_cells(&unit, Axis(0), FaceSide::Low).unwrap();
        let hi = face_cells(&unit, Axis(0), FaceSide::High).unwrap();
        assert_eq!(lo, hi);
        assert_eq!(lo, vec![vec![0, 0]]);

        let cube = BoxShape::new(3, 2).unwrap();
        let high = face_cells(&cube, Axis(1), FaceSide::High).unwrap();
        assert_eq!(high.len(), 4);
        assert!(high.iter().all(|x| x[1] == 1));

        assert!(face_cells(&shape, Axis(2), FaceSide::Low).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(BoxShape::new(1, 4).is_err());
        assert!(BoxShape::new(2, 0).is_err());
        assert!(BoxShape::new(4, 1 << 20).is_err());
        let s = BoxShape::new(3, 4).unwrap();
        for i in 0..s.len() {
            assert_eq!(s.index(&s.coords(i)).unwrap(), i);
        }
    }

    #[test]
    fn stencil_matches_neighbors() {
        for &(dim, side) in &[(2, 4), (3, 3), (4, 2)] {
            let shape = BoxShape::new(dim, side).unwrap();
            for adj in [Adjacency::L, Adjacency::M] {
                let st = Stencil::new(shape, adj);
                let mut coords = vec![0; dim];
                for i in 0..shape.len() {
                    let mut got = Vec::new();
                    st.for_each_neighbor(i, &coords, |j| got.push(shape.coords(j)));
                    let want = neighbors(&coords, &shape, adj).unwrap();
                    assert_eq!(got, want);
                    let mut fwd = 0;
                    st.for_each_forward(i, &coords, |j| {
                        assert!(j > i);
                        fwd += 1;
                    });
                    assert_eq!(fwd, want.iter().filter(|y| shape.index(y).unwrap() > i).count());
                    advance(&mut coords, side);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetric_and_nested(dim in 2usize..=4, side in 1usize..=4, seed in any::<u64>()) {
                let shape = BoxShape::new(dim, side).unwrap();
                let i = (seed % shape.len() as u64) as usize;
                let x = shape.coords(i);
                let l = neighbors(&x, &shape, Adjacency::L).unwrap();
                let m = neighbors(&x, &shape, Adjacency::M).unwrap();
                for y in &l {
                    prop_assert!(m.contains(y));
                }
                for y in &m {
                    prop_assert!(y != &x);
                    prop_assert!(shape.contains(y));
                    prop_assert!(neighbors(y, &shape, Adjacency::M).unwrap().contains(&x));
                }
                for y in &l {
                    prop_assert!(neighbors(y, &shape, Adjacency::L).unwrap().contains(&x));
                }
            }
        }
    }
}
