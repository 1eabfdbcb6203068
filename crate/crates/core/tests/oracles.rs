//! Independent oracles written in test code: closed forms, brute force and a
//! column transfer matrix.

use std::collections::HashMap;

use fracperc::bounds::{b1_estimate, RectangleEvent};
use fracperc::estimate::{theta_estimate, theta_tilde_estimate, MCEstimate};
use fracperc::exec::Exec;
use fracperc::fractal::FractalParams;
use fracperc::lattice::{offsets, Adjacency, Axis, BoxShape};
use fracperc::percolation::exact_crossing_prob;

fn within(est: &MCEstimate, exact: f64, sigmas: f64) -> bool {
    let se = (exact * (1.0 - exact) / est.trials as f64).sqrt().max(1e-12);
    (est.p_hat - exact).abs() <= sigmas * se
}

#[test]
fn stencil_sizes_match_counting() {
    for d in 1..=4u32 {
        let all = 3usize.pow(d) - 1;
        // offsets in {-1,0,1}^d with no zero coordinate are excluded from L
        let pure_diagonal = 2usize.pow(d);
        assert_eq!(offsets(d as usize, Adjacency::M).len(), all);
        assert_eq!(offsets(d as usize, Adjacency::L).len(), all - pure_diagonal);
    }
}

#[test]
fn two_by_two_crossing_polynomials() {
    let shape = BoxShape::new(2, 2).unwrap();
    for p in [0.1f64, 0.37, 0.5, 0.9] {
        let q = 1.0 - p;
        // L: one of the two rows fully open
        let l = 1.0 - (1.0 - p * p).powi(2);
        // M: some open cell in each column
        let m = (1.0 - q * q).powi(2);
        assert!((exact_crossing_prob(&shape, Adjacency::L, Axis::FIRST, p).unwrap() - l).abs() < 1e-14);
        assert!((exact_crossing_prob(&shape, Adjacency::M, Axis::FIRST, p).unwrap() - m).abs() < 1e-14);
    }
}

#[test]
fn level_one_sheet_in_the_unit_cube() {
    // in a 2x2x2 box every pair of cells is M-adjacent, so the closed cells
    // cross unless one face layer is fully open
    let exec = Exec::default();
    for p in [0.7f64, 0.85] {
        let exact = 1.0 - (1.0 - p.powi(4)).powi(2);
        let params = FractalParams::new(2, 3, p, 1).unwrap();
        let est = theta_tilde_estimate(&params, 1, 50_000, 3, &exec).unwrap().estimate;
        assert!(within(&est, exact, 4.0), "p={p}: {} vs {exact}", est.p_hat);
    }
}

#[test]
fn level_two_theta_for_n2_matches_conditioning() {
    // brute force over the 4 + 16 retention variables behind the 4x4 level-2 grid
    let p = 0.8;
    let mut exact = 0.0;
    for top in 0u32..16 {
        for sub in 0u32..(1 << 16) {
            let mut weight = 1.0;
            let mut open = [false; 16];
            for parent in 0..4 {
                let kept = top >> parent & 1 == 1;
                weight *= if kept { p } else { 1.0 - p };
                for child in 0..4 {
                    let bit = sub >> (parent * 4 + child) & 1 == 1;
                    if !kept && bit {
                        weight = 0.0;
                    }
                    if kept {
                        weight *= if bit { p } else { 1.0 - p };
                    }
                    let (px, py) = (parent % 2, parent / 2);
                    let (cx, cy) = (child % 2, child / 2);
                    open[(2 * px + cx) + 4 * (2 * py + cy)] = kept && bit;
                }
            }
            if weight > 0.0 && grid_crosses(&open, 4, 4) {
                exact += weight;
            }
        }
    }
    let params = FractalParams::new(2, 2, p, 2).unwrap();
    let est = theta_estimate(&params, 2, 100_000, 17, &Exec::default()).unwrap().estimate;
    assert!(within(&est, exact, 4.0), "{} vs {exact}", est.p_hat);
}

/// Left-right nearest-neighbor crossing of a `w x h` grid, index `x + w y`.
fn grid_crosses(open: &[bool], w: usize, h: usize) -> bool {
    let mut seen = vec![false; w * h];
    let mut stack: Vec<usize> = (0..h).map(|y| w * y).filter(|&i| open[i]).collect();
    for &i in &stack {
        seen[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = (i % w, i / w);
        if x == w - 1 {
            return true;
        }
        let mut push = |j: usize| {
            if open[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        push(i + 1);
        if y > 0 {
            push(i - w);
        }
        if y + 1 < h {
            push(i + w);
        }
    }
    false
}

/// Top-bottom crossing of a 3x3 block given as 9 bits, `x + 3 y`.
fn block_tb(bits: u32) -> bool {
    let open: Vec<bool> = (0..9).map(|i| bits >> i & 1 == 1).collect();
    // transpose so the vertical crossing becomes a horizontal one
    let t: Vec<bool> = (0..9).map(|i| open[(i / 3) + 3 * (i % 3)]).collect();
    grid_crosses(&t, 3, 3)
}

/// State of the column transfer: open mask of the last column, component
/// labels of its open cells, and which labels touch the left side.
#[derive(Clone, PartialEq, Eq, Hash)]
struct ColumnState {
    mask: u8,
    label: [u8; 3],
    left: [bool; 3],
}

fn step(prev: Option<&ColumnState>, mask: u8) -> ColumnState {
    // union-find over 3 previous + 3 new cells
    let mut parent: Vec<usize> = (0..6).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let join = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            p[ra] = rb;
        }
    };
    let open_new = |r: usize| mask >> r & 1 == 1;
    let mut left_root = [false; 6];
    if let Some(s) = prev {
        let open_old = |r: usize| s.mask >> r & 1 == 1;
        for a in 0..3 {
            for b in 0..3 {
                if open_old(a) && open_old(b) && s.label[a] == s.label[b] {
                    join(&mut parent, a, b);
                }
            }
            if open_old(a) && open_new(a) {
                join(&mut parent, a, 3 + a);
            }
        }
        for r in 0..3 {
            if open_old(r) && s.left[s.label[r] as usize] {
                let root = find(&mut parent, r);
                left_root[root] = true;
            }
        }
    }
    for r in 0..2 {
        if open_new(r) && open_new(r + 1) {
            join(&mut parent, 3 + r, 4 + r);
        }
    }
    if prev.is_some() {
        // roots may have moved after the vertical joins
        let mut moved = [false; 6];
        for i in 0..6 {
            if left_root[i] {
                let root = find(&mut parent, i);
                moved[root] = true;
            }
        }
        left_root = moved;
    }
    let mut out = ColumnState {
        mask,
        label: [0; 3],
        left: [false; 3],
    };
    let mut names: Vec<usize> = Vec::new();
    for r in 0..3 {
        if !open_new(r) {
            continue;
        }
        let root = find(&mut parent, 3 + r);
        let id = names.iter().position(|&x| x == root).unwrap_or_else(|| {
            names.push(root);
            names.len() - 1
        });
        out.label[r] = id as u8;
        out.left[id] = prev.is_none() || left_root[root];
    }
    out
}

/// Exact probability of the rectangle event for m = 3 on the 9x3 grid.
fn rectangle_exact(p: f64) -> f64 {
    let weight = |bits: u32, n: u32| {
        let k = bits.count_ones() as i32;
        p.powi(k) * (1.0 - p).powi(n as i32 - k)
    };
    let column = |bits: u32, x: usize| -> u8 { ((0..3).map(|y| (bits >> (x + 3 * y) & 1) << y).sum::<u32>()) as u8 };
    let mut states: HashMap<ColumnState, f64> = HashMap::new();
    for a in 0u32..512 {
        if !block_tb(a) {
            continue;
        }
        let mut s = step(None, column(a, 0));
        s = step(Some(&s), column(a, 1));
        s = step(Some(&s), column(a, 2));
        *states.entry(s).or_default() += weight(a, 9);
    }
    for _ in 0..3 {
        let mut next: HashMap<ColumnState, f64> = HashMap::new();
        for (s, w) in &states {
            for mask in 0u8..8 {
                let t = step(Some(s), mask);
                *next.entry(t).or_default() += w * weight(mask as u32, 3);
            }
        }
        states = next;
    }
    let mut total = 0.0;
    for (s, w) in &states {
        for c in 0u32..512 {
            if !block_tb(c) {
                continue;
            }
            let mut t = step(Some(s), column(c, 0));
            t = step(Some(&t), column(c, 1));
            t = step(Some(&t), column(c, 2));
            let crossed = (0..3).any(|r| t.mask >> r & 1 == 1 && t.left[t.label[r] as usize]);
            if crossed {
                total += w * weight(c, 9);
            }
        }
    }
    total
}

#[test]
fn transfer_oracle_agrees_with_brute_force_on_a_thin_strip() {
    // sanity check of the transfer helper alone: left-right crossing of a
    // 4x3 strip without the block conditions
    let p: f64 = 0.6;
    let mut brute = 0.0;
    for bits in 0u32..(1 << 12) {
        let open: Vec<bool> = (0..12).map(|i| bits >> i & 1 == 1).collect();
        if grid_crosses(&open, 4, 3) {
            let k = bits.count_ones() as i32;
            brute += p.powi(k) * (1.0 - p).powi(12 - k);
        }
    }
    let mut states: HashMap<Option<ColumnState>, f64> = HashMap::from([(None, 1.0)]);
    for _ in 0..4 {
        let mut next = HashMap::new();
        for (s, w) in &states {
            for mask in 0u8..8 {
                let k = mask.count_ones() as i32;
                let t = step(s.as_ref(), mask);
                *next.entry(Some(t)).or_default() += w * p.powi(k) * (1.0 - p).powi(3 - k);
            }
        }
        states = next;
    }
    let transfer: f64 = states
        .iter()
        .filter(|(s, _)| {
            let s = s.as_ref().unwrap();
            (0..3).any(|r| s.mask >> r & 1 == 1 && s.left[s.label[r] as usize])
        })
        .map(|(_, w)| w)
        .sum();
    assert!((brute - transfer).abs() < 1e-12, "{brute} vs {transfer}");
}

#[test]
fn rectangle_event_matches_transfer_matrix() {
    let exec = Exec::default();
    for p in [0.5, 0.6, 0.7, 0.8] {
        let exact = rectangle_exact(p);
        let est = b1_estimate(p, 3, 40_000, 21, &exec).unwrap();
        assert!(within(&est, exact, 4.0), "p={p}: {} vs {exact}", est.p_hat);
    }
}

#[test]
fn rectangle_critical_value_matches_brute_force_events() {
    let ev = RectangleEvent::new(3, 5).unwrap();
    for trial in 0..300 {
        let u = ev.uniforms(trial);
        let c = ev.critical_of(&u);
        for p in [0.4, 0.55, 0.7, 0.85] {
            let bits: u32 = (0..27).filter(|&i| u[i] < p).map(|i| 1 << i).sum();
            let open: Vec<bool> = (0..27).map(|i| bits >> i & 1 == 1).collect();
            let block = |x0: usize| -> u32 {
                (0..9).filter(|&i| open[x0 + i % 3 + 9 * (i / 3)]).map(|i| 1 << i).sum()
            };
            let event = grid_crosses(&open, 9, 3) && block_tb(block(0)) && block_tb(block(6));
            assert_eq!(event, c < p, "trial {trial} p {p}");
        }
    }
}
