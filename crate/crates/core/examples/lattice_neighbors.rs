//! Neighbor stencils of ℒ^d and ℳ^d, and a crossing check on a small box.

use fracperc::lattice::{neighbors, offsets, Adjacency, Axis, BoxShape};
use fracperc::percolation::{crossing, SiteConfig};

fn main() -> fracperc::Result<()> {
    for d in 2..=3 {
        for adj in [Adjacency::L, Adjacency::M] {
            println!("d={d} {adj}: {} neighbors", offsets(d, adj).len());
        }
    }

    let shape = BoxShape::new(2, 4)?;
    println!("corner (0,0) on L: {:?}", neighbors(&[0, 0], &shape, Adjacency::L)?);
    println!("corner (0,0) on M: {:?}", neighbors(&[0, 0], &shape, Adjacency::M)?);

    // a diagonal staircase crosses on M but not on L
    let diag: Vec<Vec<usize>> = (0..4).map(|i| vec![i, i]).collect();
    let config = SiteConfig::from_open_cells(shape, &diag)?;
    for adj in [Adjacency::L, Adjacency::M] {
        println!("diagonal crosses on {adj}: {}", crossing(&config, adj, Axis::FIRST)?.crossed);
    }
    Ok(())
}
