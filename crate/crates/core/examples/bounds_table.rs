//! Deterministic bound pipeline over a doubling grid of N.

use fracperc::bounds::{bound_row, BoundParams};

fn main() -> fracperc::Result<()> {
    let y0 = 1.0 / 1296.0;
    println!("{:>7} {:>4} {:>12} {:>12} {:>12}  status", "N", "m", "delta*", "y2", "1 - bound");
    for e in 8..=16 {
        let base = BoundParams::with_constants(1 << e, 1, y0 / 2.0, y0, 1.0, 1.0, 3.0, 6.0, 1.0)?;
        let row = bound_row(&base.with_m(base.max_m().max(1)), 10_000);
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>7} {:>4} {:>12} {:>12} {:>12}  {}",
            row.n,
            row.m,
            cell(row.delta_star),
            cell(row.y2),
            cell(row.bound.map(|b| 1.0 - b)),
            row.status
        );
    }
    Ok(())
}
