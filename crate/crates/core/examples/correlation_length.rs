//! Supercritical correlation length on the square lattice as p approaches
//! the critical point from above.

use fracperc::estimate::correlation_length;
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    let exec = Exec::default();
    for p in [0.75, 0.7, 0.67, 0.65] {
        let c = correlation_length(p, 0.1, 256, 1000, 5, &exec)?;
        match c.n {
            Some(n) => println!("p = {p}: L = {n} (separated: {})", c.separated),
            None => println!("p = {p}: beyond side 256"),
        }
    }
    Ok(())
}
