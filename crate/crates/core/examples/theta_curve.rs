//! Level-k crossing and sheet probabilities over a density grid, all from one
//! coupled batch of realizations.

use fracperc::estimate::{crossing_curve, Target};
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    let exec = Exec::default();
    let ps: Vec<f64> = (0..=10).map(|i| 0.6 + 0.04 * i as f64).collect();
    let path = crossing_curve(Target::Theta { n: 3, d: 2, k: 3 }, &ps, 4000, 7, &exec)?;
    let sheet = crossing_curve(Target::ThetaTilde { n: 2, d: 3, k: 3 }, &ps, 1000, 7, &exec)?;
    println!("{:>6} {:>22} {:>22}", "p", "theta N=3 d=2 k=3", "sheet N=2 d=3 k=3");
    for ((p, a), b) in ps.iter().zip(&path).zip(&sheet) {
        println!(
            "{p:>6.2} {:>8.4} [{:.3},{:.3}] {:>8.4} [{:.3},{:.3}]",
            a.p_hat, a.ci_low, a.ci_high, b.p_hat, b.ci_low, b.ci_high
        );
    }
    Ok(())
}
