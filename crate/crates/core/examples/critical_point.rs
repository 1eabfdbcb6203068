//! Stochastic bisection for the fractal critical point and for site
//! percolation on a large square box.

use fracperc::estimate::{critical_point, lattice_critical_point, CriticalConfig, Target};
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    let exec = Exec::default();
    let cfg = CriticalConfig {
        lo: 0.5,
        tol: 2e-3,
        initial_trials: 1000,
        max_trials: 4000,
        ..CriticalConfig::default()
    };
    for n in [2, 3] {
        let e = critical_point(Target::Theta { n, d: 2, k: 3 }, &cfg, 1, &exec)?;
        println!(
            "pc({n}, 2) at level 3: {:.4} in [{:.4}, {:.4}] after {} steps, {} trials",
            e.p_hat,
            e.bracket.0,
            e.bracket.1,
            e.steps.len(),
            e.trials_per_step
        );
    }
    let lat = lattice_critical_point(64, &CriticalConfig { lo: 0.0, ..cfg }, 1, &exec)?;
    println!("square lattice, side 64: {:.4} in [{:.4}, {:.4}]", lat.p_hat, lat.bracket.0, lat.bracket.1);
    Ok(())
}
