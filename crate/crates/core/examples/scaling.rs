//! Log-log fit of pc(N, 2) - pc(lattice) against 1/N at a small budget.

use fracperc::estimate::{lattice_critical_point, scaling_experiment, CriticalConfig};
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    let exec = Exec::default();
    let cfg = CriticalConfig {
        tol: 2e-3,
        initial_trials: 500,
        max_trials: 2000,
        ..CriticalConfig::default()
    };
    let lattice = lattice_critical_point(64, &cfg, 9, &exec)?;
    let fit = scaling_experiment(&[2, 3, 4, 5, 6], 2, lattice, &CriticalConfig { lo: 0.5, ..cfg }, 9, &exec)?;
    for pt in &fit.points {
        println!("N = {:>2}: pc = {:.4}, diff = {:.4} +- {:.4}", pt.n, pt.estimate.p_hat, pt.diff, pt.diff_half_width);
    }
    println!(
        "slope {:.3} +- {:.3}, low confidence: {}",
        fit.nu_hat_inv, fit.slope_se, fit.low_confidence
    );
    Ok(())
}
