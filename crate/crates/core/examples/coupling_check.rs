//! Compares fractal crossing probabilities with the diminishment bound on a
//! box of side N^k.

use fracperc::estimate::{coupling_inequality_check, CouplingConfig};
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    let exec = Exec::default();
    let cfg = CouplingConfig::new(3, 2, 2, 2000);
    let report = coupling_inequality_check(&[0.74, 0.78, 0.82, 0.86], &cfg, false, 13, &exec)?;
    for r in &report.rows {
        println!(
            "p = {:.2}: fractal {:.4} <= model {:.4} (boundary-closed {:.4}) at s = {:.4}: {}",
            r.p, r.lhs.p_hat, r.rhs.p_hat, r.rhs_q.p_hat, r.s, r.holds && r.holds_q
        );
    }
    Ok(())
}
