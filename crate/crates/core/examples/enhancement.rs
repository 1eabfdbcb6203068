//! Enhancement and diminishment: the essentiality witnesses, then crossing
//! probabilities under the three boundary conditions.

use fracperc::enhance::{essentiality_witness, phi_ns, psi_ns, Boundary, EnhanceParams, Model};
use fracperc::exec::Exec;

fn main() -> fracperc::Result<()> {
    for model in [Model::Diminishment, Model::Enhancement] {
        let w = essentiality_witness(model);
        println!(
            "{model:?}: activating {:?} flips the crossing {} -> {}",
            w.site, w.crossed_before, w.crossed_after
        );
    }

    let exec = Exec::default();
    for boundary in [Boundary::Bernoulli, Boundary::AllOpen, Boundary::AllClosed] {
        let dim = EnhanceParams::new(0.62, 0.5, Model::Diminishment, boundary)?;
        let enh = EnhanceParams::new(0.38, 0.5, Model::Enhancement, boundary)?;
        let phi = phi_ns(&dim, 32, 2, 2000, 3, &exec)?;
        let psi = psi_ns(&enh, 32, 2, 2000, 3, &exec)?;
        println!("{boundary:?}: phi_32(0.62, 0.5) = {:.4}, psi_32(0.38, 0.5) = {:.4}", phi.p_hat, psi.p_hat);
    }
    Ok(())
}
