//! Samples one fractal realization, reports retained cells per level and
//! writes the cell dump to stdout when `--dump` is given.

use std::io::{self, BufWriter};

use fracperc::fractal::{level_crossing, FractalParams, FractalRealization};
use fracperc::lattice::Axis;

fn main() -> fracperc::Result<()> {
    let dump = std::env::args().any(|a| a == "--dump");
    let params = FractalParams::new(3, 2, 0.8, 4)?;
    let r = FractalRealization::sample(params, 42)?;
    assert!(r.check_nesting());
    for k in 1..=params.k_max {
        let kept = r.retained(k)?.len();
        let total = params.side(k).pow(2);
        println!(
            "level {k}: {kept}/{total} cells, crossing {}, crossing threshold {:?}",
            level_crossing(&r, k, Axis::FIRST)?,
            r.crossing_threshold(k, Axis::FIRST)?
        );
    }
    if dump {
        r.write_dump(BufWriter::new(io::stdout().lock()))?;
    }
    Ok(())
}
