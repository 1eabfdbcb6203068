//! Drives the experiment runner from code: a swept spec, records written as
//! CSV and JSON, then one record replayed from its echoed spec.

use fracperc::runner::{run, sweep, write_records, Experiment, Format, OutputOptions, RunSpec};

fn main() -> fracperc::Result<()> {
    let spec = RunSpec::new(Experiment::Theta)
        .with("N", 2)
        .with("k", 2)
        .with("p", "0.7:0.9:0.05")
        .with("trials", 2000);
    let records = sweep(&spec)?;
    let dir = std::env::temp_dir().join("fracperc-run-spec");
    let opts = OutputOptions {
        dir,
        format: Format::Both,
    };
    for path in write_records(&records, &opts)? {
        println!("wrote {}", path.display());
    }
    let replay = run(&records[0].rerun_spec())?;
    println!("replay identical: {}", replay.payload == records[0].payload);
    Ok(())
}
