use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use fracperc::runner::{sweep, write_records, OutputOptions, ResultRecord, RunSpec, OUT_DIR_ENV};

/// Fractal percolation experiment runner.
///
/// Parameters are flat `--key value` pairs, for example
/// `fracperc theta --N 2 --d 2 --k 1 --p 0.5 --trials 100000 --seed 7`.
/// One parameter may be ranged (`a,b,c`, `a:b:step` or `a:b:*factor`) to
/// run a sweep.
#[derive(Parser, Debug)]
#[command(version, after_help = format!(
    "Experiments: theta sheet phi psi enhance diminish pc corrlen scaling bounds couple validate\n\
     Common keys: --seed --threads --out --format csv|json|both\n\
     Default output directory: ${OUT_DIR_ENV}, else ./results"
))]
struct Cli {
    /// Experiment name.
    experiment: String,
    /// `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    params: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = RunSpec::parse(&cli.experiment, &cli.params).and_then(|spec| {
        let opts = OutputOptions::from_spec(&spec)?;
        let records = sweep(&spec)?;
        let paths = write_records(&records, &opts)?;
        // a closed pipe (e.g. `| head`) only cuts the summary short
        let _ = summarize(&records, &paths);
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fracperc: {e}");
            ExitCode::from(if matches!(e, fracperc::Error::Usage(_)) { 2 } else { 1 })
        }
    }
}

fn summarize(records: &[ResultRecord], paths: &[std::path::PathBuf]) -> io::Result<()> {
    let mut out = io::stdout().lock();
    for r in records {
        let point = r.sweep.as_ref().map(|s| format!(" {}={}", s.key, s.value)).unwrap_or_default();
        writeln!(out, "{}{point}: {:.3}s", r.experiment, r.wall_time_s)?;
        for row in &r.table.rows {
            let cells: Vec<String> = r.table.columns.iter().zip(row).map(|(c, v)| format!("{c}={v}")).collect();
            writeln!(out, "  {}", cells.join(" "))?;
        }
    }
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}
