use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cutspline::assembly::Scheme;
use cutspline::harness::{self, RunConfig, SweepRow, Target};
use cutspline::Error;

#[derive(Parser)]
#[command(name = "cutspline", version, about = "Mass-matrix formation benchmarks on cut B-spline meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble, stabilize and solve one projection; prints a JSON report.
    Run(RunArgs),
    /// Convergence sweep over degrees and mesh sizes; prints CSV.
    Sweep(SweepArgs),
    /// Run all three schemes on the same mesh; prints a JSON comparison.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Setup {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Point on the interface, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    plane_point: Option<Vec<f64>>,
    /// Normal of the interface pointing out of the domain, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    plane_normal: Option<Vec<f64>>,
    /// trig (sin(2xz) cos(3yz)), constant or poly:<k>.
    #[arg(long, default_value = "trig")]
    target: Target,
    /// Gauss points per direction on cut-cell simplices (default 3p+2).
    #[arg(long)]
    cut_quad_order: Option<usize>,
    /// Report the fastest of k assemblies.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Solve without extended B-splines.
    #[arg(long)]
    no_stabilize: bool,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 8)]
    h: usize,
    #[arg(long, default_value = "dwq")]
    scheme: Scheme,
    /// Write the assembled mass matrix in Matrix Market format.
    #[arg(long)]
    export_matrix: Option<PathBuf>,
    #[command(flatten)]
    setup: Setup,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    h: Vec<usize>,
    #[arg(long, default_value = "dwq")]
    scheme: Scheme,
    #[command(flatten)]
    setup: Setup,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 8)]
    h: usize,
    #[command(flatten)]
    setup: Setup,
}

fn config(setup: &Setup, p: usize, h: usize, scheme: Scheme) -> Result<RunConfig, Error> {
    let mut c = RunConfig::new(setup.dim, p, h, scheme);
    if let Some(q) = &setup.plane_point {
        c.plane_point = q.clone();
    }
    if let Some(n) = &setup.plane_normal {
        c.plane_normal = n.clone();
    }
    c.target = setup.target;
    c.cut_quad_order = setup.cut_quad_order;
    c.repeat = setup.repeat;
    c.stabilize = !setup.no_stabilize;
    c.threads = harness::threads_from_env()?;
    c.validate()?;
    Ok(c)
}

fn output(path: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

const CSV_HEADER: [&str; 13] = [
    "p",
    "h",
    "scheme",
    "n_active",
    "error_rel_l2",
    "order",
    "prep_wq",
    "prep_input",
    "interior",
    "cut_regular",
    "cut_elements",
    "total",
    "cg_iters",
];

fn sweep_csv(rows: &[SweepRow]) -> Result<String, Error> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.p.to_string(), r.h.to_string(), r.scheme.to_string()];
        match &r.outcome {
            Ok(rep) => {
                let t = &rep.timing;
                rec.push(rep.n_active.to_string());
                rec.push(format!("{:e}", rep.error_rel_l2));
                rec.push(r.order.map(|o| format!("{o:.4}")).unwrap_or_default());
                for v in [t.prep_wq, t.prep_input, t.interior_rows, t.cut_regular, t.cut_elements, t.total] {
                    rec.push(format!("{v:.6e}"));
                }
                rec.push(rep.cg_iterations.to_string());
            }
            Err(msg) => {
                rec.push(String::new());
                rec.push(format!("failed: {msg}"));
                rec.extend(std::iter::repeat_n(String::new(), CSV_HEADER.len() - 5));
            }
        }
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(a) => {
            let mut c = config(&a.setup, a.p, a.h, a.scheme)?;
            c.export_matrix = a.export_matrix;
            let out = harness::run(&c)?;
            output(&a.setup.out, &json(&out.report))
        }
        Command::Sweep(a) => {
            let base = config(&a.setup, a.p.first().copied().unwrap_or(2), a.h.first().copied().unwrap_or(4), a.scheme)?;
            let rows = harness::sweep(&base, &a.p, &a.h)?;
            output(&a.setup.out, &sweep_csv(&rows)?)
        }
        Command::Compare(a) => {
            let c = config(&a.setup, a.p, a.h, Scheme::Ref)?;
            output(&a.setup.out, &json(&harness::compare(&c)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let obj = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}
