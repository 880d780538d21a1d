use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use forensicross::case::{CaseNumber, StageIndex};
use forensicross::chain::ChainId;
use forensicross::provenance::TamperMutation;
use forensicross::simnet::{self, CompareTemplate, Scenario, Simulation};
use forensicross::topology;

const OUT_ENV: &str = "FORENSICROSS_OUT";

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_TAMPERED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "forensicross",
    about = "Cross-chain forensic case simulator and provenance checker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.jsonl, metrics.csv and snapshot.json
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (FORENSICROSS_OUT takes precedence)
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Replace the scenario's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Mutual-node and hop-count comparison of the mesh and bridge designs
    Topology {
        #[arg(long, default_value_t = 2)]
        k_min: u64,
        #[arg(long, default_value_t = 10)]
        k_max: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Measure durations and message counts in the simulator instead
        #[arg(long)]
        simulate: bool,
        /// Also write the table to <out>/topology.csv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario, tamper with off-chain records and localize the damage
    ProvenanceDemo {
        #[arg(long)]
        scenario: PathBuf,
        /// chain:stage:txindex, repeatable
        #[arg(long = "tamper")]
        tamper: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the version
    Version,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Validation(_) => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) => m,
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os(OUT_ENV).map(PathBuf::from).or(flag)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let src = fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Failure::Usage(format!("file not found: {}", path.display())),
        _ => Failure::Usage(format!("cannot read {}: {e}", path.display())),
    })?;
    let mut scenario =
        Scenario::from_toml_str(&src).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .and_then(|()| fs::write(dir.join(name), contents))
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn cmd_run(scenario: &Path, out: PathBuf, seed: Option<u64>, format: Format) -> Result<u8, Failure> {
    let scenario = load_scenario(scenario, seed)?;
    let output = simnet::run(scenario).map_err(|e| Failure::Validation(e.to_string()))?;
    let dir = out_dir(Some(out)).expect("flag has a default");
    output
        .write_to(&dir)
        .map_err(|e| Failure::Usage(format!("cannot write to {}: {e}", dir.display())))?;
    let s = &output.snapshot.summary;
    match format {
        Format::Csv => print!("{}", output.metrics_csv()),
        Format::Text => {
            println!("wrote {}", dir.display());
            println!(
                "ticks {}  blocks {}  envelopes {}  hops {} (validated {}, rejected {}, expired {})",
                s.final_tick,
                s.blocks_mined,
                s.envelopes_sent,
                s.hops_started,
                s.hops_validated,
                s.hops_rejected,
                s.hops_expired
            );
            for r in &output.reports {
                println!(
                    "provenance {} at {}: {}",
                    r.report.case_number,
                    r.chain,
                    if r.report.all_intact() { "intact" } else { "TAMPERED" }
                );
            }
            if s.workload_errors + s.contract_errors > 0 {
                println!(
                    "workload errors {}  contract errors {}",
                    s.workload_errors, s.contract_errors
                );
            }
        }
    }
    if !s.completed {
        return Err(Failure::Validation(format!("tick limit reached at {}", s.final_tick)));
    }
    Ok(0)
}

fn cmd_topology(k_min: u64, k_max: u64, format: Format, simulate: bool, out: Option<PathBuf>) -> Result<u8, Failure> {
    if k_min < 1 || k_min > k_max {
        return Err(Failure::Usage(format!(
            "bad range: need 1 <= k_min <= k_max, got {k_min}..{k_max}"
        )));
    }
    let csv = if simulate {
        let rows = simnet::compare_designs(k_min, k_max, &CompareTemplate::default())
            .map_err(|e| Failure::Usage(e.to_string()))?;
        simnet::compare_table_csv(&rows)
    } else {
        let rows = topology::comparison_table(k_min, k_max).map_err(|e| Failure::Usage(e.to_string()))?;
        topology::table_csv(&rows)
    };
    if let Some(dir) = out_dir(out) {
        write_file(&dir, "topology.csv", &csv)?;
    }
    match format {
        Format::Csv => print!("{csv}"),
        Format::Text => print!("{}", align(&csv)),
    }
    Ok(0)
}

fn align(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn parse_tamper(spec: &str) -> Result<(ChainId, StageIndex, usize), Failure> {
    let bad = || Failure::Usage(format!("bad --tamper {spec:?}: expected chain:stage:txindex"));
    let mut parts = spec.split(':');
    let (Some(chain), Some(stage), Some(index), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if chain.is_empty() {
        return Err(bad());
    }
    Ok((
        ChainId::new(chain),
        stage.parse().map_err(|_| bad())?,
        index.parse().map_err(|_| bad())?,
    ))
}

fn cmd_provenance_demo(
    scenario: &Path,
    tamper: &[String],
    seed: Option<u64>,
    format: Format,
    out: Option<PathBuf>,
) -> Result<u8, Failure> {
    let targets = tamper.iter().map(|t| parse_tamper(t)).collect::<Result<Vec<_>, _>>()?;
    let scenario = load_scenario(scenario, seed)?;
    let sim = Simulation::new(scenario).map_err(|e| Failure::Validation(e.to_string()))?;
    let (output, mut world) = sim.finish();
    let registry = world
        .registry()
        .ok_or_else(|| Failure::Validation("provenance needs the bridge design".into()))?;
    let case = registry
        .cases()
        .next()
        .ok_or_else(|| Failure::Validation("NoCasesInScenario: the scenario created no case".into()))?;
    let case_number: CaseNumber = case.case_number.clone();
    let requester = *case
        .query_nodes
        .iter()
        .next()
        .ok_or_else(|| Failure::Validation(format!("case {case_number} has no query node")))?;
    for (chain, stage, index) in &targets {
        world
            .tamper(
                chain,
                &case_number,
                *stage,
                *index,
                &TamperMutation::FlipByte { offset: 0 },
            )
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    let report = world
        .extract_report(&case_number, &requester)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(dir) = out_dir(out) {
        output
            .write_to(&dir)
            .map_err(|e| Failure::Usage(format!("cannot write to {}: {e}", dir.display())))?;
        write_file(&dir, "tamper_report.csv", &report.cells_csv())?;
    }
    match format {
        Format::Csv => print!("{}", report.cells_csv()),
        Format::Text => {
            println!("case {case_number}");
            print!("{}", report.render_matrix());
        }
    }
    Ok(if report.all_intact() { 0 } else { EXIT_TAMPERED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            format,
        } => cmd_run(&scenario, out, seed, format),
        Command::Topology {
            k_min,
            k_max,
            format,
            simulate,
            out,
        } => cmd_topology(k_min, k_max, format, simulate, out),
        Command::ProvenanceDemo {
            scenario,
            tamper,
            seed,
            format,
            out,
        } => cmd_provenance_demo(&scenario, &tamper, seed, format, out),
        Command::Version => {
            println!("forensicross {}", env!("CARGO_PKG_VERSION"));
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
