use std::path::PathBuf;
use std::process::ExitCode;

use chaincoord::finality::{catchup_probability, FinalityRow};
use chaincoord::par::Exec;
use chaincoord::scenario::{compare_strategies, load_scenario, run};
use chaincoord::strength::{
    phaseout_check, standard_table, strength_bits, Model, Property, SignatureScheme, StrengthQuery,
};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

#[derive(Parser)]
#[command(name = "chaincoord", version, about = "Coordination blockchain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Primitive {
    Digest,
    EcdsaSecp256k1,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to table on stdout and json with --out.
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attacker catch-up probability, optionally checked by Monte Carlo.
    Finality {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        z: u64,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Security strength in bits of a primitive, or the standard table.
    Strength {
        #[arg(long, required_unless_present = "table")]
        bits: Option<u32>,
        #[arg(long)]
        truncate: Option<u32>,
        #[arg(long, required_unless_present = "table")]
        property: Option<String>,
        #[arg(long, required_unless_present = "table")]
        model: Option<String>,
        #[arg(long, value_enum, default_value_t = Primitive::Digest)]
        primitive: Primitive,
        /// Print the table for the simulator's own primitives.
        #[arg(long)]
        table: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run a scenario with direct and with hierarchical pinning.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_VALIDATION)
}

/// Exit status for a finished run: any broken invariant outranks success.
fn status(violations: &[String]) -> u8 {
    if violations.is_empty() {
        0
    } else {
        EXIT_INVARIANT
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            seed,
            format,
            out,
        } => {
            let cfg = match load_scenario(&scenario) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let report = run(&cfg, seed);
            let format = format.unwrap_or(if out.is_some() { Format::Json } else { Format::Table });
            let text = match format {
                Format::Table => report.to_table(),
                Format::Json => report.to_json() + "\n",
                Format::Csv => report.to_csv(),
            };
            if let Err(e) = emit(&text, out.as_ref()) {
                return fail(e);
            }
            for v in &report.invariant_violations {
                eprintln!("invariant violation: {v}");
            }
            ExitCode::from(status(&report.invariant_violations))
        }
        Command::Finality {
            q,
            z,
            trials,
            seed,
            format,
        } => {
            let row = match trials {
                Some(n) => FinalityRow::compute(Exec::default(), q, z, n, seed),
                None => catchup_probability(q, z).map(|p| FinalityRow {
                    q,
                    z,
                    analytic_p: p,
                    empirical_p: f64::NAN,
                    trials: 0,
                    stderr: f64::NAN,
                }),
            };
            let row = match row {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&row).expect("serializes") + "\n",
                Format::Csv => format!("{}\n{}\n", FinalityRow::HEADER, row.to_csv()),
                Format::Table if row.trials == 0 => format!("q={q} z={z} catch-up probability {:.7}\n", row.analytic_p),
                Format::Table => format!(
                    "q={q} z={z} analytic {:.7} empirical {:.7} (stderr {:.7}, {} trials)\n",
                    row.analytic_p, row.empirical_p, row.stderr, row.trials
                ),
            };
            print!("{text}");
            ExitCode::SUCCESS
        }
        Command::Strength {
            bits,
            truncate,
            property,
            model,
            primitive,
            table,
            format,
        } => {
            if table {
                let rows = standard_table();
                let text = match format {
                    Format::Json => serde_json::to_string_pretty(&rows).expect("serializes") + "\n",
                    Format::Csv => {
                        let mut s = String::from("primitive,property,model,bits,verdict\n");
                        for r in &rows {
                            s += &format!("{},{:?},{:?},{},{}\n", r.primitive, r.property, r.model, r.bits, r.verdict);
                        }
                        s
                    }
                    Format::Table => {
                        let mut s = String::new();
                        for r in &rows {
                            s += &format!(
                                "{:<16} {:<15} {:<22} {:>7.2} {}\n",
                                r.primitive,
                                format!("{:?}", r.property),
                                format!("{:?}", r.model),
                                r.bits,
                                r.verdict
                            );
                        }
                        s
                    }
                };
                print!("{text}");
                return ExitCode::SUCCESS;
            }
            let (Some(bits), Some(property), Some(model)) = (bits, property, model) else {
                return fail("--bits, --property and --model are required");
            };
            let property: Property = match property.parse() {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            let model: Model = match model.parse() {
                Ok(m) => m,
                Err(e) => return fail(e),
            };
            let query = match primitive {
                Primitive::Digest => StrengthQuery::digest(bits, truncate.unwrap_or(bits), property, model),
                Primitive::EcdsaSecp256k1 => StrengthQuery {
                    property,
                    ..StrengthQuery::signature(SignatureScheme::EcdsaSecp256k1, model)
                },
            };
            let strength = match strength_bits(&query) {
                Ok(b) => b,
                Err(e) => return fail(e),
            };
            let verdict = phaseout_check(strength);
            let text = match format {
                Format::Json => {
                    serde_json::to_string_pretty(&serde_json::json!({"query": query, "bits": strength, "verdict": verdict}))
                        .expect("serializes")
                        + "\n"
                }
                Format::Csv => format!("bits,verdict\n{strength},{verdict}\n"),
                Format::Table => format!("{strength} bits ({verdict})\n"),
            };
            print!("{text}");
            ExitCode::SUCCESS
        }
        Command::Compare { scenario, format } => {
            let cfg = match load_scenario(&scenario) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let cmp = match compare_strategies(&cfg, Exec::default()) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let text = match format {
                Format::Table => cmp.to_table(),
                Format::Json => cmp.to_json() + "\n",
                Format::Csv => cmp.to_csv(),
            };
            print!("{text}");
            ExitCode::from(status(&cmp.invariant_violations))
        }
    }
}
