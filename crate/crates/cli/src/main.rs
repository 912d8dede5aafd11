//! `harvest-sim`: scenario runner for the energy-harvesting node simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harvest_sim::controller::Thresholds;
use harvest_sim::engine::{self, Recording};
use harvest_sim::scenario::{self, validate_json, Scenario};
use harvest_sim::sizing::{self, ApcSketch};
use harvest_sim::workload::builtin_library;
use harvest_sim::SimError;

#[derive(Parser)]
#[command(name = "harvest-sim", version, about = "Simulate vibration-powered battery-free sensor nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario JSON file.
    scenario: Option<PathBuf>,
    /// Use a built-in scenario instead of a file.
    #[arg(long, conflicts_with = "scenario")]
    builtin: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write waveform.csv and report.json.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Keep every N-th waveform step (steps with events are always kept).
        #[arg(long, default_value_t = 1)]
        stride: u64,
    },
    /// Run one scenario per value of a numeric parameter.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Dotted field path, e.g. solution.fs.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Minimum storage capacitance for a task budget.
    Size {
        #[arg(long)]
        e_task: f64,
        #[arg(long, default_value_t = 0.0)]
        static_energy: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long)]
        v_start: f64,
        #[arg(long)]
        v_close: f64,
    },
    /// Screen APC polling frequencies.
    Band {
        #[arg(long)]
        capacitance: f64,
        /// v_pstart,v_pgood,v_psleep,v_pclose
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 1.29e-6)]
        e_adc: f64,
        #[arg(long)]
        base_power: f64,
        #[arg(long)]
        checkpoint_energy: f64,
        #[arg(long)]
        max_dv_dt: f64,
        #[arg(long)]
        min_harvest: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        fs: Vec<f64>,
    },
    /// Print the built-in task energy table.
    Library,
    /// Check a scenario file and list every violation.
    Validate { scenario: PathBuf },
    /// Print a built-in scenario as JSON.
    Show { name: String },
}

enum Failure {
    Config(String),
    Audit(String),
    Internal(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config { .. } | SimError::Parse { .. } | SimError::Validation(_) | SimError::Domain(_) | SimError::UnknownOp(_) | SimError::Io { .. } => {
                Failure::Config(e.to_string())
            }
            SimError::Audit { .. } => Failure::Audit(e.to_string()),
        }
    }
}

fn load(source: &Source) -> Result<Scenario, Failure> {
    match (&source.scenario, &source.builtin) {
        (_, Some(name)) => Ok(scenario::builtin(name)?),
        (Some(path), None) => Ok(Scenario::load(path)?),
        (None, None) => Err(Failure::Config("give a scenario file or --builtin NAME".into())),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { source, out, stride } => {
            let s = load(&source)?;
            let (rows, report) = engine::simulate_recorded(&s, Recording::every(stride))?;
            engine::write_outputs(&out, &rows, &report)?;
            engine::energy_audit(&report)?;
            println!(
                "{}: cold_start={} boots={} outages={} checkpoints={} restores={} iterations={}",
                report.scenario,
                report.cold_start_time.map(|t| format!("{t:.4}s")).unwrap_or_else(|| "none".into()),
                report.boots,
                report.outages,
                report.checkpoints,
                report.restores,
                report.iterations_completed
            );
        }
        Command::Sweep {
            source,
            param,
            values,
            out,
            jobs,
        } => {
            let s = load(&source)?;
            let reports = engine::sweep(&s, &param, &values, jobs)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
            for (i, r) in reports.iter().enumerate() {
                write(&out.join(format!("report_{i}.json")), &(r.to_json() + "\n"))?;
            }
            let summary = engine::sweep_summary_csv(&param, &values, &reports);
            write(&out.join("sweep.csv"), &summary)?;
            print!("{summary}");
            for r in &reports {
                engine::energy_audit(r)?;
            }
        }
        Command::Size {
            e_task,
            static_energy,
            eta,
            v_start,
            v_close,
        } => {
            let c = sizing::min_capacitance(e_task, static_energy, eta, v_start, v_close)?;
            println!("{}", json(&serde_json::json!({ "min_capacitance": c }))?);
        }
        Command::Band {
            capacitance,
            thresholds,
            e_adc,
            base_power,
            checkpoint_energy,
            max_dv_dt,
            min_harvest,
            fs,
        } => {
            if thresholds.len() != 4 {
                return Err(Failure::Config(format!("--thresholds takes 4 values, got {}", thresholds.len())));
            }
            let sketch = ApcSketch {
                capacitance,
                thresholds: Thresholds {
                    v_pstart: thresholds[0],
                    v_pgood: thresholds[1],
                    v_psleep: thresholds[2],
                    v_pclose: thresholds[3],
                },
                e_adc,
                base_power,
                checkpoint_energy,
                max_dv_dt,
                min_harvest,
            };
            println!("{}", json(&sizing::apc_band(&sketch, &fs)?)?);
        }
        Command::Library => {
            let lib = builtin_library();
            let table: serde_json::Map<String, serde_json::Value> = lib
                .iter()
                .map(|(k, v)| Ok((k.to_string(), serde_json::to_value(v).map_err(|e| Failure::Internal(e.to_string()))?)))
                .collect::<Result<_, Failure>>()?;
            println!("{}", json(&table)?);
        }
        Command::Validate { scenario } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Failure::Config(format!("{}: {e}", scenario.display())))?;
            let diags = validate_json(&text);
            println!("{}", json(&diags)?);
            if !diags.is_empty() {
                let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
                return Err(Failure::Config(lines.join("\n")));
            }
        }
        Command::Show { name } => println!("{}", scenario::builtin(&name)?.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("harvest-sim: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Audit(m)) => {
            eprintln!("harvest-sim: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("harvest-sim: internal error: {m}");
            ExitCode::from(1)
        }
    }
}
