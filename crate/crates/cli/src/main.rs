use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use blelab_core::lab::{self, LabError};
use blelab_core::protocol::gatt::format_uuid;
use blelab_core::stride::{enumerate_threats, shipped_dfd, DfdModel};

#[derive(Parser)]
#[command(name = "blelab", version, about = "Deterministic BLE security lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its capture, report, table and summary.
    Run {
        scenario: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: out/<scenario name>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print a capture file one decoded line per record.
    Dissect {
        capture: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// List the STRIDE threats of a DFD (the shipped one by default).
    EnumerateThreats {
        #[arg(long)]
        dfd: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Show the shipped device profiles and GATT templates.
    ListProfiles {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn read(path: &Path) -> Result<String, LabError> {
    std::fs::read_to_string(path).map_err(|e| LabError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn run(scenario_path: &Path, seed: Option<u64>, out: Option<PathBuf>, format: Format) -> Result<String, LabError> {
    let mut scenario = lab::load_scenario(scenario_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let out = out.unwrap_or_else(|| {
        let stem = scenario_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("out").join(stem)
    });
    let result = lab::run(&scenario)?;
    let artifacts = result.write_artifacts(&scenario, &out)?;
    Ok(match format {
        Format::Text => {
            let mut text = result.report.render_table();
            text.push('\n');
            for s in &result.scripts {
                let target = s.target.as_deref().unwrap_or("-");
                let status = match &s.error {
                    Some(e) => format!("error: {e}"),
                    None if s.facts.is_empty() => "no facts".to_string(),
                    None => s.facts.keys().map(|f| f.as_str()).collect::<Vec<_>>().join(", "),
                };
                text.push_str(&format!(
                    "{:>12.3}s  {:<12} {:<24} {status}\n",
                    s.started_us as f64 / 1e6,
                    s.attack.as_str(),
                    target
                ));
            }
            text.push_str(&format!(
                "\ncapture: {}\nreport:  {}\ntable:   {}\nsummary: {}\n",
                artifacts.capture.display(),
                artifacts.report.display(),
                artifacts.table.display(),
                artifacts.summary.display()
            ));
            text
        }
        Format::Structured => result.report.to_json(),
    })
}

fn dissect(path: &Path, format: Format) -> Result<String, LabError> {
    let records = lab::parse_jsonl(&read(path)?)?;
    match format {
        Format::Text => lab::dissect_records(&records),
        Format::Structured => {
            let details = lab::describe_records(&records)?;
            let mut out = String::new();
            for (r, detail) in records.iter().zip(details) {
                let line = serde_json::json!({
                    "seq": r.seq,
                    "timestamp_us": r.timestamp_us,
                    "channel": r.channel,
                    "pdu_type": r.pdu_type,
                    "sender": r.sender,
                    "detail": detail,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn threats(dfd: Option<PathBuf>, format: Format) -> Result<String, LabError> {
    let model = match dfd {
        Some(path) => DfdModel::from_toml(&read(&path)?)?,
        None => shipped_dfd(),
    };
    let threats = enumerate_threats(&model)?;
    Ok(match format {
        Format::Structured => serde_json::to_string_pretty(&threats).expect("threats serialize") + "\n",
        Format::Text => {
            let mut text = String::new();
            for t in &threats {
                text.push_str(&format!("{:<6} {:<18} {}\n", t.rule_id, t.element_id, t.description));
            }
            text.push_str(&format!("{} threats\n", threats.len()));
            text
        }
    })
}

fn profiles(format: Format) -> String {
    let profiles = lab::shipped_profiles();
    let templates = lab::gatt_templates();
    match format {
        Format::Structured => {
            let value = serde_json::json!({ "profiles": profiles, "gatt_templates": templates });
            serde_json::to_string_pretty(&value).expect("profiles serialize") + "\n"
        }
        Format::Text => {
            let mut text = String::new();
            for (name, p) in &profiles {
                text.push_str(&format!(
                    "{name}\n  pairing={} encryption={} address={:?} write_auth={} anti_replay={:?} echo_rate_limit={} discoverable={} radio={:?}\n",
                    p.pairing_method.as_str(),
                    p.link_encryption,
                    p.address_policy,
                    p.write_auth_required,
                    p.anti_replay,
                    p.echo_rate_limit.map_or("none".to_string(), |r| format!("{r}/s")),
                    p.discoverable,
                    p.radio_class,
                ));
            }
            text.push_str("\nGATT templates\n");
            for (name, t) in &templates {
                let uuids: Vec<String> = t.services.iter().map(|s| format_uuid(s.uuid)).collect();
                let info = if t.device_info.is_some() { "device info + " } else { "" };
                text.push_str(&format!("  {name}: {info}{}\n", uuids.join(", ")));
            }
            text
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out, format } => run(&scenario, seed, out, format),
        Command::Dissect { capture, format } => dissect(&capture, format),
        Command::EnumerateThreats { dfd, format } => threats(dfd, format),
        Command::ListProfiles { format } => Ok(profiles(format)),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
