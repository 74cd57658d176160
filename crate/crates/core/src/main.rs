use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use modlab::config::{hopf_preset, parse_config, preset_figure, ConfigError, ExperimentConfig, Format};
use modlab::run::{run, run_floquet, run_hopf, run_invariants, run_sweep, RunError};

#[derive(Parser)]
#[command(name = "modlab", version, about = "Integrable-modulated mechanical systems laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Write SVG portraits/grids
    #[arg(long, global = true, overrides_with = "no_svg")]
    svg: bool,
    #[arg(long, global = true)]
    no_svg: bool,
    /// Seed for randomized test points
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured system and export trajectory, portraits, summary
    Simulate,
    /// Invariant drift report and Poisson-bracket check
    Invariants,
    /// Monodromy matrix and Floquet exponents of a linear periodic system
    Floquet,
    /// Parallel (a, q) stability sweep
    Sweep,
    /// Reproduce a figure preset
    Figure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        which: u8,
    },
    /// Frequency-adaptation experiment of the adaptive Hopf oscillator
    Hopf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, RunError> {
    let path = path.ok_or(ConfigError::Missing("--config"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

impl Cli {
    fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(f) = self.format {
            cfg.output.format = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
        }
        if self.no_svg {
            cfg.output.svg = false;
        } else if self.svg {
            cfg.output.svg = true;
        }
        cfg
    }

    fn execute(&self) -> Result<Option<String>, RunError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|source| {
            modlab::export::ExportError::Io { path: self.out_dir.clone(), source }
        })?;
        let out = self.out_dir.as_path();
        let config = || load(self.config.as_deref()).map(|c| self.apply(c));
        let report = |files: &[PathBuf]| {
            for f in files {
                println!("{}", f.display());
            }
        };
        match &self.command {
            Command::Simulate => {
                let art = run(&config()?, None, out)?;
                report(&art.files);
                eprintln!("verdict: {:?}", art.summary.verdict.overall);
                Ok(art.failure)
            }
            Command::Invariants => {
                let art = run_invariants(&config()?, self.seed, out)?;
                report(&art.files);
                Ok(art.failure)
            }
            Command::Floquet => {
                let art = run_floquet(&config()?, out)?;
                report(&art.files);
                eprintln!("classification: {:?}, max |λ| = {}", art.summary.classification, art.summary.max_modulus);
                Ok(None)
            }
            Command::Sweep => {
                let art = run_sweep(&config()?, out)?;
                report(&art.files);
                Ok(art.failure)
            }
            Command::Figure { which } => {
                if self.config.is_some() {
                    return Err(ConfigError::Invalid { field: "--config", rule: "figure presets take no config".into() }.into());
                }
                let preset = preset_figure(*which).expect("range checked by clap");
                if let Err(e) = preset.as_printed_check() {
                    eprintln!("figure {which}: as-printed parameters rejected ({e}); running positivity-adjusted set");
                }
                let art = run(&self.apply(preset.runnable()?), Some(&preset), out)?;
                report(&art.files);
                eprintln!("verdict: {:?}", art.summary.verdict.overall);
                Ok(art.failure)
            }
            Command::Hopf => {
                let cfg = match &self.config {
                    Some(_) => config()?,
                    None => self.apply(hopf_preset()),
                };
                let (art, _) = run_hopf(&cfg, out)?;
                report(&art.files);
                eprintln!("terminal mean ω = {}", art.summary.terminal_mean);
                Ok(None)
            }
        }
    }
}

fn exit_status(cli: &Cli) -> u8 {
    match cli.execute() {
        Ok(None) => 0,
        Ok(Some(failure)) => {
            eprintln!("numerical failure: {failure} (partial artifacts written)");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(exit_status(&Cli::parse()))
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    const OSCILLATOR: &str = r#"
system = "oscillator"
t_span = [0.0, 10.0]

[modulation]
kind = "cosine-squared"
a = 2.0
b = 1.0
freq = 1.0

[initial]
q = [1.0]
v = [0.0]

[output]
stem = "osc"
samples = 201
"#;

    fn cli(dir: &Path, args: &[&str]) -> Cli {
        let mut full = vec!["modlab"];
        full.extend(args);
        full.extend(["--out-dir", dir.to_str().unwrap()]);
        Cli::try_parse_from(full).unwrap()
    }

    fn with_config(doc: &str, args: &[&str]) -> (tempfile::TempDir, Cli) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, doc).unwrap();
        let mut full = args.to_vec();
        full.extend(["--config", path.to_str().unwrap()]);
        let c = cli(dir.path(), &full);
        (dir, c)
    }

    #[test]
    fn simulate_writes_readable_artifacts() {
        let (dir, c) = with_config(OSCILLATOR, &["simulate"]);
        assert_eq!(exit_status(&c), 0);
        let (header, rows) = modlab::export::read_csv(&dir.path().join("osc.csv")).unwrap();
        assert_eq!(&header[..3], ["t", "x", "vx"]);
        assert_eq!(rows.len(), 201);
        assert_eq!(rows[0][1], 1.0);
        assert!(dir.path().join("osc_summary.json").exists());
        assert!(dir.path().join("osc_portrait_x.svg").exists());
    }

    #[test]
    fn json_format_and_no_svg_flags() {
        let (dir, c) = with_config(OSCILLATOR, &["simulate", "--format", "json", "--no-svg"]);
        assert_eq!(exit_status(&c), 0);
        let text = std::fs::read_to_string(dir.path().join("osc.json")).unwrap();
        let _: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(!dir.path().join("osc_portrait_x.svg").exists());
    }

    #[test]
    fn invalid_config_exits_2() {
        let (_dir, c) = with_config(&OSCILLATOR.replace("b = 1.0", "b = 3.0"), &["simulate"]);
        let err = c.execute().unwrap_err();
        assert!(err.to_string().contains("modulation"), "{err}");
        assert_eq!(exit_status(&c), 2);

        let (_dir, c) = with_config(&format!("{OSCILLATOR}\nmystery = 1\n"), &["simulate"]);
        assert_eq!(exit_status(&c), 2);

        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_status(&cli(dir.path(), &["simulate"])), 2);
        assert_eq!(exit_status(&cli(dir.path(), &["simulate", "--config", "/nonexistent/run.toml"])), 2);
    }

    #[test]
    fn numerical_failure_exits_3_with_partial_output() {
        let (dir, c) = with_config(&format!("{OSCILLATOR}\n[integrator]\nmax_steps = 5\n"), &["simulate"]);
        assert_eq!(exit_status(&c), 3);
        let summary = std::fs::read_to_string(dir.path().join("osc_summary.json")).unwrap();
        assert!(summary.contains("failure"));
    }

    #[test]
    fn floquet_and_sweep_commands() {
        let (dir, c) = with_config(OSCILLATOR, &["floquet"]);
        assert_eq!(exit_status(&c), 0);
        assert!(std::fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".json")));

        let sweep = format!(
            "{OSCILLATOR}\n[sweep]\nfamily = \"standard-mathieu\"\na = {{ name = \"a\", min = 0.0, max = 2.0, count = 5 }}\nq = {{ name = \"q\", min = 0.0, max = 1.0, count = 3 }}\n"
        );
        let (dir, c) = with_config(&sweep, &["sweep"]);
        assert_eq!(exit_status(&c), 0);
        let csv = std::fs::read_to_string(dir.path().join("osc_sweep.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("a,q,class,max_modulus"));
        assert_eq!(csv.lines().count(), 16);
    }

    #[test]
    fn figure_presets_record_adjustment() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_status(&cli(dir.path(), &["figure", "2", "--no-svg"])), 0);
        let text = std::fs::read_to_string(dir.path().join("figure2_summary.json")).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(summary["figure"]["as_printed_rejection"].is_string(), "{summary}");
        assert!(Cli::try_parse_from(["modlab", "figure", "4"]).is_err());
    }
}
