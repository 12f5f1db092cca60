//! Command-line front end: `targets`, `solve` and `sweep`.
//!
//! Configuration comes from defaults, then an optional flat `key = value`
//! file (`--config`), then `--set key=value` pairs and dedicated flags such as
//! `--seed`. Powers in dB are `10 log10(p)` relative to one unit of power.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cdma_game::games::{common_target_sinr, run_game, EfficiencyFunction, EquilibriumResult, GameKind};
use cdma_game::montecarlo::{run_sweep, trial_signatures, SweepSpec, SweepSummary};
use cdma_game::scenario::{SystemConfig, SystemModel};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

/// Column names of the sweep CSV, in order.
pub const CSV_HEADER: &str =
    "game,K,mean_utility,mean_power_linear,mean_power_db,frac_at_max,nonconverged,trials,seed";

pub const DEFAULT_TRIALS: usize = 5000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Model(#[from] cdma_game::Error),
    #[error("{0} game(s) did not converge")]
    NotConverged(usize),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(cdma_game::Error::InvalidConfig(_)) => 2,
            CliError::Model(_) => 1,
            CliError::NotConverged(_) => 3,
            CliError::Output { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cdma-game", version, about = "Energy-efficient power-control games for multipath CDMA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the common target SINR for the configured packet length.
    Targets(CommonArgs),
    /// Solve every requested game on one random scenario.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of active users.
        #[arg(long, default_value_t = 5)]
        users: usize,
        /// Trial index selecting the scenario.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Comma-separated games, or `all`.
        #[arg(long, default_value = "all")]
        games: String,
    },
    /// Monte Carlo sweep over user counts; writes one CSV row per (game, K).
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated user counts.
        #[arg(long, default_value = "2,4,6,8,10,12")]
        users: String,
        /// Trials per user count (default 5000, or `trials` from the config file).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "all")]
        games: String,
        /// CSV destination; a `<out>.manifest` file records the full configuration.
        /// Prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one configuration key, e.g. `--set packet_length=60`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Configuration plus the CLI-only `trials` key.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub config: SystemConfig,
    pub trials: Option<usize>,
}

fn split_pair(line: &str) -> Result<(&str, &str), CliError> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Config(format!("expected key=value, got {line:?}")))
}

fn apply(loaded: &mut Loaded, key: &str, value: &str) -> Result<(), CliError> {
    if key == "trials" {
        let n = value
            .parse()
            .map_err(|_| CliError::Config(format!("cannot parse trials = {value:?}")))?;
        loaded.trials = Some(n);
        return Ok(());
    }
    loaded
        .config
        .set(key, value)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Parses a flat configuration text; `#` starts a comment.
pub fn parse_config_text(text: &str, loaded: &mut Loaded) -> Result<(), CliError> {
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line)?;
        apply(loaded, k, v)?;
    }
    Ok(())
}

pub fn load_config(args: &CommonArgs) -> Result<Loaded, CliError> {
    let mut loaded = Loaded {
        config: SystemConfig::default(),
        trials: None,
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        parse_config_text(&text, &mut loaded)?;
    }
    for pair in &args.overrides {
        let (k, v) = split_pair(pair)?;
        apply(&mut loaded, k, v)?;
    }
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    loaded
        .config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(loaded)
}

pub fn parse_games(s: &str) -> Result<Vec<GameKind>, CliError> {
    if s.trim() == "all" {
        return Ok(GameKind::ALL.to_vec());
    }
    s.split(',')
        .map(|g| g.parse().map_err(|e: cdma_game::Error| CliError::Config(e.to_string())))
        .collect()
}

pub fn parse_users(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|u| match u.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(CliError::Config(format!("bad user count {u:?}"))),
        })
        .collect()
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetsReport {
    pub packet_length: usize,
    pub sinr: f64,
    pub sinr_db: f64,
}

pub fn cmd_targets(config: &SystemConfig) -> Result<TargetsReport, CliError> {
    let f = EfficiencyFunction::new(config.packet_length)?;
    let sinr = common_target_sinr(&f)?;
    Ok(TargetsReport {
        packet_length: config.packet_length,
        sinr,
        sinr_db: db(sinr),
    })
}

pub fn write_targets(report: &TargetsReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "packet_length {}", report.packet_length)?;
    writeln!(out, "target_sinr {:.12}", report.sinr)?;
    writeln!(out, "target_sinr_db {:.6}", report.sinr_db)
}

/// Runs `kinds` on scenario `(K, trial)`.
pub fn cmd_solve(
    config: &SystemConfig,
    users: usize,
    trial: u64,
    kinds: &[GameKind],
) -> Result<Vec<EquilibriumResult>, CliError> {
    if users == 0 {
        return Err(CliError::Config("users must be >= 1".into()));
    }
    let model = SystemModel::new(config.clone())?;
    let (sigs, _) = trial_signatures(&model, users, trial)?;
    Ok(kinds
        .iter()
        .map(|&k| run_game(k, &model, &sigs))
        .collect::<Result<_, _>>()?)
}

pub fn write_solve(
    results: &[EquilibriumResult],
    config: &SystemConfig,
    trial: u64,
    out: &mut dyn Write,
) -> io::Result<()> {
    for r in results {
        writeln!(
            out,
            "# game {} K={} trial={} seed={} sweeps={} converged={}",
            r.kind,
            r.powers.len(),
            trial,
            config.seed,
            r.iterations,
            r.converged
        )?;
        writeln!(out, "user power_db sinr_db utility at_max")?;
        for k in 0..r.powers.len() {
            writeln!(
                out,
                "{k} {:.6} {:.6} {:.11e} {}",
                db(r.powers[k]),
                db(r.sinrs[k]),
                r.utilities[k],
                r.at_max[k]
            )?;
        }
    }
    Ok(())
}

/// CSV text of a sweep, header first.
pub fn format_csv(summary: &SweepSummary) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &summary.rows {
        s.push_str(&format!(
            "{},{},{:.11e},{:.11e},{:.11e},{:.11e},{},{},{}\n",
            r.kind,
            r.users,
            r.mean_utility,
            r.mean_power,
            r.mean_power_db,
            r.frac_at_max,
            r.nonconverged,
            r.trials_used,
            summary.seed
        ));
    }
    s
}

/// Everything needed to reproduce a sweep.
pub fn format_manifest(spec: &SweepSpec) -> String {
    let mut s = String::new();
    s.push_str("# cdma-game sweep manifest\n");
    s.push_str("# dB columns: 10*log10(x) with x in linear units relative to 1 unit of power\n");
    s.push_str(&format!("# tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    let games: Vec<&str> = spec.kinds.iter().map(|k| k.name()).collect();
    let users: Vec<String> = spec.user_counts.iter().map(|k| k.to_string()).collect();
    s.push_str(&format!("games = {}\n", games.join(",")));
    s.push_str(&format!("users = {}\n", users.join(",")));
    s.push_str(&format!("trials = {}\n", spec.trials));
    for (k, v) in spec.config.to_key_values() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let err = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    w.write_all(text.as_bytes()).map_err(err)?;
    w.flush().map_err(err)
}

fn run_command(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let io_err = |source| CliError::Output {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match cmd {
        Command::Targets(common) => {
            let loaded = load_config(&common)?;
            let report = cmd_targets(&loaded.config)?;
            write_targets(&report, out).map_err(io_err)
        }
        Command::Solve {
            common,
            users,
            trial,
            games,
        } => {
            let loaded = load_config(&common)?;
            let kinds = parse_games(&games)?;
            let results = cmd_solve(&loaded.config, users, trial, &kinds)?;
            write_solve(&results, &loaded.config, trial, out).map_err(io_err)?;
            let failed = results.iter().filter(|r| !r.converged).count();
            if failed > 0 {
                return Err(CliError::NotConverged(failed));
            }
            Ok(())
        }
        Command::Sweep {
            common,
            users,
            trials,
            games,
            out: path,
            workers,
        } => {
            let loaded = load_config(&common)?;
            let spec = SweepSpec {
                config: loaded.config.clone(),
                kinds: parse_games(&games)?,
                user_counts: parse_users(&users)?,
                trials: trials.or(loaded.trials).unwrap_or(DEFAULT_TRIALS),
            };
            // Fail on an unwritable destination before spending any compute.
            if let Some(p) = &path {
                File::create(p).map_err(|source| CliError::Output {
                    path: p.clone(),
                    source,
                })?;
            }
            let workers = workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            });
            let start = Instant::now();
            let summary = run_sweep(&spec, workers)?;
            let csv = format_csv(&summary);
            match &path {
                Some(p) => {
                    write_file(p, &csv)?;
                    write_file(&manifest_path(p), &format_manifest(&spec))?;
                }
                None => out.write_all(csv.as_bytes()).map_err(io_err)?,
            }
            let _ = writeln!(
                err,
                "sweep: {} rows in {:.1} s on {workers} worker(s)",
                summary.rows.len(),
                start.elapsed().as_secs_f64()
            );
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match run_command(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parses_comments_and_aliases() {
        let mut loaded = Loaded {
            config: SystemConfig::default(),
            trials: None,
        };
        parse_config_text("# comment\nB = 60\n\nN0=2e-9 # inline\ntrials = 12\n", &mut loaded).unwrap();
        assert_eq!(loaded.config.packet_length, 60);
        assert_eq!(loaded.config.noise_psd, 2e-9);
        assert_eq!(loaded.trials, Some(12));
        assert!(parse_config_text("novalue\n", &mut loaded).is_err());
        assert!(parse_config_text("bogus = 1\n", &mut loaded).is_err());
    }

    #[test]
    fn overrides_beat_file_and_seed_flag_wins() {
        let args = CommonArgs {
            config: None,
            seed: Some(9),
            overrides: vec!["seed=3".into(), "B=2".into()],
        };
        let loaded = load_config(&args).unwrap();
        assert_eq!(loaded.config.seed, 9);
        assert_eq!(loaded.config.packet_length, 2);
    }

    #[test]
    fn invalid_packet_length_is_a_config_error() {
        let args = CommonArgs {
            overrides: vec!["B=1".into()],
            ..Default::default()
        };
        assert_eq!(load_config(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn games_and_users_parse() {
        assert_eq!(parse_games("all").unwrap().len(), 5);
        assert_eq!(parse_games("mf,sic-mmse").unwrap(), vec![GameKind::Mf, GameKind::SicMmse]);
        assert!(parse_games("mf,nope").is_err());
        assert_eq!(parse_users("2, 4").unwrap(), vec![2, 4]);
        assert!(parse_users("0").is_err());
        assert!(parse_users("x").is_err());
    }

    #[test]
    fn targets_report() {
        let r = cmd_targets(&SystemConfig::default()).unwrap();
        assert!((r.sinr - 13.38).abs() < 5e-3);
        let mut buf = Vec::new();
        write_targets(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("packet_length 120\ntarget_sinr 13.378"));
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(manifest_path(Path::new("/tmp/a.csv")), PathBuf::from("/tmp/a.csv.manifest"));
    }
}
