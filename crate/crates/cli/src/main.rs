//! `hhcast`: simulate corpora, run cascade experiments and render reports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data validation error,
//! 3 numerical failure (the message names the household and series).

mod plots;
mod tables;

use clap::{Args, Parser, Subcommand};
use hhcast::config::{DataSource, RunConfig};
use hhcast::data::{assign_groups, categorize_household, select_items, CategorizeThresholds, LatentTruth, Manifest};
use hhcast::experiment::run_experiment;
use hhcast::{Error, HierarchySpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hhcast", version, about = "Household demand forecasting with multiscale DGLM cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(default_value = "hhcast.toml")]
    config: PathBuf,
    /// Seed for the generator and all simulation; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config (default "output", relative to the config file).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: corpus.csv, manifest.json, generator.toml and truth.json.
    Simulate(Common),
    /// Run every configured variant and write the evaluation report and its tables.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads for household-parallel filtering (0 = one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Render plots and summary tables from a finished run directory.
    Report {
        /// Directory written by `hhcast run`.
        run_dir: PathBuf,
    },
    /// Profile households by promotion response and rank items by sensitive share.
    Categorize {
        #[command(flatten)]
        common: Common,
        /// Minimum share of weeks with an offer.
        #[arg(long, default_value_t = 0.1)]
        min_dop: f64,
        /// Minimum excess of offered-week over regular-week purchase rate.
        #[arg(long, default_value_t = 0.15)]
        min_lift: f64,
        /// Minimum regular-week purchase rate of a loyal buyer.
        #[arg(long, default_value_t = 0.25)]
        loyal_rpp: f64,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Validation { .. } | Error::Csv(_) | Error::Dimension(_) | Error::Cascade(_) => 2,
            e if e.is_numerical() => 3,
            Error::NoPositiveMass | Error::LossDomain(_) => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn load(c: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(&c.config)?.with_seed(c.seed);
    let out = c.output.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> CliResult {
    let s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

fn simulate(c: &Common) -> CliResult {
    let (cfg, out) = load(c)?;
    let g = match cfg.source()? {
        DataSource::Generator(g) => g,
        DataSource::Csv { .. } => return Err(config_error("simulate needs a generator data source, not csv")),
    };
    let synth = hhcast::data::generate_synthetic(&g)?;
    let manifest = Manifest::compute(&g, &synth.corpus)?;
    hhcast::data::write_csv(std::fs::File::create(out.join("corpus.csv"))?, &synth.corpus)?;
    std::fs::write(out.join("generator.toml"), g.to_toml_string()?)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("truth.json"), &synth.truth)?;
    eprintln!("wrote {} records for {} households to {}", manifest.records, manifest.households, out.display());
    Ok(())
}

fn run(c: &Common, threads: usize) -> CliResult {
    let (cfg, out) = load(c)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| config_error(e.to_string()))?;
    let (corpus, truth) = cfg.load_corpus()?;
    if let DataSource::Generator(g) = cfg.source()? {
        write_json(&out.join("manifest.json"), &Manifest::compute(&g, &corpus)?)?;
    }
    write_json(&out.join("hierarchy.json"), &corpus.hierarchy)?;
    if let Some(t) = &truth {
        write_json(&out.join("truth.json"), t)?;
    }
    let exp = cfg.experiment();
    let result = pool.install(|| run_experiment(&corpus, &exp))?;
    write_json(&out.join("experiment.json"), &exp)?;
    std::fs::write(out.join("report.json"), result.report.to_json()? + "\n")?;
    std::fs::write(out.join("report.txt"), result.report.to_text())?;
    tables::write_run_tables(&out.join("tables"), &result)?;
    eprintln!("wrote report for {} households to {}", corpus.households().len(), out.display());
    Ok(())
}

fn read_optional_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Option<T>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(serde_json::from_str(&s).map_err(Error::from)?)),
        Err(_) => Ok(None),
    }
}

fn report(run_dir: &Path) -> CliResult {
    if !run_dir.is_dir() {
        return Err(config_error(format!("run directory {} does not exist", run_dir.display())));
    }
    let path = run_dir.join("report.json");
    let s = std::fs::read_to_string(&path)
        .map_err(|e| config_error(format!("cannot read {}: {e} (is this a run directory?)", path.display())))?;
    let rep = hhcast::metrics::EvaluationReport::from_json(&s)?;
    let tables_dir = run_dir.join("tables");
    let trajectories = tables::read_trajectories(&tables_dir.join("trajectories.csv"))?;
    let fans = tables::read_fans(&tables_dir.join("fans.csv"))?;
    let latent: Option<LatentTruth> = read_optional_json(&run_dir.join("truth.json"))?;
    let hierarchy: Option<HierarchySpec> = read_optional_json(&run_dir.join("hierarchy.json"))?;
    let truth = match (&latent, &hierarchy) {
        (Some(latent), Some(hierarchy)) => Some(plots::Truth { latent, hierarchy }),
        _ => None,
    };
    let plots_dir = run_dir.join("plots");
    std::fs::create_dir_all(&plots_dir)?;
    let n = plots::render_all(&plots_dir, &rep, &trajectories, &fans, truth.as_ref())?;
    tables::write_summary_tables(&plots_dir, &rep)?;
    std::fs::write(plots_dir.join("summary.txt"), rep.to_text())?;
    eprintln!("wrote {n} plots to {}", plots_dir.display());
    Ok(())
}

fn categorize(c: &Common, t: CategorizeThresholds) -> CliResult {
    let (cfg, out) = load(c)?;
    let (corpus, _) = cfg.load_corpus()?;
    let h = &corpus.hierarchy;
    let groups = if corpus.groups.is_empty() { assign_groups(&corpus.records) } else { corpus.groups.clone() };
    let mut rows = vec![];
    for (id, recs) in corpus.households() {
        for item in 0..h.n_items() {
            let p = categorize_household(recs, item, &t);
            rows.push(tables::ProfileRow {
                household: id,
                group: groups.get(&id).copied().unwrap_or(1),
                item: h.item_name(item).to_string(),
                dop: p.dop,
                dpp: p.dpp,
                rpp: p.rpp,
                category: p.category,
            });
        }
    }
    tables::write_rows(&out.join("profiles.csv"), &rows)?;
    let ranking = select_items(&corpus, &t);
    let ranking_rows: Vec<tables::RankingRow> = ranking.iter().map(tables::RankingRow::from).collect();
    tables::write_rows(&out.join("item_ranking.csv"), &ranking_rows)?;
    for r in ranking.iter().take(5) {
        println!("{:<20} {:.3}", r.name, r.share_sensitive);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Run { common, threads } => run(common, *threads),
        Command::Report { run_dir } => report(run_dir),
        Command::Categorize { common, min_dop, min_lift, loyal_rpp } => {
            categorize(common, CategorizeThresholds { min_dop: *min_dop, min_lift: *min_lift, loyal_rpp: *loyal_rpp })
        }
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::Config("x".into())), 1);
        assert_eq!(code(Error::Validation { location: "row 3".into(), message: "x".into() }), 2);
        let numerical = Failure::from(Error::Numerical("household 7 week 9 item milk_whole: q < 0".into()));
        assert_eq!(numerical.code, 3);
        assert!(numerical.message.contains("household 7"));
        assert_eq!(code(Error::NonConvergence { f: 1.0, q: 0.0 }), 3);
        assert_eq!(code(Error::DegenerateVariance(0.0)), 3);
    }
}
