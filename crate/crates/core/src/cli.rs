//! Command-line front end. Every flag can also be set through a `MELODI_*`
//! environment variable where noted in `--help`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    correlation_report, grouped_box_stats, render_box_svg, train_and_evaluate, write_box_csv, write_correlation_csv,
    ForestParams, GroupBy,
};
use crate::dataset::{read_records, CollectConfig, InferenceRecord, PromptFormat};
use crate::llm::mock::{MockConfig, MockServer};
use crate::llm::ApiFlavor;
use crate::power::{list_sources, SourceSpec, MIN_INTERVAL_S};
use crate::textfeat::{build_feature_table, table::PROMPT_COLUMNS};

#[derive(Debug, Parser)]
#[command(name = "melodi", version, about = "Measure and analyze the energy cost of LLM inference")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Send prompts to an LLM while sampling power; write one record per response.
    Collect(CollectArgs),
    /// Correlate every text feature with energy per response.
    Analyze(AnalyzeArgs),
    /// Export the feature table.
    Features(FeaturesArgs),
    /// Train and score a random-forest energy model.
    Predict(PredictArgs),
    /// Box-plot statistics of energy per response and per token.
    Report(ReportArgs),
    /// Serve a deterministic mock LLM.
    MockLlm(MockArgs),
    /// Show which power sources this host offers.
    Sources,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Alpaca,
    Codefeedback,
    Plain,
}

impl From<FormatArg> for PromptFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Alpaca => PromptFormat::Alpaca,
            FormatArg::Codefeedback => PromptFormat::Codefeedback,
            FormatArg::Plain => PromptFormat::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApiArg {
    Ollama,
    Openai,
}

impl From<ApiArg> for ApiFlavor {
    fn from(a: ApiArg) -> Self {
        match a {
            ApiArg::Ollama => ApiFlavor::Ollama,
            ApiArg::Openai => ApiFlavor::Openai,
        }
    }
}

fn source_spec(s: &str) -> Result<String, String> {
    s.parse::<SourceSpec>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn interval_ms(s: &str) -> Result<u64, String> {
    let ms: u64 = s.parse().map_err(|e| format!("{e}"))?;
    if (ms as f64) / 1000.0 < MIN_INTERVAL_S {
        return Err(format!("must be at least {} ms", MIN_INTERVAL_S * 1000.0));
    }
    Ok(ms)
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("must be strictly between 0 and 1".into())
    }
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Prompt file.
    #[arg(long, env = "MELODI_PROMPTS")]
    pub prompts: PathBuf,
    #[arg(long, value_enum, default_value = "alpaca", env = "MELODI_FORMAT")]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value = "ollama", env = "MELODI_API")]
    pub api: ApiArg,
    #[arg(long, default_value = "http://localhost:11434", env = "MELODI_ENDPOINT")]
    pub endpoint: String,
    #[arg(long, env = "MELODI_MODEL")]
    pub model: String,
    /// Free-form label for the machine running the model.
    #[arg(long, default_value = "unknown", env = "MELODI_HARDWARE")]
    pub hardware: String,
    /// Power source; repeat for several. synthetic:constant:C, synthetic:linear:A:B,
    /// synthetic:sine:MEAN:AMP:PERIOD, replay:PATH, rapl[:REGEX], nvidia[:INDEX].
    #[arg(long = "power-source", default_value = "rapl", value_parser = source_spec,
          env = "MELODI_POWER_SOURCE", value_delimiter = ',')]
    pub power_sources: Vec<String>,
    #[arg(long, default_value = "100", value_parser = interval_ms, env = "MELODI_INTERVAL_MS")]
    pub interval_ms: u64,
    #[arg(long, env = "MELODI_LIMIT")]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0, env = "MELODI_SEED")]
    pub seed: u64,
    /// Record file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Where power traces go; defaults to `<out>.traces`.
    #[arg(long)]
    pub traces_dir: Option<PathBuf>,
    /// Zero wall-clock timestamps; with time-pure sources also use a simulated clock.
    #[arg(long)]
    pub stable_output: bool,
    /// Pause between requests.
    #[arg(long, default_value_t = 1000, env = "MELODI_COOLDOWN_MS")]
    pub cooldown_ms: u64,
    #[arg(long, default_value_t = 600, env = "MELODI_TIMEOUT_S")]
    pub timeout_s: u64,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Bearer token for OpenAI-compatible endpoints.
    #[arg(long, env = "MELODI_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Record files; records are pooled.
    #[arg(long = "input", short, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
}

impl InputArgs {
    fn records(&self) -> Result<Vec<InferenceRecord>, String> {
        let mut all = Vec::new();
        for path in &self.inputs {
            all.extend(read_records(path).map_err(|e| e.to_string())?);
        }
        Ok(all)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Correlation CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Feature CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureSet {
    /// response_token_length alone.
    ResponseOnly,
    /// Features of the prompt text plus its token length.
    Prompt,
    /// Every column.
    All,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "response-only")]
    pub features: FeatureSet,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 2)]
    pub min_samples_leaf: usize,
    /// Defaults to a third of the features.
    #[arg(long)]
    pub features_per_split: Option<usize>,
    /// Training fraction.
    #[arg(long, default_value = "0.8", value_parser = fraction)]
    pub split: f64,
    #[arg(long, default_value_t = 0, env = "MELODI_SEED")]
    pub seed: u64,
    /// Defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Write the trained model as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupArg {
    Model,
    Hardware,
    Dataset,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "model")]
    pub group_by: GroupArg,
    /// Box statistics CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the box plots as SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value_t = 11435, env = "MELODI_PORT")]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 0, env = "MELODI_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub mean_tokens: u64,
    /// Only these model names are served; others get 404.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Sleep for the reported duration before answering.
    #[arg(long)]
    pub realtime: bool,
}

/// Parses `std::env::args`, runs, and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

pub fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Collect(a) => cmd_collect(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Features(a) => cmd_features(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Report(a) => cmd_report(a),
        Command::MockLlm(a) => cmd_mock_llm(a),
        Command::Sources => cmd_sources(),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, String> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_collect(a: CollectArgs) -> Result<(), String> {
    let mut config = CollectConfig::new(&a.endpoint, &a.model, &a.prompts, &a.out);
    config.api_flavor = a.api.into();
    config.hardware_label = a.hardware;
    config.prompt_format = a.format.into();
    config.limit = a.limit;
    config.power_sources = a.power_sources;
    config.interval_s = a.interval_ms as f64 / 1000.0;
    config.seed = a.seed;
    config.traces_dir = a.traces_dir;
    config.stable_output = a.stable_output;
    config.cooldown = Duration::from_millis(a.cooldown_ms);
    config.timeout = Duration::from_secs(a.timeout_s);
    config.bearer_token = a.api_key;
    config.max_tokens = a.max_tokens;

    let summary = crate::dataset::collect_with(&config, |r| {
        println!(
            "record {:>4}  prompt {:>4}  tokens {:>5}  energy {:.6e} kWh  coverage {:.3}",
            r.record_id, r.prompt_id, r.response_token_length, r.energy_llm_kwh, r.coverage_fraction
        );
    })
    .map_err(|e| e.to_string())?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e} kWh"));
    println!(
        "{} records ({} skipped) -> {}\nmean energy per response: {}\nmean energy per token: {}",
        summary.records,
        summary.skipped,
        summary.path.display(),
        fmt(summary.mean_energy_kwh),
        fmt(summary.mean_energy_per_token_kwh)
    );
    if summary.skipped > 0 {
        eprintln!("warning: {} prompts were skipped", summary.skipped);
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), String> {
    let table = build_feature_table(&a.input.records()?).map_err(|e| e.to_string())?;
    let rows = correlation_report(&table).map_err(|e| e.to_string())?;
    write_correlation_csv(output(a.out.as_deref())?, &rows).map_err(|e| e.to_string())
}

fn cmd_features(a: FeaturesArgs) -> Result<(), String> {
    let table = build_feature_table(&a.input.records()?).map_err(|e| e.to_string())?;
    table.write_csv(output(a.out.as_deref())?).map_err(|e| e.to_string())
}

fn cmd_predict(a: PredictArgs) -> Result<(), String> {
    let full = build_feature_table(&a.input.records()?).map_err(|e| e.to_string())?;
    let table = match a.features {
        FeatureSet::ResponseOnly => full.select(&["response_token_length"]),
        FeatureSet::Prompt => full.select(PROMPT_COLUMNS),
        FeatureSet::All => Ok(full),
    }
    .map_err(|e| e.to_string())?;
    let params = ForestParams {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_samples_leaf: a.min_samples_leaf,
        features_per_split: a.features_per_split,
    };
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let (model, eval) = train_and_evaluate(&table, &params, a.seed, a.split, split_seed).map_err(|e| e.to_string())?;
    if let Some(path) = &a.model_out {
        fs::write(path, model.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!(
        "features: {}\ntrees: {}  max_depth: {}  min_samples_leaf: {}  features_per_split: {}  seed: {}",
        table.columns.join(","),
        model.n_trees,
        model.max_depth,
        model.min_samples_leaf,
        model.features_per_split,
        model.seed
    );
    println!(
        "split: {} (seed {})  train: {}  test: {}\nR2: {}",
        eval.split, eval.split_seed, eval.n_train, eval.n_test, eval.r2
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), String> {
    let by = match a.group_by {
        GroupArg::Model => GroupBy::Model,
        GroupArg::Hardware => GroupBy::Hardware,
        GroupArg::Dataset => GroupBy::Dataset,
    };
    let rows = grouped_box_stats(&a.input.records()?, by).map_err(|e| e.to_string())?;
    write_box_csv(output(a.out.as_deref())?, &rows).map_err(|e| e.to_string())?;
    if let Some(path) = &a.svg {
        fs::write(path, render_box_svg(&rows)).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn cmd_mock_llm(a: MockArgs) -> Result<(), String> {
    let config = MockConfig { seed: a.seed, mean_tokens: a.mean_tokens, models: a.models, realtime: a.realtime };
    let server = MockServer::bind(&format!("{}:{}", a.host, a.port), config).map_err(|e| e.to_string())?;
    println!("mock LLM listening on http://{}:{}", a.host, server.port());
    server.serve();
    Ok(())
}

fn cmd_sources() -> Result<(), String> {
    println!("{:<20} {:<12} {:<11} detail", "source", "scope", "available");
    for s in list_sources() {
        println!(
            "{:<20} {:<12} {:<11} {}",
            s.source_id,
            s.scope.to_string(),
            if s.available { "yes" } else { "no" },
            s.detail
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_model_is_usage_error() {
        let err = Cli::try_parse_from(["melodi", "collect", "--prompts", "p.json", "--out", "o.ndjson"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_source_and_interval_rejected() {
        let base = ["melodi", "collect", "--prompts", "p", "--out", "o", "--model", "m"];
        let with = |extra: &[&str]| Cli::try_parse_from(base.iter().chain(extra)).map(|_| ());
        assert!(with(&["--power-source", "bogus"]).is_err());
        assert!(with(&["--interval-ms", "5"]).is_err());
        assert!(with(&["--power-source", "synthetic:constant:1e6", "--power-source", "rapl"]).is_ok());
    }
}
