//! Command-line entry point wiring the pipeline into reproducible batch
//! runs. Every run writes a manifest sufficient to reproduce its outputs
//! byte-for-byte.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 gate failure.

mod configs;
mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use newsalpha::backfill::{fetch_source, AdapterConfig, EventStore, HttpAdapter, ReplayRecord};
use newsalpha::bench::{
    buy_and_hold, cost_sweep, daily_returns, export_cost_sweep_csv, export_equity_csv,
    export_regime_csv, max_drawdown, regime_split, run_ablation, sharpe, CostSweepPolicy,
};
use newsalpha::extract::{FeaturePanel, MacroFeatures, PromptTemplate};
use newsalpha::metrics::{
    daily_ic_series, export_daily_ic_csv, export_decay_csv, forward_returns, ic_decay, ic_summary,
    signal_metrics, CompositeWeights, FeatureName, DEFAULT_MIN_NAMES,
};
use newsalpha::ppo::{evaluate_policy, export_curve_csv, train, Checkpoint};
use newsalpha::promptopt::{
    optimize, save_ledger, validate_oos, HttpProposer, LoopConfig, LoopContext, Proposer,
    ScriptedProposer,
};
use newsalpha::synthmarket::{
    export_events_jsonl, export_macro_csv, export_ohlcv_csv, generate_events, generate_market,
    pseudo_headlines, MarketData, SynthConfig,
};
use newsalpha::time::DayRange;
use newsalpha::tradenv::{EnvConfig, ObsNormalizer, TradingEnv};

use configs::{
    load_config, AblateRunConfig, CostSweepRunConfig, ExtractRunConfig, OptimizeRunConfig,
    TrainRunConfig,
};
use manifest::{write_atomic, ManifestBuilder, RunManifest};

#[derive(Parser)]
#[command(name = "newsalpha", version, about = "news-to-features-to-policy research pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market with planted events.
    Synth(SynthArgs),
    /// Import replay files or fetch from a source adapter into a store.
    Ingest(IngestArgs),
    /// Extract a feature panel from a store with a prompt template.
    Extract(RunArgs),
    /// IC suite, decay sweep, and signal metrics for a panel.
    Metrics(MetricsArgs),
    /// Run the prompt mutation/evaluation/selection loop.
    Optimize(RunArgs),
    /// Train a PPO policy.
    Train(RunArgs),
    /// Evaluate a checkpoint over an episode.
    Evaluate(EvaluateArgs),
    /// Four-mask multi-seed ablation.
    Ablate(AblateArgs),
    /// Evaluate frozen policies across transaction-cost levels.
    CostSweep(RunArgs),
    /// Assemble figure-data CSVs from prior runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Store directory (created if missing).
    #[arg(long)]
    store: PathBuf,
    /// Replay file of JSON-lines records.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Adapter key-value config for a fetch instead of a replay import.
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[arg(long, requires = "adapter")]
    window_start: Option<chrono::NaiveDate>,
    #[arg(long, requires = "adapter")]
    window_end: Option<chrono::NaiveDate>,
    /// Manifest directory; defaults to the store.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parallel extraction fan-out.
    #[arg(long, default_value_t = 8)]
    jobs: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    market: PathBuf,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_NAMES)]
    min_names: usize,
    /// Decay horizons, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5, 10, 20])]
    decay: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    market: PathBuf,
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    mask: String,
    #[arg(long)]
    range_start: chrono::NaiveDate,
    #[arg(long)]
    range_end: chrono::NaiveDate,
    #[arg(long, default_value_t = configs::default_cash())]
    initial_cash: f64,
    #[arg(long, default_value_t = configs::default_cost_bp())]
    cost_bp: f64,
    #[arg(long, default_value_t = configs::default_lot())]
    trade_lot: u32,
    /// Sample actions instead of taking the argmax.
    #[arg(long)]
    stochastic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Rerun a previous ablation from its manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of a previous `ablate` run.
    #[arg(long)]
    ablation: Option<PathBuf>,
    /// Directory of a previous `train` run.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Directory of a previous `metrics` run.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1 per the CLI contract; --help/--version
            // remain success.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::CostSweep(args) => cmd_cost_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_market(path: &Path) -> Result<MarketData> {
    MarketData::load_json(path).with_context(|| format!("loading market {}", path.display()))
}

fn load_panel(path: &Path) -> Result<FeaturePanel> {
    FeaturePanel::load_json(path).with_context(|| format!("loading panel {}", path.display()))
}

fn market_macro_fn(market: &Arc<MarketData>) -> impl Fn(chrono::NaiveDate) -> MacroFeatures + '_ {
    move |date| {
        market
            .calendar
            .index_of(date)
            .ok()
            .and_then(|i| market.macro_series.get(i).copied())
            .unwrap_or_default()
    }
}

fn load_template(path: &Path) -> Result<PromptTemplate> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading template {}", path.display()))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("template")
        .to_string();
    Ok(PromptTemplate::new(id, body, None)?)
}

fn parse_mask(s: &str) -> Result<newsalpha::tradenv::FeatureMask> {
    newsalpha::tradenv::FeatureMask::parse(s)
        .with_context(|| format!("unknown feature mask {s:?} (baseline|llm_only|macro_only|full)"))
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: SynthConfig = load_config(&args.config)?;
    let mut m = ManifestBuilder::new("synth", serde_json::to_value(&config)?);
    m.record_input(&args.config)?;
    m.record_seeds(&[config.seed]);

    let mut market = generate_market(&config)?;
    let events = generate_events(&config, &mut market)?;
    let headlines = pseudo_headlines(&events);

    let market_path = args.out.join("market.json");
    market.save_json(&market_path)?;
    let events_path = args.out.join("events.jsonl");
    export_events_jsonl(&events, &events_path)?;
    let headlines_path = args.out.join("headlines.jsonl");
    let mut lines = String::new();
    for item in &headlines {
        lines.push_str(&serde_json::to_string(&ReplayRecord::from(item))?);
        lines.push('\n');
    }
    write_atomic(&headlines_path, lines.as_bytes())?;
    let calendar_path = args.out.join("calendar.csv");
    market.calendar.save_csv(&calendar_path)?;
    let macro_path = args.out.join("macro.csv");
    export_macro_csv(&market, &macro_path)?;
    let ohlcv_dir = args.out.join("ohlcv");
    export_ohlcv_csv(&market, &ohlcv_dir)?;

    for p in [&market_path, &events_path, &headlines_path, &calendar_path, &macro_path] {
        m.record_output(p);
    }
    m.finish(&args.out)?;
    println!(
        "market: {} tickers x {} days, {} events -> {}",
        market.n_tickers(),
        market.n_days(),
        events.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_ingest(args: IngestArgs) -> Result<i32> {
    let store = EventStore::open(&args.store)?;
    let out = args.out.clone().unwrap_or_else(|| args.store.clone());
    ensure_out(&out)?;
    let inserted;
    let mut m;
    match (&args.replay, &args.adapter) {
        (Some(replay), None) => {
            m = ManifestBuilder::new("ingest", serde_json::json!({ "replay": replay }));
            m.record_input(replay)?;
            inserted = store.import_replay(replay)?;
        }
        (None, Some(adapter_path)) => {
            let (start, end) = match (args.window_start, args.window_end) {
                (Some(s), Some(e)) => (s, e),
                _ => bail!("adapter fetch needs --window-start and --window-end"),
            };
            let window = DayRange::new(start, end).context("window start must be <= end")?;
            m = ManifestBuilder::new(
                "ingest",
                serde_json::json!({ "adapter": adapter_path, "window": window }),
            );
            m.record_input(adapter_path)?;
            let adapter = HttpAdapter::new(AdapterConfig::load(adapter_path)?);
            let items = fetch_source(&adapter, &window)?;
            inserted = store.put_items(&items)?;
        }
        _ => bail!("ingest needs exactly one of --replay or --adapter"),
    }
    m.record_output(&args.store.join(newsalpha::backfill::RECORDS_FILE));
    m.finish(&out)?;
    println!("{inserted}");
    Ok(0)
}

fn cmd_extract(args: RunArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: ExtractRunConfig = load_config(&args.config)?;
    let mut m = ManifestBuilder::new("extract", serde_json::to_value(&config)?);
    m.record_input(&args.config)?;
    m.record_input(&config.market_path)?;
    m.record_input(&config.template_path)?;

    let market = Arc::new(load_market(&config.market_path)?);
    let store = EventStore::open(&config.store_dir)?;
    let template = load_template(&config.template_path)?;
    let universe = config.universe.clone().unwrap_or_else(|| market.tickers.clone());
    let bundles = store.query_bundles(&universe, &config.window, &market.calendar)?;
    let cache_path = config.cache.then(|| config.store_dir.join("cache.jsonl"));
    let engine = config.extractor.engine(args.jobs, cache_path)?;
    let macro_fn = market_macro_fn(&market);
    let panel = engine.extract_panel(&template, &bundles, &macro_fn)?;

    let panel_path = args.out.join("panel.json");
    panel.save_json(&panel_path)?;
    let warnings = engine.take_warnings();
    if !warnings.is_empty() {
        write_atomic(&args.out.join("warnings.txt"), warnings.join("\n").as_bytes())?;
    }
    m.record_output(&panel_path);
    m.finish(&args.out)?;
    println!(
        "panel: {} dates x {} tickers ({} client calls, {} warnings) -> {}",
        panel.dates.len(),
        panel.tickers.len(),
        engine.call_count(),
        warnings.len(),
        panel_path.display()
    );
    Ok(0)
}

fn cmd_metrics(args: MetricsArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let mut m = ManifestBuilder::new(
        "metrics",
        serde_json::json!({
            "panel": args.panel, "market": args.market, "horizon": args.horizon,
            "min_names": args.min_names, "decay": args.decay,
        }),
    );
    m.record_input(&args.panel)?;
    m.record_input(&args.market)?;

    let panel = load_panel(&args.panel)?;
    let market = load_market(&args.market)?;
    let rets = forward_returns(&market, args.horizon)?;

    let weights = CompositeWeights::default();
    let signal = signal_metrics(&panel, &rets, weights, args.min_names)?;

    let mut per_feature = serde_json::Map::new();
    for feature in FeatureName::ALL {
        match daily_ic_series(feature, &panel, &rets, args.min_names).and_then(|s| ic_summary(&s)) {
            Ok(report) => {
                per_feature.insert(feature.as_str().to_string(), serde_json::to_value(&report)?);
            }
            Err(e) => {
                per_feature.insert(
                    feature.as_str().to_string(),
                    serde_json::json!({ "skipped": e.to_string() }),
                );
            }
        }
    }
    let report = serde_json::json!({
        "horizon_days": args.horizon,
        "min_names": args.min_names,
        "weights": weights,
        "signal": signal,
        "per_feature": per_feature,
    });
    let report_path = args.out.join("ic_report.json");
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;

    let series = daily_ic_series(FeatureName::Sentiment, &panel, &rets, args.min_names)?;
    let daily_path = args.out.join("daily_ic_sentiment.csv");
    export_daily_ic_csv(&series, &daily_path)?;

    let decay = ic_decay(FeatureName::Sentiment, &panel, &market, &args.decay, args.min_names)?;
    let decay_path = args.out.join("decay.csv");
    export_decay_csv(&decay, &decay_path)?;

    for p in [&report_path, &daily_path, &decay_path] {
        m.record_output(p);
    }
    m.finish(&args.out)?;
    println!(
        "ic_ir {:.4}, hit {:.3}, coverage {:.3} -> {}",
        signal.ic_report.ic_ir,
        signal.hit_rate,
        signal.signal_coverage,
        report_path.display()
    );
    Ok(0)
}

fn cmd_optimize(args: RunArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: OptimizeRunConfig = load_config(&args.config)?;
    let mut m = ManifestBuilder::new("optimize", serde_json::to_value(&config)?);
    m.record_input(&args.config)?;
    m.record_input(&config.market_path)?;
    m.record_input(&config.baseline_template)?;

    let market = Arc::new(load_market(&config.market_path)?);
    let store = EventStore::open(&config.store_dir)?;
    let baseline = load_template(&config.baseline_template)?;
    let universe = config.universe.clone().unwrap_or_else(|| market.tickers.clone());

    let mut loop_config = LoopConfig::new(config.optimization_window, config.oos_window, universe)?;
    loop_config.max_rounds = config.max_rounds;
    loop_config.thresholds = config.thresholds;
    loop_config.weights = config.weights;
    loop_config.horizon_days = config.horizon_days;
    loop_config.min_names = config.min_names;
    loop_config.selection = config.selection;

    let cache_path = config.cache.then(|| config.store_dir.join("cache.jsonl"));
    let engine = config.extractor.engine(args.jobs, cache_path)?;
    let ctx = LoopContext {
        store: &store,
        calendar: &market.calendar,
        engine: &engine,
        market: &market,
    };
    let mut proposer: Box<dyn Proposer> = match (&config.mutations_dir, &config.proposer_endpoint) {
        (Some(dir), None) => Box::new(ScriptedProposer::from_dir(dir)?),
        (None, Some(endpoint)) => Box::new(HttpProposer {
            endpoint: endpoint.clone(),
            api_key_env: config.proposer_api_key_env.clone(),
        }),
        (None, None) => Box::new(ScriptedProposer::new(Vec::new())),
        (Some(_), Some(_)) => bail!("configure either mutations_dir or proposer_endpoint, not both"),
    };

    let outcome = optimize(&loop_config, &ctx, baseline, proposer.as_mut())?;

    let ledger_path = args.out.join("ledger.jsonl");
    save_ledger(&outcome.ledger, &ledger_path)?;
    let winner_path = args.out.join("winner.json");
    write_atomic(&winner_path, serde_json::to_string_pretty(&outcome.winner)?.as_bytes())?;
    m.record_output(&ledger_path);
    m.record_output(&winner_path);

    if outcome.no_pass {
        m.finish(&args.out)?;
        eprintln!("no candidate passed the gates; ledger: {}", ledger_path.display());
        return Ok(3);
    }
    if config.validate_oos {
        let report = validate_oos(&outcome.winner, &loop_config, &ctx)?;
        let oos_path = args.out.join("oos_report.json");
        write_atomic(&oos_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        m.record_output(&oos_path);
    }
    m.finish(&args.out)?;
    println!(
        "frozen {} (composite {:.4}) -> {}",
        outcome.winner.template.id,
        outcome.winner.metrics.as_ref().map(|s| s.composite).unwrap_or_default(),
        ledger_path.display()
    );
    Ok(0)
}

fn cmd_train(args: RunArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: TrainRunConfig = load_config(&args.config)?;
    let mut m = ManifestBuilder::new("train", serde_json::to_value(&config)?);
    m.record_input(&args.config)?;
    m.record_input(&config.market_path)?;
    m.record_input(&config.panel_path)?;
    m.record_seeds(&[config.seed]);

    let market = Arc::new(load_market(&config.market_path)?);
    let panel = Arc::new(load_panel(&config.panel_path)?);
    let universe = config.universe.clone().unwrap_or_else(|| market.tickers.clone());
    let env_config = |episode: DayRange| EnvConfig {
        universe: universe.clone(),
        initial_cash: config.initial_cash,
        cost_bp: config.cost_bp,
        trade_lot: config.trade_lot,
        feature_mask: config.feature_mask,
        reward_scale: config.reward_scale,
        episode,
    };
    let mut train_env =
        TradingEnv::new(env_config(config.train_range), market.clone(), panel.clone())?;
    let mut eval_env =
        TradingEnv::new(env_config(config.eval_range), market.clone(), panel.clone())?;
    let mut norm = ObsNormalizer::new(train_env.obs_width());
    let output = train(&mut train_env, &mut eval_env, &mut norm, &config.ppo, config.seed)?;

    for checkpoint in &output.checkpoints {
        let path = args.out.join(format!("checkpoint_{:07}.json", checkpoint.timestep));
        checkpoint.save_json(&path)?;
        m.record_output(&path);
    }
    let final_path = args.out.join("checkpoint_final.json");
    Checkpoint {
        version: newsalpha::ppo::CHECKPOINT_VERSION,
        timestep: config.ppo.total_timesteps,
        seed: config.seed,
        config: config.ppo.clone(),
        params: output.params.clone(),
        normalizer: {
            let mut frozen = output.normalizer.clone();
            frozen.freeze();
            frozen
        },
    }
    .save_json(&final_path)?;
    let curve_path = args.out.join("curve.csv");
    export_curve_csv(&output.curve, &curve_path)?;
    m.record_output(&final_path);
    m.record_output(&curve_path);
    m.finish(&args.out)?;
    println!(
        "trained {} steps, {} checkpoints -> {}",
        config.ppo.total_timesteps,
        output.checkpoints.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let mut m = ManifestBuilder::new(
        "evaluate",
        serde_json::json!({
            "checkpoint": args.checkpoint, "market": args.market, "panel": args.panel,
            "mask": args.mask, "range": [args.range_start, args.range_end],
            "cost_bp": args.cost_bp, "stochastic": args.stochastic,
        }),
    );
    m.record_input(&args.checkpoint)?;
    m.record_input(&args.market)?;
    m.record_input(&args.panel)?;

    let checkpoint = Checkpoint::load_json(&args.checkpoint)?;
    let market = Arc::new(load_market(&args.market)?);
    let panel = Arc::new(load_panel(&args.panel)?);
    let episode = DayRange::new(args.range_start, args.range_end)
        .context("range start must be <= range end")?;
    let env_config = EnvConfig {
        universe: market.tickers.clone(),
        initial_cash: args.initial_cash,
        cost_bp: args.cost_bp,
        trade_lot: args.trade_lot,
        feature_mask: parse_mask(&args.mask)?,
        reward_scale: configs::default_reward_scale(),
        episode,
    };
    let mut env = TradingEnv::new(env_config, market, panel)?;
    let curve = evaluate_policy(
        &checkpoint.params,
        &checkpoint.normalizer,
        &mut env,
        !args.stochastic,
        checkpoint.seed,
    )?;
    let trace = newsalpha::ppo::episode_trace(
        &checkpoint.params,
        &checkpoint.normalizer,
        &mut env,
        !args.stochastic,
        checkpoint.seed,
    )?;
    let trace_path = args.out.join("trace.csv");
    newsalpha::ppo::export_trace_csv(&trace, &trace_path)?;
    m.record_output(&trace_path);

    let mut csv = String::from("date,value\n");
    for (date, value) in &curve {
        csv.push_str(&format!("{date},{value:.9}\n"));
    }
    let equity_path = args.out.join("equity.csv");
    write_atomic(&equity_path, csv.as_bytes())?;

    let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
    let rets = daily_returns(&values);
    let summary = serde_json::json!({
        "sharpe": sharpe(&rets).ok(),
        "total_return_pct": (values[values.len() - 1] / values[0] - 1.0) * 100.0,
        "max_drawdown_pct": max_drawdown(&values) * 100.0,
        "days": values.len(),
    });
    let summary_path = args.out.join("summary.json");
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    m.record_output(&equity_path);
    m.record_output(&summary_path);
    m.finish(&args.out)?;
    println!("{}", summary_path.display());
    Ok(0)
}

fn run_ablation_from_config(config: &AblateRunConfig, out: &Path) -> Result<()> {
    let market = Arc::new(load_market(&config.market_path)?);
    let panel = Arc::new(load_panel(&config.panel_path)?);
    let results = run_ablation(&config.spec, &market, &panel, &config.ppo)?;

    write_atomic(&out.join("results.csv"), results.results_csv().as_bytes())?;
    write_atomic(&out.join("summary.json"), results.summary_json().as_bytes())?;
    export_equity_csv(&results.runs, &out.join("equity.csv"))?;

    // Regime split of test-range curves against the market's own VIX.
    let vix: Vec<(chrono::NaiveDate, f64)> = market
        .calendar
        .days()
        .iter()
        .zip(&market.macro_series)
        .map(|(d, m)| (*d, m.vix))
        .collect();
    let curves: Vec<(String, Vec<(chrono::NaiveDate, f64)>)> = results
        .runs
        .iter()
        .filter(|r| r.range_label == "test" && r.error.is_none())
        .map(|r| (format!("{}-seed{}", r.config_label, r.seed), r.equity.clone()))
        .collect();
    if !curves.is_empty() {
        let rows = regime_split(&curves, &vix, config.vix_threshold)?;
        export_regime_csv(&rows, &out.join("regime.csv"))?;
    }

    // Buy-and-hold reference on the first universe ticker over the test range.
    if let Some(ticker) = config.spec.env.universe.first() {
        let curve = buy_and_hold(
            &market,
            ticker,
            &config.spec.test_range,
            config.spec.env.initial_cash,
        )?;
        let mut csv = String::from("date,value\n");
        for (d, v) in &curve {
            csv.push_str(&format!("{d},{v:.9}\n"));
        }
        write_atomic(&out.join("buy_and_hold.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: AblateRunConfig = match (&args.config, &args.from_manifest) {
        (Some(path), None) => load_config(path)?,
        (None, Some(manifest_path)) => {
            let manifest = RunManifest::load(manifest_path)?;
            if manifest.command != "ablate" {
                bail!("manifest is for {:?}, not ablate", manifest.command);
            }
            manifest.verify_inputs()?;
            serde_json::from_value(manifest.resolved_config.clone())
                .context("manifest resolved_config is not an ablate config")?
        }
        _ => bail!("ablate needs exactly one of --config or --from-manifest"),
    };
    let mut m = ManifestBuilder::new("ablate", serde_json::to_value(&config)?);
    if let Some(path) = &args.config {
        m.record_input(path)?;
    }
    m.record_input(&config.market_path)?;
    m.record_input(&config.panel_path)?;
    m.record_seeds(&config.spec.seeds);

    run_ablation_from_config(&config, &args.out)?;
    for name in ["results.csv", "summary.json", "equity.csv", "regime.csv", "buy_and_hold.csv"] {
        let path = args.out.join(name);
        if path.exists() {
            m.record_output(&path);
        }
    }
    m.finish(&args.out)?;
    println!("{}", args.out.join("results.csv").display());
    Ok(0)
}

fn cmd_cost_sweep(args: RunArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let config: CostSweepRunConfig = load_config(&args.config)?;
    let mut m = ManifestBuilder::new("cost-sweep", serde_json::to_value(&config)?);
    m.record_input(&args.config)?;
    m.record_input(&config.market_path)?;
    m.record_input(&config.panel_path)?;

    let market = Arc::new(load_market(&config.market_path)?);
    let panel = Arc::new(load_panel(&config.panel_path)?);
    let universe = config.universe.clone().unwrap_or_else(|| market.tickers.clone());
    let mut policies = Vec::new();
    for policy_ref in &config.policies {
        m.record_input(&policy_ref.checkpoint_path)?;
        let checkpoint = Checkpoint::load_json(&policy_ref.checkpoint_path)?;
        policies.push(CostSweepPolicy {
            label: policy_ref.label.clone(),
            params: checkpoint.params,
            normalizer: checkpoint.normalizer,
            env: EnvConfig {
                universe: universe.clone(),
                initial_cash: config.initial_cash,
                cost_bp: 0.0,
                trade_lot: config.trade_lot,
                feature_mask: policy_ref.feature_mask,
                reward_scale: config.reward_scale,
                episode: config.episode,
            },
        });
    }
    let rows = cost_sweep(&policies, &config.levels_bp, &market, &panel)?;
    let csv_path = args.out.join("cost_sweep.csv");
    export_cost_sweep_csv(&rows, &csv_path)?;
    let json_path = args.out.join("cost_sweep.json");
    write_atomic(&json_path, serde_json::to_string_pretty(&rows)?.as_bytes())?;
    m.record_output(&csv_path);
    m.record_output(&json_path);
    m.finish(&args.out)?;
    println!("{}", csv_path.display());
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let mut m = ManifestBuilder::new(
        "report",
        serde_json::json!({
            "ablation": args.ablation, "train": args.train, "metrics": args.metrics,
        }),
    );
    let mut copied = 0usize;
    let copy = |src: PathBuf, dst_name: &str, m: &mut ManifestBuilder| -> Result<bool> {
        if !src.exists() {
            return Ok(false);
        }
        m.record_input(&src)?;
        let dst = args.out.join(dst_name);
        let bytes = std::fs::read(&src)?;
        write_atomic(&dst, &bytes)?;
        m.record_output(&dst);
        Ok(true)
    };
    if let Some(dir) = &args.ablation {
        copied += copy(dir.join("equity.csv"), "fig1_equity.csv", &mut m)? as usize;
        copied += copy(dir.join("regime.csv"), "fig6_regime.csv", &mut m)? as usize;
        copied += copy(dir.join("summary.json"), "ablation_summary.json", &mut m)? as usize;
    }
    if let Some(dir) = &args.train {
        copied += copy(dir.join("curve.csv"), "fig2_convergence.csv", &mut m)? as usize;
    }
    if let Some(dir) = &args.metrics {
        copied += copy(dir.join("decay.csv"), "fig5_decay.csv", &mut m)? as usize;
        copied += copy(dir.join("ic_report.json"), "ic_report.json", &mut m)? as usize;
    }
    if copied == 0 {
        bail!("nothing to report: no known artifacts under the given directories");
    }
    m.finish(&args.out)?;
    println!("assembled {copied} figure files -> {}", args.out.display());
    Ok(0)
}
