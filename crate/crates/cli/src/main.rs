//! Command-line front end: generation under each strategy, token selection,
//! the synthetic needle task, the cost table, measured-vs-predicted
//! benchmarks and model file creation.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gemfilter::cost::{
    cost_table, verify_counters, CostParams, Meter, MeasuredRun, Method, Phase, Tolerances,
};
use gemfilter::harness::{
    copy_model_config, detokenize, load_model, make_copy_model, make_random_model, needle_run, save_model,
    tokenize, write_ndjson, NeedleSpec, RunMetrics, RunParams, SelectionRecord, WallTimes, METRIC_HEADER,
};
use gemfilter::model::{ModelConfig, ModelWeights, TokenSeq};
use gemfilter::run::{run_strategy, Strategy};
use gemfilter::selection::{decode_selection, select_indices, SelectionParams};
use gemfilter::strategies::EvictionPolicyParams;
use gemfilter::tensor::PoolMode;

#[derive(Parser)]
#[command(name = "gemfilter", version, about = "Long-context inference with early-layer token selection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// GFM1 model file.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// JSON model config; without --model a seeded random model is built from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Append newline-delimited JSON records to this file.
    #[arg(long, global = true)]
    metrics_out: Option<PathBuf>,
    /// Write zero wall times so metrics are byte-reproducible.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Greedy generation under one strategy.
    Generate(GenerateArgs),
    /// Run the selection pass and print the selected tokens.
    Select(SelectArgs),
    /// Synthetic needle-in-a-haystack run with per-layer distance report.
    Needle(NeedleArgs),
    /// Print the predicted cost table.
    Cost(CostArgs),
    /// Run every method and compare measured counters with the cost table.
    Bench(BenchArgs),
    /// Write a random or copy-attention model file.
    MakeModel(MakeModelArgs),
}

#[derive(Args)]
struct PromptArgs {
    /// Prompt text, tokenized byte by byte.
    #[arg(long, group = "prompt_src")]
    prompt: Option<String>,
    /// Prompt as a JSON array of token ids.
    #[arg(long, group = "prompt_src")]
    prompt_ids: Option<String>,
    /// File whose bytes are the prompt.
    #[arg(long, group = "prompt_src")]
    prompt_file: Option<PathBuf>,
}

#[derive(Args)]
struct SelectionArgs {
    /// Filter layer r, 1-based. Defaults to 13/32 of the model depth, rounded up.
    #[arg(long)]
    filter_layer: Option<usize>,
    /// Tokens to keep (selection budget or cache budget).
    #[arg(long = "select-k", default_value_t = 1024)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    pool_kernel: usize,
    #[arg(long, value_enum, default_value_t = Pool::Avg)]
    pool: Pool,
    /// Always keep position 0.
    #[arg(long)]
    force_first: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pool {
    Avg,
    Max,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyKind {
    Full,
    Gemfilter,
    Snapkv,
    H2o,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long, value_enum, default_value_t = StrategyKind::Full)]
    strategy: StrategyKind,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Observation window of the eviction baselines.
    #[arg(long, default_value_t = 32)]
    window: usize,
    /// Recent positions always kept by the cumulative-score baseline.
    #[arg(long, default_value_t = 32)]
    recent: usize,
    /// Tokens to generate.
    #[arg(long, short = 't', default_value_t = 16)]
    max_new: usize,
    /// Stop after emitting this token id.
    #[arg(long)]
    stop: Option<u32>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Print the selection as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct NeedleArgs {
    #[arg(long, default_value_t = 2048)]
    haystack: usize,
    /// Insertion depth in percent.
    #[arg(long, default_value_t = 50)]
    depth: u32,
    #[arg(long, default_value = "XXXXXXXXXXXXXXXX")]
    needle: String,
    /// Final prompt token; defaults to the needle's last byte.
    #[arg(long)]
    query: Option<String>,
    /// Filler alphabet.
    #[arg(long, default_value = "abcdefghijklmnopqrstuvwxyz")]
    filler: String,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Score several filter layers from one pass, e.g. `1,2,3`; empty means every layer.
    #[arg(long, num_args = 0..=1, default_missing_value = "", value_delimiter = ',')]
    r_sweep: Option<Vec<String>>,
    #[arg(long, short = 't', default_value_t = 8)]
    max_new: usize,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    t: usize,
    #[arg(long, default_value_t = 13)]
    r: usize,
    /// Layers; overrides the model's.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    h_kv: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    /// Bytes of one layer's weights; computed from the shapes when absent.
    #[arg(long)]
    w: Option<u64>,
    /// Print JSON instead of the aligned table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long = "select-k", default_value_t = 256)]
    k: usize,
    #[arg(long, short = 't', default_value_t = 32)]
    max_new: usize,
    #[arg(long)]
    filter_layer: Option<usize>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Random,
    Copy,
}

#[derive(Args)]
struct MakeModelArgs {
    #[arg(value_enum)]
    kind: ModelKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long)]
    kv_heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
}

fn default_filter_layer(cfg: &ModelConfig) -> usize {
    (13 * cfg.n_layers).div_ceil(32).max(1)
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ModelConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_model(common: &Common) -> Result<ModelWeights> {
    if let Some(path) = &common.model {
        return load_model(path).with_context(|| format!("loading {}", path.display()));
    }
    let cfg = match &common.config {
        Some(path) => read_config(path)?,
        None => ModelConfig::new(4, 4, 2, 16),
    };
    Ok(make_random_model(&cfg, common.seed)?)
}

fn resolve_prompt(p: &PromptArgs) -> Result<TokenSeq> {
    if let Some(text) = &p.prompt {
        return Ok(tokenize(text.as_bytes()));
    }
    if let Some(json) = &p.prompt_ids {
        let ids: Vec<u32> = serde_json::from_str(json).context("--prompt-ids must be a JSON array of token ids")?;
        return Ok(TokenSeq::new(ids));
    }
    if let Some(path) = &p.prompt_file {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(tokenize(&bytes));
    }
    bail!("a prompt is required: --prompt, --prompt-ids or --prompt-file")
}

fn selection_params(s: &SelectionArgs, cfg: &ModelConfig) -> SelectionParams {
    SelectionParams {
        pool_kernel: s.pool_kernel,
        pool_mode: match s.pool {
            Pool::Avg => PoolMode::Average,
            Pool::Max => PoolMode::Max,
        },
        force_first: s.force_first,
        ..SelectionParams::new(s.filter_layer.unwrap_or_else(|| default_filter_layer(cfg)), s.k)
    }
}

/// Lazily opened NDJSON sink.
struct MetricsSink(Option<BufWriter<File>>);

impl MetricsSink {
    fn open(path: Option<&Path>) -> Result<Self> {
        let file = path
            .map(|p| {
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening {}", p.display()))
            })
            .transpose()?;
        Ok(Self(file.map(BufWriter::new)))
    }

    fn write<T: serde::Serialize>(&mut self, record: &T) -> Result<()> {
        if let Some(w) = &mut self.0 {
            write_ndjson(&mut *w, record)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn text_of(tokens: &[u32]) -> String {
    String::from_utf8_lossy(&detokenize(tokens)).into_owned()
}

fn cmd_generate(common: &Common, args: &GenerateArgs) -> Result<()> {
    let weights = resolve_model(common)?;
    let prompt = resolve_prompt(&args.prompt)?;
    let cfg = &weights.config;
    let eviction = EvictionPolicyParams {
        observation_window: args.window,
        recent_keep: args.recent,
        pool_kernel: args.selection.pool_kernel,
        ..Default::default()
    };
    let k = args.selection.k;
    let strategy = match args.strategy {
        StrategyKind::Full => Strategy::Full,
        StrategyKind::Gemfilter => Strategy::GemFilter(selection_params(&args.selection, cfg)),
        StrategyKind::Snapkv => Strategy::SnapKv { budget: k, params: eviction },
        StrategyKind::H2o => Strategy::H2o { budget: k, params: eviction },
    };
    let out = run_strategy(&weights, &prompt, &strategy, args.max_new, args.stop)?;
    println!("strategy: {}", strategy.name());
    println!("prompt_tokens: {}", prompt.len());
    println!("tokens: {}", serde_json::to_string(&out.tokens)?);
    println!("text: {:?}", text_of(&out.tokens));
    let record = RunMetrics::from_run(&out, cfg, prompt.len(), common.seed, !common.no_timing);
    MetricsSink::open(common.metrics_out.as_deref())?.write(&record)
}

fn cmd_select(common: &Common, args: &SelectArgs) -> Result<()> {
    let weights = resolve_model(common)?;
    let prompt = resolve_prompt(&args.prompt)?;
    let params = selection_params(&args.selection, &weights.config);
    let mut meter = Meter::new(Phase::Prompt, &weights.config);
    let started = std::time::Instant::now();
    let sel = select_indices(&weights, &prompt, &params, &mut meter)?;
    let cost = meter.finish(started.elapsed());
    let selected = decode_selection(&prompt, &sel)?;
    if args.json {
        println!("{}", serde_json::to_string(&sel)?);
    } else {
        println!("filter_layer: {} budget: {} prompt_tokens: {}", sel.filter_layer, sel.budget, prompt.len());
        println!("indices: {}", serde_json::to_string(&sel.indices)?);
        println!("selected: {:?}", text_of(selected.ids()));
    }
    let wall = if common.no_timing { 0.0 } else { cost.wall_time };
    let mut prompt_cost = cost;
    prompt_cost.wall_time = wall;
    let record = RunMetrics {
        run_id: format!(
            "select-n{}-k{}-t0-r{}-seed{}",
            prompt.len(),
            params.budget,
            params.filter_layer,
            common.seed
        ),
        strategy: "gemfilter".into(),
        params: RunParams {
            n: prompt.len(),
            k: Some(params.budget),
            t: 0,
            r: Some(params.filter_layer),
            m: weights.config.n_layers,
            h: weights.config.n_heads,
            d: weights.config.head_dim,
        },
        phase_costs: vec![prompt_cost],
        selection: SelectionRecord {
            indices: Some(sel.indices.clone()),
            ..Default::default()
        },
        output_tokens: Vec::new(),
        wall_times: WallTimes {
            prompt: wall,
            generation: 0.0,
        },
    };
    MetricsSink::open(common.metrics_out.as_deref())?.write(&record)
}

fn single_token(label: &str, s: &str) -> Result<u32> {
    match s.as_bytes() {
        [b] => Ok(u32::from(*b)),
        _ => bail!("{label} must be exactly one byte, got {s:?}"),
    }
}

fn cmd_needle(common: &Common, args: &NeedleArgs) -> Result<()> {
    let weights = match (&common.model, &common.config) {
        (None, None) => make_copy_model(&copy_model_config(2), common.seed)?,
        _ => resolve_model(common)?,
    };
    let cfg = &weights.config;
    let needle = tokenize(args.needle.as_bytes());
    let query = match &args.query {
        Some(q) => single_token("--query", q)?,
        None => *needle.ids().last().context("--needle must not be empty")?,
    };
    let spec = NeedleSpec {
        haystack_len: args.haystack,
        depth_percent: args.depth,
        needle,
        query,
        filler: args.filler.bytes().map(u32::from).collect(),
        seed: common.seed,
    };
    let params = selection_params(&args.selection, cfg);
    let layers: Vec<usize> = match &args.r_sweep {
        None => vec![params.filter_layer],
        Some(list) if list.iter().all(|s| s.is_empty()) => (1..=cfg.n_layers).collect(),
        Some(list) => list
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad layer {s:?} in --r-sweep")))
            .collect::<Result<_>>()?,
    };
    let report = needle_run(&spec, &weights, &layers, &params, args.max_new)?;

    println!("{METRIC_HEADER}");
    println!(
        "haystack={} depth={}% needle_start={} needle_len={} budget={}",
        report.haystack_len, report.depth_percent, report.needle_start, report.needle_len, report.budget
    );
    println!("{:>5} {:>9} {:>12}", "layer", "coverage", "min_distance");
    for s in &report.layers {
        println!("{:>5} {:>9.4} {:>12}", s.layer, s.coverage, s.min_distance);
    }
    if let Some(m) = report.generation_match {
        println!("generation_match: {m}");
    }

    let mut sink = MetricsSink::open(common.metrics_out.as_deref())?;
    let n = report.haystack_len + 1;
    for s in &report.layers {
        let record = RunMetrics {
            run_id: format!(
                "needle-n{n}-k{}-t{}-r{}-seed{}-depth{}",
                report.budget, args.max_new, s.layer, common.seed, report.depth_percent
            ),
            strategy: "gemfilter".into(),
            params: RunParams {
                n,
                k: Some(report.budget),
                t: args.max_new,
                r: Some(s.layer),
                m: cfg.n_layers,
                h: cfg.n_heads,
                d: cfg.head_dim,
            },
            phase_costs: Vec::new(),
            selection: SelectionRecord {
                indices: Some(s.indices.clone()),
                coverage: Some(s.coverage),
                min_distance: Some(s.min_distance),
            },
            output_tokens: report.selection_tokens.clone().unwrap_or_default(),
            wall_times: WallTimes {
                prompt: 0.0,
                generation: 0.0,
            },
        };
        sink.write(&record)?;
    }
    Ok(())
}

fn cmd_cost(common: &Common, args: &CostArgs) -> Result<()> {
    let base = if common.model.is_some() || common.config.is_some() {
        match &common.model {
            Some(p) => load_model(p)?.config,
            None => read_config(common.config.as_deref().expect("checked"))?,
        }
    } else {
        ModelConfig::new(32, 32, 8, 128)
    };
    let mut cfg = base.clone();
    cfg.n_layers = args.m.unwrap_or(base.n_layers);
    cfg.n_heads = args.h.unwrap_or(base.n_heads);
    cfg.n_kv_heads = args.h_kv.unwrap_or(if args.h.is_some() { cfg.n_heads } else { base.n_kv_heads });
    cfg.head_dim = args.head_dim.unwrap_or(base.head_dim);
    cfg.d_model = args.d_model.unwrap_or(cfg.n_heads * cfg.head_dim);
    cfg.hidden_mlp = args.hidden.unwrap_or(if args.d_model.is_some() || args.h.is_some() || args.head_dim.is_some() {
        2 * cfg.d_model
    } else {
        base.hidden_mlp
    });
    cfg.vocab_size = args.vocab.unwrap_or(base.vocab_size);
    cfg.validate()?;
    if args.r == 0 || args.r > cfg.n_layers {
        bail!("--r must be within 1..={}", cfg.n_layers);
    }
    let mut params = CostParams::from_config(&cfg, args.n, args.k, args.t, args.r);
    if let Some(w) = args.w {
        params.w = w;
    }
    let table = cost_table(&params);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.render_text());
        if !params.in_asymptotic_regime() {
            println!("note: n < max(d, k, t); asymptotic orderings need not hold");
        }
    }
    MetricsSink::open(common.metrics_out.as_deref())?.write(&table)
}

fn cmd_bench(common: &Common, args: &BenchArgs) -> Result<()> {
    let weights = resolve_model(common)?;
    let cfg = &weights.config;
    let r = args.filter_layer.unwrap_or_else(|| default_filter_layer(cfg));
    let prompt = gemfilter::model::TokenSeq::new(
        (0..args.n).map(|i| ((i as u64 * 2_654_435_761 + common.seed) % 256) as u32).collect(),
    );
    let eviction = EvictionPolicyParams::default();
    let plan = [
        (Method::Standard, Strategy::Full),
        (Method::SnapKv, Strategy::SnapKv { budget: args.k, params: eviction }),
        (Method::H2o, Strategy::H2o { budget: args.k, params: eviction }),
        (Method::GemFilter, Strategy::GemFilter(SelectionParams::new(r, args.k))),
    ];
    let mut sink = MetricsSink::open(common.metrics_out.as_deref())?;
    let mut runs = Vec::new();
    for (method, strategy) in plan {
        let out = run_strategy(&weights, &prompt, &strategy, args.max_new, None)?;
        sink.write(&RunMetrics::from_run(&out, cfg, args.n, common.seed, !common.no_timing))?;
        runs.push(MeasuredRun {
            method,
            prompt: out.prompt,
            generation: out.generation,
        });
    }
    let table = cost_table(&CostParams::from_config(cfg, args.n, args.k, args.max_new, r));
    let report = verify_counters(&runs, &table, &Tolerances::default());
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{:<10} {:<10} {:<12} {:>16} {:>16} {:>5}", "method", "phase", "term", "predicted", "measured", "ok");
        for i in &report.items {
            println!(
                "{:<10} {:<10} {:<12} {:>16} {:>16} {:>5}",
                i.method.name(),
                format!("{:?}", i.phase).to_lowercase(),
                format!("{:?}", i.term).to_lowercase(),
                i.predicted,
                i.measured,
                i.pass
            );
        }
        if let Some(w) = &report.wall_ratio {
            let verdict = w.pass.map_or("reported only".to_string(), |p| p.to_string());
            println!(
                "prompt wall ratio standard:gemfilter = {:.3} (predicted m/r = {:.3}) {verdict}",
                w.measured, w.predicted
            );
        }
    }
    sink.write(&report)?;
    if let Some(f) = report.failures().first() {
        bail!(
            "counter mismatch: {} {:?} {:?} predicted {} measured {}",
            f.method.name(),
            f.phase,
            f.term,
            f.predicted,
            f.measured
        );
    }
    Ok(())
}

fn cmd_make_model(common: &Common, args: &MakeModelArgs) -> Result<()> {
    let weights = match args.kind {
        ModelKind::Random => {
            let cfg = match &common.config {
                Some(p) => read_config(p)?,
                None => {
                    let head_dim = args.head_dim.unwrap_or(16);
                    ModelConfig::new(args.layers, args.heads, args.kv_heads.unwrap_or(args.heads), head_dim)
                }
            };
            make_random_model(&cfg, common.seed)?
        }
        ModelKind::Copy => {
            let cfg = match &common.config {
                Some(p) => read_config(p)?,
                None => {
                    let mut cfg = copy_model_config(args.layers);
                    if let Some(d) = args.head_dim {
                        cfg.head_dim = d;
                        cfg.d_model = d;
                    }
                    cfg
                }
            };
            make_copy_model(&cfg, common.seed)?
        }
    };
    save_model(&weights, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let c = &weights.config;
    println!(
        "wrote {}: layers={} heads={} kv_heads={} head_dim={} d_model={} vocab={}",
        args.out.display(),
        c.n_layers,
        c.n_heads,
        c.n_kv_heads,
        c.head_dim,
        c.d_model,
        c.vocab_size
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version print to stdout and exit 0, usage errors exit 2
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let c = &cli.common;
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(c, a),
        Command::Select(a) => cmd_select(c, a),
        Command::Needle(a) => cmd_needle(c, a),
        Command::Cost(a) => cmd_cost(c, a),
        Command::Bench(a) => cmd_bench(c, a),
        Command::MakeModel(a) => cmd_make_model(c, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
