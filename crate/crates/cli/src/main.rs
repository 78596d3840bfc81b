use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use ahlm_core::pipeline::{self, Artifact};
use ahlm_core::{Error, Mode, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ahlm", version, about = "Ancient-history context selection for n-gram cache language models")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<String>,

    /// Document/cell parallelism. 1 is the determinism reference.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a corpus.
    BuildVocab {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        min_count: Option<usize>,
    },
    /// Train the n-gram cache language model.
    TrainLm {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<String>,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Sample and score (span, prefix, future) training pairs.
    GenPairs {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        lm: Option<String>,
        #[command(flatten)]
        context: ContextArgs,
        #[arg(long)]
        pairs_per_doc: Option<usize>,
        #[arg(long)]
        spans_per_step: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the span-score regressor on a pairs file.
    TrainSelector {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sliding-window perplexity under one selection mode.
    Evaluate {
        #[command(flatten)]
        inputs: EvalInputs,
        #[command(flatten)]
        context: ContextArgs,
    },
    /// Oracle perplexity over a (j, ℓ) grid.
    GridSearch {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        lm: Option<String>,
        #[command(flatten)]
        context: ContextArgs,
        /// Comma-separated j values.
        #[arg(long, value_delimiter = ',')]
        j_values: Option<Vec<usize>>,
        /// Comma-separated ℓ values.
        #[arg(long, value_delimiter = ',')]
        span_values: Option<Vec<usize>>,
    },
    /// Per-term and per-span impact of selection.
    ImpactReport {
        #[command(flatten)]
        inputs: EvalInputs,
        #[command(flatten)]
        context: ContextArgs,
    },
    /// Write a synthetic corpus with planted long-range repetitions.
    SynthCorpus {
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        doc_len: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        n_keys: Option<usize>,
        #[arg(long)]
        key_len: Option<usize>,
        #[arg(long)]
        key_gap: Option<usize>,
        #[arg(long)]
        zipf_exponent: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Reject key gaps that would fall inside this evaluation window.
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Args)]
struct Io {
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalInputs {
    #[command(flatten)]
    io: Io,
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    selector: Option<String>,
}

#[derive(Args)]
struct LmArgs {
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated interpolation weights, highest order first.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    lambda_cache: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct ContextArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    span_len: Option<usize>,
    #[arg(long)]
    span_stride: Option<usize>,
    /// baseline, ahlm, oracle-greedy, oracle-exact or overlap-oracle.
    #[arg(long)]
    mode: Option<Mode>,
    /// Let selected spans overlap each other.
    #[arg(long)]
    allow_overlap: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ContextArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let c = &mut cfg.context;
        set(&mut c.window, self.window);
        set(&mut c.stride, self.stride);
        set(&mut c.j, self.j);
        set(&mut c.span_len, self.span_len);
        if self.span_stride.is_some() {
            c.span_stride = self.span_stride;
        }
        set(&mut c.mode, self.mode);
        if self.allow_overlap {
            c.non_overlap = false;
        }
    }
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// One resolved input: role name, path and contents.
struct Input {
    name: &'static str,
    path: String,
    text: String,
}

fn read_input(name: &'static str, flag: Option<String>, fallback: &[&Option<String>]) -> Outcome<Input> {
    let path = flag
        .or_else(|| fallback.iter().find_map(|p| (*p).clone()))
        .ok_or_else(|| Failure::usage(format!("missing --{name} (or [paths] {name} in the config)")))?;
    let text = fs::read_to_string(&path).map_err(|e| Failure {
        code: 2,
        msg: format!("{name} {path}: {e}"),
    })?;
    Ok(Input { name, path, text })
}

fn core_failure(e: Error, inputs: &[&Input]) -> Failure {
    let code = e.exit_code() as u8;
    let msg = match &e {
        Error::Input { name, source } => match inputs.iter().find(|i| i.name == name) {
            Some(i) => format!("{name} {}: {source}", i.path),
            None => e.to_string(),
        },
        _ => e.to_string(),
    };
    Failure { code, msg }
}

fn output_path(flag: Option<String>, cfg: &RunConfig) -> Outcome<String> {
    flag.or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| Failure::usage("missing --out (or [paths] out in the config)"))
}

fn write_outputs(command: &str, cfg: &RunConfig, out: &str, inputs: &[&Input], art: &Artifact) -> Outcome<()> {
    let io_err = |path: &str, e: std::io::Error| Failure {
        code: 2,
        msg: format!("out {path}: {e}"),
    };
    if let Some(dir) = Path::new(out).parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(out, e))?;
    }
    fs::write(out, &art.data).map_err(|e| io_err(out, e))?;
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let listed: Vec<(&str, &str, &str)> = inputs
        .iter()
        .map(|i| (i.name, i.path.as_str(), i.text.as_str()))
        .collect();
    // echo the resolved paths, not just the ones the config file named
    let mut resolved = cfg.clone();
    for i in inputs {
        let slot = match i.name {
            "corpus" if matches!(command, "evaluate" | "impact-report" | "grid-search") => &mut resolved.paths.eval_corpus,
            "corpus" => &mut resolved.paths.corpus,
            "vocab" => &mut resolved.paths.vocab,
            "lm" => &mut resolved.paths.lm,
            "pairs" => &mut resolved.paths.pairs,
            _ => &mut resolved.paths.selector,
        };
        *slot = Some(i.path.clone());
    }
    resolved.paths.out = Some(out.to_string());
    let meta = pipeline::metadata_record(command, &resolved, &listed, &art.data, created)
        .map_err(|e| core_failure(e, inputs))?;
    let meta_path = format!("{out}.meta.json");
    fs::write(&meta_path, meta).map_err(|e| io_err(&meta_path, e))?;
    println!("{}", art.summary);
    println!("wrote {out}");
    Ok(())
}

fn load_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure {
                code: 2,
                msg: format!("config {path}: {e}"),
            })?;
            RunConfig::from_toml(&text).map_err(|e| Failure::usage(format!("config {path}: {e}")))?
        }
        None => RunConfig::default(),
    };
    set(&mut cfg.workers, cli.workers);
    if cfg.workers == 0 {
        return Err(Failure::usage("--workers must be ≥ 1"));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::BuildVocab { io, min_count } => {
            set(&mut cfg.vocab.min_count, min_count);
            let corpus = read_input("corpus", io.corpus, &[&cfg.paths.corpus])?;
            let out = output_path(io.out, &cfg)?;
            let art = pipeline::build_vocab_stage(&cfg, &corpus.text).map_err(|e| core_failure(e, &[&corpus]))?;
            write_outputs("build-vocab", &cfg, &out, &[&corpus], &art)
        }
        Command::TrainLm { io, vocab, lm } => {
            set(&mut cfg.lm.order, lm.order);
            set(&mut cfg.lm.lambdas, lm.lambdas);
            set(&mut cfg.lm.lambda_cache, lm.lambda_cache);
            set(&mut cfg.lm.alpha, lm.alpha);
            let corpus = read_input("corpus", io.corpus, &[&cfg.paths.corpus])?;
            let vocab = read_input("vocab", vocab, &[&cfg.paths.vocab])?;
            let out = output_path(io.out, &cfg)?;
            let ins = [&corpus, &vocab];
            let art = pipeline::train_lm_stage(&cfg, &corpus.text, &vocab.text).map_err(|e| core_failure(e, &ins))?;
            write_outputs("train-lm", &cfg, &out, &ins, &art)
        }
        Command::GenPairs {
            io,
            vocab,
            lm,
            context,
            pairs_per_doc,
            spans_per_step,
            seed,
        } => {
            context.apply(&mut cfg);
            set(&mut cfg.pairs.pairs_per_doc, pairs_per_doc);
            set(&mut cfg.pairs.spans_per_step, spans_per_step);
            set(&mut cfg.pairs.seed, seed);
            let corpus = read_input("corpus", io.corpus, &[&cfg.paths.corpus])?;
            let vocab = read_input("vocab", vocab, &[&cfg.paths.vocab])?;
            let lm = read_input("lm", lm, &[&cfg.paths.lm])?;
            let out = output_path(io.out, &cfg)?;
            let ins = [&corpus, &vocab, &lm];
            let art = pipeline::gen_pairs_stage(&cfg, &corpus.text, &vocab.text, &lm.text)
                .map_err(|e| core_failure(e, &ins))?;
            write_outputs("gen-pairs", &cfg, &out, &ins, &art)
        }
        Command::TrainSelector {
            io,
            vocab,
            pairs,
            epochs,
            batch_size,
            hidden,
            lr,
            weight_decay,
            seed,
        } => {
            let s = &mut cfg.selector;
            set(&mut s.epochs, epochs);
            set(&mut s.batch_size, batch_size);
            set(&mut s.hidden, hidden);
            set(&mut s.lr, lr);
            set(&mut s.weight_decay, weight_decay);
            set(&mut s.seed, seed);
            let corpus = read_input("corpus", io.corpus, &[&cfg.paths.corpus])?;
            let vocab = read_input("vocab", vocab, &[&cfg.paths.vocab])?;
            let pairs = read_input("pairs", pairs, &[&cfg.paths.pairs])?;
            let out = output_path(io.out, &cfg)?;
            let ins = [&corpus, &vocab, &pairs];
            let art = pipeline::train_selector_stage(&cfg, &corpus.text, &vocab.text, &pairs.text)
                .map_err(|e| core_failure(e, &ins))?;
            write_outputs("train-selector", &cfg, &out, &ins, &art)
        }
        Command::Evaluate { inputs, context } => {
            context.apply(&mut cfg);
            eval_like("evaluate", cfg, inputs, pipeline::evaluate_stage)
        }
        Command::ImpactReport { inputs, context } => {
            context.apply(&mut cfg);
            eval_like("impact-report", cfg, inputs, pipeline::impact_report_stage)
        }
        Command::GridSearch {
            io,
            vocab,
            lm,
            context,
            j_values,
            span_values,
        } => {
            context.apply(&mut cfg);
            set(&mut cfg.search.j_values, j_values);
            set(&mut cfg.search.span_values, span_values);
            let corpus = read_input("corpus", io.corpus, &[&cfg.paths.eval_corpus, &cfg.paths.corpus])?;
            let vocab = read_input("vocab", vocab, &[&cfg.paths.vocab])?;
            let lm = read_input("lm", lm, &[&cfg.paths.lm])?;
            let out = output_path(io.out, &cfg)?;
            let ins = [&corpus, &vocab, &lm];
            let art = pipeline::grid_search_stage(&cfg, &corpus.text, &vocab.text, &lm.text)
                .map_err(|e| core_failure(e, &ins))?;
            write_outputs("grid-search", &cfg, &out, &ins, &art)
        }
        Command::SynthCorpus {
            out,
            n_docs,
            doc_len,
            vocab_size,
            n_keys,
            key_len,
            key_gap,
            zipf_exponent,
            seed,
            window,
        } => {
            let s = &mut cfg.synth;
            set(&mut s.n_docs, n_docs);
            set(&mut s.doc_len, doc_len);
            set(&mut s.vocab_size, vocab_size);
            set(&mut s.n_keys, n_keys);
            set(&mut s.key_len, key_len);
            set(&mut s.key_gap, key_gap);
            set(&mut s.zipf_exponent, zipf_exponent);
            set(&mut s.seed, seed);
            if let Some(w) = window {
                cfg.synth.check_window(w).map_err(|e| core_failure(e, &[]))?;
            }
            let out = output_path(out, &cfg)?;
            let art = pipeline::synth_stage(&cfg).map_err(|e| core_failure(e, &[]))?;
            write_outputs("synth-corpus", &cfg, &out, &[], &art)
        }
    }
}

type EvalStage = fn(&RunConfig, &str, &str, &str, Option<&str>) -> ahlm_core::Result<Artifact>;

fn eval_like(command: &str, cfg: RunConfig, inputs: EvalInputs, stage: EvalStage) -> Outcome<()> {
    let corpus = read_input("corpus", inputs.io.corpus, &[&cfg.paths.eval_corpus, &cfg.paths.corpus])?;
    let vocab = read_input("vocab", inputs.vocab, &[&cfg.paths.vocab])?;
    let lm = read_input("lm", inputs.lm, &[&cfg.paths.lm])?;
    let selector = match inputs.selector.or_else(|| cfg.paths.selector.clone()) {
        Some(p) => Some(read_input("selector", Some(p), &[])?),
        None => None,
    };
    let out = output_path(inputs.io.out, &cfg)?;
    let mut ins = vec![&corpus, &vocab, &lm];
    ins.extend(selector.as_ref());
    let art = stage(
        &cfg,
        &corpus.text,
        &vocab.text,
        &lm.text,
        selector.as_ref().map(|s| s.text.as_str()),
    )
    .map_err(|e| core_failure(e, &ins))?;
    write_outputs(command, &cfg, &out, &ins, &art)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
