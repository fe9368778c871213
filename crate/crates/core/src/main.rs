//! `rnng` command-line tool: corpus generation, rule induction, training,
//! prediction and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rnng::corpus::{read_corpus, write_trees, LabelSchema, Split, Tree};
use rnng::eval::{evaluate_corpora, render_text, EntitySource, EvalConfig};
use rnng::pipeline::{
    compare, corpus_summary, evaluate_system, generate, lint, train_system, Dataset, Mode, PipelineError, RunConfig,
    System,
};
use rnng::transition::{induce_rules, TransitionRuleSet};

#[derive(Parser)]
#[command(name = "rnng", version, about = "Joint medication entity and relation extraction with an RNNG parser")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Worker threads for parallel decoding and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Gazetteer feature channel as `name=path`; repeatable.
    #[arg(long = "terminology", global = true)]
    terminologies: Vec<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/dev/test splits, the schema and a drug lexicon.
    Generate {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Induce transition rules from the train split, or lint a corpus.
    Rules {
        /// Check this corpus against the rules file instead of inducing.
        #[arg(long, value_name = "CORPUS")]
        lint: Option<PathBuf>,
    },
    /// Train the configured mode and save a checkpoint.
    Train,
    /// Annotate a corpus with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus to annotate (annotations are ignored); default: test split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        /// Same as `--beam 1`.
        #[arg(long, conflicts_with = "beam")]
        greedy: bool,
    },
    /// Score predicted trees against gold trees.
    Evaluate {
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, default_value_t = EntitySource::Oracle)]
        entity_source: EntitySource,
        /// Print the JSON report instead of the text tables.
        #[arg(long)]
        json: bool,
        /// Where to write the JSON report; default: the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train several modes and print a side-by-side comparison.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "joint,relations_only,seq_rnng,tagger_baseline")]
        modes: Vec<Mode>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = g.mode {
        cfg.mode = mode;
    }
    if !g.terminologies.is_empty() {
        cfg.terminologies = g.terminologies.clone();
    }
    if let Some(d) = &g.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &g.run_dir {
        cfg.paths.run_dir = d.clone();
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn create(path: &std::path::Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &std::path::Path, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Config(e.to_string()))?;
    writeln!(w, "{text}").map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes each epoch record to the log file and a short line to stderr.
fn epoch_logger(path: &std::path::Path) -> Result<impl FnMut(&serde_json::Value), PipelineError> {
    let mut w = create(path)?;
    Ok(move |v: &serde_json::Value| {
        let _ = writeln!(w, "{v}");
        let _ = w.flush();
        let model = v["model"].as_str().unwrap_or("");
        match (v["epoch"].as_u64(), v["dev_f1"].as_f64()) {
            (Some(epoch), Some(f1)) => eprintln!(
                "{model:<28} epoch {epoch:>3}  train loss {:>8.3}  dev loss {:>8.3}  dev F1 {f1:>6.2}",
                v["train_loss"].as_f64().unwrap_or(f64::NAN),
                v["dev_loss"].as_f64().unwrap_or(f64::NAN),
            ),
            _ => eprintln!("{v}"),
        }
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(&cli.global)?;
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let paths = cfg.paths.clone();
    match cli.command {
        Command::Generate { train, dev, test } => {
            let g = &mut cfg.generator;
            g.train = train.unwrap_or(g.train);
            g.dev = dev.unwrap_or(g.dev);
            g.test = test.unwrap_or(g.test);
            let summary = generate(&cfg.generator, cfg.seed, &paths)?;
            println!("{summary}");
            println!("wrote {}", paths.data_dir.display());
        }
        Command::Rules { lint: None } => {
            cfg.validate(&[paths.schema(), paths.split(Split::Train)])?;
            let schema = LabelSchema::read(&paths.schema())?;
            let train = read_corpus(&paths.split(Split::Train), Some(&schema))?;
            let rules = induce_rules(&train);
            rules.validate(&schema)?;
            rules.write(&paths.rules())?;
            print!("{}", rules.summary());
            println!("wrote {}", paths.rules().display());
        }
        Command::Rules { lint: Some(corpus) } => {
            cfg.validate(&[paths.schema(), paths.rules(), corpus.clone()])?;
            let schema = LabelSchema::read(&paths.schema())?;
            let rules = TransitionRuleSet::read(&paths.rules(), &schema)?;
            let corpus = read_corpus(&corpus, Some(&schema))?;
            let found = lint(&corpus, &rules);
            for f in &found {
                println!("{} sentence {}: {}", f.document, f.sentence, f.violation);
            }
            println!("{} violating sentence(s) out of {}", found.len(), corpus.num_sentences());
            if !found.is_empty() {
                return Err(PipelineError::RuleViolations(found.len()));
            }
        }
        Command::Train => {
            let required: Vec<PathBuf> = [paths.schema(), paths.rules()]
                .into_iter()
                .chain(Split::ALL.map(|s| paths.split(s)))
                .collect();
            cfg.validate(&required)?;
            let data = Dataset::load(&paths)?;
            let mut log = epoch_logger(&paths.train_log())?;
            let system = train_system(&cfg, &data, &mut log)?;
            system.save(&paths.checkpoint())?;
            let (_, report) = evaluate_system(&system, &data.schema, &data.dev, &cfg.decode, &cfg.eval)?;
            println!("dev ({} mode):", cfg.mode);
            print!("{}", render_text(&report));
            println!("wrote {}", paths.checkpoint().display());
        }
        Command::Predict {
            checkpoint,
            input,
            output,
            beam,
            greedy,
        } => {
            let checkpoint = checkpoint.unwrap_or_else(|| paths.checkpoint());
            let input = input.unwrap_or_else(|| paths.split(Split::Test));
            let output = output.unwrap_or_else(|| paths.predictions());
            if greedy {
                cfg.decode.beam_size = 1;
            } else if let Some(b) = beam {
                cfg.decode.beam_size = b;
            }
            cfg.validate(&[paths.schema(), paths.rules(), checkpoint.clone(), input.clone()])?;
            let schema = LabelSchema::read(&paths.schema())?;
            let rules = TransitionRuleSet::read(&paths.rules(), &schema)?;
            let system = System::load(&checkpoint, &schema, &rules)?;
            let corpus = read_corpus(&input, None)?;
            let tokens: Vec<&[String]> = corpus.sentences().map(Tree::tokens).collect();
            let pred = system.predict_all(&schema, &tokens, &cfg.decode)?;
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            write_trees(&output, &pred)?;
            println!("wrote {} trees to {}", pred.len(), output.display());
        }
        Command::Evaluate {
            gold,
            pred,
            entity_source,
            json,
            output,
        } => {
            let gold = gold.unwrap_or_else(|| paths.split(Split::Test));
            let pred = pred.unwrap_or_else(|| paths.predictions());
            cfg.validate(&[paths.schema(), gold.clone(), pred.clone()])?;
            let schema = LabelSchema::read(&paths.schema())?;
            let gold = read_corpus(&gold, Some(&schema))?;
            let pred = read_corpus(&pred, Some(&schema))?;
            let g: Vec<&Tree> = gold.sentences().collect();
            let p: Vec<&Tree> = pred.sentences().collect();
            let eval = EvalConfig {
                entity_source,
                ..cfg.eval
            };
            let report = evaluate_corpora(&g, &p, &schema, &eval)?;
            write_json(&output.unwrap_or_else(|| paths.report()), &report)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", render_text(&report));
            }
        }
        Command::Compare { modes } => {
            let required: Vec<PathBuf> = [paths.schema(), paths.rules()]
                .into_iter()
                .chain(Split::ALL.map(|s| paths.split(s)))
                .collect();
            cfg.validate(&required)?;
            let data = Dataset::load(&paths)?;
            let mut log = epoch_logger(&paths.run_dir.join("compare.log.jsonl"))?;
            let table = compare(&cfg, &data, &modes, &mut log)?;
            write_json(&paths.run_dir.join("comparison.json"), &table)?;
            println!("test split, relations scored with gold entities:");
            print!("{}", table.render());
            println!();
            print!(
                "{}",
                corpus_summary(&data.schema, &[("train", &data.train), ("dev", &data.dev), ("test", &data.test)])
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
