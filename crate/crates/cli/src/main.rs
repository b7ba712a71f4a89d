//! `structadapt`: command-line harness for the graph-to-text laboratory.

mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use structadapt::adapters::count_params;
use structadapt::backbone::{trainable_mask, Model};
use structadapt::corpus::save_jsonl;
use structadapt::graph::{build_token_graph, linearize, to_unlabeled, tokenize_symbols, LinMode, RelationTable, Rep, Variant};
use structadapt::penman::{graph_stats, normalize_inverse_roles, serialize_penman};
use structadapt::tokenizer::Vocabulary;
use structadapt::train::experiments::{self, Setup};
use structadapt::train::{decode_texts, evaluate, prepare, prepare_example, relation_table, train, DataConfig, MetricsReport};

use pipeline::*;

#[derive(Parser)]
#[command(name = "structadapt", version, about = "Graph-to-text laboratory with structural adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (flat key = value file).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.lr=0.01`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct GraphInput {
    /// PENMAN file; graphs separated by blank lines.
    file: PathBuf,
    #[arg(long, default_value = "canon")]
    mode: LinMode,
    #[arg(long, default_value = "nodes_and_edges")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse PENMAN and print each graph re-serialized with its triples.
    Parse { file: PathBuf },
    /// Print the linearization of each graph.
    Linearize(GraphInput),
    /// Dump the token graph of each graph as an edge list.
    Graphify {
        #[command(flatten)]
        input: GraphInput,
        #[arg(long, default_value = "rep1")]
        rep: Rep,
        /// Vocabulary file; raw bytes when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Print size, diameter and reentrancy count of each graph.
    Stats { file: PathBuf },
    /// Write the dataset as JSONL (synthetic unless `data.dataset` is set).
    MakeData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a subword vocabulary on the training split.
    MakeVocab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoising-pretrain a backbone; writes vocab.txt and backbone.ckpt.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train adapters (or fine-tune) on top of a pretrained backbone.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pretraining run directory; pretrains from scratch when absent.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate sentences for the graphs in a PENMAN file.
    Generate {
        /// Training run directory.
        #[arg(long)]
        model: PathBuf,
        file: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Decode and score a data split with a trained model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print trainable and total parameter counts for a configuration.
    Params {
        #[command(flatten)]
        common: Common,
    },
    /// Adapter width sweep (`train.dims` × `train.seeds`).
    Sweep(Experiment),
    /// Low-data runs (`train.sizes` × `train.samples` × `train.lowdata_seeds`).
    Lowdata(Experiment),
    /// Linearization robustness (`train.modes` × `train.seeds`).
    Robustness(Experiment),
    /// Encoder/decoder placement ablation at equal trainable parameters.
    Ablation(Experiment),
}

#[derive(Args, Clone)]
struct Experiment {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Parse { file } => {
            for g in read_graphs(&file)? {
                println!("{}", serialize_penman(&g));
                for (s, r, t) in g.triples() {
                    println!("  {s} {r} {t}");
                }
            }
        }
        Command::Linearize(input) => {
            for g in read_graphs(&input.file)? {
                let g = normalize_inverse_roles(&g);
                println!("{}", linearize(&g, input.mode, input.variant, input.seed).text());
            }
        }
        Command::Graphify { input, rep, vocab } => {
            let vocab = match vocab {
                Some(p) => Vocabulary::load(&p)?,
                None => Vocabulary::bytes_only(),
            };
            let graphs: Vec<_> = read_graphs(&input.file)?.iter().map(normalize_inverse_roles).collect();
            let table = RelationTable::for_variant(input.variant, &graphs);
            for g in &graphs {
                let lin = linearize(g, input.mode, input.variant, input.seed);
                let tok = tokenize_symbols(&vocab, &lin.symbols);
                let tg = build_token_graph(&to_unlabeled(g), &lin, &tok, rep, &table)?;
                print!("{}", tg.to_text());
            }
        }
        Command::Stats { file } => {
            for g in read_graphs(&file)? {
                let s = graph_stats(&g);
                println!("size {}\ndiameter {}\nreentrancies {}", s.size, s.diameter, s.reentrancies);
            }
        }
        Command::MakeData { common, out } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides)?;
            let data = load_data(&cfg)?;
            let all: Vec<_> = [data.train, data.dev, data.test].concat();
            save_jsonl(&out, &all)?;
            println!("{} records", all.len());
        }
        Command::MakeVocab { common, out } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides)?;
            let vocab = train_vocab(&cfg, &load_data(&cfg)?)?;
            vocab.save(&out)?;
            println!("{} tokens", vocab.len());
        }
        Command::Pretrain { common, out } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides)?;
            let data = load_data(&cfg)?;
            run_dir(&out, &cfg)?;
            let (_, model) = backbone(&cfg, &data, None, &out)?;
            println!("pretrained {} parameters into {}", model.store.total_count(), out.display());
        }
        Command::Train { common, from, out } => cmd_train(&common, from.as_deref(), &out)?,
        Command::Generate { model, file, beam } => {
            let (m, vocab, data_cfg, table, cfg) = load_trained(&model)?;
            let examples = read_graphs(&file)?
                .iter()
                .map(|g| prepare_example(g, "", &vocab, &table, &data_cfg, data_cfg.seed))
                .collect::<Result<Vec<_>, _>>()?;
            let beam = beam.unwrap_or(cfg.train.beam);
            for line in decode_texts(&m, &examples, &vocab, beam, cfg.train.max_decode_len)? {
                println!("{line}");
            }
        }
        Command::Evaluate {
            common,
            model,
            split,
            out,
        } => {
            let (m, vocab, data_cfg, table, mut cfg) = load_trained(&model)?;
            for kv in &common.overrides {
                cfg.apply_override(kv)?;
            }
            let data = load_data(&cfg)?;
            let records = match split.as_str() {
                "train" => data.train,
                "dev" => data.dev,
                "test" => data.test,
                other => bail!("unknown split `{other}`"),
            };
            let examples = prepare(&records, &vocab, &table, &data_cfg)?;
            let report = evaluate(&m, &examples, &vocab, cfg.train.beam, cfg.train.max_decode_len)?;
            let out = out.unwrap_or_else(|| model.join(format!("eval-{split}")));
            run_dir(&out, &cfg)?;
            write_report(&out, &report)?;
            println!("bleu {:.2} chrf {:.2}", report.bleu, report.chrf);
        }
        Command::Params { common } => {
            let cfg = load_config(common.config.as_deref(), &common.overrides)?;
            let mut model: Model<f32> = Model::new(cfg.backbone.clone(), cfg.backbone_seed)?;
            if let Some(a) = &cfg.adapter {
                model.attach_adapters(a.clone(), 0)?;
            }
            let c = count_params(&model.store, trainable_mask(cfg.train.mode, cfg.backbone.layers));
            println!("trainable {}\ntotal {}\nfraction {}", c.trainable, c.total, c.fraction);
        }
        Command::Sweep(e) => run_experiment(&e, "sweep", |s, c| experiments::sweep_hidden(s, &c.experiments.dims, &c.experiments.seeds))?,
        Command::Lowdata(e) => run_experiment(&e, "lowdata", |s, c| {
            experiments::low_data(s, &c.experiments.sizes, c.experiments.samples, c.experiments.lowdata_seeds)
        })?,
        Command::Robustness(e) => run_experiment(&e, "robustness", |s, c| {
            experiments::linearization_robustness(s, &c.experiments.modes, &c.experiments.seeds)
        })?,
        Command::Ablation(e) => run_experiment(&e, "ablation", |s, c| {
            let m = c.adapter.as_ref().map_or(16, |a| a.m);
            experiments::placement_ablation(s, m, &c.experiments.seeds)
        })?,
    }
    Ok(())
}

fn write_report(out: &Path, report: &MetricsReport) -> Result<()> {
    write_json(&out.join("metrics.json"), report)?;
    let mut csv = String::from("bleu,chrf,trainable,total,fraction\n");
    csv.push_str(&format!(
        "{},{},{},{},{}\n",
        report.bleu, report.chrf, report.trainable, report.total_params, report.trainable_fraction
    ));
    fs::write(out.join("metrics.csv"), csv)?;
    fs::write(out.join("buckets.csv"), experiments::to_csv(&report.buckets))?;
    let hyps: String = report.examples.iter().map(|e| format!("{}\n", e.hypothesis)).collect();
    fs::write(out.join("hypotheses.txt"), hyps)?;
    Ok(())
}

fn cmd_train(common: &Common, from: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = load_config(common.config.as_deref(), &common.overrides)?;
    let data = load_data(&cfg)?;
    run_dir(out, &cfg)?;
    let (vocab, mut model) = backbone(&cfg, &data, from, out)?;
    let data_cfg = cfg.train.data;
    let table = relation_table(&data_cfg, &data.train);
    if let Some(a) = cfg.adapter.as_mut() {
        a.relations = table.len();
        a.gcn_norm = data_cfg.gcn_norm;
        model.attach_adapters(a.clone(), cfg.train.seed)?;
    }
    let tr = prepare(&data.train, &vocab, &table, &data_cfg)?;
    let dev = prepare(&data.dev, &vocab, &table, &data_cfg)?;
    let outcome = train(&mut model, &tr, &dev, &vocab, &cfg.train)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    let mut meta = relations_meta(&table);
    meta.insert("data".into(), serde_json::to_string(&data_cfg)?);
    model.save(&out.join(MODEL_FILE), &meta)?;
    write_json(&out.join("train.json"), &outcome)?;
    let mut log = String::from("step,epoch,loss,lr\n");
    for e in &outcome.log {
        log.push_str(&format!("{},{},{},{}\n", e.step, e.epoch, e.loss, e.lr));
    }
    fs::write(out.join("log.csv"), log)?;
    let mut report = if data.test.is_empty() {
        None
    } else {
        let test = prepare(&data.test, &vocab, &table, &data_cfg)?;
        Some(evaluate(&model, &test, &vocab, cfg.train.beam, cfg.train.max_decode_len)?)
    };
    if let Some(r) = report.as_mut() {
        r.steps = outcome.steps;
        r.wall_secs += outcome.wall_secs;
        write_report(out, r)?;
    }
    println!(
        "steps {} best dev bleu {} test bleu {}",
        outcome.steps,
        outcome.best_dev_bleu.map_or("-".into(), |b| format!("{b:.2}")),
        report.map_or("-".into(), |r| format!("{:.2}", r.bleu))
    );
    Ok(())
}

type Trained = (Model<f32>, Vocabulary, DataConfig, RelationTable, structadapt::config::RunConfig);

fn load_trained(dir: &Path) -> Result<Trained> {
    let cfg = load_config(Some(&dir.join(CONFIG_FILE)), &[])?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let (model, meta) = Model::<f32>::load(&dir.join(MODEL_FILE)).with_context(|| format!("model in {}", dir.display()))?;
    let table = relations_from_meta(&meta)?;
    let data_cfg: DataConfig = serde_json::from_str(meta.get("data").context("checkpoint lacks data settings")?)?;
    Ok((model, vocab, data_cfg, table, cfg))
}

fn run_experiment(
    e: &Experiment,
    name: &str,
    run: impl Fn(&Setup<f32>, &structadapt::config::RunConfig) -> Result<Vec<experiments::SummaryRow>, structadapt::train::TrainError>,
) -> Result<()> {
    let cfg = load_config(e.common.config.as_deref(), &e.common.overrides)?;
    let data = load_data(&cfg)?;
    run_dir(&e.out, &cfg)?;
    let (vocab, model) = backbone(&cfg, &data, e.from.as_deref(), &e.out)?;
    let setup = Setup {
        backbone: &model,
        vocab: &vocab,
        train: &data.train,
        dev: &data.dev,
        test: if data.test.is_empty() { &data.dev } else { &data.test },
        train_cfg: cfg.train.clone(),
        adapter: cfg.adapter.clone().unwrap_or_default(),
        beam: cfg.train.beam,
    };
    let rows = run(&setup, &cfg)?;
    let csv = experiments::to_csv(&rows);
    fs::write(e.out.join(format!("{name}.csv")), &csv)?;
    print!("{csv}");
    Ok(())
}
