//! `dualstore` command line: synthesize graphs, build the retrieval database,
//! pre-train, fine-tune prompts, evaluate and inspect artifacts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualstore::encoder::EncoderParams;
use dualstore::graph::synth::{generate_synthetic, SyntheticSpec};
use dualstore::graph::{load_graph_bundle, save_graph_bundle, Graph};
use dualstore::harness::{
    build_split_db, correlation_csv, correlation_map, evaluate, find_split, prepare_all_inputs, prepare_split_targets, pretrain_split,
    sample_episodes, sweep_configs, RunConfig, Variant,
};
use dualstore::io::{read_to_string, write_atomic};
use dualstore::pretrain::trace_csv;
use dualstore::store::{SemanticStore, StructuralStore};
use dualstore::adapt::{prompt_dump, run_episode};

#[derive(Parser)]
#[command(name = "dualstore", version, about = "Dual-store retrieval-augmented graph pre-training and few-shot adaptation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain graph bundle.
    Synth {
        /// Generator spec JSON; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the semantic and structural stores from a split's sources.
    BuildDb {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        holdout: String,
        /// Output directory for db.sem.jsonl and db.str.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the dual encoders and domain tokens on a split's sources.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        holdout: String,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop the cross-view alignment term.
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune prompts on the held-out graphs with a frozen checkpoint.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        holdout: String,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of query nodes written to prompts.txt.
        #[arg(long, default_value_t = 5)]
        prompts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full LODO evaluation with reports.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// `key=v1,v2,...`: one evaluation per value, in numbered subdirectories.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize graphs, stores or a checkpoint.
    Inspect {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the cross-view correlation map CSV here (needs --checkpoint).
        #[arg(long)]
        correlation: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `dotted.key=value` overrides applied after the config file.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Graph bundle JSON.
    #[arg(long)]
    graphs: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_json(&read_to_string(p)?, &p.display().to_string())?,
            None => RunConfig::default(),
        };
        Ok(base.with_overrides(&self.set)?)
    }

    fn graphs(&self) -> Result<Vec<Graph>> {
        let p = self.graphs.as_ref().context("--graphs is required")?;
        Ok(load_graph_bundle(p)?)
    }
}

fn sem_path(db: &Path) -> PathBuf {
    db.join("db.sem.jsonl")
}

fn str_path(db: &Path) -> PathBuf {
    db.join("db.str.jsonl")
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    write_atomic(path, body.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn synth(spec: Option<PathBuf>, set: &[String], out: &Path) -> Result<()> {
    let mut v = match spec {
        Some(p) => serde_json::from_str(&read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => serde_json::to_value(SyntheticSpec::default())?,
    };
    for o in set {
        let (k, raw) = o.split_once('=').with_context(|| format!("override {o:?} is not key=value"))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let obj = v.as_object_mut().context("spec must be a JSON object")?;
        if !obj.contains_key(k) {
            bail!("unknown spec key {k:?}");
        }
        obj.insert(k.into(), val);
    }
    let spec: SyntheticSpec = serde_json::from_value(v)?;
    let graphs = generate_synthetic(&spec)?;
    save_graph_bundle(out, &graphs)?;
    println!("{} graphs -> {}", graphs.len(), out.display());
    Ok(())
}

fn build_db(run: &RunArgs, holdout: &str, out: &Path) -> Result<()> {
    let cfg = run.config()?;
    let graphs = run.graphs()?;
    let split = find_split(&graphs, cfg.eval.split_mode, holdout)?;
    let inputs = prepare_all_inputs(&graphs, &cfg)?;
    let (sem, st) = build_split_db(&graphs, &inputs, &split, &cfg)?;
    sem.save(&sem_path(out))?;
    st.save(&str_path(out))?;
    write_text(&out.join("split.json"), &serde_json::to_string_pretty(&split)?)?;
    println!("semantic records {} structural records {} sources {:?}", sem.len(), st.len(), split.sources);
    Ok(())
}

fn pretrain(run: &RunArgs, holdout: &str, db: &Path, seed: u64, no_align: bool, out: &Path) -> Result<()> {
    let cfg = run.config()?;
    let graphs = run.graphs()?;
    let split = find_split(&graphs, cfg.eval.split_mode, holdout)?;
    let inputs = prepare_all_inputs(&graphs, &cfg)?;
    let sem = SemanticStore::load(&sem_path(db))?;
    let align = if no_align { 0.0 } else { 1.0 };
    let (params, trace) = pretrain_split(&graphs, &inputs, &split, &sem, &cfg, seed, align)?;
    params.save(out)?;
    let mut trace_path = out.as_os_str().to_owned();
    trace_path.push(".trace.csv");
    write_text(Path::new(&trace_path), &trace_csv(&trace))?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("epochs {} infonce {:.4} -> {:.4}", last.epoch, first.infonce, last.infonce);
    }
    Ok(())
}

fn finetune(run: &RunArgs, holdout: &str, db: &Path, checkpoint: &Path, seed: u64, n_prompts: usize, out: &Path) -> Result<()> {
    let cfg = run.config()?;
    let graphs = run.graphs()?;
    let split = find_split(&graphs, cfg.eval.split_mode, holdout)?;
    let inputs = prepare_all_inputs(&graphs, &cfg)?;
    let sem = SemanticStore::load(&sem_path(db))?;
    let st = StructuralStore::load(&str_path(db))?;
    let before = std::fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let params = EncoderParams::load(checkpoint)?;
    let targets = prepare_split_targets(&graphs, &inputs, &split, &params, &sem, &st, &cfg)?;

    let mut csv = String::from("split_mode,target,task,m,seed,episode,accuracy\n");
    let mut attention = Vec::new();
    let mut prompts = String::new();
    let task = serde_json::to_value(cfg.eval.task)?;
    for (gi, ctx) in &targets {
        let g = &graphs[*gi];
        for &m in &cfg.eval.shots {
            let episodes = sample_episodes(g, cfg.eval.task, m, cfg.eval.episodes, seed, cfg.eval.query_cap)?;
            for (e, ep) in episodes.iter().enumerate() {
                let outcome = run_episode(ep, ctx, &params, &sem, &cfg.adapt)?;
                csv.push_str(&format!(
                    "{},{},{},{m},{seed},{e},{}\n",
                    split.mode.as_str(),
                    g.dataset_id(),
                    task.as_str().unwrap_or("node"),
                    outcome.accuracy
                ));
                if e == 0 {
                    attention.push(serde_json::json!({
                        "dataset": g.dataset_id(),
                        "m": m,
                        "prompt": outcome.prompt,
                        "loss_trace": outcome.loss_trace,
                        "queries": outcome.attention,
                    }));
                }
            }
        }
        let names: Vec<String> = (0..g.num_classes()).map(|c| format!("class-{c}")).collect();
        for v in (0..g.node_count()).take(n_prompts) {
            prompts.push_str(&prompt_dump(g, v, ctx, &sem, &names));
            prompts.push('\n');
        }
    }
    let after = std::fs::read(checkpoint)?;
    if before != after || params.to_json().as_bytes() != before.as_slice() {
        bail!("checkpoint changed during fine-tuning");
    }
    write_text(&out.join("episodes.csv"), &csv)?;
    write_text(&out.join("attention.json"), &serde_json::to_string_pretty(&attention)?)?;
    write_text(&out.join("prompts.txt"), &prompts)?;
    Ok(())
}

fn eval_one(cfg: &RunConfig, graphs: &[Graph], out: &Path) -> Result<bool> {
    let report = evaluate(graphs, cfg);
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    write_text(&out.join("episodes.csv"), &report.episodes_csv(Variant::Full))?;
    write_text(&out.join("aggregate.csv"), &report.aggregate_csv())?;
    let table = report.render_table();
    write_text(&out.join("table.txt"), &table)?;
    print!("{table}");
    for d in &report.deltas {
        println!("delta {} {} {}-shot: {:+.4}", d.variant.as_str(), d.target, d.m, d.delta);
    }
    Ok(report.failure.is_none())
}

fn eval(run: &RunArgs, sweep: Option<&str>, out: &Path) -> Result<()> {
    let cfg = run.config()?;
    let graphs = run.graphs()?;
    let ok = match sweep {
        None => eval_one(&cfg, &graphs, out)?,
        Some(s) => {
            let (key, vals) = s.split_once('=').context("--sweep expects key=v1,v2,...")?;
            let values: Vec<String> = vals.split(',').map(str::to_string).collect();
            let mut ok = true;
            for (i, (c, v)) in sweep_configs(&cfg, key, &values)?.iter().zip(&values).enumerate() {
                println!("== {key}={v}");
                ok &= eval_one(c, &graphs, &out.join(format!("sweep-{i:02}")))?;
            }
            ok
        }
    };
    if !ok {
        bail!("evaluation failed; partial results were written to {}", out.display());
    }
    Ok(())
}

fn inspect(run: &RunArgs, db: Option<&Path>, checkpoint: Option<&Path>, correlation: Option<&Path>, samples: usize) -> Result<()> {
    let cfg = run.config()?;
    let graphs = match &run.graphs {
        Some(_) => Some(run.graphs()?),
        None => None,
    };
    if let Some(gs) = &graphs {
        for g in gs {
            println!(
                "graph {} domain {} nodes {} edges {} classes {}",
                g.dataset_id(),
                g.domain_id(),
                g.node_count(),
                g.edges().len(),
                g.num_classes()
            );
        }
    }
    if let Some(db) = db {
        let sem = SemanticStore::load(&sem_path(db))?;
        let st = StructuralStore::load(&str_path(db))?;
        println!("semantic store: {} records, dim {:?}", sem.len(), sem.dim());
        println!("structural store: {} records, dim {:?}", st.len(), st.dim());
    }
    let params = match checkpoint {
        Some(p) => Some(EncoderParams::load(p)?),
        None => None,
    };
    if let Some(p) = &params {
        println!("checkpoint dims {:?} domains {:?} text map {}", p.dims, p.domains, p.text_map.is_some());
    }
    if let Some(path) = correlation {
        let (Some(gs), Some(p)) = (&graphs, &params) else {
            bail!("--correlation needs --graphs and --checkpoint");
        };
        let inputs = prepare_all_inputs(gs, &cfg)?;
        let (labels, map) = correlation_map(&inputs, p, samples, cfg.features.feature_seed)?;
        write_text(path, &correlation_csv(&labels, &map))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Synth { spec, set, out } => synth(spec.clone(), set, out),
        Cmd::BuildDb { run, holdout, out } => build_db(run, holdout, out),
        Cmd::Pretrain {
            run,
            holdout,
            db,
            seed,
            no_align,
            out,
        } => pretrain(run, holdout, db, *seed, *no_align, out),
        Cmd::Finetune {
            run,
            holdout,
            db,
            checkpoint,
            seed,
            prompts,
            out,
        } => finetune(run, holdout, db, checkpoint, *seed, *prompts, out),
        Cmd::Eval { run, sweep, out } => eval(run, sweep.as_deref(), out),
        Cmd::Inspect {
            run,
            db,
            checkpoint,
            correlation,
            samples,
        } => inspect(run, db.as_deref(), checkpoint.as_deref(), correlation.as_deref(), *samples),
    }
}
