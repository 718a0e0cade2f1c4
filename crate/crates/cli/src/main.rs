use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dxcausal_core::ehr::{
    build_diagnosis_matrix, build_transition_matrix, load_cohort, load_registry, write_diagnosis_matrix,
    write_transition_matrix,
};
use dxcausal_core::gateway::TokenRates;
use dxcausal_core::knowledge::{ingest_corpus, Embedder, HashEmbedder, RemoteEmbedder};
use dxcausal_core::pipeline::{
    evaluate, load_run, serve, EmbedderConfig, PatientOutcome, Pipeline, RunConfig, RunRequest,
};

#[derive(Parser)]
#[command(name = "dxcausal", version, about = "Next-visit diagnosis prediction with LLM-guided causal discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transition and diagnosis matrices from a training cohort.
    BuildMatrices {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a corpus and persist the vector store.
    IngestCorpus {
        #[arg(long)]
        corpus: PathBuf,
        /// Take the embedder, seed and output directory from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the config's store_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Hash-embedder seed when no config is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "Disease reference articles, one document per article section")]
        description: String,
    },
    /// Run the pipeline over the test cohort (or selected patients).
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's test cohort.
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        comment: Option<String>,
        /// Repeat to select several patients.
        #[arg(long = "patient")]
        patients: Vec<String>,
        #[arg(long)]
        disable_knowledge: bool,
        #[arg(long)]
        disable_causal: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute metrics for a finished run.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        /// Comma-separated cut-offs; defaults to the run's configured ones.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Token and cost totals of a finished run.
    ReportUsage {
        #[arg(long)]
        run_dir: PathBuf,
        /// Re-cost at these rates (per 1,000 tokens) instead of the run's.
        #[arg(long, requires = "output_per_1k")]
        input_per_1k: Option<f64>,
        #[arg(long, requires = "input_per_1k")]
        output_per_1k: Option<f64>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::BuildMatrices { registry, cohort, out } => {
            let registry = Arc::new(load_registry(&registry)?);
            let cohort = load_cohort(&cohort, registry)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_transition_matrix(out.join("transition.jsonl"), &build_transition_matrix(&cohort))?;
            write_diagnosis_matrix(out.join("diagnosis.jsonl"), &build_diagnosis_matrix(&cohort))?;
            println!("wrote matrices for {} patients to {}", cohort.len(), out.display());
        }
        Command::IngestCorpus {
            corpus,
            config,
            out,
            seed,
            description,
        } => {
            let (embedder, default_out): (Box<dyn Embedder>, Option<PathBuf>) = match config {
                Some(path) => {
                    let c = RunConfig::load(&path)?;
                    let e: Box<dyn Embedder> = match &c.embedder {
                        EmbedderConfig::Hash => Box::new(HashEmbedder::new(c.seed)),
                        EmbedderConfig::Remote(r) => Box::new(RemoteEmbedder::from_env(r.clone())),
                    };
                    (e, c.store_dir)
                }
                None => (Box::new(HashEmbedder::new(seed)), None),
            };
            let Some(out) = out.or(default_out) else {
                bail!("--out is required when the config has no store_dir");
            };
            let store = ingest_corpus(&corpus, embedder.as_ref(), &description)?;
            store.save(&out)?;
            println!("embedded {} documents with {} into {}", store.len(), embedder.id(), out.display());
        }
        Command::Predict {
            config,
            cohort,
            comment,
            patients,
            disable_knowledge,
            disable_causal,
            workers,
        } => {
            let mut c = RunConfig::load(&config)?;
            if let Some(p) = cohort {
                c.test_cohort = p;
            }
            c.ablation.disable_knowledge |= disable_knowledge;
            c.ablation.disable_causal |= disable_causal;
            if let Some(w) = workers {
                c.workers = w;
            }
            let pipeline = Pipeline::load(c)?;
            let request = RunRequest {
                comment,
                patients: (!patients.is_empty()).then_some(patients),
            };
            let (artifacts, report, dir) = pipeline.execute(&request)?;
            for o in &artifacts.outcomes {
                match o {
                    PatientOutcome::Ok(a) => println!("{}\t{}", a.patient_id, a.prediction.codes.join(" ")),
                    PatientOutcome::Failed(f) => println!("{}\tFAILED: {}", f.patient_id, f.error),
                }
            }
            let recalls: Vec<String> = report.recall_at.iter().map(|(k, r)| format!("R@{k}={r:.4}")).collect();
            println!(
                "run {} -> {}\nw-F1={:.4} {} failed={} tokens={} cost={:.6}",
                artifacts.manifest.run_id,
                dir.display(),
                report.w_f1,
                recalls.join(" "),
                report.n_failed,
                artifacts.total_usage.total_tokens(),
                artifacts.total_usage.estimated_cost
            );
        }
        Command::Evaluate { run_dir, ks } => {
            let artifacts = load_run(&run_dir)?;
            let cfg = &artifacts.manifest.config;
            let registry = Arc::new(load_registry(&cfg.registry)?);
            let full = load_cohort(&cfg.test_cohort, registry.clone())?;
            let cohort = match &artifacts.manifest.request.patients {
                None => full,
                Some(ids) => {
                    let mut selected = Vec::new();
                    for id in ids {
                        selected.push(full.patient(id).with_context(|| format!("patient {id} not in cohort"))?.clone());
                    }
                    dxcausal_core::ehr::Cohort::new(registry, selected)?
                }
            };
            let ks = if ks.is_empty() { cfg.recall_ks.clone() } else { ks };
            let report = evaluate(&artifacts, &cohort, &ks)?;
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::write(run_dir.join("metrics.json"), format!("{text}\n"))?;
            println!("{text}");
        }
        Command::Serve { config, bind } => {
            let pipeline = Arc::new(Pipeline::load(RunConfig::load(&config)?)?);
            tokio::runtime::Runtime::new()?.block_on(serve(pipeline, bind))?;
        }
        Command::ReportUsage {
            run_dir,
            input_per_1k,
            output_per_1k,
        } => {
            let artifacts = load_run(&run_dir)?;
            let rates = match (input_per_1k, output_per_1k) {
                (Some(i), Some(o)) => TokenRates::new(i, o),
                _ => artifacts.manifest.config.rates,
            };
            let total = rates.usage(artifacts.total_usage.input_tokens, artifacts.total_usage.output_tokens);
            let n = artifacts.outcomes.len().max(1) as f64;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "run_id": artifacts.manifest.run_id,
                    "patients": artifacts.outcomes.len(),
                    "input_tokens": total.input_tokens,
                    "output_tokens": total.output_tokens,
                    "total_tokens": total.total_tokens(),
                    "estimated_cost": total.estimated_cost,
                    "per_patient": {
                        "tokens": total.total_tokens() as f64 / n,
                        "estimated_cost": total.estimated_cost / n,
                    },
                    "rates": rates,
                }))?
            );
        }
    }
    Ok(())
}
