use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EmbedderConfig, ProviderConfig, RunConfig};
use super::metrics::{recall_at_k, weighted_f1, MetricsReport, PatientMetrics};
use super::PipelineError;
use crate::agents::{
    causal_discovery, decision_making, default_templates, knowledge_synthesis, AgentEnv, AgentError,
    DiscoveryIteration, DiscoveryLimits, DiscoveryTrace, PatientInputs, Prediction, RuleBasedProvider,
    SynthesisOutput,
};
use crate::causal::{CausalDag, StopRule};
use crate::ehr::{
    build_diagnosis_matrix, build_transition_matrix, load_cohort, load_registry, read_diagnosis_matrix,
    read_transition_matrix, select_candidates, Candidate, CodeRegistry, Cohort, DiagnosisMatrix, PatientRecord,
    TransitionMatrix,
};
use crate::gateway::{
    CompletionParams, CompletionProvider, Gateway, OpenAiCompatible, ScriptedProvider, TemplateSet, TokenUsage,
};
use crate::knowledge::{Embedder, HashEmbedder, RemoteEmbedder, VectorStore};

pub const RUN_FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "run.json";
const ARTIFACTS_FILE: &str = "artifacts.jsonl";
const TRANSCRIPT_FILE: &str = "transcript.jsonl";
const USAGE_FILE: &str = "usage.json";
const METRICS_FILE: &str = "metrics.json";

/// Which patients to run and with what clinician comment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// Restrict to these ids, in this order; the whole test cohort when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patients: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientArtifact {
    pub patient_id: String,
    pub history: Vec<String>,
    pub candidates: Vec<Candidate>,
    /// Absent when knowledge synthesis is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisOutput>,
    /// Absent when causal discovery is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discovery: Option<DiscoveryTrace>,
    /// The graph handed to the decision agent.
    pub graph: CausalDag,
    pub prediction: Prediction,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFailure {
    pub patient_id: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_discovery: Option<Vec<DiscoveryIteration>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PatientOutcome {
    Ok(PatientArtifact),
    Failed(PatientFailure),
}

impl PatientOutcome {
    pub fn patient_id(&self) -> &str {
        match self {
            PatientOutcome::Ok(a) => &a.patient_id,
            PatientOutcome::Failed(f) => &f.patient_id,
        }
    }
}

/// Identity of a run: its config, request and input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    pub config: RunConfig,
    pub request: RunRequest,
    pub registry_hash: String,
    /// Hash of the training cohort, or of the persisted matrices when those were loaded.
    pub train_hash: String,
    pub test_hash: String,
    pub provider_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub outcomes: Vec<PatientOutcome>,
    /// Gateway usage over the whole run, failed patients included.
    pub total_usage: TokenUsage,
}

#[derive(Serialize, Deserialize)]
struct UsageFile {
    total: TokenUsage,
    patients: usize,
    failed: usize,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn exchange_usage(synthesis: Option<&SynthesisOutput>, discovery: Option<&DiscoveryTrace>, prediction: &Prediction) -> TokenUsage {
    let mut total = prediction.exchange.usage;
    if let Some(s) = synthesis {
        total = total + s.exchanges.iter().map(|e| e.usage).sum();
    }
    if let Some(d) = discovery {
        for it in &d.iterations {
            total = total + it.exchange.usage;
            total = total + it.repair_exchanges.iter().map(|e| e.usage).sum();
        }
    }
    total
}

/// Loaded inputs and services for a configured run.
pub struct Pipeline {
    pub config: RunConfig,
    pub registry: Arc<CodeRegistry>,
    pub test: Cohort,
    pub at: Arc<TransitionMatrix>,
    pub ad: Arc<DiagnosisMatrix>,
    pub store: Option<VectorStore>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub templates: TemplateSet,
    pub gateway: Gateway,
    train_hash: String,
}

impl Pipeline {
    pub fn load(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let registry = Arc::new(load_registry(&config.registry)?);
        let test = load_cohort(&config.test_cohort, registry.clone())?;
        let (at, ad, train_hash) = match &config.matrices_dir {
            Some(dir) => {
                let at_path = dir.join("transition.jsonl");
                let ad_path = dir.join("diagnosis.jsonl");
                let at = read_transition_matrix(&at_path)?;
                let ad = read_diagnosis_matrix(&ad_path)?;
                for reg in [at.registry(), ad.registry()] {
                    if reg.content_hash() != registry.content_hash() {
                        return Err(PipelineError::Config(format!(
                            "matrices in {} were built with a different code registry",
                            dir.display()
                        )));
                    }
                }
                let read = |p: &Path| std::fs::read(p).map_err(|e| PipelineError::io(p, e));
                let hash = sha256_hex(&[&read(&at_path)?, &read(&ad_path)?]);
                (at, ad, format!("matrices:{hash}"))
            }
            None => {
                let train = load_cohort(&config.train_cohort, registry.clone())?;
                let hash = train.content_hash();
                (build_transition_matrix(&train), build_diagnosis_matrix(&train), hash)
            }
        };
        let at = Arc::new(at);
        let ad = Arc::new(ad);

        let (store, embedder) = if config.ablation.disable_knowledge {
            (None, None)
        } else {
            let dir = config.store_dir.as_ref().expect("validated");
            let store = VectorStore::load(dir)?;
            let embedder: Arc<dyn Embedder> = match &config.embedder {
                EmbedderConfig::Hash => Arc::new(HashEmbedder::new(config.seed)),
                EmbedderConfig::Remote(c) => Arc::new(RemoteEmbedder::from_env(c.clone())),
            };
            if store.metadata().embedder != embedder.id() {
                return Err(PipelineError::Config(format!(
                    "store in {} was built with embedder {}, config selects {}",
                    dir.display(),
                    store.metadata().embedder,
                    embedder.id()
                )));
            }
            (Some(store), Some(embedder))
        };

        let mut templates = default_templates();
        if let Some(dir) = &config.template_dir {
            templates.override_from_dir(dir)?;
        }

        let provider: Arc<dyn CompletionProvider> = match &config.provider {
            ProviderConfig::RuleBased => Arc::new(RuleBasedProvider::new(
                registry.clone(),
                at.clone(),
                ad.clone(),
                config.params.alpha,
                config.params.parent_cap,
            )),
            ProviderConfig::Scripted { script } => Arc::new(ScriptedProvider::from_file(script)?),
            ProviderConfig::OpenaiCompatible(c) => Arc::new(OpenAiCompatible::from_env(c.clone())),
        };
        let gateway = Gateway::new(provider, config.rates).with_max_in_flight(config.max_in_flight);

        Ok(Self {
            config,
            registry,
            test,
            at,
            ad,
            store,
            embedder,
            templates,
            gateway,
            train_hash,
        })
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.config.params.temperature,
            max_tokens: self.config.params.max_tokens,
        }
    }

    pub fn limits(&self) -> DiscoveryLimits {
        let p = &self.config.params;
        DiscoveryLimits {
            stop: StopRule {
                t_max: p.t_max,
                score_tolerance: p.score_tolerance,
            },
            alpha: p.alpha,
            parent_cap: p.parent_cap,
            reprompt_budget: p.reprompt_budget,
        }
    }

    pub fn manifest(&self, request: &RunRequest) -> RunManifest {
        let mut manifest = RunManifest {
            format_version: RUN_FORMAT_VERSION,
            run_id: String::new(),
            config: self.config.clone(),
            request: request.clone(),
            registry_hash: self.registry.content_hash(),
            train_hash: self.train_hash.clone(),
            test_hash: self.test.content_hash(),
            provider_id: self.gateway.provider_id(),
            embedder_id: self.embedder.as_ref().map(|e| e.id()),
        };
        let body = serde_json::to_vec(&manifest).expect("serializable");
        manifest.run_id = sha256_hex(&[&body])[..16].to_string();
        manifest
    }

    /// History, candidates and the three agents for one patient.
    pub fn predict_patient(&self, patient: &PatientRecord, comment: Option<&str>) -> Result<PatientArtifact, PipelineError> {
        let history_idx = patient.history();
        if history_idx.is_empty() {
            return Err(PipelineError::NoHistory(patient.patient_id.clone()));
        }
        let p = &self.config.params;
        let candidates = select_candidates(&history_idx, &self.at, p.epsilon, p.max_candidates)?;
        let inputs = PatientInputs {
            patient_id: patient.patient_id.clone(),
            history: history_idx.iter().map(|&i| self.registry.code(i).to_string()).collect(),
            candidates,
        };
        let env = AgentEnv {
            gateway: &self.gateway,
            templates: &self.templates,
            registry: &self.registry,
            params: self.params(),
        };
        let synthesis = match (&self.store, &self.embedder) {
            (Some(store), Some(embedder)) if !self.config.ablation.disable_knowledge => {
                Some(knowledge_synthesis(env, &inputs, store, embedder.as_ref(), p.k_retrieval)?)
            }
            _ => None,
        };
        let summaries = synthesis.as_ref().map(|s| s.summaries.as_slice()).unwrap_or(&[]);
        let discovery = if self.config.ablation.disable_causal {
            None
        } else {
            Some(causal_discovery(env, &inputs, summaries, &self.ad, self.limits())?)
        };
        let graph = match &discovery {
            Some(d) => d.final_graph.clone(),
            None => CausalDag::empty(inputs.graph_nodes()),
        };
        let prediction = decision_making(env, &inputs, summaries, &graph, comment)?;
        let usage = exchange_usage(synthesis.as_ref(), discovery.as_ref(), &prediction);
        Ok(PatientArtifact {
            patient_id: inputs.patient_id,
            history: inputs.history,
            candidates: inputs.candidates,
            synthesis,
            discovery,
            graph,
            prediction,
            usage,
        })
    }

    fn outcome(&self, patient: &PatientRecord, comment: Option<&str>) -> PatientOutcome {
        match self.predict_patient(patient, comment) {
            Ok(a) => PatientOutcome::Ok(a),
            Err(e) => {
                log::error!("patient {}: {e}", patient.patient_id);
                let partial_discovery = match &e {
                    PipelineError::Agent(AgentError::DiscoveryAborted { partial, .. }) => Some(partial.clone()),
                    _ => None,
                };
                PatientOutcome::Failed(PatientFailure {
                    patient_id: patient.patient_id.clone(),
                    error: e.to_string(),
                    partial_discovery,
                })
            }
        }
    }

    fn selected(&self, request: &RunRequest) -> Result<Vec<&PatientRecord>, PipelineError> {
        match &request.patients {
            None => Ok(self.test.patients().iter().collect()),
            Some(ids) => ids
                .iter()
                .map(|id| self.test.patient(id).ok_or_else(|| PipelineError::UnknownPatient(id.clone())))
                .collect(),
        }
    }

    /// Runs every selected patient, up to `workers` at a time, handing each
    /// outcome to `sink` in patient order.
    pub fn run_inference(
        &self,
        request: &RunRequest,
        sink: &mut dyn FnMut(&PatientOutcome) -> Result<(), PipelineError>,
    ) -> Result<RunArtifacts, PipelineError> {
        let patients = self.selected(request)?;
        let manifest = self.manifest(request);
        let before = self.gateway.cumulative_usage();
        let comment = request.comment.as_deref();
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let workers = self.config.workers.min(patients.len()).max(1);
        let mut outcomes = Vec::with_capacity(patients.len());

        std::thread::scope(|scope| -> Result<(), PipelineError> {
            let (tx, rx) = mpsc::channel::<(usize, PatientOutcome)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, stop, patients) = (&next, &stop, &patients);
                scope.spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(p) = patients.get(i) else { break };
                        if tx.send((i, self.outcome(p, comment))).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            for (i, outcome) in rx {
                pending.insert(i, outcome);
                while let Some(o) = pending.remove(&outcomes.len()) {
                    if let Err(e) = sink(&o) {
                        stop.store(true, Ordering::Relaxed);
                        return Err(e);
                    }
                    outcomes.push(o);
                }
            }
            Ok(())
        })?;

        let after = self.gateway.cumulative_usage();
        let total_usage = self.config.rates.usage(
            after.input_tokens - before.input_tokens,
            after.output_tokens - before.output_tokens,
        );
        Ok(RunArtifacts {
            manifest,
            outcomes,
            total_usage,
        })
    }

    /// Runs into `runs_dir/<run_id>/`, replacing any earlier run with the
    /// same identity, and evaluates the result.
    pub fn execute(&self, request: &RunRequest) -> Result<(RunArtifacts, MetricsReport, PathBuf), PipelineError> {
        let manifest = self.manifest(request);
        let dir = self.config.runs_dir.join(&manifest.run_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;

        self.gateway.set_transcript(Some(&dir.join(TRANSCRIPT_FILE)))?;
        let artifacts_path = dir.join(ARTIFACTS_FILE);
        let mut out = BufWriter::new(File::create(&artifacts_path).map_err(|e| PipelineError::io(&artifacts_path, e))?);
        let mut sink = |o: &PatientOutcome| -> Result<(), PipelineError> {
            let line = serde_json::to_string(o).expect("serializable");
            writeln!(out, "{line}")
                .and_then(|_| out.flush())
                .map_err(|e| PipelineError::io(&artifacts_path, e))
        };
        let result = self.run_inference(request, &mut sink);
        self.gateway.set_transcript(None)?;
        let artifacts = result?;

        let failed = artifacts.outcomes.iter().filter(|o| matches!(o, PatientOutcome::Failed(_))).count();
        write_json(
            &dir.join(USAGE_FILE),
            &UsageFile {
                total: artifacts.total_usage,
                patients: artifacts.outcomes.len(),
                failed,
            },
        )?;
        let cohort = self.cohort_for(request)?;
        let report = evaluate(&artifacts, &cohort, &self.config.recall_ks)?;
        write_json(&dir.join(METRICS_FILE), &report)?;
        Ok((artifacts, report, dir))
    }

    /// The test cohort restricted to the patients of `request`.
    pub fn cohort_for(&self, request: &RunRequest) -> Result<Cohort, PipelineError> {
        match &request.patients {
            None => Ok(self.test.clone()),
            Some(_) => {
                let patients = self.selected(request)?.into_iter().cloned().collect();
                Ok(Cohort::new(self.registry.clone(), patients)?)
            }
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
}

/// Reads a run directory written by [`Pipeline::execute`].
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunArtifacts, PipelineError> {
    let dir = dir.as_ref();
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != RUN_FORMAT_VERSION {
        return Err(PipelineError::Format(format!("unsupported run format {}", manifest.format_version)));
    }
    let usage: UsageFile = read_json(&dir.join(USAGE_FILE))?;
    let path = dir.join(ARTIFACTS_FILE);
    let f = File::open(&path).map_err(|e| PipelineError::io(&path, e))?;
    let mut outcomes = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        outcomes.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(RunArtifacts {
        manifest,
        outcomes,
        total_usage: usage.total,
    })
}

/// Scores predictions against each patient's final visit.
///
/// When a prediction holds fewer codes than the largest k, the remaining
/// candidates are appended (best first) for R@k only; w-F1 uses the
/// predicted codes alone. Failed patients count as empty predictions.
pub fn evaluate(artifacts: &RunArtifacts, cohort: &Cohort, ks: &[usize]) -> Result<MetricsReport, PipelineError> {
    let by_id: HashMap<&str, &PatientOutcome> = artifacts.outcomes.iter().map(|o| (o.patient_id(), o)).collect();
    let missing: Vec<String> = cohort.patient_ids().into_iter().filter(|id| !by_id.contains_key(id.as_str())).collect();
    let extra: Vec<&str> = by_id.keys().copied().filter(|id| cohort.patient(id).is_none()).collect();
    if !missing.is_empty() || !extra.is_empty() || by_id.len() != artifacts.outcomes.len() {
        return Err(PipelineError::Coverage(format!(
            "missing {missing:?}, unexpected {extra:?}, {} outcome(s) for {} distinct patient(s)",
            artifacts.outcomes.len(),
            by_id.len()
        )));
    }
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    let k_max = ks.iter().max().copied().unwrap_or(0);

    let mut per_patient = Vec::with_capacity(cohort.len());
    let mut pairs = Vec::with_capacity(cohort.len());
    for p in cohort.patients() {
        let truth: BTreeSet<String> = p.last_visit().iter().map(|&i| cohort.registry.code(i).to_string()).collect();
        let (predicted, ranked, padded, failed) = match by_id[p.patient_id.as_str()] {
            PatientOutcome::Ok(a) => {
                let codes = &a.prediction.codes;
                let mut ranked = codes.clone();
                let have: BTreeSet<&String> = codes.iter().collect();
                let pad: Vec<String> = a
                    .candidates
                    .iter()
                    .map(|c| &c.code)
                    .filter(|c| !have.contains(c))
                    .take(k_max.saturating_sub(codes.len()))
                    .cloned()
                    .collect();
                let padded = pad.len();
                ranked.extend(pad);
                (codes.iter().cloned().collect::<BTreeSet<_>>(), ranked, padded, false)
            }
            PatientOutcome::Failed(_) => (BTreeSet::new(), Vec::new(), 0, true),
        };
        per_patient.push(PatientMetrics {
            patient_id: p.patient_id.clone(),
            truth: truth.iter().cloned().collect(),
            predicted: predicted.len(),
            recall_at: ks.iter().map(|&k| (k, recall_at_k(&truth, &ranked, k))).collect(),
            padded,
            failed,
        });
        pairs.push((truth, predicted));
    }
    let n = per_patient.len() as f64;
    let recall_at = ks
        .iter()
        .map(|&k| (k, per_patient.iter().map(|m| m.recall_at[&k]).sum::<f64>() / n))
        .collect();
    Ok(MetricsReport {
        run_id: artifacts.manifest.run_id.clone(),
        n_patients: per_patient.len(),
        n_failed: per_patient.iter().filter(|m| m.failed).count(),
        w_f1: weighted_f1(&pairs),
        recall_at,
        padded_patients: per_patient.iter().filter(|m| m.padded > 0).count(),
        per_patient,
    })
}
