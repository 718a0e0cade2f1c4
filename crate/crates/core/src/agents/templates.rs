use crate::gateway::{PromptTemplate, TemplateSet};

pub const KNOWLEDGE_QUERY: &str = "knowledge.query";
pub const REASON_IN_DOC: &str = "knowledge.reason_in_doc";
pub const HYPOTHESIS: &str = "causal.hypothesis";
pub const AMENDMENT: &str = "causal.amendment";
pub const REPAIR: &str = "causal.repair";
pub const DECISION: &str = "decision";

pub const DIAGNOSIS_HISTORY: &str = "Diagnosis history";
pub const CANDIDATE_DISEASES: &str = "Candidate diseases";
pub const META_DATA: &str = "Meta-data";
pub const DOCUMENT: &str = "Document";
pub const DISEASE_NAMES: &str = "Disease names";
pub const SUMMARY: &str = "Summary";
pub const MEMORY: &str = "Memory";
pub const GRAPH: &str = "Graph";
pub const DAG_JSON: &str = "DAG.json";
pub const CLINICIAN_COMMENT: &str = "Clinician comment";

const GRAPH_FORMAT: &str = r#"Use exactly this shape, with disease codes as node names: {"nodes": ["code", ...], "edges": [["cause code", "effect code"], ...]}"#;

/// The built-in prompt set. Bodies can be replaced per deployment with
/// [`TemplateSet::override_from_dir`].
pub fn default_templates() -> TemplateSet {
    let mut set = TemplateSet::default();
    let mut add = |id: &str, body: String, required: &[&str]| {
        set.insert(PromptTemplate::new(id, body, required.iter().copied()).expect("built-in template is valid"));
    };
    add(
        KNOWLEDGE_QUERY,
        "Generate a search query to retrieve the most relevant information from the knowledge database \
         using {Diagnosis history} and {Candidate diseases}. The generated search query should take into \
         account the characteristics of the knowledge database, as described by the provided {Meta-data}.\n\
         Reply with the query text only."
            .into(),
        &[DIAGNOSIS_HISTORY, CANDIDATE_DISEASES, META_DATA],
    );
    add(
        REASON_IN_DOC,
        "Summarize the {Document}. The output summary should satisfy the following requirements:\n\
         Relevance: Include only information related to the patient's {Diagnosis history} and {Candidate diseases}.\n\
         Conciseness: Remove redundant and unnecessary details while maintaining key insights.\n\
         Clarity: Ensure the summary is well-structured and easy to understand."
            .into(),
        &[DOCUMENT, DIAGNOSIS_HISTORY, CANDIDATE_DISEASES],
    );
    add(
        HYPOTHESIS,
        format!(
            "Generate a Directed Acyclic Graph (DAG) to represent the causal relationships between the given \
             set of {{Disease names}}. Use the provided {{Summary}}, along with contextual knowledge and \
             reasoning, to infer causality. The output should be in JSON format.\n{GRAPH_FORMAT}"
        ),
        &[DISEASE_NAMES, SUMMARY],
    );
    add(
        AMENDMENT,
        format!(
            "Adjust the causal graph based on the current and previous versions stored in {{Memory}}, along \
             with their fitting scores. Consider the following questions:\n\
             Are there any links that should be added?\n\
             Should any existing links be removed?\n\
             Should any directions be reversed?\n\
             Generate a revised causal graph and output it in a valid JSON format.\n{GRAPH_FORMAT}"
        ),
        &[MEMORY],
    );
    add(
        REPAIR,
        format!(
            "The causal graph below contains at least one directed cycle, so it is not a DAG:\n{{Graph}}\n\
             Remove or reverse links until no cycle remains and output the corrected graph in a valid JSON \
             format.\n{GRAPH_FORMAT}"
        ),
        &[GRAPH],
    );
    add(
        DECISION,
        "Predict a list of diseases the patient may be diagnosed with in the future based on:\n\
         Patient summary and disease information: {Summary}\n\
         Causal DAG of disease relationships: {DAG.json}\n\
         Optional clinician comment: {Clinician comment}\n\
         Output format:\n\
         A JSON list of predicted ICD-9 codes.\n\
         A detailed explanation of the reasoning process.\n\
         Separate the two parts using the special token <SEP>."
            .into(),
        &[SUMMARY, DAG_JSON, CLINICIAN_COMMENT],
    );
    set
}
