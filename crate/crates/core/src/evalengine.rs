//! Agreement metrics over run-sets.
//!
//! Labels from two sources are compared only on jointly labeled items. Kappa
//! is computed from integer counts so degenerate cases are decided exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{AgreementStats, Annotation, FieldSpec, FieldType, LabelSource, RunSet, RunSetId, SessionId};
use crate::orchestrator::load_prompt_version;
use crate::store::{Access, Collection, DocumentStore, Filter, StoreError};

pub type ItemKey = (SessionId, usize);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVector {
    pub items: BTreeMap<ItemKey, String>,
}

impl LabelVector {
    pub fn from_labels<I, S>(session: &SessionId, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let items = labels
            .into_iter()
            .enumerate()
            .filter_map(|(i, l)| canonicalize(l.as_ref()).map(|c| ((session.clone(), i), c)))
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Trim and case-fold; empty labels are dropped.
pub fn canonicalize(label: &str) -> Option<String> {
    let c = label.trim().to_lowercase();
    (!c.is_empty()).then_some(c)
}

/// Label pairs for items present in both vectors, in (session, index) order.
pub fn align(a: &LabelVector, b: &LabelVector) -> Vec<(String, String)> {
    a.items.iter().filter_map(|(k, la)| b.items.get(k).map(|lb| (la.clone(), lb.clone()))).collect()
}

/// Unweighted Cohen's kappa. `None` for an empty pair list.
pub fn cohen_kappa<L: Ord>(pairs: &[(L, L)]) -> Option<AgreementStats> {
    if pairs.is_empty() {
        return None;
    }
    let mut count_a: BTreeMap<&L, u128> = BTreeMap::new();
    let mut count_b: BTreeMap<&L, u128> = BTreeMap::new();
    let mut agree: u128 = 0;
    for (a, b) in pairs {
        *count_a.entry(a).or_default() += 1;
        *count_b.entry(b).or_default() += 1;
        if a == b {
            agree += 1;
        }
    }
    let n = pairs.len() as u128;
    let chance: u128 = count_a.iter().map(|(c, ca)| ca * count_b.get(c).copied().unwrap_or(0)).sum();
    let nn = n * n;
    let kappa = if chance == nn {
        1.0
    } else {
        let num = (n * agree) as f64 - chance as f64;
        let den = (nn - chance) as f64;
        (num / den).clamp(-1.0, 1.0)
    };
    Some(AgreementStats {
        observed_agreement: agree as f64 / n as f64,
        expected_agreement: chance as f64 / nn as f64,
        kappa,
        n_items: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub per_code: BTreeMap<String, CodeStats>,
    /// Means over codes with non-zero support.
    pub macro_precision: f64,
    pub macro_recall: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision and recall of a candidate against a reference.
/// Pairs are `(reference, candidate)`. `None` for an empty list.
pub fn precision_recall(pairs: &[(String, String)]) -> Option<PrecisionRecall> {
    if pairs.is_empty() {
        return None;
    }
    let codes: BTreeSet<&String> = pairs.iter().flat_map(|(r, c)| [r, c]).collect();
    let mut per_code = BTreeMap::new();
    for code in codes {
        let (mut tp, mut fp, mut fn_, mut support) = (0, 0, 0, 0);
        for (r, c) in pairs {
            let (is_r, is_c) = (r == code, c == code);
            support += usize::from(is_r);
            match (is_r, is_c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        per_code.insert(
            code.clone(),
            CodeStats {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                support,
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
            },
        );
    }
    let present: Vec<&CodeStats> = per_code.values().filter(|s| s.support > 0).collect();
    let mean = |f: fn(&CodeStats) -> f64| present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64;
    Some(PrecisionRecall {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        per_code,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPrecisionRecall {
    pub source: String,
    pub coverage: usize,
    #[serde(flatten)]
    pub stats: Option<PrecisionRecall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConfusion {
    pub a: usize,
    pub b: usize,
    pub codes: Vec<String>,
    /// Rows are labels of source `a`, columns labels of source `b`.
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub runset_id: RunSetId,
    pub target_field: String,
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Number of labeled items per source.
    pub labeled_items: Vec<usize>,
    /// `null` where the pair has no jointly labeled items.
    pub agreement_matrix: Vec<Vec<Option<f64>>>,
    pub kappa_matrix: Vec<Vec<Option<f64>>>,
    pub expected_agreement_matrix: Vec<Vec<Option<f64>>>,
    pub coverage: Vec<Vec<usize>>,
    /// Every non-reference member against the reference.
    pub per_code: Vec<MemberPrecisionRecall>,
    pub confusion: Vec<PairConfusion>,
}

/// Computes the report from already-built label vectors.
pub fn evaluate_vectors(
    runset_id: RunSetId,
    target_field: &str,
    sources: &[LabelSource],
    vectors: &[LabelVector],
    reference: Option<usize>,
) -> EvaluationReport {
    let k = sources.len();
    let mut agreement = vec![vec![None; k]; k];
    let mut kappa = vec![vec![None; k]; k];
    let mut expected = vec![vec![None; k]; k];
    let mut coverage = vec![vec![0; k]; k];
    let mut confusion = Vec::new();
    for i in 0..k {
        for j in i..k {
            let pairs = align(&vectors[i], &vectors[j]);
            coverage[i][j] = pairs.len();
            coverage[j][i] = pairs.len();
            if let Some(stats) = cohen_kappa(&pairs) {
                for (x, y) in [(i, j), (j, i)] {
                    agreement[x][y] = Some(stats.observed_agreement);
                    kappa[x][y] = Some(stats.kappa);
                    expected[x][y] = Some(stats.expected_agreement);
                }
            }
            if i < j {
                let codes: Vec<String> =
                    pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect::<BTreeSet<_>>().into_iter().collect();
                let pos = |c: &String| codes.binary_search(c).expect("code present");
                let mut counts = vec![vec![0; codes.len()]; codes.len()];
                for (a, b) in &pairs {
                    counts[pos(a)][pos(b)] += 1;
                }
                confusion.push(PairConfusion { a: i, b: j, codes, counts });
            }
        }
    }
    let per_code = match reference {
        None => Vec::new(),
        Some(r) => (0..k)
            .filter(|&m| m != r)
            .map(|m| {
                let pairs = align(&vectors[r], &vectors[m]);
                MemberPrecisionRecall { source: sources[m].to_string(), coverage: pairs.len(), stats: precision_recall(&pairs) }
            })
            .collect(),
    };
    EvaluationReport {
        runset_id,
        target_field: target_field.to_owned(),
        sources: sources.iter().map(ToString::to_string).collect(),
        reference: reference.map(|r| sources[r].to_string()),
        labeled_items: vectors.iter().map(LabelVector::len).collect(),
        agreement_matrix: agreement,
        kappa_matrix: kappa,
        expected_agreement_matrix: expected,
        coverage,
        per_code,
        confusion,
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target field `{0}` is not defined by the members' schema")]
    TargetFieldMissing(String),
    #[error("target field `{0}` is an array; per-item agreement needs a single-valued field")]
    ArrayTargetField(String),
    #[error("members use different definitions of target field `{0}`")]
    SchemaMismatch(String),
    #[error("no schema found for any member of the run-set")]
    NoSchema,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Orchestrator(String),
}

fn label_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => canonicalize(s),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn member_filter(source: &LabelSource) -> Filter {
    match source {
        LabelSource::Run { run_id } => Filter::new().eq("source.kind", "run").eq("source.run_id", run_id.as_str()),
        LabelSource::Human { coder_id } => Filter::new().eq("source.kind", "human").eq("source.coder_id", coder_id.as_str()),
    }
}

/// Loads every member's annotations and evaluates them.
pub fn evaluate_runset(rs: &RunSet, store: &dyn DocumentStore) -> Result<EvaluationReport, EvalError> {
    let mut per_member: Vec<Vec<Annotation>> = Vec::new();
    let mut versions = BTreeSet::new();
    for m in &rs.members {
        let anns: Vec<Annotation> = store.query_all_as(Collection::Annotations, &member_filter(m), Access::Standard)?;
        versions.extend(anns.iter().map(|a| a.prompt_version.clone()));
        if let LabelSource::Run { run_id } = m {
            if let Some(run) = store.get_as::<crate::model::Run>(Collection::Runs, run_id.as_str(), Access::Standard)? {
                versions.insert(run.prompt_version);
            }
        }
        per_member.push(anns);
    }
    let mut spec: Option<FieldSpec> = None;
    for v in &versions {
        let pv = load_prompt_version(store, v).map_err(|e| EvalError::Orchestrator(e.to_string()))?;
        let f = pv.schema.field(&rs.target_field).cloned().ok_or_else(|| EvalError::TargetFieldMissing(rs.target_field.clone()))?;
        match &spec {
            None => spec = Some(f),
            Some(s) if *s != f => return Err(EvalError::SchemaMismatch(rs.target_field.clone())),
            Some(_) => {}
        }
    }
    let spec = spec.ok_or(EvalError::NoSchema)?;
    if matches!(spec.kind, FieldType::Array { .. }) {
        return Err(EvalError::ArrayTargetField(rs.target_field.clone()));
    }
    let vectors: Vec<LabelVector> = per_member
        .iter()
        .map(|anns| LabelVector {
            items: anns
                .iter()
                .filter_map(|a| {
                    let label = label_text(a.document.get(&rs.target_field)?)?;
                    Some(((a.session_id.clone(), a.utterance_index), label))
                })
                .collect(),
        })
        .collect();
    let reference = rs.reference.as_ref().and_then(|r| rs.members.iter().position(|m| m == r));
    Ok(evaluate_vectors(rs.id.clone(), &rs.target_field, &rs.members, &vectors, reference))
}

/// Cache key for a report: changes whenever a member's labels change.
pub fn annotations_fingerprint(rs: &RunSet, store: &dyn DocumentStore) -> Result<String, StoreError> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(rs).map_err(|e| StoreError::BadDocument(e.to_string()))?);
    for m in &rs.members {
        let anns: Vec<Value> = store.query_all_as(Collection::Annotations, &member_filter(m), Access::Standard)?;
        for a in anns {
            h.update(a.to_string().as_bytes());
            h.update(b"\n");
        }
        h.update(b"--\n");
    }
    Ok(hex::encode(h.finalize()))
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_matrix<T>(sources: &[String], m: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(sources.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (name, row) in sources.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(&fmt));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// CSV files keyed by name: `agreement`, `kappa`, `coverage`,
/// `precision_recall`, and `confusion_<a>_<b>` per pair.
pub fn report_csv(report: &EvaluationReport) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("agreement".into(), write_matrix(&report.sources, &report.agreement_matrix, |v| cell(*v)));
    out.insert("kappa".into(), write_matrix(&report.sources, &report.kappa_matrix, |v| cell(*v)));
    out.insert("coverage".into(), write_matrix(&report.sources, &report.coverage, |v| v.to_string()));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "code", "precision", "recall", "support"]).expect("in-memory write");
    for m in &report.per_code {
        if let Some(stats) = &m.stats {
            for (code, s) in &stats.per_code {
                w.write_record([m.source.clone(), code.clone(), s.precision.to_string(), s.recall.to_string(), s.support.to_string()])
                    .expect("in-memory write");
            }
            w.write_record([m.source.clone(), "(macro)".into(), stats.macro_precision.to_string(), stats.macro_recall.to_string(), String::new()])
                .expect("in-memory write");
        }
    }
    out.insert("precision_recall".into(), String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));

    for c in &report.confusion {
        out.insert(format!("confusion_{}_{}", c.a, c.b), write_matrix(&c.codes, &c.counts, |v| v.to_string()));
    }
    out
}
