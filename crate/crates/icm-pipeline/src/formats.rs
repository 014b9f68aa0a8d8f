//! File formats for run artifacts: source ingestion, the dataset JSONL
//! format, assignment/trace/report files, and atomic writes.
//!
//! Labels cross these boundaries as strings ("True"/"False"); indices stay
//! internal to the engine.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use icm_core::datasets::{RawRecord, SourceDataset};
use icm_core::eval::EvaluationReport;
use icm_core::model::{ConsistencyConstraint, Dataset, Example, LabelAssignment, Provenance};
use icm_core::search::SearchTrace;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} line {line}: expected a JSON object")]
    NotAnObject { path: String, line: usize },
    #[error("{path}: missing header line")]
    MissingHeader { path: String },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("assignment references unknown example {id}")]
    UnknownId { id: String },
    #[error("example {id} has no candidate label {label:?}")]
    UnknownLabel { id: String, label: String },
    #[error("writing {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

/// Writes `bytes` to `path` via a temporary sibling file and a rename, so
/// readers never observe a half-written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => String::from("tmp"),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    file.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_value_to_string(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        other => Some(other.to_string()),
    }
}

/// Loads a line-delimited JSON source file into raw records, in file order,
/// with 1-based line numbers attached for error reporting.
///
/// Records take their id from an `id` field when present, otherwise from
/// the source name and line number.
pub fn load_source(path: &Path, source: SourceDataset) -> Result<Vec<RawRecord>, FormatError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| io_err(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| FormatError::Parse {
            path: path.display().to_string(),
            line: line_no,
            source,
        })?;
        let object = value
            .as_object()
            .ok_or_else(|| FormatError::NotAnObject { path: path.display().to_string(), line: line_no })?;
        let id = object
            .get("id")
            .and_then(json_value_to_string)
            .unwrap_or_else(|| format!("{}-{line_no:05}", source.as_str()));
        let mut record = RawRecord::new(id, line_no);
        for (key, value) in object {
            if key == "id" {
                continue;
            }
            if let Some(text) = json_value_to_string(value) {
                record.fields.insert(key.clone(), text);
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// One line of the dataset JSONL format: a header, then examples, then
/// derived constraints.
#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DatasetLine {
    Header {
        name: String,
    },
    Example {
        #[serde(flatten)]
        example: Box<Example>,
    },
    Constraint {
        #[serde(flatten)]
        constraint: ConsistencyConstraint,
    },
}

/// Serializes a dataset as line-delimited JSON.
pub fn dataset_to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    let mut push = |line: &DatasetLine| {
        out.push_str(&serde_json::to_string(line).expect("dataset lines serialize"));
        out.push('\n');
    };
    push(&DatasetLine::Header { name: dataset.name.clone() });
    for example in &dataset.examples {
        push(&DatasetLine::Example { example: Box::new(example.clone()) });
    }
    for constraint in &dataset.constraints {
        push(&DatasetLine::Constraint { constraint: constraint.clone() });
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), FormatError> {
    atomic_write(path, dataset_to_jsonl(dataset).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut name = None;
    let mut examples = Vec::new();
    let mut constraints = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| io_err(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&text).map_err(|source| FormatError::Parse {
            path: path.display().to_string(),
            line: line_no,
            source,
        })?;
        match parsed {
            DatasetLine::Header { name: n } => name = Some(n),
            DatasetLine::Example { example } => examples.push(*example),
            DatasetLine::Constraint { constraint } => constraints.push(constraint),
        }
    }
    let name = name.ok_or_else(|| FormatError::MissingHeader { path: path.display().to_string() })?;
    let mut dataset = Dataset::new(name, examples);
    dataset.constraints = constraints;
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
struct AssignmentEntry {
    id: String,
    label: String,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct AssignmentFile {
    labels: Vec<AssignmentEntry>,
}

/// Serializes an assignment with labels as candidate strings, in id order.
pub fn assignment_to_json(dataset: &Dataset, assignment: &LabelAssignment) -> Result<String, FormatError> {
    let mut labels = Vec::with_capacity(assignment.len());
    for (id, label) in assignment.iter() {
        let example = dataset.example(id).ok_or_else(|| FormatError::UnknownId { id: id.to_owned() })?;
        labels.push(AssignmentEntry {
            id: id.to_owned(),
            label: example.candidate_labels[label].clone(),
            provenance: assignment.provenance(id).expect("ids and provenance share keys"),
        });
    }
    let mut json = serde_json::to_string_pretty(&AssignmentFile { labels }).expect("assignment serializes");
    json.push('\n');
    Ok(json)
}

pub fn write_assignment(path: &Path, dataset: &Dataset, assignment: &LabelAssignment) -> Result<(), FormatError> {
    atomic_write(path, assignment_to_json(dataset, assignment)?.as_bytes())
}

pub fn read_assignment(path: &Path, dataset: &Dataset) -> Result<LabelAssignment, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: AssignmentFile = serde_json::from_str(&text)
        .map_err(|source| FormatError::Json { path: path.display().to_string(), source })?;
    let mut assignment = LabelAssignment::new();
    for entry in file.labels {
        let example =
            dataset.example(&entry.id).ok_or_else(|| FormatError::UnknownId { id: entry.id.clone() })?;
        let label = example
            .candidate_labels
            .iter()
            .position(|l| *l == entry.label)
            .ok_or_else(|| FormatError::UnknownLabel { id: entry.id.clone(), label: entry.label.clone() })?;
        assignment.set(entry.id, label, entry.provenance);
    }
    Ok(assignment)
}

/// Serializes a search trace as line-delimited JSON, one iteration record
/// per line and a final summary line, for score-vs-iteration plotting.
pub fn trace_to_jsonl(trace: &SearchTrace) -> String {
    let mut out = String::new();
    for record in &trace.records {
        out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
        out.push('\n');
    }
    out.push_str(
        &serde_json::to_string(&serde_json::json!({ "final": trace.final_score }))
            .expect("trace summary serializes"),
    );
    out.push('\n');
    out
}

pub fn write_trace(path: &Path, trace: &SearchTrace) -> Result<(), FormatError> {
    atomic_write(path, trace_to_jsonl(trace).as_bytes())
}

pub fn write_report_json(path: &Path, report: &EvaluationReport) -> Result<(), FormatError> {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    atomic_write(path, json.as_bytes())
}

pub fn read_report_json(path: &Path) -> Result<EvaluationReport, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.display().to_string(), source })
}

/// One row per (task | category, framing, mode) with a stable column order.
pub fn report_to_csv(report: &EvaluationReport) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["section", "name", "framing", "mode", "numerator", "denominator", "rate"])?;
    let mode = report.mode.as_str();
    for (task, cell) in &report.per_task_accuracy {
        writer.write_record([
            "accuracy",
            task,
            "",
            mode,
            &cell.correct.to_string(),
            &cell.total.to_string(),
            &format!("{:.6}", cell.rate()),
        ])?;
    }
    if let Some(bias) = &report.bias {
        for row in &bias.per_category {
            writer.write_record([
                "bias_category",
                &row.category,
                &row.framing,
                mode,
                &row.failures.to_string(),
                &row.total.to_string(),
                &format!("{:.6}", row.rate),
            ])?;
        }
        for row in &bias.per_framing {
            writer.write_record([
                "bias_framing",
                "all",
                &row.framing,
                mode,
                &row.failures.to_string(),
                &row.total.to_string(),
                &format!("{:.6}", row.rate),
            ])?;
        }
    }
    let bytes = writer.into_inner().expect("csv buffer");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_report_csv(path: &Path, report: &EvaluationReport) -> Result<(), FormatError> {
    let csv = report_to_csv(report)
        .map_err(|source| FormatError::Csv { path: path.display().to_string(), source })?;
    atomic_write(path, csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use icm_core::model::TaskKind;

    fn scratch(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("icm-formats-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{name}-{}", std::process::id()))
    }

    fn small_dataset() -> Dataset {
        let mut a = Example::new("a", TaskKind::YesNo, "Claim: x.\nI think this Claim is", "x");
        a.group_id = Some(String::from("g"));
        a.metadata.insert(String::from("source"), String::from("normbank"));
        let b = Example::new("b", TaskKind::YesNo, "Claim: y.\nI think this Claim is", "y");
        let mut dataset = Dataset::new("small", vec![a, b]);
        dataset.constraints.push(ConsistencyConstraint::pair_flip("a", "b"));
        dataset
    }

    #[test]
    fn dataset_round_trips_through_jsonl() {
        let dataset = small_dataset();
        let path = scratch("dataset.jsonl");
        write_dataset(&path, &dataset).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), dataset);
    }

    #[test]
    fn assignment_round_trips_with_string_labels() {
        let dataset = small_dataset();
        let mut assignment = LabelAssignment::new();
        assignment.set("a", 0, Provenance::Search);
        assignment.set("b", 1, Provenance::Fixed);
        let json = assignment_to_json(&dataset, &assignment).unwrap();
        assert!(json.contains("\"label\": \"True\""));
        assert!(json.contains("\"label\": \"False\""));
        let path = scratch("assignment.json");
        write_assignment(&path, &dataset, &assignment).unwrap();
        assert_eq!(read_assignment(&path, &dataset).unwrap(), assignment);
    }

    #[test]
    fn load_source_reports_the_failing_line() {
        let path = scratch("bad.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        writeln!(file, "{{\"claim\": \"ok\"}}").unwrap();
        writeln!(file, "{{\"claim\": \"ok too\"}}").unwrap();
        writeln!(file, "{{not json").unwrap();
        drop(file);
        let err = load_source(&path, SourceDataset::Normbank).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn load_source_preserves_order_and_lines() {
        let path = scratch("ok.jsonl");
        let mut file = fs::File::create(&path).unwrap();
        for i in 0..10 {
            writeln!(file, "{{\"id\": \"r{i}\", \"claim\": \"c{i}\", \"n\": {i}}}").unwrap();
        }
        drop(file);
        let records = load_source(&path, SourceDataset::Normbank).unwrap();
        assert_eq!(records.len(), 10);
        assert_eq!(records[3].id, "r3");
        assert_eq!(records[3].line, 4);
        assert_eq!(records[3].fields.get("n").map(String::as_str), Some("3"));
    }

    #[test]
    fn empty_source_file_is_empty() {
        let path = scratch("empty.jsonl");
        fs::File::create(&path).unwrap();
        assert!(load_source(&path, SourceDataset::Normbank).unwrap().is_empty());
    }
}
