//! JSON-Lines dataset format.
//!
//! ```text
//! traces.jsonl   {"trace_id", "instances": [{"id", "category", "start_ts"}], "edges": [{"src", "dst", "async"}]}
//! metrics.jsonl  {"trace_id", "instance_id", "metric_name", "interval_s", "values": [number|null]}
//! logs.jsonl     {"trace_id", "instance_id", "messages": [string]}
//! labels.jsonl   {"trace_id", "is_anomalous", "root_cause", "fault_type", "fault_ts"}
//! ```
//!
//! Unknown fields are ignored. A `manifest.json` next to the files names them
//! relative to its own directory and records split ratios and seed.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::graph::build_invocation_graph;
use crate::trace::{EdgeRecord, InstanceRecord, LabeledTrace, LogRecord, MetricRecord, TraceBundle, TraceLabel};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub traces: PathBuf,
    pub metrics: PathBuf,
    pub logs: PathBuf,
    pub labels: PathBuf,
    /// train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl DatasetManifest {
    pub fn standard(split: [f64; 3], seed: u64) -> Self {
        DatasetManifest {
            traces: "traces.jsonl".into(),
            metrics: "metrics.jsonl".into(),
            logs: "logs.jsonl".into(),
            labels: "labels.jsonl".into(),
            split,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative and sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }
}

/// Contents of the four files, as text.
#[derive(Debug, Clone, Copy)]
pub struct DatasetFiles<'a> {
    pub traces: (&'a str, &'a str),
    pub metrics: (&'a str, &'a str),
    pub logs: (&'a str, &'a str),
    pub labels: (&'a str, &'a str),
}

pub fn read_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    manifest.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

/// Load and validate every trace named by the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<LabeledTrace>)> {
    let (manifest, base) = read_manifest(path)?;
    let read = |p: &Path| -> Result<(String, String)> {
        let full = base.join(p);
        let text = fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
        Ok((full.display().to_string(), text))
    };
    let traces = read(&manifest.traces)?;
    let metrics = read(&manifest.metrics)?;
    let logs = read(&manifest.logs)?;
    let labels = read(&manifest.labels)?;
    let dataset = parse_dataset(DatasetFiles {
        traces: (&traces.0, &traces.1),
        metrics: (&metrics.0, &metrics.1),
        logs: (&logs.0, &logs.1),
        labels: (&labels.0, &labels.1),
    })?;
    Ok((manifest, dataset))
}

struct Record<'a> {
    file: &'a str,
    line: usize,
    obj: Map<String, Value>,
}

impl Record<'_> {
    fn violation(&self, field: &str) -> Error {
        Error::SchemaViolation {
            file: self.file.to_string(),
            line: self.line,
            field: field.to_string(),
        }
    }

    fn get(&self, field: &str) -> Option<&Value> {
        self.obj.get(field).filter(|v| !v.is_null())
    }

    fn str(&self, field: &str) -> Result<String> {
        self.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| self.violation(field))
    }

    fn opt_str(&self, field: &str) -> Result<Option<String>> {
        match self.get(field) {
            None => Ok(None),
            Some(v) => v.as_str().map(|s| Some(s.to_string())).ok_or_else(|| self.violation(field)),
        }
    }

    fn num(&self, field: &str) -> Result<f64> {
        self.get(field).and_then(Value::as_f64).ok_or_else(|| self.violation(field))
    }

    fn opt_num(&self, field: &str) -> Result<Option<f64>> {
        match self.get(field) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.violation(field)),
        }
    }

    fn bool(&self, field: &str) -> Result<bool> {
        self.get(field).and_then(Value::as_bool).ok_or_else(|| self.violation(field))
    }

    fn array(&self, field: &str) -> Result<&Vec<Value>> {
        self.get(field).and_then(Value::as_array).ok_or_else(|| self.violation(field))
    }

    /// Nested objects of an array field, reported against the enclosing line.
    fn objects(&self, field: &str) -> Result<Vec<Record<'_>>> {
        self.array(field)?
            .iter()
            .map(|v| {
                v.as_object()
                    .map(|o| Record {
                        file: self.file,
                        line: self.line,
                        obj: o.clone(),
                    })
                    .ok_or_else(|| self.violation(field))
            })
            .collect()
    }
}

fn records<'a>(file: &'a str, text: &'a str) -> impl Iterator<Item = Result<Record<'a>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, l)| {
            let line = i + 1;
            let parse_err = |msg: String| Error::Parse {
                file: file.to_string(),
                line,
                msg,
            };
            match serde_json::from_str::<Value>(l) {
                Ok(Value::Object(obj)) => Ok(Record { file, line, obj }),
                Ok(_) => Err(parse_err("expected a JSON object".into())),
                Err(e) => Err(parse_err(e.to_string())),
            }
        })
}

/// Parse and validate the four files of a dataset.
pub fn parse_dataset(files: DatasetFiles) -> Result<Vec<LabeledTrace>> {
    let mut bundles: Vec<TraceBundle> = Vec::new();
    let mut trace_lines = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut instance_ids: Vec<BTreeSet<String>> = Vec::new();

    let (file, text) = files.traces;
    for rec in records(file, text) {
        let rec = rec?;
        let trace_id = rec.str("trace_id")?;
        if index.contains_key(&trace_id) {
            return Err(rec.violation("trace_id"));
        }
        let mut instances = Vec::new();
        for inst in rec.objects("instances")? {
            instances.push(InstanceRecord {
                id: inst.str("id")?,
                category: inst.str("category")?.parse().map_err(|_| inst.violation("category"))?,
                start_ts: inst.num("start_ts")?,
            });
        }
        let mut edges = Vec::new();
        for e in rec.objects("edges")? {
            edges.push(EdgeRecord {
                src: e.str("src")?,
                dst: e.str("dst")?,
                is_async: match e.get("async") {
                    None => false,
                    Some(_) => e.bool("async")?,
                },
            });
        }
        index.insert(trace_id.clone(), bundles.len());
        instance_ids.push(instances.iter().map(|i| i.id.clone()).collect());
        trace_lines.push(rec.line);
        bundles.push(TraceBundle {
            trace_id,
            instances,
            edges,
            metrics: Vec::new(),
            logs: Vec::new(),
        });
    }
    if bundles.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let owner = |rec: &Record| -> Result<usize> {
        let t = *index.get(&rec.str("trace_id")?).ok_or_else(|| rec.violation("trace_id"))?;
        if !instance_ids[t].contains(&rec.str("instance_id")?) {
            return Err(rec.violation("instance_id"));
        }
        Ok(t)
    };

    let (file, text) = files.metrics;
    for rec in records(file, text) {
        let rec = rec?;
        let t = owner(&rec)?;
        let mut values = Vec::new();
        for v in rec.array("values")? {
            values.push(match v {
                Value::Null => None,
                v => Some(v.as_f64().ok_or_else(|| rec.violation("values"))?),
            });
        }
        if values.is_empty() {
            return Err(rec.violation("values"));
        }
        let interval_s = rec.num("interval_s")?;
        if !(interval_s > 0.0) {
            return Err(rec.violation("interval_s"));
        }
        bundles[t].metrics.push(MetricRecord {
            instance_id: rec.str("instance_id")?,
            metric_name: rec.str("metric_name")?,
            interval_s,
            values,
        });
    }

    let (file, text) = files.logs;
    for rec in records(file, text) {
        let rec = rec?;
        let t = owner(&rec)?;
        let messages = rec
            .array("messages")?
            .iter()
            .map(|m| m.as_str().map(str::to_string).ok_or_else(|| rec.violation("messages")))
            .collect::<Result<_>>()?;
        bundles[t].logs.push(LogRecord {
            instance_id: rec.str("instance_id")?,
            messages,
        });
    }

    let mut labels: Vec<Option<TraceLabel>> = vec![None; bundles.len()];
    let (file, text) = files.labels;
    for rec in records(file, text) {
        let rec = rec?;
        let trace_id = rec.str("trace_id")?;
        let t = *index.get(&trace_id).ok_or_else(|| rec.violation("trace_id"))?;
        if labels[t].is_some() {
            return Err(rec.violation("trace_id"));
        }
        let label = TraceLabel {
            trace_id,
            is_anomalous: rec.bool("is_anomalous")?,
            root_cause: rec.opt_str("root_cause")?,
            fault_type: rec.opt_str("fault_type")?,
            fault_ts: rec.opt_num("fault_ts")?,
        };
        match &label.root_cause {
            Some(r) if !instance_ids[t].contains(r) => return Err(rec.violation("root_cause")),
            None if label.is_anomalous => return Err(rec.violation("root_cause")),
            _ => {}
        }
        labels[t] = Some(label);
    }

    bundles
        .into_iter()
        .zip(labels)
        .zip(trace_lines)
        .map(|((bundle, label), line)| {
            let label = label.ok_or_else(|| Error::SchemaViolation {
                file: files.labels.0.to_string(),
                line,
                field: format!("label for trace `{}`", bundle.trace_id),
            })?;
            build_invocation_graph(&bundle)?;
            Ok(LabeledTrace { bundle, label })
        })
        .collect()
}

fn line<W: Write>(out: &mut W, path: &Path, value: &Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::io(path, e))
}

fn opt<T: Into<Value> + Clone>(v: &Option<T>) -> Value {
    v.clone().map(Into::into).unwrap_or(Value::Null)
}

/// Write the four files and a manifest into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, traces: &[LabeledTrace], manifest: &DatasetManifest) -> Result<PathBuf> {
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |p: &Path| -> Result<(PathBuf, std::io::BufWriter<fs::File>)> {
        let full = dir.join(p);
        let f = fs::File::create(&full).map_err(|e| Error::io(&full, e))?;
        Ok((full, std::io::BufWriter::new(f)))
    };
    let (tp, mut tw) = open(&manifest.traces)?;
    let (mp, mut mw) = open(&manifest.metrics)?;
    let (lp, mut lw) = open(&manifest.logs)?;
    let (bp, mut bw) = open(&manifest.labels)?;

    for t in traces {
        let b = &t.bundle;
        let instances: Vec<Value> = b
            .instances
            .iter()
            .map(|i| json!({"id": i.id, "category": i.category.as_str(), "start_ts": i.start_ts}))
            .collect();
        let edges: Vec<Value> = b
            .edges
            .iter()
            .map(|e| json!({"src": e.src, "dst": e.dst, "async": e.is_async}))
            .collect();
        line(&mut tw, &tp, &json!({"trace_id": b.trace_id, "instances": instances, "edges": edges}))?;
        for m in &b.metrics {
            let values: Vec<Value> = m.values.iter().map(opt).collect();
            line(
                &mut mw,
                &mp,
                &json!({
                    "trace_id": b.trace_id,
                    "instance_id": m.instance_id,
                    "metric_name": m.metric_name,
                    "interval_s": m.interval_s,
                    "values": values,
                }),
            )?;
        }
        for l in &b.logs {
            line(
                &mut lw,
                &lp,
                &json!({"trace_id": b.trace_id, "instance_id": l.instance_id, "messages": l.messages}),
            )?;
        }
        let lab = &t.label;
        line(
            &mut bw,
            &bp,
            &json!({
                "trace_id": lab.trace_id,
                "is_anomalous": lab.is_anomalous,
                "root_cause": opt(&lab.root_cause),
                "fault_type": opt(&lab.fault_type),
                "fault_ts": opt(&lab.fault_ts),
            }),
        )?;
    }
    for (p, w) in [(&tp, &mut tw), (&mp, &mut mw), (&lp, &mut lw), (&bp, &mut bw)] {
        w.flush().map_err(|e| Error::io(p, e))?;
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
