//! Raw per-trace payloads as they arrive from ingestion, before graph assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Closed set of instance kinds found in a microservice deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceCategory {
    Application,
    Message,
    Gateway,
    Database,
    Other,
}

impl InstanceCategory {
    pub const ALL: [InstanceCategory; 5] = [
        InstanceCategory::Application,
        InstanceCategory::Message,
        InstanceCategory::Gateway,
        InstanceCategory::Database,
        InstanceCategory::Other,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Row of the category embedding matrix.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceCategory::Application => "application",
            InstanceCategory::Message => "message",
            InstanceCategory::Gateway => "gateway",
            InstanceCategory::Database => "database",
            InstanceCategory::Other => "other",
        }
    }
}

impl fmt::Display for InstanceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstanceCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub category: InstanceCategory,
    /// Invocation start, epoch seconds.
    pub start_ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    /// Caller.
    pub src: String,
    /// Callee.
    pub dst: String,
    pub is_async: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub instance_id: String,
    pub metric_name: String,
    pub interval_s: f64,
    /// `None` marks a missing sample.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub instance_id: String,
    pub messages: Vec<String>,
}

/// Everything recorded for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub trace_id: String,
    pub instances: Vec<InstanceRecord>,
    pub edges: Vec<EdgeRecord>,
    pub metrics: Vec<MetricRecord>,
    pub logs: Vec<LogRecord>,
}

impl TraceBundle {
    /// Earliest invocation start; used as the trace timestamp.
    pub fn start_ts(&self) -> f64 {
        self.instances
            .iter()
            .map(|i| i.start_ts)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLabel {
    pub trace_id: String,
    pub is_anomalous: bool,
    pub root_cause: Option<String>,
    pub fault_type: Option<String>,
    pub fault_ts: Option<f64>,
}

impl TraceLabel {
    pub fn normal(trace_id: impl Into<String>) -> Self {
        TraceLabel {
            trace_id: trace_id.into(),
            is_anomalous: false,
            root_cause: None,
            fault_type: None,
            fault_ts: None,
        }
    }

    /// Root-cause id when the label can enter the localization loss and A@k.
    pub fn usable_root_cause(&self) -> Option<&str> {
        if self.is_anomalous {
            self.root_cause.as_deref()
        } else {
            None
        }
    }
}

/// A bundle paired with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub bundle: TraceBundle,
    pub label: TraceLabel,
}
