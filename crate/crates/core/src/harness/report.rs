//! Experiment reports and their canonical JSON form.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Cmp {
    fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Cmp::AtMost => value <= bound,
            Cmp::AtLeast => value >= bound,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::AtMost => "<=",
            Cmp::AtLeast => ">=",
        }
    }
}

/// A declared bound on one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub op: Cmp,
    pub value: f64,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:e}", self.metric, self.op.symbol(), self.value)
    }
}

/// Result of one experiment. `pass` is never stored: it is recomputed from
/// the metrics and thresholds, so a report read back from disk can be
/// re-judged without rerunning anything.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: BTreeMap<String, String>,
    metrics: BTreeMap<String, f64>,
    thresholds: Vec<Threshold>,
    pub artifacts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    name: String,
    parameters: BTreeMap<String, String>,
    metrics: BTreeMap<String, f64>,
    thresholds: Vec<Threshold>,
    artifacts: Vec<String>,
    pass: bool,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn param(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.into(), value.to_string());
        self
    }

    /// Records a metric. Non-finite values are rejected because the JSON
    /// form cannot carry them.
    pub fn metric(&mut self, key: impl Into<String>, value: f64) -> Result<&mut Self> {
        let key = key.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {key} = {value}")));
        }
        self.metrics.insert(key, value);
        Ok(self)
    }

    /// Declares a bound on an existing metric.
    pub fn require(&mut self, metric: impl Into<String>, op: Cmp, value: f64) -> Result<&mut Self> {
        let metric = metric.into();
        if !self.metrics.contains_key(&metric) {
            return Err(Error::invalid(format!(
                "threshold on unknown metric {metric} in report {}",
                self.name
            )));
        }
        self.thresholds.push(Threshold { metric, op, value });
        Ok(self)
    }

    pub fn metrics(&self) -> &BTreeMap<String, f64> {
        &self.metrics
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    /// Thresholds that do not hold, each paired with the observed value.
    pub fn failures(&self) -> Vec<(&Threshold, f64)> {
        self.thresholds
            .iter()
            .filter_map(|t| {
                let v = self.metrics[&t.metric];
                (!t.op.holds(v, t.value)).then_some((t, v))
            })
            .collect()
    }

    pub fn pass(&self) -> bool {
        self.failures().is_empty()
    }

    /// Copies metrics, thresholds, parameters and artifacts of `other`
    /// under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: &ExperimentReport) {
        let key = |k: &str| format!("{prefix}.{k}");
        for (k, v) in &other.parameters {
            self.parameters.insert(key(k), v.clone());
        }
        for (k, v) in &other.metrics {
            self.metrics.insert(key(k), *v);
        }
        for t in &other.thresholds {
            self.thresholds.push(Threshold {
                metric: key(&t.metric),
                ..t.clone()
            });
        }
        self.artifacts.extend(other.artifacts.iter().cloned());
    }

    pub fn to_json(&self) -> String {
        let wire = Wire {
            name: self.name.clone(),
            parameters: self.parameters.clone(),
            metrics: self.metrics.clone(),
            thresholds: self.thresholds.clone(),
            artifacts: self.artifacts.clone(),
            pass: self.pass(),
        };
        to_canonical_json(&wire)
    }

    /// Parses a report and checks that its stored `pass` agrees with the
    /// thresholds.
    pub fn from_json(text: &str) -> Result<Self> {
        let wire: Wire = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        let mut report = ExperimentReport::new(wire.name);
        report.parameters = wire.parameters;
        report.metrics = wire.metrics;
        report.artifacts = wire.artifacts;
        for t in wire.thresholds {
            report.require(t.metric, t.op, t.value)?;
        }
        if report.pass() != wire.pass {
            return Err(Error::invalid(format!(
                "report {} stores pass = {} but its thresholds give {}",
                report.name,
                wire.pass,
                report.pass()
            )));
        }
        Ok(report)
    }
}

/// Pretty JSON whose reals always carry 17 significant digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RealFormatter::default());
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("json is utf-8")
}

#[derive(Default)]
struct RealFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for RealFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_key(w)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}
