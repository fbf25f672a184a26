//! Per-(source IP, time window) aggregation of flows into fixed-length
//! feature vectors.
//!
//! Layout of a sample with the default 27 tracked ports (69 features):
//!
//! | indices  | content                                                        |
//! |----------|----------------------------------------------------------------|
//! | 0..5     | mean of duration, packets, bytes, packet rate, byte rate        |
//! | 5..10    | population std of the same five quantities                      |
//! | 10..15   | Shannon entropy (bits) of src port, dst port, dst IP, protocol, TCP flag pattern |
//! | 15..42   | fraction of flows whose source port is each tracked port        |
//! | 42..69   | fraction of flows whose destination port is each tracked port   |
//!
//! Rates divide by the duration clamped below at 1 ms. Windows holding
//! `min_flows` flows or fewer produce no sample.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::IpAddr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClassLabel, FlowRecord};
use crate::rng::fnv1a;
use crate::scalar::Scalar;

pub const DEFAULT_WINDOW_SECONDS: u32 = 180;
pub const DEFAULT_MIN_FLOWS: usize = 10;
pub const DEFAULT_TRACKED_PORTS: [u16; 27] = [
    20, 21, 22, 23, 25, 50, 51, 53, 67, 68, 69, 80, 110, 119, 123, 135, 136, 137, 138, 139, 143, 161,
    162, 389, 443, 989, 990,
];

pub const BASE_STATISTICS: [&str; 5] = ["duration", "packets", "bytes", "packet_rate", "byte_rate"];
pub const ENTROPY_FIELDS: [&str; 5] = ["src_port", "dst_port", "dst_ip", "protocol", "tcp_flags"];

const SCHEMA_VERSION: u32 = 1;
const MIN_RATE_DURATION: f64 = 1e-3;

/// Which features are extracted and how flows are windowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub tracked_ports: Vec<u16>,
    /// Windows with `flow_count <= min_flows` are dropped.
    pub min_flows: usize,
    pub window_seconds: u32,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            tracked_ports: DEFAULT_TRACKED_PORTS.to_vec(),
            min_flows: DEFAULT_MIN_FLOWS,
            window_seconds: DEFAULT_WINDOW_SECONDS,
        }
    }
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.window_seconds == 0 {
            return Err(Error::invalid("window_seconds must be positive"));
        }
        let mut ports = self.tracked_ports.clone();
        ports.sort_unstable();
        ports.dedup();
        if ports.len() != self.tracked_ports.len() {
            return Err(Error::invalid("tracked ports must be distinct"));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        2 * BASE_STATISTICS.len() + ENTROPY_FIELDS.len() + 2 * self.tracked_ports.len()
    }

    /// Identifier of the feature semantics; artifacts trained against one
    /// schema refuse samples of another.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        for p in &self.tracked_ports {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf.extend_from_slice(&(self.min_flows as u64).to_le_bytes());
        buf.extend_from_slice(&self.window_seconds.to_le_bytes());
        format!("gee{}-v{SCHEMA_VERSION}-{:016x}", self.n_features(), fnv1a(&buf))
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_features());
        names.extend(BASE_STATISTICS.iter().map(|s| format!("mean_{s}")));
        names.extend(BASE_STATISTICS.iter().map(|s| format!("std_{s}")));
        names.extend(ENTROPY_FIELDS.iter().map(|s| format!("entropy_{s}")));
        names.extend(self.tracked_ports.iter().map(|p| format!("src_port_{p}")));
        names.extend(self.tracked_ports.iter().map(|p| format!("dst_port_{p}")));
        names
    }

    /// Index of the first source-port proportion.
    pub fn src_port_offset(&self) -> usize {
        2 * BASE_STATISTICS.len() + ENTROPY_FIELDS.len()
    }

    pub fn dst_port_offset(&self) -> usize {
        self.src_port_offset() + self.tracked_ports.len()
    }

    pub fn window_of(&self, flow: &FlowRecord) -> WindowKey {
        WindowKey {
            window_index: flow.end_time_ms.div_euclid(i64::from(self.window_seconds) * 1000),
            src_ip: flow.src_ip,
        }
    }
}

/// Orders by window first, then source address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowKey {
    pub window_index: i64,
    pub src_ip: IpAddr,
}

/// Window of `flow` under the default 180 s bucketing.
pub fn assign_window(flow: &FlowRecord) -> WindowKey {
    WindowKey {
        window_index: flow.end_time_ms.div_euclid(i64::from(DEFAULT_WINDOW_SECONDS) * 1000),
        src_ip: flow.src_ip,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSample<T> {
    pub key: WindowKey,
    pub features: Vec<T>,
    pub label: ClassLabel,
    pub flow_count: usize,
}

/// Shannon entropy in bits of a multiset given by its category counts.
///
/// The result does not depend on the order of `counts`.
pub fn shannon_entropy<T: Scalar>(counts: &[u64]) -> Result<T> {
    let mut nonzero: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    let total: u64 = nonzero.iter().sum();
    if total == 0 {
        return Err(Error::invalid("entropy of an all-zero count vector"));
    }
    nonzero.sort_unstable();
    let total = T::lit(total as f64);
    let h = nonzero
        .iter()
        .map(|&c| {
            let p = T::lit(c as f64) / total;
            -p * p.log2()
        })
        .fold(T::zero(), |acc, v| acc + v);
    Ok(h.max(T::zero()))
}

/// Mean and population standard deviation; sorts `values` in place so the
/// result is independent of input order.
fn mean_std<T: Scalar>(values: &mut [T]) -> (T, T) {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = T::lit(values.len() as f64);
    let mean = values.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .fold(T::zero(), |acc, v| acc + v)
        / n;
    (mean, var.sqrt())
}

fn category_counts<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<u64> {
    let mut map: HashMap<K, u64> = HashMap::new();
    for k in keys {
        *map.entry(k).or_insert(0) += 1;
    }
    map.into_values().collect()
}

/// Label voted for a window: the most frequent label; ties go to attacks
/// over background, then to the lexicographically smallest label name.
///
/// A label present in strictly more than half the flows always wins.
pub fn majority_label(labels: &[ClassLabel]) -> ClassLabel {
    let mut counts = [0usize; ClassLabel::ALL.len()];
    for l in labels {
        counts[l.index()] += 1;
    }
    ClassLabel::ALL
        .iter()
        .copied()
        .filter(|l| counts[l.index()] > 0)
        .max_by(|a, b| {
            counts[a.index()]
                .cmp(&counts[b.index()])
                .then(a.is_attack().cmp(&b.is_attack()))
                .then(b.as_str().cmp(a.as_str()))
        })
        .unwrap_or(ClassLabel::Background)
}

/// Builds the sample for one window. All flows must share a window key and
/// there must be more than `schema.min_flows` of them.
pub fn aggregate_window<T: Scalar>(flows: &[FlowRecord], schema: &FeatureSchema) -> Result<AggregatedSample<T>> {
    let first = flows.first().ok_or_else(|| Error::invalid("empty window"))?;
    if flows.len() <= schema.min_flows {
        return Err(Error::invalid(format!(
            "window has {} flows, needs more than {}",
            flows.len(),
            schema.min_flows
        )));
    }
    let key = schema.window_of(first);
    if flows.iter().any(|f| schema.window_of(f) != key) {
        return Err(Error::invalid("flows span more than one window key"));
    }
    let n = flows.len();
    let n_t = T::lit(n as f64);
    let mut features = Vec::with_capacity(schema.n_features());

    let mut columns: [Vec<T>; 5] = Default::default();
    for f in flows {
        let rate_time = f.duration.max(MIN_RATE_DURATION);
        let packets = f.packets as f64;
        let bytes = f.bytes as f64;
        let quantities = [f.duration, packets, bytes, packets / rate_time, bytes / rate_time];
        for (col, q) in columns.iter_mut().zip(quantities) {
            col.push(T::lit(q));
        }
    }
    let stats: Vec<(T, T)> = columns.iter_mut().map(|c| mean_std(c)).collect();
    features.extend(stats.iter().map(|s| s.0));
    features.extend(stats.iter().map(|s| s.1));

    features.push(shannon_entropy(&category_counts(flows.iter().map(|f| f.src_port)))?);
    features.push(shannon_entropy(&category_counts(flows.iter().map(|f| f.dst_port)))?);
    features.push(shannon_entropy(&category_counts(flows.iter().map(|f| f.dst_ip)))?);
    features.push(shannon_entropy(&category_counts(flows.iter().map(|f| f.protocol)))?);
    features.push(shannon_entropy(&category_counts(flows.iter().map(|f| f.tcp_flags)))?);

    let mut src_hits = vec![0usize; schema.tracked_ports.len()];
    let mut dst_hits = vec![0usize; schema.tracked_ports.len()];
    let port_slot: HashMap<u16, usize> = schema
        .tracked_ports
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();
    for f in flows {
        if let Some(&i) = port_slot.get(&f.src_port) {
            src_hits[i] += 1;
        }
        if let Some(&i) = port_slot.get(&f.dst_port) {
            dst_hits[i] += 1;
        }
    }
    features.extend(src_hits.iter().map(|&c| T::lit(c as f64) / n_t));
    features.extend(dst_hits.iter().map(|&c| T::lit(c as f64) / n_t));

    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite feature in window {key:?}")));
    }
    let labels: Vec<ClassLabel> = flows.iter().map(|f| f.label).collect();
    Ok(AggregatedSample { key, features, label: majority_label(&labels), flow_count: n })
}

/// Per-class flow accounting of the extraction step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVisibility {
    pub total_flows: u64,
    /// Flows in windows that failed the minimum-flow filter.
    pub omitted_flows: u64,
    /// Flows in kept windows whose label lost the vote.
    pub outvoted_flows: u64,
}

impl ClassVisibility {
    pub fn omitted_fraction(&self) -> f64 {
        ratio(self.omitted_flows, self.total_flows)
    }

    pub fn outvoted_fraction(&self) -> f64 {
        ratio(self.outvoted_flows, self.total_flows)
    }

    /// Flows that reached a kept window, whichever way the vote went.
    pub fn voted_flows(&self) -> u64 {
        self.total_flows - self.omitted_flows
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityReport {
    pub classes: BTreeMap<ClassLabel, ClassVisibility>,
}

impl Default for VisibilityReport {
    fn default() -> Self {
        VisibilityReport {
            classes: ClassLabel::ALL.iter().map(|&l| (l, ClassVisibility::default())).collect(),
        }
    }
}

impl VisibilityReport {
    pub fn get(&self, label: ClassLabel) -> ClassVisibility {
        self.classes.get(&label).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let classes: serde_json::Map<String, serde_json::Value> = self
            .classes
            .iter()
            .map(|(l, v)| {
                (
                    l.to_string(),
                    serde_json::json!({
                        "total_flows": v.total_flows,
                        "omitted_flows": v.omitted_flows,
                        "outvoted_flows": v.outvoted_flows,
                        "omitted_fraction": v.omitted_fraction(),
                        "outvoted_fraction": v.outvoted_fraction(),
                    }),
                )
            })
            .collect();
        serde_json::json!({ "format_version": 1, "classes": classes })
    }

    /// Human-readable table of omitted and outvoted percentages.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18}{:>12}{:>12}{:>12}\n", "class", "flows", "omitted%", "outvoted%");
        for (l, v) in &self.classes {
            out.push_str(&format!(
                "{:<18}{:>12}{:>12.2}{:>12.2}\n",
                l.as_str(),
                v.total_flows,
                100.0 * v.omitted_fraction(),
                100.0 * v.outvoted_fraction()
            ));
        }
        out
    }
}

/// Groups flows by window as they arrive; `finish` aggregates the windows.
#[derive(Debug, Clone)]
pub struct WindowAggregator {
    schema: FeatureSchema,
    windows: HashMap<WindowKey, Vec<FlowRecord>>,
    flows_seen: u64,
}

impl WindowAggregator {
    pub fn new(schema: FeatureSchema) -> Self {
        WindowAggregator { schema, windows: HashMap::new(), flows_seen: 0 }
    }

    pub fn push(&mut self, flow: FlowRecord) {
        self.flows_seen += 1;
        self.windows.entry(self.schema.window_of(&flow)).or_default().push(flow);
    }

    pub fn flows_seen(&self) -> u64 {
        self.flows_seen
    }

    pub fn finish<T: Scalar>(self) -> Result<(Vec<AggregatedSample<T>>, VisibilityReport)> {
        let schema = self.schema;
        let mut windows: Vec<(WindowKey, Vec<FlowRecord>)> = self.windows.into_iter().collect();
        windows.sort_unstable_by_key(|(k, _)| *k);

        let mut report = VisibilityReport::default();
        let mut kept = Vec::with_capacity(windows.len());
        for (_, flows) in windows {
            let omitted = flows.len() <= schema.min_flows;
            for f in &flows {
                let entry = report.classes.entry(f.label).or_default();
                entry.total_flows += 1;
                if omitted {
                    entry.omitted_flows += 1;
                }
            }
            if !omitted {
                kept.push(flows);
            }
        }

        let samples: Vec<AggregatedSample<T>> = kept
            .par_iter()
            .map(|flows| aggregate_window(flows, &schema))
            .collect::<Result<_>>()?;
        for (sample, flows) in samples.iter().zip(&kept) {
            for f in flows.iter().filter(|f| f.label != sample.label) {
                report.classes.entry(f.label).or_default().outvoted_flows += 1;
            }
        }
        Ok((samples, report))
    }
}

/// Aggregates a flow sequence into samples sorted by (window, source IP).
pub fn extract_dataset<T: Scalar>(
    flows: impl IntoIterator<Item = FlowRecord>,
    schema: &FeatureSchema,
) -> Result<(Vec<AggregatedSample<T>>, VisibilityReport)> {
    let mut agg = WindowAggregator::new(schema.clone());
    for f in flows {
        agg.push(f);
    }
    agg.finish()
}

/// Same as [`extract_dataset`] over a fallible stream such as
/// [`crate::flow::FlowReader`]; the first error aborts.
pub fn try_extract_dataset<T: Scalar>(
    flows: impl IntoIterator<Item = Result<FlowRecord>>,
    schema: &FeatureSchema,
) -> Result<(Vec<AggregatedSample<T>>, VisibilityReport)> {
    let mut agg = WindowAggregator::new(schema.clone());
    for f in flows {
        agg.push(f?);
    }
    agg.finish()
}

/// Per-feature min-max scaling learned on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [T]>) -> Result<Self> {
        let mut iter = rows.into_iter();
        let first = iter.next().ok_or_else(|| Error::invalid("cannot fit a normalizer on zero samples"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::Dimension { expected: min.len(), got: row.len() });
            }
            for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        Ok(Normalizer { min, max })
    }

    pub fn fit_samples(samples: &[AggregatedSample<T>]) -> Result<Self> {
        Self::fit(samples.iter().map(|s| s.features.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Scales into [0, 1]; values outside the training range are clamped and
    /// constant features map to 0.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                if range > T::zero() {
                    ((v - lo) / range).max(T::zero()).min(T::one())
                } else {
                    T::zero()
                }
            })
            .collect())
    }

    pub fn apply_all(&self, samples: &[AggregatedSample<T>]) -> Result<Vec<Vec<T>>> {
        samples.iter().map(|s| self.apply(&s.features)).collect()
    }
}

/// Writes samples as CSV: feature columns, then label, flow_count, src_ip,
/// window_index. The header row is always written.
pub fn write_samples<T: Scalar, W: Write>(out: W, samples: &[AggregatedSample<T>], schema: &FeatureSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = schema.feature_names();
    header.extend(["label", "flow_count", "src_ip", "window_index"].map(String::from));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for s in samples {
        if s.features.len() != schema.n_features() {
            return Err(Error::Dimension { expected: schema.n_features(), got: s.features.len() });
        }
        record.clear();
        record.extend(s.features.iter().map(|v| v.to_string()));
        record.push(s.label.to_string());
        record.push(s.flow_count.to_string());
        record.push(s.key.src_ip.to_string());
        record.push(s.key.window_index.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample CSV written under `schema`; a header that does not match
/// the schema is a [`Error::SchemaMismatch`].
pub fn read_samples<T: Scalar, R: Read>(input: R, schema: &FeatureSchema) -> Result<Vec<AggregatedSample<T>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut expected = schema.feature_names();
    expected.extend(["label", "flow_count", "src_ip", "window_index"].map(String::from));
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "sample header has {} columns and does not match schema {}",
            header.len(),
            schema.fingerprint()
        )));
    }
    let d = schema.n_features();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse { line, reason: format!("bad {what}") };
        let features = (0..d)
            .map(|j| rec[j].parse::<T>().map_err(|_| bad(&expected[j])))
            .collect::<Result<Vec<T>>>()?;
        out.push(AggregatedSample {
            features,
            label: rec[d].parse().map_err(|_| bad("label"))?,
            flow_count: rec[d + 1].parse().map_err(|_| bad("flow_count"))?,
            key: WindowKey {
                src_ip: rec[d + 2].parse().map_err(|_| bad("src_ip"))?,
                window_index: rec[d + 3].parse().map_err(|_| bad("window_index"))?,
            },
        });
    }
    Ok(out)
}
