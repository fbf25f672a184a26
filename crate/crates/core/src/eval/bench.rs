//! Per-stage throughput of the serial detection pipeline.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::Verdict;
use crate::error::{Error, Result};
use crate::features::try_extract_dataset;
use crate::flow::stream_flows;
use crate::pipeline::{DetectionResult, Pipeline};
use crate::scalar::Scalar;

/// Figures measured for the original system on a two-socket server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRates {
    pub extraction_flows_per_s: f64,
    pub normalization_samples_per_s: f64,
    pub forest_samples_per_s: f64,
    pub vae_samples_per_s: f64,
    pub end_to_end_flows_per_s: f64,
    /// Average flow rate of the monitored network.
    pub network_demand_flows_per_s: f64,
}

pub const REFERENCE: ReferenceRates = ReferenceRates {
    extraction_flows_per_s: 19_000.0,
    normalization_samples_per_s: 118_000.0,
    forest_samples_per_s: 150_000.0,
    vae_samples_per_s: 8_000.0,
    end_to_end_flows_per_s: 17_000.0,
    network_demand_flows_per_s: 1_273.0,
};

/// Wall-clock seconds spent in each stage during one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub extraction_s: f64,
    pub normalization_s: f64,
    pub forest_s: f64,
    pub vae_s: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.extraction_s + self.normalization_s + self.forest_s + self.vae_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRates {
    pub extraction_flows_per_s: f64,
    pub normalization_samples_per_s: f64,
    pub forest_samples_per_s: f64,
    pub vae_samples_per_s: f64,
    /// Flows divided by the summed stage times.
    pub end_to_end_flows_per_s: f64,
}

impl StageRates {
    fn from_times(t: &StageTimes, flows: u64, samples: usize) -> Self {
        let rate = |n: f64, s: f64| n / s.max(1e-9);
        let (f, n) = (flows as f64, samples as f64);
        StageRates {
            extraction_flows_per_s: rate(f, t.extraction_s),
            normalization_samples_per_s: rate(n, t.normalization_s),
            forest_samples_per_s: rate(n, t.forest_s),
            vae_samples_per_s: rate(n, t.vae_s),
            end_to_end_flows_per_s: rate(f, t.total()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub flows: u64,
    pub samples: usize,
    pub threads: usize,
    pub runs: Vec<StageTimes>,
    /// Per-stage medians over the runs.
    pub median_times: StageTimes,
    pub median: StageRates,
    pub reference: ReferenceRates,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let m = &self.median;
        let r = &self.reference;
        let mut t = format!(
            "Throughput over {} flows / {} samples, median of {} run(s), {} thread(s)\n",
            self.flows,
            self.samples,
            self.runs.len(),
            self.threads
        );
        t.push_str(&format!("{:<30}{:>16}{:>16}\n", "stage", "measured", "reference"));
        for (name, a, b) in [
            ("extraction (flows/s)", m.extraction_flows_per_s, r.extraction_flows_per_s),
            ("normalization (samples/s)", m.normalization_samples_per_s, r.normalization_samples_per_s),
            ("forest (samples/s)", m.forest_samples_per_s, r.forest_samples_per_s),
            ("vae (samples/s)", m.vae_samples_per_s, r.vae_samples_per_s),
            ("end-to-end (flows/s)", m.end_to_end_flows_per_s, r.end_to_end_flows_per_s),
        ] {
            t.push_str(&format!("{name:<30}{a:>16.0}{b:>16.0}\n"));
        }
        t.push_str(&format!("{:<30}{:>16}{:>16.0}\n", "network demand (flows/s)", "", r.network_demand_flows_per_s));
        t
    }
}

/// Runs the pipeline stage by stage `repetitions` times, sequentially.
pub fn bench_throughput<T: Scalar>(flow_path: impl AsRef<Path>, pipeline: &Pipeline<T>, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition"));
    }
    let path = flow_path.as_ref();
    let mut runs = Vec::with_capacity(repetitions);
    let mut flows = 0;
    let mut n_samples = 0;
    for _ in 0..repetitions {
        let start = Instant::now();
        let reader = stream_flows(path)?;
        let (mut samples, report) = try_extract_dataset::<T>(reader, &pipeline.schema)?;
        let extraction_s = start.elapsed().as_secs_f64();
        flows = report.classes.values().map(|c| c.total_flows).sum();
        n_samples = samples.len();

        let start = Instant::now();
        pipeline.normalize(&mut samples)?;
        let normalization_s = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let verdicts: Vec<Verdict> = samples.iter().map(|s| pipeline.forest.predict_binary(&s.features)).collect::<Result<_>>()?;
        let forest_s = start.elapsed().as_secs_f64();

        // Only what the filter passes reaches the VAE.
        let start = Instant::now();
        let passed: Vec<Vec<T>> = samples
            .iter()
            .zip(&verdicts)
            .filter(|(_, v)| !v.is_attack())
            .map(|(s, _)| s.features.clone())
            .collect();
        let scores = pipeline.vae.score_rows(&passed, 256)?;
        let mut scores = scores.into_iter();
        let results: Vec<DetectionResult> = samples
            .iter()
            .zip(&verdicts)
            .map(|(s, &v)| {
                let score = if v.is_attack() { 1.0 } else { scores.next().map(|x| x.as_f64()).unwrap_or(0.0) };
                DetectionResult::compose(s.key, v, score, pipeline.tau)
            })
            .collect();
        let vae_s = start.elapsed().as_secs_f64();
        std::hint::black_box(results);

        runs.push(StageTimes { extraction_s, normalization_s, forest_s, vae_s });
    }
    let median_times = StageTimes {
        extraction_s: median(runs.iter().map(|r| r.extraction_s).collect()),
        normalization_s: median(runs.iter().map(|r| r.normalization_s).collect()),
        forest_s: median(runs.iter().map(|r| r.forest_s).collect()),
        vae_s: median(runs.iter().map(|r| r.vae_s).collect()),
    };
    Ok(BenchReport {
        flows,
        samples: n_samples,
        threads: rayon::current_num_threads(),
        median: StageRates::from_times(&median_times, flows, n_samples),
        median_times,
        runs,
        reference: REFERENCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_runs() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn end_to_end_bounded_by_stages() {
        let t = StageTimes { extraction_s: 1.0, normalization_s: 0.01, forest_s: 0.1, vae_s: 0.5 };
        let r = StageRates::from_times(&t, 20_000, 800);
        let implied_min = [t.extraction_s, t.normalization_s, t.forest_s, t.vae_s]
            .iter()
            .map(|s| 20_000.0 / s)
            .fold(f64::INFINITY, f64::min);
        assert!(r.end_to_end_flows_per_s <= implied_min);
        assert_eq!(REFERENCE.end_to_end_flows_per_s, 17_000.0);
        assert_eq!(REFERENCE.network_demand_flows_per_s, 1_273.0);
    }
}
