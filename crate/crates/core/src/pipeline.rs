//! Serial hybrid detector: the forest prefilters, the VAE scores what the
//! forest lets through.

use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classifier::{ForestModel, Verdict};
use crate::error::{Error, Result};
use crate::features::{try_extract_dataset, AggregatedSample, FeatureSchema, Normalizer, WindowKey};
use crate::flow::{stream_flows, ClassLabel};
use crate::scalar::Scalar;
use crate::vae::{AnomalyThreshold, VaeModel};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Hybrid score assigned to samples the filter flags.
pub const FILTERED_SCORE: f64 = 1.0;

const SCORE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub key: WindowKey,
    pub filter_verdict: Verdict,
    pub anomaly_score: f64,
    pub hybrid_score: f64,
    pub final_verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<ClassLabel>,
}

impl DetectionResult {
    /// The combination rule: flagged samples get score 1.0 and stay flagged;
    /// the rest are anomalous iff their score exceeds `tau`.
    pub fn compose(key: WindowKey, filter_verdict: Verdict, anomaly_score: f64, tau: f64) -> Self {
        let (hybrid_score, final_verdict) = match filter_verdict {
            Verdict::Attack => (FILTERED_SCORE, Verdict::Attack),
            Verdict::Benign => (anomaly_score, Verdict::from_flag(anomaly_score > tau)),
        };
        DetectionResult { key, filter_verdict, anomaly_score, hybrid_score, final_verdict, true_label: None }
    }

    /// Verdict the VAE alone would give under the same threshold.
    pub fn vae_verdict(&self, tau: f64) -> Verdict {
        Verdict::from_flag(self.anomaly_score > tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {tau} outside [0, 1]")))
    }
}

/// Scores one normalized sample.
pub fn score_sample<T: Scalar>(
    forest: &ForestModel<T>,
    vae: &VaeModel<T>,
    tau: f64,
    sample: &AggregatedSample<T>,
) -> Result<DetectionResult> {
    check_tau(tau)?;
    let verdict = forest.predict_binary(&sample.features)?;
    let score = vae.reconstruction_error(&sample.features)?.as_f64();
    Ok(DetectionResult::compose(sample.key, verdict, score, tau))
}

/// [`score_sample`] over many normalized samples, batched and run on the
/// rayon pool. Output order follows the input.
pub fn score_samples<T: Scalar>(
    forest: &ForestModel<T>,
    vae: &VaeModel<T>,
    tau: f64,
    samples: &[AggregatedSample<T>],
) -> Result<Vec<DetectionResult>> {
    check_tau(tau)?;
    let chunks: Vec<Vec<DetectionResult>> = samples
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let rows: Vec<Vec<T>> = chunk.iter().map(|s| s.features.clone()).collect();
            let scores = vae.score_rows(&rows, SCORE_CHUNK)?;
            chunk
                .iter()
                .zip(scores)
                .map(|(s, score)| Ok(DetectionResult::compose(s.key, forest.predict_binary(&s.features)?, score.as_f64(), tau)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Trained forest with everything needed to apply it to raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FilterArtifact<T: Scalar> {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub schema_fingerprint: String,
    pub normalizer: Normalizer<T>,
    /// Attack classes left out of training.
    pub omitted: Vec<ClassLabel>,
    pub model: ForestModel<T>,
}

/// Trained VAE with its normalizer and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct VaeArtifact<T: Scalar> {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub schema_fingerprint: String,
    pub normalizer: Normalizer<T>,
    pub threshold: AnomalyThreshold,
    pub model: VaeModel<T>,
}

impl<T: Scalar> FilterArtifact<T> {
    pub fn new(schema: &FeatureSchema, normalizer: Normalizer<T>, omitted: Vec<ClassLabel>, model: ForestModel<T>) -> Self {
        FilterArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            schema: schema.clone(),
            schema_fingerprint: schema.fingerprint(),
            normalizer,
            omitted,
            model,
        }
    }

    pub fn check(&self) -> Result<()> {
        check_envelope("filter", self.format_version, &self.schema, &self.schema_fingerprint, &self.normalizer)?;
        self.model.validate()?;
        if self.model.n_features != self.schema.n_features() {
            return Err(Error::Dimension { expected: self.schema.n_features(), got: self.model.n_features });
        }
        Ok(())
    }
}

impl<T: Scalar> VaeArtifact<T> {
    pub fn new(schema: &FeatureSchema, normalizer: Normalizer<T>, threshold: AnomalyThreshold, model: VaeModel<T>) -> Self {
        VaeArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            schema: schema.clone(),
            schema_fingerprint: schema.fingerprint(),
            normalizer,
            threshold,
            model,
        }
    }

    pub fn check(&self) -> Result<()> {
        check_envelope("vae", self.format_version, &self.schema, &self.schema_fingerprint, &self.normalizer)?;
        if self.model.input_dim() != self.schema.n_features() {
            return Err(Error::Dimension { expected: self.schema.n_features(), got: self.model.input_dim() });
        }
        check_tau(self.threshold.tau)
    }
}

fn check_envelope<T: Scalar>(
    what: &str,
    version: u32,
    schema: &FeatureSchema,
    fingerprint: &str,
    normalizer: &Normalizer<T>,
) -> Result<()> {
    if version != ARTIFACT_FORMAT_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "{what} artifact format version {version} (expected {ARTIFACT_FORMAT_VERSION})"
        )));
    }
    schema.validate()?;
    if schema.fingerprint() != fingerprint {
        return Err(Error::SchemaMismatch(format!(
            "{what} artifact declares schema {fingerprint} but embeds {}",
            schema.fingerprint()
        )));
    }
    if normalizer.dim() != schema.n_features() {
        return Err(Error::Dimension { expected: schema.n_features(), got: normalizer.dim() });
    }
    Ok(())
}

pub fn save_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<S: DeserializeOwned>(path: impl AsRef<Path>) -> Result<S> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub forest_path: PathBuf,
    pub vae_path: PathBuf,
    /// Schema the extractor will use; both artifacts must have been trained on it.
    pub schema: FeatureSchema,
    /// Replaces the threshold stored with the VAE.
    pub tau: Option<f64>,
    /// Keep the flows' labels in the results.
    pub with_labels: bool,
}

/// Loaded, mutually consistent artifacts.
#[derive(Debug, Clone)]
pub struct Pipeline<T: Scalar> {
    pub schema: FeatureSchema,
    pub normalizer: Normalizer<T>,
    pub forest: ForestModel<T>,
    pub vae: VaeModel<T>,
    pub tau: f64,
}

impl<T: Scalar> Pipeline<T> {
    pub fn from_artifacts(filter: FilterArtifact<T>, vae: VaeArtifact<T>, schema: &FeatureSchema, tau: Option<f64>) -> Result<Self> {
        filter.check()?;
        vae.check()?;
        let expected = schema.fingerprint();
        for (what, fp) in [("filter", &filter.schema_fingerprint), ("vae", &vae.schema_fingerprint)] {
            if *fp != expected {
                return Err(Error::SchemaMismatch(format!("{what} artifact was trained on schema {fp}, extractor uses {expected}")));
            }
        }
        if filter.normalizer != vae.normalizer {
            return Err(Error::SchemaMismatch("filter and vae artifacts carry different normalizers".into()));
        }
        let tau = tau.unwrap_or(vae.threshold.tau);
        check_tau(tau)?;
        Ok(Pipeline { schema: schema.clone(), normalizer: filter.normalizer, forest: filter.model, vae: vae.model, tau })
    }

    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let filter: FilterArtifact<T> = load_json(&config.forest_path)?;
        let vae: VaeArtifact<T> = load_json(&config.vae_path)?;
        Self::from_artifacts(filter, vae, &config.schema, config.tau)
    }

    /// Normalizes raw samples in place.
    pub fn normalize(&self, samples: &mut [AggregatedSample<T>]) -> Result<()> {
        for s in samples.iter_mut() {
            s.features = self.normalizer.apply(&s.features)?;
        }
        Ok(())
    }

    /// Scores raw (unnormalized) samples, attaching their labels when asked.
    pub fn detect(&self, mut samples: Vec<AggregatedSample<T>>, with_labels: bool) -> Result<Vec<DetectionResult>> {
        self.normalize(&mut samples)?;
        let mut results = score_samples(&self.forest, &self.vae, self.tau, &samples)?;
        if with_labels {
            for (r, s) in results.iter_mut().zip(&samples) {
                r.true_label = Some(s.label);
            }
        }
        Ok(results)
    }

    pub fn run_file(&self, flow_path: impl AsRef<Path>, with_labels: bool) -> Result<Vec<DetectionResult>> {
        let (samples, _) = try_extract_dataset::<T>(stream_flows(flow_path)?, &self.schema)?;
        self.detect(samples, with_labels)
    }
}

/// Flows to detections, sorted by (window, source IP).
pub fn run_pipeline<T: Scalar>(flow_path: impl AsRef<Path>, config: &PipelineConfig) -> Result<Vec<DetectionResult>> {
    Pipeline::<T>::load(config)?.run_file(flow_path, config.with_labels)
}

pub fn write_results<W: Write>(out: W, results: &[DetectionResult], with_labels: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["src_ip", "window_index", "filter_verdict", "anomaly_score", "hybrid_score", "final_verdict"];
    if with_labels {
        header.push("true_label");
    }
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![
            r.key.src_ip.to_string(),
            r.key.window_index.to_string(),
            r.filter_verdict.to_string(),
            r.anomaly_score.to_string(),
            r.hybrid_score.to_string(),
            r.final_verdict.to_string(),
        ];
        if with_labels {
            row.push(r.true_label.map(|l| l.as_str().to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<DetectionResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let with_labels = rdr.headers()?.len() == 7;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse { line, reason: format!("bad {what}") };
        let verdict = |s: &str| -> Result<Verdict> { s.parse::<u8>().ok().and_then(|v| Verdict::try_from(v).ok()).ok_or_else(|| bad("verdict")) };
        let src_ip: IpAddr = rec[0].parse().map_err(|_| bad("src_ip"))?;
        out.push(DetectionResult {
            key: WindowKey { window_index: rec[1].parse().map_err(|_| bad("window_index"))?, src_ip },
            filter_verdict: verdict(&rec[2])?,
            anomaly_score: rec[3].parse().map_err(|_| bad("anomaly_score"))?,
            hybrid_score: rec[4].parse().map_err(|_| bad("hybrid_score"))?,
            final_verdict: verdict(&rec[5])?,
            true_label: if with_labels { Some(rec[6].parse().map_err(|_| bad("true_label"))?) } else { None },
        });
    }
    Ok(out)
}
