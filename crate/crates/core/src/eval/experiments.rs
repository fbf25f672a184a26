//! The three comparison protocols: binary against binarized multiclass
//! filtering, VAE alone against the hybrid, and novelty tests with attack
//! classes held out of classifier training.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{format_table, EvalReport, ReportDelta, REPORT_FORMAT_VERSION};
use crate::classifier::{BalanceRecipe, ForestConfig, ForestMode, ForestModel, Verdict, PER_CLASS_TARGET};
use crate::error::{Error, Result};
use crate::features::{AggregatedSample, Normalizer};
use crate::flow::ClassLabel;
use crate::pipeline::DetectionResult;
use crate::scalar::Scalar;
use crate::rng::{substream, STREAM_BALANCE};
use crate::vae::{select_threshold, train, AnomalyThreshold, EpochLoss, TrainConfig, VaeArchitecture, VaeModel};

const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seeds balancing, forests, VAE initialization and VAE noise.
    pub seed: u64,
    /// Its `seed` field is replaced by [`ExperimentConfig::seed`].
    pub forest: ForestConfig,
    /// Samples per class after balancing.
    pub per_class_target: usize,
    /// Its input width is replaced by the sample width.
    pub vae_arch: VaeArchitecture,
    pub vae_train: TrainConfig,
    /// Threshold coefficient: `tau = mean + k * std`.
    pub k: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            forest: ForestConfig::default(),
            per_class_target: PER_CLASS_TARGET,
            vae_arch: VaeArchitecture::default(),
            vae_train: TrainConfig::default(),
            k: 1.0,
        }
    }
}

/// A VAE trained on the training background, with its threshold and the
/// scores it gives the test samples.
#[derive(Debug, Clone)]
pub struct TrainedVae<T: Scalar> {
    pub model: VaeModel<T>,
    pub threshold: AnomalyThreshold,
    pub epochs: Vec<EpochLoss>,
    pub train_background_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
}

/// Normalized train/test splits with lazily trained, cached models.
pub struct ExperimentContext<T: Scalar> {
    pub config: ExperimentConfig,
    pub normalizer: Normalizer<T>,
    pub train: Vec<AggregatedSample<T>>,
    pub test: Vec<AggregatedSample<T>>,
    vae: Option<TrainedVae<T>>,
    binary_forests: BTreeMap<BTreeSet<ClassLabel>, ForestModel<T>>,
}

fn normalized<T: Scalar>(norm: &Normalizer<T>, samples: &[AggregatedSample<T>]) -> Result<Vec<AggregatedSample<T>>> {
    samples
        .iter()
        .map(|s| Ok(AggregatedSample { features: norm.apply(&s.features)?, ..s.clone() }))
        .collect()
}

fn labels<T>(samples: &[AggregatedSample<T>]) -> Vec<ClassLabel> {
    samples.iter().map(|s| s.label).collect()
}

fn rows<T: Clone>(samples: &[AggregatedSample<T>]) -> Vec<Vec<T>> {
    samples.iter().map(|s| s.features.clone()).collect()
}

/// Verdicts and attack-vote fractions of `forest` on every sample.
pub fn forest_outputs<T: Scalar>(forest: &ForestModel<T>, samples: &[AggregatedSample<T>]) -> Result<(Vec<Verdict>, Vec<f64>)> {
    let out: Vec<(Verdict, f64)> = samples
        .par_iter()
        .map(|s| Ok((forest.predict_binary(&s.features)?, forest.attack_score(&s.features)?)))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn vae_scores<T: Scalar>(vae: &VaeModel<T>, samples: &[AggregatedSample<T>]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<T>> = samples
        .par_chunks(SCORE_CHUNK)
        .map(|c| vae.score_rows(&rows(c), SCORE_CHUNK))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().map(|v| v.as_f64()).collect())
}

impl<T: Scalar> ExperimentContext<T> {
    /// Fits the normalizer on all of `train` and applies it to both splits.
    pub fn new(train: &[AggregatedSample<T>], test: &[AggregatedSample<T>], config: ExperimentConfig) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::invalid("empty test set"));
        }
        let normalizer = Normalizer::fit_samples(train)?;
        Ok(ExperimentContext {
            train: normalized(&normalizer, train)?,
            test: normalized(&normalizer, test)?,
            normalizer,
            config,
            vae: None,
            binary_forests: BTreeMap::new(),
        })
    }

    fn forest_config(&self) -> ForestConfig {
        ForestConfig { seed: self.config.seed, ..self.config.forest.clone() }
    }

    pub fn fit_forest(&self, mode: ForestMode, omitted: &BTreeSet<ClassLabel>) -> Result<ForestModel<T>> {
        train_filter(&self.train, mode, omitted, self.config.per_class_target, &self.forest_config())
    }

    /// Binary forest trained without `omitted`, cached.
    pub fn binary_forest(&mut self, omitted: &BTreeSet<ClassLabel>) -> Result<&ForestModel<T>> {
        if !self.binary_forests.contains_key(omitted) {
            let model = self.fit_forest(ForestMode::Binary, omitted)?;
            self.binary_forests.insert(omitted.clone(), model);
        }
        Ok(&self.binary_forests[omitted])
    }

    /// Installs an already trained VAE instead of training one. Without an
    /// explicit threshold one is selected from the training background.
    pub fn set_vae(&mut self, model: VaeModel<T>, threshold: Option<AnomalyThreshold>) -> Result<&TrainedVae<T>> {
        if model.input_dim() != self.normalizer.dim() {
            return Err(Error::Dimension { expected: self.normalizer.dim(), got: model.input_dim() });
        }
        let background: Vec<AggregatedSample<T>> =
            self.train.iter().filter(|s| s.label == ClassLabel::Background).cloned().collect();
        let train_background_scores = vae_scores(&model, &background)?;
        let threshold = match threshold {
            Some(t) => t,
            None => select_threshold(&train_background_scores, self.config.k)?,
        };
        let test_scores = vae_scores(&model, &self.test)?;
        let epochs = self.vae.take().map(|v| v.epochs).unwrap_or_default();
        Ok(self.vae.insert(TrainedVae { model, threshold, epochs, train_background_scores, test_scores }))
    }

    /// VAE trained on the training background (once per context).
    pub fn vae(&mut self) -> Result<&TrainedVae<T>> {
        if self.vae.is_none() {
            let arch = VaeArchitecture { input_dim: self.normalizer.dim(), ..self.config.vae_arch.clone() };
            let train_config = TrainConfig { seed: self.config.seed, ..self.config.vae_train.clone() };
            let fitted = train_background_vae(&self.train, arch, &train_config, self.config.k)?;
            self.set_vae(fitted.model, Some(fitted.threshold))?;
            if let Some(v) = self.vae.as_mut() {
                v.epochs = fitted.epochs;
            }
        }
        Ok(self.trained())
    }

    fn trained(&self) -> &TrainedVae<T> {
        self.vae.as_ref().expect("VAE trained before use")
    }

    /// Binary vs binarized multiclass filters on the train and test splits.
    pub fn filter_comparison(&mut self) -> Result<FilterComparison> {
        let none = BTreeSet::new();
        let binary = self.binary_forest(&none)?.clone();
        let multiclass = self.fit_forest(ForestMode::Multiclass, &none)?;
        let report = |name: &str, forest: &ForestModel<T>, samples: &[AggregatedSample<T>]| -> Result<EvalReport> {
            let (verdicts, scores) = forest_outputs(forest, samples)?;
            EvalReport::build(name, &verdicts, Some(&scores), &labels(samples))
        };
        let binary_train = report("binary (train)", &binary, &self.train)?;
        let multiclass_train = report("multi-class binarized (train)", &multiclass, &self.train)?;
        let binary_test = report("binary (test)", &binary, &self.test)?;
        let multiclass_test = report("multi-class binarized (test)", &multiclass, &self.test)?;
        let delta_test = ReportDelta::between(&binary_test, &multiclass_test);
        Ok(FilterComparison { format_version: REPORT_FORMAT_VERSION, binary_train, multiclass_train, binary_test, multiclass_test, delta_test })
    }

    /// Test-set detections of the hybrid made of the binary forest trained
    /// without `omitted` and the shared VAE.
    pub fn hybrid_detections(&mut self, omitted: &BTreeSet<ClassLabel>) -> Result<Vec<DetectionResult>> {
        self.binary_forest(omitted)?;
        self.vae()?;
        let (verdicts, _) = forest_outputs(&self.binary_forests[omitted], &self.test)?;
        let vae = self.trained();
        let tau = vae.threshold.tau;
        Ok(self
            .test
            .iter()
            .zip(verdicts)
            .zip(&vae.test_scores)
            .map(|((s, v), &score)| DetectionResult { true_label: Some(s.label), ..DetectionResult::compose(s.key, v, score, tau) })
            .collect())
    }

    /// VAE alone against the hybrid under the same threshold.
    pub fn hybrid_comparison(&mut self) -> Result<HybridComparison> {
        let detections = self.hybrid_detections(&BTreeSet::new())?;
        let vae = self.trained();
        let tau = vae.threshold.tau;
        let truth = labels(&self.test);
        let vae_verdicts: Vec<Verdict> = detections.iter().map(|d| d.vae_verdict(tau)).collect();
        let vae_only = EvalReport::build("original (VAE only)", &vae_verdicts, Some(&vae.test_scores), &truth)?;
        let hybrid = hybrid_report("modified (hybrid)", &detections, &truth)?;
        let filter_verdicts: Vec<Verdict> = detections.iter().map(|d| d.filter_verdict).collect();
        let filter = EvalReport::build("binary filter", &filter_verdicts, None, &truth)?;
        let delta = ReportDelta::between(&hybrid, &vae_only);
        Ok(HybridComparison { format_version: REPORT_FORMAT_VERSION, threshold: vae.threshold, vae_only, hybrid, filter, delta })
    }

    /// Classifier-only and hybrid detection with `spec.omitted` held out of
    /// classifier training.
    pub fn novelty(&mut self, spec: &NoveltySpec) -> Result<NoveltyReport> {
        if spec.omitted.is_empty() {
            return Err(Error::invalid("novelty test needs at least one omitted class"));
        }
        for &l in &spec.omitted {
            if !l.is_attack() {
                return Err(Error::invalid(format!("`{l}` is not an attack class")));
            }
            if !self.test.iter().any(|s| s.label == l) {
                return Err(Error::MissingClass(l));
            }
        }
        let detections = self.hybrid_detections(&spec.omitted)?;
        let build = |subset: &dyn Fn(ClassLabel) -> bool, suffix: &str| -> Result<(EvalReport, EvalReport)> {
            let picked: Vec<(&DetectionResult, ClassLabel)> =
                detections.iter().zip(&self.test).filter(|(_, s)| subset(s.label)).map(|(d, s)| (d, s.label)).collect();
            let truth: Vec<ClassLabel> = picked.iter().map(|p| p.1).collect();
            let filter: Vec<Verdict> = picked.iter().map(|p| p.0.filter_verdict).collect();
            let chosen: Vec<DetectionResult> = picked.iter().map(|p| p.0.clone()).collect();
            Ok((
                EvalReport::build(&format!("classifier only{suffix}"), &filter, None, &truth)?,
                hybrid_report(&format!("hybrid{suffix}"), &chosen, &truth)?,
            ))
        };
        let (classifier, hybrid) = build(&|_| true, "")?;
        let restricted = if spec.restricted_eval {
            let keep = |l: ClassLabel| l == ClassLabel::Background || spec.omitted.contains(&l);
            Some(build(&keep, " (background + omitted)")?)
        } else {
            None
        };
        let (classifier_restricted, hybrid_restricted) = restricted.unzip();
        Ok(NoveltyReport {
            format_version: REPORT_FORMAT_VERSION,
            omitted: spec.omitted.iter().copied().collect(),
            classifier,
            hybrid,
            classifier_restricted,
            hybrid_restricted,
        })
    }

    /// Test scores split by true class, for density plots: VAE-only scores
    /// and hybrid scores, each as (background, attack).
    pub fn score_groups(&mut self) -> Result<ScoreGroups> {
        let detections = self.hybrid_detections(&BTreeSet::new())?;
        let mut g = ScoreGroups::default();
        for d in &detections {
            let attack = d.true_label.is_some_and(|l| l.is_attack());
            let (vae, hybrid) = if attack { (&mut g.vae_attack, &mut g.hybrid_attack) } else { (&mut g.vae_background, &mut g.hybrid_background) };
            vae.push(d.anomaly_score);
            hybrid.push(d.hybrid_score);
        }
        Ok(g)
    }
}

/// Balances normalized training samples and fits a forest on them.
pub fn train_filter<T: Scalar>(
    normalized: &[AggregatedSample<T>],
    mode: ForestMode,
    omitted: &BTreeSet<ClassLabel>,
    per_class_target: usize,
    forest: &ForestConfig,
) -> Result<ForestModel<T>> {
    let recipe = BalanceRecipe { per_class_target, omitted: omitted.clone() };
    let mut rng = substream(forest.seed, STREAM_BALANCE);
    let balanced = match mode {
        ForestMode::Binary => recipe.binary(normalized, &mut rng)?,
        ForestMode::Multiclass => recipe.multiclass(normalized, &mut rng)?,
    };
    ForestModel::fit(&rows(&balanced), &labels(&balanced), mode, forest)
}

/// A VAE fitted to the background rows of a normalized training set.
#[derive(Debug, Clone)]
pub struct FittedVae<T: Scalar> {
    pub model: VaeModel<T>,
    pub threshold: AnomalyThreshold,
    pub epochs: Vec<EpochLoss>,
}

/// Trains on the background rows of `normalized` (initialized from
/// `config.seed`) and takes the threshold from their reconstruction errors.
pub fn train_background_vae<T: Scalar>(
    normalized: &[AggregatedSample<T>],
    arch: VaeArchitecture,
    config: &TrainConfig,
    k: f64,
) -> Result<FittedVae<T>> {
    let background: Vec<AggregatedSample<T>> =
        normalized.iter().filter(|s| s.label == ClassLabel::Background).cloned().collect();
    if background.is_empty() {
        return Err(Error::MissingClass(ClassLabel::Background));
    }
    let model = VaeModel::init(arch, config.seed)?;
    let outcome = train(model, &rows(&background), config)?;
    let scores = vae_scores(&outcome.model, &background)?;
    let threshold = select_threshold(&scores, k)?;
    Ok(FittedVae { model: outcome.model, threshold, epochs: outcome.epochs })
}

fn hybrid_report(name: &str, detections: &[DetectionResult], truth: &[ClassLabel]) -> Result<EvalReport> {
    let verdicts: Vec<Verdict> = detections.iter().map(|d| d.final_verdict).collect();
    let scores: Vec<f64> = detections.iter().map(|d| d.hybrid_score).collect();
    EvalReport::build(name, &verdicts, Some(&scores), truth)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroups {
    pub vae_background: Vec<f64>,
    pub vae_attack: Vec<f64>,
    pub hybrid_background: Vec<f64>,
    pub hybrid_attack: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterComparison {
    pub format_version: u32,
    pub binary_train: EvalReport,
    pub multiclass_train: EvalReport,
    pub binary_test: EvalReport,
    pub multiclass_test: EvalReport,
    /// Binary relative to multiclass on the test split.
    pub delta_test: ReportDelta,
}

impl FilterComparison {
    pub fn to_table(&self) -> String {
        format_table(
            "Classifier filter: binary vs binarized multi-class",
            &[&self.binary_train, &self.multiclass_train, &self.binary_test, &self.multiclass_test],
            &[("delta (binary - multi-class, test)", self.delta_test)],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridComparison {
    pub format_version: u32,
    pub threshold: AnomalyThreshold,
    pub vae_only: EvalReport,
    pub hybrid: EvalReport,
    pub filter: EvalReport,
    /// Hybrid relative to the VAE alone.
    pub delta: ReportDelta,
}

impl HybridComparison {
    pub fn to_table(&self) -> String {
        let mut t = format_table(
            "Anomaly detector with and without the classifier filter",
            &[&self.vae_only, &self.hybrid, &self.filter],
            &[("delta (hybrid - VAE only)", self.delta)],
        );
        t.push_str(&format!(
            "threshold tau = {:.6} (mean {:.6} + {} x std {:.6})\n",
            self.threshold.tau, self.threshold.loss_mean, self.threshold.k, self.threshold.loss_std
        ));
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoveltySpec {
    pub omitted: BTreeSet<ClassLabel>,
    /// Also evaluate on background plus the omitted classes only.
    pub restricted_eval: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub format_version: u32,
    pub omitted: Vec<ClassLabel>,
    pub classifier: EvalReport,
    pub hybrid: EvalReport,
    pub classifier_restricted: Option<EvalReport>,
    pub hybrid_restricted: Option<EvalReport>,
}

impl NoveltyReport {
    /// Recall on `label` for (classifier only, hybrid), full test set.
    pub fn recall_on(&self, label: ClassLabel) -> Option<(f64, f64)> {
        Some((self.classifier.recall_of(label)?, self.hybrid.recall_of(label)?))
    }

    pub fn to_table(&self) -> String {
        let names: Vec<&str> = self.omitted.iter().map(|l| l.as_str()).collect();
        let mut rows = vec![&self.classifier, &self.hybrid];
        rows.extend(self.classifier_restricted.iter());
        rows.extend(self.hybrid_restricted.iter());
        let mut t = format_table(&format!("Novelty test, omitted: {}", names.join(", ")), &rows, &[]);
        for l in &self.omitted {
            if let Some((c, h)) = self.recall_on(*l) {
                t.push_str(&format!("recall on {l}: classifier only {c:.4}, hybrid {h:.4}\n"));
            }
        }
        t
    }
}

pub fn run_filter_comparison<T: Scalar>(
    train: &[AggregatedSample<T>],
    test: &[AggregatedSample<T>],
    config: ExperimentConfig,
) -> Result<FilterComparison> {
    ExperimentContext::new(train, test, config)?.filter_comparison()
}

pub fn run_hybrid_comparison<T: Scalar>(
    train: &[AggregatedSample<T>],
    test: &[AggregatedSample<T>],
    config: ExperimentConfig,
) -> Result<HybridComparison> {
    ExperimentContext::new(train, test, config)?.hybrid_comparison()
}

pub fn run_novelty<T: Scalar>(
    train: &[AggregatedSample<T>],
    test: &[AggregatedSample<T>],
    spec: &NoveltySpec,
    config: ExperimentConfig,
) -> Result<NoveltyReport> {
    ExperimentContext::new(train, test, config)?.novelty(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::WindowKey;
    use rand::{Rng, SeedableRng};

    /// Separable toy data: attacks push one feature up per class.
    fn toy(n_per_class: usize, seed: u64) -> Vec<AggregatedSample<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let classes = [(ClassLabel::Background, 4 * n_per_class), (ClassLabel::Dos, n_per_class), (ClassLabel::Scan11, n_per_class)];
        let mut out = Vec::new();
        for (c, (label, n)) in classes.into_iter().enumerate() {
            for _ in 0..n {
                let mut f: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..0.3)).collect();
                if c > 0 {
                    f[c] += 0.6;
                }
                out.push(AggregatedSample {
                    key: WindowKey { window_index: out.len() as i64, src_ip: "10.0.0.1".parse().unwrap() },
                    features: f,
                    label,
                    flow_count: 11,
                });
            }
        }
        out
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            seed: 4,
            forest: ForestConfig { n_trees: 15, ..Default::default() },
            per_class_target: PER_CLASS_TARGET,
            vae_arch: VaeArchitecture { input_dim: 6, encoder_hidden: vec![16], latent_dim: 3 },
            vae_train: TrainConfig { epochs: 5, batch_size: 32, ..Default::default() },
            k: 1.0,
        }
    }

    #[test]
    fn filter_comparison_shape_and_determinism() {
        let (train, test) = (toy(40, 1), toy(20, 2));
        let a = run_filter_comparison(&train, &test, small_config()).unwrap();
        let b = run_filter_comparison(&train, &test, small_config()).unwrap();
        assert_eq!(a, b);
        assert!(a.to_table().contains("delta"));
        assert_eq!(a.binary_test.counts.total(), test.len() as u64);
        let only_bg: Vec<_> = test.iter().filter(|s| s.label == ClassLabel::Background).cloned().collect();
        assert!(run_filter_comparison(&train, &only_bg, small_config()).is_err());
    }

    #[test]
    fn hybrid_adds_positives() {
        let (train, test) = (toy(40, 3), toy(20, 4));
        let r = run_hybrid_comparison(&train, &test, small_config()).unwrap();
        assert!(r.hybrid.recall1 >= r.vae_only.recall1);
        assert!(r.hybrid.counts.tp >= r.filter.counts.tp);
        assert_eq!(r.hybrid.counts.total(), test.len() as u64);
    }

    #[test]
    fn decomposition_identity() {
        let (train, test) = (toy(40, 5), toy(20, 6));
        let mut ctx = ExperimentContext::new(&train, &test, small_config()).unwrap();
        let d = ctx.hybrid_detections(&BTreeSet::new()).unwrap();
        let tau = ctx.vae().unwrap().threshold.tau;
        let hybrid = d.iter().filter(|r| r.final_verdict.is_attack()).count();
        let filter = d.iter().filter(|r| r.filter_verdict.is_attack()).count();
        let extra = d.iter().filter(|r| !r.filter_verdict.is_attack() && r.anomaly_score > tau).count();
        assert_eq!(hybrid, filter + extra);
    }

    #[test]
    fn novelty_checks_and_reports() {
        let (train, test) = (toy(40, 7), toy(20, 8));
        let spec = NoveltySpec { omitted: BTreeSet::from([ClassLabel::Scan11]), restricted_eval: true };
        let r = run_novelty(&train, &test, &spec, small_config()).unwrap();
        let restricted = r.classifier_restricted.as_ref().unwrap();
        assert!(restricted.recall_of(ClassLabel::Dos).is_none());
        assert!(r.recall_on(ClassLabel::Scan11).is_some());
        let absent = NoveltySpec { omitted: BTreeSet::from([ClassLabel::NerisBotnet]), restricted_eval: false };
        assert!(matches!(run_novelty(&train, &test, &absent, small_config()), Err(Error::MissingClass(_))));
    }
}
