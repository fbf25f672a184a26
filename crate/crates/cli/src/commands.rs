use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nids_core::classifier::{ForestConfig, ForestMode};
use nids_core::eval::{
    bench_throughput, density_csv, export_score_density, train_background_vae, train_filter, ExperimentConfig,
    NoveltySpec,
};
use nids_core::features::{read_samples, try_extract_dataset, write_samples, FeatureSchema};
use nids_core::flow::stream_flows;
use nids_core::pipeline::{load_json, save_json, write_results, PipelineConfig};
use nids_core::synth::{generate_to, ClassPlan, GenConfig};
use nids_core::vae::{TrainConfig, VaeArchitecture};
use nids_core::{
    ClassLabel, Error, ExperimentContext, FilterArtifact, Normalizer, Pipeline, Sample, VaeArtifact,
};
use serde::Serialize;

use crate::cli::*;
use crate::manifest::{self, RunManifest};

/// How a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

struct Run<'a> {
    cli: &'a Cli,
    schema: FeatureSchema,
    started: Instant,
}

impl Run<'_> {
    fn manifest<A: Serialize>(&self, args: &A) -> Result<RunManifest, Failure> {
        Ok(RunManifest::new(self.cli.command.name(), serde_json::to_value(args)?, self.cli.seed, self.schema.fingerprint()))
    }

    fn finish(&self, mut m: RunManifest, at: &Path) -> Outcome {
        m.duration_s = self.started.elapsed().as_secs_f64();
        save_pretty(at, &m)
    }

    fn say(&self, text: &str) {
        if !self.cli.quiet {
            print!("{text}");
        }
    }
}

pub fn dispatch(cli: &Cli) -> Outcome {
    let schema = match &cli.schema {
        Some(path) => {
            let s: FeatureSchema = load_json(path)?;
            s.validate()?;
            s
        }
        None => FeatureSchema::default(),
    };
    let run = Run { cli, schema, started: Instant::now() };
    match &cli.command {
        Command::Gen(a) => gen(&run, a),
        Command::Extract(a) => extract(&run, a),
        Command::FitFilter(a) => fit_filter(&run, a),
        Command::FitVae(a) => fit_vae(&run, a),
        Command::Run(a) => run_detector(&run, a),
        Command::Eval(a) => eval(&run, a),
        Command::Novelty(a) => novelty(&run, a),
        Command::Bench(a) => bench(&run, a),
    }
}

fn save_pretty<S: Serialize>(path: &Path, value: &S) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_samples(path: &Path, schema: &FeatureSchema) -> Result<Vec<Sample>, Failure> {
    Ok(read_samples(BufReader::new(File::open(path)?), schema)?)
}

fn forest_config(args: &ForestArgs, seed: u64) -> ForestConfig {
    ForestConfig { n_trees: args.trees, max_depth: args.max_depth, max_features: args.max_features, seed, ..Default::default() }
}

fn vae_settings(args: &VaeArgs, seed: u64, input_dim: usize) -> (VaeArchitecture, TrainConfig) {
    let arch = VaeArchitecture { input_dim, encoder_hidden: args.hidden.clone(), latent_dim: args.latent };
    let train = TrainConfig {
        learning_rate: args.learning_rate,
        weight_decay: args.weight_decay,
        kl_weight: args.kl_weight,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed,
        ..Default::default()
    };
    (arch, train)
}

fn experiment_config(run: &Run, forest: &ForestArgs, vae: &VaeArgs) -> ExperimentConfig {
    let seed = run.cli.seed;
    let (vae_arch, vae_train) = vae_settings(vae, seed, run.schema.n_features());
    ExperimentConfig { seed, forest: forest_config(forest, seed), per_class_target: forest.per_class, vae_arch, vae_train, k: vae.k }
}

fn normalize_all(norm: &Normalizer, samples: &[Sample]) -> Result<Vec<Sample>, Failure> {
    Ok(samples
        .iter()
        .map(|s| Ok(Sample { features: norm.apply(&s.features)?, ..s.clone() }))
        .collect::<nids_core::Result<_>>()?)
}

fn gen(run: &Run, a: &GenArgs) -> Outcome {
    let mut cfg = if a.small { GenConfig::small(run.cli.seed) } else { GenConfig { seed: run.cli.seed, ..Default::default() } };
    cfg.window_seconds = run.schema.window_seconds;
    if let Some(d) = a.duration {
        cfg.duration_seconds = d;
    }
    if let Some(n) = a.train_sources {
        cfg.train_background_sources = n;
    }
    if let Some(n) = a.test_sources {
        cfg.test_background_sources = n;
    }
    for plan in cfg.attacks.values_mut() {
        *plan = ClassPlan {
            train_windows: a.train_attack_windows.unwrap_or(plan.train_windows),
            test_windows: a.test_attack_windows.unwrap_or(plan.test_windows),
        };
    }
    let gm = generate_to(&cfg, &a.out_dir)?;
    let mut m = run.manifest(a)?;
    m.outputs = gm.files.iter().map(|f| a.out_dir.join(f)).collect();
    m.outputs.push(a.out_dir.join("manifest.json"));
    m.details = serde_json::to_value(&gm)?;
    let mut summary = String::from("split  class             flows  windows\n");
    for (split, counts) in [("train", &gm.train), ("test", &gm.test)] {
        for (label, c) in counts {
            summary.push_str(&format!("{split:<7}{:<16}{:>7}{:>9}\n", label.as_str(), c.flows, c.windows));
        }
    }
    run.say(&summary);
    run.finish(m, &a.out_dir.join("run.manifest.json"))
}

fn extract(run: &Run, a: &ExtractArgs) -> Outcome {
    let (samples, report) = try_extract_dataset::<f64>(stream_flows(&a.input)?, &run.schema)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_samples(&mut w, &samples, &run.schema)?;
    w.flush()?;
    let mut m = run.manifest(a)?;
    m.inputs.push(a.input.clone());
    m.outputs.push(a.out.clone());
    if let Some(path) = &a.visibility {
        save_pretty(path, &report.to_json())?;
        m.outputs.push(path.clone());
    }
    m.details = serde_json::json!({ "samples": samples.len(), "visibility": report.to_json() });
    run.say(&format!("{} samples\n{}", samples.len(), report.to_table()));
    run.finish(m, &manifest::path_for(&a.out))
}

fn fit_filter(run: &Run, a: &FitFilterArgs) -> Outcome {
    let raw = load_samples(&a.train, &run.schema)?;
    let normalizer = Normalizer::fit_samples(&raw)?;
    let train = normalize_all(&normalizer, &raw)?;
    let mode = match a.mode {
        ModeArg::Binary => ForestMode::Binary,
        ModeArg::Multiclass => ForestMode::Multiclass,
    };
    let omitted: BTreeSet<ClassLabel> = a.omit.iter().copied().collect();
    if let Some(l) = omitted.iter().find(|l| !l.is_attack()) {
        return Err(Failure::Data(format!("`{l}` is not an attack class")));
    }
    let model = train_filter(&train, mode, &omitted, a.forest.per_class, &forest_config(&a.forest, run.cli.seed))?;
    let artifact = FilterArtifact::new(&run.schema, normalizer, omitted.iter().copied().collect(), model);
    save_json(&a.out, &artifact)?;
    let mut m = run.manifest(a)?;
    m.inputs.push(a.train.clone());
    m.outputs.push(a.out.clone());
    m.details = serde_json::json!({
        "mode": mode,
        "omitted": omitted,
        "training_samples": raw.len(),
        "trees": artifact.model.trees.len(),
    });
    run.say(&format!("trained {} trees on {} samples\n", artifact.model.trees.len(), raw.len()));
    run.finish(m, &manifest::path_for(&a.out))
}

fn fit_vae(run: &Run, a: &FitVaeArgs) -> Outcome {
    let raw = load_samples(&a.train, &run.schema)?;
    let normalizer = Normalizer::fit_samples(&raw)?;
    let train = normalize_all(&normalizer, &raw)?;
    let (arch, cfg) = vae_settings(&a.vae, run.cli.seed, normalizer.dim());
    let fitted = train_background_vae(&train, arch, &cfg, a.vae.k)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let mut loss = String::from("epoch,total,recon,kl\n");
    for e in &fitted.epochs {
        loss.push_str(&format!("{},{},{},{}\n", e.epoch, e.total, e.recon, e.kl));
    }
    write_text(&loss_path, &loss)?;
    let threshold = fitted.threshold;
    save_json(&a.out, &VaeArtifact::new(&run.schema, normalizer, threshold, fitted.model))?;
    let mut m = run.manifest(a)?;
    m.inputs.push(a.train.clone());
    m.outputs.extend([a.out.clone(), loss_path]);
    m.details = serde_json::json!({ "threshold": threshold, "epochs": fitted.epochs.len() });
    run.say(&format!(
        "tau = {:.6} (mean {:.6} + {} x std {:.6})\n",
        threshold.tau, threshold.loss_mean, threshold.k, threshold.loss_std
    ));
    run.finish(m, &manifest::path_for(&a.out))
}

fn run_detector(run: &Run, a: &RunArgs) -> Outcome {
    let config = PipelineConfig {
        forest_path: a.filter.clone(),
        vae_path: a.vae.clone(),
        schema: run.schema.clone(),
        tau: a.tau,
        with_labels: a.labels,
    };
    let pipeline = Pipeline::load(&config)?;
    let results = pipeline.run_file(&a.input, a.labels)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_results(&mut w, &results, a.labels)?;
    w.flush()?;
    let flagged = results.iter().filter(|r| r.final_verdict.is_attack()).count();
    let mut m = run.manifest(a)?;
    m.inputs.extend([a.input.clone(), a.filter.clone(), a.vae.clone()]);
    m.outputs.push(a.out.clone());
    m.details = serde_json::json!({ "tau": pipeline.tau, "samples": results.len(), "flagged": flagged });
    run.say(&format!("{} samples, {} flagged (tau = {:.6})\n", results.len(), flagged, pipeline.tau));
    run.finish(m, &manifest::path_for(&a.out))
}

/// Builds the context and installs a VAE artifact when one is given.
fn context(run: &Run, train: &Path, test: &Path, config: ExperimentConfig, vae: Option<&Path>) -> Result<ExperimentContext, Failure> {
    let train = load_samples(train, &run.schema)?;
    let test = load_samples(test, &run.schema)?;
    let mut ctx = ExperimentContext::new(&train, &test, config)?;
    if let Some(path) = vae {
        let artifact: VaeArtifact = load_json(path)?;
        artifact.check()?;
        if artifact.schema_fingerprint != run.schema.fingerprint() {
            return Err(Error::SchemaMismatch(format!(
                "vae artifact was trained on schema {}, extractor uses {}",
                artifact.schema_fingerprint,
                run.schema.fingerprint()
            ))
            .into());
        }
        if artifact.normalizer != ctx.normalizer {
            return Err(Error::SchemaMismatch("vae artifact was trained on a different training set".into()).into());
        }
        ctx.set_vae(artifact.model, Some(artifact.threshold))?;
    }
    Ok(ctx)
}

fn eval(run: &Run, a: &EvalArgs) -> Outcome {
    let config = experiment_config(run, &a.forest, &a.vae);
    let mut ctx = context(run, &a.train, &a.test, config, a.vae_artifact.as_deref())?;
    let mut m = run.manifest(a)?;
    m.inputs.extend([a.train.clone(), a.test.clone()]);
    m.inputs.extend(a.vae_artifact.clone());
    let table_path = with_suffix(&a.out, ".txt");
    let table = match a.experiment {
        Experiment::Filter => {
            let report = ctx.filter_comparison()?;
            save_pretty(&a.out, &report)?;
            report.to_table()
        }
        Experiment::Hybrid => {
            let report = ctx.hybrid_comparison()?;
            save_pretty(&a.out, &report)?;
            if let Some(path) = &a.roc_csv {
                let mut csv = String::from("detector,fpr,tpr\n");
                for (name, r) in [("vae_only", &report.vae_only), ("hybrid", &report.hybrid)] {
                    for (f, t) in &r.roc_points {
                        csv.push_str(&format!("{name},{f},{t}\n"));
                    }
                }
                write_text(path, &csv)?;
                m.outputs.push(path.clone());
            }
            if let Some(path) = &a.kde_csv {
                let g = ctx.score_groups()?;
                let mut curves = Vec::new();
                for (name, scores) in [
                    ("vae_background", &g.vae_background),
                    ("vae_attack", &g.vae_attack),
                    ("hybrid_background", &g.hybrid_background),
                    ("hybrid_attack", &g.hybrid_attack),
                ] {
                    // Filtered samples sit at exactly 1.0 and are left out, which can empty a group.
                    match export_score_density(&[(name, scores.as_slice())], None) {
                        Ok(c) => curves.extend(c),
                        Err(e) => log::warn!("no density for {name}: {e}"),
                    }
                }
                write_text(path, &density_csv(&curves))?;
                m.outputs.push(path.clone());
            }
            m.details = serde_json::json!({ "threshold": report.threshold });
            report.to_table()
        }
    };
    write_text(&table_path, &table)?;
    m.outputs.splice(0..0, [a.out.clone(), table_path]);
    run.say(&table);
    run.finish(m, &manifest::path_for(&a.out))
}

fn novelty(run: &Run, a: &NoveltyArgs) -> Outcome {
    let config = experiment_config(run, &a.forest, &a.vae);
    let mut ctx = context(run, &a.train, &a.test, config, a.vae_artifact.as_deref())?;
    let spec = NoveltySpec { omitted: a.omit.iter().copied().collect(), restricted_eval: a.restricted };
    let report = ctx.novelty(&spec)?;
    save_pretty(&a.out, &report)?;
    let table = report.to_table();
    let table_path = with_suffix(&a.out, ".txt");
    write_text(&table_path, &table)?;
    let mut m = run.manifest(a)?;
    m.inputs.extend([a.train.clone(), a.test.clone()]);
    m.inputs.extend(a.vae_artifact.clone());
    m.outputs.extend([a.out.clone(), table_path]);
    m.details = serde_json::json!({ "omitted": spec.omitted });
    run.say(&table);
    run.finish(m, &manifest::path_for(&a.out))
}

fn bench(run: &Run, a: &BenchArgs) -> Outcome {
    let config = PipelineConfig {
        forest_path: a.filter.clone(),
        vae_path: a.vae.clone(),
        schema: run.schema.clone(),
        tau: None,
        with_labels: false,
    };
    let pipeline = Pipeline::load(&config)?;
    let report = bench_throughput(&a.input, &pipeline, a.repetitions)?;
    save_pretty(&a.out, &report)?;
    let mut m = run.manifest(a)?;
    m.inputs.extend([a.input.clone(), a.filter.clone(), a.vae.clone()]);
    m.outputs.push(a.out.clone());
    run.say(&report.to_table());
    run.finish(m, &manifest::path_for(&a.out))
}
