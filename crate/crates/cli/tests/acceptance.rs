//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 4 to 7 and 10 share one default synthetic dataset and
//! one trained VAE.

use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use nids_core::classifier::Verdict;
use nids_core::eval::{bench_throughput, confusion_metrics, roc_auc, ExperimentConfig, NoveltySpec, REFERENCE};
use nids_core::features::{aggregate_window, extract_dataset, FeatureSchema, ENTROPY_FIELDS, BASE_STATISTICS};
use nids_core::flow::{write_flows, Protocol, TcpFlags};
use nids_core::synth::{generate, GenConfig};
use nids_core::vae::gradcheck::max_relative_gradient_error;
use nids_core::vae::{select_threshold, standard_normal_matrix, VaeArchitecture, VaeModel};
use nids_core::{ClassLabel, ExperimentContext, FilterArtifact, FlowRecord, Pipeline, Sample, VaeArtifact};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fmt_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(2..=200);
        // Every other instance draws from a handful of values to force ties.
        let coarse = i % 2 == 0;
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { f64::from(rng.random_range(0..5u8)) / 4.0 } else { rng.random::<f64>() }).collect();
        let fast = roc_auc(&scores, &labels).map_err(fmt_err)?.auc;
        worst = worst.max((fast - brute_force_auc(&scores, &labels)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9 && secs < 5.0, format!("max |diff| {worst:.2e} over 100 instances in {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn recall_values() -> Check {
    let recall = |tp: usize, fn_: usize| -> Result<f64, String> {
        let mut preds = vec![Verdict::Attack; tp];
        preds.extend(std::iter::repeat_n(Verdict::Benign, fn_));
        let truth = vec![Verdict::Attack; tp + fn_];
        Ok(confusion_metrics(&preds, &truth).map_err(fmt_err)?.recall1())
    };
    let a = format!("{:.4}", recall(1859, 59)?);
    let b = format!("{:.4}", recall(1470, 448)?);
    ensure(a == "0.9692" && b == "0.7664", format!("recall1 {a} and {b}"))
}

// ---------------------------------------------------------------- 3

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for seed in 0..3u64 {
        let arch = VaeArchitecture { input_dim: 6, encoder_hidden: vec![5, 4], latent_dim: 3 };
        let mut model = VaeModel::<f64>::init(arch, seed).map_err(fmt_err)?;
        params = model.params.tensors().iter().map(|t| t.len()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        for layer in model.params.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let x = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
        let noise = standard_normal_matrix(5, 3, &mut rng);
        for kl in [0.01, 1.0] {
            worst = worst.max(max_relative_gradient_error(&model, &x, &noise, kl, 1e-5).map_err(fmt_err)?);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4 && secs < 30.0, format!("max relative error {worst:.2e} over {params} parameters in {secs:.2}s"))
}

// ---------------------------------------------------------------- shared fixture

struct Fixture {
    ctx: ExperimentContext,
    test_flows: Vec<FlowRecord>,
    started: Instant,
    prepared_s: f64,
}

fn fixture() -> Result<Fixture, String> {
    let started = Instant::now();
    let data = generate(&GenConfig::default()).map_err(fmt_err)?;
    let schema = FeatureSchema::default();
    let (train, _) = extract_dataset::<f64>(data.train, &schema).map_err(fmt_err)?;
    let (test, _) = extract_dataset::<f64>(data.test.iter().cloned(), &schema).map_err(fmt_err)?;
    let mut ctx = ExperimentContext::new(&train, &test, ExperimentConfig::default()).map_err(fmt_err)?;
    ctx.vae().map_err(fmt_err)?;
    Ok(Fixture { ctx, test_flows: data.test, started, prepared_s: started.elapsed().as_secs_f64() })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 4

fn vae_learning(fx: &mut Fixture) -> Check {
    let labels: Vec<ClassLabel> = fx.ctx.test.iter().map(|s| s.label).collect();
    let trained = fx.ctx.vae().map_err(fmt_err)?;
    let first = trained.epochs.first().ok_or("no epochs")?.total;
    let last = trained.epochs.last().ok_or("no epochs")?.total;
    let by_label = |label: ClassLabel| -> Vec<f64> {
        labels.iter().zip(&trained.test_scores).filter(|(&l, _)| l == label).map(|(_, &e)| e).collect()
    };
    let background = mean(&by_label(ClassLabel::Background));
    let dos = mean(&by_label(ClassLabel::Dos));
    ensure(
        last < 0.5 * first && background < dos && fx.prepared_s < 300.0,
        format!(
            "loss {first:.5} -> {last:.5} (ratio {:.3}); held-out error background {background:.5} < dos {dos:.5}; trained in {:.1}s",
            last / first,
            fx.prepared_s
        ),
    )
}

// ---------------------------------------------------------------- 5

fn hybrid_direction(fx: &mut Fixture) -> Check {
    let r = fx.ctx.hybrid_comparison().map_err(fmt_err)?;
    let secs = fx.started.elapsed().as_secs_f64();
    let (h, v) = (&r.hybrid, &r.vae_only);
    ensure(
        h.auc >= v.auc + 0.03 && (h.counts.fp as f64) <= 1.25 * v.counts.fp as f64 && secs < 600.0,
        format!(
            "AUC hybrid {:.4} vs VAE {:.4} ({:+.2}%); FP {} vs {}; {secs:.0}s end-to-end",
            h.auc, v.auc, r.delta.auc_pct, h.counts.fp, v.counts.fp
        ),
    )
}

// ---------------------------------------------------------------- 6

fn filter_direction(fx: &mut Fixture) -> Check {
    let r = fx.ctx.filter_comparison().map_err(fmt_err)?;
    let (b, m) = (&r.binary_test, &r.multiclass_test);
    ensure(
        b.counts.fp <= m.counts.fp && b.auc >= m.auc - 0.01,
        format!("FP binary {} vs multi-class {}; AUC {:.4} vs {:.4}", b.counts.fp, m.counts.fp, b.auc, m.auc),
    )
}

// ---------------------------------------------------------------- 7

fn novelty(fx: &mut Fixture) -> Check {
    let spam = ClassLabel::AnomalySpam;
    let r = fx.ctx.novelty(&NoveltySpec { omitted: BTreeSet::from([spam]), restricted_eval: false }).map_err(fmt_err)?;
    let (c_spam, h_spam) = r.recall_on(spam).ok_or("no spam in test set")?;
    let scan = ClassLabel::Scan11;
    let r = fx.ctx.novelty(&NoveltySpec { omitted: BTreeSet::from([scan]), restricted_eval: false }).map_err(fmt_err)?;
    let (c_scan, _) = r.recall_on(scan).ok_or("no scan11 in test set")?;
    ensure(
        c_spam <= 0.05 && h_spam >= 0.10 && c_scan >= 0.5,
        format!("spam omitted: classifier {c_spam:.4}, hybrid {h_spam:.4}; scan11 omitted: classifier {c_scan:.4}"),
    )
}

// ---------------------------------------------------------------- 8

fn threshold_value() -> Check {
    let t = select_threshold(&[0.0, 0.1, 0.2], 1.0).map_err(fmt_err)?;
    let direct = 0.1 + (0.02f64 / 3.0).sqrt();
    ensure(
        (t.tau - 0.1816497).abs() <= 1e-6 && (t.tau - direct).abs() <= 1e-12,
        format!("tau {:.7} (direct {direct:.7})", t.tau),
    )
}

// ---------------------------------------------------------------- 9

fn fuzz_flow(rng: &mut ChaCha8Rng, src: IpAddr, window: i64, window_ms: i64, tracked: &[u16]) -> FlowRecord {
    let port = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { *tracked.choose(rng).unwrap() } else { rng.random() };
    let protocol = Protocol::from_code(*[6u8, 6, 17, 1, 47].choose(rng).unwrap());
    let flags = if protocol == Protocol::Tcp { TcpFlags::from_bits(rng.random()) } else { TcpFlags::empty() };
    let duration = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..300.0) };
    let packets = rng.random_range(1..100_000u64);
    FlowRecord {
        end_time_ms: window * window_ms + rng.random_range(0..window_ms),
        duration,
        src_ip: src,
        dst_ip: IpAddr::V4(Ipv4Addr::from(rng.random_range(0..64u32) + 0x0a00_0000)),
        src_port: port(rng),
        dst_port: port(rng),
        protocol,
        tcp_flags: flags,
        fwd_status: 0,
        tos: 0,
        packets,
        bytes: packets * rng.random_range(40..1500u64),
        label: *ClassLabel::ALL.choose(rng).unwrap(),
    }
}

fn check_sample(s: &Sample, schema: &FeatureSchema) -> Result<(), String> {
    let p = schema.tracked_ports.len();
    if s.features.len() != 69 || s.features.iter().any(|v| !v.is_finite()) {
        return Err(format!("window {:?}: bad feature vector", s.key));
    }
    for off in [schema.src_port_offset(), schema.dst_port_offset()] {
        let sum: f64 = s.features[off..off + p].iter().sum();
        if sum > 1.0 + 1e-12 {
            return Err(format!("window {:?}: port proportions sum to {sum}", s.key));
        }
    }
    let e0 = 2 * BASE_STATISTICS.len();
    let bound = (s.flow_count as f64).log2() + 1e-12;
    if let Some(h) = s.features[e0..e0 + ENTROPY_FIELDS.len()].iter().find(|&&h| h < 0.0 || h > bound) {
        return Err(format!("window {:?}: entropy {h} outside [0, {bound}]", s.key));
    }
    Ok(())
}

fn extraction_invariants() -> Check {
    let schema = FeatureSchema::default();
    let window_ms = i64::from(schema.window_seconds) * 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    // Single windows: invariants and permutation invariance.
    for w in 0..10_000i64 {
        let src = IpAddr::V4(Ipv4Addr::from(0xac10_0000 + w as u32));
        let n = rng.random_range(schema.min_flows + 1..=120);
        let mut flows: Vec<FlowRecord> =
            (0..n).map(|_| fuzz_flow(&mut rng, src, 9000 + w % 7, window_ms, &schema.tracked_ports)).collect();
        let sample = aggregate_window::<f64>(&flows, &schema).map_err(fmt_err)?;
        check_sample(&sample, &schema)?;
        flows.shuffle(&mut rng);
        if aggregate_window::<f64>(&flows, &schema).map_err(fmt_err)? != sample {
            return Err(format!("window {w}: permuting flows changed the sample"));
        }
    }
    // Whole datasets, small windows included: flow accounting.
    let mut checked = 0;
    for round in 0..50 {
        let mut flows = Vec::new();
        for k in 0..40u32 {
            let src = IpAddr::V4(Ipv4Addr::from(0xc0a8_0000 + k % 9));
            let n = rng.random_range(1..=30);
            flows.extend((0..n).map(|_| fuzz_flow(&mut rng, src, 500 + i64::from(k % 5), window_ms, &schema.tracked_ports)));
        }
        flows.shuffle(&mut rng);
        let (samples, report) = extract_dataset::<f64>(flows.iter().cloned(), &schema).map_err(fmt_err)?;
        let mut windows: std::collections::BTreeMap<_, Vec<ClassLabel>> = Default::default();
        for f in &flows {
            windows.entry(schema.window_of(f)).or_default().push(f.label);
        }
        for label in ClassLabel::ALL {
            let v = report.get(label);
            let total = flows.iter().filter(|f| f.label == label).count() as u64;
            let omitted: u64 = windows
                .values()
                .filter(|ls| ls.len() <= schema.min_flows)
                .map(|ls| ls.iter().filter(|&&l| l == label).count() as u64)
                .sum();
            let outvoted: u64 = samples
                .iter()
                .map(|s| windows[&s.key].iter().filter(|&&l| l == label && s.label != label).count() as u64)
                .sum();
            let kept_flows: u64 =
                samples.iter().map(|s| windows[&s.key].iter().filter(|&&l| l == label).count() as u64).sum();
            if v.total_flows != total || v.omitted_flows != omitted || v.outvoted_flows != outvoted || v.total_flows != v.omitted_flows + kept_flows {
                return Err(format!("round {round}, class {label}: accounting {v:?} vs total {total}, omitted {omitted}, outvoted {outvoted}"));
            }
        }
        let sample_flows: usize = samples.iter().map(|s| s.flow_count).sum();
        let voted: u64 = report.classes.values().map(|c| c.voted_flows()).sum();
        if voted != sample_flows as u64 {
            return Err(format!("round {round}: {voted} voted flows but samples hold {sample_flows}"));
        }
        for s in &samples {
            check_sample(s, &schema)?;
        }
        checked += samples.len();
    }
    Ok(format!("10000 fuzzed windows invariant under permutation; accounting exact over 50 datasets ({checked} samples)"))
}

// ---------------------------------------------------------------- 10

fn throughput(fx: &mut Fixture, dir: &Path) -> Check {
    let schema = FeatureSchema::default();
    let forest = fx.ctx.binary_forest(&BTreeSet::new()).map_err(fmt_err)?.clone();
    let normalizer = fx.ctx.normalizer.clone();
    let vae = fx.ctx.vae().map_err(fmt_err)?;
    let filter = FilterArtifact::new(&schema, normalizer.clone(), Vec::new(), forest);
    let vae = VaeArtifact::new(&schema, normalizer, vae.threshold, vae.model.clone());
    let pipeline = Pipeline::from_artifacts(filter, vae, &schema, None).map_err(fmt_err)?;
    let path = dir.join("bench_flows.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(fmt_err)?);
    write_flows(&mut w, fx.test_flows.iter()).map_err(fmt_err)?;
    w.flush().map_err(fmt_err)?;
    drop(w);
    let report = bench_throughput(&path, &pipeline, 3).map_err(fmt_err)?;
    let rate = report.median.end_to_end_flows_per_s;
    ensure(
        rate >= 1273.0 && report.reference.end_to_end_flows_per_s == REFERENCE.end_to_end_flows_per_s,
        format!(
            "{rate:.0} flows/s end-to-end over {} flows on {} thread(s) (reference {:.0}, demand {:.0})",
            report.flows, report.threads, report.reference.end_to_end_flows_per_s, report.reference.network_demand_flows_per_s
        ),
    )
}

// ---------------------------------------------------------------- 11

const VAE_FLAGS: [&str; 8] = ["--hidden", "24,16", "--latent", "6", "--epochs", "4", "--batch-size", "64"];

/// Runs every subcommand in `dir` with relative paths so echoed arguments match.
fn cli_session(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_hybrid-nids");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).current_dir(dir).args(["--seed", "7", "-q"]).args(args).output().map_err(fmt_err)?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let with_vae = |base: &[&'static str]| -> Vec<&'static str> { base.iter().chain(VAE_FLAGS.iter()).copied().collect() };
    run(&["gen", "--small", "--out-dir", "data"])?;
    run(&["extract", "--in", "data/train.csv", "--out", "train.csv", "--visibility", "train_vis.json"])?;
    run(&["extract", "--in", "data/test.csv", "--out", "test.csv"])?;
    run(&["fit-filter", "--train", "train.csv", "--out", "filter.json", "--trees", "15"])?;
    run(&["fit-filter", "--train", "train.csv", "--out", "filter_mc.json", "--trees", "15", "--mode", "multiclass", "--omit", "dos"])?;
    run(&with_vae(&["fit-vae", "--train", "train.csv", "--out", "vae.json"]))?;
    run(&["run", "--in", "data/test.csv", "--filter", "filter.json", "--vae", "vae.json", "--out", "results.csv", "--labels"])?;
    run(&with_vae(&["eval", "--experiment", "filter", "--train", "train.csv", "--test", "test.csv", "--out", "eval_filter.json", "--trees", "15"]))?;
    run(&with_vae(&[
        "eval", "--experiment", "hybrid", "--train", "train.csv", "--test", "test.csv", "--out", "eval_hybrid.json", "--trees", "15",
        "--roc-csv", "roc.csv", "--kde-csv", "kde.csv",
    ]))?;
    run(&with_vae(&[
        "novelty", "--train", "train.csv", "--test", "test.csv", "--out", "novelty.json", "--omit", "anomaly-spam", "--restricted",
        "--vae-artifact", "vae.json", "--trees", "15",
    ]))?;
    run(&["bench", "--in", "data/test.csv", "--filter", "filter.json", "--vae", "vae.json", "--out", "bench.json", "--repetitions", "1"])
}

/// Primary outputs; manifests and the benchmark carry wall-clock times.
const PRIMARY_OUTPUTS: [&str; 19] = [
    "data/train.csv",
    "data/test.csv",
    "data/manifest.json",
    "train.csv",
    "train_vis.json",
    "test.csv",
    "filter.json",
    "filter_mc.json",
    "vae.json",
    "vae.json.loss.csv",
    "results.csv",
    "eval_filter.json",
    "eval_filter.json.txt",
    "eval_hybrid.json",
    "eval_hybrid.json.txt",
    "roc.csv",
    "kde.csv",
    "novelty.json",
    "novelty.json.txt",
];

fn determinism(root: &Path) -> Check {
    let (a, b) = (root.join("run_a"), root.join("run_b"));
    for d in [&a, &b] {
        std::fs::create_dir_all(d).map_err(fmt_err)?;
        cli_session(d)?;
    }
    let mut bytes = 0;
    for name in PRIMARY_OUTPUTS {
        let (x, y) = (std::fs::read(a.join(name)).map_err(fmt_err)?, std::fs::read(b.join(name)).map_err(fmt_err)?);
        if x != y {
            return Err(format!("{name} differs between identical runs"));
        }
        bytes += x.len();
    }
    // The manifest records the omission even though it is not byte-compared.
    let manifest = std::fs::read_to_string(a.join("filter_mc.json.manifest.json")).map_err(fmt_err)?;
    let manifest: serde_json::Value = serde_json::from_str(&manifest).map_err(fmt_err)?;
    if manifest["details"]["omitted"] != serde_json::json!(["dos"]) {
        return Err("fit-filter manifest does not record the omitted class".into());
    }
    let bench: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("bench.json")).map_err(fmt_err)?).map_err(fmt_err)?;
    let bench_b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.join("bench.json")).map_err(fmt_err)?).map_err(fmt_err)?;
    ensure(
        bench["flows"] == bench_b["flows"] && bench["samples"] == bench_b["samples"],
        format!("8 subcommands, {} primary outputs ({bytes} bytes) byte-identical across reruns", PRIMARY_OUTPUTS.len()),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let guarded = |f: &mut dyn FnMut() -> Check| -> Check {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        })
    };

    results.push((1, "ROC AUC equals brute-force pair counting", guarded(&mut auc_oracle)));
    results.push((2, "recall1 from published confusion counts", guarded(&mut recall_values)));
    results.push((3, "VAE analytic gradients match finite differences", guarded(&mut gradient_check)));

    let (mut fixture_value, fixture_error) = match catch_unwind(fixture) {
        Ok(Ok(f)) => (Some(f), String::new()),
        Ok(Err(e)) => (None, e),
        Err(_) => (None, "panicked".to_string()),
    };
    let shared: [(u32, &str, fn(&mut Fixture) -> Check); 4] = [
        (4, "VAE learns the background", vae_learning),
        (5, "hybrid beats the VAE alone", hybrid_direction),
        (6, "binary filter beats binarized multi-class", filter_direction),
        (7, "novel classes: classifier misses, hybrid catches", novelty),
    ];
    for (id, name, f) in shared {
        let r = match &mut fixture_value {
            Some(fxv) => guarded(&mut || f(fxv)),
            None => Err(format!("fixture failed: {fixture_error}")),
        };
        results.push((id, name, r));
    }
    results.push((8, "threshold is mean plus k population std", guarded(&mut threshold_value)));
    results.push((9, "extraction invariants under fuzzing", guarded(&mut extraction_invariants)));
    let r = match &mut fixture_value {
        Some(fxv) => guarded(&mut || throughput(fxv, tmp.path())),
        None => Err(format!("fixture failed: {fixture_error}")),
    };
    results.push((10, "end-to-end throughput covers network demand", r));
    results.push((11, "CLI reruns are byte-identical", guarded(&mut || determinism(tmp.path()))));

    let mut failed = 0;
    for (id, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS [{id:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed in {:.0}s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
