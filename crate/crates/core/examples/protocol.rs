//! Runs every comparison on a freshly generated synthetic dataset.
//!
//! `cargo run --release -p nids-core --example protocol [seed]`

use std::collections::BTreeSet;
use std::time::Instant;

use nids_core::eval::{ExperimentConfig, ExperimentContext, NoveltySpec};
use nids_core::features::{extract_dataset, FeatureSchema};
use nids_core::synth::{generate, GenConfig};
use nids_core::ClassLabel;

fn main() -> nids_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = Instant::now();
    let data = generate(&GenConfig { seed, ..Default::default() })?;
    let schema = FeatureSchema::default();
    let (train, vis) = extract_dataset::<f64>(data.train, &schema)?;
    let (test, _) = extract_dataset::<f64>(data.test, &schema)?;
    println!("{} train / {} test samples ({:.1}s)", train.len(), test.len(), t.elapsed().as_secs_f64());
    print!("{}", vis.to_table());

    let mut ctx = ExperimentContext::new(&train, &test, ExperimentConfig { seed, ..Default::default() })?;
    let t = Instant::now();
    print!("{}", ctx.filter_comparison()?.to_table());
    println!("({:.1}s)", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let vae = ctx.vae()?;
    for e in &vae.epochs {
        println!("epoch {:>2}: total {:.6} recon {:.6} kl {:.4}", e.epoch, e.total, e.recon, e.kl);
    }
    println!("VAE trained ({:.1}s)", t.elapsed().as_secs_f64());
    let h = ctx.hybrid_comparison()?;
    print!("{}", h.to_table());
    for (l, r) in &h.vae_only.per_class_recall {
        println!("  {l:<14} VAE only {r:.3}  hybrid {:.3}", h.hybrid.per_class_recall[l]);
    }

    for omitted in [ClassLabel::AnomalySpam, ClassLabel::Scan11, ClassLabel::NerisBotnet, ClassLabel::Dos] {
        let spec = NoveltySpec { omitted: BTreeSet::from([omitted]), restricted_eval: true };
        print!("{}", ctx.novelty(&spec)?.to_table());
    }
    Ok(())
}
