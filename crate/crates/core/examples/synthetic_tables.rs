//! Train all three rationale models on the synthetic benchmark corpus
//! (200/600 training, 600/2,000 test documents) and print the
//! score-reduction tables side by side.
//!
//! Run: cargo run --release --example synthetic_tables
//!
//! Generator knobs come from the environment: SIGNAL, NR_PLANT, TOPIC,
//! OVERLAP, LMIN, LMAX, PMIN, PMAX, SEED; training knobs EPOCHS and LR.

use std::time::Instant;

use rationale::eval::{render_comparison, score_reduction_report};
use rationale::rationale::{
    train_document_model_tokenized, train_iterative_method_from, train_snippet_method_from,
    IterConfig, MethodConfig, TokenizedCorpus,
};
use rationale::synth::{benchmark_split, GenConfig};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> anyhow::Result<()> {
    let d = GenConfig::default();
    let gen = GenConfig {
        signal_strength: env_or("SIGNAL", d.signal_strength),
        nonresponsive_plant_rate: env_or("NR_PLANT", d.nonresponsive_plant_rate),
        topic_vocab: env_or("TOPIC", d.topic_vocab),
        vocab_overlap: env_or("OVERLAP", d.vocab_overlap),
        doc_length: (
            env_or("LMIN", d.doc_length.0),
            env_or("LMAX", d.doc_length.1),
        ),
        plants_per_doc: (
            env_or("PMIN", d.plants_per_doc.0),
            env_or("PMAX", d.plants_per_doc.1),
        ),
        seed: env_or("SEED", 0),
        ..d
    };
    let t0 = Instant::now();
    let (split, _) = benchmark_split(&gen, (600, 2_000))?;
    let mut cfg = MethodConfig::default();
    cfg.train.max_epochs = env_or("EPOCHS", cfg.train.max_epochs);
    cfg.train.learning_rate = env_or("LR", cfg.train.learning_rate);
    let data = TokenizedCorpus::new(&split.train);
    let doc = train_document_model_tokenized(&data, &cfg.train)?;
    let snip = train_snippet_method_from(&doc, &data, 50, &cfg)?;
    let iter = train_iterative_method_from(&doc, &data, &IterConfig::default(), &cfg)?;
    println!(
        "train {:?} test {:?} trained in {:?}",
        split.train.counts(),
        split.test.counts(),
        t0.elapsed()
    );
    for r in &iter.rounds {
        println!(
            "  round n={} selected {} (phase1 {})",
            r.snippet_size,
            r.selection.len(),
            r.selection.phase_one
        );
    }
    let reports = vec![
        score_reduction_report("Document-Level Model", &doc, &doc, &split.test, 50)?,
        score_reduction_report("Snippet Model", &doc, &snip.model, &split.test, 50)?,
        score_reduction_report(
            "Iterative Snippet Model",
            &doc,
            &iter.model,
            &split.test,
            50,
        )?,
    ];
    println!("{}", render_comparison(&reports));
    println!("elapsed {:?}", t0.elapsed());
    Ok(())
}
