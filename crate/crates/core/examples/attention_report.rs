//! Trains on a synthetic corpus and compares the learned top-k attention
//! features with the attributes the generator made informative.
//!
//! ```text
//! cargo run --release --example attention_report
//! ```

use adamel::eval;
use adamel::features::{EmbeddingProvider, Featurizer};
use adamel::synth::{self, SynthConfig};
use adamel::training::{self, TrainConfig, TrainingSet, Variant};

fn main() -> adamel::Result<()> {
    let corpus = synth::generate(&SynthConfig::default())?;
    let config = TrainConfig {
        variant: Variant::Hyb,
        embed_dim: 32,
        latent_dim: 16,
        attention_dim: 16,
        hidden_dim: 16,
        epochs: 20,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let featurizer = Featurizer::new(
        corpus.schema.clone(),
        EmbeddingProvider::hashing(config.embed_dim, 0),
        config.crop,
        config.channels,
    );
    let source = training::featurize_labeled(&featurizer, &corpus.partitions.source, "source")?;
    let target = featurizer.featurize_all(&corpus.partitions.target)?;
    let support = training::featurize_labeled(&featurizer, &corpus.partitions.support, "support")?;
    let data = TrainingSet { source: &source, target: &target, support: &support };
    let params = training::train(&data, &config, |_| {})?.params;

    println!("mean attention on source pairs:");
    eval::attention_report(&params, &corpus.partitions.source, &featurizer, 5)?.write_tsv(std::io::stdout())?;
    println!("\nmean attention on target test pairs:");
    eval::attention_report(&params, &corpus.test, &featurizer, 5)?.write_tsv(std::io::stdout())?;

    println!("\ngenerator informativeness:");
    for (attr, w) in corpus.schema.attributes().iter().zip(&corpus.informativeness) {
        println!("  {attr}: {w}");
    }
    Ok(())
}
