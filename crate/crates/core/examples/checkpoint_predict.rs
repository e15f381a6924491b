//! Trains a small model, saves a checkpoint, reloads it and scores target
//! pairs with the reloaded parameters.
//!
//! ```text
//! cargo run --release --example checkpoint_predict
//! ```

use adamel::features::{EmbeddingProvider, Featurizer};
use adamel::model::Checkpoint;
use adamel::synth::{self, SynthConfig};
use adamel::training::{self, TrainConfig};

fn main() -> adamel::Result<()> {
    let corpus = synth::generate(&SynthConfig { n_source_pairs: 200, ..Default::default() })?;
    let config = TrainConfig {
        embed_dim: 16,
        latent_dim: 8,
        attention_dim: 8,
        hidden_dim: 8,
        epochs: 10,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let provider = EmbeddingProvider::hashing(config.embed_dim, 0);
    let featurizer = Featurizer::new(corpus.schema.clone(), provider.clone(), config.crop, config.channels);
    let source = training::featurize_labeled(&featurizer, &corpus.partitions.source, "source")?;
    let outcome = training::train_base(&source, &config)?;
    for e in &outcome.trace {
        println!("epoch {:>2}: loss {:.4}", e.epoch, e.total);
    }

    let dir = std::env::temp_dir().join("adamel-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    Checkpoint::new(&outcome.params, &corpus.schema, config.channels, config.crop, provider.fingerprint()).write(&path)?;

    let loaded = Checkpoint::read(&path)?;
    let params = loaded.params()?;
    assert_eq!(params, outcome.params);
    let featurizer = Featurizer::with_expected_dim(loaded.schema.clone(), provider, loaded.crop, loaded.channels, loaded.dims.embed)?;
    for p in training::predict(&params, &corpus.test[..5], &featurizer)? {
        println!("{}: {:.3}", p.pair_id, p.score);
    }
    Ok(())
}
