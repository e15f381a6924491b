//! Trains every variant on a synthetic corpus with missing values, a
//! target-only attribute and shifted token distributions, and prints the
//! test PRAUC averaged over seeds.
//!
//! ```text
//! cargo run --release --example domain_adaptation -- [synth.json] [train.json] [seeds]
//! ```

use adamel::eval::{self, PrMethod};
use adamel::features::{EmbeddingProvider, Featurizer};
use adamel::synth::{self, SynthConfig};
use adamel::training::{self, TrainConfig, TrainingSet, Variant};

fn read<T: serde::de::DeserializeOwned + Default>(path: Option<&String>) -> T {
    path.map(|p| serde_json::from_str(&std::fs::read_to_string(p).expect("readable config")).expect("valid config"))
        .unwrap_or_default()
}

fn main() -> adamel::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let synth_config: SynthConfig = read(args.first());
    let base: TrainConfig = match args.get(1) {
        Some(_) => read(args.get(1)),
        None => TrainConfig {
            embed_dim: 32,
            latent_dim: 16,
            attention_dim: 16,
            hidden_dim: 16,
            epochs: 20,
            learning_rate: 1e-3,
            ..Default::default()
        },
    };
    let seeds: u64 = args.get(2).map(|s| s.parse().expect("seed count")).unwrap_or(5);

    let runs: [(&str, Variant, f64); 5] = [
        ("base", Variant::Base, base.lambda),
        ("zero", Variant::Zero, base.lambda),
        ("zero(λ=1)", Variant::Zero, 1.0),
        ("few", Variant::Few, base.lambda),
        ("hyb", Variant::Hyb, base.lambda),
    ];
    let mut totals = vec![0.0; runs.len()];
    for seed in 0..seeds {
        let corpus = synth::generate(&SynthConfig { seed, ..synth_config.clone() })?;
        let featurizer = Featurizer::new(
            corpus.schema.clone(),
            EmbeddingProvider::hashing(base.embed_dim, 0),
            base.crop,
            base.channels,
        );
        let source = training::featurize_labeled(&featurizer, &corpus.partitions.source, "source")?;
        let target = featurizer.featurize_all(&corpus.partitions.target)?;
        let support = training::featurize_labeled(&featurizer, &corpus.partitions.support, "support")?;
        let test = featurizer.featurize_all(&corpus.test)?;
        let labels: Vec<bool> = corpus.test.iter().map(|p| p.label == Some(true)).collect();
        let data = TrainingSet { source: &source, target: &target, support: &support };

        let mut line = format!("seed {seed}:");
        for (i, (name, variant, lambda)) in runs.iter().enumerate() {
            let config = TrainConfig { variant: *variant, lambda: *lambda, seed, ..base.clone() };
            let outcome = training::train(&data, &config, |_| {})?;
            let scores = training::predict_features(&outcome.params, &test)?;
            let auc = eval::prauc(&scores, &labels, PrMethod::AveragePrecision)?.prauc;
            totals[i] += auc;
            line += &format!(" {name}={auc:.4}");
        }
        println!("{line}");
    }
    for ((name, _, _), total) in runs.iter().zip(&totals) {
        println!("mean {name:<10} {:.4}", total / seeds as f64);
    }
    Ok(())
}
