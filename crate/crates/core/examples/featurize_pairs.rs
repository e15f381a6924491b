//! Aligns two source schemas, builds contrastive shared/unique token sets
//! per attribute and embeds them.
//!
//! ```text
//! cargo run --example featurize_pairs
//! ```

use adamel::data::{self, EntityRecord, PairRecord};
use adamel::features::{self, EmbeddingProvider, FeatureChannels, Featurizer};

fn main() -> adamel::Result<()> {
    let schema = data::align_ontology(&[
        vec!["title", "artist"],
        vec!["title", "artist", "label"],
    ])?;
    println!("aligned schema: {:?}", schema.attributes());

    let left = EntityRecord::new("shop-a", &schema, [("title", "Blue in Green (Remastered)"), ("artist", "Miles Davis")])?;
    let right = EntityRecord::new(
        "shop-b",
        &schema,
        [("title", "Blue in Green"), ("artist", "Miles Davis Quintet"), ("label", "Columbia")],
    )?;
    let pair = PairRecord { pair_id: "p1".into(), left, right, label: Some(true) };

    for attr in schema.attributes() {
        let (shared, unique) = features::contrastive_features(pair.left.value(attr), pair.right.value(attr));
        println!("{attr:>7}: shared={shared:?} unique={unique:?}");
    }

    let featurizer = Featurizer::new(schema, EmbeddingProvider::hashing(8, 0), features::DEFAULT_CROP, FeatureChannels::Both);
    let h = featurizer.featurize(&pair)?;
    println!("\n{} features × {} dims", h.features, h.dim);
    for (j, name) in featurizer.feature_names().iter().enumerate() {
        let row: Vec<String> = h.row(j).iter().map(|v| format!("{v:+.2}")).collect();
        let note = if h.missing_mask[j] { " (sentinel)" } else { "" };
        println!("{name:>14}: [{}]{note}", row.join(", "));
    }
    Ok(())
}
