//! Generates a synthetic multi-source corpus, prints the per-attribute
//! completeness table and writes the files to a directory.
//!
//! ```text
//! cargo run --example synth_corpus -- [out_dir]
//! ```

use adamel::synth::{self, SynthConfig};

fn main() -> adamel::Result<()> {
    let config = SynthConfig::default();
    let corpus = synth::generate(&config)?;
    let p = &corpus.partitions;
    println!(
        "source {} / target {} / support {} / test {} pairs",
        p.source.len(),
        p.target.len(),
        p.support.len(),
        corpus.test.len()
    );
    println!("\npairs with both values present:");
    synth::write_stats_tsv(std::io::stdout(), &synth::corpus_stats(&corpus))?;

    println!("\nground-truth informativeness:");
    for (attr, w) in corpus.schema.attributes().iter().zip(&corpus.informativeness) {
        println!("  {attr}: {w}");
    }

    if let Some(dir) = std::env::args().nth(1) {
        let manifest = synth::write_corpus(&corpus, &config, &dir)?;
        println!("\nwrote {}", manifest.display());
    }
    Ok(())
}
