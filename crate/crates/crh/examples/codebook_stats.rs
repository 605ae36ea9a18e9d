//! Codebook sampling strategies compared: Bernoulli sampling (duplicates
//! possible at small bit widths) versus unique-uniform sampling, with
//! separation statistics and the head-capacity bound.
//!
//! Run with: `cargo run --release --example codebook_stats`

use crh::code::{
    codebook_distance_stats, max_heads, sample_codebook_bernoulli, sample_codebook_unique,
};
use crh::seed::{SeedStreams, Stream};

fn main() -> crh::Result<()> {
    let streams = SeedStreams::new(42);

    println!("Bernoulli sampling duplicates (m = 100 codes):");
    for k in [2, 4, 8, 16, 32] {
        let sample = sample_codebook_bernoulli(k, 100, &mut streams.rng(Stream::Codebook))?;
        println!("  k = {k:2}: {} duplicate pairs", sample.duplicates.len());
    }

    println!("\nSeparation of a unique-uniform codebook (mean should sit near k/2):");
    for (k, m) in [(16, 64), (32, 200), (64, 1000)] {
        let codebook = sample_codebook_unique(k, m, &mut streams.rng(Stream::Codebook))?;
        let stats = codebook_distance_stats(codebook.codes())?;
        println!(
            "  k = {k:2}, m = {m:4}: d_min {:2}, d_avg {:.3} (exact {}/{})",
            stats.d_min,
            stats.d_avg(),
            stats.sum,
            stats.pairs
        );
    }

    println!("\nHead capacity: largest H with collision-free d-bit sub-codebooks:");
    for (k, m) in [(64, 16), (64, 392), (32, 160), (16, 32)] {
        println!("  k = {k:2}, m = {m:3}: H <= {}", max_heads(k, m)?);
    }
    Ok(())
}
