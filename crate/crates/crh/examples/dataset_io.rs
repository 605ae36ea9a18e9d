//! File-format tour: generate a synthetic dataset, round-trip it through
//! the CRHF/CRHE/CRHC formats, and import a CSV.
//!
//! Run with: `cargo run --release --example dataset_io`

use std::io::Cursor;

use crh::code::{read_codebook, sample_codebook_unique, write_codebook};
use crh::data::{
    generate_synthetic, import_csv, read_dataset, read_embeddings, write_dataset, write_embeddings,
    Embeddings, SynthSpec,
};
use crh::seed::{SeedStreams, Stream};

fn main() -> crh::Result<()> {
    let spec = SynthSpec {
        classes: 6,
        superclasses: 2,
        dim: 8,
        samples_per_class: 10,
        rho: 0.2,
        seed: 5,
        ..SynthSpec::default()
    };
    let out = generate_synthetic(&spec)?;

    // dataset file
    let mut crhf = Vec::new();
    write_dataset(&out.dataset, &mut crhf)?;
    let dataset = read_dataset(&mut Cursor::new(&crhf))?;
    assert_eq!(dataset, out.dataset);
    println!(
        "CRHF: {} samples, dim {}, {} classes, single-label {} ({} bytes)",
        dataset.len(),
        dataset.dim(),
        dataset.classes(),
        dataset.is_single_label(),
        crhf.len()
    );

    // embedding file carrying the ground-truth prototypes per class
    let rows: Vec<f32> = out.prototypes.iter().flatten().map(|&v| v as f32).collect();
    let embeddings = Embeddings::new(spec.dim, rows)?;
    let mut crhe = Vec::new();
    write_embeddings(&embeddings, &mut crhe)?;
    let back = read_embeddings(&mut Cursor::new(&crhe), Some(spec.classes))?;
    assert_eq!(back, embeddings);
    println!(
        "CRHE: {} prototype rows of dim {} ({} bytes)",
        back.len(),
        back.dim(),
        crhe.len()
    );

    // codebook file
    let streams = SeedStreams::new(spec.seed);
    let codebook = sample_codebook_unique(16, 12, &mut streams.rng(Stream::Codebook))?;
    let mut crhc = Vec::new();
    write_codebook(&codebook, &mut crhc)?;
    let codebook_back = read_codebook(&mut Cursor::new(&crhc))?;
    assert_eq!(codebook_back, codebook);
    println!(
        "CRHC: {} codes of {} bits ({} bytes)",
        codebook.len(),
        codebook.bits(),
        crhc.len()
    );

    // CSV import: feature columns plus semicolon-separated label indices
    let csv = "0.25,1.5,0\n-1.0,0.5,1;2\n2.0,-0.75,2\n";
    let imported = import_csv(Cursor::new(csv), 3)?;
    println!(
        "CSV: imported {} samples, sample 1 carries labels {:?}",
        imported.len(),
        imported.label(1).iter().collect::<Vec<_>>()
    );
    Ok(())
}
