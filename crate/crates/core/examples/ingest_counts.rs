//! Read counts to allele frequencies, then a three-strain reconstruction.

use std::path::Path;

use strainsolve::global::solve_global;
use strainsolve::io::{ingest_read_counts, parse_counts_file};
use strainsolve::NoiseModel;

fn main() -> strainsolve::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/counts16.tsv");
    let records = parse_counts_file(&path)?;
    let ingested = ingest_read_counts(&records, 10)?;
    println!("{} sites kept, {} dropped", ingested.kept.len(), ingested.dropped.len());

    let d = ingested.measurement.with_n(3)?;
    let noise = NoiseModel::uniform(d.data().len(), 2e-2)?;
    let rec = solve_global(&d, &noise, d.dims(), 1e-6, 1_000_000, None)?.incumbent;
    println!("w = {:.3?}, certified = {}", rec.weights.values(), rec.certified);
    for j in 0..3 {
        let barcode: String = rec.matrix.column(j).iter().map(|v| char::from(b'0' + v)).collect();
        println!("strain {}: {barcode}", j + 1);
    }
    Ok(())
}
