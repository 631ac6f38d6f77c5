//! Renders a small synthetic corpus, writes a pair dataset to disk, reads
//! it back and checks every label against its corners.
//!
//! Usage: generate_pairs [count] [out_dir]

use std::path::PathBuf;

use hnet::datagen::{generate_dataset, load_dataset, synthetic, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).map_or(Ok(1000), |s| s.parse())?;
    let root = args.get(2).map_or_else(|| std::env::temp_dir().join("hnet_pairs"), PathBuf::from);

    let corpus = root.join("corpus");
    synthetic::write_corpus(&corpus, 20, 320, 240, 11)?;
    let cfg = GenConfig::train(5);
    let manifest = generate_dataset(&corpus, &cfg, &root.join("train"), count)?;
    println!(
        "{} pairs of {} px, rho {}, {} bytes each",
        manifest.count,
        manifest.patch_size,
        manifest.rho,
        manifest.record_size()
    );

    let mut worst: f64 = 0.0;
    let mut largest: f64 = 0.0;
    for t in load_dataset(&root.join("train"))? {
        let t = t?;
        largest = largest.max(t.label.max_abs());
        // Frames are not stored on disk; the check runs in the patch's own frame.
        worst = worst.max(t.corner_consistency_error()?);
    }
    println!("largest offset {largest:.2} px (limit {}), corner check {worst:.1e} px", cfg.rho);
    println!("dataset in {}", root.join("train").display());
    Ok(())
}
