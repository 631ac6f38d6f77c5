//! Writes one patch pair per augmentation setting so their effect can be
//! inspected side by side.

use hnet::datagen::{synthetic, Corpus, GenConfig};
use hnet::imaging::{pnm, AugmentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("hnet_augment");
    std::fs::create_dir_all(&out)?;
    let images = synthetic::scenes(1, 320, 240, 4);
    let settings = [
        ("plain", AugmentConfig::default()),
        ("blur", AugmentConfig { blur_sigma: 1.5, ..Default::default() }),
        ("noise", AugmentConfig { noise_sigma: 0.05, ..Default::default() }),
        ("occlusion", AugmentConfig { occlusion_count: 3, ..Default::default() }),
    ];
    for (name, augment) in settings {
        let cfg = GenConfig { augment, ..GenConfig::train(9) };
        let corpus = Corpus::from_images(images.clone(), &cfg)?;
        // Same index and seed, so only the augmentation differs.
        let t = corpus.triplet(&cfg, 0)?;
        pnm::write_pgm(out.join(format!("{name}_a.pgm")), &t.patch_a)?;
        pnm::write_pgm(out.join(format!("{name}_b.pgm")), &t.patch_b)?;
        let label: Vec<String> = t.label.d.iter().map(|v| format!("{v:.1}")).collect();
        println!("{name:<10} label [{}]", label.join(", "));
    }
    println!("wrote pairs to {}", out.display());
    Ok(())
}
