//! The feature baseline on one synthetic pair: FAST keypoints, oriented
//! binary descriptors, mutual matching, RANSAC, then an overlay image.

use hnet::classical::{run_baseline, BaselineConfig};
use hnet::datagen::{synthetic, Corpus, GenConfig};
use hnet::eval::{mace_sample, viz};
use hnet::rng::{stream_rng, streams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GenConfig::test(21);
    let corpus = Corpus::from_images(synthetic::scenes(3, 640, 480, 21), &cfg)?;
    let config = BaselineConfig::default();
    let mut total = 0.0;
    let n = 5;
    for i in 0..n {
        let t = corpus.triplet(&cfg, i)?;
        let r = run_baseline(&t.patch_a, &t.patch_b, &config, &mut stream_rng(0, streams::RANSAC, i));
        let err = mace_sample(&r.delta, &t.label);
        total += err;
        println!(
            "pair {i}: {} matches, {} inliers, estimated {}, corner error {err:.2} px (identity {:.2} px)",
            r.matches.len(),
            r.inliers.iter().filter(|&&k| k).count(),
            r.estimated,
            mace_sample(&hnet::geometry::FourPointDelta::ZERO, &t.label)
        );
        if i == 0 {
            let overlay = viz::Overlay { delta: r.delta, matches: r.matches };
            let path = std::env::temp_dir().join("hnet_baseline.ppm");
            viz::save(&viz::render(&t, &[overlay]), &path)?;
            println!("overlay written to {}", path.display());
        }
    }
    println!("mean corner error {:.2} px", total / n as f64);
    Ok(())
}
