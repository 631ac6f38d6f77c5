//! The classification head: per-coordinate bin distributions, the argmax
//! decode, and the 21x21 confidence grid of each corner.
//!
//! Usage: classify_confidence [checkpoint.hnet]
//! Without a checkpoint a desk-scale network is trained briefly first.

use hnet::datagen::{synthetic, Corpus, GenConfig, PairSet};
use hnet::eval::{mace_sample, viz};
use hnet::nn::checkpoint::Checkpoint;
use hnet::nn::train::{TrainConfig, Trainer};
use hnet::nn::{homography_net, Head, Network, Scale};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GenConfig::desk(1);
    let net = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(p.as_ref())?.net,
        None => {
            let corpus = Corpus::from_images(synthetic::scenes(200, 160, 120, 1), &cfg)?;
            let data = PairSet::generate(&corpus, &cfg, 0..4000)?;
            let mut tc = TrainConfig::desk_for(Head::Classification { rho: cfg.rho }, 3);
            tc.total_iters = 800;
            let net = Network::new(homography_net(Head::Classification { rho: cfg.rho }, &Scale::Desk)?, 3)?;
            let mut trainer = Trainer::new(net, tc)?;
            let curve = trainer.run(&data, None)?;
            println!("trained {} iterations, last loss {:.3}", trainer.iteration, curve.last().map_or(f64::NAN, |p| p.loss));
            trainer.net
        }
    };

    let test = Corpus::from_images(synthetic::scenes(5, 160, 120, 2), &cfg)?.triplet(&GenConfig::desk(2), 0)?;
    let pred = net.predict(&test.patch_a, &test.patch_b)?;
    let decoded = pred.decoded.as_ref().ok_or("checkpoint has a regression head")?;
    for (k, conf) in decoded.confidences.iter().enumerate() {
        let best = conf.iter().cloned().fold(0.0, f64::max);
        println!(
            "coordinate {k}: truth {:>6.2}, decoded {:>6.2}, peak confidence {best:.2}",
            test.label.d[k], pred.delta.d[k]
        );
    }
    println!("corner error {:.2} px", mace_sample(&pred.delta, &test.label));
    let stem = std::env::temp_dir().join("hnet_confidence");
    for p in viz::write_confidence_grids(decoded, &stem)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
