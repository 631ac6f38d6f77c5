//! Trains a desk-scale HomographyNet on synthetic scenes and reports the
//! held-out corner error against the identity estimator.
//!
//! Usage: train_desk [reg|cls] [iterations] [pairs] [checkpoint_out] [lr]

use std::time::Instant;

use hnet::datagen::{synthetic, Corpus, GenConfig, PairSet};
use hnet::eval::{evaluate_triplets, Method};
use hnet::nn::train::{smoothed, TrainConfig, Trainer};
use hnet::nn::{homography_net, Head, Network, Scale};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let cfg = GenConfig::desk(1);
    let head = match args.get(1).map(String::as_str) {
        Some("cls") => Head::Classification { rho: cfg.rho },
        _ => Head::Regression,
    };
    let mut tc = TrainConfig::desk_for(head, 3);
    tc.total_iters = args.get(2).map_or(Ok(tc.total_iters), |s| s.parse())?;
    let pairs: u64 = args.get(3).map_or(Ok(10_000), |s| s.parse())?;
    tc.lr0 = args.get(5).map_or(Ok(tc.lr0), |s| s.parse())?;

    // Training and test pairs come from disjoint sets of scenes.
    let t0 = Instant::now();
    let train_corpus = Corpus::from_images(synthetic::scenes(500, 160, 120, 1), &cfg)?;
    let train = PairSet::generate(&train_corpus, &cfg, 0..pairs)?;
    let test_cfg = GenConfig::desk(2);
    let test = Corpus::from_images(synthetic::scenes(100, 160, 120, 2), &test_cfg)?.triplets(&test_cfg, 0..1000)?;
    println!("{pairs} training pairs ready in {:.1}s", t0.elapsed().as_secs_f64());

    let net = Network::new(homography_net(head, &Scale::Desk)?, 3)?;
    let mut trainer = Trainer::new(net, tc)?;
    let t1 = Instant::now();
    let curve = trainer.run(&train, None)?;
    println!("trained {} iterations in {:.1}s", trainer.iteration, t1.elapsed().as_secs_f64());
    let blocks: Vec<String> = smoothed(&curve, (curve.len() / 10).max(1)).iter().map(|v| format!("{v:.3}")).collect();
    println!("loss by tenth: {}", blocks.join(" "));

    if let Some(p) = args.get(4).filter(|p| *p != "-") {
        trainer.checkpoint().save(p.as_ref())?;
        println!("saved {p}");
    }
    let net = evaluate_triplets(&Method::Network(Box::new(trainer.net)), &test)?;
    let identity = evaluate_triplets(&Method::Identity, &test)?;
    println!("held-out MACE {:.3} px, identity {:.3} px", net.mace, identity.mace);
    Ok(())
}
