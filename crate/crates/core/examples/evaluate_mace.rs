//! Scores the identity estimator and the feature baseline on a synthetic
//! 256 px test set, and a trained network when a checkpoint is given.
//!
//! Usage: evaluate_mace [samples] [checkpoint.hnet]

use hnet::classical::BaselineConfig;
use hnet::datagen::{synthetic, Corpus, GenConfig};
use hnet::eval::{build_test_set, evaluate_triplets, Method, IDENTITY_MACE_FACTOR};
use hnet::nn::checkpoint::Checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let corpus = Corpus::from_images(synthetic::scenes(10, 640, 480, 33), &GenConfig::test(0))?;
    let set = build_test_set(&corpus, n, 1)?;

    let mut methods = vec![
        Method::Identity,
        Method::Baseline {
            config: BaselineConfig::default(),
            seed: 0,
        },
    ];
    if let Some(p) = args.get(2) {
        methods.push(Method::Network(Box::new(Checkpoint::load(p.as_ref())?.net)));
    }
    println!("expected identity MACE {:.2} px", 64.0 * IDENTITY_MACE_FACTOR);
    for m in &methods {
        let rec = evaluate_triplets(m, &set)?;
        println!("{:<9} MACE {:>6.2} px over {} samples", rec.method, rec.mace, set.len());
    }
    Ok(())
}
