//! Library-level flows across modules.

use hnet::classical::BaselineConfig;
use hnet::datagen::{synthetic, Corpus, GenConfig, PairSet};
use hnet::eval::{evaluate_dir, evaluate_triplets, write_test_set, Method};
use hnet::geometry::FourPointDelta;
use hnet::nn::checkpoint::Checkpoint;
use hnet::nn::train::{TrainConfig, Trainer};
use hnet::nn::{homography_net, Head, Network, Scale};

#[test]
fn disk_and_memory_evaluation_agree() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    synthetic::write_corpus(&corpus_dir, 3, 640, 480, 2).unwrap();
    write_test_set(&corpus_dir, &dir.path().join("test"), 20, 6).unwrap();

    let corpus = Corpus::from_dir(&corpus_dir, &GenConfig::test(6)).unwrap();
    let memory = corpus.triplets(&GenConfig::test(6), 0..20).unwrap();
    let method = Method::Baseline {
        config: BaselineConfig::default(),
        seed: 1,
    };
    let a = evaluate_dir(&method, &dir.path().join("test")).unwrap();
    let b = evaluate_triplets(&method, &memory).unwrap();
    // Disk records are quantized to bytes, so only the identity must match exactly.
    assert_eq!(a.corner_errors.len(), b.corner_errors.len());
    let ia = evaluate_dir(&Method::Identity, &dir.path().join("test")).unwrap();
    let ib = evaluate_triplets(&Method::Identity, &memory).unwrap();
    assert!((ia.mace - ib.mace).abs() < 1e-5);
    // Same seed, same baseline answers.
    assert_eq!(a, evaluate_dir(&method, &dir.path().join("test")).unwrap());
}

#[test]
fn checkpoint_predictions_survive_a_round_trip() {
    let cfg = GenConfig::desk(0);
    let corpus = Corpus::from_images(synthetic::scenes(4, 80, 60, 0), &cfg).unwrap();
    let data = PairSet::generate(&corpus, &cfg, 0..32).unwrap();
    let mut tc = TrainConfig::desk(0);
    tc.total_iters = 2;
    tc.batch = 8;
    let net = Network::new(homography_net(Head::Regression, &Scale::Desk).unwrap(), 0).unwrap();
    let mut trainer = Trainer::new(net, tc).unwrap();
    trainer.run(&data, None).unwrap();
    let bytes = trainer.checkpoint().to_bytes().unwrap();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    let t = corpus.triplet(&cfg, 100).unwrap();
    let p1 = trainer.net.predict(&t.patch_a, &t.patch_b).unwrap();
    let p2 = restored.net.predict(&t.patch_a, &t.patch_b).unwrap();
    assert_eq!(p1.delta, p2.delta);
    assert_ne!(p1.delta, FourPointDelta::ZERO);
}

#[test]
fn short_desk_run_reduces_the_loss() {
    let cfg = GenConfig::desk(12);
    let corpus = Corpus::from_images(synthetic::scenes(32, 160, 120, 12), &cfg).unwrap();
    let data = PairSet::generate(&corpus, &cfg, 0..512).unwrap();
    let mut tc = TrainConfig::desk(12);
    tc.total_iters = 200;
    let net = Network::new(homography_net(Head::Regression, &Scale::Desk).unwrap(), 12).unwrap();
    let mut trainer = Trainer::new(net, tc).unwrap();
    let curve = trainer.run(&data, None).unwrap();
    let mean = |s: &[hnet::nn::train::LossPoint]| s.iter().map(|p| p.loss).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&curve[..20]), mean(&curve[180..]));
    assert!(last < first, "{first} -> {last}");
}
