use std::path::Path;

use hnet::cli::run_with_output;
use hnet::imaging::pnm;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_with_output(std::iter::once("hnet").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["train", "--scale", "huge", "--data", "x", "--out", "y"]).0, 1);
}

#[test]
fn missing_checkpoint_for_network_eval_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    assert_eq!(run(&["make-corpus", "--out", p(&corpus), "--count", "2", "--width", "80", "--height", "60"]).0, 0);
    assert_eq!(run(&["gen-data", "--corpus", p(&corpus), "--out", p(&data), "--count", "4", "--preset", "desk"]).0, 0);
    let report = dir.path().join("r.csv");
    assert_eq!(run(&["eval", "--data", p(&data), "--method", "net", "--out", p(&report)]).0, 1);
}

#[test]
fn desk_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    assert_eq!(run(&["--seed", "4", "make-corpus", "--out", p(&corpus), "--count", "6", "--width", "160", "--height", "120"]).0, 0);
    let (code, msg) = run(&["--seed", "4", "gen-data", "--corpus", p(&corpus), "--out", p(&data), "--count", "64", "--preset", "desk"]);
    assert_eq!(code, 0, "{msg}");
    assert!(msg.contains("wrote 64 pairs"));

    let (code, msg) = run(&[
        "train", "--data", p(&data), "--head", "cls", "--scale", "desk", "--iters", "3", "--batch", "8",
        "--checkpoint-every", "2", "--out", p(&runs),
    ]);
    assert_eq!(code, 0, "{msg}");
    let ckpt = runs.join("final.hnet");
    assert!(ckpt.exists() && runs.join("latest.hnet").exists() && runs.join("loss.csv").exists());

    let report = dir.path().join("net.csv");
    let (code, msg) = run(&["eval", "--data", p(&data), "--method", "net", "--ckpt", p(&ckpt), "--out", p(&report)]);
    assert_eq!(code, 0, "{msg}");
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 65);

    // A pair of 32 px images written from the first dataset record.
    let sample = hnet::datagen::load_dataset(&data).unwrap().next().unwrap().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    pnm::write_pgm(&a, &sample.patch_a).unwrap();
    pnm::write_pgm(&b, &sample.patch_b).unwrap();
    let grids = dir.path().join("conf");
    let (code, msg) = run(&["estimate", "--pair", p(&a), p(&b), "--ckpt", p(&ckpt), "--grids", p(&grids)]);
    assert_eq!(code, 0, "{msg}");
    let first = msg.lines().next().unwrap();
    assert_eq!(first.split_whitespace().filter(|s| s.parse::<f64>().is_ok()).count(), 8);
    assert!(dir.path().join("conf_corner4.pgm").exists());

    let img = dir.path().join("viz.ppm");
    let (code, msg) = run(&[
        "viz", "--data", p(&data), "--index", "3", "--methods", "identity,baseline,net", "--ckpt", p(&ckpt), "--out", p(&img),
    ]);
    assert_eq!(code, 0, "{msg}");
    assert!(img.exists());
    assert_eq!(run(&["viz", "--data", p(&data), "--index", "64", "--out", p(&img)]).0, 1);
}

#[test]
fn identical_flags_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_eq!(run(&["make-corpus", "--out", p(&corpus), "--count", "3", "--width", "80", "--height", "60"]).0, 0);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let data = dir.path().join(format!("data{k}"));
        let runs = dir.path().join(format!("runs{k}"));
        let report = dir.path().join(format!("baseline{k}.csv"));
        assert_eq!(run(&["--seed", "9", "gen-data", "--corpus", p(&corpus), "--out", p(&data), "--count", "16", "--preset", "desk"]).0, 0);
        assert_eq!(
            run(&["--seed", "9", "train", "--data", p(&data), "--scale", "desk", "--iters", "2", "--batch", "4", "--out", p(&runs)]).0,
            0
        );
        assert_eq!(run(&["--seed", "9", "eval", "--data", p(&data), "--method", "baseline", "--out", p(&report)]).0, 0);
        let read = |q: &Path| std::fs::read(q).unwrap();
        outputs.push((
            read(&data.join("samples.bin")),
            read(&data.join("manifest.json")),
            read(&runs.join("final.hnet")),
            read(&report),
        ));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn baseline_on_missing_files_is_a_runtime_error() {
    assert_eq!(run(&["baseline", "--pair", "/nonexistent/a.pgm", "/nonexistent/b.pgm"]).0, 2);
}
