#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::ToyTask;

fn regir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regir"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("REGIR_THREADS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = regir(dir, args);
    assert!(
        out.status.success(),
        "regir {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn staged_pipeline_matches_its_parts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ToyTask::write(d);
    ok(
        d,
        &[
            "ingest",
            "--input",
            "queries.jsonl",
            "--tag",
            "eu",
            "--out",
            "q.jsonl",
        ],
    );
    ok(
        d,
        &[
            "ingest",
            "--input",
            "pool.jsonl",
            "--tag",
            "uk",
            "--out",
            "p.jsonl",
        ],
    );
    ok(
        d,
        &[
            "index",
            "--collection",
            "p.jsonl",
            "--stopwords",
            "stopwords.txt",
            "--out",
            "index.bin",
        ],
    );
    ok(
        d,
        &[
            "tune-bm25",
            "--index",
            "index.bin",
            "--queries",
            "q.jsonl",
            "--splits",
            "splits.json",
            "--split",
            "dev",
            "--qrels",
            "qrels.tsv",
            "--k",
            "10",
            "--k1-grid",
            "0.5,1.0",
            "--b-grid",
            "0.5,1.0",
            "--out",
            "grid.csv",
        ],
    );
    let grid = fs::read_to_string(d.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("k1,b,recall_at_k"));
    assert_eq!(grid.lines().count(), 5);

    for split in ["train", "dev", "test"] {
        ok(
            d,
            &[
                "prefetch",
                "--mode",
                "bm25",
                "--index",
                "index.bin",
                "--queries",
                "q.jsonl",
                "--splits",
                "splits.json",
                "--split",
                split,
                "--k",
                "10",
                "--out",
                &format!("{split}.run"),
            ],
        );
    }
    ok(
        d,
        &[
            "prefetch",
            "--mode",
            "w2v-cent",
            "--index",
            "index.bin",
            "--queries",
            "q.jsonl",
            "--pool",
            "p.jsonl",
            "--splits",
            "splits.json",
            "--split",
            "test",
            "--word-vectors",
            "vectors.txt",
            "--k",
            "10",
            "--out",
            "cent.run",
        ],
    );
    ok(
        d,
        &[
            "fuse",
            "--a",
            "test.run",
            "--b",
            "cent.run",
            "--alpha",
            "0.5",
            "--k",
            "10",
            "--out",
            "fused.run",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--model",
            "drmm",
            "--index",
            "index.bin",
            "--queries",
            "q.jsonl",
            "--pool",
            "p.jsonl",
            "--word-vectors",
            "vectors.txt",
            "--train-run",
            "train.run",
            "--dev-run",
            "dev.run",
            "--qrels",
            "qrels.tsv",
            "--hyperparams",
            "hyper.txt",
            "--seed",
            "5",
            "--k",
            "10",
            "--log",
            "train.csv",
            "--out",
            "drmm.ckpt",
        ],
    );
    assert!(fs::read_to_string(d.join("train.csv"))
        .unwrap()
        .starts_with("epoch,train_loss,dev_r20,w_r,w_p"));
    ok(
        d,
        &[
            "rerank",
            "--checkpoint",
            "drmm.ckpt",
            "--index",
            "index.bin",
            "--queries",
            "q.jsonl",
            "--pool",
            "p.jsonl",
            "--word-vectors",
            "vectors.txt",
            "--run",
            "test.run",
            "--k",
            "10",
            "--out",
            "reranked.run",
        ],
    );
    ok(
        d,
        &[
            "date-filter",
            "--run",
            "reranked.run",
            "--queries",
            "q.jsonl",
            "--pool",
            "p.jsonl",
            "--date-filter",
            "5",
            "--out",
            "dated.run",
        ],
    );
    for run in ["test", "fused", "reranked", "dated"] {
        ok(
            d,
            &[
                "evaluate",
                "--run",
                &format!("{run}.run"),
                "--qrels",
                "qrels.tsv",
                "--k",
                "5,10",
                "--out",
                run,
            ],
        );
        assert!(d.join(run).join("eval_at10.csv").is_file());
    }

    // reranking keeps each list's documents, only the order may change
    let docs = |name: &str| {
        let mut v: Vec<String> = fs::read_to_string(d.join(name))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| {
                let c: Vec<&str> = l.split_whitespace().collect();
                format!("{} {}", c[0], c[2])
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(docs("test.run"), docs("reranked.run"));
    let report = ok(
        d,
        &["report", "reranked/eval_at10.csv", "test/eval_at10.csv"],
    );
    assert!(report.contains("R@10"), "{report}");
    assert!(report.contains("(±"), "{report}");
}

#[test]
fn run_subcommand_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let task = ToyTask::write(tmp.path());
    let cfg = task.config("run.conf", "prefetch.k = 10\nbm25.tune = false\n");
    let stdout = ok(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert!(stdout.contains("outputs"), "{stdout}");
    assert!(tmp.path().join("out/manifest.json").is_file());
}

#[test]
fn bad_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = regir(
        tmp.path(),
        &["index", "--collection", "missing.jsonl", "--out", "i.bin"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    let out = regir(tmp.path(), &["prefetch", "--mode", "nope"]);
    assert!(!out.status.success());
}
