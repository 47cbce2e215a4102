//! End-to-end subcommand tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hiergram"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

/// Full binary hierarchy TSV of the given depth with names n00, n01, ...
fn hierarchy_tsv(depth: usize) -> String {
    let n = (1usize << (depth + 1)) - 1;
    let mut out = String::new();
    let depth_of = |mut i: usize| {
        let mut d = 0;
        while i > 0 {
            i = (i - 1) / 2;
            d += 1;
        }
        d
    };
    for i in 0..n {
        let parent = if i == 0 {
            String::new()
        } else {
            format!("n{:02}", (i - 1) / 2)
        };
        out.push_str(&format!("n{:02}\t{}\t{}\n", i, parent, depth_of(i)));
    }
    out
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

#[test]
fn count_is_deterministic_and_byte_stable() {
    let ws = Workspace::new();
    write(
        &ws.path("vocab.txt"),
        "tree\nplant\nbird\nanimal\nfish\nflower\n",
    );
    write(
        &ws.path("corpus.txt"),
        "the tree is a plant and the bird is an animal\n\
         fish and bird are animal kinds while tree and flower are plant kinds\n\
         a flower is a plant\n",
    );
    for output in ["c1.hgc", "c2.hgc"] {
        let out = run(&[
            "count",
            "--corpus",
            &ws.arg("corpus.txt"),
            "--vocab-file",
            &ws.arg("vocab.txt"),
            "--window",
            "4",
            "--min-article-tokens",
            "2",
            "--output",
            &ws.arg(output),
        ]);
        assert_success(&out);
        let echo = String::from_utf8_lossy(&out.stdout);
        assert!(echo.contains("\"config\""), "config echoed: {echo}");
    }
    let a = fs::read(ws.path("c1.hgc")).unwrap();
    let b = fs::read(ws.path("c2.hgc")).unwrap();
    assert_eq!(a, b);
    assert_eq!(&a[..4], b"HGC1");
}

#[test]
fn count_rejects_empty_corpus() {
    let ws = Workspace::new();
    write(&ws.path("vocab.txt"), "alpha\n");
    write(&ws.path("corpus.txt"), "nothing matches here\n");
    let out = run(&[
        "count",
        "--corpus",
        &ws.arg("corpus.txt"),
        "--vocab-file",
        &ws.arg("vocab.txt"),
        "--min-article-tokens",
        "1",
        "--output",
        &ws.arg("c.hgc"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn corpus_directory_input() {
    let ws = Workspace::new();
    write(&ws.path("vocab.txt"), "ant\nbee\n");
    fs::create_dir(ws.path("articles")).unwrap();
    write(&ws.path("articles/a.txt"), "ant bee ant");
    write(&ws.path("articles/b.txt"), "bee bee ant");
    let out = run(&[
        "count",
        "--corpus-dir",
        &ws.arg("articles"),
        "--vocab-file",
        &ws.arg("vocab.txt"),
        "--window",
        "2",
        "--min-article-tokens",
        "2",
        "--output",
        &ws.arg("c.hgc"),
    ]);
    assert_success(&out);
}

#[test]
fn synthetic_pipeline_recovers_planted_kernel() {
    let ws = Workspace::new();
    write(&ws.path("hier.tsv"), &hierarchy_tsv(4)); // 31 nodes
    let out = run(&[
        "synth-corpus",
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--alpha",
        "0.5",
        "--beta",
        "0.8",
        "--pairs",
        "3000000",
        "--seed",
        "11",
        "--output",
        &ws.arg("counts.hgc"),
    ]);
    assert_success(&out);

    let out = run(&[
        "fit-kernel",
        "--counts",
        &ws.arg("counts.hgc"),
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--pairs-per-distance",
        "2000",
        "--seed",
        "3",
        "--kernel-out",
        &ws.arg("kernel.json"),
        "--decay-out",
        &ws.arg("fig2_decay.csv"),
    ]);
    assert_success(&out);
    let fitted: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("kernel.json")).unwrap()).unwrap();
    let beta = fitted["kernel"]["beta"].as_f64().unwrap();
    assert!((beta - 0.8).abs() / 0.8 < 0.15, "beta = {beta}");
    let decay = fs::read_to_string(ws.path("fig2_decay.csv")).unwrap();
    assert!(decay.starts_with("# config: "));
    assert!(decay.contains("d,mean,se,n_eff,n_raw"));

    // mstar view over a leaf pair plus root
    write(&ws.path("subset.txt"), "n00\nn01\nn02\n");
    let out = run(&[
        "mstar",
        "--counts",
        &ws.arg("counts.hgc"),
        "--tokens",
        &ws.arg("subset.txt"),
        "--output",
        &ws.arg("view.json"),
    ]);
    assert_success(&out);
    let view: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("view.json")).unwrap()).unwrap();
    let m01 = view["matrix"][0][1].as_f64().unwrap();
    assert!((m01 - 0.5 * (-0.8f64).exp()).abs() < 0.05, "m01 = {m01}");

    // embeddings over all nodes, then the sweep
    let node_names: Vec<String> = (0..31).map(|i| format!("n{:02}", i)).collect();
    write(&ws.path("nodes.txt"), &(node_names.join("\n") + "\n"));
    let out = run(&[
        "embed",
        "--counts",
        &ws.arg("counts.hgc"),
        "--tokens",
        &ws.arg("nodes.txt"),
        "--dim",
        "2048",
        "--output",
        &ws.arg("emb.hge"),
    ]);
    assert_success(&out);
    let emb = fs::read(ws.path("emb.hge")).unwrap();
    assert_eq!(&emb[..4], b"HGE1");

    // the wrapped fit output feeds straight into the sweep
    let out = run(&[
        "root-sweep",
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--emb",
        &ws.arg("emb.hge"),
        "--kernel",
        &ws.arg("kernel.json"),
        "--trees-per-root",
        "3",
        "--baseline-repeats",
        "4",
        "--depth",
        "3",
        "--seed",
        "5",
        "--out-dir",
        &ws.arg("sweep"),
    ]);
    assert_success(&out);
    let alignment = fs::read_to_string(ws.path("sweep/fig4_alignment.csv")).unwrap();
    assert!(alignment.starts_with("# config: "));
    assert!(alignment.lines().count() > 15);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("sweep/sweep_summary.json")).unwrap())
            .unwrap();
    let area = summary["summary"]["area_emp"]["mean"].as_f64().unwrap();
    let global = summary["summary"]["area_global"]["mean"].as_f64().unwrap();
    assert!(area > global, "area {area} vs global {global}");

    // lca-conditioned decay table
    let out = run(&[
        "lca-decay",
        "--counts",
        &ws.arg("counts.hgc"),
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--depth",
        "3",
        "--trees-per-root",
        "2",
        "--seed",
        "5",
        "--output",
        &ws.arg("fig6_lca.csv"),
    ]);
    assert_success(&out);
    let lca = fs::read_to_string(ws.path("fig6_lca.csv")).unwrap();
    assert!(lca.contains("d,lca_depth,mean,roots,pairs"));

    // concept diagnostics on the embeddings (full descendant sets)
    let out = run(&[
        "concept-diag",
        "--emb",
        &ws.arg("emb.hge"),
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--train-fraction",
        "1.0",
        "--repeats",
        "2",
        "--seed",
        "7",
        "--output",
        &ws.arg("fig5_cosines.csv"),
    ]);
    assert_success(&out);
    let cosines = fs::read_to_string(ws.path("fig5_cosines.csv")).unwrap();
    assert!(cosines.contains(",true,"));
    assert!(cosines.contains(",shuffled,"));
}

#[test]
fn hierarchy_build_and_contract() {
    let ws = Workspace::new();
    write(
        &ws.path("edges.tsv"),
        "b\ta\nc\ta\nd\tb\nd\tc\ne\td\n", // diamond: d picks the deeper/lexicographic parent
    );
    let out = run(&[
        "hierarchy-build",
        "--edges",
        &ws.arg("edges.tsv"),
        "--root",
        "a",
        "--output",
        &ws.arg("arbor.tsv"),
    ]);
    assert_success(&out);
    let arbor = fs::read_to_string(ws.path("arbor.tsv")).unwrap();
    assert!(arbor.contains("d\tb\t2")); // tie at depth 2 broken toward "b"

    write(&ws.path("eligible.txt"), "a\nb\ne\n");
    let out = run(&[
        "hierarchy-contract",
        "--arbor",
        &ws.arg("arbor.tsv"),
        "--eligible",
        &ws.arg("eligible.txt"),
        "--output",
        &ws.arg("contracted.tsv"),
    ]);
    assert_success(&out);
    let contracted = fs::read_to_string(ws.path("contracted.tsv")).unwrap();
    assert!(contracted.contains("e\tb\t2")); // d contracted out of the chain

    let out = run(&[
        "sample-trees",
        "--hierarchy",
        &ws.arg("contracted.tsv"),
        "--depth",
        "1",
        "--count",
        "2",
        "--seed",
        "1",
        "--output",
        &ws.arg("trees.json"),
    ]);
    assert_eq!(out.status.code(), Some(1)); // no node has two children
}

#[test]
fn sample_trees_counts_and_structures() {
    let ws = Workspace::new();
    write(&ws.path("hier.tsv"), &hierarchy_tsv(3));
    let out = run(&[
        "sample-trees",
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--root",
        "n00",
        "--depth",
        "3",
        "--count",
        "2",
        "--seed",
        "2",
        "--output",
        &ws.arg("trees.json"),
    ]);
    assert_success(&out);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("trees.json")).unwrap()).unwrap();
    assert_eq!(json["roots"][0]["structures"], 1.0);
    assert_eq!(json["roots"][0]["trees"][0].as_array().unwrap().len(), 15);
}

#[test]
fn align_exports_eigenvectors() {
    let ws = Workspace::new();
    write(&ws.path("hier.tsv"), &hierarchy_tsv(3));
    write(&ws.path("spec.json"), r#"{"family":"exponential","alpha":1.0,"beta":1.0}"#);
    let out = run(&[
        "synth-corpus",
        "--hierarchy",
        &ws.arg("hier.tsv"),
        "--alpha",
        "0.5",
        "--beta",
        "0.8",
        "--pairs",
        "500000",
        "--seed",
        "4",
        "--output",
        &ws.arg("counts.hgc"),
    ]);
    assert_success(&out);
    let names: Vec<String> = (0..15).map(|i| format!("n{:02}", i)).collect();
    write(&ws.path("nodes.txt"), &(names.join("\n") + "\n"));
    let out = run(&[
        "embed",
        "--counts",
        &ws.arg("counts.hgc"),
        "--tokens",
        &ws.arg("nodes.txt"),
        "--output",
        &ws.arg("emb.hge"),
    ]);
    assert_success(&out);
    let out = run(&[
        "align",
        "--emb",
        &ws.arg("emb.hge"),
        "--tree-nodes",
        &ws.arg("nodes.txt"),
        "--kernel",
        &ws.arg("spec.json"),
        "--output",
        &ws.arg("fig3_eigvecs.json"),
    ]);
    assert_success(&out);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("fig3_eigvecs.json")).unwrap()).unwrap();
    assert_eq!(json["alignment"]["g"].as_array().unwrap().len(), 15);
    assert_eq!(json["theory"]["eigenvalues"].as_array().unwrap().len(), 15);
    assert!(json["alignment"]["area"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_theory_exit_codes() {
    let ws = Workspace::new();
    write(
        &ws.path("good.json"),
        r#"{"family":"exponential","alpha":1.967,"beta":1.235}"#,
    );
    let out = run(&[
        "verify-theory",
        "--kernel",
        &ws.arg("good.json"),
        "--branching",
        "2",
        "--depth",
        "3",
        "--output",
        &ws.arg("report.json"),
    ]);
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("coarse-to-fine") && text.contains("PASS"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["perron_top"]["pass"], true);

    // an increasing kernel breaks the decreasing-f assumption: exit code 2
    write(
        &ws.path("bad.json"),
        r#"{"family":"tabulated","values":[0.1,0.2,0.4,0.8,1.6,3.2,6.4]}"#,
    );
    let out = run(&[
        "verify-theory",
        "--kernel",
        &ws.arg("bad.json"),
        "--branching",
        "2",
        "--depth",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn config_file_with_flag_overrides() {
    let ws = Workspace::new();
    write(&ws.path("config.toml"), "window = 2\nmin_article_tokens = 1\n");
    write(&ws.path("vocab.txt"), "ant\nbee\n");
    write(&ws.path("corpus.txt"), "ant bee\n");
    let out = run(&[
        "--config",
        &ws.arg("config.toml"),
        "count",
        "--corpus",
        &ws.arg("corpus.txt"),
        "--vocab-file",
        &ws.arg("vocab.txt"),
        "--output",
        &ws.arg("c.hgc"),
    ]);
    assert_success(&out);
    let echo = String::from_utf8_lossy(&out.stdout);
    assert!(echo.contains("\"window\":2"));
    // flag wins over the file
    let out = run(&[
        "--config",
        &ws.arg("config.toml"),
        "count",
        "--corpus",
        &ws.arg("corpus.txt"),
        "--vocab-file",
        &ws.arg("vocab.txt"),
        "--window",
        "3",
        "--output",
        &ws.arg("c2.hgc"),
    ]);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"window\":3"));
    // bad config key is an input error
    write(&ws.path("bad.toml"), "not_a_field = 1\n");
    let out = run(&[
        "--config",
        &ws.arg("bad.toml"),
        "count",
        "--corpus",
        &ws.arg("corpus.txt"),
        "--vocab-file",
        &ws.arg("vocab.txt"),
        "--output",
        &ws.arg("c3.hgc"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
