mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use support::e2e;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    e2e::copy_tree(&fixtures(), dir.path());
    dir
}

fn mikani(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mikani"))
        .current_dir(dir)
        .env_remove("MIKANI_MODE")
        .env_remove("MIKANI_API_KEY")
        .args(["--config", "config.toml"])
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
#[ignore = "rewrites tests/fixtures/e2e"]
fn regenerate_fixtures() {
    let dir = fixtures();
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    e2e::generate(&dir);
}

#[test]
fn committed_fixtures_are_current() {
    let fresh = tempfile::tempdir().unwrap();
    e2e::generate(fresh.path());
    let files = e2e::list_files(fresh.path());
    assert_eq!(files, e2e::list_files(&fixtures()), "run the ignored regenerate_fixtures test");
    for f in files {
        assert_eq!(
            fs::read(fresh.path().join(&f)).unwrap(),
            fs::read(fixtures().join(&f)).unwrap(),
            "{f} is stale; run the ignored regenerate_fixtures test"
        );
    }
}

#[test]
fn annotate_matches_expected() {
    let dir = workdir();
    let out = stdout(&mikani(dir.path(), &["annotate", "--dataset", "dataset.jsonl", "--out", "pred.jsonl"]));
    assert!(out.contains("wrote 5 predictions"));
    assert_eq!(
        fs::read(dir.path().join("pred.jsonl")).unwrap(),
        fs::read(dir.path().join("expected_predictions.jsonl")).unwrap()
    );
}

#[test]
fn rfvm_only_flags_contradicted_year() {
    let dir = workdir();
    stdout(&mikani(dir.path(), &["annotate", "--dataset", "dataset.jsonl", "--out", "p.jsonl", "--rfvm-only"]));
    let preds = mikani_core::read_predictions(&dir.path().join("p.jsonl")).unwrap();
    let en = preds.iter().find(|p| p.id == "e2e-en-1").unwrap();
    assert_eq!(en.hard_labels, vec![mikani_core::HardSpan::new(37, 41)]);
    let fi = preds.iter().find(|p| p.id == "e2e-fi-1").unwrap();
    assert!(fi.soft_labels.is_empty() && fi.hard_labels.is_empty());
}

#[test]
fn verify_prints_words_and_writes_html() {
    let dir = workdir();
    let out = stdout(&mikani(
        dir.path(),
        &[
            "verify",
            "--question",
            "When was the Sydney Opera House opened?",
            "--answer",
            "The Sydney Opera House was opened in 1975. It was designed by Jørn Utzon.",
            "--html",
            "v.html",
        ],
    ));
    assert!(out.lines().any(|l| l.starts_with("1975 ") && l.ends_with(" 0.850")), "{out}");
    assert!(out.contains("[37, 41) \"1975\""), "{out}");
    let html = fs::read_to_string(dir.path().join("v.html")).unwrap();
    assert!(html.contains(">1975</span>") && html.contains("underline"));
}

#[test]
fn eval_baseline_and_predictions() {
    let dir = workdir();
    let out =
        stdout(&mikani(dir.path(), &["eval", "--gold", "dataset.jsonl", "--baseline", "mark-none", "--tsv", "r.tsv"]));
    assert!(out.contains("fi"), "{out}");
    assert!(fs::read_to_string(dir.path().join("r.tsv")).unwrap().lines().count() > 1);
    let out = stdout(&mikani(
        dir.path(),
        &["eval", "--gold", "dataset.jsonl", "--predictions", "expected_predictions.jsonl"],
    ));
    assert!(out.contains("en"), "{out}");
}

#[test]
fn stats_lists_pos_and_lang() {
    let dir = workdir();
    let out = stdout(&mikani(dir.path(), &["stats", "--dataset", "dataset.jsonl"]));
    assert!(out.contains("NUM") && out.contains("sv"), "{out}");
}

#[test]
fn cache_clear_keeps_transcripts() {
    let dir = workdir();
    let listed = stdout(&mikani(dir.path(), &["cache", "list"]));
    assert!(listed.contains("wiki pages: 5 entries"), "{listed}");
    let transcripts = fs::read_dir(dir.path().join("llm")).unwrap().count();
    stdout(&mikani(dir.path(), &["cache", "clear"]));
    assert_eq!(fs::read_dir(dir.path().join("wiki/pages")).unwrap().count(), 0);
    assert_eq!(fs::read_dir(dir.path().join("llm")).unwrap().count(), transcripts);
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn missing_sidecar_is_reported() {
    let dir = workdir();
    fs::write(dir.path().join("bare.toml"), "[llm]\nmode = \"replay\"\nfixtures_dir = \"llm\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mikani"))
        .current_dir(dir.path())
        .args(["--config", "bare.toml", "annotate", "--dataset", "dataset.jsonl", "--out", "p.jsonl"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sidecar"));
}

#[test]
fn unreachable_endpoint_exits_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    fs::write(dir.path().join("live.toml"), "[llm]\nmode = \"live\"\nmax_retries = 0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mikani"))
        .current_dir(dir.path())
        .env("MIKANI_LLM_ENDPOINT", format!("http://127.0.0.1:{port}/v1/chat/completions"))
        .env("MIKANI_WIKI_URL", format!("http://127.0.0.1:{port}/w/api.php"))
        .args(["--config", "live.toml", "verify", "--question", "Q?", "--answer", "An answer."])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}
