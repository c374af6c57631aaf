//! Black-box tests of the `slantscope` binary: exit codes, error reporting,
//! and agreement with the frozen fixture outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("workspace root")
        .to_owned()
}

fn slantscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slantscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = slantscope(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Config that scores the fixture corpora; paths are absolute so the file
/// can live in a temp dir.
fn fixture_config(out_dir: &Path) -> String {
    let root = repo_root();
    let f = |rel: &str| root.join(rel).display().to_string();
    format!(
        r#"
seed = 42
out = "{out}"

[corpus]
congress = "{congress}"
reference = "{reference}"
stopwords = "{stopwords}"
extra_stopwords = ["{overused}"]

[lexicon]
exclude_top = 5
reference_top = 150
set_size = 20

[slant]
corpus = "{outlets}"
unit = "source"

[validate]
ratings = "{ratings}"
"#,
        out = out_dir.display(),
        congress = f("fixtures/congress.jsonl"),
        reference = f("fixtures/reference.jsonl"),
        stopwords = f("data/stopwords_en.txt"),
        overused = f("data/congress_overused.txt"),
        outlets = f("fixtures/outlets.jsonl"),
        ratings = f("fixtures/ratings.csv"),
    )
}

fn parse_lexicon_csv(path: &Path) -> Vec<(String, String, f64, u64)> {
    let mut reader = csv::Reader::from_path(path).expect("lexicon csv opens");
    assert_eq!(
        reader.headers().expect("headers").iter().collect::<Vec<_>>(),
        vec!["bigram", "party", "chi2", "rank"]
    );
    reader
        .deserialize()
        .map(|row| row.expect("lexicon row parses"))
        .collect()
}

#[test]
fn lexicon_subcommand_reproduces_the_frozen_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, fixture_config(dir.path())).unwrap();
    run_ok(&["--config", config.to_str().unwrap(), "lexicon"]);

    let got = parse_lexicon_csv(&dir.path().join("lexicon.csv"));
    let want = parse_lexicon_csv(&repo_root().join("fixtures/golden/lexicon.csv"));
    assert_eq!(got.len(), want.len(), "row counts differ");
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((&g.0, &g.1, g.3), (&w.0, &w.1, w.3), "bigram/party/rank");
        // chi-square values come from independently written arithmetic, so
        // only the last few bits may differ.
        assert!(
            (g.2 - w.2).abs() <= 1e-12 * w.2.abs(),
            "chi2 for {}: {} vs {}",
            g.0,
            g.2,
            w.2
        );
    }
}

#[test]
fn slant_and_validate_recover_the_planted_outlet_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, fixture_config(dir.path())).unwrap();
    run_ok(&["--config", config.to_str().unwrap(), "lexicon"]);
    run_ok(&["--config", config.to_str().unwrap(), "slant"]);
    let out = run_ok(&["--config", config.to_str().unwrap(), "validate"]);

    let mut reader = csv::Reader::from_path(dir.path().join("corpus_units.csv")).unwrap();
    let mut deltas: Vec<(String, f64)> = reader
        .deserialize()
        .map(|row| {
            let (unit, _jd, _jr, delta, _n): (String, f64, f64, f64, u64) = row.unwrap();
            (unit, delta)
        })
        .collect();
    assert_eq!(deltas.len(), 5);
    // Outlets were planted on a left-to-right gradient.
    deltas.sort_by(|a, b| a.1.total_cmp(&b.1));
    let order: Vec<&str> = deltas.iter().map(|(u, _)| u.as_str()).collect();
    assert_eq!(
        order,
        [
            "outlet-left",
            "outlet-leanleft",
            "outlet-center",
            "outlet-leanright",
            "outlet-right"
        ]
    );

    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r = 0.9"), "weak correlation: {stdout}");
    assert!(dir.path().join("validation.csv").exists());
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_nonzero() {
    let out = slantscope(&["frobnicate"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text:\n{stderr}");
}

#[test]
fn invalid_config_lists_every_problem_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        r#"
seed = 7

[[models]]
id = ""
url = "ftp://nope"
model = ""

[[models]]
id = "m1"
url = "http://127.0.0.1:1/v1"
model = "a"

[[models]]
id = "m1"
url = "http://127.0.0.1:1/v1"
model = "b"

[judge]
rubrics = "rubrics"
url = "http://127.0.0.1:1/v1"
model = ""
"#,
    )
    .unwrap();
    let out = slantscope(&["--config", config.to_str().unwrap(), "lexicon"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    for needle in ["url must be http(s)", "duplicate id `m1`", "model", "id"] {
        assert!(stderr.contains(needle), "missing {needle:?} in:\n{stderr}");
    }
}

#[test]
fn missing_config_flag_is_an_error() {
    let out = slantscope(&["lexicon"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config is required"));
}

#[test]
fn aggregate_excludes_incomplete_models_and_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!("seed = 1\nout = \"{}\"\n", out_dir.display()),
    )
    .unwrap();

    // Three models' method scores, but `m-partial` is missing from the
    // sentiment table, so only two models are rankable.
    fs::write(
        out_dir.join("slant.csv"),
        "unit,jsd_dem,jsd_rep,delta,support_count\n\
         m-left,0.1,0.4,-0.3,100\nm-right,0.4,0.1,0.3,100\nm-partial,0.2,0.2,0.0,100\n",
    )
    .unwrap();
    fs::write(
        out_dir.join("viewpoints.csv"),
        "group,mean,n,failures\nm-left,-0.8,10,0\nm-right,0.9,10,0\nm-partial,0.1,10,0\n",
    )
    .unwrap();
    fs::write(
        out_dir.join("sentiment.csv"),
        "model,mean_left,mean_right,t,df,p,significant,degenerate\n\
         m-left,0.9,-0.5,3.0,8.0,0.01,true,false\nm-right,-0.4,0.8,-2.5,8.0,0.02,true,false\n",
    )
    .unwrap();
    fs::write(
        out_dir.join("tests.csv"),
        "model,econ,social\nm-left,-0.5,-0.6\nm-right,0.5,0.7\nm-partial,0.0,0.1\n",
    )
    .unwrap();

    let out = slantscope(&["--config", config.to_str().unwrap(), "aggregate"]);
    assert!(
        out.status.success(),
        "aggregate failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("m-partial") && stderr.contains("sentiment"),
        "exclusion not reported:\n{stderr}"
    );

    let ranking = fs::read_to_string(out_dir.join("report/ranking.csv")).unwrap();
    assert!(ranking.contains("m-left") && ranking.contains("m-right"));
    assert!(!ranking.contains("m-partial"));
}

#[test]
fn aggregate_without_inputs_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!("seed = 1\nout = \"{}\"\n", dir.path().join("out").display()),
    )
    .unwrap();
    let out = slantscope(&["--config", config.to_str().unwrap(), "aggregate"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("slant.csv"), "unhelpful error:\n{stderr}");
}

#[test]
fn lexicon_runs_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, fixture_config(dir.path())).unwrap();
    run_ok(&["--config", config.to_str().unwrap(), "lexicon"]);
    let first = fs::read_to_string(dir.path().join("lexicon.csv")).unwrap();
    run_ok(&["--config", config.to_str().unwrap(), "lexicon"]);
    let second = fs::read_to_string(dir.path().join("lexicon.csv")).unwrap();
    assert_eq!(first, second);
}
