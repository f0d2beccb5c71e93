use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pitchflow::model::Checkpoint;

const CONFIG: &str = r#"
[model]
variant = "stdp"
hidden = 8
encoder_layers = 1
decoder_blocks = 1
decoder_hidden = 8
decoder_layers = 1
predictor_filter = 8
predictor_depth = 1
predictor_flows = 2
regressor_filter = 8

[training]
batch_size = 2
steps = 10
warmup_steps = 5
log_every = 5
val_every = 5
seed = 3

[data]
train_manifest = "corpus/manifest.jsonl"
val_items = 2
truth = "corpus/truth.jsonl"

[eval]
texts = ["abc", "cab"]
seeds = [1, 2, 3]

[corpus]
utterances_per_speaker = 4
alphabet = "abc"
word_length = [2, 3]
words = [1, 1]
seed = 7

[[corpus.speakers]]
id = "lo"
log_f0_mean = 4.8
log_f0_std = 0.1
frames_per_token = 4.0
timbre_seed = 1

[[corpus.speakers]]
id = "hi"
log_f0_mean = 5.4
log_f0_std = 0.1
frames_per_token = 4.0
timbre_seed = 2
"#;

fn pitchflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pitchflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_corpus_is_deterministic() {
    let dir = setup(CONFIG);
    ok(&pitchflow(dir.path(), &["--config", "c.toml", "gen-corpus", "--out", "a"]));
    ok(&pitchflow(dir.path(), &["--config", "c.toml", "gen-corpus", "--out", "b"]));
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert_eq!(a.len(), 8 + 2 + 2);
    assert_eq!(a, b);
    ok(&pitchflow(dir.path(), &["--config", "c.toml", "gen-corpus", "--seed", "8", "--out", "c"]));
    assert_ne!(a, tree(&dir.path().join("c")));
}

#[test]
fn single_speaker_corpus() {
    let one = CONFIG.split("[[corpus.speakers]]\nid = \"hi\"").next().unwrap();
    let dir = setup(one);
    ok(&pitchflow(dir.path(), &["--config", "c.toml", "gen-corpus", "--out", "corpus"]));
    let m = pitchflow::features::Manifest::load(dir.path().join("corpus/manifest.jsonl")).unwrap();
    assert_eq!(m.speakers(), vec!["lo".to_string()]);
    assert_eq!(m.records.len(), 4);
}

#[test]
fn invalid_key_is_a_usage_error() {
    let dir = setup(&CONFIG.replace("hidden = 8", "hiddn = 8"));
    let out = pitchflow(dir.path(), &["--config", "c.toml", "gen-corpus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiddn"));

    let out = pitchflow(dir.path(), &["gen-corpus", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_resume_synth_eval() {
    let dir = setup(CONFIG);
    let d = dir.path();
    ok(&pitchflow(d, &["--config", "c.toml", "gen-corpus", "--out", "corpus"]));
    let best = ok(&pitchflow(d, &["--config", "c.toml", "train", "--out", "run"]));
    assert_eq!(best.trim(), "run/best.ckpt");
    let ck = Checkpoint::load(d.join("run/last.ckpt")).unwrap();
    assert_eq!(ck.step, 10);
    Checkpoint::load(d.join("run/best.ckpt")).unwrap().restore().unwrap();
    let log = std::fs::read_to_string(d.join("run/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    std::fs::write(d.join("c20.toml"), CONFIG.replace("steps = 10", "steps = 20")).unwrap();
    ok(&pitchflow(d, &["--config", "c20.toml", "train", "--out", "run", "--resume", "run/last.ckpt"]));
    assert_eq!(Checkpoint::load(d.join("run/last.ckpt")).unwrap().step, 20);
    let log = std::fs::read_to_string(d.join("run/train_log.tsv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(steps, ["5", "10", "15", "20"]);

    let synth = |seed: &str, out: &str| {
        pitchflow(
            d,
            &["--config", "c.toml", "synth", "--checkpoint", "run/best.ckpt", "--text", "cab", "--speaker", "hi", "--seed", seed, "--out", out],
        )
    };
    ok(&synth("4", "s1"));
    ok(&synth("4", "s2"));
    ok(&synth("5", "s3"));
    let (s1, s2, s3) = (tree(&d.join("s1")), tree(&d.join("s2")), tree(&d.join("s3")));
    assert_eq!(s1.keys().map(|p| p.to_str().unwrap()).collect::<Vec<_>>(), ["contour.tsv", "durations.tsv", "mel.pfac"]);
    assert_eq!(s1, s2);
    assert_ne!(s1, s3);
    let mel = pitchflow::model::ArrayContainer::load(d.join("s1/mel.pfac")).unwrap();
    assert_eq!(mel.get("mel").unwrap().shape()[0], 80);

    let out = pitchflow(
        d,
        &["--config", "c.toml", "synth", "--checkpoint", "run/best.ckpt", "--text", "a", "--speaker", "mid", "--t-prior", "0"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mid") && err.contains("hi") && err.contains("lo"), "{err}");

    std::fs::write(d.join("base.toml"), CONFIG.replace("\"stdp\"", "\"baseline\"")).unwrap();
    let out = pitchflow(d, &["--config", "base.toml", "synth", "--checkpoint", "run/best.ckpt", "--text", "a", "--speaker", "hi"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));

    let w1 = ok(&pitchflow(d, &["--config", "c.toml", "eval", "--checkpoint", "run/best.ckpt", "--out", "e1"]));
    assert_eq!(w1.lines().count(), 1 + 2);
    ok(&pitchflow(d, &["--config", "c.toml", "eval", "--checkpoint", "run/best.ckpt", "--out", "e2"]));
    let e1 = tree(&d.join("e1"));
    assert_eq!(e1, tree(&d.join("e2")));
    assert!(e1.contains_key(Path::new("diversity_stdp.csv")));
    assert!(e1.contains_key(Path::new("logf0_hist.dat")));

    let out = pitchflow(d, &["--config", "c.toml", "eval", "--checkpoint", "run/missing.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}
