use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use promptmix::backends::mock::TranscriptChat;
use promptmix::mixgen::batch_prompt;
use promptmix::pipeline::PipelineConfig;
use promptmix::relabel::RelabelRecord;

const CLASSES: &str = r#"{"name": "age_limit", "description": "Minimum age questions.", "seed_examples": ["How old must I be to open an account?", "Can a teenager get a card?"]}
{"name": "atm_support", "description": "Using or finding ATMs.", "seed_examples": ["Where is the closest ATM?", "The ATM swallowed my card."]}
{"name": "card_arrival", "description": "When a new card arrives.", "seed_examples": ["When will my card get here?", "My card has not arrived yet."]}
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes the class file and a mock config; returns the config path.
fn setup(dir: &Path, generation: &str, backends: &str) -> PathBuf {
    std::fs::write(dir.join("classes.jsonl"), CLASSES).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[dataset]\nclasses = \"classes.jsonl\"\n\n[generation]\n{generation}\n\n[backends]\nkind = \"mock\"\n{backends}\n\n[run]\nseed = 3\noutput_dir = \"out\"\n"
        ),
    )
    .unwrap();
    config
}

fn relabel_line(i: usize, intended: &str, resolved: &str) -> String {
    let r = RelabelRecord {
        generation_index: i,
        text: format!("utterance {i}"),
        intended_label: intended.into(),
        candidates: vec![intended.into(), resolved.into()],
        raw_prediction: resolved.into(),
        resolved_label: resolved.into(),
        resolution_similarity: 1.0,
        was_relabeled: intended != resolved,
        out_of_scope_suspect: false,
    };
    serde_json::to_string(&r).unwrap() + "\n"
}

#[test]
fn augment_writes_the_four_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "n_per_class = 4\nt = 2", "");
    let o = run(&["augment", "--config", config.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["augmented.jsonl", "generations.jsonl", "relabels.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["run"]["seed"], 11);
    assert_eq!(std::fs::read_to_string(out.join("augmented.jsonl")).unwrap().lines().count(), 6 + 12);

    let again = run(&["augment", "--config", config.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(again.status.code(), Some(1));
    let resumed = run(&["augment", "--config", config.to_str().unwrap(), "--seed", "11", "--resume"]);
    assert_eq!(resumed.status.code(), Some(0));
    assert!(stdout(&resumed).contains("calls:       0 chat, 0 embed"), "{}", stdout(&resumed));
    let drift = run(&["augment", "--config", config.to_str().unwrap(), "--seed", "12", "--resume"]);
    assert_eq!(drift.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&drift.stderr).contains("configuration changed"));
}

#[test]
fn dry_run_issues_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "n_per_class = 4\nt = 2", "");
    let o = run(&["augment", "--config", config.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("# first generation prompt"));
    assert!(text.contains("generation calls:         3 (budget 9)"), "{text}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_subset_size_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "n_per_class = 4\nt = 1", "");
    let o = run(&["augment", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generation.t must be at least 2"));
}

#[test]
fn barren_model_exits_with_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = setup(dir.path(), "n_per_class = 5\nn_per_call = 5\nt = 2", "transcript = \"transcript.json\"");
    std::fs::write(dir.path().join("transcript.json"), "{}").unwrap();
    // Script every prompt within the budget to an answer with no list lines.
    let config = PipelineConfig::load(&config_path).unwrap();
    let dataset = config.load_dataset().unwrap();
    let settings = config.generation_settings();
    let mut transcript = TranscriptChat::new();
    for class in 0..3 {
        for batch in 0..settings.call_budget() {
            let (_, prompt) = batch_prompt(&dataset, &settings, config.run.seed, class, batch).unwrap();
            transcript.insert(&prompt, "Sure! Here you go:");
        }
    }
    transcript.save(&dir.path().join("transcript.json")).unwrap();
    let o = run(&["augment", "--config", config_path.to_str().unwrap(), "--no-relabel"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shortfall in 3 classes"));
}

#[test]
fn stats_prints_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("relabels.jsonl");
    let four: String = (0..4).map(|i| relabel_line(i, "a", if i == 2 { "b" } else { "a" })).collect();
    std::fs::write(&path, four).unwrap();
    let o = run(&["stats", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().last().unwrap().ends_with("25.0"), "{}", stdout(&o));

    std::fs::write(&path, "").unwrap();
    let empty = stdout(&run(&["stats", path.to_str().unwrap()]));
    let total: Vec<&str> = empty.lines().last().unwrap().split_whitespace().collect();
    assert_eq!(total, ["total", "0", "0", "0.0"]);

    // Objective/subjective transcript flipping 42 of 100.
    let subj: String = (0..100)
        .map(|i| {
            let intended = if i % 2 == 0 { "objective" } else { "subjective" };
            let other = if i % 2 == 0 { "subjective" } else { "objective" };
            relabel_line(i, intended, if i < 42 { other } else { intended })
        })
        .collect();
    std::fs::write(&path, subj).unwrap();
    let o = stdout(&run(&["stats", path.to_str().unwrap()]));
    assert!(o.lines().last().unwrap().ends_with("42.0"), "{o}");
}

#[test]
fn relabel_classify_and_emit() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "n_per_class = 3\nt = 2", "");
    let c = config.to_str().unwrap();
    assert_eq!(run(&["augment", "--config", c, "--no-relabel"]).status.code(), Some(0));
    let generations = dir.path().join("out/generations.jsonl");

    let again = dir.path().join("again");
    let o = run(&["relabel", "--config", c, "--generations", generations.to_str().unwrap(), "--output", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(again.join("relabels.jsonl")).unwrap().lines().count(), 9);

    let test = dir.path().join("test.jsonl");
    std::fs::write(&test, "{\"text\":\"Where is the closest ATM?\",\"label\":\"atm_support\",\"origin\":\"seed\"}\n").unwrap();
    let o = run(&["classify", "--config", c, "--test", test.to_str().unwrap(), "--output", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("accuracy: 1.0000 (1/1)"), "{}", stdout(&o));
    assert!(again.join("predictions.jsonl").exists());

    let csv = dir.path().join("train.csv");
    let o = run(&["emit", "--input", again.join("augmented.jsonl").to_str().unwrap(), "--output", csv.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 + 9);
}

#[test]
fn unknown_subcommand_and_missing_config_fail() {
    assert_ne!(run(&["bogus"]).status.code(), Some(0));
    let o = run(&["augment", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
}
