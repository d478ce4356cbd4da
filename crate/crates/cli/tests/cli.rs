use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn safememe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safememe"))
        .args(args)
        .env_remove("SAFE_MEME_HOME")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn fixture(dir: &Path, size: usize, seed: u64) -> PathBuf {
    let o = safememe(&[
        "fixture",
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("manifest.jsonl")
}

fn train_m7(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--variant",
        "M7",
        "--dataset",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "epochs=1",
    ];
    args.extend_from_slice(extra);
    safememe(&args)
}

fn first_image(dir: &Path) -> PathBuf {
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "png") {
                return p;
            }
        }
    }
    panic!("no image under {}", dir.display());
}

#[test]
fn variants_lists_all_fourteen() {
    let o = safememe(&["variants"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 14);
    let m7 = text.lines().find(|l| l.starts_with("M7 ")).unwrap();
    assert!(m7.contains("QG_0 + RG_0 + CLS_regex"), "{m7}");
    assert!(text
        .lines()
        .find(|l| l.starts_with("M9 "))
        .unwrap()
        .contains("gLP v0"));

    let machine = safememe(&["variants", "--format", "machine"]);
    for line in stdout(&machine).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].is_string());
    }
}

#[test]
fn fixture_output_is_deterministic() {
    let a = safememe(&["fixture", "--size", "12", "--seed", "7"]);
    let b = safememe(&["fixture", "--size", "12", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(
        a.stdout,
        safememe(&["fixture", "--size", "12", "--seed", "8"]).stdout
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        code(&safememe(&["train", "--variant", "M14", "--dataset", "x"])),
        2
    );
    assert_eq!(code(&safememe(&["frobnicate"])), 2);
    assert_eq!(code(&safememe(&["variants", "--format", "yaml"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 12, 0);
    let o = train_m7(
        &manifest,
        &dir.path().join("m7"),
        &["--set", "no_such_key=1"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 12, 0);
    let o = safememe(&[
        "eval",
        "--variant",
        "M7",
        "--dataset",
        manifest.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("absent").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(&dir.path().join("data"), 12, 1);
    let ckpt = dir.path().join("m7");
    let o = train_m7(&manifest, &ckpt, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("# variant=M7 seed="));
    assert!(ckpt.join("run.conf").exists());

    let eval = safememe(&[
        "eval",
        "--variant",
        "M7",
        "--dataset",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&eval), 0, "{}", stdout(&eval));
    assert!(stdout(&eval).contains("M7"));

    // an H variant cannot be served from a QA checkpoint
    let mismatch = safememe(&[
        "eval",
        "--variant",
        "M9",
        "--dataset",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&mismatch), 2, "{}", stdout(&mismatch));

    let image = first_image(&dir.path().join("data"));
    let predict = safememe(&[
        "predict",
        "--variant",
        "M7",
        "--image",
        image.to_str().unwrap(),
        "--text",
        "look at them",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--format",
        "machine",
    ]);
    assert_eq!(
        code(&predict),
        0,
        "{}",
        String::from_utf8_lossy(&predict.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(stdout(&predict).trim()).unwrap();
    assert!(
        ["explicit", "implicit", "benign"].contains(&v["label"].as_str().unwrap()),
        "{v}"
    );
    assert!(!v["transcript"].as_str().unwrap().is_empty());

    let missing = safememe(&[
        "predict",
        "--variant",
        "M7",
        "--image",
        dir.path().join("nope.png").to_str().unwrap(),
        "--text",
        "x",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(&dir.path().join("data"), 12, 2);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "seed = 5\nepochs = 2\nhidden = 12\n").unwrap();

    let from_file = dir.path().join("a");
    let o = safememe(&[
        "train",
        "--variant",
        "M7",
        "--dataset",
        manifest.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = fs::read_to_string(from_file.join("run.conf")).unwrap();
    assert!(
        saved.contains("seed = 5\n") && saved.contains("epochs = 2\n"),
        "{saved}"
    );
    assert!(stdout(&o).starts_with("# variant=M7 seed=5 "));

    let flagged = dir.path().join("b");
    let o = safememe(&[
        "train",
        "--variant",
        "M7",
        "--dataset",
        manifest.to_str().unwrap(),
        "--out",
        flagged.to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
        "--seed",
        "9",
        "--set",
        "epochs=1",
    ]);
    assert_eq!(code(&o), 0);
    let saved = fs::read_to_string(flagged.join("run.conf")).unwrap();
    assert!(
        saved.contains("seed = 9\n") && saved.contains("epochs = 1\n"),
        "{saved}"
    );
    assert!(
        saved.contains("hidden = 12\n"),
        "file value survives: {saved}"
    );
    assert!(stdout(&o).starts_with("# variant=M7 seed=9 "));

    let defaults = dir.path().join("c");
    let o = train_m7(&manifest, &defaults, &[]);
    assert_eq!(code(&o), 0);
    let saved = fs::read_to_string(defaults.join("run.conf")).unwrap();
    assert!(!saved.contains("hidden = 12\n"), "{saved}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(&dir.path().join("data"), 12, 3);
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        assert_eq!(code(&train_m7(&manifest, &ckpt, &["--seed", "4"])), 0);
        let eval = safememe(&[
            "eval",
            "--variant",
            "M7",
            "--dataset",
            manifest.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--format",
            "machine",
        ]);
        assert_eq!(code(&eval), 0);
        let mut files: Vec<_> = fs::read_dir(&ckpt)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let contents: Vec<(String, Vec<u8>)> = files
            .iter()
            .filter(|p| p.is_file())
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(p).unwrap(),
                )
            })
            .collect();
        (eval.stdout, contents)
    };
    let (eval_a, files_a) = run("first");
    let (eval_b, files_b) = run("second");
    assert_eq!(eval_a, eval_b);
    assert!(!files_a.is_empty());
    assert_eq!(files_a, files_b);
}
