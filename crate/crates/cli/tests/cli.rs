use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lorank(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorank"))
        .current_dir(cwd)
        .env_remove("LORANK_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

/// Blocky generator plus left-half and right-half bases in `dir/out`.
fn blocky_setup(dir: &Path) {
    let o = lorank(dir, &["--out", "out", "gen", "--kind", "blocky", "--dz", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for (rect, name) in [("0,0,8,16", "a"), ("8,0,16,16", "b")] {
        let o = lorank(dir, &["--out", "out", "discover", "--generator", "out/blocky.gen", "--rect", rect, "--name", name]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
}

fn printed(out: &str, key: &str) -> f64 {
    let words: Vec<&str> = out.split_whitespace().collect();
    let i = words.iter().position(|w| *w == key).unwrap_or_else(|| panic!("{key} missing in {out}"));
    words[i + 1].parse().unwrap()
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |name: &'static str, seed: &'static str| {
        ["--out", "o", "gen", "--kind", "mlp", "--dz", "4", "--dx", "9", "--hidden", "6", "--name", name, "--seed", seed]
    };
    for (name, seed) in [("x", "5"), ("y", "5"), ("z", "6")] {
        assert_eq!(code(&lorank(d, &args(name, seed))), 0);
    }
    let read = |n: &str| fs::read(d.join("o").join(format!("{n}.gen"))).unwrap();
    assert_eq!(read("x"), read("y"));
    assert_ne!(read("x"), read("z"));
}

#[test]
fn gen_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["gen", "--kind", "mlp"][..],
        &["gen", "--kind", "mlp", "--dz", "4"],
        &["gen", "--kind", "blocky", "--dz", "8", "--dx", "3"],
        &["gen", "--kind", "linear", "--dz", "0", "--dx", "3"],
        &["gen", "--kind", "wavelet", "--dz", "4"],
    ] {
        let o = lorank(d, args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert!(!d.join("lorank-out").exists());
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = lorank(dir.path(), &["discover", "--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("indices 1, 2, 5, 6"));
}

#[test]
fn discover_reports_rank_and_honours_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    blocky_setup(d);
    let o = lorank(d, &["--out", "out", "discover", "--generator", "out/blocky.gen", "--rect", "0,0,8,16", "--name", "again"]);
    let rank = printed(&stdout(&o), "rank");
    assert!((1.0..=16.0).contains(&rank), "{}", stdout(&o));
    assert_eq!(fs::read(d.join("out/a.basis")).unwrap(), fs::read(d.join("out/again.basis")).unwrap());

    let o = lorank(d, &["--out", "out", "discover", "--generator", "out/blocky.gen", "--indices", "0-63", "--lambda-n", "60"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("lambda 1.6666"), "{}", stdout(&o));

    for rect in ["4,0,4,16", "0,0,17,4", "1,2,3"] {
        let o = lorank(d, &["--out", "out", "discover", "--generator", "out/blocky.gen", "--rect", rect]);
        assert_eq!(code(&o), 2, "{rect}: {}", stderr(&o));
    }
    let o = lorank(d, &["--out", "out", "discover", "--generator", "out/missing.gen", "--rect", "0,0,2,2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn edit_with_null_space_leaves_the_rest_alone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    blocky_setup(d);

    let o = lorank(d, &["--out", "out", "edit", "--generator", "out/blocky.gen", "--basis-a", "out/a.basis", "--basis-b", "out/b.basis"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(printed(&stdout(&o), "mse_outside_a") <= 1e-8, "{}", stdout(&o));
    assert!(printed(&stdout(&o), "mse_inside_a") > 0.0);
    for suffix in ["before", "after", "heatmap"] {
        assert!(fs::read(d.join(format!("out/edit_{suffix}.pgm"))).unwrap().starts_with(b"P5"));
    }

    let o = lorank(d, &["--out", "out", "edit", "--generator", "out/blocky.gen", "--basis-a", "out/a.basis", "--alpha", "0", "--name", "still", "--format", "ascii"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = fs::read(d.join("out/still_before.pgm")).unwrap();
    assert!(before.starts_with(b"P2"));
    assert_eq!(before, fs::read(d.join("out/still_after.pgm")).unwrap());
    assert_eq!(printed(&stdout(&o), "mse_inside_a"), 0.0);

    let o = lorank(d, &["--out", "out", "edit", "--generator", "out/blocky.gen", "--basis-a", "out/a.basis", "--attr", "99"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("0..="), "{}", stderr(&o));
    let o = lorank(d, &["--out", "out", "edit", "--generator", "out/blocky.gen", "--basis-a", "out/a.basis", "--r-relax", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gen.conf"), "# shared\nkind = mlp\ndz = 4\ndx = 6\nout = from-config\nname = conf\n").unwrap();
    let o = lorank(d, &["--config", "gen.conf", "gen"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("from-config/conf.gen").exists());

    let o = lorank(d, &["--config", "gen.conf", "--out", "flag", "gen", "--dx", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read_to_string(d.join("flag/conf.gen")).unwrap() != fs::read_to_string(d.join("from-config/conf.gen")).unwrap());

    fs::write(d.join("bad.conf"), "kind = mlp\ndz = 4\ndx = 6\nwidth = 3\n").unwrap();
    let o = lorank(d, &["--config", "bad.conf", "gen"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown key"), "{}", stderr(&o));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.conf"), "out = conf\n").unwrap();
    let args = ["--config", "c.conf", "gen", "--kind", "linear", "--dz", "2", "--dx", "3"];
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_lorank"));
        c.current_dir(d).env_remove("LORANK_OUT");
        if let Some(e) = env {
            c.env("LORANK_OUT", e);
        }
        assert!(c.args(extra).args(args).output().unwrap().status.success());
    };
    run(None, &[]);
    assert!(d.join("conf/linear.gen").exists());
    run(Some("env"), &[]);
    assert!(d.join("env/linear.gen").exists());
    run(Some("env"), &["--out", "flag"]);
    assert!(d.join("flag/linear.gen").exists());

    let bare = tempfile::tempdir().unwrap();
    assert_eq!(code(&lorank(bare.path(), &["gen", "--kind", "linear", "--dz", "2", "--dx", "3"])), 0);
    assert_eq!(listing(bare.path()), ["lorank-out"]);
    assert_eq!(listing(&bare.path().join("lorank-out")), ["linear.gen"]);
}

#[test]
fn verify_subset_writes_only_its_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lorank(d, &["--out", "v", "verify", "--only", "jacobian"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
    assert_eq!(listing(&d.join("v/reports")), ["03_jacobian.json", "index.json"]);
    assert_eq!(listing(d), ["v"]);

    let o = lorank(d, &["--out", "v", "verify", "--only", "nonsense"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupted_fixtures_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&lorank(d, &["--out", "v", "verify", "--only", "3"])), 0);
    let fixtures = d.join("v/fixtures");
    let o = lorank(d, &["--out", "w", "verify", "--only", "3", "--fixtures", "v/fixtures"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let target = fixtures.join("mlp_square.gen");
    let text = fs::read_to_string(&target).unwrap();
    fs::write(&target, &text[..text.len() / 2]).unwrap();
    let o = lorank(d, &["--out", "w", "verify", "--only", "3", "--fixtures", "v/fixtures"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("mlp_square.gen"), "{}", stderr(&o));

    // one changed digit in a weight still parses but no longer matches
    let pos = text.rfind(|c: char| c.is_ascii_digit() && c != '9').unwrap();
    let mut changed = text.clone();
    let digit = changed.as_bytes()[pos] + 1;
    changed.replace_range(pos..=pos, std::str::from_utf8(&[digit]).unwrap());
    fs::write(&target, changed).unwrap();
    let o = lorank(d, &["--out", "w", "verify", "--only", "3", "--fixtures", "v/fixtures"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("mlp_square.gen"), "{}", stderr(&o));
}
