use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn peipsm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peipsm"))
}

fn run(args: &[&str]) -> Output {
    peipsm().args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_lists_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen-lists", "--size", "1024", "--seed", "7", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["blacklist.txt", "greylist.txt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
    }
    assert_eq!(std::fs::read_to_string(a.join("blacklist.txt")).unwrap().lines().count(), 1024);
}

#[test]
fn usage_errors_do_not_collide_with_decisions() {
    assert_eq!(run(&["verify"]).status.code(), Some(64));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(64));
    let o = run(&["forge-sim", "--strategy", "psychic", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("peipsm.conf");
    std::fs::write(&conf, "# forgery run\ntrials = 5\nt = 2045\n").unwrap();
    let o = run(&["--config", path(&conf), "forge-sim"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("t_eff = 1021 | trials = 5"), "{out}");
    // flags win over the file
    let o = run(&["--config", path(&conf), "forge-sim", "--trials", "7"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("trials = 7"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_and_verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    let lists = dir.path().join("lists");
    let log = dir.path().join("audit.log");
    assert!(run(&["keygen", "--out", path(&keys), "--seed", "3"]).status.success());
    let o = run(&[
        "gen-lists", "--size", "300", "--grey-size", "20", "--unlisted", "2", "--seed", "4", "--out", path(&lists),
    ]);
    assert!(o.status.success());

    let mut child = peipsm()
        .args(["serve", "--listen", "127.0.0.1:0", "--keys", path(&keys), "--lists", path(&lists), "--audit", path(&log)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let addr = line.trim().strip_prefix("listening on ").expect(&line).to_string();

    let first = |f: &str| std::fs::read_to_string(lists.join(f)).unwrap().lines().next().unwrap().to_string();
    let verify = |pei: &str| {
        let o = run(&["verify", "--server", &addr, "--keys", path(&keys), "--pei", pei]);
        (o.status.code(), String::from_utf8_lossy(&o.stdout).into_owned())
    };
    let (code, out) = verify(&first("unlisted.txt"));
    assert_eq!(code, Some(0), "{out}");
    assert!(out.contains("not listed"));
    let (code, out) = verify(&first("blacklist.txt"));
    assert_eq!(code, Some(2), "{out}");
    assert!(out.contains("listed (blacklist)"));
    let grey = first("greylist.txt");
    let (code, out) = verify(&grey);
    assert_eq!(code, Some(2));
    assert!(out.contains("listed (greylist)"));

    let o = run(&["audit", "--log", path(&log), "--keys", path(&keys)]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.trim_end().ends_with(&grey));
}
