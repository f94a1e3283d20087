use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_kgtrade");

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kgtrade-cli-test-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_graph(dir: &Path, name: &str, statements: usize) -> PathBuf {
    let mut text = String::new();
    for i in 0..statements {
        let s = i % 5;
        if i % 2 == 0 {
            text += &format!("<http://ex.org/s{s}> <http://ex.org/p{}> \"value {i}\" .\n", i % 3);
        } else {
            text += &format!("<http://ex.org/s{s}> <http://ex.org/p{}> <http://ex.org/s{}> .\n", i % 3, (i + 1) % 5);
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Starts a Seller on an ephemeral port and returns it with the address it
/// reported.
fn spawn_seller(args: &[&str]) -> (Child, String) {
    let mut child = Command::new(BIN)
        .arg("seller")
        .args(["--listen", "127.0.0.1:0"])
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "seller exited before listening");
        if let Some(addr) = line.trim().strip_prefix("listening on ") {
            let addr = addr.to_string();
            std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
            return (child, addr);
        }
    }
}

fn buyer(addr: &str, args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(BIN)
        .arg("buyer")
        .args(["--connect", addr])
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    if let Some(text) = stdin {
        input.write_all(text.as_bytes()).unwrap();
    }
    drop(input);
    child.wait_with_output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One seeded session; returns both exit codes and both report paths.
fn session(dir: &Path, tag: &str, seller_extra: &[&str], buyer_extra: &[&str]) -> (i32, i32, PathBuf, PathBuf) {
    let graph = dir.join("graph.nt");
    let (s_report, b_report) = (dir.join(format!("seller-{tag}.json")), dir.join(format!("buyer-{tag}.json")));
    let common = ["--parts", "3", "--buy", "1", "--seed", "5", "--omit-timing"];
    let mut s_args = vec!["--graph", graph.to_str().unwrap(), "--report", s_report.to_str().unwrap()];
    s_args.extend(common);
    s_args.extend(seller_extra);
    let (mut seller, addr) = spawn_seller(&s_args);
    let mut b_args = vec!["--graph", graph.to_str().unwrap(), "--report", b_report.to_str().unwrap()];
    b_args.extend(common);
    b_args.extend(buyer_extra);
    let out = buyer(&addr, &b_args, None);
    let seller_code = seller.wait().unwrap().code().unwrap();
    (seller_code, out.status.code().unwrap(), s_report, b_report)
}

#[test]
fn two_processes_over_tcp_complete_and_reproduce() {
    let dir = workdir("tcp");
    write_graph(&dir, "graph.nt", 20);
    let (s, b, s_report, b_report) = session(&dir, "a", &[], &[]);
    assert_eq!((s, b), (0, 0));

    let report = read_json(&b_report);
    assert_eq!(report["outcome"]["state"], "Closed");
    assert_eq!(report["intersection_size"], 20);
    assert_eq!(report["verification"]["passed"], true);
    assert_eq!(report["parts_received"].as_array().unwrap().len(), 1);
    assert!(report.get("timing").unwrap().is_null());
    let seller = read_json(&s_report);
    assert_eq!(seller["outcome"]["state"], "Closed");
    assert_eq!(seller["traffic"]["total_bytes"], report["traffic"]["total_bytes"]);

    let (s2, b2, s_again, b_again) = session(&dir, "b", &[], &[]);
    assert_eq!((s2, b2), (0, 0));
    assert_eq!(std::fs::read(&b_report).unwrap(), std::fs::read(&b_again).unwrap());
    assert_eq!(std::fs::read(&s_report).unwrap(), std::fs::read(&s_again).unwrap());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn buyer_declining_after_step_two_exits_three() {
    let dir = workdir("decline");
    write_graph(&dir, "graph.nt", 12);
    let conf = dir.join("buyer.conf");
    std::fs::write(&conf, "continue_after_step2 = false\n").unwrap();
    let (s, b, s_report, b_report) = session(&dir, "x", &[], &["--config", conf.to_str().unwrap()]);
    assert_eq!((s, b), (3, 3));
    assert_eq!(read_json(&b_report)["outcome"]["state"], "Aborted(step2, user-decline)");
    assert_eq!(read_json(&s_report)["outcome"]["state"], "Aborted(step2, peer-abort)");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn interactive_refusal_at_the_first_prompt() {
    let dir = workdir("interactive");
    let graph = write_graph(&dir, "graph.nt", 12);
    let g = graph.to_str().unwrap();
    let (mut seller, addr) = spawn_seller(&["--graph", g, "--parts", "3", "--seed", "2"]);
    let out = buyer(&addr, &["--graph", g, "--parts", "3", "--interactive", "--omit-timing"], Some("n\n"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("continue? [y/n]"));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["outcome"]["state"], "Aborted(step1, user-decline)");
    assert_eq!(seller.wait().unwrap().code(), Some(3));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn usage_errors_exit_two() {
    let missing = Command::new(BIN)
        .args(["buyer", "--graph", "/nonexistent/graph.nt", "--connect", "127.0.0.1:9"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/graph.nt"));

    let no_args = Command::new(BIN).arg("seller").output().unwrap();
    assert_eq!(no_args.status.code(), Some(2));

    let dir = workdir("usage");
    let graph = write_graph(&dir, "graph.nt", 4);
    let bad_config = Command::new(BIN)
        .args(["seller", "--listen", "127.0.0.1:0", "--buy", "0", "--graph", graph.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad_config.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bench_reports_are_reproducible() {
    let run = || {
        Command::new(BIN)
            .args(["bench", "--sizes", "40,80,120", "--seed", "3", "--omit-timing", "--plain-baseline"])
            .args(["--parts", "4", "--buy", "2"])
            .output()
            .unwrap()
    };
    let first = run();
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let report: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(report["plain_overhead_ratio"].as_f64().unwrap() > 1.0);
    assert!(report["fits"]["seconds"].is_null());
    assert!(report["kb_per_statement"]["S->B"].as_f64().unwrap() > 0.0);
    assert_eq!(run().stdout, first.stdout);
}
