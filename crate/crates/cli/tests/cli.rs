use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use parentsets::FieldParams;
use parentsets_cli::{load_schema, PartyConfig, RunReport, VerifyReport};

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parentsets"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn table1_args(cmd: &str) -> Command {
    let mut c = exe();
    c.arg(cmd)
        .arg("--schema")
        .arg(data("table1_schema.json"))
        .arg("--data")
        .arg(data("table1_owner1.csv"))
        .arg("--data")
        .arg(data("table1_owner2.csv"))
        .args(["--target", "T2D"]);
    c
}

fn report(out: Output) -> RunReport {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn oracle_on_table1() {
    for extra in [vec![], vec!["--mode", "verbatim"], vec!["--lmax", "0"], vec!["--precision", "float"]] {
        let r = report(table1_args("oracle").args(&extra).output().unwrap());
        assert_eq!(r.pg.records.len(), 1, "{extra:?}");
        assert!(r.pg.records[0].set.is_empty());
        assert!((r.pg.records[0].score - 4.158883).abs() <= 12.0 / 65536.0);
    }
    let r = report(table1_args("oracle").output().unwrap());
    assert_eq!(r.pg.records[0].score2_mantissa, Some(545112));
}

#[test]
fn sim_matches_oracle_and_replays() {
    let oracle = report(table1_args("oracle").output().unwrap());
    let a = report(table1_args("sim").args(["--csps", "3", "--seed", "4"]).output().unwrap());
    let b = report(table1_args("sim").args(["--csps", "3", "--seed", "4"]).output().unwrap());
    assert_eq!(a.pg, oracle.pg);
    assert!(a.audit.as_ref().unwrap().passed);
    assert_eq!(a.transcript.as_ref().unwrap().digest, b.transcript.as_ref().unwrap().digest);
    assert!(!table1_args("sim").args(["--csps", "1"]).output().unwrap().status.success());
}

#[test]
fn verify_table1() {
    let out = exe()
        .arg("verify")
        .arg("--schema")
        .arg(data("table1_schema.json"))
        .arg("--data")
        .arg(data("table1_owner1.csv"))
        .arg("--data")
        .arg(data("table1_owner2.csv"))
        .args(["--target", "T2D"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: VerifyReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.passed);
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = exe()
            .args(["gen", "-n", "5", "-m", "300", "--arities", "2,3,2,3,2", "--shards", "3", "--seed", "8", "--out"])
            .arg(&out)
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["schema.json", "owner1.csv", "owner2.csv", "owner3.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn party_config(owners: usize, csps: usize) -> PartyConfig {
    let listeners: Vec<TcpListener> = (0..owners + csps + 1).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    PartyConfig {
        session_id: "00112233445566778899aabbccddeeff".into(),
        schema: load_schema(&data("table1_schema.json")).unwrap(),
        target: "T2D".into(),
        l_max: None,
        mode: Default::default(),
        empty_set_penalty: false,
        params: FieldParams::default(),
        csps,
        owners,
        roster: listeners.iter().map(|l| l.local_addr().unwrap()).collect(),
        dealer_seed: 1,
        owner_seed: 2,
        timeout_secs: 5,
    }
}

fn spawn_party(config: &Path, args: &[&str]) -> Child {
    exe()
        .arg("party")
        .args(args)
        .arg("--config")
        .arg(config)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, config: &PartyConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec(config).unwrap()).unwrap();
    p
}

#[test]
fn wrong_session_id_aborts_at_setup() {
    let dir = tempfile::tempdir().unwrap();
    let good = party_config(1, 2);
    let mut bad = good.clone();
    bad.session_id = "ffffffffffffffffffffffffffffffff".into();
    let (good_path, bad_path) = (write_config(dir.path(), "good.json", &good), write_config(dir.path(), "bad.json", &bad));
    let owner_data = data("table1_owner1.csv");
    let children = vec![
        spawn_party(&good_path, &["--role", "csp", "--index", "0"]),
        spawn_party(&good_path, &["--role", "csp", "--index", "1"]),
        spawn_party(&bad_path, &["--role", "do", "--index", "0", "--data", owner_data.to_str().unwrap()]),
        spawn_party(&good_path, &["--role", "dealer"]),
    ];
    let outs: Vec<Output> = children.into_iter().map(|c| c.wait_with_output().unwrap()).collect();
    for out in &outs {
        assert!(!out.status.success());
    }
    let owner_err = String::from_utf8_lossy(&outs[2].stderr);
    assert!(owner_err.contains("session"), "{owner_err}");
}

#[test]
fn unreachable_dealer_fails_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let config = party_config(1, 2);
    let path = write_config(dir.path(), "c.json", &config);
    let owner_data = data("table1_owner1.csv");
    let children = vec![
        spawn_party(&path, &["--role", "csp", "--index", "0"]),
        spawn_party(&path, &["--role", "csp", "--index", "1"]),
        spawn_party(&path, &["--role", "do", "--index", "0", "--data", owner_data.to_str().unwrap()]),
    ];
    let outs: Vec<Output> = children.into_iter().map(|c| c.wait_with_output().unwrap()).collect();
    for out in &outs {
        assert!(!out.status.success());
    }
    // the dealer holds roster index 3
    let csp_err = String::from_utf8_lossy(&outs[0].stderr);
    assert!(csp_err.contains("[3]"), "{csp_err}");
}
