use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pricewar"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

const SMALL_MARKET: &str = "[market]\nnum_customer_groups = 2\ncustomers_per_group = 10\nrounds = 5\n";

#[test]
fn simulate_smoke_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", SMALL_MARKET);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "7"])), 0);
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "7"])), 0);
    assert_eq!(
        code(&run(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "7", "--threads", "1"])),
        0
    );
    let files = dir_bytes(&a);
    assert_eq!(
        files.keys().cloned().collect::<Vec<_>>(),
        ["records_company1.csv", "records_company2.csv", "summary.csv", "trajectory.csv"]
    );
    assert_eq!(files, dir_bytes(&b));
    assert_eq!(files, dir_bytes(&c));
    for f in ["records_company1.csv", "records_company2.csv"] {
        let lines = csv_lines(&a.join(f));
        assert_eq!(lines[0], "period,customer_id,own_award,count,demand");
        assert_eq!(lines.len(), 1 + 20 * 5);
    }
    assert_eq!(csv_lines(&a.join("trajectory.csv")).len(), 1 + 5);

    let d = tmp.path().join("d");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&d), "--seed", "8"])), 0);
    assert_ne!(files["records_company1.csv"], fs::read(d.join("records_company1.csv")).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let unknown = write(tmp.path(), "u.toml", "[market]\nnum_groups = 3\n");
    let r = run(&["simulate", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
    let missing = tmp.path().join("absent.toml");
    assert_eq!(code(&run(&["simulate", "--config", s(&missing), "--out", s(&out)])), 2);
    let bad_policy = write(tmp.path(), "p.toml", "policy1 = \"DQN+Q\"\n");
    assert_eq!(code(&run(&["simulate", "--config", s(&bad_policy), "--out", s(&out)])), 2);
    let zero_groups = write(tmp.path(), "z.toml", "[market]\nnum_customer_groups = 0\n");
    assert_eq!(code(&run(&["simulate", "--config", s(&zero_groups), "--out", s(&out)])), 2);
}

#[test]
fn tournament_rejects_bad_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let variant = write(tmp.path(), "v.toml", "cells = [[\"DQN+X\", \"Random\"]]\nseeds = [0]\n");
    let r = run(&["tournament", "--config", s(&variant), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("DQN+X"));
    let empty = write(tmp.path(), "e.toml", "cells = []\n");
    assert_eq!(code(&run(&["tournament", "--config", s(&empty), "--out", s(&out)])), 2);
}

#[test]
fn small_tournament_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "t.toml",
        "cells = [[\"DP\", \"Random\"], [\"Random\", \"DP\"], [\"DP\", \"DP\"], [\"Random\", \"Random\"]]\n\
         seeds = [0, 1, 2]\n\
         [market]\nnum_customer_groups = 2\ncustomers_per_group = 20\nrounds = 12\nbudgets = [40.0, 40.0]\nbudget_mode = \"per_round\"\n\
         [tracker]\nrefresh_interval = 4\nwindow = 4\n\
         [tracker.lda]\nsweeps = 40\nburn_in = 20\nthin = 5\nchains = 1\n",
    );
    let out = tmp.path().join("o");
    let r = run(&["tournament", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let lines = csv_lines(&out.join("tournament.csv"));
    assert_eq!(lines[0], "row,col,mean_share,stderr,seeds");
    assert_eq!(lines.len(), 5);
    for cell in ["DP-vs-Random", "Random-vs-DP", "DP-vs-DP", "Random-vs-Random"] {
        for seed in 0..3 {
            assert!(out.join(format!("trajectory_{cell}_{seed}.csv")).exists());
        }
    }
    let rr: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(&rr[..2], ["Random", "Random"]);
    let share: f64 = rr[2].parse().unwrap();
    assert!((share - 0.5).abs() < 0.1, "Random vs Random share {share}");

    // A seed override shifts the whole seed list.
    let shifted = tmp.path().join("shifted");
    assert_eq!(code(&run(&["tournament", "--config", s(&cfg), "--out", s(&shifted), "--seed", "10"])), 0);
    assert!(shifted.join("trajectory_DP-vs-DP_12.csv").exists());
}

#[test]
fn infer_rejects_empty_records() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let empty = write(tmp.path(), "empty.csv", "");
    assert_eq!(code(&run(&["infer", "--records", s(&empty), "--out", s(&out)])), 3);
    let header_only = write(tmp.path(), "h.csv", "period,customer_id,own_award,count,demand\n");
    assert_eq!(code(&run(&["infer", "--records", s(&header_only), "--out", s(&out)])), 3);
    let absent = tmp.path().join("absent.csv");
    assert_eq!(code(&run(&["infer", "--records", s(&absent), "--out", s(&out)])), 3);
}

#[test]
fn infer_writes_one_stream_per_chain_and_evaluate_scores_it() {
    let tmp = tempfile::tempdir().unwrap();
    let sim_cfg = write(tmp.path(), "sim.toml", SMALL_MARKET);
    let sim = tmp.path().join("sim");
    assert_eq!(code(&run(&["simulate", "--config", s(&sim_cfg), "--out", s(&sim), "--seed", "2"])), 0);
    let records = sim.join("records_company2.csv");
    let cfg = write(tmp.path(), "inf.toml", "[lda]\nsweeps = 30\nburn_in = 10\nthin = 5\nchains = 4\n");
    let a = tmp.path().join("a");
    let r = run(&["infer", "--records", s(&records), "--config", s(&cfg), "--out", s(&a), "--seed", "5"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let chains: BTreeSet<String> = csv_lines(&a.join("diagnostics.csv"))[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().to_owned())
        .collect();
    assert_eq!(chains.len(), 4);

    let b = tmp.path().join("b");
    let args = ["infer", "--records", s(&records), "--config", s(&cfg), "--out", s(&b), "--seed", "5", "--threads", "1"];
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let e = tmp.path().join("e");
    let pref = a.join("pref.csv");
    let theta = a.join("theta.csv");
    let r = run(&["evaluate", "--pref", s(&pref), "--theta", s(&theta), "--test", s(&records), "--out", s(&e)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let nll = csv_lines(&e.join("nll_report.csv"));
    assert_eq!(nll[0], "model,n,nll,floor_events");
    assert!(nll[1].starts_with("LDA,100,"));
    assert!(nll[2].starts_with("uniform,100,"));

    let header_only = write(tmp.path(), "h.csv", "period,customer_id,own_award,count,demand\n");
    let r = run(&["evaluate", "--pref", s(&pref), "--theta", s(&theta), "--test", s(&header_only), "--out", s(&e)]);
    assert_eq!(code(&r), 3);
}

/// Deterministic offline coupon log: `rows` lines over two merchants.
fn coupon_log(rows: usize) -> String {
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = |m: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % m
    };
    let rates = ["0.9", "0.8", "100:10", "200:50", "0.95", "30:5"];
    let mut text = String::from("User_id,Merchant_id,Coupon_id,Discount_rate,Distance,Date_received,Date\n");
    for _ in 0..rows {
        let user = 1000 + next(40);
        let merchant = if next(3) == 0 { 22 } else { 11 };
        let day = 1 + next(28);
        let distance = if next(10) == 0 { "null".to_owned() } else { next(11).to_string() };
        if next(4) == 0 {
            text += &format!("{user},{merchant},null,null,{distance},null,201602{day:02}\n");
        } else {
            let rate = rates[next(rates.len() as u64) as usize];
            let coupon = 500 + next(9);
            let used = if next(3) == 0 {
                format!("201602{:02}", (day + next(3)).min(28))
            } else {
                "null".to_owned()
            };
            text += &format!("{user},{merchant},{coupon},{rate},{distance},201602{day:02},{used}\n");
        }
    }
    text
}

#[test]
fn preprocess_fixture_partitions_users() {
    let tmp = tempfile::tempdir().unwrap();
    let mut log = coupon_log(200);
    log += "1001,11,501,0.9,1,20160210,20160201\n";
    log += "1002,11,501\n";
    let input = write(tmp.path(), "log.csv", &log);
    let cfg = write(tmp.path(), "pre.toml", "preference_groups = 3\nstrategy_group_count = 4\n");
    let a = tmp.path().join("a");
    let r = run(&["preprocess", "--input", s(&input), "--merchant", "11", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let assignments = csv_lines(&a.join("assignments.csv"));
    assert_eq!(assignments[0], "user_id,preference_group,strategy_group");
    let users: Vec<&str> = assignments[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(users.len(), users.iter().collect::<BTreeSet<_>>().len());
    let mut seen = BTreeSet::new();
    for g in 0..3 {
        for line in &csv_lines(&a.join(format!("records_group_{g}.csv")))[1..] {
            let f: Vec<&str> = line.split(',').collect();
            assert!(users.contains(&f[1]));
            let own: usize = f[2].parse().unwrap();
            assert!(own <= 3);
            assert!(f[3] == "0" || f[3] == "1");
            assert_eq!(f[4], "1");
            seen.insert(f[1].to_owned());
        }
    }
    assert_eq!(seen.len(), users.len());
    let quarantine = csv_lines(&a.join("quarantine.csv"));
    assert_eq!(quarantine.len(), 3, "{quarantine:?}");
    for f in ["coupon_levels.csv", "exposure.csv", "features.csv"] {
        assert!(a.join(f).exists());
    }

    let b = tmp.path().join("b");
    let r = run(&["preprocess", "--input", s(&input), "--merchant", "11", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(code(&r), 0);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    // Group 0's strategy groups fitted then scored against exposure.
    let fit = tmp.path().join("fit");
    let inf_cfg = write(
        tmp.path(),
        "inf.toml",
        "own_arity = 4\n[lda]\nacc = 2\nopp_arity = 3\nsweeps = 30\nburn_in = 10\nthin = 5\nchains = 1\n",
    );
    let records = a.join("records_group_0.csv");
    let assign = a.join("assignments.csv");
    let r = run(&[
        "infer", "--records", s(&records), "--config", s(&inf_cfg), "--assignments", s(&assign), "--out", s(&fit),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let eval = tmp.path().join("eval");
    let pref = fit.join("pref.csv");
    let theta = fit.join("theta.csv");
    let exposure = a.join("exposure.csv");
    let r = run(&[
        "evaluate", "--pref", s(&pref), "--theta", s(&theta), "--test", s(&records), "--assignments", s(&assign),
        "--exposure", s(&exposure), "--out", s(&eval),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let w1 = csv_lines(&eval.join("w1_report.csv"));
    assert_eq!(w1[0], "group,lda,uniform,overall");
    assert!(w1.last().unwrap().starts_with("mean,"));
}

#[test]
fn preprocess_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write(tmp.path(), "log.csv", &coupon_log(50));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["preprocess", "--input", s(&input), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["preprocess", "--input", s(&input), "--merchant", "99", "--out", s(&out)])), 3);
    let bad = write(tmp.path(), "bad.csv", "a,b,c\n1,2,3\n");
    assert_eq!(code(&run(&["preprocess", "--input", s(&bad), "--merchant", "11", "--out", s(&out)])), 3);
}
