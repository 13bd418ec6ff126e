use std::path::Path;
use std::process::{Command, Output};

fn survrule(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survrule"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn survrule")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&survrule(d.path(), &["fit", "--bogus"])), 2);
    assert_eq!(code(&survrule(d.path(), &["simulate", "--scenario", "s9"])), 2);
}

#[test]
fn missing_column_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.csv"), "treatment,time,x1\n1,2.0,0\n0,3.0,1\n").unwrap();
    let o = survrule(d.path(), &["fit", "--data", "bad.csv", "--learner", "dea"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = survrule(d.path(), &["fit", "--data", "absent.csv"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn no_splittable_covariate_means_insufficient_candidates() {
    let d = tempfile::tempdir().unwrap();
    let mut csv = String::from("treatment,time,event,x1,x2\n");
    for i in 0..120 {
        let t = 1.0 + (i * 37 % 101) as f64 / 10.0;
        csv += &format!("{},{t},{},1,0.5\n", i % 2, (i % 3 != 0) as u8);
    }
    std::fs::write(d.path().join("flat.csv"), csv).unwrap();
    let o = survrule(
        d.path(),
        &["fit", "--data", "flat.csv", "--learner", "r", "--trees", "20", "--max-trees", "10", "--out", "m.json"],
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn saved_model_predicts_like_the_fit() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(survrule(p, &["simulate", "--n", "300", "--censor-rate", "0.3", "--seed", "2", "--out", "sim"]).status.success());
    let fit = survrule(
        p,
        &[
            "fit", "--data", "sim/data.csv", "--learner", "dr", "--trees", "50", "--max-trees", "40",
            "--permutations", "199", "--alpha", "0.1", "--seed", "5", "--out", "m.json",
        ],
    );
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("m.json")).unwrap()).unwrap();
    for key in ["learner", "horizon", "lambda", "intercept", "rules", "candidates_count", "config"] {
        assert!(model.get(key).is_some(), "model JSON lacks {key}");
    }
    assert!(survrule(p, &["predict", "--model", "m.json", "--data", "sim/data.csv", "--out", "a.csv"]).status.success());
    // shuffle the covariate column order; predictions go by name
    let data = std::fs::read_to_string(p.join("sim/data.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(data.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let order: Vec<usize> = (0..header.len()).rev().collect();
    let mut w = csv::Writer::from_path(p.join("rev.csv")).unwrap();
    w.write_record(order.iter().map(|&i| &header[i])).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        w.write_record(order.iter().map(|&i| &rec[i])).unwrap();
    }
    w.flush().unwrap();
    assert!(survrule(p, &["predict", "--model", "m.json", "--data", "rev.csv", "--out", "b.csv"]).status.success());
    assert_eq!(std::fs::read(p.join("a.csv")).unwrap(), std::fs::read(p.join("b.csv")).unwrap());

    let eval = survrule(p, &["evaluate", "--predictions", "a.csv", "--truth", "sim/truth.csv", "--bins", "10"]);
    assert!(eval.status.success());
    let m: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(m["binned_rmse"].as_f64().unwrap() >= 0.0);
    let report = survrule(p, &["report", "--model", "m.json"]);
    assert!(report.status.success());
}
