//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints its PASS/FAIL line; exits nonzero if any fails.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use survrule::km::KaplanMeier;
use survrule::lasso::{fit_lasso_default, fit_lasso_path, lambda_max, weighted_least_squares, Design, LassoConfig};
use survrule::metrics::median;
use survrule::nuisance::oracle_nuisance;
use survrule::pseudo::build_pseudo;
use survrule::rng;
use survrule::rulegen::{fit_ctree, CTreeConfig};
use survrule::simgen::{simulate, true_cate, CensoringParam, CensoringSpec, ScenarioId, SimScenario, Setting};
use survrule::{run_study, CovariateKind, HorizonRule, Learner, StudyConfig, StudyResults};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn oracle_unbiasedness() -> Outcome {
    let scn = SimScenario::builtin(ScenarioId::S1, Setting::Independent, CensoringSpec::None, 1);
    let trial = simulate(&scn, 20_000, &CensoringParam::Never, 2024).unwrap();
    let d = trial.dataset;
    let h = HorizonRule::PooledMedian.resolve(&d).unwrap();
    let truth = true_cate(d.covariates(), &scn, h.t_star());
    let ate = truth.tau.iter().sum::<f64>() / d.n() as f64;
    let nf = oracle_nuisance(&truth, None, d.covariates(), 0.01);
    let mut ok = true;
    let mut parts = Vec::new();
    for learner in [Learner::Dr, Learner::Dea, Learner::R] {
        let s = build_pseudo(&d, h, &nf, learner).unwrap();
        // DR uses the plain mean; the others weight by w^M
        let w: Vec<f64> = s.iter().map(|p| if learner == Learner::Dr { 1.0 } else { p.w_method }).collect();
        let sw: f64 = w.iter().sum();
        let m = s.iter().zip(&w).map(|(p, w)| w * p.y_star).sum::<f64>() / sw;
        let se = (s.iter().zip(&w).map(|(p, w)| (w * (p.y_star - m)).powi(2)).sum::<f64>()).sqrt() / sw;
        let z = (m - ate) / se;
        ok &= z.abs() <= 3.0;
        parts.push(format!("{learner} {m:.4} (se {se:.4}, z {z:+.2})"));
    }
    outcome(ok, format!("true ATE {ate:.4}; {}", parts.join("; ")))
}

// ---------------------------------------------------------------- 2-4, 8

fn study_config() -> StudyConfig {
    let mut cfg = StudyConfig {
        scenario: ScenarioId::S1,
        setting: Setting::Independent,
        censoring: CensoringSpec::IndependentExponential { target_rate: 0.3 },
        n_train: 1000,
        n_test: 10_000,
        replicates: 20,
        learners: vec![Learner::Dr, Learner::Dea],
        seed: 20_240_601,
        ..Default::default()
    };
    cfg.fit.ctree.alpha = 0.1;
    cfg.fit.ctree.bonferroni = true;
    cfg
}

fn sparsity(st: &StudyResults) -> Outcome {
    let dea = st.selection(Learner::Dea);
    let dr = st.selection(Learner::Dr);
    let (md, mr) = (dea.median_l(), dr.median_l());
    let pass = (1.0..=15.0).contains(&md) && mr > md;
    outcome(
        pass,
        format!(
            "DEA median L {md} ({}, {}); DR median L {mr} ({}, {})",
            dea.min_l(),
            dea.max_l(),
            dr.min_l(),
            dr.max_l()
        ),
    )
}

fn variable_detection(st: &StudyResults) -> Outcome {
    let sel = st.selection(Learner::Dea);
    let reps = sel.replicates as f64;
    let freq = |j: usize| sel.count(&format!("X{j}")) as f64 / reps;
    let noise = [3, 4, 5, 8, 9, 10];
    let worst = noise.iter().map(|&j| freq(j)).fold(0.0, f64::max);
    let pass = freq(1) >= 0.8 && worst <= 0.3;
    let all: Vec<String> = (1..=10).map(|j| format!("X{j} {:.0}%", 100.0 * freq(j))).collect();
    outcome(pass, format!("DEA selection: {}; max noise {:.0}%", all.join(", "), 100.0 * worst))
}

fn prediction_quality(st: &StudyResults) -> Outcome {
    let mut rho = Vec::new();
    let mut bias = Vec::new();
    for run in st.runs_for(Learner::Dea) {
        if let Ok((_, m)) = &run.outcome {
            // an intercept-only model has no defined rank correlation
            rho.push(m.spearman.unwrap_or(0.0));
            bias.push(m.bias.abs());
        }
    }
    if rho.is_empty() {
        return outcome(false, "no successful DEA fits");
    }
    let (r, b) = (median(&mut rho), median(&mut bias));
    outcome(r >= 0.6 && b <= 0.1, format!("DEA median Spearman {r:.3}, median |bias| {b:.4} over {} fits", rho.len()))
}

fn rule_hygiene(st: &StudyResults) -> Outcome {
    let mut models = 0;
    let mut rules = 0;
    let mut bad = Vec::new();
    for rep in &st.replicates {
        let Some(d) = &rep.train else { continue };
        for run in &rep.runs {
            let Ok((fit, _)) = &run.outcome else { continue };
            models += 1;
            let x = fit.complete_covariates(d);
            let n = x.nrows();
            let mut seen_keys = HashSet::new();
            let mut vectors: Vec<Vec<bool>> = Vec::new();
            for c in &fit.candidates {
                rules += 1;
                let v: Vec<bool> = (0..n).map(|i| c.rule.holds(x.row(i))).collect();
                let s = v.iter().filter(|&&b| b).count();
                if s == 0 || s == n {
                    bad.push(format!("rep {} {}: constant rule", rep.index, run.learner));
                }
                if !seen_keys.insert(format!("{:?}", c.rule)) {
                    bad.push(format!("rep {} {}: canonical duplicate", rep.index, run.learner));
                }
                for u in &vectors {
                    if *u == v || u.iter().zip(&v).all(|(a, b)| a != b) {
                        bad.push(format!("rep {} {}: duplicate or complementary pair", rep.index, run.learner));
                    }
                }
                vectors.push(v);
            }
        }
    }
    let pass = bad.is_empty() && models > 0;
    let detail = if pass {
        format!("{rules} candidate rules in {models} models, no violations")
    } else {
        format!("{} violations in {models} models, first: {}", bad.len(), bad.first().map_or("none", |s| s.as_str()))
    };
    outcome(pass, detail)
}

// ---------------------------------------------------------------- 5

fn generator_closed_form() -> Outcome {
    let scn = SimScenario::builtin(ScenarioId::S1, Setting::Independent, CensoringSpec::None, 1);
    let row = [1.0, 0.0, 1.0, 0.0, 1.0, 0.3, -0.5, 1.2, 0.0, -1.0];
    let draws = 1_000_000;
    let mut worst = 0.0f64;
    for arm in 0..2u8 {
        let scale = if arm == 0 { scn.scale0 } else { scn.scale1 };
        let times = [scale / 2.0, scale, 2.0 * scale];
        let mut above = [0usize; 3];
        let mut r = rng::stream(5, &[arm as u64]);
        for _ in 0..draws {
            let t = scn.event_time(arm, &row, 1.0 - r.random::<f64>());
            for (k, &s) in times.iter().enumerate() {
                above[k] += (t > s) as usize;
            }
        }
        let f = scn.linear_predictor(arm, &row);
        for (k, &t) in times.iter().enumerate() {
            let exact = (-(t / scale).powf(scn.shape) * f.exp()).exp();
            worst = worst.max((above[k] as f64 / draws as f64 - exact).abs());
        }
    }
    outcome(worst <= 0.005, format!("max |empirical - closed form| = {worst:.5} over 2 arms x 3 times"))
}

// ---------------------------------------------------------------- 6

fn estimator_oracles() -> Outcome {
    let mut fails = Vec::new();

    let km = KaplanMeier::survival_curve(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1]);
    if (1..=4).map(|t| km.eval(t as f64)).collect::<Vec<_>>() != vec![0.75, 0.5, 0.25, 0.0] || km.median() != Some(2.0) {
        fails.push("KM all-events fixture");
    }
    let time = [2.0, 3.0, 5.0, 7.0];
    let ev = [1, 0, 1, 1];
    let s = KaplanMeier::survival_curve(&time, &ev);
    if [s.eval(2.0), s.eval(3.0), s.eval(5.0), s.eval(7.0)] != [0.75, 0.75, 0.375, 0.0] {
        fails.push("KM censored fixture");
    }
    let g = KaplanMeier::censoring_curve(&time, &ev);
    if g.eval(2.0) != 1.0 || g.eval(3.0) != 2.0 / 3.0 || g.eval(7.0) != 2.0 / 3.0 {
        fails.push("censoring KM fixture");
    }

    let n = 60;
    let mut r = rng::stream(31, &[]);
    let cols: Vec<Vec<u32>> = (0..5).map(|_| (0..n as u32).filter(|_| r.random_bool(0.45)).collect()).collect();
    let design = Design::from_columns(n, cols);
    let dense = design.to_dense();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut r);
            0.1 + 0.5 * dense[[i, 0]] - 0.3 * dense[[i, 3]] + 0.3 * e
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| 0.2 + r.random::<f64>() * 2.0).collect();

    let tight = LassoConfig { tol: 1e-14, ..Default::default() };
    let p0 = fit_lasso_path(&design, &y, &w, &[0.0], &tight).unwrap();
    let (b0, b) = weighted_least_squares(&dense, &y, &w).unwrap();
    let ols_err = b.iter().zip(&p0.betas[0]).map(|(a, c)| (a - c).abs()).fold((p0.intercepts[0] - b0).abs(), f64::max);
    if ols_err > 1e-8 {
        fails.push("lambda = 0 vs normal equations");
    }

    let path = fit_lasso_default(&design, &y, &w, &LassoConfig::default()).unwrap();
    let mut kkt = 0.0f64;
    for (j, &lambda) in path.lambdas.iter().enumerate() {
        let pred = design.predict(path.intercepts[j], &path.betas[j]);
        for k in 0..design.k() {
            let grad = 2.0 / n as f64
                * design.column(k).iter().map(|&i| w[i as usize] * (y[i as usize] - pred[i as usize])).sum::<f64>();
            let beta = path.betas[j][k];
            let v = if beta == 0.0 { (grad.abs() - lambda).max(0.0) } else { (grad - lambda * beta.signum()).abs() };
            kkt = kkt.max(v);
        }
    }
    if kkt > 1e-6 {
        fails.push("KKT along the path");
    }

    let lm = lambda_max(&design, &y, &w);
    let null = fit_lasso_path(&design, &y, &w, &[lm, 1.5 * lm], &LassoConfig::default()).unwrap();
    let ybar = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    if null.betas.iter().flatten().any(|&v| v != 0.0) || null.intercepts.iter().any(|&v| (v - ybar).abs() > 1e-15) {
        fails.push("null model at lambda_max");
    }

    let detail = format!("lambda=0 max error {ols_err:.2e}, max KKT violation {kkt:.2e}");
    if fails.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failed: {}", fails.join(", ")))
    }
}

// ---------------------------------------------------------------- 7

fn ctree_size() -> Outcome {
    let n = 200;
    let p = 10;
    let kinds: Vec<CovariateKind> =
        (0..p).map(|j| if j < 5 { CovariateKind::Binary } else { CovariateKind::Continuous }).collect();
    let cfg = CTreeConfig { alpha: 0.01, bonferroni: true, max_depth: 1, ..Default::default() };
    let trials = 200;
    let mut no_split = 0;
    for t in 0..trials {
        let mut r = rng::stream(404, &[t]);
        let x = Array2::from_shape_fn((n, p), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut r);
            if j < 5 { (z > 0.0) as u8 as f64 } else { z }
        });
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let rows: Vec<usize> = (0..n).collect();
        let tree = fit_ctree(&x, &kinds, &rows, &y, &vec![1.0; n], &cfg, t);
        no_split += tree.is_root_only() as usize;
    }
    let frac = no_split as f64 / trials as f64;
    outcome(frac >= 0.95, format!("root did not split in {no_split}/{trials} trials ({:.1}%)", 100.0 * frac))
}

// ---------------------------------------------------------------- 9

fn run(threads: usize, dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_survrule"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .current_dir(dir)
        .output()
        .expect("spawn survrule");
    assert!(out.status.success(), "survrule {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn collect_files(dir: &Path, out: &mut Vec<(String, Vec<u8>)>, prefix: &str) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        let name = format!("{prefix}/{}", p.file_name().unwrap().to_string_lossy());
        if p.is_dir() {
            collect_files(&p, out, &name);
        } else {
            out.push((name, std::fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let small = [
        "--trees", "60", "--max-trees", "60", "--permutations", "199", "--alpha", "0.1", "--bonferroni",
    ];
    let snapshot = |threads: usize| {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        let mut stdout = Vec::new();
        stdout.extend(run(threads, d, &["simulate", "--n", "400", "--censor-rate", "0.3", "--seed", "3", "--out", "sim"]));
        for learner in ["dr", "dea"] {
            let model = format!("{learner}.json");
            let mut args = vec!["fit", "--data", "sim/data.csv", "--learner", learner, "--seed", "9", "--out", &model];
            args.extend(small);
            stdout.extend(run(threads, d, &args));
            let pred = format!("{learner}_pred.csv");
            stdout.extend(run(threads, d, &["predict", "--model", &model, "--data", "sim/data.csv", "--out", &pred]));
            stdout.extend(run(threads, d, &["evaluate", "--predictions", &pred, "--truth", "sim/truth.csv", "--bins", "10"]));
            stdout.extend(run(threads, d, &["report", "--model", &model]));
        }
        let mut args = vec![
            "replicate", "--replicates", "3", "--n-train", "300", "--n-test", "500", "--bins", "10", "--learners",
            "dr,dea", "--censor-rate", "0.3", "--seed", "4", "--out", "study",
        ];
        args.extend(small);
        stdout.extend(run(threads, d, &args));
        let mut files = Vec::new();
        collect_files(d, &mut files, "");
        files.push(("<stdout>".into(), stdout));
        files
    };
    let base = snapshot(1);
    let mut diffs = Vec::new();
    for threads in [4, 8] {
        let other = snapshot(threads);
        if other.len() != base.len() {
            diffs.push(format!("{threads} threads: file set differs"));
            continue;
        }
        for (a, b) in base.iter().zip(&other) {
            if a != b {
                diffs.push(format!("{threads} threads: {} differs", a.0));
            }
        }
    }
    if diffs.is_empty() {
        outcome(true, format!("{} outputs byte-identical at 1, 4 and 8 threads", base.len()))
    } else {
        outcome(false, diffs.join("; "))
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {name}: {status} [{:.1}s] {}", t0.elapsed().as_secs_f64(), o.detail);
        failed += !o.pass as usize;
    };
    report(1, "oracle unbiasedness", &oracle_unbiasedness);
    report(5, "generator closed form", &generator_closed_form);
    report(6, "estimator oracles", &estimator_oracles);
    report(7, "ctree size of test", &ctree_size);
    report(9, "determinism", &determinism);

    let t0 = Instant::now();
    let study = run_study(&study_config()).expect("study runs");
    println!("study: 20 replicates of S1 (DR, DEA) in {:.1}s", t0.elapsed().as_secs_f64());
    report(2, "DEA sparsity", &|| sparsity(&study));
    report(3, "variable detection", &|| variable_detection(&study));
    report(4, "prediction quality", &|| prediction_quality(&study));
    report(8, "rule hygiene", &|| rule_hygiene(&study));

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
