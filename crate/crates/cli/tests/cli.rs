use lvm_core::gmm::GmmParams;
use lvm_core::hmm::HmmParams;
use lvm_core::rng::seeded;
use lvm_core::DiscreteDistribution;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn lvm_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lvm"));
    cmd.args(args).env_remove("LVM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn lvm(args: &[&str]) -> Output {
    lvm_env(args, &[])
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit status and the `code` field of the error JSON on standard error.
fn failure(out: &Output) -> (i32, String) {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    let v: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"));
    assert_eq!(v["exit_code"].as_i64(), out.status.code().map(i64::from));
    (out.status.code().unwrap(), v["code"].as_str().unwrap().to_string())
}

fn json(bytes: &[u8]) -> Value {
    let text = std::str::from_utf8(bytes).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "one line: {text}");
    serde_json::from_str(text).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn float_rows(m: &DMatrix<f64>) -> Vec<Vec<String>> {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect())
        .collect()
}

fn two_clusters(path: &Path, n: usize, seed: u64) {
    let params = GmmParams::new(
        DiscreteDistribution::new(vec![0.4, 0.6]).unwrap(),
        vec![DVector::from_vec(vec![-3.0, 0.0]), DVector::from_vec(vec![3.0, 1.0])],
        vec![
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
        ],
    )
    .unwrap();
    let mut rng = seeded(seed);
    let mut x = DMatrix::from_fn(n, 2, |_, _| 0.0);
    for i in 0..n {
        x.set_row(i, &params.sample(&mut rng).1.transpose());
    }
    write_rows(path, &["x0", "x1"], &float_rows(&x));
}

fn hmm_sequences(path: &Path, lens: &[usize], seed: u64) {
    let params = HmmParams::new(
        DiscreteDistribution::new(vec![0.5, 0.5]).unwrap(),
        DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]),
        vec![DVector::from_vec(vec![-2.0]), DVector::from_vec(vec![2.0])],
        vec![DMatrix::identity(1, 1) * 0.5, DMatrix::identity(1, 1)],
    )
    .unwrap();
    let mut rng = seeded(seed);
    let mut rows = Vec::new();
    for (i, t) in lens.iter().enumerate() {
        let (_, obs) = params.sample(*t, &mut rng);
        for r in obs.row_iter() {
            rows.push(vec![format!("s{i}"), format!("{:?}", r[0])]);
        }
    }
    write_rows(path, &["seq_id", "y"], &rows);
}

fn gaussian_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn trace(metrics: &Value) -> Vec<f64> {
    metrics["free_energy_trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect()
}

fn non_increasing(t: &[f64]) -> bool {
    t.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

fn fit_and_eval(dir: &TempDir, model: &str, data: &Path, extra: &[&str]) -> (Value, Value) {
    let out = p(dir, &format!("{model}.json"));
    let mut args = vec![
        "fit",
        "--model",
        model,
        "--data",
        s(data),
        "--out",
        s(&out),
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    let fit = json(&ok(lvm(&args)).stdout);
    let eval = json(&ok(lvm(&["eval", "--model", model, "--data", s(data), "--params", s(&out)])).stdout);
    (fit, eval)
}

#[test]
fn gmm_fit_is_monotone_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "two_clusters.csv");
    two_clusters(&data, 300, 1);
    let (m1, m2) = (p(&dir, "m1.json"), p(&dir, "m2.json"));
    let run = |out: &Path| {
        json(
            &ok(lvm(&[
                "fit",
                "--model",
                "gmm",
                "--k",
                "2",
                "--data",
                s(&data),
                "--seed",
                "1",
                "--out",
                s(out),
            ]))
            .stdout,
        )
    };
    let a = run(&m1);
    let b = run(&m2);
    let t = trace(&a);
    assert!(t.len() > 1);
    assert!(non_increasing(&t), "{t:?}");
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    for key in [
        "loglik_per_sample",
        "free_energy_trace",
        "iterations",
        "seed",
        "converged",
    ] {
        assert_eq!(a[key], b[key], "{key}");
    }
    assert!(a["wall_ms"].as_f64().unwrap() >= 0.0);
    let file: Value = serde_json::from_slice(&std::fs::read(&m1).unwrap()).unwrap();
    assert_eq!(file["schema_version"], 1);
    assert_eq!(file["kind"], "gmm");
    assert_eq!(file["fit"]["seed"], 1);
    assert_eq!(file["fit"]["final_free_energy"], *t.last().unwrap());
    assert_eq!(file["data"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_components_is_a_usage_error() {
    let out = lvm(&["fit", "--model", "gmm", "--k", "0", "--data", "x.csv"]);
    assert_eq!(failure(&out), (2, "UsageError".to_string()));
    let out = lvm(&["fit", "--model", "gmm", "--data", "x.csv"]);
    assert_eq!(failure(&out).0, 2);
    let out = lvm(&["fit", "--model", "nonsense"]);
    assert_eq!(failure(&out), (2, "UsageError".to_string()));
    assert!(lvm(&["--help"]).status.success());
}

#[test]
fn eval_on_training_data_reproduces_the_fit() {
    let dir = TempDir::new().unwrap();
    let mut cases: Vec<(&str, PathBuf, Vec<&str>)> = Vec::new();

    let gmm = p(&dir, "gmm.csv");
    two_clusters(&gmm, 200, 2);
    cases.push(("gmm", gmm.clone(), vec!["--k", "2"]));
    cases.push(("fa", gmm.clone(), vec!["--k", "1"]));
    cases.push(("sc", gmm, vec!["--k", "2", "--max-iter", "10"]));

    let hmm = p(&dir, "hmm.csv");
    hmm_sequences(&hmm, &[60, 40], 3);
    cases.push(("hmm", hmm.clone(), vec!["--k", "2"]));
    cases.push(("ssm", hmm, vec!["--k", "1", "--max-iter", "30"]));

    let driven = p(&dir, "driven.csv");
    let mut rng = seeded(16);
    let (mut z, mut rows) = (0.0f64, Vec::new());
    for t in 0..80 {
        let u = if (t / 10) % 2 == 0 { 1.0 } else { -1.0 };
        let y = z + 0.3 * rng.sample::<f64, _>(StandardNormal);
        rows.push(vec![format!("{u:?}"), format!("{y:?}")]);
        z = 0.8 * z + 0.5 * u + 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    write_rows(&driven, &["u", "y"], &rows);
    cases.push(("ssm", driven, vec!["--k", "1", "--controls", "u", "--max-iter", "30"]));

    let bits = p(&dir, "bits.csv");
    let mut rng = seeded(4);
    let rows: Vec<Vec<String>> = (0..40)
        .map(|_| {
            let on = rng.random::<bool>();
            (0..5)
                .map(|j| if (j < 3) == on { "1" } else { "0" }.to_string())
                .collect()
        })
        .collect();
    write_rows(&bits, &["v0", "v1", "v2", "v3", "v4"], &rows);
    cases.push(("rbm", bits, vec!["--k", "2", "--max-iter", "50"]));

    let reg = p(&dir, "reg.csv");
    let x = gaussian_matrix(100, 2, 5);
    let mut rng = seeded(6);
    let rows: Vec<Vec<String>> = x
        .row_iter()
        .map(|r| {
            let rate = (0.3 * r[0] - 0.2 * r[1] + 0.5f64).exp();
            let y: f64 = rand_distr::Distribution::sample(&rand_distr::Poisson::new(rate).unwrap(), &mut rng);
            vec![format!("{:?}", r[0]), format!("{:?}", r[1]), format!("{y:?}")]
        })
        .collect();
    write_rows(&reg, &["a", "b", "y"], &rows);
    cases.push(("glim", reg, vec!["--family", "poisson"]));

    let mix = p(&dir, "mix.csv");
    let s = gaussian_matrix(300, 2, 7).map(|v| v * v.abs());
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
    write_rows(&mix, &["m0", "m1"], &float_rows(&(s * a.transpose())));
    cases.push(("ica", mix, vec!["--max-iter", "50"]));

    let sym = p(&dir, "sym.csv");
    let rows: Vec<Vec<String>> = [0, 1, 1, 2, 3, 3, 3, 0, 2, 1, 3, 3]
        .iter()
        .map(|v: &i32| vec![v.to_string()])
        .collect();
    write_rows(&sym, &["symbol"], &rows);
    cases.push(("cat", sym, vec!["--k", "2"]));

    for (model, data, extra) in &cases {
        let (fit, eval) = fit_and_eval(&dir, model, data, extra);
        let f = fit["loglik_per_sample"]
            .as_f64()
            .unwrap_or_else(|| panic!("{model}: {fit}"));
        let e = eval["loglik_per_sample"].as_f64().unwrap();
        assert_eq!(f.to_bits(), e.to_bits(), "{model}: fit {f} eval {e}");
        assert_eq!(eval["model"], *model);
        if ["gmm", "fa", "hmm", "ssm", "cat"].contains(model) {
            assert!(non_increasing(&trace(&fit)), "{model}: {:?}", trace(&fit));
        }
    }
}

#[test]
fn catmix_eval_reports_bits_back_costs() {
    let dir = TempDir::new().unwrap();
    let sym = p(&dir, "sym.csv");
    let rows: Vec<Vec<String>> = [0, 0, 1, 2, 2, 2, 3, 1]
        .iter()
        .map(|v: &i32| vec![v.to_string()])
        .collect();
    write_rows(&sym, &["symbol"], &rows);
    let (_, eval) = fit_and_eval(&dir, "cat", &sym, &["--k", "2"]);
    let exact = &eval["bits_back"]["exact"];
    let hard = &eval["bits_back"]["hard"];
    let h = exact["marginal_cross_entropy"].as_f64().unwrap();
    assert!((exact["net_stochastic_cost"].as_f64().unwrap() - h).abs() < 1e-12);
    assert!(exact["proxy_kl"].as_f64().unwrap().abs() < 1e-12);
    assert!(hard["hard_assignment_cost"].as_f64().unwrap() >= h - 1e-12);
    assert!((eval["loglik_per_sample"].as_f64().unwrap() + h).abs() < 1e-12);
}

#[test]
fn single_component_responsibilities_are_one() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 50, 8);
    let model = p(&dir, "m.json");
    ok(lvm(&[
        "fit",
        "--model",
        "gmm",
        "--k",
        "1",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]));
    let out = ok(lvm(&[
        "infer",
        "--model",
        "gmm",
        "--data",
        s(&data),
        "--params",
        s(&model),
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r0"));
    let values: Vec<&str> = lines.collect();
    assert_eq!(values.len(), 50);
    assert!(values.iter().all(|v| *v == "1.0"));
}

#[test]
fn sampling_is_seeded_and_zero_draws_leave_the_header() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 100, 9);
    let model = p(&dir, "m.json");
    ok(lvm(&[
        "fit",
        "--model",
        "gmm",
        "--k",
        "2",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]));
    let empty = ok(lvm(&["sample", "--model", "gmm", "--params", s(&model), "--n", "0"]));
    assert_eq!(String::from_utf8(empty.stdout).unwrap(), "x0,x1\n");
    let draw = |seed: &str| {
        ok(lvm(&[
            "sample",
            "--model",
            "gmm",
            "--params",
            s(&model),
            "--n",
            "25",
            "--seed",
            seed,
        ]))
        .stdout
    };
    let a = draw("3");
    assert_eq!(a, draw("3"));
    assert_ne!(a, draw("4"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 26);

    // The draws are valid input for the same model.
    let drawn = p(&dir, "drawn.csv");
    std::fs::write(&drawn, &text).unwrap();
    ok(lvm(&[
        "eval",
        "--model",
        "gmm",
        "--data",
        s(&drawn),
        "--params",
        s(&model),
    ]));
}

#[test]
fn sequence_models_sample_and_infer_per_sequence() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "seq.csv");
    hmm_sequences(&data, &[30, 20, 10], 10);
    let model = p(&dir, "hmm.json");
    ok(lvm(&[
        "fit",
        "--model",
        "hmm",
        "--k",
        "2",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]));
    let file: Value = serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    assert_eq!(file["params"]["columns_are_source_state"], true);
    for col in file["params"]["trans"].as_array().unwrap() {
        let total: f64 = col.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    let out = ok(lvm(&[
        "infer",
        "--model",
        "hmm",
        "--data",
        s(&data),
        "--params",
        s(&model),
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seq_id,t,p0,p1"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 60);
    assert_eq!(rows[30][..2], ["s1", "0"]);
    for r in &rows {
        let total: f64 = r[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    let out = ok(lvm(&[
        "sample",
        "--model",
        "hmm",
        "--params",
        s(&model),
        "--n",
        "7",
        "--sequences",
        "3",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("seq_id,y\n"));
    assert_eq!(text.lines().count(), 22);
    let drawn = p(&dir, "drawn.csv");
    std::fs::write(&drawn, &text).unwrap();
    let e = json(
        &ok(lvm(&[
            "eval",
            "--model",
            "hmm",
            "--data",
            s(&drawn),
            "--params",
            s(&model),
        ]))
        .stdout,
    );
    assert_eq!(e["rows"], 21);

    let ssm = p(&dir, "ssm.json");
    ok(lvm(&[
        "fit",
        "--model",
        "ssm",
        "--k",
        "1",
        "--data",
        s(&data),
        "--out",
        s(&ssm),
        "--max-iter",
        "20",
    ]));
    let file: Value = serde_json::from_slice(&std::fs::read(&ssm).unwrap()).unwrap();
    for key in ["A", "B", "a", "Q", "C", "c", "R", "mu1", "V1"] {
        assert!(file["params"].get(key).is_some(), "{key}");
    }
    let out = ok(lvm(&[
        "infer",
        "--model",
        "ssm",
        "--data",
        s(&data),
        "--params",
        s(&ssm),
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("seq_id,t,mean0,cov_0_0\n"));
    assert_eq!(text.lines().count(), 61);
}

#[test]
fn every_kind_infers_and_samples() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 80, 11);
    let bits = p(&dir, "bits.csv");
    let rows: Vec<Vec<String>> = (0..20)
        .map(|i| (0..4).map(|j| ((i + j) % 2).to_string()).collect())
        .collect();
    write_rows(&bits, &["v0", "v1", "v2", "v3"], &rows);
    let sym = p(&dir, "sym.csv");
    write_rows(&sym, &["c"], &[vec!["0".into()], vec!["1".into()], vec!["1".into()]]);

    let cases: [(&str, &Path, &[&str], &str); 7] = [
        ("fa", &data, &["--k", "1"], "mean0,cov_0_0"),
        (
            "sc",
            &data,
            &["--k", "2", "--max-iter", "5"],
            "mean0,mean1,cov_0_0,cov_0_1,cov_1_1",
        ),
        ("rbm", &bits, &["--k", "3", "--max-iter", "20"], "h0,h1,h2"),
        ("glim", &data, &[], "mean_x1"),
        ("ica", &data, &["--max-iter", "20"], "s0,s1"),
        ("cat", &sym, &["--k", "2"], "r0,r1"),
        ("gmm", &data, &["--k", "3", "--restarts", "3"], "r0,r1,r2"),
    ];
    for (model, input, extra, header) in cases {
        let file = p(&dir, &format!("{model}.json"));
        let mut args = vec!["fit", "--model", model, "--data", s(input), "--out", s(&file)];
        args.extend_from_slice(extra);
        ok(lvm(&args));
        let out = ok(lvm(&[
            "infer",
            "--model",
            model,
            "--data",
            s(input),
            "--params",
            s(&file),
        ]));
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{model}");
        let rows = std::fs::read_to_string(input).unwrap().lines().count();
        assert_eq!(text.lines().count(), rows, "{model}");

        let mut args = vec![
            "sample",
            "--model",
            model,
            "--params",
            s(&file),
            "--n",
            "5",
            "--gibbs-sweeps",
            "10",
        ];
        if model == "glim" {
            args.extend_from_slice(&["--data", s(input)]);
        }
        let out = ok(lvm(&args));
        assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6, "{model}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 200, 12);
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let model = p(&dir, &format!("m{threads}.json"));
        ok(lvm_env(
            &[
                "fit",
                "--model",
                "gmm",
                "--k",
                "3",
                "--restarts",
                "4",
                "--data",
                s(&data),
                "--out",
                s(&model),
            ],
            &[("LVM_THREADS", threads)],
        ));
        let inferred = ok(lvm_env(
            &["infer", "--model", "gmm", "--data", s(&data), "--params", s(&model)],
            &[("LVM_THREADS", threads)],
        ))
        .stdout;
        files.push((std::fs::read(&model).unwrap(), inferred));
    }
    assert_eq!(files[0], files[1]);
    let out = lvm_env(
        &["fit", "--model", "gmm", "--k", "2", "--data", s(&data)],
        &[("LVM_THREADS", "0")],
    );
    assert_eq!(failure(&out), (2, "UsageError".to_string()));
}

#[test]
fn errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 60, 13);
    let seq = p(&dir, "seq.csv");
    hmm_sequences(&seq, &[30], 14);
    let gmm = p(&dir, "gmm.json");
    let hmm = p(&dir, "hmm.json");
    ok(lvm(&[
        "fit",
        "--model",
        "gmm",
        "--k",
        "2",
        "--data",
        s(&data),
        "--out",
        s(&gmm),
    ]));
    ok(lvm(&[
        "fit",
        "--model",
        "hmm",
        "--k",
        "2",
        "--data",
        s(&seq),
        "--out",
        s(&hmm),
    ]));

    let missing = lvm(&["fit", "--model", "gmm", "--k", "2", "--data", s(&p(&dir, "absent.csv"))]);
    assert_eq!(failure(&missing), (3, "IoError".to_string()));

    let bad = p(&dir, "bad.csv");
    std::fs::write(&bad, "x0,x1\n1,2\n3,oops\n").unwrap();
    let out = lvm(&["fit", "--model", "gmm", "--k", "1", "--data", s(&bad)]);
    assert_eq!(failure(&out), (4, "ParseError".to_string()));
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!((v["row"].as_u64(), v["column"].as_str()), (Some(2), Some("x1")));

    let ragged = p(&dir, "ragged.csv");
    std::fs::write(&ragged, "x0,x1\n1,2\n3\n").unwrap();
    let out = lvm(&["fit", "--model", "gmm", "--k", "1", "--data", s(&ragged)]);
    assert_eq!(failure(&out), (4, "ParseError".to_string()));

    let text = std::fs::read_to_string(&gmm).unwrap();
    let truncated = p(&dir, "truncated.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    let out = lvm(&["eval", "--model", "gmm", "--data", s(&data), "--params", s(&truncated)]);
    assert_eq!(failure(&out), (4, "ParseError".to_string()));

    let future = p(&dir, "future.json");
    std::fs::write(&future, text.replace("\"schema_version\": 1", "\"schema_version\": 99")).unwrap();
    let out = lvm(&["eval", "--model", "gmm", "--data", s(&data), "--params", s(&future)]);
    assert_eq!(failure(&out), (5, "VersionError".to_string()));

    let out = lvm(&["infer", "--model", "gmm", "--data", s(&data), "--params", s(&hmm)]);
    assert_eq!(failure(&out), (6, "KindMismatchError".to_string()));
    let out = lvm(&[
        "fit",
        "--model",
        "gmm",
        "--k",
        "2",
        "--data",
        s(&data),
        "--init",
        s(&hmm),
    ]);
    assert_eq!(failure(&out), (6, "KindMismatchError".to_string()));

    let narrow = p(&dir, "narrow.csv");
    std::fs::write(&narrow, "x0\n1\n2\n").unwrap();
    let out = lvm(&["eval", "--model", "gmm", "--data", s(&narrow), "--params", s(&gmm)]);
    assert_eq!(failure(&out), (10, "DimensionError".to_string()));

    let out = lvm(&["fit", "--model", "gmm", "--k", "100", "--data", s(&data)]);
    assert_eq!(failure(&out), (13, "PreconditionError".to_string()));

    let out = lvm(&["fit", "--model", "rbm", "--k", "2", "--data", s(&data)]);
    assert_eq!(failure(&out), (13, "PreconditionError".to_string()));
}

#[test]
fn warm_start_continues_from_a_model_file() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    two_clusters(&data, 150, 15);
    let first = p(&dir, "first.json");
    let a = json(
        &ok(lvm(&[
            "fit",
            "--model",
            "gmm",
            "--k",
            "2",
            "--data",
            s(&data),
            "--out",
            s(&first),
            "--max-iter",
            "3",
        ]))
        .stdout,
    );
    let b = json(
        &ok(lvm(&[
            "fit",
            "--model",
            "gmm",
            "--k",
            "2",
            "--data",
            s(&data),
            "--init",
            s(&first),
            "--max-iter",
            "3",
        ]))
        .stdout,
    );
    let (ta, tb) = (trace(&a), trace(&b));
    assert!(tb[0] <= *ta.last().unwrap() + 1e-12);
    assert!(non_increasing(&tb));
}
