//! Every on-disk format written by the CLI read back and compared.

use distdf::analysis::partial_correlation;
use distdf::cli::ExperimentConfig;
use distdf::data::{generate_ar, load_csv, write_csv, ArSpec, Series};
use distdf::linalg::Matrix;
use distdf::model::{Checkpoint, Forecaster, ModelKind};
use distdf::oracle::{run_oracle, Suite};
use distdf::output::{write_json, write_jsonl};
use distdf::train::{fit, SplitData, TrainConfig};
use serde_json::Value;

fn parse_csv(path: &std::path::Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn series_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = Series::new(
        Matrix::from_fn(5, 2, |r, c| (r as f64 + 0.1) / (c as f64 + 3.0)),
        vec!["a".into(), "b".into()],
        Some((0..5).map(|i| format!("2016-07-01 0{i}:00:00")).collect()),
    )
    .unwrap();
    let p = dir.path().join("s.csv");
    write_csv(&p, &s).unwrap();
    assert_eq!(load_csv(&p).unwrap(), s);

    let g = generate_ar(&ArSpec {
        coefficients: vec![0.5],
        noise_std: 0.3,
        length: 50,
        seed: 4,
    })
    .unwrap();
    write_csv(&p, &g).unwrap();
    assert_eq!(load_csv(&p).unwrap(), g);
}

#[test]
fn checkpoint_text() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Linear, ModelKind::Mlp { hidden: 3 }] {
        let ck = Checkpoint {
            model: Forecaster::init(kind, 5, 2, 9, 0.7).unwrap(),
            seed: 9,
        };
        let p = dir.path().join("ck.txt");
        ck.write(&p).unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap(), ck);
    }
}

fn small_data() -> SplitData {
    let s = generate_ar(&ArSpec {
        coefficients: vec![0.6],
        noise_std: 1.0,
        length: 300,
        seed: 3,
    })
    .unwrap();
    SplitData {
        train: s.slice(0, 200),
        val: s.slice(200, 250),
        test: s.slice(250, 300),
    }
}

#[test]
fn epoch_log_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (_, record) = fit(&small_data(), 6, 3, &cfg).unwrap();
    let p = dir.path().join("log.jsonl");
    write_jsonl(&p, &record.epochs).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), record.epochs.len());
    for (v, e) in lines.iter().zip(&record.epochs) {
        assert_eq!(v["epoch"].as_u64().unwrap() as usize, e.epoch);
        assert_eq!(v["train"]["total"].as_f64().unwrap(), e.train.total);
        assert_eq!(v["train"]["dist"].as_f64().unwrap(), e.train.dist);
        assert_eq!(v["validation"]["mse"].as_f64().unwrap(), e.validation.mse);
        assert_eq!(v["improved"].as_bool().unwrap(), e.improved);
        assert_eq!(v["wall_ms"].as_f64().unwrap(), e.wall_ms);
    }
}

#[test]
fn oracle_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_oracle(&[Suite::Equality, Suite::Assignment], 5, 64).unwrap();
    let p = dir.path().join("oracle.json");
    write_json(&p, &r).unwrap();
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["seed"].as_u64(), Some(5));
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), r.checks.len());
    for (c, orig) in checks.iter().zip(&r.checks) {
        assert_eq!(c["name"].as_str().unwrap(), orig.name);
        assert_eq!(c["worst"].as_f64().unwrap(), orig.worst);
        assert_eq!(c["tolerance"].as_f64().unwrap(), orig.tolerance);
        assert_eq!(c["cases"].as_u64().unwrap() as usize, orig.cases);
    }
}

#[test]
fn partial_correlation_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_ar(&ArSpec {
        coefficients: vec![0.7],
        noise_std: 1.0,
        length: 400,
        seed: 8,
    })
    .unwrap();
    let w = &distdf::data::make_windows(&s, 5, 4, 1).unwrap()[0];
    let pc = partial_correlation(&w.history, &w.label).unwrap();
    let p = dir.path().join("pc.csv");
    pc.write_csv(&p).unwrap();
    let (header, rows) = parse_csv(&p);
    assert_eq!(header, ["t1", "t2", "t3", "t4"]);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.as_slice(), pc.matrix.row(r));
    }
}

#[test]
fn experiment_config_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.model = ModelKind::Mlp { hidden: 16 };
    cfg.train.loss.alpha = 0.05;
    cfg.train.init_scale = Some(0.25);
    cfg.sweep.alphas = vec![0.0, 0.1];
    let jp = dir.path().join("c.json");
    write_json(&jp, &cfg).unwrap();
    assert_eq!(ExperimentConfig::load(&jp).unwrap(), cfg);
    let tp = dir.path().join("c.toml");
    std::fs::write(&tp, toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&tp).unwrap(), cfg);
}
