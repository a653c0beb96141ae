use std::path::Path;

use molpretrain::evalbench::{
    average_ranks, experiment_transfer, export_embeddings, finetune, linear_fit, nested_subsets, roc_auc, rmse,
    spearman, write_transfer_csv, EmbedMode, Encoder, EvalError, FinetuneGrid, FinetuneSpec, GridPoint, MetricReport,
    TaskType, TestSet, MAX_DISTANCE_ROWS, REPORT_SCHEMA_VERSION,
};
use molpretrain::chem::canonicalize_smiles;
use molpretrain::model::ModelConfig;
use molpretrain::synth::generate;
use molpretrain::tokenizer::Vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut won, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    won += 1.0;
                } else if scores[i] == scores[j] {
                    won += 0.5;
                }
            }
        }
    }
    won / pairs
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
    }
}

#[test]
fn fit_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(3..20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        // [n  sx; sx sxx] [b; a] = [sy; sxy] by Cramer's rule
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let syy: f64 = y.iter().map(|v| v * v).sum();
        let det = n as f64 * sxx - sx * sx;
        let slope = (n as f64 * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let r = (n as f64 * sxy - sx * sy) / (det.sqrt() * (n as f64 * syy - sy * sy).sqrt());
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - slope).abs() < 1e-9);
        assert!((f.intercept - intercept).abs() < 1e-9);
        assert!((f.r - r).abs() < 1e-9);
        let pred: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
        let want = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((rmse(&pred, &y).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn spearman_matches_rank_pair_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        // rank by counting smaller elements; no ties with continuous draws
        let rank = |v: &[f64], i: usize| 1.0 + v.iter().filter(|&&w| w < v[i]).count() as f64;
        let d2: f64 = (0..n).map(|i| (rank(&x, i) - rank(&y, i)).powi(2)).sum();
        let nf = n as f64;
        let want = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-12);
        assert_eq!(average_ranks(&x), (0..n).map(|i| rank(&x, i)).collect::<Vec<_>>());
    }
}

fn nitrogen(s: &str) -> bool {
    s.contains('N') || s.contains('n')
}

/// Rows with a nitrogen are positive; balanced 30/10/10 split by hand.
fn toy_split(dir: &Path) -> Vocab {
    let pool = generate(400, 17);
    let pos: Vec<&String> = pool.iter().filter(|s| nitrogen(s)).take(25).collect();
    let neg: Vec<&String> = pool.iter().filter(|s| !nitrogen(s)).take(25).collect();
    std::fs::create_dir_all(dir).unwrap();
    let parts = [("train", 0..15), ("valid", 15..20), ("test", 20..25)];
    for (name, range) in parts {
        let mut text = String::from("smiles,label\n");
        for i in range {
            text.push_str(&format!("{},1\n{},0\n", pos[i], neg[i]));
        }
        std::fs::write(dir.join(format!("{name}.csv")), text).unwrap();
    }
    Vocab::build(pool.iter().map(String::as_str)).unwrap()
}

fn toy_spec(dir: &Path) -> FinetuneSpec {
    let mut spec = FinetuneSpec::new(dir, TaskType::Binary);
    spec.grid = FinetuneGrid::single(1e-3, 0, 8);
    spec.max_epochs = 30;
    spec.patience_epochs = 10;
    spec
}

fn small_model(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        hidden_size: 32,
        num_attention_heads: 2,
        num_hidden_layers: 1,
        intermediate_size: 64,
        dropout: 0.0,
        ..ModelConfig::tiny(vocab.len(), 12)
    }
}

#[test]
fn random_encoder_learns_separable_task_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("toy");
    let vocab = toy_split(&dir);
    let enc = Encoder::random(&small_model(&vocab), vocab, 0).unwrap();
    let spec = toy_spec(&dir);
    let a = finetune(&spec, &enc).unwrap();
    assert_eq!(a.metric, "ROC-AUC");
    assert!(a.value > 0.9, "{a:?}");
    assert_eq!(a.grid_points, 1);
    assert_eq!(a.config, GridPoint { lr: 1e-3, seed: 0, batch_size: 8 });
    assert_eq!((a.train_size, a.valid_size, a.test_size), (30, 10, 10));
    assert_eq!(a.schema_version, REPORT_SCHEMA_VERSION);
    let b = finetune(&spec, &enc).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn regression_reports_rmse_in_label_units() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("reg");
    std::fs::create_dir_all(&dir).unwrap();
    let pool = generate(60, 23);
    for (name, range) in [("train", 0..40), ("valid", 40..50), ("test", 50..60)] {
        let mut text = String::from("smiles,label\n");
        for s in &pool[range] {
            // label in the hundreds so a normalized-scale RMSE would be obvious
            text.push_str(&format!("{s},{}\n", 300.0 + 10.0 * s.len() as f64));
        }
        std::fs::write(dir.join(format!("{name}.csv")), text).unwrap();
    }
    let vocab = Vocab::build(pool.iter().map(String::as_str)).unwrap();
    let enc = Encoder::random(&small_model(&vocab), vocab, 1).unwrap();
    let mut spec = FinetuneSpec::new(&dir, TaskType::Regression);
    spec.grid = FinetuneGrid::single(1e-3, 0, 8);
    spec.max_epochs = 15;
    let r = finetune(&spec, &enc).unwrap();
    assert_eq!(r.metric, "RMSE");
    // a mean predictor scores roughly the label spread (tens of units)
    assert!(r.value > 1.0 && r.value < 200.0, "{r:?}");
}

#[test]
fn test_labels_are_read_only_when_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("toy");
    toy_split(&dir);
    let path = dir.join("test.csv");
    let set = TestSet::open(&path).unwrap();
    assert_eq!(set.len(), 10);
    let text = std::fs::read_to_string(&path).unwrap().replace(",1\n", ",7\n");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(set.score(&[0.5; 10], TaskType::Binary), Err(EvalError::BadLabel(_))));
}

#[test]
fn single_class_train_split_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("toy");
    let vocab = toy_split(&dir);
    let text = std::fs::read_to_string(dir.join("train.csv")).unwrap().replace(",0\n", ",1\n");
    std::fs::write(dir.join("train.csv"), text).unwrap();
    let enc = Encoder::random(&small_model(&vocab), vocab, 0).unwrap();
    assert!(matches!(finetune(&toy_spec(&dir), &enc), Err(EvalError::SingleClass)));
}

#[test]
fn embeddings_cls_and_ecfp() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.csv");
    std::fs::write(&input, "smiles,label\nCCO,1\nc1ccccc1O,0\nCCO,1\nC1CC,0\n[Na+].CC(=O)[O-],1\n").unwrap();
    let vocab = Vocab::build(["CCO", "c1ccccc1O", "CC(=O)[O-]"]).unwrap();
    let cfg = small_model(&vocab);
    let enc = Encoder::random(&cfg, vocab, 0).unwrap();

    let out = tmp.path().join("cls.csv");
    let s = export_embeddings(&input, EmbedMode::Cls, Some(&enc), &out, None).unwrap();
    assert_eq!((s.rows, s.width, s.rejects.len()), (4, cfg.hidden_size, 1));
    assert_eq!(s.rejects[0].row, 3);
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.headers().unwrap().len(), 3 + cfg.hidden_size);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows[0].iter().skip(3).collect::<Vec<_>>(), rows[2].iter().skip(3).collect::<Vec<_>>());
    // salt stripped to its largest fragment
    assert_eq!(rows[3][1], canonicalize_smiles("CC(=O)[O-]").unwrap());

    let out = tmp.path().join("ecfp.csv");
    let dist = tmp.path().join("dist.csv");
    let mode = EmbedMode::Ecfp { radius: 2, n_bits: 256 };
    let s = export_embeddings(&input, mode, None, &out, Some(&dist)).unwrap();
    assert_eq!(s.width, 256);
    let m: Vec<Vec<f64>> = std::fs::read_to_string(&dist)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(m.len(), 4);
    for i in 0..4 {
        assert_eq!(m[i][i], 0.0);
        for j in 0..4 {
            assert_eq!(m[i][j], m[j][i]);
        }
    }
    assert_eq!(m[0][2], 0.0);
    assert!(m[0][1] > 0.0);

    assert!(export_embeddings(&input, EmbedMode::Cls, None, &out, None).is_err());
}

#[test]
fn distance_matrix_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("big.smi");
    std::fs::write(&input, "C\n".repeat(MAX_DISTANCE_ROWS + 1)).unwrap();
    let mode = EmbedMode::Ecfp { radius: 1, n_bits: 64 };
    let r = export_embeddings(&input, mode, None, &tmp.path().join("o.csv"), Some(&tmp.path().join("d.csv")));
    assert!(matches!(r, Err(EvalError::TooManyRows { n, .. }) if n == MAX_DISTANCE_ROWS + 1));
}

fn report(dataset: &str, loss: Option<f64>, value: f64) -> MetricReport {
    MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: dataset.into(),
        task: TaskType::Regression,
        metric: "RMSE".into(),
        value,
        train_size: 8,
        valid_size: 1,
        test_size: 1,
        config: GridPoint { lr: 1e-4, seed: 0, batch_size: 16 },
        best_epoch: 1,
        epochs_run: 2,
        valid_loss: 0.5,
        grid_points: 1,
        diverged_points: 0,
        encoder: "run".into(),
        pretrain_loss: loss,
    }
}

#[test]
fn transfer_fits_per_dataset() {
    let reports = vec![
        report("a", Some(1.0), 2.0),
        report("a", Some(2.0), 4.0),
        report("a", Some(3.0), 6.0),
        report("b", Some(1.0), 1.0),
        report("b", None, 9.0),
    ];
    let (rows, fits) = experiment_transfer(&reports);
    assert_eq!(rows.len(), 4);
    assert_eq!(fits.len(), 2);
    assert_eq!((fits[0].slope, fits[0].intercept), (Some(2.0), Some(0.0)));
    assert!((fits[0].r.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!((fits[1].points, fits[1].slope), (1, None));
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("t.csv");
    write_transfer_csv(&rows, &fits, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("dataset,metric,encoder,pretrain_loss,value,slope,intercept,r\n"));
}

#[test]
fn subsets_are_nested() {
    let corpus: Vec<String> = generate(50, 1);
    let s = nested_subsets(&corpus, &[10, 30, 50]).unwrap();
    assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), vec![10, 30, 50]);
    assert!(nested_subsets(&corpus, &[10, 60]).is_err());
    assert!(nested_subsets(&corpus, &[0]).is_err());
}
