use tscnet::arch::{ArchitectureSpec, LayerGraph, VariantKind};
use tscnet::data::{generate_dataset, Dataset, DatasetConfig};
use tscnet::train::*;
use tscnet::Error;

fn tiny_config(variant: VariantKind, ote: bool) -> TrainConfig {
    TrainConfig {
        arch: ArchitectureSpec::new(variant, 2, 4, 3).with_ote(ote),
        epochs: 3,
        runs: 2,
        batch_size: 4,
        dataset: DatasetConfig { height: 16, width: 16, train_samples: 12, val_samples: 6, ..DatasetConfig::default() },
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, seed: u64) -> (RunRecord, LayerGraph) {
    let data = cfg.load_data().unwrap();
    train_run(cfg, &data, seed, &mut |_| {}).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut cfg = tiny_config(VariantKind::TscNet, true);
    cfg.learning_rate = 0.0;
    let (record, trained) = run(&cfg, 3);
    let data = cfg.load_data().unwrap();
    // A one-epoch run with the same seed starts from the same weights.
    let mut one = cfg.clone();
    one.epochs = 1;
    let (_, fresh) = train_run(&one, &data, 3, &mut |_| {}).unwrap();
    for (a, b) in trained.params().iter().zip(fresh.params()) {
        assert_eq!(a.data, b.data, "{}", a.name);
    }
    assert!(record.train_loss.windows(2).all(|w| w[0] == w[1]), "{:?}", record.train_loss);
    assert!(record.val_miou.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(VariantKind::UNet, false);
    let (a, ga) = run(&cfg, 1);
    let (b, gb) = run(&cfg, 1);
    assert_eq!(a.train_loss, b.train_loss);
    assert_eq!(a.val_miou, b.val_miou);
    assert_eq!(ga.params(), gb.params());
    let (c, _) = run(&cfg, 2);
    assert_ne!(a.train_loss, c.train_loss);
}

#[test]
fn overfits_a_single_sample() {
    let ds = DatasetConfig { height: 16, width: 16, train_samples: 1, val_samples: 1, ..DatasetConfig::default() };
    let data = generate_dataset(&ds).unwrap();
    let data = Dataset { train: data.train.clone(), val: data.train };
    let cfg = TrainConfig {
        arch: ArchitectureSpec::new(VariantKind::UNet, 2, 8, 3).with_ote(true),
        epochs: 50,
        batch_size: 1,
        learning_rate: 1e-2,
        dataset: ds,
        ..TrainConfig::default()
    };
    let (record, _) = train_run(&cfg, &data, 0, &mut |_| {}).unwrap();
    assert_eq!(record.max_val_miou, 1.0, "{:?}", record.val_miou);
    assert!(record.train_loss.last().unwrap() < &record.train_loss[0]);
}

#[test]
fn untrained_network_scores_poorly() {
    let cfg = tiny_config(VariantKind::BNet, false);
    let data = cfg.load_data().unwrap();
    let g = LayerGraph::build(&cfg.arch, 11).unwrap();
    assert!(evaluate(&g, &data.val).unwrap().mean < 0.5);
}

#[test]
fn empty_sets_are_errors() {
    let cfg = tiny_config(VariantKind::UNet, false);
    let empty = Dataset { train: Vec::new(), val: Vec::new() };
    assert!(matches!(train_run(&cfg, &empty, 0, &mut |_| {}), Err(Error::InvalidArgument(_))));
    let g = LayerGraph::build(&cfg.arch, 0).unwrap();
    assert!(evaluate(&g, &[]).is_err());
}

#[test]
fn divergence_is_reported() {
    let mut cfg = tiny_config(VariantKind::UNet, false);
    cfg.learning_rate = 1e300;
    cfg.optimizer = OptimizerKind::SGD;
    cfg.epochs = 5;
    let data = cfg.load_data().unwrap();
    match train_run(&cfg, &data, 0, &mut |_| {}) {
        Err(Error::Divergence { epoch, batch }) => assert!(epoch >= 1 && batch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.0)),
    }
}

#[test]
fn ablation_shape_and_summary() {
    let cfg = tiny_config(VariantKind::UNet, false);
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    let result = ablation(&cfg, &Condition::ABLATION, &[0, 1], &mut |_, _, _| seen += 1).unwrap();
    assert_eq!(seen, 4 * 2 * cfg.epochs);
    result.write(dir.path()).unwrap();

    let curves: Vec<CurveRow> = read_csv(&dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.len(), 4 * 2 * cfg.epochs);
    let labels: Vec<String> = Condition::ABLATION.iter().map(|c| c.to_string()).collect();
    assert_eq!(labels, ["unet-no-ote", "unet+ote", "tscnet-no-ote", "tscnet+ote"]);

    // The summary can be recomputed from the curves alone.
    let summary: Vec<SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 4);
    for row in &summary {
        let maxima: Vec<f64> = (0..2)
            .map(|r| {
                curves
                    .iter()
                    .filter(|c| c.condition == row.condition && c.run == r)
                    .map(|c| c.val_miou)
                    .fold(f64::MIN, f64::max)
            })
            .collect();
        let mean = (maxima[0] + maxima[1]) / 2.0;
        let stderr = (maxima[0] - maxima[1]).abs() / 2.0;
        assert!((row.mean_max_miou - mean).abs() < 1e-12, "{row:?}");
        assert!((row.stderr - stderr).abs() < 1e-12, "{row:?}");
    }
    let means: Vec<MeanCurveRow> = read_csv(&dir.path().join("mean_curves.csv")).unwrap();
    assert_eq!(means.len(), 4 * cfg.epochs);
}

#[test]
fn identical_seeds_have_zero_spread() {
    let cfg = tiny_config(VariantKind::TscNet, false);
    let result = ablation(&cfg, &Condition::ABLATION[2..3], &[7, 7], &mut |_, _, _| {}).unwrap();
    let summary = result.summary().unwrap();
    assert_eq!(summary[0].stderr, 0.0);
    assert_eq!(result.results[0].final_window(5).unwrap().1, 0.0);
}

#[test]
fn ablation_needs_two_runs() {
    let cfg = tiny_config(VariantKind::UNet, false);
    assert!(ablation(&cfg, &Condition::ABLATION, &[0], &mut |_, _, _| {}).is_err());
}

#[test]
fn model_roundtrip() {
    let mut cfg = tiny_config(VariantKind::TscNet, true);
    cfg.epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());
    train(&cfg).unwrap();
    let loaded = load_model(&dir.path().join("model.json")).unwrap();
    let data = cfg.load_data().unwrap();
    let (record, graph) = train_run(&cfg, &data, cfg.seed, &mut |_| {}).unwrap();
    assert_eq!(loaded.params(), graph.params());
    assert_eq!(loaded.spec(), graph.spec());
    assert_eq!(evaluate(&loaded, &data.val).unwrap().mean, record.val_miou[0]);
}

#[test]
fn curves_are_byte_identical_across_runs() {
    let mut cfg = tiny_config(VariantKind::Dilated(2), false);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cfg.out_dir = Some(a.path().to_path_buf());
    train(&cfg).unwrap();
    cfg.out_dir = Some(b.path().to_path_buf());
    train(&cfg).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("curves.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(String::from_utf8(read(&a)).unwrap().starts_with("condition,run,epoch,train_loss,val_miou\n"));
}
