use std::fs;
use std::path::Path;

use sckd::datagen::{build_dataset, DatasetConfig, WindowedDataset};
use sckd::eval::{
    fold_dir, loso_evaluate, metric_row, read_predictions, render_markdown, write_report, MetricsReport,
    REPORT_JSON, REPORT_MD,
};
use sckd::losses::Distiller;
use sckd::training::{seeded_run, RunKind, TrainConfig};
use sckd::Error;

fn tiny() -> WindowedDataset {
    build_dataset(&DatasetConfig {
        subjects: 3,
        speeds: vec![1.0],
        session_seconds: 20.0,
        ..DatasetConfig::desk()
    })
    .unwrap()
}

fn train_all(ds: &WindowedDataset, root: &Path) {
    for s in ds.subject_ids() {
        let base = TrainConfig {
            epochs: 1,
            batch_size: 8,
            repeats: 1,
            held_out: Some(s),
            ..TrainConfig::desk()
        };
        let fold = fold_dir(root, s);
        let teacher = TrainConfig { repeats: 2, ..base.clone() };
        seeded_run(&teacher, ds, &RunKind::Teacher, &fold.join("teacher")).unwrap();
        let kind = RunKind::Student { teacher: fold.join("teacher/seed_0/checkpoint.bin") };
        for (name, d) in [("scratch", Distiller::Scratch), ("sckd", Distiller::Sckd)] {
            let c = TrainConfig { distiller: d, ..base.clone() };
            seeded_run(&c, ds, &kind, &fold.join(name)).unwrap();
        }
    }
}

#[test]
fn leave_one_subject_out_report() {
    let ds = tiny();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    train_all(&ds, root);

    let report = loso_evaluate(root, &ds).unwrap();
    assert_eq!(report.subjects, vec![0, 1, 2]);
    let names: Vec<&str> = report.models.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["sckd", "scratch", "teacher"]);

    for model in &report.models {
        assert_eq!(model.folds.len(), 3);
        // the aggregate is the unweighted mean over folds
        let mean = model.folds.iter().map(|f| f.mean.rmse).sum::<f64>() / 3.0;
        assert!((model.mean.rmse - mean).abs() < 1e-12);
        for fold in &model.folds {
            assert_ne!(fold.validation, fold.subject);
            let truth = read_predictions(&root.join(&fold.truth), ds.window).unwrap();
            assert_eq!(truth.dim().0, fold.windows);
            for seed in &fold.seeds {
                // stored predictions reproduce the stored metrics
                let pred = read_predictions(&root.join(&seed.predictions), ds.window).unwrap();
                let row = metric_row(&pred.mapv(f64::from), &truth.mapv(f64::from), fold.train_max_bw).unwrap();
                assert_eq!(row, seed.metrics);
                assert!((row.bw_rmse - row.rmse * fold.train_max_bw).abs() < 1e-12);
            }
        }
    }
    let teacher = &report.models[2];
    assert_eq!(teacher.folds[0].seeds.len(), 2);
    assert!(teacher.parameter_count > report.models[0].parameter_count);

    let paired = report.paired.as_ref().unwrap();
    assert_eq!((paired.scratch.as_str(), paired.sckd.as_str()), ("scratch", "sckd"));
    for (p, (a, b)) in paired
        .subjects
        .iter()
        .zip(report.models[1].folds.iter().zip(&report.models[0].folds))
    {
        assert_eq!(p.scratch_rmse, a.mean.rmse);
        assert_eq!(p.sckd_rmse, b.mean.rmse);
        assert_eq!(p.delta, b.mean.rmse - a.mean.rmse);
    }

    write_report(&report, root).unwrap();
    let first = fs::read(root.join(REPORT_JSON)).unwrap();
    let md = fs::read_to_string(root.join(REPORT_MD)).unwrap();
    assert_eq!(md, render_markdown(&report));
    for name in names {
        assert!(md.contains(name));
    }
    let parsed: MetricsReport = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed.subjects, report.subjects);
    assert_eq!(parsed.models.len(), report.models.len());

    // evaluating again from the same checkpoints gives the same bytes
    let again = loso_evaluate(root, &ds).unwrap();
    write_report(&again, root).unwrap();
    assert_eq!(fs::read(root.join(REPORT_JSON)).unwrap(), first);

    fs::remove_dir_all(fold_dir(root, 2)).unwrap();
    assert!(matches!(loso_evaluate(root, &ds), Err(Error::MissingArtifact(_))));
}
