//! Parallel versus sequential execution of the data-parallel hot paths:
//! the gradient-check suite, batched evaluation and a small variant matrix.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use orthoadapt::encoder::{EncoderConfig, Model};
use orthoadapt::evalcli::gradsuite::gradcheck_suite;
use orthoadapt::evalcli::{evaluate_dataset, run_variant_matrix, ExperimentConfig, Variant};
use orthoadapt::exec::ExecMode;
use orthoadapt::synthlang::{Bed, BedConfig, TaskKind};

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn small_bed() -> BedConfig {
    BedConfig {
        mono_sentences: 200,
        task_sentences: 300,
        seq_train: 90,
        seq_eval: 60,
        ..BedConfig::default()
    }
}

fn gradcheck(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradcheck_suite");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| gradcheck_suite(3, mode).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let bed = Bed::generate(&small_bed()).unwrap();
    let mut model = Model::new(
        EncoderConfig {
            vocab_size: bed.vocab.len(),
            ..EncoderConfig::default()
        },
        1,
    )
    .unwrap();
    let test = &bed.task(TaskKind::Tagging).test["tgt"];
    model.set_head(TaskKind::Tagging, test.num_labels, 2).unwrap();
    let mut group = c.benchmark_group("evaluate_dataset");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| evaluate_dataset(&model, test, 16, mode).unwrap())
        });
    }
    group.finish();
}

fn matrix(c: &mut Criterion) {
    let mut cfg = ExperimentConfig {
        bed: small_bed(),
        tasks: vec![TaskKind::Tagging],
        variants: vec![Variant::TNoo, Variant::LNooTNoo],
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    cfg.model.vocab_size = cfg.bed.vocab_size();
    for phase in [&mut cfg.pretrain, &mut cfg.lang, &mut cfg.task, &mut cfg.full_ft] {
        phase.steps = 20;
        phase.batch_size = 8;
    }
    let mut group = c.benchmark_group("variant_matrix");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                run_variant_matrix(&cfg, dir.path(), mode).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, gradcheck, evaluation, matrix);
criterion_main!(benches);
