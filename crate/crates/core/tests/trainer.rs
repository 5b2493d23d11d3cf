use l2i_core::data::{generate_dataset, DatasetConfig, DomainRole, Sample, Split};
use l2i_core::experiment::run_experiment;
use l2i_core::losses::LossConfig;
use l2i_core::metrics::aggregate;
use l2i_core::model::{GroupMask, Model, ModelConfig, ParamGroup, ModelParams};
use l2i_core::optim::{AdamState, OptimizerConfig};
use l2i_core::trainer::{
    evaluate, train, train_step, validation_loss, DomainFilter, EarlyStopConfig, TrainConfig,
    Trainer, Variant,
};
use l2i_core::{Error, ExperimentConfig};

fn dataset() -> Vec<Sample> {
    generate_dataset(&DatasetConfig::default()).unwrap()
}

fn train_split(samples: &[Sample]) -> Vec<Sample> {
    samples.iter().filter(|s| s.split == Split::Train).cloned().collect()
}

fn group_values(p: &ModelParams, group: ParamGroup) -> Vec<f64> {
    p.tensors()
        .iter()
        .filter(|(g, _)| *g == group)
        .flat_map(|(_, t)| t.values().to_vec())
        .collect()
}

fn short(variant: Variant, max_steps: usize) -> TrainConfig {
    TrainConfig {
        variant,
        loss: LossConfig::default(),
        optimizer: OptimizerConfig::default(),
        early_stop: EarlyStopConfig {
            max_steps,
            ..EarlyStopConfig::default()
        },
        sampler_seed: 3,
    }
}

#[test]
fn vanilla_step_leaves_centers_unchanged() {
    let samples = dataset();
    let train = train_split(&samples);
    let model = Model::new(ModelConfig::default()).unwrap();
    let before = model.params.clone();
    let mut t = Trainer::new(
        model,
        Variant::Vanilla,
        LossConfig::default(),
        OptimizerConfig::default(),
        &train,
        1,
    )
    .unwrap();
    for _ in 0..5 {
        t.step().unwrap();
    }
    let after = &t.model.params;
    assert_eq!(group_values(after, ParamGroup::Centers), group_values(&before, ParamGroup::Centers));
    assert_ne!(group_values(after, ParamGroup::Encoder), group_values(&before, ParamGroup::Encoder));
}

#[test]
fn l2i_step_without_center_terms_moves_only_the_classifier() {
    let samples = dataset();
    let train = train_split(&samples);
    let mut model = Model::new(ModelConfig::default()).unwrap();
    let before = model.params.clone();
    let mut adam = AdamState::new(&model.params);
    let loss = LossConfig {
        lambda_cen: 0.0,
        lambda_latent: 0.0,
        ..LossConfig::default()
    };
    // coupled decay would otherwise shrink the encoder weights as well
    let opt = OptimizerConfig {
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    let sampler = l2i_core::data::BatchSampler::new(&train, 2).unwrap();
    let mut rng = l2i_core::rng::seeded(5);
    let batch = sampler.sample(&mut rng);
    train_step(&mut model, &mut adam, &train, &batch, Variant::L2I, &loss, &opt, None).unwrap();
    let p = &model.params;
    assert_eq!(group_values(p, ParamGroup::Encoder), group_values(&before, ParamGroup::Encoder));
    assert_eq!(group_values(p, ParamGroup::Centers), group_values(&before, ParamGroup::Centers));
    assert_ne!(group_values(p, ParamGroup::Classifier), group_values(&before, ParamGroup::Classifier));
}

#[test]
fn l2i_loss_decreases_over_200_steps() {
    let samples = dataset();
    let train = train_split(&samples);
    let model = Model::new(ModelConfig::default()).unwrap();
    let mut t = Trainer::new(
        model,
        Variant::L2I,
        LossConfig::default(),
        OptimizerConfig::default(),
        &train,
        11,
    )
    .unwrap();
    let totals: Vec<f64> = (0..200).map(|_| t.step().unwrap().total).collect();
    let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let first = avg(&totals[..20]);
    let last = avg(&totals[180..]);
    assert!(last < first, "moving average {first} -> {last}");
}

#[test]
fn returned_model_reproduces_best_validation_loss() {
    let samples = dataset();
    let val: Vec<Sample> = samples
        .iter()
        .filter(|s| s.split == Split::Val && s.domain_role == DomainRole::Target)
        .cloned()
        .collect();
    for variant in [Variant::L2I, Variant::Vanilla] {
        let cfg = short(variant, 300);
        let (model, log) = train(Model::new(ModelConfig::default()).unwrap(), &samples, &cfg).unwrap();
        let again = validation_loss(&model, &val, variant, &cfg.loss).unwrap();
        assert_eq!(again, log.best_val_loss, "{variant}");
        let min = log.evals.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, log.best_val_loss);
        assert_eq!(log.evals[0].step, 0);
    }
}

#[test]
fn training_is_deterministic() {
    let samples = dataset();
    let cfg = short(Variant::L2I, 200);
    let (m1, l1) = train(Model::new(ModelConfig::default()).unwrap(), &samples, &cfg).unwrap();
    let (m2, l2) = train(Model::new(ModelConfig::default()).unwrap(), &samples, &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(l1.losses_csv().unwrap(), l2.losses_csv().unwrap());
}

#[test]
fn missing_target_validation_is_a_config_error() {
    let samples: Vec<Sample> = dataset()
        .into_iter()
        .filter(|s| !(s.split == Split::Val && s.domain_role == DomainRole::Target))
        .collect();
    let err = train(Model::new(ModelConfig::default()).unwrap(), &samples, &short(Variant::L2I, 50));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn fixed_variant_keeps_fixed_centers() {
    let samples = dataset();
    let (model, _) = train(
        Model::new(ModelConfig::default()).unwrap(),
        &samples,
        &short(Variant::Fixed, 100),
    )
    .unwrap();
    let fixed = l2i_core::model::fixed_center_points(2, 16).unwrap();
    assert_eq!(model.params.centers.values(), fixed.values());
}

#[test]
fn no_margin_forces_antipodal_geometry() {
    let loss = Variant::NoMargin.effective_loss(&LossConfig::default());
    assert_eq!((loss.d, loss.r), (2.0, 0.0));
    let mut g = l2i_core::numerics::Graph::new();
    let o = g.constant(l2i_core::numerics::Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap());
    let f = g.constant(l2i_core::numerics::Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap());
    let cen = l2i_core::losses::center_point_loss(&mut g, f, o, &loss).unwrap();
    assert_eq!(g.value(cen).item().unwrap(), 0.0);
    let f = g.constant(l2i_core::numerics::Tensor::matrix(2, 2, vec![0.6, 0.8, -1.0, 0.0]).unwrap());
    let cen = l2i_core::losses::center_point_loss(&mut g, f, o, &loss).unwrap();
    assert!(g.value(cen).item().unwrap() > 0.0);
}

#[test]
fn evaluation_examples() {
    let samples = dataset();
    let test: Vec<Sample> = samples.iter().filter(|s| s.split == Split::Test).cloned().collect();
    let model = Model::new(ModelConfig::default()).unwrap();
    let all = evaluate(&model, &test, DomainFilter::All).unwrap();
    let src = evaluate(&model, &test, DomainFilter::Source).unwrap();
    let tgt = evaluate(&model, &test, DomainFilter::Target).unwrap();
    assert_eq!(all.n_samples, src.n_samples + tgt.n_samples);

    let only_source: Vec<Sample> = test
        .iter()
        .filter(|s| s.domain_role == DomainRole::Source)
        .cloned()
        .collect();
    assert!(matches!(
        evaluate(&model, &only_source, DomainFilter::Target),
        Err(Error::Evaluation(_))
    ));

    // zero classifier weights, bias favouring class 1: constant prediction
    let mut constant = model.clone();
    constant.params.classifier.weight.values_mut().fill(0.0);
    constant.params.classifier.bias.values_mut().copy_from_slice(&[0.0, 1.0]);
    let s = evaluate(&constant, &test, DomainFilter::Target).unwrap();
    assert_eq!(s.accuracy, 0.5);
    assert_eq!(s.kappa, 0.0);
}

#[test]
fn perfect_classifier_scores_one() {
    // latent = input, classifier reads coordinate 0
    let samples: Vec<Sample> = (0..8)
        .map(|i| {
            let c = i % 2;
            let sign = if c == 1 { 1.0 } else { -1.0 };
            Sample {
                x: vec![sign, 0.1 * i as f64],
                class_label: c,
                domain_label: 0,
                domain_role: DomainRole::Target,
                split: Split::Test,
            }
        })
        .collect();
    let cfg = ModelConfig {
        input_dim: 2,
        encoder_hidden: vec![],
        latent_dim: 2,
        num_classes: 2,
        seed: 0,
    };
    let mut model = Model::new(cfg).unwrap();
    let enc = &mut model.params.encoder[0];
    enc.weight.values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    enc.bias.values_mut().fill(0.0);
    model.params.classifier.weight.values_mut().copy_from_slice(&[-5.0, 5.0, 0.0, 0.0]);
    model.params.classifier.bias.values_mut().fill(0.0);
    let s = evaluate(&model, &samples, DomainFilter::All).unwrap();
    assert_eq!((s.accuracy, s.kappa, s.auroc), (1.0, 1.0, Some(1.0)));
}

#[test]
fn experiment_aggregates_runs() {
    let mut cfg = ExperimentConfig::default();
    cfg.early_stop.max_steps = 50;
    let one = run_experiment(&cfg, Variant::Vanilla, 1).unwrap();
    assert_eq!(one.target.unwrap().accuracy.std, 0.0);
    let three = run_experiment(&cfg, Variant::L2I, 3).unwrap();
    assert_eq!(three.runs.len(), 3);
    let rows: Vec<_> = three.runs.iter().map(|r| r.target).collect();
    let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / 3.0;
    let agg = three.target.unwrap();
    assert!((agg.accuracy.mean - mean).abs() < 1e-12);
    assert_eq!(aggregate(&rows).unwrap(), agg);
    assert!(run_experiment(&cfg, Variant::L2I, 0).is_err());
}

#[test]
fn group_mask_of_variants() {
    assert_eq!(Variant::L2I.trainable(), GroupMask::ALL);
    assert!(!Variant::Vanilla.trainable().centers);
}
