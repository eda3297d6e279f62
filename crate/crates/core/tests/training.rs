//! Short training runs on the toric L=4 toy problem.

use std::sync::OnceLock;

use qecc_lab::codes::{Sector, StabilizerCode};
use qecc_lab::eval::{evaluate, EvalPlan, NeuralEval};
use qecc_lab::model::{AnyModel, MlpConfig, ModelSpec, NeuralModel, Qecct, QecctConfig};
use qecc_lab::noise::Channel;
use qecc_lab::train::{train, TrainConfig, TrainOutcome};

fn toy_config(model: ModelSpec, epochs: usize, steps_per_epoch: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new("toric:4", Channel::Independent, model);
    cfg.batch_size = 128;
    cfg.epochs = epochs;
    cfg.steps_per_epoch = steps_per_epoch;
    cfg.lr0 = 1e-3;
    cfg.lr_min = 1e-5;
    cfg.noise.p_min = 0.05;
    cfg.noise.p_max = 0.11;
    cfg.grad_shards = 1;
    cfg.log_every = 1;
    cfg.seed = 1;
    cfg
}

fn toy_qecct() -> QecctConfig {
    QecctConfig::new(2, 32)
}

fn toy_ler(model: &AnyModel<f32>) -> f64 {
    let code = StabilizerCode::toric(4).unwrap();
    let plan = EvalPlan {
        samples: 4000,
        ..EvalPlan::new(Channel::Independent, vec![0.08], 99)
    };
    evaluate(&NeuralEval::new(model.clone()), &code, &plan).unwrap().rows[0].ler
}

fn trained_qecct() -> &'static TrainOutcome {
    static RUN: OnceLock<TrainOutcome> = OnceLock::new();
    RUN.get_or_init(|| train(&toy_config(ModelSpec::Qecct(toy_qecct()), 4, 500), None).unwrap())
}

#[test]
fn toy_loss_decreases_every_epoch() {
    let losses = &trained_qecct().epoch_losses;
    assert_eq!(losses.len(), 4);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn qecct_is_no_worse_than_an_mlp_of_the_same_size() {
    let view = StabilizerCode::toric(4).unwrap().view(Sector::X);
    let q = toy_qecct();
    let budget = Qecct::<f32>::new(q.clone(), view.clone(), 0).unwrap().params().num_values();
    let width = MlpConfig::width_for_budget(4, budget, &view, true).unwrap();
    let mlp = MlpConfig {
        objective: q.objective,
        ..MlpConfig::new(4, width)
    };
    let mlp = train(&toy_config(ModelSpec::Mlp(mlp), 1, 2000), None).unwrap();
    let mlp_params = mlp.model.params().num_values() as f64;
    assert!((mlp_params / budget as f64 - 1.0).abs() < 0.05, "{mlp_params} vs {budget}");

    let (qecct_ler, mlp_ler) = (toy_ler(&trained_qecct().model), toy_ler(&mlp.model));
    assert!(qecct_ler <= mlp_ler, "QECCT {qecct_ler} vs MLP {mlp_ler}");
}

#[test]
fn ler_only_training_stalls_with_vanishing_gradients() {
    let mut q = toy_qecct();
    q.objective.lambda_ber = 0.0;
    q.objective.lambda_g = 0.0;
    let run = train(&toy_config(ModelSpec::Qecct(q), 1, 1000), None).unwrap();
    let norms: Vec<f64> = run.log.iter().map(|r| r.grad_norm).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (early, late) = (mean(&norms[..50]), mean(&norms[500..]));
    assert!(late < 0.5 * early, "gradient norm {early:.3} over the first 50 steps, {late:.3} over the last 500");
}
