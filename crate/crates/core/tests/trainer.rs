use std::sync::OnceLock;

use kga2c::agent::{AgentConfig, GatConfig};
use kga2c::engine::games;
use kga2c::numerics::{Gradients, Init, ParameterSet, Tape};
use kga2c::tokenizer::SubwordModel;
use kga2c::trainer::{
    actor_loss, advantage, critic_loss, entropy_term, masked_entropy_term, random_valid_scores,
    template_loss, train_run, train_tokenizer, Ablation, Choice, LoadedRun, MetricsLog,
    TrainConfig, TrainError, Trainer, CONFIG_FILE, CSV_FILE, METRICS_FILE, MODEL_FILE,
    TOKENIZER_FILE,
};

const TOKENIZER_SIZE: usize = 96;

fn tokenizer() -> SubwordModel {
    static TOK: OnceLock<SubwordModel> = OnceLock::new();
    TOK.get_or_init(|| train_tokenizer(TOKENIZER_SIZE).unwrap())
        .clone()
}

fn small(ablation: Ablation) -> TrainConfig {
    TrainConfig {
        ablation,
        workers: 2,
        unroll: 4,
        updates: 3,
        tokenizer_size: TOKENIZER_SIZE,
        agent: AgentConfig {
            embedding: 8,
            encoder_hidden: 8,
            observation: 8,
            score_width: 6,
            decoder_hidden: 8,
            critic_hidden: 8,
            gat: GatConfig {
                features: 4,
                heads: 2,
                slope: 0.2,
                output: 8,
            },
        },
        ..TrainConfig::default()
    }
}

fn trainer(config: &TrainConfig) -> Trainer {
    let spec = games::bundled(&config.game).unwrap().unwrap();
    Trainer::new(spec, tokenizer(), config).unwrap()
}

/// Scalar-loop logistic loss, averaged.
fn bce_oracle(logits: &[f64], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(targets) {
        let p = 1.0 / (1.0 + (-x).exp());
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / logits.len() as f64
}

fn with_row<R>(values: &[f64], f: impl FnOnce(&mut Tape<'_>, kga2c::numerics::Var) -> R) -> R {
    let mut p = ParameterSet::new(0);
    let id = p.add("x", &[1, values.len()], Init::Zeros).unwrap();
    p.get_mut(id).data_mut().copy_from_slice(values);
    let mut tape = Tape::new(&p);
    let x = tape.param(id);
    f(&mut tape, x)
}

#[test]
fn advantage_examples() {
    assert!((advantage(1.0, 0.5, 1.0, false, 0.8) - 1.3).abs() < 1e-12);
    assert!((advantage(1.0, 0.5, 1.0, true, 0.8) - 0.5).abs() < 1e-12);
}

#[test]
fn template_loss_matches_scalar_oracle() {
    let zero = with_row(&[0.0; 5], |t, x| {
        let l = template_loss(t, x, &[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        t.scalar(l)
    });
    assert!((zero - std::f64::consts::LN_2).abs() < 1e-12);

    let logits = [-3.2, -0.4, 0.0, 0.7, 2.5, 8.0];
    let targets = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let got = with_row(&logits, |t, x| {
        let l = template_loss(t, x, &targets).unwrap();
        t.scalar(l)
    });
    assert!((got - bce_oracle(&logits, &targets)).abs() < 1e-10);
}

#[test]
fn actor_and_critic_edge_cases() {
    let mut p = ParameterSet::new(0);
    let id = p.add("x", &[1, 4], Init::FanIn).unwrap();
    let mut grads = Gradients::zeros_like(&p);
    {
        let mut tape = Tape::new(&p);
        let x = tape.param(id);
        let lp = tape.log_softmax(x, None).unwrap();
        let l = actor_loss(&mut tape, &[(lp, 2)], 0.0).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        tape.backward(l, &mut grads).unwrap();
    }
    assert!(grads.get(id).iter().all(|&g| g == 0.0));

    let mut grads = Gradients::zeros_like(&p);
    let mut tape = Tape::new(&p);
    let x = tape.param(id);
    let v = tape.pick(x, 1).unwrap();
    let q = tape.value(v)[0];
    let l = critic_loss(&mut tape, v, q).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
    tape.backward(l, &mut grads).unwrap();
    assert!(grads.get(id).iter().all(|&g| g == 0.0));
}

#[test]
fn entropy_examples() {
    let h = with_row(&[0.3; 4], |t, x| {
        let e = entropy_term(t, x, None).unwrap();
        t.scalar(e)
    });
    assert!((h + 4f64.ln()).abs() < 1e-12);
    let h = with_row(&[0.3; 4], |t, x| {
        let e = masked_entropy_term(t, x, &[true, false, true, false]).unwrap();
        t.scalar(e)
    });
    assert!((h + 2f64.ln()).abs() < 1e-12);
    let h = with_row(&[0.3; 4], |t, x| {
        let e = entropy_term(t, x, Some(&[true, false, false, false])).unwrap();
        t.scalar(e)
    });
    assert!((h - 0.25 * 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn rollout_batch_shape() {
    let mut t = trainer(&small(Ablation::Full));
    let batch = t.run_rollouts().unwrap();
    assert_eq!(batch.workers.len(), 2);
    assert_eq!(batch.len(), 8);
    assert_eq!(batch.degraded_workers, 0);
    for r in batch.records() {
        assert_eq!(r.mask.len(), t.ctx.spec.vocabulary.len());
        assert_eq!(r.template_targets.len(), t.ctx.spec.templates.len());
        assert!(r.mask_size >= 1);
    }
}

#[test]
fn training_is_deterministic() {
    let config = small(Ablation::Full);
    let run = || {
        let mut t = trainer(&config);
        (0..3).map(|_| t.update().unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn evaluation_needs_episodes() {
    let t = trainer(&small(Ablation::A2c));
    assert!(matches!(t.evaluate(0), Err(TrainError::NoEpisodes)));
}

#[test]
fn every_ablation_trains() {
    for ablation in Ablation::ALL {
        let mut config = small(ablation);
        config.mask_probability = 0.0;
        let mut t = trainer(&config);
        for _ in 0..100 {
            let m = t.update().unwrap();
            assert!(m.loss.is_finite(), "{ablation}: {m:?}");
            assert!(m.grad_norm.is_finite());
            if ablation.graph_mask() {
                assert_eq!(m.mask_violations, 0, "{ablation}");
            }
        }
        assert_eq!(t.updates, 100);
        assert_eq!(t.env_steps, 800);
    }
}

#[test]
fn ablation_decoders() {
    let mut t = trainer(&small(Ablation::NoMask));
    let batch = t.run_rollouts().unwrap();
    assert!(batch.records().all(|r| r.mask.iter().all(|&b| b)));

    let mut t = trainer(&small(Ablation::Seq));
    let batch = t.run_rollouts().unwrap();
    for r in batch.records() {
        assert!(
            matches!(&r.choice, Choice::Words { symbols, .. } if symbols.len() <= kga2c::agent::MAX_SEQ_WORDS)
        );
        assert!(r.distribution.is_none());
    }

    let t = trainer(&small(Ablation::A2c));
    assert!(!t.ctx.network.uses_graph_attention());
}

#[test]
fn run_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small(Ablation::Full);
    config.checkpoint_every = 2;
    let mut seen = 0;
    let summary = train_run(&config, dir.path(), |_, _| seen += 1).unwrap();
    assert_eq!(seen, 3);
    for f in [
        CONFIG_FILE,
        TOKENIZER_FILE,
        METRICS_FILE,
        CSV_FILE,
        MODEL_FILE,
        "model-000002.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(
        MetricsLog::read(&dir.path().join(METRICS_FILE)).unwrap(),
        summary.metrics
    );
    let loaded = LoadedRun::load(&summary.model, None).unwrap();
    let stats = loaded.evaluate(1, 0).unwrap();
    assert_eq!(stats.episodes, 1);
    assert!((0..=30).contains(&stats.scores[0]));
}

#[test]
fn config_parsing() {
    let c =
        TrainConfig::parse("seed = 4\nablation = \"no-gat\"\n[agent]\nembedding = 16\n").unwrap();
    assert_eq!(
        (c.seed, c.ablation, c.agent.embedding),
        (4, Ablation::NoGat, 16)
    );
    let back = TrainConfig::parse(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert!(matches!(
        TrainConfig::parse("bogus = 1"),
        Err(TrainError::Config(_))
    ));
    let bad = TrainConfig {
        gamma: 0.0,
        workers: 0,
        mask_probability: 2.0,
        ..TrainConfig::default()
    };
    assert_eq!(bad.problems().len(), 3);
    assert_eq!("seq".parse::<Ablation>(), Ok(Ablation::Seq));
    assert!("gat".parse::<Ablation>().is_err());
}

#[test]
fn random_baseline_scores_are_bounded() {
    let spec = games::bundled("microzork").unwrap().unwrap();
    let scores = random_valid_scores(&spec, 2000, 1).unwrap();
    assert!(!scores.is_empty());
    assert!(scores.iter().all(|s| (0..=30).contains(s)));
    assert_eq!(scores, random_valid_scores(&spec, 2000, 1).unwrap());
}
