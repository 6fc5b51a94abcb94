mod common;

use dan_core::autodiff::Tape;
use dan_core::data::{classification_vocabulary, split_semisup, ClassSynth, ClassificationInstance, RankingInstance};
use dan_core::encoder::{EncoderConfig, ForwardCtx};
use dan_core::error::Error;
use dan_core::gradcheck::check_gradients;
use dan_core::models::{ClassJudge, ClassModelConfig, ClassPredictor, Model, RankJudge, RankModelConfig, RankPredictor};
use dan_core::optim::{Adam, AdamState};
use dan_core::train::{
    build_judge_loss, dan_value, train_dan, train_hinge_baseline, train_nll_baseline, Classification, GameConfig,
    PredictorLoss, Ranking, TaskKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_class(vocab: usize) -> ClassModelConfig {
    ClassModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab,
            emb_dim: 6,
            proj_dim: 4,
            filters: 5,
            window: 3,
            ..EncoderConfig::default()
        },
        hidden: 4,
        n_classes: 2,
    }
}

fn random_sentences(rng: &mut impl Rng, n: usize, vocab: u32, labeled: bool) -> Vec<ClassificationInstance<u32>> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..7);
            let toks = (0..len).map(|_| rng.gen_range(2..vocab)).collect();
            ClassificationInstance::new(toks, labeled.then(|| rng.gen_range(0..2)))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn one_judge_step_increases_the_value() {
    let task = Classification { n_classes: 2 };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ClassPredictor::new(tiny_class(12), &mut rng).unwrap();
        let mut j = ClassJudge::new(tiny_class(12), &mut rng).unwrap();
        let real = random_sentences(&mut rng, 4, 12, true);
        let fake = random_sentences(&mut rng, 4, 12, false);
        let rr: Vec<&_> = real.iter().collect();
        let ff: Vec<&_> = fake.iter().collect();
        let before = dan_value(&task, &p, &j, &rr, &ff, PredictorLoss::NonSaturating).unwrap().value;

        let grads = {
            let mut tape = Tape::new();
            let pb = p.params().bind(&mut tape, false);
            let jb = j.params().bind(&mut tape, true);
            let terms = build_judge_loss(&task, &mut tape, &p, &pb, &j, &jb, &rr, &ff, &mut ForwardCtx::eval()).unwrap();
            let g = tape.backward(terms.loss_j).unwrap();
            jb.gradients(&tape, &g)
        };
        let mut state = AdamState::new(j.params());
        Adam::new(1e-4).step(j.params_mut(), &grads, &mut state).unwrap();

        let after = dan_value(&task, &p, &j, &rr, &ff, PredictorLoss::NonSaturating).unwrap().value;
        assert!(after > before, "seed {seed}: V went from {before} to {after}");
    }
}

#[test]
fn real_term_gives_the_predictor_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = RankModelConfig {
        encoder: tiny_class(15).encoder,
    };
    let p = RankPredictor::new(cfg.clone(), &mut rng).unwrap();
    let j = RankJudge::new(cfg, &mut rng).unwrap();
    let x = RankingInstance::new("q", vec![3u32, 4, 5], vec![vec![4, 6], vec![7, 8, 9], vec![10]], Some(vec![0, 1, 0])).unwrap();
    let batch = [&x];

    let real = check_gradients(p.params(), 1e-4, 1e-8, |tape, pb| {
        let jb = j.params().bind_owned(tape);
        Ok(build_judge_loss(&Ranking, tape, &p, pb, &j, &jb, &batch, &batch, &mut ForwardCtx::eval())?.real_term)
    })
    .unwrap();
    assert!(real.max_rel_error < 1e-5);

    let mut tape = Tape::new();
    let pb = p.params().bind(&mut tape, true);
    let jb = j.params().bind(&mut tape, false);
    let terms = build_judge_loss(&Ranking, &mut tape, &p, &pb, &j, &jb, &batch, &batch, &mut ForwardCtx::eval()).unwrap();
    let from_real = tape.backward(terms.real_term).unwrap();
    assert!(pb.gradients(&tape, &from_real).iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
    let from_fake = tape.backward(terms.fake_term).unwrap();
    assert!(pb.gradients(&tape, &from_fake).iter().any(|g| g.data().iter().any(|v| *v != 0.0)));
}

#[test]
fn judge_score_gradient_is_nonzero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let j = RankJudge::new(RankModelConfig { encoder: tiny_class(15).encoder }, &mut rng).unwrap();
    let q = vec![2u32, 3, 4];
    let cands = vec![vec![3u32, 9], vec![10, 11, 12]];
    let s = [0.3, 0.6];
    let h = 1e-5;
    for i in 0..2 {
        let mut up = s;
        up[i] += h;
        let mut down = s;
        down[i] -= h;
        let d = (j.judge(&q, &cands, &up).unwrap() - j.judge(&q, &cands, &down).unwrap()) / (2.0 * h);
        assert!(d.abs() > 1e-8, "d J / d s_{i} = {d}");
    }
}

#[test]
fn identical_seeds_give_identical_training() {
    let task = Classification { n_classes: 2 };
    let mut data_rng = ChaCha8Rng::seed_from_u64(5);
    let train = random_sentences(&mut data_rng, 40, 12, true);
    let dev = random_sentences(&mut data_rng, 10, 12, true);
    let mut game = GameConfig::full_data(TaskKind::Classification);
    game.max_epochs = 4;
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ClassPredictor::new(tiny_class(12), &mut rng).unwrap();
        let j = ClassJudge::new(tiny_class(12), &mut rng).unwrap();
        let base = train_nll_baseline(&task, p.clone(), &train, &dev, &game, &mut rng).unwrap();
        let dan = train_dan(&task, p, j, &train, &[], &dev, &game, &mut rng).unwrap();
        (base.history, base.predictor.params().clone(), dan.history, dan.predictor.params().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn hinge_loss_falls_on_a_single_two_candidate_question() {
    let x = RankingInstance::new("q", vec![2u32, 3, 4], vec![vec![3u32, 5], vec![6, 7]], Some(vec![1, 0])).unwrap();
    let data = vec![x];
    let mut game = GameConfig::full_data(TaskKind::Ranking);
    game.max_epochs = 10;
    game.patience = 10;
    let mut curves = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = RankPredictor::new(RankModelConfig { encoder: tiny_class(8).encoder }, &mut rng).unwrap();
        let out = train_hinge_baseline(p, &data, &data, &game, &mut rng).unwrap();
        assert_eq!(out.epochs_run, 10);
        curves.push(out.history.epochs.iter().map(|e| e.loss_p).collect::<Vec<_>>());
    }
    let med: Vec<f64> = (0..10).map(|e| median(curves.iter().map(|c| c[e]).collect())).collect();
    assert!(med.windows(2).all(|w| w[1] <= w[0]), "median loss per epoch {med:?}");
}

#[test]
fn question_without_a_negative_is_skipped() {
    let good = RankingInstance::new("a", vec![2u32], vec![vec![2u32], vec![3]], Some(vec![1, 0])).unwrap();
    let all_pos = RankingInstance::new("b", vec![4u32], vec![vec![4u32], vec![4]], Some(vec![1, 1])).unwrap();
    let mut game = GameConfig::full_data(TaskKind::Ranking);
    game.max_epochs = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = RankPredictor::new(RankModelConfig { encoder: tiny_class(6).encoder }, &mut rng).unwrap();
    let out = train_hinge_baseline(p.clone(), &[good.clone(), all_pos.clone()], &[good], &game, &mut rng).unwrap();
    assert_eq!(out.skipped, 1);
    let err = train_hinge_baseline(p, std::slice::from_ref(&all_pos), std::slice::from_ref(&all_pos), &game, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn adversarial_training_learns_a_separable_task_from_200_labels() {
    let all = ClassSynth::new(400, 2, 60).generate(0).unwrap();
    let vocab = classification_vocabulary(&all[..200]);
    let idx: Vec<_> = all.iter().map(|x| x.index(&vocab)).collect();
    let (train, dev) = idx.split_at(200);
    let task = Classification { n_classes: 2 };
    let cfg = ClassModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            emb_dim: 16,
            proj_dim: 16,
            filters: 32,
            window: 5,
            ..EncoderConfig::default()
        },
        hidden: 16,
        n_classes: 2,
    };
    let mut game = GameConfig::full_data(TaskKind::Classification);
    game.lr_predictor = 1e-3;
    game.lr_judge = 1e-3;
    let mut accs = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ClassPredictor::new(cfg.clone(), &mut rng).unwrap();
        let j = ClassJudge::new(cfg.clone(), &mut rng).unwrap();
        let out = train_dan(&task, p, j, train, &[], dev, &game, &mut rng).unwrap();
        assert!(out.epochs_run <= 50);
        for e in &out.history.epochs {
            assert!(e.loss_p.is_finite() && e.v_estimate.unwrap().is_finite());
        }
        accs.push(out.best_validation);
    }
    let m = median(accs.clone());
    assert!(m >= 0.95, "median validation accuracy {m}, runs {accs:?}");
}

#[test]
fn semi_supervised_losses_stay_finite() {
    let all = ClassSynth::new(300, 2, 60).generate(1).unwrap();
    let vocab = classification_vocabulary(&all[..250]);
    let idx: Vec<_> = all.iter().map(|x| x.index(&vocab)).collect();
    let (train, dev) = idx.split_at(250);
    let split = split_semisup(train, 10, 2).unwrap();
    let task = Classification { n_classes: 2 };
    let cfg = tiny_class(vocab.len());
    let game = GameConfig::semi_supervised();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = ClassPredictor::new(cfg.clone(), &mut rng).unwrap();
    let j = ClassJudge::new(cfg, &mut rng).unwrap();
    let out = train_dan(&task, p, j, &split.labeled, &split.unlabeled, dev, &game, &mut rng).unwrap();
    assert!(out.history.epochs.iter().all(|e| e.loss_p.is_finite() && e.loss_j.is_none_or(f64::is_finite)));
    let batches = 250usize.div_ceil(32);
    assert_eq!(out.counters.predictor_steps, batches * out.epochs_run);
    assert_eq!(out.counters.judge_steps, batches.div_ceil(10) * out.epochs_run);
}

#[test]
fn unlabeled_instances_cannot_be_real_examples() {
    let task = Classification { n_classes: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let unl = random_sentences(&mut rng, 5, 12, false);
    let dev = random_sentences(&mut rng, 5, 12, true);
    let p = ClassPredictor::new(tiny_class(12), &mut rng).unwrap();
    let j = ClassJudge::new(tiny_class(12), &mut rng).unwrap();
    let game = GameConfig::full_data(TaskKind::Classification);
    assert!(train_dan(&task, p.clone(), j.clone(), &unl, &[], &dev, &game, &mut rng).is_err());
    assert!(matches!(
        train_dan(&task, p, j, &[], &unl, &dev, &game, &mut rng),
        Err(Error::Config(_))
    ));
}
