use pdelab::diff::{check_gradients, Tensor};
use pdelab::emulator::{forward_graph, predict, Mode, ModelConfig, ModelParams, Phase};
use pdelab::ks::{generate_dataset, KsConfig};
use pdelab::training::{
    assemble_batch, composite_loss, crps_loss, finetune, graph_loss, mse_loss, pretrain, spectral_loss, Adam,
    LossKind, SampleRef, Shard, TrainConfig,
};
use pdelab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct evaluation of the ensemble score with explicit loops over points
/// and member pairs.
fn crps_brute_force(truth: &[f64], ensemble: &[Vec<f64>]) -> f64 {
    let m = ensemble.len() as f64;
    let mut total = 0.0;
    for p in 0..truth.len() {
        let mut skill = 0.0;
        for i in 0..ensemble.len() {
            skill += (truth[p] - ensemble[i][p]).abs();
        }
        let mut spread = 0.0;
        for i in 0..ensemble.len() {
            for j in 0..ensemble.len() {
                spread += (ensemble[i][p] - ensemble[j][p]).abs();
            }
        }
        total += skill / m - spread / (2.0 * m * m);
    }
    total / truth.len() as f64
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[0.0; 5], &[2.0; 5]).unwrap(), 4.0);
    assert!(mse_loss(&[0.0; 5], &[2.0; 4]).is_err());
}

#[test]
fn crps_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let d = rng.random_range(1..20);
        let m = rng.random_range(1..6);
        let truth: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ens: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let got = crps_loss(&truth, &ens).unwrap();
        let want = crps_brute_force(&truth, &ens);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn crps_special_cases() {
    let truth = [0.3f64, -1.2, 2.0];
    let member = vec![1.0, 0.0, -0.5];
    let mae = truth.iter().zip(&member).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
    assert_eq!(crps_loss(&truth, &[member]).unwrap(), mae);
    assert_eq!(crps_loss(&[0.0], &[vec![1.0], vec![-1.0]]).unwrap(), 0.5);
    assert_eq!(crps_loss(&truth, &[truth.to_vec(), truth.to_vec()]).unwrap(), 0.0);
}

#[test]
fn spectral_loss_examples() {
    let d = 32;
    let x: Vec<f64> = (0..d).map(|i| 2.0 * std::f64::consts::PI * i as f64 / d as f64).collect();
    let u: Vec<f64> = x.iter().map(|x| (3.0 * x).sin() + 0.4 * (5.0 * x).cos()).collect();
    assert_eq!(spectral_loss(&u, &u).unwrap(), 0.0);
    let shifted: Vec<f64> = (0..d).map(|i| u[(i + 7) % d]).collect();
    assert!(spectral_loss(&u, &shifted).unwrap() < 1e-12);
    let sine: Vec<f64> = x.iter().map(|x| (3.0 * x).sin()).collect();
    let half = (d / 2) as f64;
    let expected = half / (half + 1.0);
    assert!((spectral_loss(&sine, &vec![0.0; d]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn composite_loss_examples() {
    let truth = vec![0.1, 0.5, -0.2, 0.9];
    let ens = vec![vec![0.0, 0.4, -0.1, 1.0], vec![0.3, 0.2, 0.0, 0.7]];
    assert_eq!(composite_loss(&truth, &ens, 0.0).unwrap(), crps_loss(&truth, &ens).unwrap());
    assert_eq!(composite_loss(&truth, &[truth.clone(), truth.clone()], 1.0).unwrap(), 0.0);
    let spec = (spectral_loss(&truth, &ens[0]).unwrap() + spectral_loss(&truth, &ens[1]).unwrap()) / 2.0;
    let c = composite_loss(&truth, &ens, 1.0).unwrap();
    assert!((c - crps_loss(&truth, &ens).unwrap() - spec).abs() < 1e-15);
}

#[test]
fn composite_loss_gradient_through_model() {
    let (b, d, c) = (2, 8, 4);
    let config = ModelConfig::new(2, c, 3, 2, Mode::Probabilistic);
    let mut params = ModelParams::<f64>::init(config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for blk in &mut params.blocks {
        blk.w_beta.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let mut inputs: Vec<Tensor<f64>> = params
        .trainable(Phase::Finetune)
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let n = inputs.len();
    inputs.push(Tensor::from_fn(&[b, d, 2], |_| rng.random_range(-1.0..1.0)));
    inputs.push(Tensor::from_f64(&[b, 1], &[0.4, 1.1]).unwrap());
    inputs.push(Tensor::from_fn(&[b, d], |_| rng.random_range(-1.0..1.0)));
    let noise: Vec<Tensor<f64>> = (0..2)
        .map(|_| Tensor::from_fn(&[b, d, c], |_| rng.random_range(-1.0..1.0)))
        .collect();
    let report = check_gradients(
        |g, v| {
            let vars = params.bind(Phase::Finetune, &v[..n])?;
            let mut members = Vec::new();
            for e in &noise {
                let e = g.constant(e.clone());
                members.push(forward_graph(g, &params, &vars, v[n], v[n + 1], Some(e))?);
            }
            Ok(graph_loss(g, LossKind::CrpsSpectral, &members, v[n + 2], 1.0)?.0)
        },
        &inputs,
        1e-5,
        2,
    )
    .unwrap();
    assert!(report.passed, "{:?}", report.max_rel_error);
}

#[test]
fn adam_properties() {
    let mut p = Tensor::<f32>::from_fn(&[3], |i| i as f32);
    let before = p.clone();
    let mut adam = Adam::new(&[&[3]]);
    adam.update(&mut [&mut p], &[Tensor::zeros(&[3])], 1e-2).unwrap();
    assert_eq!(p, before);

    // Under a constant gradient the bias-corrected step is lr·sign(g).
    let mut q = Tensor::<f32>::zeros(&[2]);
    let mut adam = Adam::new(&[&[2]]);
    let g = Tensor::new(vec![2], vec![0.3f32, -2.0]).unwrap();
    let mut last = q.clone();
    for _ in 0..200 {
        last = q.clone();
        adam.update(&mut [&mut q], &[g.clone()], 1e-3).unwrap();
    }
    let step: Vec<f32> = q.data().iter().zip(last.data()).map(|(a, b)| a - b).collect();
    assert!((step[0] + 1e-3).abs() < 1e-6, "{step:?}");
    assert!((step[1] - 1e-3).abs() < 1e-6, "{step:?}");
}

fn ks_shard(l: f64, n: usize, seed: u64) -> Shard {
    let mut c = KsConfig::for_length(l).with_seed(seed);
    c.warmup_time = 100.0;
    Shard::from_trajectory(&generate_dataset(&c, n).unwrap()).unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        equation: "ks".into(),
        ..ModelConfig::new(2, 8, 5, 2, Mode::Deterministic)
    }
}

fn bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn pretrain_leaves_conditioning_untouched() {
    let shard = ks_shard(22.0, 40, 1);
    let mut params = ModelParams::<f32>::init(small_config(), 0).unwrap();
    let before: Vec<Vec<u8>> = params.blocks.iter().flat_map(|b| [bytes(&b.w_beta), bytes(&b.b_beta)]).collect();
    let enc = params.encoder.clone();
    let mut cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 3);
    cfg.batch_size = 8;
    pretrain(&mut params, &[shard], &cfg, |_, _| {}).unwrap();
    let after: Vec<Vec<u8>> = params.blocks.iter().flat_map(|b| [bytes(&b.w_beta), bytes(&b.b_beta)]).collect();
    assert_eq!(before, after);
    assert_ne!(enc, params.encoder);
}

#[test]
fn smoke_epoch_roundtrips_through_checkpoint() {
    let shard = ks_shard(22.0, 6, 2);
    let mut params = ModelParams::<f32>::init(small_config(), 0).unwrap();
    let mut cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 1);
    cfg.validation_fraction = 0.0;
    let report = pretrain(&mut params, &[shard.clone()], &cfg, |_, _| {}).unwrap();
    assert_eq!(report.metrics.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.npec");
    params.save(&path).unwrap();
    let loaded = ModelParams::<f32>::load(&path).unwrap();
    let hist = &shard.frames[0..2];
    let a = predict(&params, &[hist], &[22.0], Phase::Finetune, None).unwrap();
    let b = predict(&loaded, &[hist], &[22.0], Phase::Finetune, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_epoch_finetune_is_identity() {
    let shard = ks_shard(22.0, 30, 3);
    let mut params = ModelParams::<f32>::init(small_config(), 1).unwrap();
    let mut cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 2);
    cfg.batch_size = 8;
    pretrain(&mut params, &[shard.clone()], &cfg, |_, _| {}).unwrap();
    let hist = &shard.frames[3..5];
    let before = predict(&params, &[hist], &[22.0], Phase::Pretrain, None).unwrap();
    let mut tuned = params.clone();
    finetune(&mut tuned, &[shard.clone(), ks_shard(36.0, 30, 4)], &TrainConfig::finetune_from(&cfg, 0), |_, _| {}).unwrap();
    assert_eq!(tuned, params);
    let after = predict(&tuned, &[hist], &[22.0], Phase::Finetune, None).unwrap();
    for (x, y) in before[0].iter().zip(&after[0]) {
        assert!((x - y).abs() < 1e-7);
    }
}

#[test]
fn mixed_sizes_never_share_a_batch() {
    let shards = vec![ks_shard(22.0, 10, 1), ks_shard(36.0, 10, 2)];
    let mixed = [SampleRef { shard: 0, index: 0 }, SampleRef { shard: 1, index: 0 }];
    let norm = Default::default();
    assert!(matches!(assemble_batch(&shards, &mixed, 2, &norm), Err(Error::Batching(_))));
    assert!(assemble_batch(&shards, &mixed[..1], 2, &norm).is_ok());

    let mut params = ModelParams::<f32>::init(small_config(), 0).unwrap();
    let mut cfg = TrainConfig::finetune_from(&TrainConfig::pretrain(LossKind::Mse, 1e-3, 1), 2);
    cfg.batch_size = 4;
    let w = params.blocks[0].w_beta.clone();
    finetune(&mut params, &shards, &cfg, |_, _| {}).unwrap();
    assert_ne!(params.blocks[0].w_beta, w);
}

#[test]
fn pretrain_rejects_several_conditioning_values() {
    let shards = vec![ks_shard(22.0, 10, 1), ks_shard(36.0, 10, 2)];
    let mut params = ModelParams::<f32>::init(small_config(), 0).unwrap();
    let cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 1);
    assert!(matches!(pretrain(&mut params, &shards, &cfg, |_, _| {}), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts() {
    let shard = ks_shard(22.0, 10, 1);
    let mut params = ModelParams::<f32>::init(small_config(), 0).unwrap();
    params.blocks[0].w1.data_mut()[0] = f32::NAN;
    let cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 1);
    let err = pretrain(&mut params, &[shard], &cfg, |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::Training { epoch: 1, .. }), "{err}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let shard = ks_shard(22.0, 40, 5);
    let mut cfg = TrainConfig::pretrain(LossKind::Mse, 1e-3, 2);
    cfg.batch_size = 16;
    cfg.chunk_size = 3;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut p = ModelParams::<f32>::init(small_config(), 9).unwrap();
            let r = pretrain(&mut p, &[shard.clone()], &cfg, |_, _| {}).unwrap();
            (p, r.metrics)
        })
    };
    let (p1, m1) = run(1);
    let (p4, m4) = run(4);
    assert_eq!(p1, p4);
    assert_eq!(m1, m4);
}

#[test]
fn probabilistic_training_runs() {
    let shard = ks_shard(22.0, 20, 6);
    let mut config = small_config();
    config.mode = Mode::Probabilistic;
    let mut params = ModelParams::<f32>::init(config, 0).unwrap();
    let mut cfg = TrainConfig::pretrain(LossKind::CrpsSpectral, 1e-3, 2);
    cfg.batch_size = 8;
    let r = pretrain(&mut params, &[shard.clone()], &cfg, |_, _| {}).unwrap();
    assert!(r.metrics.iter().all(|m| m.train_loss.is_finite() && m.train_spectral > 0.0));
    // CRPS on a deterministic model is refused.
    let mut det = ModelParams::<f32>::init(small_config(), 0).unwrap();
    assert!(pretrain(&mut det, &[shard], &cfg, |_, _| {}).is_err());
}

#[test]
fn short_training_beats_climatology() {
    let shard = ks_shard(22.0, 22, 7);
    let values: Vec<f64> = shard.frames.iter().flatten().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;

    let mut params = ModelParams::<f32>::init(small_config(), 2).unwrap();
    let mut cfg = TrainConfig::pretrain(LossKind::Mse, 3e-3, 200);
    cfg.batch_size = 20;
    cfg.validation_fraction = 0.0;
    pretrain(&mut params, &[shard.clone()], &cfg, |_, _| {}).unwrap();

    let histories: Vec<&[Vec<f64>]> = (0..20).map(|i| &shard.frames[i..i + 2]).collect();
    let preds = predict(&params, &histories, &[22.0; 20], Phase::Pretrain, None).unwrap();
    let mut mse = 0.0;
    for (i, p) in preds.iter().enumerate() {
        mse += mse_loss(&shard.frames[i + 2], p).unwrap() / 20.0;
    }
    assert!(mse < variance, "one-step MSE {mse} vs variance {variance}");
}
