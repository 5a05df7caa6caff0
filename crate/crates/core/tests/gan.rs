use candle_core::{DType, Device, Tensor};
use distmorph::checkpoint::{Checkpoint, Provenance};
use distmorph::data::{load_dataset, DatasetSpec};
use distmorph::gan::{
    discriminator_score, generate, interpolate_classes, pretrain_gan, sample_latents, Discriminator, DiscriminatorSpec,
    GanTrainConfig, Generator, GeneratorSpec,
};
use distmorph::{seed, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_generator(seed: u64) -> Generator {
    let mut spec = GeneratorSpec::new(10, 16, 3);
    spec.latent_dim = 16;
    spec.width_multiplier = 4;
    Generator::init(spec, seed, DType::F32, false).unwrap()
}

fn small_discriminator(seed: u64) -> Discriminator {
    let mut spec = DiscriminatorSpec::new(10, 16, 3);
    spec.width_multiplier = 4;
    Discriminator::init(spec, seed, DType::F32, false).unwrap()
}

fn latents(n: usize, dim: usize, s: u64) -> Tensor {
    sample_latents(&mut ChaCha8Rng::seed_from_u64(s), n, dim, DType::F32).unwrap()
}

fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
}

#[test]
fn generator_batch_has_requested_shape_and_range() {
    let g = small_generator(1);
    let y: Vec<usize> = (0..9).collect();
    let out = generate(&g, &latents(9, 16, 2), &y).unwrap();
    assert_eq!(out.dims(), &[9, 3, 16, 16]);
    assert!(values(&out).iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn generation_is_a_pure_function_of_inputs() {
    let g = small_generator(1);
    let z = latents(9, 16, 3);
    let y = vec![4; 9];
    assert_eq!(values(&generate(&g, &z, &y).unwrap()), values(&generate(&g, &z, &y).unwrap()));
    let zero = Tensor::zeros((2, 16), DType::F32, &Device::Cpu).unwrap();
    let out = values(&generate(&g, &zero, &[0, 0]).unwrap());
    assert!(out.iter().all(|v| v.is_finite()));
    let plane = 3 * 16 * 16;
    assert_eq!(out[..plane], out[plane..]);
}

#[test]
fn generator_rejects_bad_inputs() {
    let g = small_generator(1);
    assert!(matches!(generate(&g, &latents(2, 8, 0), &[0, 1]), Err(Error::Contract(_))));
    assert!(matches!(generate(&g, &latents(2, 16, 0), &[0]), Err(Error::Contract(_))));
    assert!(matches!(generate(&g, &latents(2, 16, 0), &[0, 10]), Err(Error::Contract(_))));
}

#[test]
fn discriminator_scores_are_finite_per_image() {
    let d = small_discriminator(5);
    let imgs = generate(&small_generator(1), &latents(6, 16, 4), &[0, 1, 2, 3, 4, 5]).unwrap();
    let s = discriminator_score(&d, &imgs, &[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(s.dims(), &[6]);
    assert!(values(&s).iter().all(|v| v.is_finite()));
    let wrong = Tensor::zeros((2, 1, 16, 16), DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(d.score(&wrong, &[0, 0]), Err(Error::Contract(_))));
    let big = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(d.score(&big, &[0, 0]), Err(Error::Contract(_))));
}

#[test]
fn checkpoints_round_trip_bit_identically() {
    let g = small_generator(7);
    let d = small_discriminator(8);
    let tmp = tempfile::tempdir().unwrap();
    let prov = Provenance {
        iterations: 12,
        dataset_ids: vec!["a".into()],
        seed: 7,
        extra: serde_json::json!({"note": "x"}),
    };
    g.to_checkpoint(prov.clone()).unwrap().save(&tmp.path().join("g.ckpt")).unwrap();
    d.to_checkpoint(prov).unwrap().save(&tmp.path().join("d.ckpt")).unwrap();
    let gc = Checkpoint::load(&tmp.path().join("g.ckpt")).unwrap();
    let g2 = Generator::from_checkpoint(&gc, DType::F32, false).unwrap();
    assert_eq!(g2.params.content_hash().unwrap(), g.params.content_hash().unwrap());
    assert_eq!(gc.meta.content_hash, g.params.content_hash().unwrap());
    assert_eq!((gc.meta.iterations, gc.meta.dataset_ids.as_slice()), (12, &["a".to_string()][..]));
    let z = latents(3, 16, 9);
    assert_eq!(values(&g.forward(&z, &[1, 2, 3]).unwrap()), values(&g2.forward(&z, &[1, 2, 3]).unwrap()));
    let d2 = Discriminator::from_checkpoint(&Checkpoint::load(&tmp.path().join("d.ckpt")).unwrap(), DType::F32, false)
        .unwrap();
    assert_eq!(d2.params.content_hash().unwrap(), d.params.content_hash().unwrap());
    assert!(Discriminator::from_checkpoint(&gc, DType::F32, false).is_err());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("g.ckpt");
    small_generator(1).to_checkpoint(Provenance::default()).unwrap().save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes.truncate(n / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(&tmp.path().join("missing.ckpt")).is_err());
}

#[test]
fn interpolation_endpoints_match_plain_generation() {
    let g = small_generator(3);
    let z = latents(1, 16, 11);
    let row = interpolate_classes(&g, &z, 2, 7, 8).unwrap();
    assert_eq!(row.dims(), &[8, 3, 16, 16]);
    let first = values(&row.narrow(0, 0, 1).unwrap());
    let last = values(&row.narrow(0, 7, 1).unwrap());
    assert_eq!(first, values(&generate(&g, &z, &[2]).unwrap()));
    assert_eq!(last, values(&generate(&g, &z, &[7]).unwrap()));
    assert!(interpolate_classes(&g, &z, 2, 7, 1).is_err());
}

fn tiny_pretrain(iterations: u64) -> GanTrainConfig {
    GanTrainConfig {
        iterations,
        batch_size: 8,
        seed: 21,
        log_every: 1,
        latent_dim: 8,
        class_embed_dim: 4,
        g_width: 2,
        d_width: 2,
        ..GanTrainConfig::default()
    }
}

#[test]
fn zero_iteration_pretrain_returns_the_initialization() {
    let ds = load_dataset(&DatasetSpec::synthetic_shapes("a", 16, 3, 1).with_samples(64)).unwrap();
    let cfg = tiny_pretrain(0);
    let out = pretrain_gan(&ds, &cfg, None).unwrap();
    let mut spec = GeneratorSpec::new(10, 16, 3);
    spec.latent_dim = 8;
    spec.class_embed_dim = 4;
    spec.width_multiplier = 2;
    let init = Generator::init(spec, seed::mix(cfg.seed, 1), DType::F32, false).unwrap();
    assert_eq!(out.generator.meta.content_hash, init.params.content_hash().unwrap());
    assert_eq!(out.generator.meta.iterations, 0);
}

#[test]
fn pretraining_is_deterministic_and_logs_each_step() {
    let ds = load_dataset(&DatasetSpec::synthetic_shapes("a", 16, 3, 1).with_samples(64)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let a = pretrain_gan(&ds, &tiny_pretrain(6), Some(tmp.path())).unwrap();
    let b = pretrain_gan(&ds, &tiny_pretrain(6), None).unwrap();
    assert_eq!(a.generator.meta.content_hash, b.generator.meta.content_hash);
    assert_eq!(a.discriminator.meta.content_hash, b.discriminator.meta.content_hash);
    assert_eq!(a.log.len(), 6);
    assert!(a.log.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
    let logged: Vec<distmorph::gan::GanLogRecord> =
        distmorph::fsutil::read_jsonl(&tmp.path().join("train_log.jsonl")).unwrap();
    assert_eq!(logged.len(), 6);
    assert_eq!(a.generator.meta.dataset_ids, vec![ds.id().to_string()]);
    assert!(pretrain_gan(&ds, &GanTrainConfig { batch_size: 0, ..tiny_pretrain(1) }, None).is_err());
}
