#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use candle_core::{DType, Tensor};
use distmorph::checkpoint::Provenance;
use distmorph::classifier::{BackboneSpec, Classifier, ClassifierSpec, NegativeSampleSpec};
use distmorph::gan::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use distmorph::params::ParamStore;
use distmorph::reference::{ensure_reference, ReferenceArtifacts, ReferenceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-3;

/// A 4x4 single-channel generator with no upsampling stages.
pub fn micro_generator(seed: u64, latent_dim: usize, class_embed_dim: usize, classes: usize) -> Generator {
    let spec = GeneratorSpec {
        latent_dim,
        class_count: classes,
        class_embed_dim,
        image_size: 4,
        channels: 1,
        width_multiplier: 1,
    };
    Generator::init(spec, seed, DType::F64, true).unwrap()
}

pub fn micro_discriminator(seed: u64, width: usize, classes: usize, trainable: bool) -> Discriminator {
    let spec = DiscriminatorSpec {
        class_count: classes,
        image_size: 4,
        channels: 1,
        width_multiplier: width,
    };
    Discriminator::init(spec, seed, DType::F64, trainable).unwrap()
}

pub fn micro_classifier(seed: u64, width: usize, trainable: bool) -> Classifier {
    let backbone = BackboneSpec {
        image_size: 4,
        channels: 1,
        width,
    };
    let spec = ClassifierSpec::contrastive("micro-a", "micro-b", backbone);
    let mut c = Classifier::init(spec, 0, seed, DType::F64, trainable).unwrap();
    scramble(&mut c.params, seed ^ 0xc1a55, 0.8);
    c
}

/// Replaces every parameter with N(0, std^2) draws; leaves trainability as is.
pub fn scramble(store: &mut ParamStore, seed: u64, std: f64) {
    let trainable = store.is_trainable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut out = ParamStore::new(store.dtype());
    for name in names {
        let t = store.get(&name).unwrap();
        let v: Vec<f64> = (0..t.elem_count())
            .map(|_| std * { let s: f64 = StandardNormal.sample(&mut rng); s })
            .collect();
        let fresh = Tensor::from_vec(v, t.dims(), t.device()).unwrap();
        out.insert(&name, fresh, trainable).unwrap();
    }
    *store = out;
}

pub fn random_point(n: usize, seed: u64, std: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| std * { let s: f64 = StandardNormal.sample(&mut rng); s }).collect()
}

pub fn latents(n: usize, dim: usize, seed: u64) -> Tensor {
    let v = random_point(n * dim, seed, 1.0);
    Tensor::from_vec(v, (n, dim), &candle_core::Device::Cpu).unwrap()
}

/// Gradient of `loss` w.r.t. every variable of `store`, flattened in name order.
pub fn analytic_grad(store: &ParamStore, loss: &Tensor) -> Vec<f64> {
    let grads = loss.backward().unwrap();
    let mut out = Vec::with_capacity(store.num_elements());
    for var in store.vars() {
        match grads.get(&var) {
            Some(g) => out.extend(g.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()),
            None => out.extend(std::iter::repeat_n(0.0, var.elem_count())),
        }
    }
    out
}

/// Central differences of `f` around `point` with step `h`.
pub fn central_differences(store: &ParamStore, point: &[f64], h: f64, f: impl Fn() -> f64) -> Vec<f64> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        store.assign_flat(&x).unwrap();
        let plus = f();
        x[i] = point[i] - h;
        store.assign_flat(&x).unwrap();
        let minus = f();
        x[i] = point[i];
        out.push((plus - minus) / (2.0 * h));
    }
    store.assign_flat(point).unwrap();
    out
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Checkpoints of small randomly initialized 16x16 networks: enough for every
/// property of the run loop that does not depend on training quality.
pub struct TinyNets {
    pub dir: PathBuf,
    pub generator: PathBuf,
    pub discriminator: PathBuf,
    pub classifier: PathBuf,
    pub joint: PathBuf,
}

pub fn tiny_nets(dir: &Path) -> TinyNets {
    std::fs::create_dir_all(dir).unwrap();
    let classes = 3;
    let mut gs = GeneratorSpec::new(classes, 16, 3);
    gs.latent_dim = 8;
    gs.class_embed_dim = 4;
    gs.width_multiplier = 2;
    let mut ds = DiscriminatorSpec::new(classes, 16, 3);
    ds.width_multiplier = 2;
    let backbone = BackboneSpec {
        image_size: 16,
        channels: 3,
        width: 2,
    };
    let prov = || Provenance {
        iterations: 0,
        dataset_ids: vec!["tiny-a".into(), "tiny-b".into()],
        seed: 3,
        extra: serde_json::Value::Null,
    };
    let g = Generator::init(gs, 11, DType::F32, false).unwrap();
    let d = Discriminator::init(ds, 12, DType::F32, false).unwrap();
    let c = Classifier::init(ClassifierSpec::contrastive("tiny-a", "tiny-b", backbone.clone()), 0, 13, DType::F32, false)
        .unwrap();
    let j = Classifier::init(
        ClassifierSpec::joint("tiny-a", "tiny-b", backbone, NegativeSampleSpec::default()),
        0,
        14,
        DType::F32,
        false,
    )
    .unwrap();
    let nets = TinyNets {
        dir: dir.to_path_buf(),
        generator: dir.join("generator.ckpt"),
        discriminator: dir.join("discriminator.ckpt"),
        classifier: dir.join("contrastive.ckpt"),
        joint: dir.join("joint.ckpt"),
    };
    g.to_checkpoint(prov()).unwrap().save(&nets.generator).unwrap();
    d.to_checkpoint(prov()).unwrap().save(&nets.discriminator).unwrap();
    c.to_checkpoint(prov()).unwrap().save(&nets.classifier).unwrap();
    j.to_checkpoint(prov()).unwrap().save(&nets.joint).unwrap();
    nets
}

impl TinyNets {
    pub fn config(&self, run_id: &str) -> distmorph::morph::MorphRunConfig {
        let mut cfg = distmorph::morph::MorphRunConfig::new(run_id, &self.generator, &self.discriminator, &self.classifier);
        cfg.seed = 5;
        cfg
    }
}

/// The trained reference setup, built on first use and cached under the
/// cargo target tmpdir for later test runs.
pub fn reference() -> &'static ReferenceArtifacts {
    static REF: OnceLock<ReferenceArtifacts> = OnceLock::new();
    REF.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("distmorph-reference");
        std::fs::create_dir_all(&root).unwrap();
        let lock = std::fs::File::create(root.join(".lock")).unwrap();
        lock.lock().unwrap();
        let refs = ensure_reference(&root, &ReferenceConfig::default()).unwrap();
        lock.unlock().unwrap();
        refs
    })
}

#[derive(Debug, Clone, Copy)]
pub struct OracleResult {
    pub points: usize,
    pub params: usize,
    pub max_rel_err: f64,
    /// Draws discarded because the finite-difference stencil straddled a kink.
    pub redrawn: usize,
}

/// Central differences at `h` and `h / 4` agreeing to this relative tolerance
/// mark the stencil as smooth; a kink inside it breaks the agreement.
const SMOOTH_TOL: f64 = 1e-5;
const MAX_DRAWS_PER_POINT: usize = 5;

/// Runs `terms` at random points until `points` smooth ones have been
/// compared. `setup(draw)` sets parameters and inputs for a draw and returns
/// the flat parameter point; `terms()` returns the losses to check.
fn run_oracle(
    store: &ParamStore,
    points: usize,
    mut setup: impl FnMut(u64) -> Vec<f64>,
    terms: impl Fn() -> Vec<Tensor>,
) -> (Vec<f64>, Vec<Vec<Vec<f64>>>, usize) {
    let k = terms().len();
    let mut worst = vec![0.0f64; k];
    let mut grads = Vec::new();
    let mut redrawn = 0;
    let mut draw = 0u64;
    while grads.len() < points {
        assert!(
            (draw as usize) < points * MAX_DRAWS_PER_POINT,
            "only {} of {points} draws were smooth at step {FD_STEP}",
            grads.len()
        );
        let point = setup(draw);
        draw += 1;
        let mut errs = Vec::with_capacity(k);
        let mut analytic = Vec::with_capacity(k);
        let mut smooth = true;
        for i in 0..k {
            let a = analytic_grad(store, &terms()[i]);
            let coarse = central_differences(store, &point, FD_STEP, || scalar(&terms()[i]));
            let fine = central_differences(store, &point, FD_STEP / 4.0, || scalar(&terms()[i]));
            if relative_error(&coarse, &fine) > SMOOTH_TOL {
                smooth = false;
                break;
            }
            errs.push(relative_error(&a, &coarse));
            analytic.push(a);
        }
        if !smooth {
            redrawn += 1;
            continue;
        }
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        grads.push(analytic);
    }
    (worst, grads, redrawn)
}

fn images_in_range(n: usize, seed: u64) -> Tensor {
    let v: Vec<f64> = random_point(n * 16, seed, 0.6).into_iter().map(f64::tanh).collect();
    Tensor::from_vec(v, (n, 1, 4, 4), &candle_core::Device::Cpu).unwrap()
}

/// Hinge loss of a ~100-parameter discriminator against finite differences.
pub fn hinge_oracle(points: usize) -> OracleResult {
    use distmorph::gan::loss::discriminator_hinge;
    use std::cell::RefCell;
    let d = micro_discriminator(1, 3, 20, true);
    let n = d.params.num_elements();
    let batch = RefCell::new((images_in_range(2, 0), images_in_range(2, 1)));
    let (y_real, y_fake) = ([3, 11], [7, 19]);
    let (worst, _, redrawn) = run_oracle(
        &d.params,
        points,
        |draw| {
            let point = random_point(n, 100 + draw, 0.5);
            d.params.assign_flat(&point).unwrap();
            *batch.borrow_mut() = (images_in_range(2, 200 + draw), images_in_range(2, 300 + draw));
            point
        },
        || {
            let b = batch.borrow();
            vec![discriminator_hinge(&d.score(&b.0, &y_real).unwrap(), &d.score(&b.1, &y_fake).unwrap()).unwrap()]
        },
    );
    OracleResult {
        points,
        params: n,
        max_rel_err: worst[0],
        redrawn,
    }
}

/// Classifier guidance loss through a ~60-parameter generator.
pub fn guidance_oracle(points: usize) -> OracleResult {
    use distmorph::classifier::classifier_guidance_loss;
    use std::cell::RefCell;
    let g = micro_generator(2, 1, 1, 2);
    let c = micro_classifier(3, 2, false);
    let n = g.params.num_elements();
    let z = RefCell::new(latents(2, 1, 0));
    let y = [0, 1];
    let (worst, _, redrawn) = run_oracle(
        &g.params,
        points,
        |draw| {
            let point = random_point(n, 400 + draw, 0.5);
            g.params.assign_flat(&point).unwrap();
            *z.borrow_mut() = latents(2, 1, 500 + draw);
            point
        },
        || vec![classifier_guidance_loss(&c, &g.forward(&z.borrow(), &y).unwrap(), 1).unwrap()],
    );
    OracleResult {
        points,
        params: n,
        max_rel_err: worst[0],
        redrawn,
    }
}

/// Composite-loss oracle on a ~100-parameter generator against frozen micro C
/// and D. Returns results for `loss_cls`, `loss_disc`, `loss_total`, and the
/// largest relative gap between `grad_total` and `lc grad_cls + ld grad_disc`.
pub fn composite_oracle(points: usize, lambda_cls: f64, lambda_disc: f64) -> ([OracleResult; 3], f64) {
    use distmorph::morph::composite_loss;
    use std::cell::RefCell;
    let g = micro_generator(4, 2, 2, 2);
    let c = micro_classifier(5, 2, false);
    let d = micro_discriminator(6, 2, 2, false);
    let n = g.params.num_elements();
    let z = RefCell::new(latents(2, 2, 0));
    let y = [0, 1];
    let (worst, grads, redrawn) = run_oracle(
        &g.params,
        points,
        |draw| {
            let point = random_point(n, 600 + draw, 0.5);
            g.params.assign_flat(&point).unwrap();
            *z.borrow_mut() = latents(2, 2, 700 + draw);
            point
        },
        || {
            let l = composite_loss(&g.forward(&z.borrow(), &y).unwrap(), &y, &c, &d, lambda_cls, lambda_disc).unwrap();
            vec![l.cls, l.disc, l.total]
        },
    );
    let linearity = grads
        .iter()
        .map(|g| {
            let combined: Vec<f64> = g[0].iter().zip(&g[1]).map(|(a, b)| lambda_cls * a + lambda_disc * b).collect();
            relative_error(&g[2], &combined)
        })
        .fold(0.0, f64::max);
    let r = |w| OracleResult {
        points,
        params: n,
        max_rel_err: w,
        redrawn,
    };
    ([r(worst[0]), r(worst[1]), r(worst[2])], linearity)
}
