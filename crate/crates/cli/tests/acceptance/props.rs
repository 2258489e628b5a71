use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt::Debug;

use okd_core::distill::{self, DistillConfig, Pair};
use okd_core::dosco::{
    build_domain_splits, generate_synthetic, kmeans, subsample_2k, DomainSplit, Entry, FeatureTable, Role, SyntheticDGSpec, TWO_K_TRAIN,
    TWO_K_VAL,
};
use okd_core::nets::{InputKind, Layer, Network};
use okd_core::oodgen::{self, AugKind, Augmentor};
use okd_core::{rng as streams, Graph, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng as _;

use crate::oracles::*;
use crate::Outcome;

/// Runs `test` on `cases` generated values from a fixed-seed runner.
fn suite<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: Debug,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

type Suite<'a> = (&'a str, Box<dyn Fn() -> Result<(), String> + 'a>);

/// Runs every named suite, stopping at the first failure.
fn all(suites: Vec<Suite<'_>>) -> Result<usize, String> {
    for (name, run) in &suites {
        run().map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(suites.len())
}

const GRAD_TOL: f64 = 1e-4;
const GRAD_CASES: u32 = 20;

fn grad_suite(worst: &Cell<f64>, check: impl Fn(u64) -> f64) -> Result<(), String> {
    suite(GRAD_CASES, any::<u64>(), |seed| {
        let e = check(seed);
        worst.set(worst.get().max(e));
        prop_assert!(e < GRAD_TOL, "relative error {e}");
        Ok(())
    })
}

fn student_params(net: &Network) -> Vec<Tensor> {
    net.params().iter().map(|(_, t)| t.clone()).collect()
}

pub fn gradients() -> Outcome {
    let worst = Cell::new(0.0f64);
    let w = &worst;
    type Check = Box<dyn Fn(u64) -> f64>;
    let checks: Vec<(&str, Check)> = vec![
        ("matmul", Box::new(|s| {
            let mut r = rng(s);
            let (n, k, m) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
            let (a, b) = (uniform(&[n, k], -1.0, 1.0, &mut r), uniform(&[k, m], -1.0, 1.0, &mut r));
            grad_check(&[a, b], |g, v| { let o = g.matmul(v[0], v[1])?; project(g, o, s) })
        })),
        ("add/sub/mul/scale", Box::new(|s| {
            let mut r = rng(s);
            let (a, b) = (uniform(&[2, 4], -2.0, 2.0, &mut r), uniform(&[2, 4], -2.0, 2.0, &mut r));
            grad_check(&[a, b], |g, v| {
                let d = g.sub(v[0], v[1])?;
                let p = g.mul(d, v[0])?;
                let q = g.add(p, v[1])?;
                let o = g.scale(q, -0.7)?;
                project(g, o, s)
            })
        })),
        ("add_bias", Box::new(|s| {
            let mut r = rng(s);
            let (x, b) = (uniform(&[2, 3, 4], -1.0, 1.0, &mut r), uniform(&[3], -1.0, 1.0, &mut r));
            grad_check(&[x, b], |g, v| { let o = g.add_bias(v[0], v[1])?; project(g, o, s) })
        })),
        ("conv2d", Box::new(|s| {
            let mut r = rng(s);
            let (stride, padding, k) = (r.random_range(1..3), r.random_range(0..2), r.random_range(1..4));
            let (x, wt) = (uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r), uniform(&[3, 2, k, k], -1.0, 1.0, &mut r));
            grad_check(&[x, wt], |g, v| { let o = g.conv2d(v[0], v[1], stride, padding)?; project(g, o, s) })
        })),
        ("conv1d", Box::new(|s| {
            let mut r = rng(s);
            let (stride, padding, k) = (r.random_range(1..4), r.random_range(0..3), r.random_range(1..6));
            let (x, wt) = (uniform(&[2, 2, 9], -1.0, 1.0, &mut r), uniform(&[2, 2, k], -1.0, 1.0, &mut r));
            grad_check(&[x, wt], |g, v| { let o = g.conv1d(v[0], v[1], stride, padding)?; project(g, o, s) })
        })),
        ("relu", Box::new(|s| grad_check(&[off_kink(&[3, 5], &mut rng(s))], |g, v| { let o = g.relu(v[0])?; project(g, o, s) }))),
        ("max_pool", Box::new(|s| {
            let mut r = rng(s);
            let k = r.random_range(1..3);
            let a = grad_check(&[off_kink(&[2, 2, 4, 4], &mut r)], |g, v| { let o = g.max_pool(v[0], k)?; project(g, o, s) });
            let b = grad_check(&[off_kink(&[2, 3, 6], &mut r)], |g, v| { let o = g.max_pool(v[0], k)?; project(g, o, s) });
            a.max(b)
        })),
        ("global_avg_pool/flatten/reshape", Box::new(|s| {
            let x = uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng(s));
            let a = grad_check(std::slice::from_ref(&x), |g, v| { let o = g.global_avg_pool(v[0])?; project(g, o, s) });
            let b = grad_check(&[x], |g, v| {
                let f = g.flatten(v[0])?;
                let o = g.reshape(f, vec![4, 6])?;
                project(g, o, s)
            });
            a.max(b)
        })),
        ("softmax_temp/log_softmax_temp", Box::new(|s| {
            let mut r = rng(s);
            let temp = r.random_range(0.5..5.0);
            let z = uniform(&[3, 4], -3.0, 3.0, &mut r);
            let a = grad_check(std::slice::from_ref(&z), |g, v| { let o = g.softmax_temp(v[0], temp)?; project(g, o, s) });
            let b = grad_check(&[z], |g, v| { let o = g.log_softmax_temp(v[0], temp)?; project(g, o, s) });
            a.max(b)
        })),
        ("log/gather/sum/mean", Box::new(|s| {
            let mut r = rng(s);
            let x = uniform(&[3, 4], 0.2, 3.0, &mut r);
            let idx = labels(3, 4, &mut r);
            grad_check(&[x], |g, v| {
                let l = g.log(v[0])?;
                let p = g.gather(l, &idx)?;
                let t = g.sum(p)?;
                let m = g.mean(v[0])?;
                g.add(t, m)
            })
        })),
        ("softened_kl", Box::new(|s| {
            let mut r = rng(s);
            let temp = r.random_range(0.5..5.0);
            let (zs, zt) = (uniform(&[3, 5], -3.0, 3.0, &mut r), uniform(&[3, 5], -3.0, 3.0, &mut r));
            grad_check(&[zs], |g, v| distill::softened_kl(g, v[0], &zt, temp))
        })),
        ("cross_entropy", Box::new(|s| {
            let mut r = rng(s);
            let temp = r.random_range(0.5..5.0);
            let z = uniform(&[4, 3], -3.0, 3.0, &mut r);
            let y = labels(4, 3, &mut r);
            grad_check(&[z], |g, v| distill::cross_entropy(g, &y, v[0], temp))
        })),
        ("kd_loss wrt student", Box::new(|s| {
            let (student, teacher) = (small_cnn(3, s), small_cnn(3, s.wrapping_add(1)));
            let mut r = rng(s);
            let x = uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut r);
            let y = labels(3, 3, &mut r);
            let dc = DistillConfig { lambda: r.random_range(0.05..1.0), ..DistillConfig::default() };
            grad_check(&student_params(&student), |g, v| {
                let pair = Pair { student: &student, params: v, teacher: &teacher };
                Ok(distill::kd_loss(g, &pair, &x, &y, &dc)?.total)
            })
        })),
        ("okd_loss wrt student", Box::new(|s| {
            let (student, teacher) = (small_cnn(3, s), small_cnn(3, s.wrapping_add(1)));
            let mut r = rng(s);
            let x = uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut r);
            let y = labels(3, 3, &mut r);
            let kinds = [AugKind::CutmixMixup, AugKind::Jigsaw, AugKind::Mixup, AugKind::Identity];
            let aug = Augmentor::new(kinds[r.random_range(0..kinds.len())]);
            let dc = DistillConfig::default();
            grad_check(&student_params(&student), |g, v| {
                let pair = Pair { student: &student, params: v, teacher: &teacher };
                Ok(distill::okd_loss(g, &pair, &x, &y, &aug, &dc, &mut rng(s ^ 7))?.total)
            })
        })),
    ];
    let names = checks.len();
    let suites = checks.into_iter().map(|(name, check)| (name, Box::new(move || grad_suite(w, &check)) as Box<dyn Fn() -> Result<(), String> + '_>)).collect();
    match all(suites) {
        Ok(_) => Outcome::pass(format!("{names} ops x {GRAD_CASES} instances, max relative error {:.2e} < {GRAD_TOL:e}", worst.get())),
        Err(e) => Outcome::fail(e),
    }
}

fn value(g: &Graph, v: okd_core::Var) -> f64 {
    g.value(v).item().unwrap()
}

pub fn loss_identities() -> Outcome {
    let worst = Cell::new(0.0f64);
    let w = &worst;
    let args = || (any::<u64>(), 0.01f64..1.0, 0.5f64..8.0);
    let suites: Vec<Suite<'_>> = vec![
        ("okd(identity) - kd", Box::new(move || suite(50, args(), |(seed, lambda, pi)| {
            let (student, teacher) = (mlp(5, 6, 4, seed), mlp(5, 9, 4, seed.wrapping_add(1)));
            let mut r = rng(seed);
            let x = uniform(&[6, 5], -2.0, 2.0, &mut r);
            let y = labels(6, 4, &mut r);
            let dc = DistillConfig { lambda, pi_kl: pi, ..DistillConfig::default() };
            let mut g = Graph::new();
            let params = student.bind(&mut g, true);
            let pair = Pair { student: &student, params: &params, teacher: &teacher };
            let kd = distill::kd_loss(&mut g, &pair, &x, &y, &dc).unwrap();
            let okd = distill::okd_loss(&mut g, &pair, &x, &y, &Augmentor::new(AugKind::Identity), &dc, &mut rng(seed)).unwrap();
            let kl = manual_kl(&student.logits(&x).unwrap(), &teacher.logits(&x).unwrap(), pi);
            let err = (value(&g, okd.total) - value(&g, kd.total) - (1.0 - lambda) * kl).abs();
            w.set(w.get().max(err));
            prop_assert!(err < 1e-9, "error {err}");
            Ok(())
        }))),
        ("kd with cloned teacher", Box::new(move || suite(50, args(), |(seed, lambda, pi)| {
            let student = mlp(4, 7, 3, seed);
            let teacher = student.clone();
            let mut r = rng(seed);
            let x = uniform(&[5, 4], -2.0, 2.0, &mut r);
            let y = labels(5, 3, &mut r);
            let dc = DistillConfig { lambda, pi_kl: pi, ..DistillConfig::default() };
            let mut g = Graph::new();
            let params = student.bind(&mut g, true);
            let pair = Pair { student: &student, params: &params, teacher: &teacher };
            let kd = distill::kd_loss(&mut g, &pair, &x, &y, &dc).unwrap();
            let err = (value(&g, kd.total) - lambda * manual_ce(&student.logits(&x).unwrap(), &y)).abs();
            w.set(w.get().max(err));
            prop_assert!(err < 1e-9, "error {err}");
            Ok(())
        }))),
        ("softmax_temp argmax", Box::new(|| {
            let mut r = rng(2024);
            for case in 0..1000 {
                let c = r.random_range(2..12);
                let z = uniform(&[1, c], -20.0, 20.0, &mut r);
                let pi = 10f64.powf(r.random_range(-3.0..3.0));
                let mut g = Graph::new();
                let zv = g.constant(z.clone());
                let p = g.softmax_temp(zv, pi).map_err(|e| e.to_string())?;
                if argmax(g.value(p).data()) != argmax(z.data()) {
                    return Err(format!("vector {case} at pi {pi}"));
                }
            }
            Ok(())
        })),
    ];
    match all(suites) {
        Ok(_) => Outcome::pass(format!("2 identities x 50 instances, max abs error {:.2e} < 1e-9; argmax kept on 1000 vectors", worst.get())),
        Err(e) => Outcome::fail(e),
    }
}

fn image_batch(seed: u64, n: usize, side: usize) -> Tensor {
    uniform(&[n, 2, side, side], -3.0, 3.0, &mut rng(seed))
}

fn wave_batch(seed: u64, n: usize, len: usize) -> Tensor {
    uniform(&[n, 2, len], 0.5, 1.5, &mut rng(seed))
}

fn tiny_image_model(seed: u64) -> Network {
    let layers = vec![Layer::Conv2d { filters: 2, kernel: 3, stride: 1, padding: 1 }, Layer::Globalavgpool, Layer::Dense { out: 3 }];
    net(InputKind::Image2d, vec![2, 8, 8], layers, 3, seed)
}

const IMAGE_KINDS: [AugKind; 7] =
    [AugKind::Identity, AugKind::Cutmix, AugKind::Mixup, AugKind::CutmixMixup, AugKind::Jigsaw, AugKind::GaussianNoise, AugKind::AdvGradient];
const WAVE_KINDS: [AugKind; 6] = [AugKind::Identity, AugKind::Mixup, AugKind::GaussianNoise, AugKind::WaveMixup, AugKind::WaveNoise, AugKind::WaveMask];
const AUG_CASES: u32 = 120;

pub fn augmentors() -> Outcome {
    let suites: Vec<Suite<'_>> = vec![
        ("image shape", Box::new(|| suite(AUG_CASES, (any::<u64>(), 2usize..6, prop::sample::select(IMAGE_KINDS.to_vec())), |(seed, n, kind)| {
            let x = image_batch(seed, n, 8);
            let y = labels(n, 3, &mut rng(seed));
            let out = Augmentor::new(kind).apply(&x, &y, Some(&tiny_image_model(seed)), &mut rng(seed)).unwrap();
            prop_assert_eq!(out.shape(), x.shape());
            Ok(())
        }))),
        ("wave shape", Box::new(|| suite(AUG_CASES, (any::<u64>(), 2usize..6, 5usize..40, prop::sample::select(WAVE_KINDS.to_vec())), |(seed, n, len, kind)| {
            let x = wave_batch(seed, n, len);
            let out = Augmentor::new(kind).apply(&x, &vec![0; n], None, &mut rng(seed)).unwrap();
            prop_assert_eq!(out.shape(), x.shape());
            Ok(())
        }))),
        ("mixup family hull", Box::new(|| {
            let kinds = vec![AugKind::Mixup, AugKind::Cutmix, AugKind::CutmixMixup];
            suite(AUG_CASES, (any::<u64>(), 2usize..6, 0.2f64..3.0, 0.2f64..3.0, prop::sample::select(kinds)), |(seed, n, a, b, kind)| {
                let x = image_batch(seed, n, 8);
                let out = Augmentor { beta_a: a, beta_b: b, ..Augmentor::new(kind) }.apply(&x, &[], None, &mut rng(seed)).unwrap();
                let stride = x.numel() / n;
                for j in 0..stride {
                    let col = (0..n).map(|i| x.data()[i * stride + j]);
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    for i in 0..n {
                        prop_assert!((lo..=hi).contains(&out.data()[i * stride + j]));
                    }
                }
                Ok(())
            })
        })),
        ("jigsaw multiset", Box::new(|| suite(AUG_CASES, (any::<u64>(), 1usize..4, prop::sample::select(vec![1usize, 4, 16, 64])), |(seed, n, k)| {
            let x = image_batch(seed, n, 16);
            let out = oodgen::jigsaw(&x, k, &mut rng(seed)).unwrap();
            for (a, b) in x.data().chunks(256).zip(out.data().chunks(256)) {
                let (mut a, mut b) = (a.to_vec(), b.to_vec());
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }
            Ok(())
        }))),
        ("adv_gradient epsilon", Box::new(|| suite(AUG_CASES, (any::<u64>(), 1usize..4, 1i32..8), |(seed, n, e)| {
            let mut r = rng(seed);
            let x = Tensor::from_fn([n, 2, 8, 8], |_| r.random_range(-512i32..512) as f64 / 128.0);
            let eps = 2f64.powi(-e);
            let y = labels(n, 3, &mut r);
            let out = oodgen::adv_gradient(&x, &y, &tiny_image_model(seed), eps).unwrap();
            let deltas: Vec<f64> = out.data().iter().zip(x.data()).map(|(o, v)| (o - v).abs()).collect();
            prop_assert!(deltas.iter().all(|&d| d == 0.0 || d == eps));
            prop_assert!(deltas.contains(&eps));
            Ok(())
        }))),
        ("wave_mask count", Box::new(|| suite(AUG_CASES, (any::<u64>(), 1usize..4, 1usize..60, 0.0f64..=1.0), |(seed, n, len, fraction)| {
            let x = wave_batch(seed, n, len);
            let out = oodgen::wave_mask(&x, fraction, &mut rng(seed)).unwrap();
            let want = (fraction * len as f64).round() as usize;
            for row in out.data().chunks(len) {
                let zeros: Vec<usize> = (0..len).filter(|&t| row[t] == 0.0).collect();
                prop_assert_eq!(zeros.len(), want);
                if want > 0 {
                    prop_assert_eq!(zeros[want - 1] - zeros[0] + 1, want);
                }
            }
            Ok(())
        }))),
        ("seed determinism", Box::new(|| suite(AUG_CASES, (any::<u64>(), prop::sample::select(IMAGE_KINDS.to_vec())), |(seed, kind)| {
            let x = image_batch(seed, 4, 8);
            let y = labels(4, 3, &mut rng(seed));
            let model = tiny_image_model(seed);
            let aug = Augmentor::new(kind);
            let a = aug.apply(&x, &y, Some(&model), &mut rng(seed)).unwrap();
            let b = aug.apply(&x, &y, Some(&model), &mut rng(seed)).unwrap();
            prop_assert_eq!(a.data(), b.data());
            Ok(())
        }))),
    ];
    match all(suites) {
        Ok(n) => Outcome::pass(format!("{n} property suites x {AUG_CASES} cases")),
        Err(e) => Outcome::fail(e),
    }
}

fn kmeans_instance() -> impl Strategy<Value = (Vec<Vec<i64>>, usize, u64)> {
    (1usize..=2, 1usize..=3, any::<u64>()).prop_flat_map(|(d, k, seed)| {
        let point = prop::collection::vec(-10i64..=10, d);
        (prop::collection::vec(point, k..=8), Just(k), Just(seed))
    })
}

pub fn kmeans_oracle() -> Outcome {
    let cases = 80;
    let result = suite(cases, kmeans_instance(), |(points, k, seed)| {
        let d = points[0].len();
        let flat: Vec<f64> = points.iter().flatten().map(|&v| v as f64).collect();
        let fit = kmeans(&Tensor::new([points.len(), d], flat).unwrap(), k, seed, 100).unwrap();
        let optimum = brute_force(&points, k);
        prop_assert_eq!(scaled_cost(&points, &fit.assignments, k), optimum);
        prop_assert!((fit.objective - optimum as f64 / COST_SCALE as f64).abs() < 1e-9);
        Ok(())
    });
    match result {
        Ok(()) => Outcome::pass(format!("{cases} instances with N <= 8, D <= 2, K <= 3 reach the exhaustive optimum")),
        Err(e) => Outcome::fail(e),
    }
}

fn role_domains(split: &DomainSplit, class: usize, roles: &[Role]) -> BTreeSet<usize> {
    roles.iter().flat_map(|&r| split.domains_of(class, r)).collect()
}

fn val_share_ok(split: &DomainSplit) -> bool {
    let pool = split.count(Role::Train) + split.count(Role::Val);
    split.count(Role::Val) == (0.2 * pool as f64).round() as usize
}

fn blob_table(classes: usize, blobs: usize, per_blob: usize, seed: u64) -> FeatureTable {
    let mut r = rng(seed);
    let (mut ids, mut feats, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..classes {
        for b in 0..blobs {
            let centre = [10.0 * b as f64, 10.0 * c as f64, r.random_range(-1.0..1.0)];
            for _ in 0..per_blob {
                ids.push(format!("c{c}b{b}n{}", ids.len()));
                feats.extend(centre.iter().map(|v| v + r.random_range(-0.5..0.5)));
                labels.push(c);
            }
        }
    }
    FeatureTable::new(ids.clone(), Tensor::new([ids.len(), 3], feats).unwrap(), labels).unwrap()
}

pub fn dosco_contracts() -> Outcome {
    let synth_runs = 60;
    let suites: Vec<Suite<'_>> = vec![
        ("synthetic disjointness", Box::new(move || suite(synth_runs, (any::<u64>(), 2usize..8, 2usize..5), |(seed, domains, classes)| {
            let spec = SyntheticDGSpec { seed, num_domains: domains, num_classes: classes, samples_per_cell: 5, image_side: 8, motif_side: 4, ..SyntheticDGSpec::default() };
            let (_, split) = generate_synthetic(&spec).unwrap();
            prop_assert!(split.check_disjoint().is_ok());
            for c in 0..classes {
                let (train, test) = (role_domains(&split, c, &[Role::Train, Role::Val]), role_domains(&split, c, &[Role::Test]));
                prop_assert!(train.is_disjoint(&test));
                prop_assert_eq!(train.len() + test.len(), domains);
            }
            prop_assert!(val_share_ok(&split));
            Ok(())
        }))),
        ("default synthetic spec", Box::new(|| {
            for seed in 0..5 {
                let (_, split) = generate_synthetic(&SyntheticDGSpec { seed, ..SyntheticDGSpec::default() }).map_err(|e| e.to_string())?;
                split.check_disjoint().map_err(|e| format!("seed {seed}: {e}"))?;
                if !val_share_ok(&split) {
                    return Err(format!("seed {seed}: val share"));
                }
            }
            Ok(())
        })),
        ("discovered split disjointness", Box::new(|| suite(30, (any::<u64>(), 1usize..4, 2usize..11), |(seed, classes, k)| {
            let split = build_domain_splits(&blob_table(classes, k, 4, seed), k, seed).unwrap();
            prop_assert!(split.check_disjoint().is_ok());
            for c in 0..classes {
                let (train, test) = (role_domains(&split, c, &[Role::Train, Role::Val]), role_domains(&split, c, &[Role::Test]));
                prop_assert!(train.is_disjoint(&test));
                prop_assert_eq!(train.len() + test.len(), k);
            }
            prop_assert!(val_share_ok(&split));
            Ok(())
        }))),
        ("2k subsample", Box::new(|| suite(30, (any::<u64>(), prop::collection::vec(500usize..1500, 2..5)), |(seed, sizes)| {
            let mut split = DomainSplit::new(2, 0);
            let mut n = 0;
            for (c, &size) in sizes.iter().enumerate() {
                for i in 0..size + 7 {
                    let role = if i >= size { Role::Test } else if i % 5 == 0 { Role::Val } else { Role::Train };
                    split.insert(format!("ex{n:06}"), Entry { class: c, domain: usize::from(role == Role::Test), role }).unwrap();
                    n += 1;
                }
            }
            prop_assume!(split.count(Role::Train) >= TWO_K_TRAIN && split.count(Role::Val) >= TWO_K_VAL);
            let out = subsample_2k(&split, &mut streams::stream(seed, streams::SUBSAMPLE)).unwrap();
            prop_assert_eq!((out.count(Role::Train), out.count(Role::Val)), (1600, 400));
            prop_assert_eq!(out.count(Role::Test), split.count(Role::Test));
            Ok(())
        }))),
        ("discovered split then 2k", Box::new(|| {
            let split = build_domain_splits(&blob_table(3, 10, 150, 9), 10, 9).map_err(|e| e.to_string())?;
            let out = subsample_2k(&split, &mut streams::stream(9, streams::SUBSAMPLE)).map_err(|e| e.to_string())?;
            match (out.count(Role::Train), out.count(Role::Val)) {
                (1600, 400) => Ok(()),
                other => Err(format!("kept {other:?}")),
            }
        })),
    ];
    match all(suites) {
        Ok(n) => Outcome::pass(format!("{n} suites: roles disjoint on {synth_runs} synthetic + 30 discovered splits, 2k = 1600/400, val = round(0.2 x pool)")),
        Err(e) => Outcome::fail(e),
    }
}
