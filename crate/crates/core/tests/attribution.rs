#![allow(clippy::needless_range_loop)]

use quake_pda::attribution::{
    sample_background, shapley_exact, shapley_sampled, summarize_classwise, write_shap_values_csv, write_summaries,
    AttributionError, FeatureGroups, Instance, NetworkModel, ProbabilityModel, SamplingConfig,
};
use quake_pda::autodiff::softmax;
use quake_pda::dataset::MetadataVector;
use quake_pda::model::{init_model, EmbeddingVariant, MaskSpec, ModelConfig, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inst(values: Vec<f64>, image: Vec<f64>) -> Instance {
    Instance {
        image,
        metadata: MetadataVector::unmasked(values),
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

/// Seven metadata features and a 4-pixel image, three classes, with
/// interactions between groups.
struct Fixture;

impl ProbabilityModel for Fixture {
    fn probabilities(&self, x: &Instance) -> Result<Vec<f64>, ModelError> {
        let v = &x.metadata.values;
        let img: f64 = x.image.iter().sum::<f64>() / x.image.len() as f64;
        let z = [
            v[0] * v[1] + v[2].sin() + 0.3 * img,
            v[3] * v[3] - v[4] + 0.5 * v[5] * v[6],
            (v[6] + img).tanh() - 0.2 * v[0],
        ];
        Ok(softmax(&z))
    }
}

struct Linear {
    a: Vec<f64>,
    a_img: f64,
}

impl ProbabilityModel for Linear {
    fn probabilities(&self, x: &Instance) -> Result<Vec<f64>, ModelError> {
        let s: f64 = self.a.iter().zip(&x.metadata.values).map(|(a, v)| a * v).sum();
        Ok(vec![s + self.a_img * x.image[0]])
    }
}

struct Constant;

impl ProbabilityModel for Constant {
    fn probabilities(&self, _: &Instance) -> Result<Vec<f64>, ModelError> {
        Ok(vec![0.25, 0.75])
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    inst((0..7).map(|_| rng.gen_range(-1.5..1.5)).collect(), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn fixture_data() -> (Instance, Vec<Instance>, FeatureGroups) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random_instance(&mut rng);
    let bg: Vec<Instance> = (0..4).map(|_| random_instance(&mut rng)).collect();
    (x, bg, FeatureGroups::new(names(7), true))
}

/// Average marginal contribution over all n! orderings.
fn permutation_oracle(m: &impl ProbabilityModel, x: &Instance, bg: &[Instance], groups: &FeatureGroups) -> Vec<Vec<f64>> {
    let n = groups.len();
    let v = |present: &[bool]| -> Vec<f64> {
        let mut acc = vec![0.0; 3];
        for b in bg {
            let mut values = b.metadata.values.clone();
            for j in 0..7 {
                if present[j] {
                    values[j] = x.metadata.values[j];
                }
            }
            let image = if present[7] { x.image.clone() } else { b.image.clone() };
            let p = m.probabilities(&inst(values, image)).unwrap();
            acc.iter_mut().zip(&p).for_each(|(a, q)| *a += q / bg.len() as f64);
        }
        acc
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = vec![vec![0.0; 3]; n];
    let mut count = 0usize;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let visit = |perm: &[usize], out: &mut Vec<Vec<f64>>| {
        let mut present = vec![false; n];
        let mut prev = v(&present);
        for &g in perm {
            present[g] = true;
            let cur = v(&present);
            for k in 0..3 {
                out[g][k] += cur[k] - prev[k];
            }
            prev = cur;
        }
    };
    visit(&perm, &mut out);
    count += 1;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm, &mut out);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    assert_eq!(count, 40320);
    out.iter().map(|r| r.iter().map(|s| s / count as f64).collect()).collect()
}

#[test]
fn exact_matches_permutation_oracle() {
    let (x, bg, groups) = fixture_data();
    let a = shapley_exact(&Fixture, &x, &bg, &groups).unwrap();
    let oracle = permutation_oracle(&Fixture, &x, &bg, &groups);
    for g in 0..8 {
        for c in 0..3 {
            assert!((a.values[g][c] - oracle[g][c]).abs() <= 1e-9, "group {g} class {c}");
        }
    }
    assert!(a.efficiency_residual().iter().all(|r| *r < 1e-9));
}

#[test]
fn linear_closed_form() {
    let a = vec![0.5, -2.0, 3.0, 0.0];
    let m = Linear { a: a.clone(), a_img: 1.5 };
    let x = inst(vec![1.0, 2.0, -1.0, 7.0], vec![0.3]);
    let b = inst(vec![0.25, -1.0, 2.0, -3.0], vec![-0.1]);
    let r = shapley_exact(&m, &x, std::slice::from_ref(&b), &FeatureGroups::new(names(4), true)).unwrap();
    for i in 0..4 {
        assert!((r.values[i][0] - a[i] * (x.metadata.values[i] - b.metadata.values[i])).abs() < 1e-12);
    }
    assert!((r.values[4][0] - 1.5 * 0.4).abs() < 1e-12);
    assert_eq!(r.values[3][0], 0.0);
}

#[test]
fn constant_model_gets_zero() {
    let (x, bg, groups) = fixture_data();
    let r = shapley_exact(&Constant, &x, &bg, &groups).unwrap();
    assert!(r.values.iter().flatten().all(|v| *v == 0.0));
    let s = shapley_sampled(&Constant, &x, &bg, &groups, &SamplingConfig { sample_count: 20, seed: 1, ..Default::default() }).unwrap();
    assert!(s.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn symmetric_features_share_credit() {
    let m = Linear { a: vec![2.0, 2.0, 1.0], a_img: 0.0 };
    let x = inst(vec![1.0, 1.0, 0.5], vec![0.0]);
    let bg = vec![inst(vec![0.0, 0.0, 0.0], vec![0.0]), inst(vec![-1.0, -1.0, 2.0], vec![1.0])];
    let r = shapley_exact(&m, &x, &bg, &FeatureGroups::new(names(3), true)).unwrap();
    assert!((r.values[0][0] - r.values[1][0]).abs() < 1e-12);
    assert_eq!(r.values[3][0], 0.0);
}

#[test]
fn sampled_converges_to_exact() {
    let (x, bg, groups) = fixture_data();
    let exact = shapley_exact(&Fixture, &x, &bg, &groups).unwrap();
    let cfg = SamplingConfig { sample_count: 10_000, seed: 5, ..Default::default() };
    let s = shapley_sampled(&Fixture, &x, &bg, &groups, &cfg).unwrap();
    for g in 0..8 {
        for c in 0..3 {
            let (e, v) = (exact.values[g][c], s.values[g][c]);
            let tol = (0.02 * e.abs()).max(0.005);
            assert!((e - v).abs() <= tol, "group {g} class {c}: {v} vs {e}");
        }
    }
    assert_eq!(s, shapley_sampled(&Fixture, &x, &bg, &groups, &cfg).unwrap());
    // One background draw per pair: noisier but centred on the same values.
    let cheap = SamplingConfig { full_background: false, ..cfg };
    let s = shapley_sampled(&Fixture, &x, &bg, &groups, &cheap).unwrap();
    for g in 0..8 {
        for c in 0..3 {
            assert!((exact.values[g][c] - s.values[g][c]).abs() <= 5.0 * s.stderr[g][c] + 1e-12);
        }
    }
}

#[test]
fn sampled_residual_shrinks() {
    let (x, bg, groups) = fixture_data();
    let mean_residual = |n: usize| -> f64 {
        (0..6)
            .map(|seed| {
                let cfg = SamplingConfig { sample_count: n, seed, full_background: false };
                let s = shapley_sampled(&Fixture, &x, &bg, &groups, &cfg).unwrap();
                s.efficiency_residual().iter().sum::<f64>()
            })
            .sum::<f64>()
            / 6.0
    };
    let (small, large) = (mean_residual(40), mean_residual(4000));
    // 100x more samples: expect about 10x smaller.
    assert!(large < small / 3.0, "{small} -> {large}");
    // Averaging over the whole background makes every permutation telescope.
    let cfg = SamplingConfig { sample_count: 40, seed: 0, ..Default::default() };
    let s = shapley_sampled(&Fixture, &x, &bg, &groups, &cfg).unwrap();
    assert!(s.efficiency_residual().iter().all(|r| *r < 1e-12));
}

#[test]
fn errors() {
    let (x, bg, _) = fixture_data();
    let big = FeatureGroups::new(names(15), true);
    assert!(matches!(shapley_exact(&Fixture, &x, &bg, &big), Err(AttributionError::TooManyGroups(16))));
    let groups = FeatureGroups::new(names(7), true);
    assert!(matches!(shapley_exact(&Fixture, &x, &[], &groups), Err(AttributionError::EmptyBackground)));
    assert!(matches!(
        shapley_sampled(&Fixture, &x, &bg, &groups, &SamplingConfig { sample_count: 9, seed: 0, ..Default::default() }),
        Err(AttributionError::TooFewSamples(9))
    ));
}

#[test]
fn image_only_network_gives_metadata_nothing() {
    let cfg = ModelConfig::tiny(3, 3, EmbeddingVariant::None);
    let p = init_model(&cfg, 2).unwrap();
    let model = NetworkModel { params: &p, mask: MaskSpec::none(3) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mk = || inst((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(), (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let x = mk();
    let bg = vec![mk(), mk()];
    let r = shapley_exact(&model, &x, &bg, &FeatureGroups::new(names(3), true)).unwrap();
    for g in 0..3 {
        assert!(r.values[g].iter().all(|v| *v == 0.0));
    }
    assert!(r.efficiency_residual().iter().all(|v| *v < 1e-12));
    let qmf = init_model(&ModelConfig::tiny(3, 3, EmbeddingVariant::Mlp), 2).unwrap();
    let model = NetworkModel { params: &qmf, mask: MaskSpec::none(3) };
    let r = shapley_exact(&model, &x, &bg, &FeatureGroups::new(names(3), true)).unwrap();
    assert!(r.efficiency_residual().iter().all(|v| *v < 1e-12));
}

#[test]
fn summaries_rank_by_magnitude() {
    let m = Linear { a: vec![0.1, -3.0, 0.0, 1.0], a_img: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mk = |rng: &mut ChaCha8Rng| inst((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), vec![0.0]);
    let bg: Vec<Instance> = (0..8).map(|_| mk(&mut rng)).collect();
    let xs: Vec<Instance> = (0..20).map(|_| mk(&mut rng)).collect();
    let groups = FeatureGroups::new(names(4), false);
    let atts: Vec<_> = xs.iter().map(|x| shapley_exact(&m, x, &bg, &groups).unwrap()).collect();
    let recs: Vec<(String, &Instance, &_)> = xs.iter().zip(&atts).enumerate().map(|(i, (x, a))| (format!("r{i}"), x, a)).collect();
    let s = summarize_classwise(&groups, &["c0".into()], &recs);
    let order: Vec<&str> = s[0].ranking.iter().map(|r| r.feature.as_str()).collect();
    assert_eq!(order, ["f1", "f3", "f0", "f2"]);
    assert_eq!(s[0].ranking[3].mean_abs, 0.0);
    assert_eq!(s[0].points.len(), 80);

    let one = FeatureGroups::new(names(1), false);
    let lm = Linear { a: vec![2.0], a_img: 0.0 };
    let x = inst(vec![1.0], vec![0.0]);
    let a = shapley_exact(&lm, &x, &[inst(vec![0.0], vec![0.0])], &one).unwrap();
    let s1 = summarize_classwise(&one, &["c".into()], &[("only".into(), &x, &a)]);
    assert_eq!(s1[0].ranking.len(), 1);
    assert_eq!(s1[0].ranking[0].rank, 1);
    assert_eq!(s1[0].points[0].value, Some(1.0));

    let dir = tempfile::tempdir().unwrap();
    write_summaries(dir.path(), &s).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("shap_summary_c0.csv")).unwrap();
    assert!(csv.starts_with("rank,feature,mean_abs_shap\n1,f1,"));
    let rows: Vec<(String, &_)> = recs.iter().map(|(id, _, a)| (id.clone(), *a)).collect();
    write_shap_values_csv(&dir.path().join("shap_values.csv"), &groups, &["c0".into()], &rows).unwrap();
    let v = std::fs::read_to_string(dir.path().join("shap_values.csv")).unwrap();
    assert_eq!(v.lines().count(), 1 + 20 * 4);
}

#[test]
fn background_sampling() {
    let a = sample_background(100, 32, 4);
    assert_eq!(a.len(), 32);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a, sample_background(100, 32, 4));
    assert_eq!(sample_background(5, 32, 4), vec![0, 1, 2, 3, 4]);
}
