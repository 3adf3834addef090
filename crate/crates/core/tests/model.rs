use quake_pda::autodiff::{softmax, Mat};
use quake_pda::dataset::{MetadataVector, Sample};
use quake_pda::model::{
    embed_metadata, forward, init_model, param_count, predict_samples, quantize, Checkpoint, EmbeddingVariant,
    MaskSpec, ModelConfig, ModelParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every tensor, biases and bias tables included, drawn from U(-a, a).
fn randomised(cfg: &ModelConfig, seed: u64, a: f64) -> ModelParams {
    let mut p = init_model(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &mut p.tensors {
        for v in &mut t.data {
            *v = rng.gen_range(-a..a);
        }
    }
    p
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------------------
// Straight-line reference evaluator on nested vectors.

type Img = Vec<Vec<Vec<f64>>>;

struct Ref<'a>(&'a ModelParams);

impl Ref<'_> {
    fn t(&self, name: &str) -> &Mat {
        self.0.get(name).unwrap_or_else(|| panic!("{name}"))
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    fn conv(&self, name: &str, x: &Img, cout: usize, k: usize, stride: usize, groups: usize) -> Img {
        let w = self.t(&format!("{name}.w"));
        let b = self.t(&format!("{name}.b"));
        let (cin, h) = (x.len(), x[0].len() as isize);
        let pad = (k / 2) as isize;
        let ho = ((h + 2 * pad - k as isize) / stride as isize + 1) as usize;
        let (cin_g, cout_g) = (cin / groups, cout / groups);
        let mut out = vec![vec![vec![0.0; ho]; ho]; cout];
        for (oc, plane) in out.iter_mut().enumerate() {
            let grp = oc / cout_g;
            for (oy, row) in plane.iter_mut().enumerate() {
                for (ox, o) in row.iter_mut().enumerate() {
                    let mut s = b.at(0, oc);
                    for icl in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad;
                                let ix = (ox * stride + kx) as isize - pad;
                                if iy >= 0 && iy < h && ix >= 0 && ix < h {
                                    s += w.at(oc, (icl * k + ky) * k + kx)
                                        * x[grp * cin_g + icl][iy as usize][ix as usize];
                                }
                            }
                        }
                    }
                    *o = s;
                }
            }
        }
        out
    }

    fn gelu_img(x: Img) -> Img {
        x.into_iter()
            .map(|p| p.into_iter().map(|r| r.into_iter().map(Self::gelu).collect()).collect())
            .collect()
    }

    fn linear(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = self.t(&format!("{name}.w"));
        let b = self.t(&format!("{name}.b"));
        (0..w.cols)
            .map(|o| b.at(0, o) + x.iter().enumerate().map(|(i, v)| v * w.at(i, o)).sum::<f64>())
            .collect()
    }

    fn ln(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let g = self.t(&format!("{name}.g"));
        let b = self.t(&format!("{name}.b"));
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g.at(0, i) + b.at(0, i))
            .collect()
    }

    /// `side` is the spatial grid side; tokens past `side^2` are metadata.
    fn block(&self, name: &str, x: &[Vec<f64>], heads: usize, side: usize, window: Option<usize>) -> Vec<Vec<f64>> {
        let c = x[0].len();
        let dh = c / heads;
        let qkv: Vec<Vec<f64>> = x
            .iter()
            .map(|r| self.linear(&format!("{name}.attn.qkv"), &self.ln(&format!("{name}.ln1"), r)))
            .collect();
        let n_sp = side * side;
        let mut attn = vec![vec![0.0; c]; x.len()];
        for h in 0..heads {
            for i in 0..x.len() {
                let mut s: Vec<f64> = (0..x.len())
                    .map(|j| {
                        let dot: f64 = (0..dh).map(|d| qkv[i][h * dh + d] * qkv[j][c + h * dh + d]).sum();
                        let bias = match window {
                            None => 0.0,
                            Some(_) if i >= n_sp || j >= n_sp => self.t(&format!("{name}.attn.meta_bias")).at(h, 0),
                            Some(w) => {
                                let lim = w as i64 - 1;
                                let off = |a: usize, b: usize| ((a as i64 - b as i64).clamp(-lim, lim) + lim) as usize;
                                let e = off(i / side, j / side) * (2 * w - 1) + off(i % side, j % side);
                                self.t(&format!("{name}.attn.rel_bias")).at(h, e)
                            }
                        };
                        dot / (dh as f64).sqrt() + bias
                    })
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter_mut().map(|v| {
                    *v = (*v - m).exp();
                    *v
                }).sum();
                for d in 0..dh {
                    attn[i][h * dh + d] = (0..x.len()).map(|j| s[j] / z * qkv[j][2 * c + h * dh + d]).sum();
                }
            }
        }
        x.iter()
            .zip(&attn)
            .map(|(r, a)| {
                let p = self.linear(&format!("{name}.attn.proj"), a);
                let r1: Vec<f64> = r.iter().zip(&p).map(|(u, v)| u + v).collect();
                let m: Vec<f64> = self
                    .linear(&format!("{name}.mlp.fc1"), &self.ln(&format!("{name}.ln2"), &r1))
                    .into_iter()
                    .map(Self::gelu)
                    .collect();
                let m = self.linear(&format!("{name}.mlp.fc2"), &m);
                r1.iter().zip(&m).map(|(u, v)| u + v).collect()
            })
            .collect()
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let cfg = &self.0.config;
        match cfg.embedding_variant {
            EmbeddingVariant::Mlp => {
                let h: Vec<f64> = self.linear("meta.fc1", x).into_iter().map(Self::gelu).collect();
                self.ln("meta.norm", &self.linear("meta.fc2", &h))
            }
            EmbeddingVariant::ResNorm => {
                let mut h = self.linear("meta.input", x);
                for i in 0..2 {
                    let f = self.linear(&format!("meta.res{i}.fc"), &h);
                    let s: Vec<f64> = h.iter().zip(&f).map(|(a, b)| a + Self::gelu(*b)).collect();
                    h = self.ln(&format!("meta.res{i}.norm"), &s);
                }
                h
            }
            EmbeddingVariant::TransformerEnc => {
                let dir = self.t("meta.direction");
                let id = self.t("meta.identity");
                let toks: Vec<Vec<f64>> = (0..x.len())
                    .map(|j| (0..dir.cols).map(|c| x[j] * dir.at(j, c) + id.at(j, c)).collect())
                    .collect();
                let out = self.block("meta.enc0", &toks, cfg.transformer_heads[0], 0, None);
                (0..dir.cols)
                    .map(|c| out.iter().map(|r| r[c]).sum::<f64>() / out.len() as f64)
                    .collect()
            }
            v => panic!("no reference for {v:?}"),
        }
    }

    fn tokens(img: &Img) -> Vec<Vec<f64>> {
        let side = img[0].len();
        (0..side * side)
            .map(|n| img.iter().map(|p| p[n / side][n % side]).collect())
            .collect()
    }

    fn forward(&self, image: &[f64], meta: Option<(&[f64], &[bool])>) -> Vec<f64> {
        let cfg = &self.0.config;
        let s = cfg.image_size;
        let [c0, c1, c2, c3, c4] = cfg.stage_channels;
        let x: Img = (0..cfg.in_channels)
            .map(|c| (0..s).map(|y| image[(c * s + y) * s..(c * s + y + 1) * s].to_vec()).collect())
            .collect();
        let mut x = Self::gelu_img(self.conv("stem", &x, c0, 3, 2, 1));
        for (st, cout) in [(1, c1), (2, c2)] {
            for b in 0..cfg.blocks_per_stage {
                let p = format!("s{st}.b{b}");
                let cin = x.len();
                let e = cin * cfg.mbconv_expansion;
                let stride = if b == 0 { 2 } else { 1 };
                let h = Self::gelu_img(self.conv(&format!("{p}.expand"), &x, e, 1, 1, 1));
                let h = Self::gelu_img(self.conv(&format!("{p}.dw"), &h, e, 3, stride, e));
                let h = self.conv(&format!("{p}.project"), &h, cout, 1, 1, 1);
                x = if cin == cout && stride == 1 {
                    x.iter()
                        .zip(&h)
                        .map(|(a, b)| a.iter().zip(b).map(|(r, q)| r.iter().zip(q).map(|(u, v)| u + v).collect()).collect())
                        .collect()
                } else {
                    h
                };
            }
        }
        let x3 = self.conv("embed3", &x, c3, 3, 2, 1);
        let side3 = x3[0].len();
        let mut toks = Self::tokens(&x3);
        let meta_on = meta.is_some();
        if let Some((v, m)) = meta {
            let mv = self.t("meta.mask_values");
            let xe: Vec<f64> = (0..v.len()).map(|j| if m[j] { mv.at(0, j) } else { v[j] }).collect();
            toks.push(self.embed(&xe));
        }
        for b in 0..cfg.blocks_per_stage {
            toks = self.block(&format!("s3.b{b}"), &toks, cfg.transformer_heads[0], side3, Some(cfg.bias_window(0)));
        }
        let n3 = side3 * side3;
        let img3: Img = (0..c3)
            .map(|c| (0..side3).map(|y| (0..side3).map(|xx| toks[y * side3 + xx][c]).collect()).collect())
            .collect();
        let x4 = self.conv("embed4", &img3, c4, 3, 2, 1);
        let side4 = x4[0].len();
        let mut t4 = Self::tokens(&x4);
        if meta_on {
            t4.push(self.linear("meta_proj", &toks[n3]));
        }
        for b in 0..cfg.blocks_per_stage {
            t4 = self.block(&format!("s4.b{b}"), &t4, cfg.transformer_heads[1], side4, Some(cfg.bias_window(1)));
        }
        let normed: Vec<Vec<f64>> = t4.iter().map(|r| self.ln("norm", r)).collect();
        let pooled: Vec<f64> = (0..c4)
            .map(|c| normed.iter().map(|r| r[c]).sum::<f64>() / normed.len() as f64)
            .collect();
        self.linear("head", &pooled)
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn reference_check(cfg: ModelConfig, seed: u64) {
    let p = randomised(&cfg, seed, 0.5);
    let s = cfg.image_size;
    let image = random_vec(3 * s * s, seed + 1);
    let d = cfg.metadata_dim;
    let values = random_vec(d, seed + 2);
    let mask: Vec<bool> = (0..d).map(|j| j % 3 == 1).collect();
    let meta = MetadataVector::new(values.clone(), mask.clone()).unwrap();
    let got = forward(&p, &image, &meta, &MaskSpec::none(d)).unwrap();
    let want = Ref(&p).forward(&image, cfg.embedding_variant.uses_metadata().then_some((&values[..], &mask[..])));
    assert_close(&got, &want, 1e-10);
}

#[test]
fn forward_matches_reference_tiny() {
    reference_check(ModelConfig::tiny(2, 3, EmbeddingVariant::Mlp), 1);
}

#[test]
fn forward_matches_reference_windowed_bias() {
    // Stage 3 runs on a 4x4 grid; a window of 2 clamps offsets beyond 1.
    let cfg = ModelConfig {
        image_size: 64,
        relative_bias_window: [2, 0],
        ..ModelConfig::tiny(3, 5, EmbeddingVariant::Mlp)
    };
    reference_check(cfg, 2);
}

#[test]
fn forward_matches_reference_image_only_and_other_embeddings() {
    reference_check(ModelConfig { image_size: 32, ..ModelConfig::tiny(4, 0, EmbeddingVariant::None) }, 3);
    reference_check(ModelConfig { image_size: 32, ..ModelConfig::tiny(2, 4, EmbeddingVariant::ResNorm) }, 4);
    reference_check(ModelConfig::tiny(2, 4, EmbeddingVariant::TransformerEnc), 5);
}

#[test]
fn parameter_count_tiny() {
    // stem 112; s1.b0 376; s1.b1, s2.b0, s2.b1 872 each; embed3 584;
    // s3 2 x 876; embed4 584; meta_proj 72; s4 2 x 876; norm 16; head 18;
    // mask values 3; fc1 32, fc2 72, meta.norm 16.
    let cfg = ModelConfig::tiny(2, 3, EmbeddingVariant::Mlp);
    assert_eq!(param_count(&cfg), 8005);
    let p = init_model(&cfg, 0).unwrap();
    assert_eq!(p.count(), 8005);
    assert_eq!(p.metadata_count(), 72 + 8 + 3 + 120);
    let qif = ModelConfig::tiny(2, 3, EmbeddingVariant::None);
    assert_eq!(param_count(&qif), 8005 - 203);
    assert_eq!(init_model(&qif, 0).unwrap().metadata_count(), 0);
}

#[test]
fn init_and_forward_are_deterministic() {
    let cfg = ModelConfig::tiny(4, 6, EmbeddingVariant::DeepResNorm);
    let a = init_model(&cfg, 42).unwrap();
    let b = init_model(&cfg, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init_model(&cfg, 43).unwrap());
    let image = random_vec(3 * 16 * 16, 9);
    let m = MetadataVector::unmasked(random_vec(6, 10));
    let la = forward(&a, &image, &m, &MaskSpec::none(6)).unwrap();
    let lb = forward(&b, &image, &m, &MaskSpec::none(6)).unwrap();
    assert_eq!(la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn image_only_ignores_metadata() {
    let cfg = ModelConfig::tiny(3, 4, EmbeddingVariant::None);
    let p = randomised(&cfg, 7, 0.4);
    let image = random_vec(3 * 16 * 16, 8);
    let a = forward(&p, &image, &MetadataVector::unmasked(vec![0.0; 4]), &MaskSpec::none(4)).unwrap();
    let b = forward(&p, &image, &MetadataVector::unmasked(vec![9.0, -3.0, 1e3, 2.0]), &MaskSpec::all(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fully_masked_equals_mask_values_as_input() {
    let d = 5;
    let cfg = ModelConfig::tiny(3, d, EmbeddingVariant::Mlp);
    let p = randomised(&cfg, 11, 0.5);
    let image = random_vec(3 * 16 * 16, 12);
    let mv = p.get("meta.mask_values").unwrap().data.clone();
    let masked = forward(&p, &image, &MetadataVector::unmasked(random_vec(d, 13)), &MaskSpec::all(d)).unwrap();
    let direct = forward(&p, &image, &MetadataVector::unmasked(mv), &MaskSpec::none(d)).unwrap();
    assert_eq!(masked, direct);
    // Data mask bits act like inference mask bits.
    let data_masked = forward(&p, &image, &MetadataVector::new(random_vec(d, 14), vec![true; d]).unwrap(), &MaskSpec::none(d)).unwrap();
    assert_eq!(masked, data_masked);
}

#[test]
fn mlp_embedding_hand_weights() {
    let cfg = ModelConfig {
        stage_channels: [4, 8, 8, 2, 8],
        transformer_heads: [1, 2],
        ..ModelConfig::tiny(2, 2, EmbeddingVariant::Mlp)
    };
    let mut p = init_model(&cfg, 0).unwrap();
    *p.get_mut("meta.fc1.w").unwrap() = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    *p.get_mut("meta.fc1.b").unwrap() = Mat::row(vec![0.0, 0.0]);
    *p.get_mut("meta.fc2.w").unwrap() = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    // fc1 -> [1, -1]; gelu -> [0.841192, -0.158808]; LN of two values -> +-1 scaled.
    let g = |x: f64| 0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh());
    let (a, b) = (g(1.0), g(-1.0));
    let half = (a - b) / 2.0;
    let r = half / (half * half + 1e-5).sqrt();
    let e = embed_metadata(&p, &[1.0, -1.0]).unwrap();
    assert_close(&e, &[r, -r], 1e-12);
    assert!((a - 0.841_191_990).abs() < 1e-8);
}

#[test]
fn zero_metadata_embeddings_are_finite() {
    for v in [
        EmbeddingVariant::Mlp,
        EmbeddingVariant::ResNorm,
        EmbeddingVariant::DeepMlp,
        EmbeddingVariant::DeepResNorm,
        EmbeddingVariant::TransformerEnc,
        EmbeddingVariant::LargeTransformerEnc,
    ] {
        let cfg = ModelConfig::tiny(4, 7, v);
        let p = init_model(&cfg, 3).unwrap();
        let e = embed_metadata(&p, &[0.0; 7]).unwrap();
        assert_eq!(e.len(), cfg.stage_channels[3], "{v:?}");
        assert!(e.iter().all(|x| x.is_finite()), "{v:?}");
        let logits = forward(&p, &vec![0.0; 3 * 16 * 16], &MetadataVector::unmasked(vec![0.0; 7]), &MaskSpec::none(7)).unwrap();
        assert!(logits.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn embedding_references() {
    for (v, seed) in [(EmbeddingVariant::ResNorm, 21), (EmbeddingVariant::TransformerEnc, 22)] {
        let p = randomised(&ModelConfig::tiny(2, 4, v), seed, 0.6);
        let x = random_vec(4, seed + 100);
        assert_close(&embed_metadata(&p, &x).unwrap(), &Ref(&p).embed(&x), 1e-12);
    }
}

#[test]
fn softmax_properties() {
    for seed in 0..20 {
        let l: Vec<f64> = random_vec(5, seed).iter().map(|v| v * 30.0).collect();
        let p = softmax(&l);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = l.iter().map(|v| v + 123.0).collect();
        assert_close(&softmax(&shifted), &p, 1e-12);
    }
    assert_close(&softmax(&[1000.0, 0.0]), &[1.0, 0.0], 1e-300);
}

#[test]
fn batch_prediction_matches_single() {
    let cfg = ModelConfig::tiny(3, 4, EmbeddingVariant::Mlp);
    let p = randomised(&cfg, 31, 0.3);
    let samples: Vec<Sample> = (0..6)
        .map(|i| Sample {
            image: random_vec(3 * 16 * 16, 40 + i),
            image_size: 16,
            metadata: MetadataVector::new(random_vec(4, 60 + i), vec![i % 2 == 0, false, false, i == 3]).unwrap(),
            label: i as usize % 3,
        })
        .collect();
    let mask = MaskSpec { bits: vec![false, true, false, false] };
    let batch = predict_samples(&p, &samples, &mask).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let single = softmax(&forward(&p, &s.image, &s.metadata, &mask).unwrap());
        assert_eq!(batch.probabilities[i], single);
        assert!((single.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn metadata_reaches_logits() {
    let cfg = ModelConfig::tiny(3, 4, EmbeddingVariant::Mlp);
    let p = randomised(&cfg, 51, 0.5);
    let image = random_vec(3 * 16 * 16, 52);
    let a = forward(&p, &image, &MetadataVector::unmasked(vec![0.0; 4]), &MaskSpec::none(4)).unwrap();
    let b = forward(&p, &image, &MetadataVector::unmasked(vec![2.0, -1.0, 0.5, 1.0]), &MaskSpec::none(4)).unwrap();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-3, "metadata has no effect: {diff}");
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig::tiny(4, 6, EmbeddingVariant::ResNorm);
    let p = randomised(&cfg, 61, 0.7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint {
        params: p.clone(),
        schema_hash: "abc".into(),
        seed: 61,
        epoch: 3,
    };
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, quantize(&p));
    assert_eq!((back.schema_hash.as_str(), back.seed, back.epoch), ("abc", 61, 3));
    assert_eq!(Checkpoint { params: back.params.clone(), ..ck.clone() }.to_bytes(), ck.to_bytes());
    let image = random_vec(3 * 16 * 16, 62);
    let m = MetadataVector::unmasked(random_vec(6, 63));
    assert_eq!(
        forward(&back.params, &image, &m, &MaskSpec::none(6)).unwrap(),
        forward(&quantize(&p), &image, &m, &MaskSpec::none(6)).unwrap()
    );
    let mut bytes = ck.to_bytes();
    bytes.truncate(bytes.len() - 1);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
}

#[test]
fn config_validation() {
    assert!(init_model(&ModelConfig { image_size: 40, ..ModelConfig::default() }, 0).is_err());
    assert!(init_model(&ModelConfig { n_classes: 1, ..ModelConfig::default() }, 0).is_err());
    assert!(init_model(&ModelConfig { transformer_heads: [5, 4], ..ModelConfig::default() }, 0).is_err());
    let p = init_model(&ModelConfig::tiny(2, 3, EmbeddingVariant::Mlp), 0).unwrap();
    let bad = forward(&p, &[0.0; 10], &MetadataVector::unmasked(vec![0.0; 3]), &MaskSpec::none(3));
    assert!(bad.is_err());
}
