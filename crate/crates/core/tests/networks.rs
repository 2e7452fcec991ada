use flimsr_core::networks::{
    score_from_logit, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
};
use flimsr_core::nn::Tensor;
use flimsr_core::rng::rng_from_seed;
use rand::Rng;

#[path = "support/generator_oracle.rs"]
mod oracle;
use oracle::{Oracle, T};

/// Plain Kaiming initialization, so every layer starts with a nonzero gradient.
fn kaiming(base: usize, levels: usize) -> GeneratorConfig {
    GeneratorConfig {
        residual_gamma_init: 1.0,
        zero_head: false,
        ..GeneratorConfig::with_base(base, levels)
    }
}

fn random_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random::<f32>()).collect())
}

#[test]
fn generator_widths() {
    assert_eq!(GeneratorConfig::default().widths(), vec![64, 128, 256, 512]);
    assert_eq!(DiscriminatorConfig::default().block_widths(), vec![128, 256, 512, 1024, 2048]);
}

/// Parameter count summed layer by layer from the architecture description.
fn closed_form_generator_params(cfg: &GeneratorConfig) -> usize {
    let conv = |i: usize, o: usize| 9 * i * o;
    let bn = |c: usize| 2 * c;
    let w = cfg.widths();
    let l = cfg.levels;
    let emb = |c: usize| if cfg.time_embed_dim > 0 { cfg.time_embed_dim * c + c } else { 0 };
    let block = |cin: usize, cout: usize| {
        let mut n = conv(cin, cout) + bn(cout);
        n += (cfg.convs_per_block - 1) * (conv(cout, cout) + bn(cout));
        n + emb(cout)
    };
    let mut total = 0;
    for i in 0..l {
        let cin = if i == 0 { cfg.in_channels } else { w[i - 1] };
        total += block(cin, w[i]);
    }
    total += block(w[l - 1], w[l - 1]);
    for i in 0..l - 1 {
        total += block(w[i] + w[i + 1], w[i]);
    }
    total + conv(w[0], cfg.out_channels) + cfg.out_channels
}

#[test]
fn generator_parameter_count_matches_closed_form() {
    for cfg in [
        GeneratorConfig::default(),
        GeneratorConfig::with_base(8, 2),
        GeneratorConfig {
            in_channels: 12,
            time_embed_dim: 16,
            convs_per_block: 2,
            ..GeneratorConfig::with_base(8, 3)
        },
    ] {
        let g = Generator::new(cfg, 0).unwrap();
        assert_eq!(g.num_params(), closed_form_generator_params(&cfg), "{cfg:?}");
    }
}

#[test]
fn discriminator_parameter_count_matches_closed_form() {
    let cfg = DiscriminatorConfig::default();
    let d = Discriminator::new(cfg.clone(), 0).unwrap();
    let mut n = 9 * 6 * 64 + 64;
    let mut c = 64;
    for _ in 0..5 {
        n += 9 * c * c + 2 * c + 9 * c * 2 * c + 2 * 2 * c;
        c *= 2;
    }
    n += c * 16 * 1024 + 1024 + 1024 + 1;
    assert_eq!(d.num_params(), n);
}

#[test]
fn initialization_is_seeded() {
    let cfg = GeneratorConfig::with_base(8, 3);
    let a = Generator::new(cfg, 5).unwrap();
    let b = Generator::new(cfg, 5).unwrap();
    let c = Generator::new(cfg, 6).unwrap();
    assert_eq!(a.params().values(), b.params().values());
    assert_ne!(a.params().values(), c.params().values());
    let dc = DiscriminatorConfig::with_base(8);
    let d1 = Discriminator::new(dc.clone(), 1).unwrap();
    let d2 = Discriminator::new(dc, 1).unwrap();
    assert_eq!(d1.params().values(), d2.params().values());
}

#[test]
fn shape_algebra_for_every_factor() {
    let g = Generator::new(GeneratorConfig::with_base(4, 4), 1).unwrap();
    for k in 2..=7 {
        let m = 256 / k;
        let y = g.forward(&random_input(1, 6, m, m, k as u64), (256, 256)).unwrap();
        assert_eq!(y.shape(), [1, 6, 256, 256], "k={k}");
        assert!(y.is_finite());
    }
    let y = g.forward(&random_input(1, 6, 32, 32, 9), (64, 64)).unwrap();
    assert_eq!(y.shape(), [1, 6, 64, 64]);
}

#[test]
fn full_width_generator_trace() {
    let g = Generator::new(GeneratorConfig::default(), 0).unwrap();
    let t = g.trace(1, 256, 256);
    assert_eq!(t.shape_of("enc3"), Some([1, 512, 32, 32]));
    assert_eq!(t.shape_of("head"), Some([1, 6, 256, 256]));
}

#[test]
fn fresh_generator_outputs_are_bounded() {
    for cfg in [GeneratorConfig::with_base(16, 4), kaiming(16, 4)] {
        let g = Generator::new(cfg, 3).unwrap();
        let y = g.forward(&random_input(2, 6, 32, 32, 4), (64, 64)).unwrap();
        assert!(y.data.iter().all(|v| v.is_finite() && v.abs() < 1e3));
    }
}

#[test]
fn discriminator_trace_at_256() {
    let d = Discriminator::new(DiscriminatorConfig::default(), 0).unwrap();
    let t = d.trace(1, 256, 256);
    assert_eq!(t.shape_of("block4"), Some([1, 2048, 8, 8]));
    assert_eq!(t.shape_of("fc2"), Some([1, 1, 1, 1]));
}

#[test]
fn discriminator_scores_are_sigmoid_of_logits() {
    let d = Discriminator::new(DiscriminatorConfig::with_base(8), 2).unwrap();
    let x = random_input(2, 6, 256, 256, 3);
    let logits = d.logits(&x).unwrap();
    let scores = d.scores(&x).unwrap();
    for (l, s) in logits.iter().zip(&scores) {
        let direct = 1.0 / (1.0 + (-(*l as f64)).exp());
        assert!((s - direct).abs() < 1e-6);
        assert!(*s > 0.0 && *s < 1.0);
    }
    assert_eq!(d.scores(&x).unwrap(), scores);
    assert!(score_from_logit(1e4) < 1.0 && score_from_logit(-1e4) > 0.0);
    assert!(d.scores(&random_input(1, 6, 48, 48, 1)).is_err());
}

#[test]
fn evaluation_mode_is_deterministic() {
    let g = Generator::new(GeneratorConfig::with_base(8, 3), 4).unwrap();
    let x = random_input(1, 6, 16, 16, 8);
    let a = g.forward(&x, (32, 32)).unwrap();
    let b = g.forward(&x, (32, 32)).unwrap();
    assert_eq!(a.data, b.data);
}

#[test]
fn non_finite_input_is_rejected() {
    let g = Generator::new(GeneratorConfig::with_base(4, 2), 0).unwrap();
    let mut x = random_input(1, 6, 8, 8, 0);
    x.data[3] = f32::NAN;
    assert!(g.forward(&x, (16, 16)).is_err());
}

#[test]
fn forward_matches_f64_oracle() {
    let g = Generator::new(kaiming(8, 2), 11).unwrap();
    let x = random_input(2, 6, 32, 32, 12);
    let (y, _) = g.clone().forward_train(&x, None).unwrap();
    let yo = Oracle::new(&g).forward(&T::from_tensor(&x));
    let diff = y.data.iter().zip(&yo.d).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-4, "max deviation {diff:e}");
}

/// Analytic gradients of the sum of all outputs against central differences
/// taken on the f64 oracle.
#[test]
fn generator_gradients_match_finite_differences() {
    let mut g = Generator::new(kaiming(8, 2), 11).unwrap();
    let x = random_input(2, 6, 32, 32, 12);
    let (y, cache) = g.forward_train(&x, None).unwrap();
    let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, vec![1.0; y.data.len()]);
    let mut grads = vec![0.0f32; g.num_params()];
    g.backward(&cache, &dy, &mut grads, false);

    let mut oracle = Oracle::new(&g);
    let xt = T::from_tensor(&x);
    let mut rng = rng_from_seed(13);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let i = rng.random_range(0..g.num_params());
        let orig = *oracle.param_mut(i);
        *oracle.param_mut(i) = orig + eps;
        let lp: f64 = oracle.forward(&xt).d.iter().sum();
        *oracle.param_mut(i) = orig - eps;
        let lm: f64 = oracle.forward(&xt).d.iter().sum();
        *oracle.param_mut(i) = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let an = grads[i] as f64;
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        worst = worst.max(rel);
        assert!(rel < 1e-3, "{}: analytic {an}, numeric {fd}", oracle.index[i].0);
    }
    println!("worst relative error {worst:.2e}");
}

#[test]
fn default_initialization_settings() {
    let g = Generator::new(GeneratorConfig::with_base(8, 2), 0).unwrap();
    assert!(g.params().get("head.weight").unwrap().iter().all(|&v| v == 0.0));
    for name in ["enc0.unit2.bn.gamma", "dec1.unit2.bn.gamma"] {
        assert!(g.params().get(name).unwrap().iter().all(|&v| v == 0.05));
    }
    assert!(g.params().get("enc0.unit1.bn.gamma").unwrap().iter().all(|&v| v == 1.0));
    let y = g.forward(&random_input(1, 6, 8, 8, 0), (16, 16)).unwrap();
    assert!(y.data.iter().all(|&v| v == 0.0));
    let k = Generator::new(kaiming(8, 2), 0).unwrap();
    assert!(k.params().get("head.weight").unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn zero_padded_residual_carries_the_input() {
    // A block widening 6 -> 8 channels: the first 6 channels of the residual
    // addend are the block input itself.
    use flimsr_core::nn::add_residual;
    let x = random_input(1, 6, 4, 4, 1);
    let mut out = Tensor::zeros(1, 8, 4, 4);
    add_residual(&mut out, &x);
    for c in 0..6 {
        assert_eq!(out.plane(0, c), x.plane(0, c));
    }
    for c in 6..8 {
        assert!(out.plane(0, c).iter().all(|&v| v == 0.0));
    }
}
