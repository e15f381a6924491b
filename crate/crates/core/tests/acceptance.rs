//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so the lines are always printed:
//! `cargo test --release --test acceptance`.

mod common;

use std::time::Instant;

use adamel::cli::{self, PartitionArgs, SynthArgs, TrainArgs};
use adamel::data;
use adamel::eval::{self, PrMethod};
use adamel::features::{EmbeddingProvider, FeatureChannels, Featurizer, PairFeatures};
use adamel::losses::{self, Batch, Objective};
use adamel::model::{self, Dims, LatentFeatures, ModelParams, Tensor, ThetaInput, TensorSet};
use adamel::synth::{self, SynthConfig, SynthCorpus};
use adamel::training::{self, LabeledFeatures, TrainConfig, TrainingSet, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_prauc, finite_difference, max_relative_error, random_features, random_simplex};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// 1 ─────────────────────────────────────────────────────────────────────────

fn parameter_count() -> Outcome {
    let n = model::parameter_count_formula(26, 300, 64, 256, 256);
    outcome(n == 2_219_520, format!("count = {n}, expected 2219520"))
}

// 2 ─────────────────────────────────────────────────────────────────────────

fn randomized_params(rng: &mut ChaCha8Rng, dims: Dims, theta_input: ThetaInput) -> ModelParams {
    let mut params = model::init_params(dims, theta_input, rng.gen()).unwrap();
    for t in [Tensor::B, Tensor::Theta1B, Tensor::Theta2B] {
        for v in params.tensor_mut(t) {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    params
}

fn labeled<R: Rng>(rng: &mut R, n: usize, dims: Dims) -> Vec<(PairFeatures, f64)> {
    (0..n)
        .map(|i| (random_features(rng, dims.features, dims.embed), (i % 2) as f64))
        .collect()
}

fn gradient_check() -> Outcome {
    let dims = Dims::new(4, 8, 5, 6, 7);
    let mut worst = [0.0f64; 4];
    for config in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + config);
        let theta_input = if config % 2 == 0 { ThetaInput::Latent } else { ThetaInput::Projected };
        let params = randomized_params(&mut rng, dims, theta_input);
        let n_source = rng.gen_range(3..=6);
        let source = labeled(&mut rng, n_source, dims);
        let support = labeled(&mut rng, 4, dims);
        let mean_target = random_simplex(&mut rng, dims.features, 0.05);
        let reference: Vec<(Vec<f64>, bool)> = (0..6)
            .map(|i| (random_simplex(&mut rng, dims.features, 0.05), i % 2 == 0))
            .collect();
        let centroids = losses::compute_centroids(&reference).unwrap();
        let lambda = rng.gen_range(0.1..0.9);
        let phi = rng.gen_range(0.1..1.0);

        let source_refs: Vec<(&PairFeatures, f64)> = source.iter().map(|(f, y)| (f, *y)).collect();
        let support_refs: Vec<(&PairFeatures, f64)> = support.iter().map(|(f, y)| (f, *y)).collect();
        let batch = Batch {
            source: &source_refs,
            support: &support_refs,
            mean_target: Some(&mean_target),
            centroids: Some(&centroids),
        };
        let objectives = [
            Objective::base(),
            Objective::un(lambda).unwrap(),
            Objective::ssl(phi).unwrap(),
            Objective::hybrid(lambda, phi).unwrap(),
        ];
        for (k, objective) in objectives.iter().enumerate() {
            let mut analytic = TensorSet::zeros(params.layout());
            losses::evaluate(objective, &batch, &params, Some(&mut analytic)).unwrap();
            let numeric = finite_difference(&params, 1e-5, |p| {
                losses::evaluate(objective, &batch, p, None).unwrap().total
            });
            worst[k] = worst[k].max(max_relative_error(analytic.as_slice(), &numeric, 1e-6));
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-4,
        format!(
            "max rel err base={:.1e} un={:.1e} ssl={:.1e} hybrid={:.1e} (< 1e-4)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// 3 ─────────────────────────────────────────────────────────────────────────

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum = 0.0f64;
    let mut all_positive = true;
    let mut worst_uniform = 0.0f64;
    for i in 0..1000 {
        let features = rng.gen_range(2..=12);
        let dims = Dims::new(features, 8, 5, 6, 7);
        let theta_input = if i % 2 == 0 { ThetaInput::Latent } else { ThetaInput::Projected };
        let mut params = randomized_params(&mut rng, dims, theta_input);
        // Larger energies stress the softmax.
        for v in params.tensor_mut(Tensor::A) {
            *v *= rng.gen_range(1.0..20.0);
        }
        let h = random_features(&mut rng, dims.features, dims.embed);
        let g = model::forward(&h, &params).unwrap().attention.0;
        worst_sum = worst_sum.max((g.iter().sum::<f64>() - 1.0).abs());
        all_positive &= g.iter().all(|&x| x > 0.0);

        let row: Vec<f64> = (0..dims.latent).map(|_| rng.gen_range(0.0..2.0)).collect();
        let identical = LatentFeatures {
            features: dims.features,
            latent: dims.latent,
            pre: row.repeat(dims.features),
            x: row.repeat(dims.features),
        };
        let g = model::attention_forward(&identical, &params).0;
        let uniform = 1.0 / dims.features as f64;
        worst_uniform = worst_uniform.max(g.iter().map(|x| (x - uniform).abs()).fold(0.0, f64::max));
    }
    outcome(
        worst_sum < 1e-9 && all_positive && worst_uniform < 1e-12,
        format!("max |Σg−1| = {worst_sum:.1e}, all g > 0: {all_positive}, max uniform deviation = {worst_uniform:.1e}"),
    )
}

// 4 ─────────────────────────────────────────────────────────────────────────

fn kl_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_self = 0.0f64;
    let mut min_value = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=30);
        let p = random_simplex(&mut rng, n, 0.0);
        let q = random_simplex(&mut rng, n, 0.0);
        let batch: Vec<Vec<f64>> = (0..rng.gen_range(1..=4)).map(|_| random_simplex(&mut rng, n, 0.0)).collect();
        let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        worst_self = worst_self.max(losses::loss_target(&[&p], &p).abs());
        min_value = min_value.min(losses::loss_target(&[&q], &p)).min(losses::loss_target(&refs, &p));
    }
    outcome(
        worst_self < 1e-12 && min_value >= 0.0,
        format!("max KL(p‖p) = {worst_self:.1e}, min KL = {min_value:.3e}"),
    )
}

// 5 ─────────────────────────────────────────────────────────────────────────

fn prauc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let grid = rng.gen_range(2..=20) as f64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..1.0) * grid).floor() / grid).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let (ap, trap) = brute_force_prauc(&scores, &labels);
        let got_ap = eval::prauc(&scores, &labels, PrMethod::AveragePrecision).unwrap().prauc;
        let got_trap = eval::prauc(&scores, &labels, PrMethod::Trapezoid).unwrap().prauc;
        worst = worst.max((ap - got_ap).abs()).max((trap - got_trap).abs());
    }
    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [true, true, false, false];
    let perfect = [PrMethod::AveragePrecision, PrMethod::Trapezoid]
        .iter()
        .all(|&m| eval::prauc(&scores, &labels, m).unwrap().prauc == 1.0);
    let labels = [true, false, false, true, false];
    let constant = [PrMethod::AveragePrecision, PrMethod::Trapezoid]
        .iter()
        .all(|&m| (eval::prauc(&[0.5; 5], &labels, m).unwrap().prauc - 0.4).abs() < 1e-15);
    outcome(
        worst <= 1e-12 && perfect && constant,
        format!("max |oracle − prauc| = {worst:.1e}, perfect → 1: {perfect}, constant → prevalence: {constant}"),
    )
}

// 6 ─────────────────────────────────────────────────────────────────────────

fn step_params(data: &TrainingSet<'_>, config: &TrainConfig) -> Vec<Vec<f64>> {
    let mut steps = Vec::new();
    training::train(data, config, |s| steps.push(s.params.as_slice().to_vec())).unwrap();
    steps
}

fn reduction_lattice() -> Outcome {
    let corpus = synth::generate(&SynthConfig {
        n_source_pairs: 32,
        n_target_pairs: 32,
        n_support: 8,
        n_test_pairs: 0,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig {
        embed_dim: 8,
        latent_dim: 5,
        attention_dim: 6,
        hidden_dim: 7,
        epochs: 4,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 6,
        ..Default::default()
    };
    let (source, target, support) = featurize(&corpus, &config);
    let data = TrainingSet { source: &source, target: &target, support: &support };
    let base = step_params(&data, &TrainConfig { variant: Variant::Base, ..config.clone() });
    let zero = step_params(&data, &TrainConfig { variant: Variant::Zero, lambda: 0.0, ..config.clone() });
    // Smallest positive double: the support term is present but vanishing.
    let phi = f64::from_bits(1);
    let hyb = step_params(&data, &TrainConfig { variant: Variant::Hyb, lambda: 0.0, phi, ..config.clone() });
    let first_diff = |other: &[Vec<f64>]| base.iter().zip(other).position(|(a, b)| a != b);
    let (dz, dh) = (first_diff(&zero), first_diff(&hyb));
    let pass = base.len() == 16 && zero.len() == base.len() && hyb.len() == base.len() && dz.is_none() && dh.is_none();
    outcome(
        pass,
        format!(
            "{} steps; zero(λ=0) first divergence: {dz:?}; hyb(λ=0, φ=5e-324) first divergence: {dh:?}",
            base.len()
        ),
    )
}

// 7–9 ───────────────────────────────────────────────────────────────────────

const SEEDS: u64 = 5;

fn experiment_config() -> TrainConfig {
    TrainConfig {
        embed_dim: 32,
        latent_dim: 16,
        attention_dim: 16,
        hidden_dim: 16,
        epochs: 20,
        learning_rate: 1e-3,
        ..Default::default()
    }
}

fn featurize(corpus: &SynthCorpus, config: &TrainConfig) -> (Vec<LabeledFeatures>, Vec<PairFeatures>, Vec<LabeledFeatures>) {
    let f = featurizer(corpus, config);
    (
        training::featurize_labeled(&f, &corpus.partitions.source, "source").unwrap(),
        f.featurize_all(&corpus.partitions.target).unwrap(),
        training::featurize_labeled(&f, &corpus.partitions.support, "support").unwrap(),
    )
}

fn featurizer(corpus: &SynthCorpus, config: &TrainConfig) -> Featurizer {
    Featurizer::new(
        corpus.schema.clone(),
        EmbeddingProvider::hashing(config.embed_dim, 0),
        config.crop,
        config.channels,
    )
}

fn test_prauc(corpus: &SynthCorpus, config: &TrainConfig, params: &ModelParams) -> f64 {
    let test = featurizer(corpus, config).featurize_all(&corpus.test).unwrap();
    let scores = training::predict_features(params, &test).unwrap();
    let labels: Vec<bool> = corpus.test.iter().map(|p| p.label == Some(true)).collect();
    eval::prauc(&scores, &labels, PrMethod::AveragePrecision).unwrap().prauc
}

fn corpus(seed: u64) -> SynthCorpus {
    synth::generate(&SynthConfig { seed, ..Default::default() }).unwrap()
}

/// Runs `per_seed` for every seed on its own thread and averages the results.
fn mean_over_seeds<const N: usize>(per_seed: impl Fn(u64) -> [f64; N] + Sync) -> ([f64; N], Vec<[f64; N]>) {
    let per_seed = &per_seed;
    let rows: Vec<[f64; N]> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..SEEDS).map(|seed| s.spawn(move || per_seed(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut mean = [0.0; N];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / SEEDS as f64;
        }
    }
    (mean, rows)
}

fn directional_adaptation() -> Outcome {
    let defaults = SynthConfig::default();
    let challenged = defaults.shift_strength > 0.0
        && defaults.attributes.iter().any(|a| a.missing_source > 0.0 || a.missing_target > 0.0)
        && defaults.new_attributes.len() == 1;
    let (mean, _) = mean_over_seeds(|seed| {
        let corpus = corpus(seed);
        let base = TrainConfig { seed, ..experiment_config() };
        let (source, target, support) = featurize(&corpus, &base);
        let data = TrainingSet { source: &source, target: &target, support: &support };
        let run = |variant, lambda| {
            let config = TrainConfig { variant, lambda, ..base.clone() };
            let params = training::train(&data, &config, |_| {}).unwrap().params;
            test_prauc(&corpus, &config, &params)
        };
        [
            run(Variant::Base, 0.98),
            run(Variant::Zero, 0.98),
            run(Variant::Hyb, 0.98),
            run(Variant::Zero, 1.0),
        ]
    });
    let [base, zero, hyb, zero_one] = mean;
    let pass = challenged && zero > base && hyb >= zero && hyb - base >= 0.01 && zero > zero_one;
    outcome(
        pass,
        format!("mean PRAUC base={base:.4} zero={zero:.4} hyb={hyb:.4} zero(λ=1)={zero_one:.4}; hyb−base={:.4}", hyb - base),
    )
}

fn support_size_trend() -> Outcome {
    let (mean, _) = mean_over_seeds(|seed| {
        let corpus = corpus(seed);
        let config = TrainConfig { seed, variant: Variant::Few, ..experiment_config() };
        let (source, target, support_full) = featurize(&corpus, &config);
        let (small, _) = data::split_support(corpus.partitions.support.clone(), 4, seed).unwrap();
        let small = training::featurize_labeled(&featurizer(&corpus, &config), &small, "support").unwrap();
        [&support_full, &small].map(|support| {
            let data = TrainingSet { source: &source, target: &target, support };
            let params = training::train(&data, &config, |_| {}).unwrap().params;
            test_prauc(&corpus, &config, &params)
        })
    });
    let [large, small] = mean;
    outcome(large > small, format!("mean PRAUC few |S_U|=100: {large:.4}, |S_U|=4: {small:.4}"))
}

fn channel_ablation() -> Outcome {
    let (mean, _) = mean_over_seeds(|seed| {
        let corpus = corpus(seed);
        [FeatureChannels::Both, FeatureChannels::SharedOnly, FeatureChannels::UniqueOnly].map(|channels| {
            let config = TrainConfig { seed, channels, ..experiment_config() };
            let (source, target, support) = featurize(&corpus, &config);
            let data = TrainingSet { source: &source, target: &target, support: &support };
            let params = training::train(&data, &config, |_| {}).unwrap().params;
            test_prauc(&corpus, &config, &params)
        })
    });
    let [both, shared, unique] = mean;
    outcome(
        both >= shared && both >= unique,
        format!("mean PRAUC shared+unique={both:.4} shared-only={shared:.4} unique-only={unique:.4}"),
    )
}

// 10 ────────────────────────────────────────────────────────────────────────

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let synth_files = |name: &str| {
        let out = dir.path().join(name);
        cli::cmd_synth(&SynthArgs { config: None, seed: Some(10), out: out.clone() }).unwrap();
        ["source.csv", "target.csv", "support.csv", "test.csv", "manifest.json"]
            .map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let synth_same = synth_files("a") == synth_files("b");

    let config = dir.path().join("train.json");
    let small = TrainConfig { epochs: 2, ..experiment_config() };
    std::fs::write(&config, serde_json::to_vec(&small).unwrap()).unwrap();
    let train = |name: &str| {
        let out = dir.path().join(name);
        cli::cmd_train(&TrainArgs {
            data: PartitionArgs {
                manifest: Some(dir.path().join("a").join("manifest.json")),
                ..Default::default()
            },
            config: Some(config.clone()),
            variant: Some(Variant::Hyb),
            lambda: None,
            phi: None,
            epochs: None,
            batch: None,
            lr: None,
            seed: Some(3),
            embed_dim: None,
            out: out.clone(),
        })
        .unwrap();
        std::fs::read(out.join(cli::CHECKPOINT_FILE)).unwrap()
    };
    let train_same = train("run1") == train("run2");
    outcome(synth_same && train_same, format!("synth byte-identical: {synth_same}, train checkpoint bit-identical: {train_same}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    std::env::remove_var(cli::EMBEDDINGS_ENV);
    let started = Instant::now();
    let criteria: [Criterion; 10] = [
        ("parameter count", parameter_count),
        ("gradient correctness", gradient_check),
        ("attention invariants", attention_invariants),
        ("KL properties", kl_properties),
        ("PRAUC oracle equivalence", prauc_oracle),
        ("reduction lattice", reduction_lattice),
        ("directional domain adaptation", directional_adaptation),
        ("support-set size trend", support_size_trend),
        ("channel ablation", channel_ablation),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        failures += usize::from(!o.pass);
        println!(
            "criterion {:>2} {name}: {} [{:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    let total = started.elapsed().as_secs_f64();
    let fast = total < 600.0;
    failures += usize::from(!fast);
    println!(
        "criterion 11 whole-suite runtime: {} {total:.1}s (< 600s)",
        if fast { "PASS" } else { "FAIL" }
    );
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
