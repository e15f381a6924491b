//! Compares the analytic gradient of the hybrid objective with central
//! finite differences on a tiny random model.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use adamel::features::PairFeatures;
use adamel::losses::{self, Batch, Objective};
use adamel::model::{self, Dims, Tensor, TensorSet, ThetaInput};
use rand::{Rng, SeedableRng};

fn main() -> adamel::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let dims = Dims::new(4, 8, 5, 6, 7);
    let params = model::init_params(dims, ThetaInput::Latent, 1)?;
    let mut pair = || PairFeatures {
        features: dims.features,
        dim: dims.embed,
        h: (0..dims.features * dims.embed).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        missing_mask: vec![false; dims.features],
    };
    let source_pairs: Vec<PairFeatures> = (0..4).map(|_| pair()).collect();
    let support_pairs: Vec<PairFeatures> = (0..2).map(|_| pair()).collect();
    let source: Vec<(&PairFeatures, f64)> = source_pairs.iter().zip([1.0, 0.0, 1.0, 0.0]).collect();
    let support: Vec<(&PairFeatures, f64)> = support_pairs.iter().zip([1.0, 0.0]).collect();
    let centroids = losses::compute_centroids(&[
        (vec![0.4, 0.3, 0.2, 0.1], true),
        (vec![0.3, 0.3, 0.2, 0.2], true),
        (vec![0.1, 0.2, 0.3, 0.4], false),
        (vec![0.2, 0.2, 0.3, 0.3], false),
    ])?;
    let mean_target = [0.25, 0.3, 0.25, 0.2];
    let batch = Batch { source: &source, support: &support, mean_target: Some(&mean_target), centroids: Some(&centroids) };
    let objective = Objective::hybrid(0.5, 0.8)?;

    let mut grads = TensorSet::zeros(params.layout());
    let value = losses::evaluate(&objective, &batch, &params, Some(&mut grads))?;
    println!("loss {:.6} (base {:.4}, target {:.4}, support {:.4})", value.total, value.base, value.target, value.support);

    let step = 1e-5;
    let mut probe = params.clone();
    for t in Tensor::ALL {
        let range = params.layout().range(t);
        let mut worst = 0.0f64;
        for i in range {
            let x = params.as_slice()[i];
            probe.as_mut_slice()[i] = x + step;
            let up = losses::evaluate(&objective, &batch, &probe, None)?.total;
            probe.as_mut_slice()[i] = x - step;
            let down = losses::evaluate(&objective, &batch, &probe, None)?.total;
            probe.as_mut_slice()[i] = x;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.as_slice()[i];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{:>8}: max relative error {worst:.2e}", t.name());
    }
    Ok(())
}
