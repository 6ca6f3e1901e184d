//! Fixtures shared by the benchmarks under `benches/`.

use inferactive::datasets::{gen_synthetic, Dataset, SyntheticSpec};
use inferactive::pipeline::Session;
use inferactive::stats::stream_rng;
use rand_distr::{Distribution, StandardNormal};

/// Sparse synthetic regression data with moderately correlated columns.
pub fn regression(n: usize, p: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n,
        p,
        sparsity: 5.min(p),
        amplitude: 0.5,
        noise_sd: 1.0,
        rho: 0.3,
    };
    gen_synthetic(&spec, seed).expect("valid spec").0
}

/// A sample of size `n` whose standardized mean exceeds `tau`.
pub fn selected_sample(n: usize, tau: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    loop {
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if y.iter().sum::<f64>() / (n as f64).sqrt() > tau {
            return y;
        }
    }
}

/// Screening then the randomized LASSO with interactions on `ds`.
pub fn two_stage_session(ds: &Dataset, seed: u64) -> Session {
    use inferactive::dagdag::ModelFamily;
    use inferactive::pipeline::LambdaChoice;
    use inferactive::randomization::RandomizationSpec;
    let mut s = Session::new(ds, ModelFamily::GaussianRegression, None, None).expect("session");
    s.screen(
        2.0,
        Some(RandomizationSpec::gaussian(1.0).expect("scale")),
        seed,
    )
    .expect("screening");
    s.lasso(LambdaChoice::Theory, true, None, seed + 1)
        .expect("lasso");
    s
}
