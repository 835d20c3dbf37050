use ec2st::models::GaussianMeanModel;
use ec2st::mslrt::{
    logistic_mle, msplit_run, ConditionalNull, GaussianMeanFamily, GaussianScalarStream, GaussianSingleton,
    NullFamily, PcitNull, RunningMeanGaussian,
};
use ec2st::seed::child_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_ll(mean: f64, xs: &[f64]) -> f64 {
    xs.iter().map(|x| -0.5 * (x - mean).powi(2)).sum()
}

#[test]
fn gaussian_null_fit_dominates_probe_grid() {
    let mut rng = child_rng(1, &[]);
    for _ in 0..50 {
        let shift = rng.random_range(-3.0..3.0);
        let xs: Vec<f64> = (0..20).map(|_| shift + normal(&mut rng)).collect();
        let fit: GaussianMeanModel = GaussianMeanFamily.mle(&xs).unwrap();
        let at_mle = gaussian_ll(fit.mean, &xs);
        for i in 0..1000 {
            let mu = -5.0 + 10.0 * i as f64 / 999.0;
            assert!(at_mle >= gaussian_ll(mu, &xs) - 1e-9);
        }
    }
}

#[test]
fn stratified_null_fit_dominates_probe_grid() {
    let mut rng = child_rng(2, &[]);
    let null = PcitNull::closed_form(ConditionalNull::PerStratumBernoulli);
    for _ in 0..50 {
        let z: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(0..2) as f64]).collect();
        let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..=1u8)).collect();
        let at_mle: f64 = null.fitted_log_densities(&labels, &z).unwrap().iter().sum();
        // probe a 32 × 32 grid over the two stratum probabilities
        for i in 0..32 {
            for j in 0..32 {
                let q = [(i as f64 + 0.5) / 32.0, (j as f64 + 0.5) / 32.0];
                let ll: f64 = z
                    .iter()
                    .zip(&labels)
                    .map(|(zi, &y)| {
                        let p = q[zi[0] as usize];
                        if y == 1 {
                            p.ln()
                        } else {
                            (1.0 - p).ln()
                        }
                    })
                    .sum();
                assert!(at_mle >= ll - 1e-9);
            }
        }
    }
}

#[test]
fn logistic_null_fit_dominates_probe_grid() {
    let mut rng = child_rng(3, &[]);
    let null = PcitNull {
        family: ConditionalNull::Logistic,
        allow_iterative_mle: true,
    };
    for _ in 0..20 {
        let z: Vec<Vec<f64>> = (0..60).map(|_| vec![normal(&mut rng)]).collect();
        let labels: Vec<u8> = z
            .iter()
            .map(|zi| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-zi[0]).exp())))
            .collect();
        let w = logistic_mle(&labels, &z).unwrap();
        let at_mle: f64 = null.fitted_log_densities(&labels, &z).unwrap().iter().sum();
        for i in 0..32 {
            for j in 0..32 {
                let probe = [w[0] - 2.0 + 4.0 * i as f64 / 31.0, w[1] - 2.0 + 4.0 * j as f64 / 31.0];
                let ll: f64 = z
                    .iter()
                    .zip(&labels)
                    .map(|(zi, &y)| {
                        let p = 1.0 / (1.0 + (-(probe[0] + probe[1] * zi[0])).exp());
                        if y == 1 {
                            p.ln()
                        } else {
                            (1.0 - p).ln()
                        }
                    })
                    .sum();
                assert!(at_mle >= ll - 1e-9);
            }
        }
    }
}

#[test]
fn gaussian_evalues_have_mean_at_most_one() {
    let mut rng = child_rng(4, &[]);
    let values: Vec<f64> = (0..10_000)
        .map(|_| {
            let alt_mean = (0..50).map(|_| normal(&mut rng)).sum::<f64>() / 50.0;
            let batch: Vec<f64> = (0..10).map(|_| normal(&mut rng)).collect();
            (gaussian_ll(alt_mean, &batch) - gaussian_ll(0.0, &batch)).exp()
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean <= 1.0 + 3.0 * sd / 100.0, "mean {mean} sd {sd}");
}

#[test]
fn split_test_controls_type1_under_singleton_null() {
    let reps = 100;
    let rejections = (0..reps)
        .filter(|&r| {
            let stream = GaussianScalarStream::new(0.0, 20, 5 + r).unwrap();
            msplit_run(stream, &RunningMeanGaussian, &GaussianSingleton { mean: 0.0 }, 0.05, 50)
                .unwrap()
                .rejected
        })
        .count();
    let bound = 0.05 + 2.0 * (0.05f64 * 0.95 / 100.0).sqrt();
    assert!(rejections as f64 / reps as f64 <= bound, "{rejections} rejections");
}
