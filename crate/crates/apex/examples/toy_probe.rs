use apex::config::RunConfig;
use apex::losses::{l_apex_grad, Batch};
use apex::metrics::{moment_report, sample_w2};
use apex::net::VelocityModel;
use apex::sampler::{one_step_sample, ModelField};
use apex::trainer::Adam;
use apex::util::{derive_seed, streams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn eval(
    model: &VelocityModel,
    oracle: &apex::oracle::OracleDist,
    n: usize,
    seed: u64,
) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..oracle.num_conditions())
        .map(|cond| {
            let field = ModelField::new(model, cond).unwrap();
            let samples: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let z: Vec<f64> = (0..oracle.dim())
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    one_step_sample(&field, &z).unwrap()
                })
                .collect();
            let rep = moment_report(&samples, oracle, cond).unwrap();
            let w2 = sample_w2(&samples, oracle, cond).unwrap();
            (rep.mean_err, rep.var_err, w2)
        })
        .collect()
}

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let reuse: bool = std::env::args().nth(2).map(|s| s == "reuse").unwrap_or(false);
    let lambda: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let seed: u64 = std::env::var("SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr: f64 = std::env::var("LR").ok().and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let embed: usize = std::env::var("EMBED").ok().and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = RunConfig {
        steps,
        seed,
        lr,
        embed_dim: embed,
        fake_reuse_noise: reuse,
        lambda,
        ..RunConfig::default()
    };
    let oracle = cfg.oracle().unwrap();
    let mut model = VelocityModel::new_seeded(
        cfg.net_spec().unwrap(),
        derive_seed(cfg.seed, streams::INIT),
    )
    .unwrap();
    let mut adam = Adam::new(
        model.num_params(),
        cfg.lr,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::BATCHES));
    let t0 = std::time::Instant::now();
    for step in 0..cfg.steps {
        let batch = Batch::draw(
            &oracle,
            cfg.batch_size,
            cfg.t_min,
            cfg.t_max,
            cfg.fake_reuse_noise,
            &mut rng,
        )
        .unwrap();
        let warmup: usize = std::env::var("WARMUP").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
        let weights = if step < warmup {
            apex::losses::LossWeights { lambda: 0.0, lambda_p: 0.0, lambda_e: 1.0 }
        } else {
            cfg.weights()
        };
        let (report, grads) = l_apex_grad(&model, &batch, cfg.shift(), weights).unwrap();
        adam.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        adam.step(model.params_mut(), &grads);
        if (step + 1) % 1000 == 0 {
            let evals = eval(&model, &oracle, 2000, 99);
            let summary: Vec<String> = evals
                .iter()
                .map(|(m, v, w)| format!("({m:.3},{v:.3},{w:.3})"))
                .collect();
            println!(
                "step {:>6} [{:5.1}s] l_fake {:.4} l_mix {:.4} dv {:.3} | (mean,var,w2): {}",
                step + 1,
                t0.elapsed().as_secs_f64(),
                report.l_fake,
                report.l_mix,
                report.delta_v_norm,
                summary.join(" ")
            );
        }
    }
}
