//! Shared oracles and builders for the integration suites: an independent
//! Cox partial-likelihood implementation (Breslow tie handling, normalized
//! by n) and simulation shortcuts.

#![allow(dead_code)]

use transmod::core_model::{CoreModel, Family};
use transmod::dataset::CensoredSample;
use transmod::simulate::{simulate_sample, Censoring, CovariateLaw, Gamma0, SimConfig};

pub fn odds_ratio_model(eta: f64) -> CoreModel {
    CoreModel {
        family: Family::OddsRatio { eta },
        dim_theta: 1,
        covariate_bound: 1.0,
    }
}

pub fn or_config(eta: f64, theta0: f64, censoring: Censoring, n: usize, seed: u64) -> SimConfig {
    SimConfig {
        model: odds_ratio_model(eta),
        theta0: vec![theta0],
        gamma0: Gamma0::Identity,
        covariate_law: CovariateLaw::Uniform { dim: 1, bound: 1.0 },
        censoring,
        n,
        seed,
    }
}

pub fn draw(cfg: &SimConfig) -> CensoredSample {
    CensoredSample::from_records(simulate_sample(cfg).expect("simulation"))
        .expect("sample construction")
}

/// Cox partial-likelihood score (normalized by n) and observed information
/// (normalized by n), written directly against risk-set sums with Breslow
/// handling of ties.
pub fn cox_score_info(s: &CensoredSample, theta: f64) -> (f64, f64) {
    let n = s.n() as f64;
    let mut u = 0.0;
    let mut info = 0.0;
    for k in 0..s.num_events() {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in s.risk_start[k]..s.n() {
            let z = s.records[i].z[0];
            let w = (theta * z).exp();
            s0 += w;
            s1 += z * w;
            s2 += z * z * w;
        }
        let ez = s1 / s0;
        let vz = s2 / s0 - ez * ez;
        let mut i = s.risk_start[k];
        while i < s.n() && s.records[i].x == s.event_times[k] && s.records[i].delta == 1 {
            u += s.records[i].z[0] - ez;
            i += 1;
        }
        info += vz * s.event_counts[k];
    }
    (u / n, info)
}

/// Newton solver on the Breslow-ties Cox partial likelihood.
pub fn cox_mle(s: &CensoredSample, init: f64) -> f64 {
    let mut theta = init;
    for _ in 0..100 {
        let (u, info) = cox_score_info(s, theta);
        let step = u / info;
        theta += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    theta
}

/// Runs one acceptance criterion and prints a single pass/fail line.
pub fn criterion<F>(num: usize, name: &str, body: F)
where
    F: FnOnce() + std::panic::UnwindSafe,
{
    let outcome = std::panic::catch_unwind(body);
    match &outcome {
        Ok(()) => println!("criterion {num} ({name}): PASS"),
        Err(_) => println!("criterion {num} ({name}): FAIL"),
    }
    if let Err(payload) = outcome {
        std::panic::resume_unwind(payload);
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
