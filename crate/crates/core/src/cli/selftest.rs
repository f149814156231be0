use clap::ValueEnum;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::{louvain_optimize, modularity_q, CommunityAssignment, LayeredNetwork};
use crate::error::Result;
use crate::gradients::{self, central_differences, finite_difference_oracle, DifferentiationMode, LossSpec, ParamGroup};
use crate::objective::{HomeostaticTarget, LossWeights, TrialReduction};
use crate::plasticity::LearningMask;
use crate::seed::{self, Stream};
use crate::snn::{noise_step, IntrinsicProperties, NetworkConfig, NetworkWeights};
use crate::tasks::{self, PeriodSchedule, TaskFamily};
use crate::tensor::Matrix;

use super::{EXIT_FAILURE, EXIT_OK};

/// Deliberate defects for checking that the self-test catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturbs one analytic gradient entry.
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn gradient_check(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (d, family) in [(2, TaskFamily::Dms), (0, TaskFamily::GngDr2)] {
        let cfg = NetworkConfig {
            n_neurons: 8,
            n_dendrites: d,
            rng_seed: 5,
            ..NetworkConfig::default()
        };
        let schedule = PeriodSchedule::new(10, 10, 10)?;
        let task = tasks::generate(family, 0, &schedule, 11)?;
        let spec = family.spec();
        let weights = NetworkWeights::init(&cfg, spec.input_dim(), spec.output_dim());
        let mut props = IntrinsicProperties::uniform(8, d, 0.7, 0.6, 0.4);
        for i in 0..8 {
            props.tau_s[i] += 0.03 * i as f64;
            props.theta[i] += 0.02 * i as f64;
        }
        let loss = LossSpec {
            kind: spec.loss,
            weights: LossWeights::default(),
            schedule,
            reduction: TrialReduction::Mean,
            target: HomeostaticTarget { sigma_h_sq: 0.01 },
        };
        let mode = DifferentiationMode::smooth(0.5);
        let seeds: Vec<Option<u64>> = (0..task.trials.len() as u64).map(Some).collect();
        let all = LearningMask::new(true, true, true);
        let (_, mut analytic) =
            gradients::loss_and_gradients(&weights, &props, all, &cfg, &task.trials, &loss, &mode, &seeds, None)?;
        if fault == Some(Fault::Gradient) {
            analytic.group_mut(ParamGroup::WRec)[0] += 1e-2;
        }
        let numeric = finite_difference_oracle(
            |w, p| {
                gradients::evaluate(w, p, &cfg, &task.trials, &loss, &mode, &seeds, None)
                    .map(|e| e.breakdown.total)
                    .unwrap_or(f64::NAN)
            },
            &weights,
            &props,
            1e-5,
        )?;
        for (a, n) in analytic.to_flat().iter().zip(numeric.to_flat()) {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn brute_force_q(net: &LayeredNetwork) -> Result<f64> {
    let n = net.n_nodes();
    let mut labels = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    // restricted growth strings enumerate each set partition once
    loop {
        let q = modularity_q(
            net,
            &CommunityAssignment {
                labels: vec![labels.clone()],
            },
        )?;
        best = best.max(q);
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(best);
            }
            let max_prefix = labels[..i].iter().copied().max().unwrap_or(0);
            if labels[i] <= max_prefix {
                labels[i] += 1;
                labels[i + 1..].iter_mut().for_each(|l| *l = 0);
                break;
            }
            i -= 1;
        }
    }
}

fn oracle_check() -> Result<(bool, String)> {
    let triangles = Matrix::from_fn(6, 6, |i, j| if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 });
    let net = LayeredNetwork::new(vec![triangles], 1.0, 0.0)?;
    let q = modularity_q(&net, &louvain_optimize(&net, 0)?)?;
    if (q - 0.5).abs() > 1e-12 {
        return Ok((false, format!("two 3-cliques: Q = {q}, expected 0.5")));
    }
    let mut rng = seed::rng(1, Stream::Louvain, &[99]);
    for k in 0..5 {
        let mut a = Matrix::zeros(6, 6);
        for i in 0..6 {
            for j in i + 1..6 {
                if rng.random_bool(0.5) {
                    let w: f64 = rng.random_range(0.1..1.0);
                    a.set(i, j, w);
                    a.set(j, i, w);
                }
            }
        }
        let Ok(net) = LayeredNetwork::new(vec![a], 1.0, 0.0) else { continue };
        let best = brute_force_q(&net)?;
        let q = modularity_q(&net, &louvain_optimize(&net, k)?)?;
        if (q - best).abs() > 1e-9 {
            return Ok((false, format!("random graph {k}: Louvain {q} vs exhaustive {best}")));
        }
    }
    let x = [0.3, -1.2, 2.0];
    let fd = central_differences(|v| v.iter().map(|t| t * t * t).sum(), &x, 1e-5);
    let fd_err = fd.iter().zip(x).map(|(g, t)| (g - 3.0 * t * t).abs()).fold(0.0, f64::max);
    Ok((fd_err < 1e-8, format!("modularity and Louvain agree with brute force; cubic FD error {fd_err:.1e}")))
}

fn generator_check() -> Result<(bool, String)> {
    let schedule = PeriodSchedule::default();
    let mut count = 0;
    for family in TaskFamily::ALL {
        let spec = family.spec();
        for index in 0..5 {
            let task = tasks::generate(family, index, &schedule, 3)?;
            if task.trials.len() != spec.trials_per_task {
                return Ok((false, format!("{family}: {} trials", task.trials.len())));
            }
            for tr in &task.trials {
                let fix_in = spec.input_dim() - 1;
                let fix_out = spec.output_dim() - 1;
                let shapes_ok = tr.input.shape() == (schedule.total(), spec.input_dim())
                    && tr.target.shape() == (schedule.total(), spec.output_dim());
                let fix_ok = (0..schedule.total()).all(|t| {
                    let want = if t < schedule.response_start() { 1.0 } else { 0.0 };
                    tr.input.get(t, fix_in) == want && tr.target.get(t, fix_out) == want
                });
                if !(shapes_ok && fix_ok) {
                    return Ok((false, format!("{family} task {index}: shape or fixation mismatch")));
                }
                count += 1;
            }
        }
    }
    Ok((true, format!("{count} trials across 4 families")))
}

fn ou_variance_check() -> Result<(bool, String)> {
    let cfg = NetworkConfig::default();
    let expected = 2.0 * cfg.alpha_noise * cfg.a_noise * cfg.a_noise / (1.0 - (1.0 - cfg.alpha_noise).powi(2));
    let mut rng = seed::rng(0, Stream::Noise, &[u64::MAX]);
    let mut state = vec![0.0];
    let burn = 1_000;
    let steps = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for t in 0..burn + steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        state = noise_step(&state, &[z], &cfg);
        if t >= burn {
            s += state[0];
            s2 += state[0] * state[0];
        }
    }
    let mean = s / steps as f64;
    let var = s2 / steps as f64 - mean * mean;
    let rel = (var - expected).abs() / expected;
    Ok((rel <= 0.02, format!("variance {var:.4e} vs {expected:.4e} ({:.2}% off)", rel * 100.0)))
}

/// Runs every check; `fast` skips the Monte-Carlo ones.
pub fn run_selftest(fast: bool, fault: Option<Fault>) -> Vec<CheckOutcome> {
    let mut out = vec![
        outcome("gradient-check", gradient_check(fault)),
        outcome("oracle-equivalence", oracle_check()),
        outcome("generator-shapes", generator_check()),
    ];
    if !fast {
        out.push(outcome("ou-noise-variance", ou_variance_check()));
    }
    out
}

pub(super) fn cmd_selftest(fast: bool, fault: Option<Fault>) -> i32 {
    let results = run_selftest(fast, fault);
    println!("{:<20} {:<6} detail", "check", "result");
    for r in &results {
        println!("{:<20} {:<6} {}", r.name, if r.passed { "pass" } else { "FAIL" }, r.detail);
    }
    if fast {
        println!("{:<20} {:<6} --fast", "ou-noise-variance", "skip");
    }
    match results.iter().filter(|r| !r.passed).map(|r| r.name).collect::<Vec<_>>() {
        failed if failed.is_empty() => EXIT_OK,
        failed => {
            eprintln!("failed: {}", failed.join(", "));
            EXIT_FAILURE
        }
    }
}
