//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qfldp_core::accountant::{epsilon_for, rdp_step_cost, DEFAULT_ORDERS};
use qfldp_core::dp_sgd::{clip_gradient, DpConfig};
use qfldp_core::federation::{run_rounds, setup, train_centralized, FederatedConfig, RoundConfig};
use qfldp_core::harness::config::{Preset, TrainingConfig};
use qfldp_core::harness::data::generate_synthetic;
use qfldp_core::harness::{load_dataset, plan_privacy, run_in_memory};
use qfldp_core::model::{Example, HybridModel, Reducer, ReducerKind, N_TRAINABLE};
use qfldp_core::rng::{stream, Purpose};

const SEEDS: [u64; 3] = [0, 1, 2];

/// Noise multiplier that puts the default preset at epsilon ~ 1.24.
const HEADLINE_SIGMA: f64 = 2.25;

type Check = fn(&mut Runs) -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Test accuracy per round (1..=R) and final epsilon of one harness run.
#[derive(Clone)]
struct Curve {
    accuracy: Vec<f64>,
    epsilon: f64,
    sigma: f64,
}

#[derive(Default)]
struct Runs(HashMap<String, Curve>);

impl Runs {
    fn get(&mut self, cfg: &TrainingConfig) -> Curve {
        self.0
            .entry(cfg.to_text())
            .or_insert_with(|| {
                let report = run_in_memory(cfg).expect("training run");
                Curve {
                    accuracy: report.rows.iter().map(|r| r.test_accuracy).collect(),
                    epsilon: report.final_epsilon,
                    sigma: report.plan.noise_multiplier,
                }
            })
            .clone()
    }

    fn seeds(&mut self, cfg: &TrainingConfig) -> Vec<Curve> {
        SEEDS
            .iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.seed = s;
                self.get(&c)
            })
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn mean_curve(curves: &[Curve]) -> Vec<f64> {
    (0..curves[0].accuracy.len())
        .map(|i| mean(&curves.iter().map(|c| c.accuracy[i]).collect::<Vec<_>>()))
        .collect()
}

/// First round after which `curve` never drops below `level`.
fn rounds_to_stay(curve: &[f64], level: f64) -> Option<usize> {
    (0..curve.len()).find(|&i| curve[i..].iter().all(|&a| a >= level)).map(|i| i + 1)
}

/// First round at which `curve` reaches `level`.
fn rounds_to_reach(curve: &[f64], level: f64) -> Option<usize> {
    curve.iter().position(|&a| a >= level).map(|i| i + 1)
}

/// Sample variance across seeds, averaged over rounds.
fn inter_seed_variance(curves: &[Curve]) -> f64 {
    let n = curves.len() as f64;
    let per_round: Vec<f64> = (0..curves[0].accuracy.len())
        .map(|i| {
            let xs: Vec<f64> = curves.iter().map(|c| c.accuracy[i]).collect();
            variance(&xs) * n / (n - 1.0)
        })
        .collect();
    mean(&per_round)
}

/// Variance of round-to-round accuracy changes over the second half of the
/// run, averaged over seeds.
fn round_to_round_variance(curves: &[Curve]) -> f64 {
    mean(
        &curves
            .iter()
            .map(|c| {
                let tail = &c.accuracy[c.accuracy.len() / 2..];
                variance(&tail.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            })
            .collect::<Vec<_>>(),
    )
}

fn simulator_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let len = rng.random_range(1..=8);
        let gates = common::random_circuit(n, len, &mut rng);
        let psi = common::random_state(n, &mut rng);
        let mut state = qfldp_core::statevector::QuantumState::from_amplitudes(psi.clone()).unwrap();
        for g in &gates {
            state.apply_gate_mut(g).unwrap();
        }
        let want = common::apply_matrix(&common::circuit_matrix(n, &gates), &psi);
        for (a, b) in state.amplitudes().iter().zip(&want) {
            worst = worst.max((a - b).norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-12 && secs < 5.0, format!("100 circuits, max amplitude error {worst:.1e}"))
}

fn random_model(rng: &mut ChaCha8Rng, d: usize) -> HybridModel {
    let projection: Vec<f64> = (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let offset = [0.0; 4].map(|_| rng.random_range(-1.0..1.0));
    let scale = [0.0; 4].map(|_| rng.random_range(0.5..2.0));
    let reducer = Reducer::new(d, projection, offset, scale).unwrap();
    let mut theta = [0.0; N_TRAINABLE];
    for (i, t) in theta.iter_mut().enumerate() {
        *t = if i < 12 { rng.random_range(-3.2..3.2) } else { rng.random_range(-2.0..2.0) };
    }
    HybridModel::init(reducer, rng).with_trainable(&theta).unwrap()
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let instances = 64;
    for _ in 0..instances {
        let d = rng.random_range(4..12);
        let model = random_model(&mut rng, d);
        let features: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let example = Example::new(features, rng.random_range(0..2)).unwrap();
        let (_, g) = model.loss_and_gradient(&example).unwrap();
        let fd = common::finite_difference_gradient(&model, &example, 1e-5);
        for i in 0..N_TRAINABLE {
            worst = worst.max((g[i] - fd[i]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-5 && secs < 30.0,
        format!("{instances} instances x 18 partials, max |analytic - fd| {worst:.1e}"),
    )
}

fn dp_sgd_reductions() -> Verdict {
    let data = generate_synthetic(120, 8, 3.0, &mut stream(3, Purpose::Synthetic, 0, 0)).unwrap();
    let reducer = Reducer::fit(&data, ReducerKind::Pca, &mut stream(3, Purpose::Reducer, 0, 0)).unwrap();
    let init = HybridModel::init(reducer, &mut stream(3, Purpose::ModelInit, 0, 0));
    let lr = 0.3;
    let dp = DpConfig::new(1e9, 0.0, data.len(), lr).unwrap();

    let mut reference = Vec::new();
    let mut theta = init.trainable();
    for _ in 0..100 {
        let m = init.with_trainable(&theta).unwrap();
        let mut sum = [0.0; N_TRAINABLE];
        for e in &data {
            for (s, g) in sum.iter_mut().zip(m.loss_and_gradient(e).unwrap().1) {
                *s += g;
            }
        }
        for (t, s) in theta.iter_mut().zip(sum) {
            *t -= lr * s / data.len() as f64;
        }
        reference.push(theta);
    }
    let mut drift = 0.0f64;
    train_centralized(&data, &init, &dp, 100, 3, |s, m| {
        for (a, b) in m.trainable().iter().zip(&reference[s as usize]) {
            drift = drift.max((a - b).abs());
        }
    })
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exceeded = 0;
    for _ in 0..10_000 {
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let g: Vec<f64> = (0..N_TRAINABLE).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let out = clip_gradient(&g, c).unwrap();
        if out.iter().map(|v| v * v).sum::<f64>().sqrt() > c {
            exceeded += 1;
        }
    }
    verdict(
        drift <= 1e-10 && exceeded == 0,
        format!("GD drift over 100 steps {drift:.1e}; {exceeded} of 10^4 clipped norms above C"),
    )
}

fn accountant_checks() -> Verdict {
    let start = Instant::now();
    let mut closed = 0.0f64;
    for &sigma in &[0.5, 1.0, 2.0, 4.0] {
        for &a in DEFAULT_ORDERS {
            let want = a / (2.0 * sigma * sigma);
            closed = closed.max((rdp_step_cost(1.0, sigma, a).unwrap() - want).abs() / want);
        }
    }
    let mut quad = 0.0f64;
    for &q in &[0.01, 0.1] {
        for &sigma in &[0.5, 1.0, 4.0] {
            for &a in DEFAULT_ORDERS {
                let want = common::rdp_quadrature(q, sigma, a);
                quad = quad.max((rdp_step_cost(q, sigma, a).unwrap() - want).abs() / want);
            }
        }
    }

    let qs = [0.01, 0.05];
    let sigmas = [0.7, 1.0, 2.0, 4.0, 8.0];
    let steps = [100u64, 1000];
    let eps = |q, s, t, d| epsilon_for(q, s, t, d).unwrap();
    let mut monotone = true;
    let mut dominated = true;
    for (qi, &q) in qs.iter().enumerate() {
        for (si, &s) in sigmas.iter().enumerate() {
            for (ti, &t) in steps.iter().enumerate() {
                let e = eps(q, s, t, 1e-5);
                monotone &= e > 0.0 && eps(q, s, t, 1e-6) >= e;
                if qi + 1 < qs.len() {
                    monotone &= eps(qs[qi + 1], s, t, 1e-5) >= e;
                }
                if si + 1 < sigmas.len() {
                    monotone &= eps(q, sigmas[si + 1], t, 1e-5) <= e;
                }
                if ti + 1 < steps.len() {
                    monotone &= eps(q, s, steps[ti + 1], 1e-5) >= e;
                }
                dominated &= e <= common::composition_epsilon(q, s, t, 1e-5);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        closed <= 1e-12 && quad <= 1e-6 && monotone && dominated && secs < 60.0,
        format!(
            "closed form rel err {closed:.1e}; quadrature rel err {quad:.1e}; lattice monotone {monotone}; \
             below composition bound {dominated}"
        ),
    )
}

fn single_client_equivalence() -> Verdict {
    let bits = |m: &HybridModel| m.trainable().map(f64::to_bits);
    let mut identical = true;
    let mut compared = 0;
    // 10 Poisson lots per round for 20 rounds, then one full lot per round for 200 rounds.
    for &(n, lot, rounds) in &[(250usize, 20usize, 20usize), (60, 48, 200)] {
        let data = generate_synthetic(n, 8, 3.0, &mut stream(5, Purpose::Synthetic, 0, 0)).unwrap();
        let (train, test) = data.split_at(n * 4 / 5);
        let cfg = FederatedConfig {
            rounds: RoundConfig::new(1, 1, 1, rounds).unwrap(),
            dp: DpConfig::new(1.0, 1.0, lot, 0.2).unwrap(),
            delta: 1e-5,
            reducer: ReducerKind::Pca,
        };
        let (init, mut clients) = setup(&cfg, train, 5).unwrap();
        let shard = clients[0].shard().data.clone();
        let per_round = cfg.dp.steps_per_epoch(shard.len());
        let mut steps = Vec::new();
        let central =
            train_centralized(&shard, &init, &cfg.dp, (rounds * per_round) as u64, 5, |_, m| steps.push(bits(m)))
                .unwrap();
        let mut globals = Vec::new();
        let fed = run_rounds(init, &mut clients, &cfg.rounds, 5, train, test, |m, g| {
            if m.round > 0 {
                globals.push(bits(g));
            }
        })
        .unwrap();
        identical &= bits(&fed.model) == bits(&central);
        for (r, g) in globals.iter().enumerate() {
            identical &= *g == steps[(r + 1) * per_round - 1];
        }
        compared += steps.len();
    }
    verdict(identical, format!("federated K=J=1 vs centralized, {compared} steps compared bitwise"))
}

fn defaults() -> TrainingConfig {
    Preset::Default.base()
}

fn convergence(runs: &mut Runs) -> Verdict {
    let dp = runs.seeds(&defaults());
    let mut plain_cfg = defaults();
    plain_cfg.noise_multiplier = 0.0;
    plain_cfg.clip_norm = f64::INFINITY;
    let plain = runs.seeds(&plain_cfg);

    let finals: Vec<f64> = dp.iter().map(|c| *c.accuracy.last().unwrap()).collect();
    let final_mean = mean(&finals);
    let (r_dp, r_plain) = (rounds_to_stay(&mean_curve(&dp), 0.95), rounds_to_stay(&mean_curve(&plain), 0.95));
    let (v_dp, v_plain) = (inter_seed_variance(&dp), inter_seed_variance(&plain));
    let faster = matches!((r_plain, r_dp), (Some(p), Some(d)) if p < d);
    verdict(
        final_mean >= 0.95 && faster && v_plain < v_dp,
        format!(
            "DP final accuracy {final_mean:.4} (eps {:.3}); rounds until mean accuracy stays >= 0.95: \
             non-DP {r_plain:?} vs DP {r_dp:?}; inter-seed variance non-DP {v_plain:.2e} vs DP {v_dp:.2e}",
            dp[0].epsilon
        ),
    )
}

fn sigma_sweep(runs: &mut Runs) -> Verdict {
    let members = Preset::SigmaSweep.expand(&Preset::SigmaSweep.base());
    let results: Vec<Vec<Curve>> = members.iter().map(|(_, cfg)| runs.seeds(cfg)).collect();
    let eps: Vec<f64> = results.iter().map(|r| r[0].epsilon).collect();
    let eps_all_decreasing = SEEDS.iter().enumerate().all(|(i, _)| {
        results.windows(2).all(|w| w[0][i].epsilon > w[1][i].epsilon)
    });
    let rtr: Vec<f64> = results.iter().map(|r| round_to_round_variance(r)).collect();
    let finals: Vec<f64> = results
        .iter()
        .map(|r| mean(&r.iter().map(|c| *c.accuracy.last().unwrap()).collect::<Vec<_>>()))
        .collect();
    let spread = finals.iter().cloned().fold(f64::MIN, f64::max) - finals.iter().cloned().fold(f64::MAX, f64::min);
    let nondecreasing = rtr.windows(2).all(|w| w[1] >= w[0]);
    let names: Vec<&str> = members.iter().map(|(n, _)| n.as_str()).collect();
    verdict(
        eps_all_decreasing && nondecreasing && spread <= 0.03,
        format!(
            "{names:?}: eps {:.3?}; round-to-round variance [{}]; final accuracy {:.4?} (spread {spread:.4})",
            eps,
            rtr.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(", "),
            finals
        ),
    )
}

fn local_epoch_sweep(runs: &mut Runs) -> Verdict {
    let members = Preset::LocalEpochs.expand(&Preset::LocalEpochs.base());
    let mut reach = Vec::new();
    let mut sigmas = Vec::new();
    let mut worst_eps = 0.0f64;
    for (_, cfg) in &members {
        let curves = runs.seeds(cfg);
        reach.push(rounds_to_reach(&mean_curve(&curves), 0.90));
        sigmas.push(mean(&curves.iter().map(|c| c.sigma).collect::<Vec<_>>()));
        worst_eps = curves.iter().fold(worst_eps, |m, c| m.max(c.epsilon));
    }
    let nonincreasing = reach.iter().all(Option::is_some) && reach.windows(2).all(|w| w[1] <= w[0]);
    let budget = Preset::LocalEpochs.base().target_epsilon.unwrap();
    verdict(
        nonincreasing && worst_eps <= budget,
        format!(
            "T = 1, 2, 4 at eps <= {budget}: rounds to mean accuracy 0.90 {reach:?}; \
             calibrated sigma {sigmas:.3?}; max eps {worst_eps:.4}"
        ),
    )
}

fn accountant_cli(q: f64, sigma: f64, steps: u64) -> f64 {
    let out = Command::new(env!("CARGO_BIN_EXE_qfldp"))
        .args(["accountant", "--q", &q.to_string(), "--sigma", &sigma.to_string()])
        .args(["--steps", &steps.to_string(), "--delta", "1e-5"])
        .output()
        .expect("run qfldp");
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix("epsilon="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN)
}

fn epsilon_magnitude() -> Verdict {
    let cfg = defaults();
    let (train, _) = load_dataset(&cfg).unwrap();
    let plan = plan_privacy(&cfg, train.len()).unwrap();
    let eps = accountant_cli(plan.sampling_rate, cfg.noise_multiplier, plan.max_client_steps);
    let lot = cfg.lot_size;
    let headline = accountant_cli(lot as f64 / 230.0, HEADLINE_SIGMA, plan.max_client_steps);
    verdict(
        eps > 0.0 && eps < 10.0 && (headline - 1.24).abs() <= 0.05,
        format!(
            "default preset (q = {lot}/{}, sigma {}, {} steps): eps {eps:.4}; \
             (L, sigma, R) = ({lot}, {HEADLINE_SIGMA}, {}) gives eps {headline:.4}",
            train.len() / cfg.clients,
            cfg.noise_multiplier,
            plan.max_client_steps,
            cfg.rounds
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("simulator matches Kronecker oracle", |_| simulator_oracle()),
        ("gradients match finite differences", |_| gradient_check()),
        ("DP-SGD reduces to GD; clipping bound", |_| dp_sgd_reductions()),
        ("accountant verification", |_| accountant_checks()),
        ("federated K=J=1 equals centralized", |_| single_client_equivalence()),
        ("convergence with and without DP", convergence),
        ("noise-multiplier sweep", sigma_sweep),
        ("local-epoch sweep at fixed budget", local_epoch_sweep),
        ("epsilon magnitude", |_| epsilon_magnitude()),
    ];
    let mut runs = Runs::default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check(&mut runs);
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {} {status}: {name}: {} [{:.1}s]", i + 1, v.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
