//! Acceptance suite. Runs every criterion in order and prints one
//! `criterion N PASS|FAIL` line per criterion.
//!
//! `PREFREC_CRITERIA=1,2,8` restricts the run to the listed criteria.
//! Criteria in `REPORTED_ONLY` print their verdict without failing the
//! binary; `PREFREC_STRICT=1` enforces them too.

mod common;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use prefrec::agent::{expectile_regression, AgentConfig, PrefRecAgent};
use prefrec::baselines::ActorCritic;
use prefrec::buffers::{Preference, PreferenceBuffer, PreferenceRecord, TrajectorySegment};
use prefrec::config::RunConfig;
use prefrec::eval::{ncis_from_log_weights, ncis_score_with, EvalPoint, PropensityModel};
use prefrec::nn::{finite_diff_check, relative_error, Activation, Checkpoint, Layer, Matrix, Mlp};
use prefrec::policy::{init_critic, init_value, regression_loss, Policy};
use prefrec::reward::RewardModel;
use prefrec::rng::{stream_rng, streams, Rng};
use prefrec::run::{self, RunData};
use prefrec::sim::{HeldoutUser, Task};
use prefrec::train::{Agent, Algo, MetricsRow, Trainer};

/// Directional end-to-end criteria whose outcome depends on the simulator
/// rather than on code correctness.
const REPORTED_ONLY: [u32; 2] = [6, 7];

const E2E_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-2;
const GRAD_CASES: u64 = 20;

/// Input drawn until every rectifier sits clear of its kink.
fn smooth_input(net: &Mlp, rng: &mut Rng) -> Vec<f64> {
    loop {
        let x = normal_vec(rng, net.input_dim());
        if net.kink_margin(&x).expect("input width matches") > KINK_MARGIN {
            return x;
        }
    }
}

/// Finite-difference check of the tanh-squashed policy readout
/// `sum(tanh(f(x)))` over parameters and inputs.
fn policy_fd_check(policy: &Policy, input: &[f64], h: f64) -> f64 {
    let net = policy.net();
    let readout = |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().map(|v| v.tanh()).sum() };
    let states = Matrix::from_vec(1, input.len(), input.to_vec());
    let (tape, actions) = policy.forward_tape(&states).unwrap();
    let ones = Matrix::from_vec(1, actions.cols(), vec![1.0; actions.cols()]);
    let grads = policy.backward(&tape, &actions, &ones).unwrap();
    let pre: Vec<f64> = actions.as_slice().iter().map(|a| 1.0 - a * a).collect();
    let (_, input_grad) = net.backward(input, &pre).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (idx, &a) in grads.values().enumerate() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + h;
        let plus = readout(&probe, input);
        *probe.param_mut(idx) = original - h;
        let minus = readout(&probe, input);
        *probe.param_mut(idx) = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }
    let mut x = input.to_vec();
    for (i, &a) in input_grad.iter().enumerate() {
        let original = x[i];
        x[i] = original + h;
        let plus = readout(net, &x);
        x[i] = original - h;
        let minus = readout(net, &x);
        x[i] = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }
    worst
}

fn criterion_1() -> Verdict {
    let (ds, da, hidden, layers) = (32, 8, 64, 2);
    let mut report = String::new();
    let mut pass = true;
    for (role_idx, role) in ["reward", "q", "v", "policy"].into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for case in 0..GRAD_CASES {
            let mut rng = stream_rng(case, 100 + role_idx as u64, 0);
            let err = match role {
                "reward" => {
                    let rm = RewardModel::new(ds, da, hidden, layers, 1e-3, &mut rng);
                    let x = smooth_input(rm.net(), &mut rng);
                    finite_diff_check(rm.net(), &x, FD_STEP).unwrap()
                }
                "q" => {
                    let q = init_critic(ds, da, hidden, layers, &mut rng);
                    let x = smooth_input(&q, &mut rng);
                    finite_diff_check(&q, &x, FD_STEP).unwrap()
                }
                "v" => {
                    let v = init_value(ds, hidden, layers, &mut rng);
                    let x = smooth_input(&v, &mut rng);
                    finite_diff_check(&v, &x, FD_STEP).unwrap()
                }
                _ => {
                    let p = Policy::new(ds, da, hidden, layers, &mut rng);
                    let x = smooth_input(p.net(), &mut rng);
                    policy_fd_check(&p, &x, FD_STEP)
                }
            };
            worst = worst.max(err);
        }
        pass &= worst < FD_TOL;
        let _ = write!(report, "{role} {worst:.1e} ");
    }
    Verdict::new(pass, format!("max relative error {}< {FD_TOL:.0e}", report))
}

// ---------------------------------------------------------------- 2

/// Sample tau-expectile by bisection on the first-order condition
/// `tau sum (x - m)+ = (1 - tau) sum (m - x)+`.
fn expectile_oracle(xs: &[f64], tau: f64) -> f64 {
    let excess = |m: f64| -> f64 {
        xs.iter()
            .map(|&x| if x > m { tau * (x - m) } else { -(1.0 - tau) * (m - x) })
            .sum()
    };
    let mut lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_2() -> Verdict {
    let n = 10_000;
    let mut rng = stream_rng(2, 200, 0);
    let samples = normal_vec(&mut rng, n);
    let states = Matrix::zeros(n, 1);
    let actions = Matrix::from_vec(n, 1, samples.clone());
    // Q(s, a) = a, so the value targets are exactly the samples.
    let q = Mlp::from_layers(vec![Layer::new(2, 1, vec![0.0, 1.0], vec![0.0], Activation::Identity).unwrap()])
        .unwrap();
    let mut learned = Vec::new();
    let mut pass = true;
    let mut detail = String::new();
    for tau in [0.5, 0.7, 0.9] {
        let config = AgentConfig {
            expectile: tau,
            critic_lr: 1e-3,
            hidden: 16,
            hidden_layers: 2,
            ..AgentConfig::default()
        };
        let mut init = stream_rng(2, 201, 0);
        let v = init_value(1, 16, 2, &mut init);
        let policy = Policy::new(1, 1, 16, 2, &mut init);
        let mut agent = PrefRecAgent::from_parts(q.clone(), v, policy, config);
        for step in 0..4000 {
            if step == 3000 {
                agent.config.critic_lr = 1e-4;
            }
            if let Err(e) = agent.v_update(&states, &actions) {
                return Verdict::error(e);
            }
        }
        let got = agent.v.net.forward(&[0.0]).unwrap()[0];
        let want = expectile_oracle(&samples, tau);
        pass &= (got - want).abs() < 1e-2;
        learned.push(got);
        let _ = write!(detail, "tau {tau}: {got:.4} vs {want:.4}; ");
    }
    pass &= learned.windows(2).all(|w| w[0] < w[1]);
    Verdict::new(pass, format!("{detail}tolerance 1e-2, increasing in tau"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let mut rng = stream_rng(case, 300, 0);
        let v = init_value(12, 32, 2, &mut rng);
        let n = 64;
        let inputs = Matrix::from_vec(n, 12, normal_vec(&mut rng, n * 12));
        let targets = normal_vec(&mut rng, n);
        let (le, ge) = expectile_regression(&v, &inputs, &targets, 0.5).unwrap();
        let (lm, gm) = regression_loss(&v, &inputs, &targets).unwrap();
        // H^0.5(u) = u^2 / 2, so the expectile path is half the mean squared error.
        worst = worst.max((le - 0.5 * lm).abs());
        for (a, b) in ge.values().zip(gm.values()) {
            worst = worst.max((a - 0.5 * b).abs());
        }
    }
    Verdict::new(worst < 1e-10, format!("max |expectile - mse/2| {worst:.1e} < 1e-10 over 20 batches"))
}

// ---------------------------------------------------------------- 4

fn segment(rng: &mut Rng, ds: usize, da: usize, t: usize) -> TrajectorySegment {
    TrajectorySegment::new(ds, da, normal_vec(rng, t * ds), normal_vec(rng, t * da)).unwrap()
}

fn linear_return(w: &[f64], seg: &TrajectorySegment) -> f64 {
    (0..seg.len())
        .map(|t| {
            seg.state(t)
                .iter()
                .chain(seg.action(t))
                .zip(w)
                .map(|(x, w)| x * w)
                .sum::<f64>()
        })
        .sum()
}

fn separable_pairs(rng: &mut Rng, w: &[f64], n: usize) -> PreferenceBuffer {
    let (ds, da, t) = (8, 2, 5);
    let mut buf = PreferenceBuffer::new(ds, da, t, n);
    while buf.len() < n {
        let first = segment(rng, ds, da, t);
        let second = segment(rng, ds, da, t);
        let (r0, r1) = (linear_return(w, &first), linear_return(w, &second));
        if r0 == r1 {
            continue;
        }
        let label = if r0 > r1 { Preference::First } else { Preference::Second };
        buf.push(PreferenceRecord { first, second, label }).unwrap();
    }
    buf
}

fn criterion_4() -> Verdict {
    let (ds, da) = (8, 2);
    let mut rng = stream_rng(4, 400, 0);

    let zero = RewardModel::from_net(Mlp::zeros(&[ds + da, 16, 16, 1]), ds, 1e-3).unwrap();
    let mut ln2_err: f64 = 0.0;
    let mut anti_err: f64 = 0.0;
    let w = normal_vec(&mut rng, ds + da);
    for case in 0..10 {
        let batch = separable_pairs(&mut rng, &w, 32 + case);
        let mut records = batch.records().to_vec();
        records[0].label = Preference::Equal;
        ln2_err = ln2_err.max((zero.mean_loss(&records).unwrap() - std::f64::consts::LN_2).abs());
        let rm = RewardModel::new(ds, da, 32, 2, 1e-3, &mut stream_rng(case as u64, 401, 0));
        for r in &records {
            let p = rm.preference_probability(&r.first, &r.second).unwrap()
                + rm.preference_probability(&r.second, &r.first).unwrap();
            anti_err = anti_err.max((p - 1.0).abs());
        }
    }

    let train = separable_pairs(&mut rng, &w, 20_000);
    let heldout = separable_pairs(&mut rng, &w, 2_000);
    let mut rm = RewardModel::new(ds, da, 64, 2, 1e-3, &mut stream_rng(4, streams::INIT, 4));
    if let Err(e) = rm.pretrain(&train, 3, 256, &mut stream_rng(4, streams::PRETRAIN, 0)) {
        return Verdict::error(e);
    }
    let accuracy = rm.prediction_accuracy(heldout.records()).unwrap();
    Verdict::new(
        ln2_err < 1e-6 && anti_err < 1e-12 && accuracy > 0.90,
        format!(
            "|loss - ln 2| {ln2_err:.1e} < 1e-6, antisymmetry {anti_err:.1e} < 1e-12, held-out accuracy {accuracy:.4} > 0.90"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn lattice_run(cfg: &RunConfig, data: &RunData, agent: Agent) -> Agent {
    let reward = run::init_reward(cfg);
    let mut trainer = Trainer::new(
        agent,
        reward,
        &data.replay,
        &data.preferences,
        cfg.train_config(),
        cfg.seed,
    )
    .unwrap();
    trainer.run(None, |_, _| Ok(())).unwrap();
    trainer.agent
}

fn actor_critic_eq(a: &ActorCritic, b: &ActorCritic) -> bool {
    a.policy.net().bits_eq(b.policy.net())
        && a.policy_target.net().bits_eq(b.policy_target.net())
        && a.critics.len() == b.critics.len()
        && a.critics.iter().zip(&b.critics).all(|(x, y)| x.net.bits_eq(&y.net))
        && a.critic_targets.iter().zip(&b.critic_targets).all(|(x, y)| x.bits_eq(y))
}

fn criterion_5() -> Verdict {
    let mut cfg = common::tiny_config(5);
    cfg.iterations = 100;
    let data = match run::generate(&cfg) {
        Ok(d) => RunData::from(d),
        Err(e) => return Verdict::error(e),
    };
    let build = |algo, baseline: &prefrec::baselines::BaselineConfig| {
        Agent::build(algo, cfg.state_dim, cfg.action_dim, &cfg.agent_config(), baseline, cfg.seed).unwrap()
    };
    let base = cfg.baseline_config();

    let ddpg = lattice_run(&cfg, &data, build(Algo::Ddpg, &base));
    let td3 = lattice_run(&cfg, &data, build(Algo::Td3, &base.clone().ddpg_equivalent()));
    let td3_ddpg = match (&td3, &ddpg) {
        (Agent::Td3(a), Agent::Ddpg(b)) => actor_critic_eq(a, b),
        _ => false,
    };

    let il = lattice_run(&cfg, &data, build(Algo::Il, &base));
    let mut bc = base.clone();
    bc.td3bc_alpha = 0.0;
    bc.policy_delay = 1;
    let td3bc = lattice_run(&cfg, &data, build(Algo::Td3Bc, &bc));
    let mut iq = base.clone();
    iq.iql_beta = 0.0;
    let iql = lattice_run(&cfg, &data, build(Algo::Iql, &iq));
    let td3bc_il = td3bc.policy().net().bits_eq(il.policy().net());
    let iql_il = iql.policy().net().bits_eq(il.policy().net());
    let moved = !il.policy().net().bits_eq(build(Algo::Il, &base).policy().net());

    let steps = cfg.train_config().total_steps();
    Verdict::new(
        td3_ddpg && td3bc_il && iql_il && moved,
        format!(
            "{steps} updates: td3(d=1, no noise, one critic)==ddpg {td3_ddpg}, td3_bc(alpha=0)==il {td3bc_il}, iql(beta=0)==il {iql_il}"
        ),
    )
}

// ---------------------------------------------------------------- 6 and 7

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Variant {
    Algo(Algo),
    Tau05,
    NoPretrain,
    NoFinetune,
}

impl Variant {
    fn name(self) -> String {
        match self {
            Variant::Algo(a) => a.name().to_string(),
            Variant::Tau05 => "prefrec-tau-0.5".into(),
            Variant::NoPretrain => "prefrec-no-pretrain".into(),
            Variant::NoFinetune => "prefrec-no-finetune".into(),
        }
    }

    fn apply(self, mut cfg: RunConfig) -> RunConfig {
        match self {
            Variant::Algo(a) => cfg.algo = a,
            Variant::Tau05 => cfg.tau = Some(0.5),
            Variant::NoPretrain => cfg.no_pretrain = true,
            Variant::NoFinetune => cfg.no_finetune = true,
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy)]
struct E2eRun {
    start: EvalPoint,
    end: MetricsRow,
}

type E2eResults = HashMap<(Task, Variant, u64), E2eRun>;

fn e2e_variants(task: Task) -> Vec<Variant> {
    let mut v = vec![
        Variant::Algo(Algo::PrefRec),
        Variant::Algo(Algo::Il),
        Variant::Algo(Algo::Ddpg),
    ];
    if task == Task::Mixture {
        v.extend([Variant::Tau05, Variant::NoPretrain, Variant::NoFinetune]);
    }
    v
}

/// Every end-to-end run, shared by criteria 6 and 7. Runs of one
/// (task, seed) share the generated data and the pretrained reward model.
fn e2e() -> &'static Result<E2eResults, String> {
    static CELL: OnceLock<Result<E2eResults, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = HashMap::new();
        let mut csv = String::from("task,variant,seed,start_ncis,start_cum_level,ncis,cum_level\n");
        for task in Task::ALL {
            for seed in E2E_SEEDS {
                let mut base = RunConfig::preset("desk").map_err(|e| e.to_string())?;
                base.seed = seed;
                base.task = task;
                let data = RunData::from(run::generate(&base).map_err(|e| e.to_string())?);
                let (pretrained, _) = run::pretrain(&base, &data.preferences).map_err(|e| e.to_string())?;
                for variant in e2e_variants(task) {
                    let cfg = variant.apply(base.clone());
                    let reward = run::starting_reward(&cfg, &pretrained);
                    let o = run::train(&cfg, &data, reward, true).map_err(|e| e.to_string())?;
                    let r = E2eRun {
                        start: o.start.expect("evaluation enabled"),
                        end: *o.last().expect("at least one row"),
                    };
                    let _ = writeln!(
                        csv,
                        "{task},{},{seed},{},{},{},{}",
                        variant.name(),
                        r.start.ncis,
                        r.start.cum_level,
                        r.end.ncis,
                        r.end.cum_level
                    );
                    out.insert((task, variant, seed), r);
                }
            }
        }
        let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_e2e.csv");
        let _ = std::fs::write(path, csv);
        Ok(out)
    })
}

fn mean_over_seeds(res: &E2eResults, task: Task, v: Variant, f: impl Fn(&E2eRun) -> f64) -> f64 {
    E2E_SEEDS.iter().map(|s| f(&res[&(task, v, *s)])).sum::<f64>() / E2E_SEEDS.len() as f64
}

fn criterion_6() -> Verdict {
    let res = match e2e() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let (p, il, dd) = (
        Variant::Algo(Algo::PrefRec),
        Variant::Algo(Algo::Il),
        Variant::Algo(Algo::Ddpg),
    );
    let mut pass = true;
    let mut detail = String::new();
    for task in Task::ALL {
        let ncis = |v| mean_over_seeds(res, task, v, |r| r.end.ncis);
        let cum = |v| mean_over_seeds(res, task, v, |r| r.end.cum_level);
        let start = mean_over_seeds(res, task, p, |r| r.start.cum_level);
        let ok_ncis = ncis(p) > ncis(il) && ncis(p) > ncis(dd);
        let ok_cum = cum(p) > cum(il) && cum(p) > cum(dd);
        let ok_curve = cum(p) > start;
        pass &= ok_ncis && ok_cum && ok_curve;
        let _ = write!(
            detail,
            "{task}: ncis prefrec {:.4} il {:.4} ddpg {:.4} [{}], cum prefrec {:.2} il {:.2} ddpg {:.2} [{}], curve {:.2}->{:.2} [{}]; ",
            ncis(p),
            ncis(il),
            ncis(dd),
            ok(ok_ncis),
            cum(p),
            cum(il),
            cum(dd),
            ok(ok_cum),
            start,
            cum(p),
            ok(ok_curve)
        );
    }
    Verdict::new(pass, format!("{}{} seeds", detail, E2E_SEEDS.len()))
}

fn criterion_7() -> Verdict {
    let res = match e2e() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let task = Task::Mixture;
    let score = |v| mean_over_seeds(res, task, v, |r| r.end.ncis);
    let cum = |v| mean_over_seeds(res, task, v, |r| r.end.cum_level);
    let full = Variant::Algo(Algo::PrefRec);
    let tau = score(full) >= score(Variant::Tau05);
    let pre = score(Variant::NoPretrain) <= score(full);
    let fine = score(Variant::NoFinetune) <= score(full);
    Verdict::new(
        tau && pre && fine,
        format!(
            "mixture ncis: tau 0.7 {:.4} vs tau 0.5 {:.4} [{}], no pretrain {:.4} [{}], no fine-tune {:.4} [{}]; cum level: {:.2} / {:.2} / {:.2} / {:.2}",
            score(full),
            score(Variant::Tau05),
            ok(tau),
            score(Variant::NoPretrain),
            ok(pre),
            score(Variant::NoFinetune),
            ok(fine),
            cum(full),
            cum(Variant::Tau05),
            cum(Variant::NoPretrain),
            cum(Variant::NoFinetune)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "no"
    }
}

// ---------------------------------------------------------------- 8

/// Direct linear-space NCIS: capped kernel products per session, weighted
/// mean of session scores per user, mean over users.
fn brute_force_ncis(users: &[HeldoutUser], policy: &Policy, task: Task, h: f64, cap: f64) -> (f64, usize) {
    let mut per_user = Vec::new();
    for u in users {
        let (mut num, mut den) = (0.0, 0.0);
        for (s, level) in u.log.sessions.iter().zip(&u.levels) {
            let mut w = 1.0;
            for r in &s.requests {
                let a = policy.act(&r.state).unwrap();
                let d2: f64 = a.iter().zip(&r.action).map(|(p, q)| (p - q) * (p - q)).sum();
                w *= (-d2 / (2.0 * h * h)).exp().min(cap);
            }
            let w = w.min(cap);
            num += w * task.score(*level) as f64;
            den += w;
        }
        if den > 0.0 {
            per_user.push(num / den);
        }
    }
    (per_user.iter().sum::<f64>() / per_user.len() as f64, per_user.len())
}

fn criterion_8() -> Verdict {
    let cfg = common::tiny_config(8);
    let data = match run::generate(&cfg) {
        Ok(d) => d,
        Err(e) => return Verdict::error(e),
    };
    let users = &data.heldout;
    let mut recount_err: f64 = 0.0;
    let mut scale_err: f64 = 0.0;
    let mut bounded = true;
    for case in 0..50u64 {
        let mut rng = stream_rng(case, 800, 0);
        let policy = Policy::new(cfg.state_dim, cfg.action_dim, 16, 2, &mut rng);
        // Larger output weights spread the policy's actions beyond the init scale.
        let mut policy_net = policy.into_net();
        let last = policy_net.layers().len() - 1;
        let gain = rng.random_range(1.0..30.0);
        policy_net.layer_mut(last).weight_mut().iter_mut().for_each(|w| *w *= gain);
        let policy = Policy::from_net(policy_net);
        let h = rng.random_range(0.5..2.0);
        let cap = rng.random_range(2.0..20.0);
        let model = PropensityModel::new(h, cap).unwrap();
        for task in Task::ALL {
            let act = |_: &HeldoutUser, s: &Matrix| Ok(policy.act_batch(s)?);
            let got = ncis_score_with(act, users, task, &model).unwrap();
            let (want, kept) = brute_force_ncis(users, &policy, task, h, cap);
            recount_err = recount_err.max((got.score - want).abs());
            bounded &= got.per_user.len() == kept
                && got.per_user.iter().all(|&s| (0.0..=task.max_score() as f64).contains(&s))
                && (0.0..=task.max_score() as f64).contains(&got.score);
        }

        // Multiplying one user's weights by a constant leaves the score unchanged.
        let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|_| {
                let k = rng.random_range(1..30);
                let lw: Vec<f64> = (0..k).map(|_| rng.random_range(-40.0..cap.ln())).collect();
                let lv: Vec<f64> = (0..k).map(|_| rng.random_range(0..=5) as f64).collect();
                (lw, lv)
            })
            .collect();
        let shifted: Vec<(Vec<f64>, Vec<f64>)> = inputs
            .iter()
            .map(|(lw, lv)| {
                let c = rng.random_range(-300.0..300.0);
                (lw.iter().map(|w| w + c).collect(), lv.clone())
            })
            .collect();
        let a = ncis_from_log_weights(&inputs).unwrap().score;
        let b = ncis_from_log_weights(&shifted).unwrap().score;
        scale_err = scale_err.max((a - b).abs());
        bounded &= (0.0..=5.0).contains(&a);
    }
    Verdict::new(
        recount_err < 1e-9 && scale_err < 1e-9 && bounded,
        format!(
            "50 cases x 3 tasks on {} users: recount error {recount_err:.1e} < 1e-9, scale error {scale_err:.1e} < 1e-9, bounded in [0, max level] {bounded}",
            users.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().expect("temp dir")).collect();
    let mut same_metrics = true;
    let mut same_final = true;
    let mut round_trip = true;
    let mut rows = 0;
    for algo in Algo::ALL {
        let mut cfg = common::tiny_config(9);
        cfg.algo = algo;
        let mut metrics = Vec::new();
        let mut finals = Vec::new();
        for d in &dirs {
            if let Err(e) = run::cmd_train(&cfg, d.path(), false) {
                return Verdict::error(e);
            }
            let dir = d.path().join(algo.name());
            metrics.push(std::fs::read(dir.join("metrics.csv")).unwrap());
            finals.push(std::fs::read(dir.join("final.ckpt")).unwrap());
        }
        rows += String::from_utf8_lossy(&metrics[0]).lines().count() - 1;
        same_metrics &= metrics[0] == metrics[1];
        same_final &= finals[0] == finals[1];

        // Restore into a trainer built from another seed, then save again.
        let ckpt = Checkpoint::from_bytes(&finals[0]).unwrap();
        let data = RunData::from(run::generate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 99;
        let mut trainer = run::build_trainer(&other, &data, run::init_reward(&other)).unwrap();
        if let Err(e) = trainer.restore(&ckpt) {
            return Verdict::error(e);
        }
        round_trip &= trainer.checkpoint().to_bytes() == finals[0];
    }
    Verdict::new(
        same_metrics && same_final && round_trip,
        format!(
            "6 algorithms, {rows} metrics rows: metrics.csv identical {same_metrics}, final.ckpt identical {same_final}, restore and save bitwise {round_trip}"
        ),
    )
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient exactness", criterion_1),
    (2, "expectile oracle", criterion_2),
    (3, "expectile at tau 0.5 equals mean squared error", criterion_3),
    (4, "Bradley-Terry correctness", criterion_4),
    (5, "reduction lattice", criterion_5),
    (6, "end-to-end direction", criterion_6),
    (7, "ablation direction", criterion_7),
    (8, "NCIS unit suite", criterion_8),
    (9, "determinism and persistence", criterion_9),
];

fn selected() -> Option<Vec<u32>> {
    let raw = std::env::var("PREFREC_CRITERIA").ok()?;
    Some(raw.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() {
    let only = selected();
    let strict = std::env::var("PREFREC_STRICT").is_ok_and(|v| v == "1");
    let mut enforced_failures = 0;
    for (id, name, f) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let enforced = strict || !REPORTED_ONLY.contains(&id);
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && !enforced { ", reported only" } else { "" };
        println!("criterion {id} {status}: {name} ({}; {secs:.1}s{note})", v.detail);
        if !v.pass && enforced {
            enforced_failures += 1;
        }
    }
    if enforced_failures > 0 {
        std::process::exit(1);
    }
}
