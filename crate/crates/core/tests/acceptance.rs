//! Acceptance run: one pass/fail line per criterion.
//!
//! Criteria 8 and 9 are directional toy-scale comparisons. They print a
//! per-seed table and a FAIL line when the direction does not hold, but do
//! not fail the process. Every other criterion is hard.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thr_core::advantage::{grpo_advantages, passk_advantages, PasskConfig};
use thr_core::config::{RunConfig, SchemeName};
use thr_core::dynamics::q_vector;
use thr_core::eval::pass_at_k;
use thr_core::metrics::metrics_jsonl;
use thr_core::objective::{gspo_token_loss_and_grad, ClipConfig};
use thr_core::policy::{ContextKey, PolicyParams};
use thr_core::rollout::{dynamic_sample_batch, Group};
use thr_core::sweep::{median, run_sweep, SweepAxis, SweepSpec};
use thr_core::tasks::{generate_dataset, Question};
use thr_core::thr::{entropy_thr_overlap, gram_pair, thr_group};
use thr_core::train::train;
use thr_core::verify::{
    fd_gradient, grad_point, grad_rel_err, gspo_stop_grad_value_fn, random_group, run_suite, RandomGroupSpec, Suite,
};
use thr_core::Error;

/// (id, name, hard, check)
type Criterion = (u32, &'static str, bool, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn suite_outcome(suite: Suite, n: usize, check: &str) -> Outcome {
    let rep = run_suite(suite, n, 0).expect("suite runs");
    for f in &rep.failures {
        println!("    {f}");
    }
    outcome(
        rep.passed(),
        format!(
            "{} rows, {} failures, max {check} rel_err {:.3e}",
            rep.rows.len(),
            rep.failures.len(),
            rep.max_rel_err(check)
        ),
    )
}

fn first_order() -> Outcome {
    let start = Instant::now();
    let mut o = suite_outcome(Suite::FirstOrder, 100, "first_order");
    let secs = start.elapsed().as_secs_f64();
    o.pass &= secs < 60.0;
    o.detail = format!("{}; {secs:.2}s", o.detail);
    o
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Prediction error `e_y − π(·|χ)` and hidden state at position `k` of a
/// response, rebuilt from the raw read-out matrix and features.
fn position(params: &PolicyParams, qid: u64, tokens: &[u32], k: usize) -> (Vec<f64>, Vec<f64>) {
    let ctx = ContextKey::new(qid, tokens[..k].to_vec());
    let h = params.feature(&ctx).into_owned();
    let (v, d) = (params.vocab().size(), params.dim());
    let w = params.readout();
    let logits: Vec<f64> = (0..v).map(|a| (0..d).map(|b| w[a * d + b] * h[b]).sum()).collect();
    let mut err: Vec<f64> = softmax(&logits).iter().map(|p| -p).collect();
    err[tokens[k] as usize] += 1.0;
    (err, h)
}

/// The group hidden reward written out term by term: for each token of each
/// response, sum over correct responses and their positions.
fn naive_thr(params: &PolicyParams, group: &Group) -> Vec<f64> {
    let qid = group.question.id;
    let mut out = Vec::new();
    for target in &group.responses {
        for kp in 0..target.tokens.len() {
            let (e_j, h_j) = position(params, qid, &target.tokens, kp);
            let mut total = 0.0;
            for pos in group.responses.iter().filter(|r| r.reward == 1) {
                let mut pair = 0.0;
                for k in 0..pos.tokens.len() {
                    let (e_i, h_i) = position(params, qid, &pos.tokens, k);
                    let alpha: f64 = (0..e_i.len()).map(|v| e_i[v] * e_j[v]).sum();
                    let s: f64 = (0..h_i.len()).map(|b| h_i[b] * h_j[b]).sum();
                    pair += alpha * s;
                }
                total += (2.0 * target.reward as f64 - 1.0) * pair / pos.tokens.len() as f64;
            }
            out.push(total);
        }
    }
    out
}

fn thr_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let spec = RandomGroupSpec {
            group_size: [2, 4, 8][i as usize % 3],
            max_len: 1 + i as usize % 4,
            ..RandomGroupSpec::default()
        };
        let (params, group) = random_group(&spec, 1000 + i).unwrap();
        let fast = thr_group(&group, &gram_pair(&group));
        let slow = naive_thr(&params, &group);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-10, format!("200 groups, max |gram − naive| = {worst:.3e}"))
}

/// Smallest `a` with `P(Binomial(n, p) > a) < alpha`.
fn binomial_upper(n: usize, p: f64, alpha: f64) -> usize {
    let mut term = (1.0 - p).powi(n as i32);
    let mut cdf = term;
    let mut a = 0;
    while 1.0 - cdf >= alpha && a < n {
        term *= (n - a) as f64 / (a + 1) as f64 * p / (1.0 - p);
        cdf += term;
        a += 1;
    }
    a
}

/// Each cell is compared at 3 standard errors. With hundreds of cells a
/// correct estimator still lands outside 3 se about 0.27% of the time, so
/// the verdict allows as many such cells as a binomial tail at 1e-3 permits
/// and rejects any cell beyond 5 se outright.
fn pass_at_k_mc() -> Outcome {
    const RESAMPLES: usize = 10_000;
    const P_OUTSIDE_3SE: f64 = 0.0026998;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut cells, mut random_cells, mut k1_exact) = (0, 0, true);
    let (mut outside, mut gross) = (Vec::new(), 0);
    for m in [8usize, 64] {
        let ks: Vec<usize> = (0..).map(|e| 1usize << e).take_while(|&k| k <= m).collect();
        for c in 0..=m {
            for &k in &ks {
                let exact = pass_at_k(m, c, k).unwrap();
                if k == 1 && exact != c as f64 / m as f64 {
                    k1_exact = false;
                }
                let hits = (0..RESAMPLES)
                    .filter(|_| rand::seq::index::sample(&mut rng, m, k).iter().any(|i| i < c))
                    .count();
                let mc = hits as f64 / RESAMPLES as f64;
                let se = (exact * (1.0 - exact) / RESAMPLES as f64).sqrt();
                cells += 1;
                if se == 0.0 {
                    if mc != exact {
                        gross += 1;
                        outside.push(format!("M={m} C={c} K={k}: exact {exact} but mc {mc}"));
                    }
                    continue;
                }
                random_cells += 1;
                let z = (mc - exact) / se;
                if z.abs() > 3.0 {
                    outside.push(format!("M={m} C={c} K={k}: exact {exact:.5} mc {mc:.5} ({z:.2} se)"));
                }
                if z.abs() > 5.0 {
                    gross += 1;
                }
            }
        }
    }
    for line in &outside {
        println!("    {line}");
    }
    let allowed = binomial_upper(random_cells, P_OUTSIDE_3SE, 1e-3);
    outcome(
        outside.len() <= allowed && gross == 0 && k1_exact,
        format!(
            "{cells} cells ({random_cells} non-degenerate), {} outside 3 se (allowed {allowed}), {gross} beyond 5 se or off an exact 0/1, K=1 exact: {k1_exact}",
            outside.len()
        ),
    )
}

/// GSPO-token loss with the sequence ratio differentiated through, as an
/// implementation that forgot the stop-gradient would compute it.
fn gspo_full_derivative_value(
    groups: &[(Group, thr_core::advantage::AdvantageTable)],
) -> impl Fn(&PolicyParams) -> f64 + '_ {
    move |p: &PolicyParams| {
        let n = groups.len() as f64;
        let mut loss = 0.0;
        for (g, adv) in groups {
            for r in &g.responses {
                let lps: Vec<f64> = r
                    .stats
                    .clone()
                    .map(|t| {
                        let st = &g.flat_stats[t];
                        p.dist(&st.ctx, g.temperature).unwrap().log_prob(st.token)
                    })
                    .collect();
                let mean: f64 = lps.iter().zip(&r.old_logprobs).map(|(a, b)| a - b).sum::<f64>() / r.len() as f64;
                let w = 1.0 / (n * g.group_size() as f64 * r.len() as f64);
                for t in r.stats.clone() {
                    loss -= w * mean.exp() * adv.values[t];
                }
            }
        }
        loss
    }
}

fn gradients() -> Outcome {
    let rep = run_suite(Suite::Gradcheck, 50, 0).unwrap();
    for f in &rep.failures {
        println!("    {f}");
    }
    let cfg = ClipConfig::default();
    let mut caught = 0;
    let mut weakest = f64::INFINITY;
    for i in 0..50u64 {
        let pt = grad_point(thr_core::rng::mix(&[0, i]), true).unwrap();
        let oracle = fd_gradient(&pt.current, &pt.contexts, 1e-5, gspo_stop_grad_value_fn(&pt));
        let mutant = fd_gradient(&pt.current, &pt.contexts, 1e-5, gspo_full_derivative_value(&pt.groups));
        let err = grad_rel_err(&mutant, &oracle);
        weakest = weakest.min(err);
        if err >= 1e-5 {
            caught += 1;
        }
        // The real implementation agrees with the oracle at the same point.
        let (_, an) = gspo_token_loss_and_grad(&pt.current, &pt.groups, &cfg).unwrap();
        assert!(grad_rel_err(&an, &oracle) < 1e-5);
    }
    let max = ["gradcheck_grpo", "gradcheck_gspo_token", "gradcheck_kl"].map(|c| rep.max_rel_err(c));
    outcome(
        rep.passed() && caught == 50,
        format!(
            "max rel_err grpo {:.2e} gspo_token {:.2e} kl {:.2e}; full-derivative mutant rejected on {caught}/50 (min rel_err {weakest:.2e})",
            max[0], max[1], max[2]
        ),
    )
}

fn q_alignment() -> Outcome {
    let mut o = suite_outcome(Suite::Qalign, 1000, "qalign_v2");
    let mut worst = 0.0f64;
    for v in [2usize, 10, 100, 1000] {
        let u = vec![1.0 / v as f64; v];
        let q = q_vector(&u).unwrap();
        worst = q.iter().zip(&u).map(|(a, b)| (a + b).abs()).fold(worst, f64::max);
    }
    o.pass &= worst <= 1e-10;
    o.detail = format!("{}; uniform max |Q + π| = {worst:.1e}", o.detail);
    o
}

fn default_runs(scheme: SchemeName, p: Option<Vec<f64>>) -> Vec<thr_core::sweep::CellResult> {
    let base = RunConfig {
        scheme,
        ..RunConfig::default()
    };
    let axis = match p {
        Some(ps) => SweepAxis::P(ps),
        None => SweepAxis::Scheme(vec![scheme]),
    };
    run_sweep(&SweepSpec {
        base,
        axis,
        seeds: (0..10).collect(),
    })
    .unwrap()
}

fn final_metric(
    cells: &[thr_core::sweep::CellResult],
    label: &str,
    seed: u64,
    f: impl Fn(&thr_core::train::RunRecord) -> Option<f64>,
) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.label == label && c.seed == seed)
        .and_then(|c| c.outcome.as_ref().ok())
        .and_then(f)
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "error".into(), |v| format!("{v:.4}"))
}

fn directional() -> Outcome {
    let start = Instant::now();
    let cells = default_runs(SchemeName::ThrP, Some(vec![-0.2, 0.0, 0.2]));
    let (mut greedy_ok, mut pass_ok) = (0, 0);
    println!("    seed  greedy(-0.2) greedy(0) greedy(+0.2)  pass16(-0.2) pass16(0) pass16(+0.2)");
    for seed in 0..10 {
        let g = |l: &str| final_metric(&cells, l, seed, |r| r.final_greedy());
        let p = |l: &str| final_metric(&cells, l, seed, |r| r.final_pass(16));
        let (gm, g0, gp) = (g("p=-0.2"), g("p=0"), g("p=0.2"));
        let (pm, p0, pp) = (p("p=-0.2"), p("p=0"), p("p=0.2"));
        if let (Some(a), Some(b)) = (gp, gm) {
            greedy_ok += usize::from(a >= b);
        }
        if let (Some(a), Some(b)) = (pm, pp) {
            pass_ok += usize::from(a >= b);
        }
        println!(
            "    {seed:>4}  {:>12} {:>9} {:>12}  {:>12} {:>9} {:>12}",
            fmt(gm),
            fmt(g0),
            fmt(gp),
            fmt(pm),
            fmt(p0),
            fmt(pp)
        );
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        greedy_ok >= 7 && pass_ok >= 7 && secs < 600.0,
        format!("greedy(+0.2) ≥ greedy(−0.2) on {greedy_ok}/10 seeds, pass@16(−0.2) ≥ pass@16(+0.2) on {pass_ok}/10; {secs:.1}s"),
    )
}

fn parity() -> Outcome {
    let grpo = default_runs(SchemeName::Grpo, None);
    let thr = default_runs(SchemeName::ThrOnly, None);
    println!("    seed  grpo      thr_only");
    let mut a = Vec::new();
    let mut b = Vec::new();
    for seed in 0..10 {
        let x = final_metric(&grpo, "scheme=grpo", seed, |r| r.final_greedy());
        let y = final_metric(&thr, "scheme=thr_only", seed, |r| r.final_greedy());
        println!("    {seed:>4}  {:<9} {}", fmt(x), fmt(y));
        a.extend(x);
        b.extend(y);
    }
    let (ma, mb) = (median(&mut a).unwrap_or(f64::NAN), median(&mut b).unwrap_or(f64::NAN));
    let gap = (ma - mb).abs();
    outcome(
        gap <= 0.05,
        format!(
            "median greedy grpo {ma:.4}, thr_only {mb:.4}, gap {:.1} pp",
            100.0 * gap
        ),
    )
}

fn degenerate_groups() -> Outcome {
    let cfg = RunConfig::default();
    let task = cfg.task_spec().unwrap();
    let questions = generate_dataset(&task);
    let params = PolicyParams::new(task.vocab, cfg.dim, cfg.sigma_h, 0).unwrap();
    let (mut cursor, mut kept, mut attempts) = (0, 0, 0);
    let mut all_mixed = true;
    for step in 0..20 {
        let batch = dynamic_sample_batch(
            &params,
            &task,
            &questions,
            &cfg.sampling(),
            &cfg.batch_request(step),
            &mut cursor,
        )
        .unwrap();
        all_mixed &= batch.groups.iter().all(Group::is_mixed);
        kept += batch.groups.len();
        attempts += batch.attempts;
    }
    let q = Question { id: 0, target: 0 };
    let forced = |r: u8| Group::from_parts(&params, q, vec![vec![11]; 4], &[r; 4], 1.0).unwrap();
    let raised = [0u8, 1].iter().all(|&r| {
        let g = forced(r);
        matches!(grpo_advantages(&g), Err(Error::GroupDegenerate { .. }))
            && matches!(
                passk_advantages(&g, &PasskConfig::default()),
                Err(Error::GroupDegenerate { .. })
            )
    });
    outcome(
        all_mixed && raised && attempts > kept,
        format!("{kept} groups kept of {attempts} drawn, all mixed: {all_mixed}; forced all-wrong/all-correct raise GroupDegenerate: {raised}"),
    )
}

fn determinism() -> Outcome {
    let mut same = true;
    for scheme in [SchemeName::Grpo, SchemeName::ThrP, SchemeName::Covkl] {
        let base = RunConfig {
            scheme,
            p: if scheme == SchemeName::ThrP { 0.2 } else { 0.0 },
            steps: 12,
            seed: 9,
            ..RunConfig::default()
        };
        let a = train(&RunConfig {
            parallel: true,
            ..base.clone()
        })
        .unwrap();
        let b = train(&RunConfig {
            parallel: true,
            ..base.clone()
        })
        .unwrap();
        let c = train(&RunConfig {
            parallel: false,
            ..base
        })
        .unwrap();
        let stream = |r: &thr_core::train::RunRecord| metrics_jsonl(&r.metrics);
        let ckpt = |r: &thr_core::train::RunRecord| thr_core::checkpoint::encode(&r.params);
        same &= stream(&a) == stream(&b) && stream(&a) == stream(&c);
        same &= ckpt(&a) == ckpt(&b) && ckpt(&a) == ckpt(&c);
    }
    outcome(
        same,
        "grpo, thr_p, covkl: replay and serial-vs-parallel metric streams and checkpoints byte-identical",
    )
}

fn overlap() -> Outcome {
    let cfg = RunConfig {
        scheme: SchemeName::ThrP,
        p: 0.2,
        ..RunConfig::default()
    };
    let rec = train(&cfg).unwrap();
    let eval_steps: Vec<u64> = rec.evals.iter().map(|r| r.step).filter(|&s| s > 0).collect();
    let logged = eval_steps.iter().all(|s| {
        rec.metrics
            .iter()
            .any(|r| r.step == *s && r.key == "thr_entropy_overlap")
    });
    let values: Vec<f64> = rec
        .metrics
        .iter()
        .filter(|r| r.key == "thr_entropy_overlap")
        .map(|r| r.value)
        .collect();
    let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let full = (1..40).all(|n| {
        let thr: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ent: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        entropy_thr_overlap(&thr, &ent, n) == 1.0
    });
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    outcome(
        logged && in_range && full && !values.is_empty(),
        format!("logged at every eval step: {logged}; {} values in [0,1]: {in_range} (mean {mean:.3}); n = token count gives 1.0: {full}", values.len()),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "THR first-order identity", true, first_order),
        (2, "THR naive-oracle equivalence", true, thr_oracle),
        (3, "Pass@K advantage exactness", true, || {
            suite_outcome(Suite::PasskOracle, 0, "passk_enumerate")
        }),
        (4, "Pass@K estimator vs Monte Carlo", true, pass_at_k_mc),
        (5, "gradient correctness + stop-gradient mutant", true, gradients),
        (6, "entropy lemma", true, || {
            suite_outcome(Suite::Entropy, 100, "entropy_example")
        }),
        (7, "Q-alignment", true, q_alignment),
        (8, "exploration/exploitation direction (soft)", false, directional),
        (9, "thr_only parity with grpo (soft)", false, parity),
        (10, "degenerate-group handling", true, degenerate_groups),
        (11, "determinism", true, determinism),
        (12, "overlap statistic", true, overlap),
    ];
    let mut hard_failures = Vec::new();
    for (id, name, hard, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} [{verdict}] {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if hard && !o.pass {
            hard_failures.push(id);
        }
    }
    if !hard_failures.is_empty() {
        eprintln!("hard criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
