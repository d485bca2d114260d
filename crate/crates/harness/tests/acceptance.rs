//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and exits
//! non-zero when a criterion fails that is not listed in `UNATTAINABLE`.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use planbudget_core::bam::{
    allocate_closed_form, allocate_kkt, allocation_kernel, kkt_spread, unimodal_argmax, AllocationInstance,
    DEFAULT_TOL,
};
use planbudget_core::metrics::a_over_t;
use planbudget_core::prompting::{
    extract_budget_phrases, parse_decomposition, render_decomposition_prompt, render_difficulty_prompt,
    render_reasoning_prompt, residual_placeholders, DecompositionPlan, Method, PromptVariant, QueryRecord,
    DECOMPOSITION_EXAMPLE,
};
use planbudget_core::scheduling::{schedule_and_allocate, ComplexityScores, ScheduleKind, ScheduleParams};
use planbudget_core::uncertainty::{decompose, LogBase, PredictiveEnsemble};
use planbudget_harness::tables::{check_rows, parse_fixture};
use planbudget_harness::{run_experiment, ExperimentConfig, FrozenClock, PUBLISHED_RESULTS, TABLE_TOLERANCE};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Criteria that cannot hold as stated, with the reason. They still run and print FAIL.
const UNATTAINABLE: &[(u32, &str)] = &[(
    5,
    "f(beta) = (beta c)^(1/(beta+1)) has its stationary point at beta ~ 28.17 for c = 0.1, \
     so f is increasing on all of [0.05, 20] and has no interior maximum there",
)];

const AT_TOLERANCE: f64 = 0.01;
const BAM_REL_TOL: f64 = 1e-6;
const BAM_RESIDUAL_TOL: f64 = 1e-9;
const KKT_SPREAD_TOL: f64 = 1e-6;
const ARGMAX_TOL: f64 = 0.01;
const EPISTEMIC_FLOOR: f64 = -1e-12;
const ORACLE_ABS_TOL: f64 = 1e-12;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// 1 --------------------------------------------------------------------------

fn e3_fixture() -> Check {
    let rows = parse_fixture(PUBLISHED_RESULTS).map_err(|e| e.to_string())?;
    let datasets: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    ensure!(rows.len() >= 12, "only {} rows", rows.len());
    ensure!(datasets.len() == 3, "rows span {datasets:?}");
    for (score, tokens, printed) in [(89.76, 2105.12, 3.83), (84.88, 3523.72, 2.04), (90.44, 2286.63, 3.58), (14.33, 1430.14, 0.14)] {
        ensure!(
            rows.iter().any(|r| r.score == score && r.tokens == tokens && r.e3 == printed),
            "anchor row ({score}, {tokens} -> {printed}) missing"
        );
    }
    let check = check_rows(rows, TABLE_TOLERANCE).map_err(|e| e.to_string())?;
    if let Some(bad) = check.failures().next() {
        return Err(format!("{} rows off, first {:?}", check.failures().count(), bad.row));
    }
    let worst = check.rows.iter().map(|r| r.e3_deviation).fold(0.0, f64::max);
    Ok(format!("{} rows over 3 tables, max deviation {worst:.3}", check.rows.len()))
}

// 2 --------------------------------------------------------------------------

fn a_over_t_convention() -> Check {
    let mut worst: f64 = 0.0;
    for (score, tokens, printed) in [(89.76, 2105.12, 4.26), (84.88, 3523.72, 2.41)] {
        let v = a_over_t(score, tokens).map_err(|e| e.to_string())?;
        let dev = ((v * 100.0).round() / 100.0 - printed).abs();
        ensure!(dev <= AT_TOLERANCE + 1e-9, "A/T {v} vs printed {printed}");
        worst = worst.max(dev);
    }
    Ok(format!("4.26 and 2.41 reproduced, max deviation {worst:.3}"))
}

// 3 --------------------------------------------------------------------------

/// Grid search on the simplex, refined around the best point until the step is
/// at most 1e-7 B (the first level already steps at B/40).
fn grid_oracle(instance: &AllocationInstance) -> (f64, f64) {
    let total = instance.total_budget();
    let m = instance.len();
    if m == 1 {
        return (instance.objective(&[total]), 0.0);
    }
    let dims = m - 1;
    let mut center = vec![total / 2.0; dims];
    let mut step = total / 40.0;
    let mut half = 20i64;
    let mut best = (f64::INFINITY, vec![total / m as f64; m]);
    let mut finest = step;
    while step > 1e-7 * total {
        let mut idx = vec![-half; dims];
        'grid: loop {
            let free: Vec<f64> = center.iter().zip(&idx).map(|(c, &k)| c + k as f64 * step).collect();
            let last = total - free.iter().sum::<f64>();
            if free.iter().all(|&b| b > 0.0) && last > 0.0 {
                let mut point = free;
                point.push(last);
                let value = instance.objective(&point);
                if value < best.0 {
                    best = (value, point);
                }
            }
            for k in idx.iter_mut() {
                *k += 1;
                if *k <= half {
                    continue 'grid;
                }
                *k = -half;
            }
            break;
        }
        center = best.1[..dims].to_vec();
        finest = step;
        step /= 4.0;
        half = 8;
    }
    (best.0, finest)
}

fn bam_vs_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(3);
    let (mut worst_gap, mut worst_spread, mut coarsest) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..100 {
        let m = rng.random_range(1..=4);
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..=10.0)).collect();
        let beta: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..=4.0)).collect();
        let total = rng.random_range(10.0..=1000.0);
        let instance = AllocationInstance::from_costs(total, &c, &beta).map_err(|e| e.to_string())?;
        let kkt = allocate_kkt(&instance, DEFAULT_TOL).map_err(|e| format!("case {case}: {e}"))?;
        let (oracle, finest) = grid_oracle(&instance);
        coarsest = coarsest.max(finest / total);

        let gap = rel(kkt.objective, oracle);
        ensure!(gap <= BAM_REL_TOL, "case {case}: objective {} vs oracle {oracle} (rel {gap:e})", kkt.objective);
        let residual = (kkt.budgets.iter().sum::<f64>() - total).abs();
        ensure!(residual <= BAM_RESIDUAL_TOL * total, "case {case}: residual {residual:e}");
        let spread = kkt_spread(&instance, &kkt.budgets);
        ensure!(spread <= KKT_SPREAD_TOL, "case {case}: KKT spread {spread:e}");
        worst_gap = worst_gap.max(gap);
        worst_spread = worst_spread.max(spread);
    }
    ensure!(coarsest <= 1e-3, "oracle final step {coarsest:e} B");
    Ok(format!(
        "100 instances, max rel gap {worst_gap:.1e}, max spread {worst_spread:.1e}, oracle step <= {coarsest:.1e} B"
    ))
}

// 4 --------------------------------------------------------------------------

fn homogeneous_closed_form() -> Check {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let m = rng.random_range(1..=6);
        let beta = rng.random_range(0.5..=4.0);
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..=10.0)).collect();
        let total = rng.random_range(10.0..=1000.0);
        let instance = AllocationInstance::from_costs(total, &c, &vec![beta; m]).map_err(|e| e.to_string())?;
        let closed = allocate_closed_form(&instance);
        let kkt = allocate_kkt(&instance, DEFAULT_TOL).map_err(|e| format!("case {case}: {e}"))?;
        for (a, b) in closed.iter().zip(&kkt.budgets) {
            let r = rel(*b, *a);
            ensure!(r <= BAM_REL_TOL, "case {case}: closed form {a} vs KKT {b}");
            worst = worst.max(r);
        }
    }
    Ok(format!("1000 instances, max rel difference {worst:.1e}"))
}

// 5 --------------------------------------------------------------------------

/// Derivative of ln f, up to the positive factor f.
fn g_prime(beta: f64, c: f64) -> f64 {
    1.0 / (beta * (beta + 1.0)) - (beta * c).ln() / (beta + 1.0).powi(2)
}

fn g_prime_root(c: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    if g_prime(lo, c) <= 0.0 || g_prime(hi, c) >= 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_prime(mid, c) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn unimodality() -> Check {
    let (lo, hi, step) = (0.05, 20.0, 1e-3);
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for c in [0.1, 1.0, 10.0] {
        let scan = unimodal_argmax(c, lo, hi, step).map_err(|e| e.to_string())?;
        let root = g_prime_root(c, lo, hi);
        if scan.interior_maxima != 1 || !scan.is_unimodal {
            let wide = g_prime_root(c, lo, 1000.0).map_or("none".to_string(), |r| format!("{r:.3}"));
            failures.push(format!(
                "c={c}: {} interior maxima (grid max at {}, g' root over [0.05, 1000] at {wide})",
                scan.interior_maxima, scan.beta_star
            ));
            continue;
        }
        if c == 1.0 {
            let root = root.ok_or("no g' root for c=1")?;
            ensure!((scan.beta_star - root).abs() <= ARGMAX_TOL, "c=1 argmax {} vs root {root}", scan.beta_star);
            ensure!((allocation_kernel(1.0, 1.0) - 1.0).abs() < 1e-15, "f(1) != 1 for c=1");
        }
        notes.push(format!("c={c}: beta*={:.3}", scan.beta_star));
    }
    if failures.is_empty() {
        Ok(notes.join(", "))
    } else {
        Err(format!("{}; passing: {}", failures.join("; "), notes.join(", ")))
    }
}

// 6 --------------------------------------------------------------------------

/// Hamilton rounding with ties to the lower index, then the floor of 1 taken from the largest.
fn rounding_oracle(prior: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = prior.iter().sum();
    let shares: Vec<f64> = prior.iter().map(|p| total as f64 * p / sum).collect();
    let mut out: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    let left = total - out.iter().sum::<u64>();
    for &i in order.iter().take(left as usize) {
        out[i] += 1;
    }
    while let Some(i) = out.iter().position(|&b| b == 0) {
        let j = (0..out.len()).fold(0, |best, k| if out[k] > out[best] { k } else { best });
        out[j] -= 1;
        out[i] += 1;
    }
    out
}

fn scheduler() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let kinds = [
        ScheduleKind::Uniform,
        ScheduleKind::Weighted,
        ScheduleKind::Linear,
        ScheduleKind::Polynomial,
        ScheduleKind::Exponential,
        ScheduleKind::Cosine,
    ];
    for case in 0..1000 {
        let m = rng.random_range(1..=12usize);
        let params = ScheduleParams {
            kind: kinds[rng.random_range(0..kinds.len())],
            p: rng.random_range(0.5..=4.0),
            gamma: rng.random_range(0.05..=0.95),
            epsilon: rng.random_range(0.001..=0.5),
            min_budget: rng.random_range(0..=3),
        };
        let total = rng.random_range((m as u64 * params.min_budget).max(1)..=10_000);
        let scores = ComplexityScores::new((0..m).map(|_| rng.random_range(0.1..=100.0)).collect()).map_err(|e| e.to_string())?;
        let alloc = schedule_and_allocate(&scores, &params, total).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(alloc.budgets.iter().sum::<u64>() == total, "case {case}: {:?} does not sum to {total}", alloc.budgets);
        ensure!(alloc.budgets.iter().all(|&b| b >= params.min_budget), "case {case}: {:?} below floor", alloc.budgets);
    }

    let m = 5;
    let priors: [(ScheduleKind, Vec<f64>, [u64; 5]); 4] = [
        (ScheduleKind::Linear, (0..m).map(|j| (m - j) as f64).collect(), [33, 27, 20, 13, 7]),
        (ScheduleKind::Polynomial, (0..m).map(|j| ((m - j) as f64).powi(2)).collect(), [46, 29, 16, 7, 2]),
        (ScheduleKind::Exponential, (0..m).map(|j| 0.9f64.powi(j as i32)).collect(), [24, 22, 20, 18, 16]),
        (
            ScheduleKind::Cosine,
            (0..m).map(|j| 0.5 * (1.0 + (std::f64::consts::PI * j as f64 / (m - 1) as f64).cos()) + 0.01).collect(),
            [39, 34, 20, 6, 1],
        ),
    ];
    let scores = ComplexityScores::uniform(m).map_err(|e| e.to_string())?;
    let mut shown = Vec::new();
    for (kind, prior, expected) in priors {
        let oracle = rounding_oracle(&prior, 100);
        ensure!(oracle == expected, "{kind:?}: oracle {oracle:?} vs {expected:?}");
        let got = schedule_and_allocate(&scores, &ScheduleParams::with_kind(kind), 100).map_err(|e| e.to_string())?;
        ensure!(got.budgets == expected, "{kind:?}: {:?} vs oracle {expected:?}", got.budgets);
        shown.push(format!("{} {:?}", kind.as_str(), got.budgets));
    }
    Ok(format!("1000 fuzzed allocations conserve; {}", shown.join(", ")))
}

// 7 --------------------------------------------------------------------------

fn random_distribution(rng: &mut StdRng, k: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    if p.iter().sum::<f64>() == 0.0 {
        p[rng.random_range(0..k)] = 1.0;
    }
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}

fn uncertainty() -> Check {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..1000 {
        let members = rng.random_range(1..=16);
        let k = rng.random_range(2..=32);
        let base = if rng.random_bool(0.5) { LogBase::Nats } else { LogBase::Bits };
        let ensemble = PredictiveEnsemble::new((0..members).map(|_| random_distribution(&mut rng, k)).collect(), base)
            .map_err(|e| format!("case {case}: {e}"))?;
        let r = decompose(&ensemble);
        ensure!(r.total == r.aleatoric + r.epistemic, "case {case}: {r:?} not additive");
        ensure!(r.epistemic >= EPISTEMIC_FLOOR, "case {case}: epistemic {}", r.epistemic);
        ensure!(r.total <= base.max_entropy(k) + 1e-12, "case {case}: total {} above log K", r.total);
    }
    let deterministic = decompose(&PredictiveEnsemble::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], LogBase::Bits).map_err(|e| e.to_string())?);
    let identical = decompose(&PredictiveEnsemble::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], LogBase::Bits).map_err(|e| e.to_string())?);
    let triple = |r: &planbudget_core::uncertainty::UncertaintyReport| (r.total, r.aleatoric, r.epistemic);
    ensure!(triple(&deterministic) == (1.0, 0.0, 1.0), "deterministic members gave {deterministic:?}");
    ensure!(triple(&identical) == (1.0, 1.0, 0.0), "identical members gave {identical:?}");
    Ok("1000 fuzzed ensembles; trivial cases (1, 0, 1) and (1, 1, 0) bits".into())
}

// 8 --------------------------------------------------------------------------

fn prompts() -> Check {
    let plan = parse_decomposition(DECOMPOSITION_EXAMPLE).map_err(|e| e.to_string())?;
    ensure!(plan.len() == 3, "example parsed to {} sub-questions", plan.len());
    ensure!(plan.subquestions[0].text == "Compute the product modulo 8.", "first sub-question {:?}", plan.subquestions[0].text);

    let mut rng = StdRng::seed_from_u64(8);
    let variant = |kind| PromptVariant {
        kind,
        instruction: "Solve the following math problem.".into(),
        output_format: "Put the final answer in \\boxed{}.".into(),
    };
    let methods = [Method::Vanilla, Method::GlobalBudget, Method::PlannedVanilla, Method::PlannedGlobal, Method::PlanAndBudget];
    let mut rendered = 0;
    for case in 0..200 {
        let m = rng.random_range(1..=8);
        let level: u8 = rng.random_range(1..=5);
        let budget = 50 + 50 * level as u64;
        let plan = DecompositionPlan::from_pairs((0..m).map(|i| (format!("Step {i}?"), format!("Think about {i}."))));
        let record = QueryRecord {
            id: format!("q{case}"),
            question: "What is 6 * 7?".into(),
            gold: "42".into(),
            level: Some(level),
            reference: rng.random_bool(0.5).then(|| "A worked reference.".to_string()),
            domain: "math".into(),
        };
        let scores = ComplexityScores::new((0..m).map(|_| rng.random_range(1.0..=100.0)).collect()).map_err(|e| e.to_string())?;
        let alloc = schedule_and_allocate(&scores, &ScheduleParams::with_kind(ScheduleKind::Linear), budget).map_err(|e| e.to_string())?;

        let mut texts = vec![
            render_decomposition_prompt(&record).map_err(|e| e.to_string())?,
            render_difficulty_prompt(&record, &plan, "MATH-500 levels 1-5").map_err(|e| e.to_string())?,
        ];
        for kind in methods {
            let text = render_reasoning_prompt(&variant(kind), &record, Some(&plan), Some(&alloc), Some(budget)).map_err(|e| e.to_string())?;
            let phrase = format!("use less than {budget} tokens");
            ensure!(text.contains(&phrase) == kind.uses_global_budget(), "{kind:?}: global phrase presence wrong");
            if kind == Method::PlanAndBudget {
                let phrases = extract_budget_phrases(&text);
                ensure!(phrases.len() == m, "case {case}: {} phrases for m={m}", phrases.len());
                ensure!(phrases.iter().sum::<u64>() == budget, "case {case}: phrases {phrases:?} do not sum to {budget}");
                ensure!(text.matches("using up to").count() == m && text.matches(" words").count() >= m, "case {case}: phrase wording");
            } else {
                ensure!(extract_budget_phrases(&text).is_empty(), "{kind:?} carries local budgets");
            }
            texts.push(text);
        }
        for text in &texts {
            let left = residual_placeholders(text);
            ensure!(left.is_empty(), "case {case}: residual placeholders {left:?}");
        }
        rendered += texts.len();
    }
    Ok(format!("worked example parsed (m=3); {rendered} rendered prompts checked"))
}

// 9 --------------------------------------------------------------------------

const GOLD: [(&str, &str); 3] = [("q1", "42"), ("q2", "7"), ("q3", "x+1")];
// correct[run][query]
const CORRECT: [[bool; 3]; 5] = [
    [true, true, true],
    [true, true, false],
    [true, false, false],
    [true, true, true],
    [false, true, true],
];
const DECOMPOSE_TOKENS: u64 = 120;
const CREDIT_TOKENS: u64 = 80;

fn reason_tokens(query: usize, run: usize) -> u64 {
    100 * (query as u64 + 1) + 10 * run as u64
}

fn scripted_experiment(dir: &Path) -> String {
    let credit = r#"{\"1\": {\"evaluated_level\": 1, \"credit\": 50}, \"2\": {\"evaluated_level\": 2, \"credit\": 30}, \"3\": {\"evaluated_level\": 3, \"credit\": 20}}"#;
    let planner = format!(
        "rules = [\n\
         {{ request_id = \"/decompose\", response = \"1. First.\\nHint: a\\n2. Second.\\nHint: b\\n3. Third.\\nHint: c\", tokens = {DECOMPOSE_TOKENS}, repeat = 0 }},\n\
         {{ request_id = \"/credit\", response = \"{credit}\", tokens = {CREDIT_TOKENS}, repeat = 0 }},\n]\n"
    );
    let mut reasoner = String::from("rules = [\n");
    for (run, row) in CORRECT.iter().enumerate() {
        for (q, (id, gold)) in GOLD.iter().enumerate() {
            let answer = if row[q] { gold.to_string() } else { "wrong".into() };
            reasoner.push_str(&format!(
                "  {{ request_id = \"{id}/{run}/reason\", response = \"<think>...</think>\\\\boxed{{{answer}}}\", tokens = {} }},\n",
                reason_tokens(q, run)
            ));
        }
    }
    reasoner.push_str("]\n");
    let dataset: String = GOLD
        .iter()
        .enumerate()
        .map(|(i, (id, gold))| format!("{}\n", json!({"id": id, "question": format!("Problem {id}"), "answer": gold, "level": i + 1})))
        .collect();
    std::fs::write(dir.join("tiny.jsonl"), dataset).unwrap();
    format!(
        "method = \"plan_and_budget\"\ndataset_path = \"tiny.jsonl\"\nevaluator = \"exact_match\"\nn_runs = 5\nconcurrency = 4\n\
         [schedule]\nkind = \"exponential\"\n\
         [planner]\nbackend = \"mock\"\nmodel = \"planner\"\n{planner}\
         [reasoner]\nbackend = \"mock\"\nmodel = \"reasoner\"\n{reasoner}"
    )
}

fn mock_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = scripted_experiment(dir.path());
    let config = ExperimentConfig::from_toml(&text, dir.path()).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = runtime.block_on(run_experiment(&config, Arc::new(FrozenClock))).map_err(|e| e.to_string())?;
        outputs.push(out);
    }

    // per run: scores [100, 200/3, 100/3, 100, 200/3], tokens 400 + 10 run
    let score_mean = 220.0 / 3.0;
    let score_std = (7000.0f64 / 9.0).sqrt();
    let tokens_mean = 420.0;
    let tokens_std = 250.0f64.sqrt();
    let e3 = score_mean * score_mean / tokens_mean;
    let at = score_mean / tokens_mean * 100.0;
    let r = &outputs[0].report;
    for (name, got, want) in [
        ("score_mean", r.score_mean, score_mean),
        ("score_std", r.score_std, score_std),
        ("tokens_mean", r.tokens_mean, tokens_mean),
        ("tokens_std", r.tokens_std, tokens_std),
        ("e3", r.e3, e3),
        ("a_over_t", r.a_over_t, at),
    ] {
        ensure!((got - want).abs() <= ORACLE_ABS_TOL, "{name} {got} vs oracle {want}");
    }
    ensure!(r.n_runs == 5, "n_runs {}", r.n_runs);

    let executions = &outputs[0].executions;
    ensure!(executions.len() == 15, "{} executions", executions.len());
    for ex in executions {
        let q = GOLD.iter().position(|(id, _)| *id == ex.query_id).ok_or("unknown query")?;
        let run = ex.run_index as usize;
        let scripted = DECOMPOSE_TOKENS + CREDIT_TOKENS + reason_tokens(q, run);
        ensure!(ex.completion_tokens == scripted, "{}/{run}: {} tokens vs scripted {scripted}", ex.query_id, ex.completion_tokens);
        let phase_sum: u64 = ex.phases.iter().map(|p| p.completion_tokens).sum();
        ensure!(phase_sum == scripted, "{}/{run}: phase tokens {phase_sum}", ex.query_id);
        let expected = if CORRECT[run][q] { 100.0 } else { 0.0 };
        ensure!(ex.score == expected, "{}/{run}: score {}", ex.query_id, ex.score);
    }

    let (a, b) = (&outputs[0], &outputs[1]);
    ensure!(a.report_csv() == b.report_csv(), "report.csv differs between invocations");
    ensure!(a.report_json() == b.report_json(), "report.json differs between invocations");
    ensure!(a.trace_jsonl() == b.trace_jsonl(), "trace.jsonl differs between invocations");
    for (i, out) in outputs.iter().enumerate() {
        out.write(&dir.path().join(format!("out{i}"))).map_err(|e| e.to_string())?;
    }
    for file in ["report.csv", "report.json", "trace.jsonl"] {
        let x = std::fs::read(dir.path().join("out0").join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(dir.path().join("out1").join(file)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{file} bytes differ");
    }
    Ok(format!(
        "score {:.4} ± {:.4}, tokens {} ± {:.4}; outputs byte-identical",
        r.score_mean, r.score_std, r.tokens_mean, r.tokens_std
    ))
}

// 10 -------------------------------------------------------------------------

#[derive(Default)]
struct Stub {
    replies: VecDeque<(u16, String)>,
    received: Vec<(Option<String>, Value)>,
}

type Shared = Arc<Mutex<Stub>>;

async fn chat(State(stub): State<Shared>, headers: HeaderMap, body: String) -> (StatusCode, String) {
    let mut stub = stub.lock().unwrap();
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string);
    stub.received.push((auth, serde_json::from_str(&body).unwrap_or(Value::Null)));
    let (status, body) = stub.replies.pop_front().unwrap_or((500, "nothing scripted".into()));
    (StatusCode::from_u16(status).unwrap(), body)
}

fn completion(text: &str, tokens: u64, reasoning: Option<u64>) -> String {
    let mut usage = json!({"prompt_tokens": 30, "completion_tokens": tokens, "total_tokens": 30 + tokens});
    if let Some(r) = reasoning {
        usage["completion_tokens_details"] = json!({"reasoning_tokens": r});
    }
    json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": usage,
    })
    .to_string()
}

const STUB_KEY_ENV: &str = "PLANBUDGET_ACCEPTANCE_KEY";

async fn wire_exchange() -> Check {
    let stub: Shared = Arc::new(Mutex::new(Stub {
        replies: VecDeque::from([
            (429, json!({"error": {"message": "rate limited"}}).to_string()),
            (429, json!({"error": {"message": "rate limited"}}).to_string()),
            (200, completion("<think>6*7</think>\\boxed{42}", 250, Some(200))),
            (200, completion("\\boxed{8}", 12, None)),
        ]),
        received: Vec::new(),
    }));
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr: SocketAddr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    std::env::set_var(STUB_KEY_ENV, "sk-stub-123");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("d.jsonl"),
        "{\"id\": \"a\", \"question\": \"What is 6 * 7?\", \"answer\": \"42\"}\n{\"id\": \"b\", \"question\": \"What is 2 ** 3?\", \"answer\": \"8\"}\n",
    )
    .map_err(|e| e.to_string())?;
    // no hard_cutoff given: the default applies
    let text = format!(
        "method = \"vanilla\"\ndataset_path = \"d.jsonl\"\nevaluator = \"exact_match\"\nn_runs = 1\nconcurrency = 1\n\
         [reasoner]\nbackend = \"openai\"\nmodel = \"o4-mini\"\nbase_url = \"http://{addr}/v1\"\napi_key_env = \"{STUB_KEY_ENV}\"\nretry_base_ms = 20\n"
    );
    let config = ExperimentConfig::from_toml(&text, dir.path()).map_err(|e| e.to_string())?;
    let out = run_experiment(&config, Arc::new(FrozenClock)).await.map_err(|e| e.to_string())?;

    let received = stub.lock().unwrap().received.clone();
    ensure!(received.len() == 4, "{} requests reached the stub", received.len());
    for (auth, body) in &received {
        ensure!(auth.as_deref() == Some("Bearer sk-stub-123"), "authorization header {auth:?}");
        let obj = body.as_object().ok_or("request body is not a JSON object")?;
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        ensure!(keys == ["max_tokens", "messages", "model"], "request keys {keys:?}");
        ensure!(body["model"] == "o4-mini", "model {}", body["model"]);
        ensure!(body["max_tokens"] == 8192, "max_tokens {}", body["max_tokens"]);
        let messages = body["messages"].as_array().ok_or("messages is not an array")?;
        ensure!(messages.len() == 1 && messages[0]["role"] == "user", "messages {messages:?}");
        ensure!(messages[0]["content"].as_str().is_some_and(|s| s.contains("What is")), "prompt missing");
    }
    ensure!(received[0].1 == received[2].1, "retried request body changed");

    let a = &out.executions[0];
    let b = &out.executions[1];
    ensure!(a.query_id == "a" && a.phases[0].attempts == 3, "query a took {} attempts", a.phases[0].attempts);
    ensure!(a.phases[0].completion_tokens == 250 && a.phases[0].reasoning_tokens == 200, "query a usage {:?}", (a.phases[0].completion_tokens, a.phases[0].reasoning_tokens));
    ensure!(b.phases[0].attempts == 1 && b.phases[0].completion_tokens == 12 && b.phases[0].reasoning_tokens == 0, "query b phase {:?}", b.phases[0]);
    ensure!(a.score == 100.0 && b.score == 100.0, "scores {} {}", a.score, b.score);
    ensure!(out.report.tokens_mean == 131.0, "tokens_mean {}", out.report.tokens_mean);
    Ok("max_tokens 8192, bearer auth, 429 x2 then 200 in 3 attempts, reasoning_tokens 200 / absent -> 0".into())
}

fn wire_fidelity() -> Check {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(wire_exchange())
}

// ----------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "E3 fixture reproduction", limit: Duration::from_secs(1), run: e3_fixture },
    Criterion { id: 2, name: "A/T convention", limit: Duration::from_secs(1), run: a_over_t_convention },
    Criterion { id: 3, name: "BAM optimality vs grid oracle", limit: Duration::from_secs(30), run: bam_vs_oracle },
    Criterion { id: 4, name: "homogeneous closed form", limit: Duration::from_secs(10), run: homogeneous_closed_form },
    Criterion { id: 5, name: "unimodality", limit: Duration::from_secs(5), run: unimodality },
    Criterion { id: 6, name: "scheduler conservation and shape", limit: Duration::from_secs(5), run: scheduler },
    Criterion { id: 7, name: "uncertainty decomposition", limit: Duration::from_secs(5), run: uncertainty },
    Criterion { id: 8, name: "prompt round-trip and literals", limit: Duration::from_secs(1), run: prompts },
    Criterion { id: 9, name: "end-to-end determinism on mock", limit: Duration::from_secs(5), run: mock_determinism },
    Criterion { id: 10, name: "wire fidelity", limit: Duration::from_secs(10), run: wire_fidelity },
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for c in CRITERIA {
        let label = format!("criterion {} ({})", c.id, c.name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= c.limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, limit {:?}", c.limit))
            }
        });
        let known = UNATTAINABLE.iter().find(|(id, _)| *id == c.id).map(|(_, why)| *why);
        match (result, known) {
            (Ok(detail), None) => println!("PASS {label} [{elapsed:.2?}]: {detail}"),
            (Ok(detail), Some(_)) => {
                unexpected += 1;
                println!("PASS {label} [{elapsed:.2?}]: {detail} (listed as unattainable; update the list)");
            }
            (Err(why), None) => {
                unexpected += 1;
                println!("FAIL {label} [{elapsed:.2?}]: {why}");
            }
            (Err(why), Some(reason)) => println!("FAIL {label} [{elapsed:.2?}]: {why} (unattainable: {reason})"),
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected acceptance result(s)");
        ExitCode::FAILURE
    }
}
