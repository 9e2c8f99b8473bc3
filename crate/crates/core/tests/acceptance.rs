//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting, so `cargo test --test acceptance -- --nocapture`
//! gives a readable scoreboard.

use rand::Rng;
use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};
use svsr_core::data::{self, target_cycles, DataConfig, Label};
use svsr_core::dpo::{dpo_loss, loss_from_z, DpoMode, PairSource, PreferencePair};
use svsr_core::env::{self, EnvConfig, Problem, LEVELS};
use svsr_core::metrics::{self, Ratio};
use svsr_core::oracle::{self, SimulatedGenerator};
use svsr_core::policy::{self, sft_loss, PolicyParams, SftExample};
use svsr_core::rng::stream_rng;
use svsr_core::trajectory::{mask, Automaton, Step, StepKind, Trajectory, Verdict, VerifyStrategy};
use svsr_core::workflow::{simulate, RunConfig};

fn report(id: u32, ok: bool, what: &str, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id}: {what} ({detail})");
}

fn problem(id: &str, a: u32, gt: u32, level: u8) -> Problem {
    Problem {
        id: id.into(),
        statement: String::new(),
        answer_space: (0..a).collect(),
        gt_answer: gt,
        level,
        attachment_ref: None,
    }
}

fn random_params(a: usize, seed: u64, scale: f64) -> PolicyParams {
    let mut rng = stream_rng(seed, 0xacc, 1);
    let mut p = PolicyParams::zeros(a);
    for w in p.weights_mut() {
        *w = rng.random_range(-scale..scale);
    }
    p
}

fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + h;
            let fp = f(&xs);
            xs[i] = x[i] - h;
            let fm = f(&xs);
            xs[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest |a − n| / max(|a|, |n|, 1) over coordinates.
fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    S,
    Vc,
    Vi,
    R,
}

fn sym_step(s: Sym) -> Step {
    match s {
        Sym::S => Step::solve("", 0),
        Sym::Vc => Step::verify("", Verdict::Correct, None),
        Sym::Vi => Step::verify("", Verdict::Incorrect, None),
        Sym::R => Step::rectify("", 0),
    }
}

/// The canonical language written out directly: `S (Vi R)^j Vc` for
/// `j ≤ k_max`, plus `S (Vi R)^k_max Vi`.
fn canonical_language(k_max: usize, max_len: usize) -> BTreeSet<Vec<u8>> {
    let enc = |v: &[Sym]| v.iter().map(|&s| s as u8).collect::<Vec<u8>>();
    let mut out = BTreeSet::new();
    for j in 0..=k_max {
        let mut w = vec![Sym::S];
        for _ in 0..j {
            w.extend([Sym::Vi, Sym::R]);
        }
        let mut ok = w.clone();
        ok.push(Sym::Vc);
        if ok.len() <= max_len {
            out.insert(enc(&ok));
        }
        if j == k_max {
            w.push(Sym::Vi);
            if w.len() <= max_len {
                out.insert(enc(&w));
            }
        }
    }
    out
}

#[test]
fn criterion_01_automaton_equivalence() {
    let start = Instant::now();
    let alphabet = [Sym::S, Sym::Vc, Sym::Vi, Sym::R];
    let mut checked = 0usize;
    let mut disagreements = Vec::new();
    for k_max in 0..=4 {
        let automaton = Automaton::canonical(k_max);
        let language = canonical_language(k_max, 6);
        let mut words: Vec<Vec<Sym>> = vec![vec![]];
        for _ in 0..6 {
            let next: Vec<Vec<Sym>> = words
                .iter()
                .flat_map(|w| {
                    alphabet.iter().map(move |&s| {
                        let mut x = w.clone();
                        x.push(s);
                        x
                    })
                })
                .collect();
            for w in &next {
                let steps: Vec<Step> = w.iter().map(|&s| sym_step(s)).collect();
                let code: Vec<u8> = w.iter().map(|&s| s as u8).collect();
                let accepted = automaton.validate_steps(&steps).is_ok();
                checked += 1;
                if accepted != language.contains(&code) {
                    disagreements.push((k_max, w.clone()));
                }
            }
            words = next;
        }
        if automaton.validate_steps(&[]).is_ok() {
            disagreements.push((k_max, vec![]));
        }
    }
    let elapsed = start.elapsed();
    let ok = disagreements.is_empty() && elapsed < Duration::from_secs(1);
    report(
        1,
        ok,
        "validator matches brute-force language on all strings of length <= 6",
        format!("{checked} strings, {} disagreements, {elapsed:?}", disagreements.len()),
    );
    assert!(disagreements.is_empty(), "{disagreements:?}");
    assert!(elapsed < Duration::from_secs(1));
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_mask_conformance() {
    let svsv = Trajectory::new(
        "p",
        vec![
            Step::solve("", 1),
            Step::verify("", Verdict::Correct, None),
            Step::solve("", 2),
            Step::verify("", Verdict::Correct, None),
        ],
    );
    let example_ok = mask(&svsv).bits() == [0, 1, 0, 1];

    let automaton = Automaton::canonical(4);
    let mut rng = stream_rng(2, 0xacc, 0);
    let mut bad = 0usize;
    for i in 0..1000u64 {
        let level = (i % 5 + 1) as u8;
        let p = problem("p", 5, (i % 5) as u32, level);
        let params = random_params(5, i, 2.0);
        let y = policy::sample(&params, &p, 4, &mut rng).unwrap();
        let valid = automaton.validate(&y).is_ok();
        let expected: Vec<u8> = y
            .steps
            .iter()
            .map(|s| u8::from(matches!(s.kind(), StepKind::Verify | StepKind::Rectify)))
            .collect();
        if !valid || mask(&y).bits() != expected.as_slice() {
            bad += 1;
        }
    }
    let ok = example_ok && bad == 0;
    report(
        2,
        ok,
        "mask is 1 exactly on verify/rectify steps",
        format!("[S,V,S,V] example {}, {bad}/1000 random trajectories wrong", if example_ok { "ok" } else { "wrong" }),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_policy_normalization() {
    let start = Instant::now();
    let p = problem("p", 3, 2, 3);
    let all = policy::enumerate(&p, 2).unwrap();
    let mut worst = 0.0f64;
    for point in 0..11u64 {
        let params = if point == 0 {
            PolicyParams::zeros(3)
        } else {
            random_params(3, point, 3.0)
        };
        let total: f64 = all.iter().map(|y| policy::logprob(&params, &p, y, 2).unwrap().exp()).sum();
        worst = worst.max((total - 1.0).abs());
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && elapsed < Duration::from_secs(5);
    report(
        3,
        ok,
        "probabilities over all trajectories sum to 1 (A=3, k_max=2)",
        format!("{} trajectories, 11 points, max |sum-1| = {worst:.2e}, {elapsed:?}", all.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_gradient_checks() {
    let start = Instant::now();
    let h = 1e-4;
    let k_max = 3;
    let mut sft_worst = 0.0f64;
    let mut dpo_worst = 0.0f64;
    for point in 0..10u64 {
        let problems: Vec<Problem> = (0..3)
            .map(|j| problem(&format!("p{j}"), 4, ((point + j) % 4) as u32, ((point + j) % 5 + 1) as u8))
            .collect();
        let params = random_params(4, 100 + point, 1.5);
        let sampler = random_params(4, 200 + point, 1.5);
        let mut rng = stream_rng(point, 0xacc, 4);
        let ys: Vec<Trajectory> = problems
            .iter()
            .map(|p| policy::sample(&sampler, p, k_max, &mut rng).unwrap())
            .collect();
        let dataset: Vec<SftExample> = problems
            .iter()
            .zip(&ys)
            .map(|(problem, trajectory)| SftExample { problem, trajectory })
            .collect();
        let w = 0.5 + point as f64 * 0.25;
        let obj = sft_loss(&params, &dataset, w, k_max).unwrap();
        let numeric = numeric_grad(params.weights(), h, |x| {
            let q = PolicyParams::from_weights(params.layout(), x.to_vec()).unwrap();
            sft_loss(&q, &dataset, w, k_max).unwrap().loss
        });
        sft_worst = sft_worst.max(max_rel_err(&obj.grad, &numeric));

        let p = &problems[0];
        let (win, lose) = loop {
            let a = policy::sample(&sampler, p, k_max, &mut rng).unwrap();
            let b = policy::sample(&sampler, p, k_max, &mut rng).unwrap();
            if a.skeleton() != b.skeleton() {
                break (a, b);
            }
        };
        let pair = PreferencePair::new(win, lose, 0.5, PairSource::Online, 1).unwrap();
        let reference = random_params(4, 300 + point, 1.0);
        let beta = 0.5;
        let l = dpo_loss(&params, &reference, p, &pair, beta, k_max).unwrap();
        let numeric = numeric_grad(params.weights(), h, |x| {
            let q = PolicyParams::from_weights(params.layout(), x.to_vec()).unwrap();
            dpo_loss(&q, &reference, p, &pair, beta, k_max).unwrap().loss
        });
        dpo_worst = dpo_worst.max(max_rel_err(&l.grad, &numeric));
    }
    let elapsed = start.elapsed();
    let ok = sft_worst <= 1e-5 && dpo_worst <= 1e-5 && elapsed < Duration::from_secs(10);
    report(
        4,
        ok,
        "SFT and DPO gradients match central differences (h=1e-4)",
        format!("max rel err sft {sft_worst:.2e}, dpo {dpo_worst:.2e}, {elapsed:?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_dpo_identities() {
    let mut worst = 0.0f64;
    let mut rng = stream_rng(5, 0xacc, 0);
    for i in 0..100u64 {
        let p = problem("p", 5, (i % 5) as u32, (i % 5 + 1) as u8);
        let sampler = random_params(5, 500 + i, 1.0);
        let (a, b) = loop {
            let a = policy::sample(&sampler, &p, 4, &mut rng).unwrap();
            let b = policy::sample(&sampler, &p, 4, &mut rng).unwrap();
            if a.skeleton() != b.skeleton() {
                break (a, b);
            }
        };
        let pair = PreferencePair::new(a, b, 0.4, PairSource::Seed, 0).unwrap();
        let params = random_params(5, i, 2.0);
        let beta = 0.1 + rng.random_range(0.0..2.0);
        let l = dpo_loss(&params, &params, &p, &pair, beta, 4).unwrap();
        worst = worst.max((l.loss - std::f64::consts::LN_2).abs());
    }

    // z = β·δ when only the winner's answer-token weight moves by δ.
    let p = problem("p", 3, 2, 1);
    let short = |a| Trajectory::new("p", vec![Step::solve("", a), Step::verify("", Verdict::Correct, None)]);
    let pair = PreferencePair::new(short(0), short(1), 0.5, PairSource::Seed, 0).unwrap();
    let reference = PolicyParams::zeros(3);
    let beta = 0.5;
    let zs = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut losses = Vec::new();
    let mut z_err = 0.0f64;
    for &z in &zs {
        let mut params = reference.clone();
        let i = params.layout().token_index(0);
        params.weights_mut()[i] = z / beta;
        let l = dpo_loss(&params, &reference, &p, &pair, beta, 4).unwrap();
        z_err = z_err.max((l.z - z).abs()).max((l.loss - loss_from_z(z)).abs());
        losses.push(l.loss);
    }
    let decreasing = losses.windows(2).all(|w| w[0] > w[1]);
    let ok = worst <= 1e-12 && decreasing && z_err < 1e-12;
    report(
        5,
        ok,
        "DPO loss is ln 2 at the reference and strictly decreasing in z",
        format!("max |loss-ln2| = {worst:.1e} over 100 pairs; losses at z=-2..2 {losses:.4?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_toy_end_to_end() {
    let cfg = RunConfig::default().resolve().unwrap();
    assert_eq!(cfg.env.total_problems(), 50);
    assert_eq!(cfg.env.answer_space_size, 5);
    assert_eq!(
        (cfg.dpo.candidates, cfg.dpo.iterations, cfg.dpo.steps_per_iter),
        (4, 5, 200)
    );
    assert_eq!((cfg.dpo.beta, cfg.dpo.lr), (0.5, 0.1));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let run = pool.install(|| simulate(&cfg, None)).unwrap();
    let elapsed = start.elapsed();
    let first = run.dpo.history.first().unwrap().heldout_pref_acc.unwrap();
    let last = run.dpo.history.last().unwrap().heldout_pref_acc.unwrap();
    let ok = first <= 0.6 && last >= 0.8 && elapsed < Duration::from_secs(120);
    report(
        6,
        ok,
        "default config reaches held-out preference accuracy >= 0.8 from <= 0.6",
        format!(
            "seed {}, {} held-out pairs, start {first:.3}, end {last:.3}, {elapsed:?} single-threaded",
            cfg.seed,
            run.dpo.heldout.len()
        ),
    );
    assert!(first <= 0.6, "start accuracy {first} > 0.6");
    assert!(last >= 0.8, "final accuracy {last} < 0.8");
    assert!(elapsed < Duration::from_secs(120));
}

// ---------------------------------------------------------------- 7

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_07_semi_online_vs_offline() {
    let mut semi = Vec::new();
    let mut off = Vec::new();
    for seed in 0..5 {
        let cfg = RunConfig { seed, ..Default::default() }.resolve().unwrap();
        for (mode, out) in [(DpoMode::SemiOnline, &mut semi), (DpoMode::Offline, &mut off)] {
            let run = simulate(&cfg, Some(mode)).unwrap();
            out.push(run.dpo.history.last().unwrap().heldout_pref_acc.unwrap());
        }
    }
    let (ms, mo) = (median(semi.clone()), median(off.clone()));
    let ok = ms >= mo;
    report(
        7,
        ok,
        "median final held-out accuracy, semi-online >= offline over 5 seeds",
        format!("semi-online {semi:.3?} median {ms:.3}; offline {off:.3?} median {mo:.3}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8

/// Mean of exact per-problem outcomes, per level.
fn exact_by_level(params: &PolicyParams, problems: &[Problem], k_max: usize) -> ([f64; LEVELS], [f64; LEVELS]) {
    let mut acc = [0.0; LEVELS];
    let mut att = [0.0; LEVELS];
    let mut n = [0.0; LEVELS];
    for p in problems {
        let o = policy::outcome(params, p, k_max).unwrap();
        let l = p.level_index();
        acc[l] += o.p_final_correct;
        att[l] += o.expected_attempts();
        n[l] += 1.0;
    }
    for l in 0..LEVELS {
        acc[l] /= n[l];
        att[l] /= n[l];
    }
    (acc, att)
}

#[test]
fn criterion_08_difficulty_trend() {
    let rollouts = 400;
    let mut all_ok = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let cfg = RunConfig { seed, ..Default::default() }.resolve().unwrap();
        let problems = env::gen_problems(&cfg.env).unwrap();
        let gen = SimulatedGenerator::from_env(&cfg.env);
        let trajectories: Vec<(usize, Trajectory)> = problems
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let mut rng = stream_rng(seed, 0x7472_656e, i as u64);
                (0..rollouts)
                    .map(|_| (i, oracle::self_correct(&gen, p, cfg.k_max, &mut rng).unwrap()))
                    .collect::<Vec<_>>()
            })
            .collect();
        let corpus: Vec<(&Problem, &Trajectory)> = trajectories.iter().map(|(i, y)| (&problems[*i], y)).collect();
        let profile = metrics::difficulty_profile(&corpus);
        let attempts: Vec<f64> = profile.iter().map(|r| r.mean_attempts).collect();
        let monotone = profile.len() == LEVELS && attempts.windows(2).all(|w| w[0] <= w[1]);

        let run = simulate(&cfg, None).unwrap();
        let (sft_acc, _) = exact_by_level(&run.sft_params, &run.problems, cfg.k_max);
        let (dpo_acc, dpo_att) = exact_by_level(&run.dpo.params, &run.problems, cfg.k_max);
        let improved = dpo_acc[LEVELS - 1] >= sft_acc[LEVELS - 1];
        all_ok &= monotone && improved;
        lines.push(format!(
            "seed {seed}: generator attempts {attempts:.3?}; level-5 accuracy {:.3} -> {:.3}; trained-policy attempts {dpo_att:.3?}",
            sft_acc[LEVELS - 1],
            dpo_acc[LEVELS - 1]
        ));
    }
    report(
        8,
        all_ok,
        "attempts non-decreasing in level, level-5 accuracy after DPO >= before, per seed",
        lines.join("; "),
    );
    assert!(all_ok, "{lines:#?}");
}

// ---------------------------------------------------------------- 9

/// Event-by-event recount, written independently of the metrics module.
fn recount(corpus: &[(&Problem, &Trajectory)]) -> [(usize, usize); 4] {
    let mut va = (0, 0);
    let mut er = (0, 0);
    let mut e2c = (0, 0);
    let mut c2e = (0, 0);
    for (p, y) in corpus {
        for i in 0..y.steps.len() {
            let before = y.steps[..i].iter().rev().find_map(|s| s.answer());
            match &y.steps[i] {
                Step::Verify { verdict, .. } => {
                    let Some(a) = before else { continue };
                    let truth = a == p.gt_answer;
                    va.1 += 1;
                    if truth == (*verdict == Verdict::Correct) {
                        va.0 += 1;
                    }
                    if !truth {
                        er.1 += 1;
                        if *verdict == Verdict::Incorrect {
                            er.0 += 1;
                        }
                    }
                }
                Step::Rectify { answer, .. } => {
                    let Some(a) = before else { continue };
                    if a == p.gt_answer {
                        c2e.1 += 1;
                        if *answer != p.gt_answer {
                            c2e.0 += 1;
                        }
                    } else {
                        e2c.1 += 1;
                        if *answer == p.gt_answer {
                            e2c.0 += 1;
                        }
                    }
                }
                Step::Solve { .. } => {}
            }
        }
    }
    [va, er, e2c, c2e]
}

#[test]
fn criterion_09_metrics_oracle() {
    let mut mismatches = 0usize;
    let mut events = 0usize;
    for c in 0..100u64 {
        let mut rng = stream_rng(c, 0xacc, 9);
        let a = rng.random_range(2..7u32);
        let n = rng.random_range(1..40);
        let problems: Vec<Problem> = (0..n)
            .map(|i| problem(&format!("p{i}"), a, rng.random_range(0..a), rng.random_range(1..=5)))
            .collect();
        let params = random_params(a as usize, 900 + c, 3.0);
        let k_max = rng.random_range(0..5);
        let ys: Vec<Trajectory> = problems
            .iter()
            .map(|p| policy::sample(&params, p, k_max, &mut rng).unwrap())
            .collect();
        let corpus: Vec<(&Problem, &Trajectory)> = problems.iter().zip(&ys).collect();
        let v = metrics::verification_metrics(&corpus);
        let r = metrics::rectification_metrics(&corpus);
        let got = [v.verification_accuracy, v.error_recall, r.error_to_correct, r.correct_to_error];
        for (g, (num, den)) in got.iter().zip(recount(&corpus)) {
            events += den;
            if *g != Ratio::new(num, den) || g.value != (den > 0).then(|| num as f64 / den as f64) {
                mismatches += 1;
            }
        }
    }
    report(
        9,
        mismatches == 0,
        "all four behaviour ratios match an event-by-event recount",
        format!("100 corpora, {events} counted events, {mismatches} mismatches"),
    );
    assert_eq!(mismatches, 0);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_data_construction_contract() {
    let mut chosen = 0usize;
    let mut violations = 0usize;
    let mut strategies: HashMap<VerifyStrategy, usize> = HashMap::new();
    let k_max = 4;
    for seed in 0..5u64 {
        let env_cfg = EnvConfig { seed, ..Default::default() };
        let problems = env::gen_problems(&env_cfg).unwrap();
        let gen = SimulatedGenerator::from_env(&env_cfg);
        let corpus = data::build_corpus(&problems, &gen, &DataConfig::default(), k_max, seed).unwrap();
        let index: HashMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
        for r in corpus.records.iter().filter(|r| r.label == Label::Chosen) {
            chosen += 1;
            let p = index[r.problem_id.as_str()];
            let right = r.trajectory.final_answer().is_some_and(|a| p.is_correct(a));
            let k = r.trajectory.k();
            if !right || k != target_cycles(r.level).min(k_max) || k != r.k {
                violations += 1;
            }
            for s in r.trajectory.steps.iter().filter_map(Step::strategy) {
                *strategies.entry(s).or_default() += 1;
            }
        }
    }
    let total: usize = strategies.values().sum();
    let freqs: Vec<f64> = VerifyStrategy::ALL
        .iter()
        .map(|s| *strategies.get(s).unwrap_or(&0) as f64 / total as f64)
        .collect();
    let balanced = total >= 500 && freqs.iter().all(|f| (0.45..=0.55).contains(f));
    let ok = chosen > 0 && violations == 0 && balanced;
    report(
        10,
        ok,
        "chosen records end correct with exactly target_cycles(level) rectifications; strategies balanced",
        format!("{chosen} chosen records, {violations} violations; {total} verify steps, strategy frequencies {freqs:.3?}"),
    );
    assert!(ok);
}
