use super::*;
use crate::rng::stream_rng;
use std::collections::{HashMap, HashSet};

fn problem(a: u32, gt: u32, level: u8) -> Problem {
    Problem {
        id: "p".into(),
        statement: String::new(),
        answer_space: (0..a).collect(),
        gt_answer: gt,
        level,
        attachment_ref: None,
    }
}

fn random_params(a: usize, seed: u64, scale: f64) -> PolicyParams {
    let mut rng = stream_rng(seed, 99, 0);
    let mut p = PolicyParams::zeros(a);
    for w in p.weights_mut() {
        *w = rng.random_range(-scale..scale);
    }
    p
}

/// Central differences of `f` at `x`.
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

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn traj(steps: Vec<Step>) -> Trajectory {
    Trajectory::new("p", steps)
}

#[test]
fn uniform_policy_logprob() {
    let p = problem(5, 2, 1);
    let params = PolicyParams::zeros(5);
    let y = traj(vec![Step::solve("", 4), Step::verify("", Verdict::Correct, None)]);
    let lp = logprob(&params, &p, &y, 4).unwrap();
    assert!((lp + 10f64.ln()).abs() < 1e-12, "{lp}");
}

#[test]
fn probabilities_sum_to_one() {
    let p = problem(3, 1, 4);
    let all = enumerate(&p, 2).unwrap();
    for seed in 0..11 {
        let params = if seed == 0 {
            PolicyParams::zeros(3)
        } else {
            random_params(3, seed, 2.0)
        };
        let total: f64 = all
            .iter()
            .map(|y| logprob(&params, &p, y, 2).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "seed {seed}: {total}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..10 {
        let level = (seed % 5 + 1) as u8;
        let p = problem(4, (seed % 4) as u32, level);
        let params = random_params(4, 100 + seed, 1.5);
        let mut rng = stream_rng(seed, 7, 0);
        let y = sample(&params, &p, 3, &mut rng).unwrap();
        let (_, analytic) = logprob_and_grad(&params, &p, &y, 3).unwrap();
        let numeric = numeric_grad(params.weights(), 1e-4, |w| {
            let q = PolicyParams::from_weights(params.layout(), w.to_vec()).unwrap();
            logprob(&q, &p, &y, 3).unwrap()
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn enumeration_count_matches_recurrence() {
    // independent closed form: j < k_max rectifies ending on CORRECT give
    // A^(j+1) traces; at the cap both verdicts end, 2·A^(k_max+1)
    let closed = |a: u64, k: u32| -> u64 { (0..k).map(|j| a.pow(j + 1)).sum::<u64>() + 2 * a.pow(k + 1) };
    for a in 1..=4u32 {
        for k in 0..=3usize {
            let p = problem(a, 0, 1);
            let all = enumerate(&p, k).unwrap();
            assert_eq!(all.len() as u64, closed(a as u64, k as u32), "A={a} k_max={k}");
            assert_eq!(trajectory_count(a as u64, k), all.len() as u64);
        }
    }
}

#[test]
fn enumeration_single_answer_by_hand() {
    // [S(0), V(C)] and [S(0), V(I)] (the cap ends the trace)
    let all = enumerate(&problem(1, 0, 1), 0).unwrap();
    let skel: Vec<_> = all.iter().map(Trajectory::skeleton).collect();
    assert_eq!(
        skel,
        vec![
            vec![(StepKind::Solve, Some(0), None), (StepKind::Verify, None, Some(Verdict::Correct))],
            vec![(StepKind::Solve, Some(0), None), (StepKind::Verify, None, Some(Verdict::Incorrect))],
        ]
    );
}

#[test]
fn enumeration_has_no_duplicates_and_all_validate() {
    let p = problem(3, 2, 2);
    let all = enumerate(&p, 2).unwrap();
    let set: HashSet<_> = all.iter().map(Trajectory::skeleton).collect();
    assert_eq!(set.len(), all.len());
    let a = Automaton::canonical(2);
    assert!(all.iter().all(|y| a.validate(y).is_ok()));
}

#[test]
fn enumeration_guard() {
    let p = problem(10, 0, 1);
    assert!(matches!(
        enumerate(&p, 5),
        Err(PolicyError::EnumerationTooLarge { .. })
    ));
}

#[test]
fn sampling_matches_exact_distribution() {
    let p = problem(3, 0, 3);
    let params = PolicyParams::zeros(3);
    let exact: HashMap<_, f64> = enumerate(&p, 1)
        .unwrap()
        .iter()
        .map(|y| (y.skeleton(), logprob(&params, &p, y, 1).unwrap().exp()))
        .collect();
    let n = 100_000;
    let mut counts: HashMap<_, usize> = HashMap::new();
    let mut rng = stream_rng(11, 0, 0);
    for _ in 0..n {
        let y = sample(&params, &p, 1, &mut rng).unwrap();
        *counts.entry(y.skeleton()).or_default() += 1;
    }
    assert!(counts.keys().all(|k| exact.contains_key(k)));
    let mut tv = 0.0;
    for (k, &pr) in &exact {
        let f = *counts.get(k).unwrap_or(&0) as f64 / n as f64;
        assert!((f - pr).abs() <= 0.02, "{k:?}: {f} vs {pr}");
        tv += (f - pr).abs() / 2.0;
    }
    assert!(tv <= 0.02, "tv {tv}");
}

#[test]
fn strong_gt_weight_dominates_first_answer() {
    let p = problem(5, 3, 2);
    let mut params = PolicyParams::zeros(5);
    let i = params.layout().token_index(3);
    params.weights_mut()[i] = 10.0;
    // e^10 / (e^10 + 4)
    let want = 10f64.exp() / (10f64.exp() + 4.0);
    assert!(want > 0.99);
    let mut rng = stream_rng(12, 0, 0);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| sample(&params, &p, 4, &mut rng).unwrap().steps[0].answer() == Some(3))
        .count();
    assert!(hits as f64 / n as f64 > 0.99);
}

#[test]
fn sampling_is_deterministic_and_valid() {
    let p = problem(5, 1, 5);
    let params = random_params(5, 3, 1.0);
    let a = sample(&params, &p, 4, &mut stream_rng(5, 0, 0)).unwrap();
    let b = sample(&params, &p, 4, &mut stream_rng(5, 0, 0)).unwrap();
    assert_eq!(a, b);
    let mut rng = stream_rng(6, 0, 0);
    let aut = Automaton::canonical(4);
    for _ in 0..2000 {
        let y = sample(&params, &p, 4, &mut rng).unwrap();
        aut.validate(&y).unwrap();
        assert!(y.k() <= 4);
        assert!(y.steps.iter().filter_map(Step::strategy).count() == y.verdicts().len());
    }
}

#[test]
fn outcome_matches_enumeration() {
    for seed in 0..6 {
        let p = problem(3, (seed % 3) as u32, (seed % 5 + 1) as u8);
        let params = random_params(3, 40 + seed, 2.0);
        for k_max in 0..=3 {
            let exact = outcome(&params, &p, k_max).unwrap();
            let (mut acc, mut rect) = (0.0, 0.0);
            for y in enumerate(&p, k_max).unwrap() {
                let pr = logprob(&params, &p, &y, k_max).unwrap().exp();
                if y.final_answer() == Some(p.gt_answer) {
                    acc += pr;
                }
                rect += pr * y.k() as f64;
            }
            assert!((exact.p_final_correct - acc).abs() < 1e-12);
            assert!((exact.expected_rectifies - rect).abs() < 1e-12);
        }
    }
}

#[test]
fn answer_space_mismatch_is_an_error() {
    let params = PolicyParams::zeros(4);
    let p = problem(5, 0, 1);
    let y = traj(vec![Step::solve("", 0), Step::verify("", Verdict::Correct, None)]);
    assert!(matches!(
        logprob(&params, &p, &y, 4),
        Err(PolicyError::AnswerSpaceMismatch { .. })
    ));
}

#[test]
fn invalid_trajectory_is_an_error() {
    let params = PolicyParams::zeros(5);
    let p = problem(5, 0, 1);
    let y = traj(vec![Step::solve("", 0)]);
    assert!(matches!(logprob(&params, &p, &y, 4), Err(PolicyError::InvalidTrajectory(_))));
}

mod sft_objective {
    use super::*;

    fn record(p: &Problem, answers: &[u32]) -> Trajectory {
        let mut steps = vec![Step::solve("", answers[0])];
        for (i, &a) in answers.iter().enumerate() {
            let last = i + 1 == answers.len();
            let correct = a == p.gt_answer;
            steps.push(Step::verify("", Verdict::from_correctness(correct || last && correct), None));
            if !last {
                steps.push(Step::rectify("", answers[i + 1]));
            }
        }
        traj(steps)
    }

    #[test]
    fn uniform_single_record() {
        let p = problem(5, 2, 1);
        let y = traj(vec![Step::solve("", 2), Step::verify("", Verdict::Correct, None)]);
        let data = [SftExample {
            problem: &p,
            trajectory: &y,
        }];
        let obj = sft_loss(&PolicyParams::zeros(5), &data, 1.0, 4).unwrap();
        assert!((obj.loss - 10f64.ln()).abs() < 1e-12);
        assert_eq!(obj.decisions, 2);
    }

    #[test]
    fn certain_policy_has_zero_loss() {
        let p = problem(5, 2, 1);
        let y = traj(vec![Step::solve("", 2), Step::verify("", Verdict::Correct, None)]);
        let mut params = PolicyParams::zeros(5);
        let l = params.layout();
        params.weights_mut()[l.correct_index()] = 1000.0;
        params.weights_mut()[l.verdict_prev_index(true, VERDICT_CORRECT)] = 1000.0;
        let data = [SftExample {
            problem: &p,
            trajectory: &y,
        }];
        let obj = sft_loss(&params, &data, 1.0, 4).unwrap();
        assert_eq!(obj.loss, 0.0);
    }

    #[test]
    fn zero_mask_weight_counts_only_solve_decisions() {
        let ps: Vec<Problem> = (0..4).map(|i| problem(5, i, (i + 1) as u8)).collect();
        let ys: Vec<Trajectory> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let wrong = (p.gt_answer + 1) % 5;
                match i % 2 {
                    0 => record(p, &[p.gt_answer]),
                    _ => record(p, &[wrong, p.gt_answer]),
                }
            })
            .collect();
        let data: Vec<SftExample> = ps
            .iter()
            .zip(&ys)
            .map(|(p, y)| SftExample {
                problem: p,
                trajectory: y,
            })
            .collect();
        let params = random_params(5, 8, 1.0);
        let obj = sft_loss(&params, &data, 0.0, 4).unwrap();
        // recount by hand: only the first answer of each record
        let mut want = 0.0;
        for (p, y) in ps.iter().zip(&ys) {
            let d = Decision::Answer {
                state: AnswerState::Solve,
                level: p.level_index(),
                gt_index: p.gt_index(),
            };
            let first = p.answer_index(y.steps[0].answer().unwrap()).unwrap();
            want -= params.log_probs(&d)[first];
        }
        assert!((obj.loss - want).abs() < 1e-12);
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let ps: Vec<Problem> = (0..5).map(|i| problem(4, i % 4, (i + 1) as u8)).collect();
        for seed in 0..10u64 {
            let gen = random_params(4, 500 + seed, 1.0);
            let mut rng = stream_rng(seed, 3, 0);
            let ys: Vec<Trajectory> = ps.iter().map(|p| sample(&gen, p, 3, &mut rng).unwrap()).collect();
            let data: Vec<SftExample> = ps
                .iter()
                .zip(&ys)
                .map(|(p, y)| SftExample {
                    problem: p,
                    trajectory: y,
                })
                .collect();
            let params = random_params(4, 600 + seed, 1.5);
            let w = 0.5 + seed as f64 * 0.25;
            let obj = sft_loss(&params, &data, w, 3).unwrap();
            let numeric = numeric_grad(params.weights(), 1e-4, |x| {
                let q = PolicyParams::from_weights(params.layout(), x.to_vec()).unwrap();
                sft_loss(&q, &data, w, 3).unwrap().loss
            });
            let err = max_rel_err(&obj.grad, &numeric);
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn empty_dataset_and_bad_weight() {
        let params = PolicyParams::zeros(3);
        assert_eq!(sft_loss(&params, &[], 1.0, 4), Err(PolicyError::EmptyDataset));
        let p = problem(3, 0, 1);
        let y = record(&p, &[0]);
        let data = [SftExample {
            problem: &p,
            trajectory: &y,
        }];
        assert!(matches!(sft_loss(&params, &data, -1.0, 4), Err(PolicyError::BadMaskWeight(_))));
    }

    #[test]
    fn gd_step_contract() {
        let params = random_params(3, 1, 1.0);
        let zero = vec![0.0; params.dim()];
        assert_eq!(gd_step(&params, &zero, 0.1).unwrap(), params);
        let mut bad = zero.clone();
        bad[0] = f64::NAN;
        assert_eq!(gd_step(&params, &bad, 0.1), Err(PolicyError::NonFinite));
        assert!(matches!(gd_step(&params, &zero, 0.0), Err(PolicyError::BadLearningRate(_))));
    }

    #[test]
    fn one_step_reduces_single_decision_loss() {
        let p = problem(3, 1, 1);
        let y = record(&p, &[1]);
        let data = [SftExample {
            problem: &p,
            trajectory: &y,
        }];
        let params = PolicyParams::zeros(3);
        let before = sft_loss(&params, &data, 0.0, 4).unwrap();
        let after = gd_step(&params, &before.grad, 0.1).unwrap();
        assert!(sft_loss(&after, &data, 0.0, 4).unwrap().loss < before.loss);
    }
}
