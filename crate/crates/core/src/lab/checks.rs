//! Randomized verification suites with plain-text reports.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::logic::{
    bit, wmc, wmc_over, world_distribution, BernoulliVector, Bound, Expr, Formula, WorldTable,
};
use crate::models::{disjunctive_supervision_loss, semantic_loss, ClassSpec};

/// Counterexamples beyond this many are counted but not stored.
const MAX_DUMPS: usize = 10;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub suite: String,
    pub trials: usize,
    /// Individual comparisons made across all trials.
    pub comparisons: usize,
    pub failures: usize,
    /// Largest observed error, in whatever unit the suite compares.
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    pub counterexamples: Vec<String>,
}

impl CheckReport {
    pub(crate) fn new(suite: &str, trials: usize, tolerance: f64) -> Self {
        CheckReport {
            suite: suite.to_string(),
            trials,
            comparisons: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            elapsed: Duration::ZERO,
            counterexamples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// Records one comparison; `err` above tolerance (or NaN) is a failure.
    fn compare(&mut self, err: f64, describe: impl FnOnce() -> String) {
        self.comparisons += 1;
        if err > self.max_error || err.is_nan() {
            self.max_error = err;
        }
        if !(err <= self.tolerance) {
            self.fail(describe);
        }
    }

    fn fail(&mut self, describe: impl FnOnce() -> String) {
        self.failures += 1;
        if self.counterexamples.len() < MAX_DUMPS {
            self.counterexamples.push(describe());
        }
    }

    pub(crate) fn merge(&mut self, other: CheckReport) {
        self.trials += other.trials;
        self.comparisons += other.comparisons;
        self.failures += other.failures;
        if other.max_error > self.max_error || other.max_error.is_nan() {
            self.max_error = other.max_error;
        }
        for c in other.counterexamples {
            if self.counterexamples.len() < MAX_DUMPS {
                self.counterexamples.push(format!("[{}] {c}", other.suite));
            }
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} ({} trials, {} comparisons, {} failures, max error {:.3e}, tolerance {:.0e}, {:.2}s)",
            self.suite,
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials,
            self.comparisons,
            self.failures,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        for c in &self.counterexamples {
            writeln!(f, "  counterexample: {c}")?;
        }
        if self.failures > self.counterexamples.len() {
            writeln!(f, "  ... {} more", self.failures - self.counterexamples.len())?;
        }
        Ok(())
    }
}

fn timed(mut report: CheckReport, start: Instant) -> CheckReport {
    report.elapsed = start.elapsed();
    report
}

fn var_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn minterm(world: usize, names: &[String]) -> Expr {
    let n = names.len();
    Expr::all((0..n).map(|v| {
        let lit = Expr::var(names[v].clone());
        if bit(world, v, n) {
            lit
        } else {
            lit.not()
        }
    }))
}

/// Probabilities in `(0, 1)`, with occasional exact 0 or 1.
fn random_probs(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..20) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.001..0.999),
        })
        .collect()
}

/// Semantic loss against disjunctive supervision on the world
/// distribution, for random partitions given as DNFs over worlds.
pub fn sl_ds_equivalence_check(trials: usize, max_vars: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("theorem1", trials, 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let n = rng.gen_range(1..=max_vars.max(1));
        let m = 1usize << n;
        let k = rng.gen_range(1..=m.min(6));
        let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
        let names = var_names(n);
        let formulas: Vec<Formula> = (0..k)
            .map(|c| {
                let terms = (0..m).filter(|&w| labels[w] == c).map(|w| minterm(w, &names));
                Formula::new(Expr::any(terms))
            })
            .collect();
        let spec = match ClassSpec::new(formulas, names.clone()) {
            Ok(s) => s,
            Err(e) => {
                report.fail(|| format!("trial {trial}: labeling rejected: {e}"));
                continue;
            }
        };
        for (c, beta) in spec.table().betas().iter().enumerate() {
            let expected: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            if beta != &expected {
                report.fail(|| format!("trial {trial}: beta of class {c} does not match the labeling"));
            }
        }
        let p = BernoulliVector::new(random_probs(n, &mut rng)).expect("valid probabilities");
        let q = world_distribution(&p).expect("within enumeration limit");
        for y in 0..k {
            let mass = wmc_over(&spec.formulas()[y], &names, &p).expect("bound formula");
            if mass <= 0.0 {
                continue;
            }
            let sl = semantic_loss(&spec, y, &p).expect("valid class");
            let ds = disjunctive_supervision_loss(&q, spec.table().beta(y)).expect("non-empty class");
            report.compare((sl - ds).abs(), || {
                format!("trial {trial}: n={n} k={k} y={y} p={:?}: SL={sl} DS={ds}", p.probs())
            });
        }
    }
    timed(report, start)
}

/// A single linear layer with softmax over 4 outputs, one plain gradient
/// step on the disjunctive loss, and the sign of every ratio change.
pub struct WtaTrial {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
    pub accept: [bool; 4],
}

pub struct WtaStep {
    pub before: Vec<f64>,
    pub logits_before: Vec<f64>,
    pub logits_after: Vec<f64>,
}

pub const WTA_LR: f64 = 0.01;
pub const WTA_TIE: f64 = 1e-9;

impl WtaTrial {
    pub fn random(rng: &mut impl Rng) -> Self {
        let d = rng.gen_range(1..=8);
        let weight = Tensor::uniform(&[d, 4], 1.0, rng);
        let bias = Tensor::uniform(&[4], 1.0, rng);
        let input = Tensor::uniform(&[1, d], 1.0, rng);
        let mut order = [0, 1, 2, 3];
        order.shuffle(rng);
        let size = rng.gen_range(2..=3);
        let mut accept = [false; 4];
        for &m in &order[..size] {
            accept[m] = true;
        }
        WtaTrial {
            weight,
            bias,
            input,
            accept,
        }
    }

    fn logits(&self, tape: &mut Tape) -> (NodeId, NodeId, NodeId) {
        let w = tape.param(self.weight.clone());
        let b = tape.param(self.bias.clone());
        let x = tape.constant(self.input.clone());
        let xw = tape.matmul(x, w).expect("shapes agree");
        let z = tape.add_bias(xw, b).expect("shapes agree");
        (w, b, z)
    }

    /// Takes one gradient-descent step and returns probabilities and logits
    /// before and after.
    pub fn step(&self, lr: f64) -> WtaStep {
        let mut tape = Tape::new();
        let (w, b, z) = self.logits(&mut tape);
        let q = tape.softmax(z);
        let mask = Tensor::new(vec![4, 1], self.accept.map(|a| f64::from(u8::from(a))).to_vec())
            .expect("mask shape");
        let mask = tape.constant(mask);
        let mass = tape.matmul(q, mask).expect("shapes agree");
        let log = tape.log(mass).expect("softmax mass is positive");
        let loss = tape.scalar_mul(log, -1.0);
        let grads = tape.backward(loss).expect("scalar loss");
        let before = tape.value(q).data().to_vec();
        let logits_before = tape.value(z).data().to_vec();

        let update = |p: &Tensor, g: &Tensor| {
            Tensor::new(p.shape().to_vec(), p.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect())
                .expect("same shape")
        };
        let next = WtaTrial {
            weight: update(&self.weight, grads.get(w).expect("weight grad")),
            bias: update(&self.bias, grads.get(b).expect("bias grad")),
            input: self.input.clone(),
            accept: self.accept,
        };
        let mut tape = Tape::new();
        let (_, _, z) = next.logits(&mut tape);
        WtaStep {
            before,
            logits_before,
            logits_after: tape.value(z).data().to_vec(),
        }
    }
}

impl WtaStep {
    /// Change of `ln(p(m) / p(n))`, which for a softmax equals the change
    /// of the logit difference.
    pub fn log_ratio_change(&self, m: usize, n: usize) -> f64 {
        (self.logits_after[m] - self.logits_after[n]) - (self.logits_before[m] - self.logits_before[n])
    }
}

pub fn wta_step_check(trials: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("theorem2", trials, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0usize;
    for trial in 0..trials {
        let t = WtaTrial::random(&mut rng);
        let s = t.step(WTA_LR);
        for m in 0..4 {
            for n in 0..4 {
                if m == n || !t.accept[m] || !t.accept[n] {
                    continue;
                }
                let dp = s.before[m] - s.before[n];
                if dp.abs() <= WTA_TIE {
                    skipped += 1;
                    continue;
                }
                let change = s.log_ratio_change(m, n);
                let agrees = change.signum() == dp.signum() && change != 0.0;
                report.compare(if agrees { 0.0 } else { 1.0 }, || {
                    format!(
                        "trial {trial}: outputs ({m},{n}) p_t=({:.6},{:.6}) log-ratio change {change:e}",
                        s.before[m], s.before[n]
                    )
                });
            }
        }
    }
    if skipped > 0 {
        report.counterexamples.push(format!("note: {skipped} tied pairs skipped"));
    }
    timed(report, start)
}

/// Random formula over `names` with roughly `size` connectives.
pub fn random_expr(names: &[String], size: usize, rng: &mut impl Rng) -> Expr {
    if size == 0 {
        return match rng.gen_range(0..20) {
            0 => Expr::True,
            1 => Expr::False,
            _ => Expr::var(names[rng.gen_range(0..names.len())].clone()),
        };
    }
    let left = rng.gen_range(0..size);
    let right = size - 1 - left;
    match rng.gen_range(0..5) {
        0 => random_expr(names, size - 1, rng).not(),
        1 => random_expr(names, left, rng).and(random_expr(names, right, rng)),
        2 => random_expr(names, left, rng).or(random_expr(names, right, rng)),
        3 => random_expr(names, left, rng).implies(random_expr(names, right, rng)),
        _ => random_expr(names, left, rng).iff(random_expr(names, right, rng)),
    }
}

/// Probability by conditioning on one variable at a time, summing the two
/// branches, and evaluating only at full assignments.
fn shannon_wmc(f: &Bound, probs: &[f64], assignment: &mut Vec<bool>) -> f64 {
    let v = assignment.len();
    if v == probs.len() {
        return if f.eval(|i| assignment[i]) { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for (value, weight) in [(true, probs[v]), (false, 1.0 - probs[v])] {
        if weight == 0.0 {
            continue;
        }
        assignment.push(value);
        total += weight * shannon_wmc(f, probs, assignment);
        assignment.pop();
    }
    total
}

/// WMC against the world-distribution dot product (exact), its complement
/// (1e-12) and an independent recursive expansion (1e-12).
pub fn wmc_oracle_check(trials: usize, max_vars: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new("oracle", trials, 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let n = rng.gen_range(1..=max_vars.max(1));
        let names = var_names(n);
        let size = rng.gen_range(0..=3 * n);
        let f = Formula::new(random_expr(&names, size, &mut rng));
        let p = BernoulliVector::new(random_probs(n, &mut rng)).expect("valid probabilities");
        let describe = |what: &str, a: f64, b: f64| {
            format!("trial {trial}: {what}: {a} vs {b} for `{f}` over {names:?} p={:?}", p.probs())
        };
        let value = wmc_over(&f, &names, &p).expect("bound formula");
        let q = world_distribution(&p).expect("within enumeration limit");
        let table = WorldTable::build(std::slice::from_ref(&f), &names).expect("names cover f");
        let dot: f64 = table.beta(0).iter().zip(&q).filter(|(b, _)| **b).map(|(_, q)| q).sum();
        let exact = if value == dot { 0.0 } else { f64::INFINITY };
        report.compare(exact, || describe("wmc vs beta.q", value, dot));
        let negated = wmc_over(&f.negate(), &names, &p).expect("bound formula");
        report.compare((value + negated - 1.0).abs(), || describe("complement", value, negated));
        let bound = f.bind(&names).expect("names cover f");
        let oracle = shannon_wmc(&bound, p.probs(), &mut Vec::with_capacity(n));
        report.compare((value - oracle).abs(), || describe("recursive oracle", value, oracle));
        if f.vars() == names.as_slice() {
            let own = wmc(&f, &p).expect("same order");
            report.compare(if own == value { 0.0 } else { f64::INFINITY }, || {
                describe("wmc vs wmc_over", own, value)
            });
        }
    }
    timed(report, start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_suite_passes() {
        let r = sl_ds_equivalence_check(200, 8, 1);
        assert!(r.passed(), "{r}");
        assert!(r.comparisons >= 200);
        assert!(r.max_error < 1e-9);
    }

    #[test]
    fn traffic_light_example() {
        let spec = ClassSpec::traffic_light();
        let p = BernoulliVector::new(vec![0.3, 0.6]).unwrap();
        let q = world_distribution(&p).unwrap();
        let sl = semantic_loss(&spec, 1, &p).unwrap();
        let ds = disjunctive_supervision_loss(&q, spec.table().beta(1)).unwrap();
        assert!((sl - 0.19845).abs() < 1e-5 && (ds - 0.19845).abs() < 1e-5);
    }

    #[test]
    fn tautology_class_has_zero_loss() {
        let names = var_names(3);
        let spec = ClassSpec::new(vec![Formula::new(Expr::True)], names).unwrap();
        let p = BernoulliVector::new(vec![0.2, 0.5, 0.9]).unwrap();
        let q = world_distribution(&p).unwrap();
        assert!(semantic_loss(&spec, 0, &p).unwrap().abs() < 1e-15);
        assert!(disjunctive_supervision_loss(&q, spec.table().beta(0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn wta_suite_passes() {
        let r = wta_step_check(300, 2);
        assert!(r.passed(), "{r}");
        assert!(r.comparisons > 300);
    }

    #[test]
    fn wta_symmetric_outputs_keep_their_ratio() {
        let trial = WtaTrial {
            weight: Tensor::new(vec![2, 4], vec![0.3, 0.3, -0.2, 0.5, -0.7, -0.7, 0.1, 0.4]).unwrap(),
            bias: Tensor::new(vec![4], vec![0.1, 0.1, 0.0, -0.3]).unwrap(),
            input: Tensor::new(vec![1, 2], vec![0.8, -0.6]).unwrap(),
            accept: [true, true, true, false],
        };
        let s = trial.step(WTA_LR);
        assert_eq!(s.before[0], s.before[1]);
        assert_eq!(s.log_ratio_change(0, 1), 0.0);
    }

    #[test]
    fn wta_larger_output_grows_relative_to_smaller() {
        let trial = WtaTrial {
            weight: Tensor::new(vec![1, 4], vec![1.0, 0.2, -0.5, 0.0]).unwrap(),
            bias: Tensor::zeros(&[4]),
            input: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            accept: [true, true, false, false],
        };
        let s = trial.step(WTA_LR);
        assert!(s.before[0] > s.before[1]);
        let ratio_before = s.before[0] / s.before[1];
        let e = |z: &[f64], i: usize| z[i].exp() / z.iter().map(|v| v.exp()).sum::<f64>();
        let ratio_after = e(&s.logits_after, 0) / e(&s.logits_after, 1);
        assert!(ratio_after > ratio_before);
        assert!(s.log_ratio_change(0, 1) > 0.0);
    }

    #[test]
    fn oracle_suite_passes() {
        let r = wmc_oracle_check(150, 10, 3);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn shannon_oracle_matches_hand_value() {
        let f = crate::logic::parse("(!r&g)|(r&!g)|(!r&!g)").unwrap();
        let v = shannon_wmc(&f.bind(f.vars()).unwrap(), &[0.3, 0.6], &mut Vec::new());
        assert!((v - 0.82).abs() < 1e-15);
    }

    #[test]
    fn report_text_lists_counterexamples() {
        let mut r = CheckReport::new("demo", 1, 1e-9);
        r.compare(1.0, || "bad".to_string());
        r.compare(0.0, || unreachable!());
        let text = r.to_string();
        assert!(text.starts_with("demo: FAIL (1 trials, 2 comparisons, 1 failures"), "{text}");
        assert!(text.contains("counterexample: bad"));
    }
}
