//! Possible worlds, factorized Bernoulli distributions and weighted model
//! counting by explicit enumeration.
//!
//! World indexing is big-endian on the canonical variable order: variable
//! `0` is the most significant bit of the index. For `[red, green]` the
//! worlds are therefore ordered `(!r!g, !rg, r!g, rg)`.

use super::formula::{Bound, Formula};
use super::LogicError;

/// Largest variable count accepted by the enumerating routines.
pub const MAX_ENUM_VARS: usize = 20;

fn check_guard(n: usize) -> Result<(), LogicError> {
    if n > MAX_ENUM_VARS {
        return Err(LogicError::TooManyVariables {
            n,
            max: MAX_ENUM_VARS,
        });
    }
    Ok(())
}

/// Truth value of variable `var` in world `index` over `n` variables.
#[inline]
pub fn bit(index: usize, var: usize, n: usize) -> bool {
    (index >> (n - 1 - var)) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct World {
    assignment: Vec<bool>,
}

impl World {
    pub fn new(assignment: Vec<bool>) -> Self {
        World { assignment }
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        World {
            assignment: (0..n).map(|i| bit(index, i, n)).collect(),
        }
    }

    pub fn index(&self) -> usize {
        self.assignment
            .iter()
            .fold(0, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn get(&self, var: usize) -> bool {
        self.assignment[var]
    }

    pub fn assignment(&self) -> &[bool] {
        &self.assignment
    }
}

/// Independent per-variable probabilities `p(b_i = true)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliVector {
    probs: Vec<f64>,
}

impl BernoulliVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, LogicError> {
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(LogicError::InvalidProbability { index, value });
            }
        }
        Ok(BernoulliVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Product weight of a single world.
    pub fn world_weight(&self, index: usize) -> f64 {
        let n = self.probs.len();
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if bit(index, i, n) { p } else { 1.0 - p })
            .product()
    }
}

/// `q[m]` = probability of world `m` under the factorized distribution.
pub fn world_distribution(p: &BernoulliVector) -> Result<Vec<f64>, LogicError> {
    check_guard(p.len())?;
    Ok((0..1usize << p.len()).map(|m| p.world_weight(m)).collect())
}

/// Probability that `f` holds: the sum of the weights of its models.
pub fn wmc(f: &Formula, p: &BernoulliVector) -> Result<f64, LogicError> {
    wmc_over(f, f.vars(), p)
}

/// [`wmc`] with worlds enumerated over an explicit variable order, which may
/// contain variables that `f` does not mention.
pub fn wmc_over(f: &Formula, order: &[String], p: &BernoulliVector) -> Result<f64, LogicError> {
    let n = order.len();
    if p.len() != n {
        return Err(LogicError::ArityMismatch {
            expected: n,
            got: p.len(),
        });
    }
    check_guard(n)?;
    let bound = f.bind(order)?;
    let mut total = 0.0;
    for m in 0..1usize << n {
        if bound.eval(|i| bit(m, i, n)) {
            total += p.world_weight(m);
        }
    }
    Ok(total)
}

fn satisfaction_bits(bound: &Bound, n: usize) -> Vec<bool> {
    (0..1usize << n).map(|m| bound.eval(|i| bit(m, i, n))).collect()
}

/// Per-class satisfaction bit vectors over the worlds of a shared variable
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldTable {
    vars: Vec<String>,
    class_betas: Vec<Vec<bool>>,
    exclusive: bool,
    exhaustive: bool,
}

impl WorldTable {
    pub fn build(classes: &[Formula], shared_vars: &[String]) -> Result<Self, LogicError> {
        let n = shared_vars.len();
        check_guard(n)?;
        let class_betas = classes
            .iter()
            .map(|f| f.bind(shared_vars).map(|b| satisfaction_bits(&b, n)))
            .collect::<Result<Vec<_>, _>>()?;

        let m = 1usize << n;
        let coverage: Vec<usize> = (0..m)
            .map(|w| class_betas.iter().filter(|beta| beta[w]).count())
            .collect();
        Ok(WorldTable {
            vars: shared_vars.to_vec(),
            exclusive: coverage.iter().all(|&c| c <= 1),
            exhaustive: coverage.iter().all(|&c| c >= 1),
            class_betas,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_worlds(&self) -> usize {
        1 << self.vars.len()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn n_classes(&self) -> usize {
        self.class_betas.len()
    }

    pub fn beta(&self, class: usize) -> &[bool] {
        &self.class_betas[class]
    }

    pub fn betas(&self) -> &[Vec<bool>] {
        &self.class_betas
    }

    /// β as 0/1 reals.
    pub fn beta_f64(&self, class: usize) -> Vec<f64> {
        self.class_betas[class]
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn is_exclusive(&self) -> bool {
        self.exclusive
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn is_partition(&self) -> bool {
        self.exclusive && self.exhaustive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse, Expr};
    use proptest::prelude::*;

    const TRAFFIC: &str = "(!red & green) | (red & !green) | (!red & !green)";

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn index_is_big_endian_on_canonical_order() {
        assert_eq!(World::new(vec![false, true]).index(), 1);
        assert_eq!(World::new(vec![true, false]).index(), 2);
        for m in 0..16 {
            assert_eq!(World::from_index(m, 4).index(), m);
        }
    }

    #[test]
    fn traffic_light_world_table() {
        let phi1 = parse(TRAFFIC).unwrap();
        let phi0 = parse("red & green").unwrap();
        let vars = phi1.vars().to_vec();
        let table = WorldTable::build(&[phi1, phi0], &vars).unwrap();
        assert_eq!(table.beta(0), [true, true, true, false]);
        assert_eq!(table.beta(1), [false, false, false, true]);
        assert!(table.is_partition());
    }

    #[test]
    fn tautology_table_is_a_partition() {
        let vars = vec!["a".to_string(), "b".to_string()];
        let table = WorldTable::build(&[Formula::new(Expr::True)], &vars).unwrap();
        assert_eq!(table.beta(0), [true; 4]);
        assert!(table.is_partition());
    }

    #[test]
    fn overlapping_classes_are_not_a_partition() {
        let a = parse("a").unwrap();
        let vars = a.vars().to_vec();
        let table = WorldTable::build(&[a.clone(), a], &vars).unwrap();
        assert!(!table.is_exclusive());
        assert!(!table.is_partition());
    }

    #[test]
    fn table_rejects_foreign_variable_and_guard() {
        let f = parse("a & q").unwrap();
        let vars = vec!["a".to_string()];
        assert!(matches!(
            WorldTable::build(&[f], &vars),
            Err(LogicError::UnknownVariable(_))
        ));
        let many: Vec<String> = (0..21).map(|i| format!("x{i}")).collect();
        assert!(matches!(
            WorldTable::build(&[], &many),
            Err(LogicError::TooManyVariables { n: 21, max: 20 })
        ));
    }

    #[test]
    fn wmc_traffic_light() {
        let f = parse(TRAFFIC).unwrap();
        let p = BernoulliVector::new(vec![0.3, 0.6]).unwrap();
        // worlds: 0.7*0.4, 0.7*0.6, 0.3*0.4, 0.3*0.6 = 0.28, 0.42, 0.12, 0.18
        assert!(close(wmc(&f, &p).unwrap(), 0.82, 1e-12));
        let p = BernoulliVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(wmc(&f, &p).unwrap(), 0.0);
    }

    #[test]
    fn wmc_of_tautology_is_one() {
        let f = parse("true").unwrap();
        assert_eq!(wmc(&f, &BernoulliVector::new(vec![]).unwrap()).unwrap(), 1.0);
        let vars = vec!["a".to_string(), "b".to_string()];
        let p = BernoulliVector::new(vec![0.2, 0.9]).unwrap();
        assert!(close(wmc_over(&f, &vars, &p).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn wmc_rejects_length_mismatch() {
        let f = parse("a & b").unwrap();
        let p = BernoulliVector::new(vec![0.5]).unwrap();
        assert!(matches!(
            wmc(&f, &p),
            Err(LogicError::ArityMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        assert!(BernoulliVector::new(vec![0.5, 1.5]).is_err());
        assert!(BernoulliVector::new(vec![-0.1]).is_err());
        assert!(BernoulliVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn world_distribution_examples() {
        let q = world_distribution(&BernoulliVector::new(vec![0.3, 0.6]).unwrap()).unwrap();
        for (got, want) in q.iter().zip([0.28, 0.42, 0.12, 0.18]) {
            assert!(close(*got, want, 1e-12));
        }
        let q = world_distribution(&BernoulliVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(q, vec![1.0, 0.0, 0.0, 0.0]);
        let q = world_distribution(&BernoulliVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(q, vec![0.25; 4]);
    }

    #[test]
    fn world_distribution_guard() {
        let p = BernoulliVector::new(vec![0.5; 21]).unwrap();
        assert!(matches!(
            world_distribution(&p),
            Err(LogicError::TooManyVariables { .. })
        ));
    }

    fn arb_expr(n_vars: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            8 => (0..n_vars).prop_map(|i| Expr::var(format!("v{i}"))),
            1 => Just(Expr::True),
            1 => Just(Expr::False),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Expr::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.or(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.implies(b)),
                (inner.clone(), inner).prop_map(|(a, b)| a.iff(b)),
            ]
        })
    }

    // Independent recursive evaluator working on names, not lowered indices.
    fn oracle(e: &Expr, value: &dyn Fn(&str) -> bool) -> bool {
        match e {
            Expr::Var(n) => value(n),
            Expr::Not(a) => !oracle(a, value),
            Expr::And(a, b) => oracle(a, value) & oracle(b, value),
            Expr::Or(a, b) => oracle(a, value) | oracle(b, value),
            Expr::Implies(a, b) => !oracle(a, value) | oracle(b, value),
            Expr::Iff(a, b) => oracle(a, value) == oracle(b, value),
            Expr::True => true,
            Expr::False => false,
        }
    }

    proptest! {
        #[test]
        fn evaluate_matches_truth_table_oracle(e in arb_expr(6)) {
            let f = Formula::new(e);
            let n = f.n_vars();
            for m in 0..1usize << n {
                let w = World::from_index(m, n);
                let lookup = |name: &str| {
                    let i = f.vars().iter().position(|v| v == name).unwrap();
                    w.get(i)
                };
                prop_assert_eq!(f.evaluate(&w).unwrap(), oracle(f.root(), &lookup));
            }
        }

        #[test]
        fn complement_sums_to_one(
            e in arb_expr(6),
            raw in proptest::collection::vec(0.0f64..=1.0, 6),
        ) {
            let f = Formula::new(e);
            let p = BernoulliVector::new(raw[..f.n_vars()].to_vec()).unwrap();
            let total = wmc(&f, &p).unwrap() + wmc(&f.negate(), &p).unwrap();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum = {}", total);
        }

        #[test]
        fn wmc_is_beta_dot_world_distribution(
            e in arb_expr(6),
            raw in proptest::collection::vec(0.0f64..=1.0, 6),
        ) {
            let f = Formula::new(e);
            let p = BernoulliVector::new(raw[..f.n_vars()].to_vec()).unwrap();
            let table = WorldTable::build(std::slice::from_ref(&f), f.vars()).unwrap();
            let q = world_distribution(&p).unwrap();
            let dot: f64 = table.beta_f64(0).iter().zip(&q).map(|(b, q)| b * q).sum();
            prop_assert_eq!(wmc(&f, &p).unwrap(), dot);
        }

        #[test]
        fn world_distribution_is_normalized(raw in proptest::collection::vec(0.0f64..=1.0, 0..10)) {
            let q = world_distribution(&BernoulliVector::new(raw).unwrap()).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn partition_class_probabilities_sum_to_one(
            labels in proptest::collection::vec(0usize..3, 8),
            raw in proptest::collection::vec(0.0f64..=1.0, 3),
        ) {
            // every world labelled with one of three classes, as minterm DNFs
            let vars: Vec<String> = (0..3).map(|i| format!("v{i}")).collect();
            let classes: Vec<Formula> = (0..3)
                .map(|k| {
                    Formula::new(Expr::any(labels.iter().enumerate().filter(|(_, &l)| l == k).map(
                        |(m, _)| {
                            Expr::all((0..3).map(|i| {
                                let v = Expr::var(vars[i].clone());
                                if bit(m, i, 3) { v } else { v.not() }
                            }))
                        },
                    )))
                })
                .collect();
            let table = WorldTable::build(&classes, &vars).unwrap();
            prop_assert!(table.is_partition());
            let p = BernoulliVector::new(raw).unwrap();
            let total: f64 = classes.iter().map(|f| wmc_over(f, &vars, &p).unwrap()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
