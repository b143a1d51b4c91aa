use super::ModelError;
use crate::logic::{parse, Formula, WorldTable};

/// "At most one light is on", over `[red, green]`.
pub const TRAFFIC_CONSTRAINT: &str = "(!red & green) | (red & !green) | (!red & !green)";

/// Mutually exclusive, exhaustive class formulas over shared variables.
/// Class labels index `formulas()`.
#[derive(Debug, Clone)]
pub struct ClassSpec {
    formulas: Vec<Formula>,
    table: WorldTable,
}

impl ClassSpec {
    pub fn new(formulas: Vec<Formula>, vars: Vec<String>) -> Result<Self, ModelError> {
        let table = WorldTable::build(&formulas, &vars)?;
        if !table.is_partition() {
            return Err(ModelError::NotAPartition {
                exclusive: table.is_exclusive(),
                exhaustive: table.is_exhaustive(),
            });
        }
        Ok(ClassSpec { formulas, table })
    }

    /// Class 0: the constraint is violated (both lights on).
    /// Class 1: the constraint holds.
    pub fn traffic_light() -> Self {
        let satisfied = parse(TRAFFIC_CONSTRAINT).expect("constraint parses");
        let violated = satisfied.negate();
        let vars = satisfied.vars().to_vec();
        ClassSpec::new(vec![violated, satisfied], vars).expect("complementary classes")
    }

    pub fn formulas(&self) -> &[Formula] {
        &self.formulas
    }

    pub fn table(&self) -> &WorldTable {
        &self.table
    }

    pub fn n_classes(&self) -> usize {
        self.formulas.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traffic_light_betas() {
        let spec = ClassSpec::traffic_light();
        assert_eq!(spec.table().vars(), ["red", "green"]);
        assert_eq!(spec.table().beta(1), [true, true, true, false]);
        assert_eq!(spec.table().beta(0), [false, false, false, true]);
    }

    #[test]
    fn overlapping_classes_rejected() {
        let a = parse("a").unwrap();
        let vars = a.vars().to_vec();
        assert!(matches!(
            ClassSpec::new(vec![a.clone(), a], vars),
            Err(ModelError::NotAPartition { exclusive: false, .. })
        ));
    }

    #[test]
    fn non_exhaustive_rejected() {
        let a = parse("a & b").unwrap();
        let vars = a.vars().to_vec();
        assert!(matches!(
            ClassSpec::new(vec![a], vars),
            Err(ModelError::NotAPartition { exhaustive: false, .. })
        ));
    }
}
