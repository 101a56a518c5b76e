//! Built-in desk-scale experiments behind `reproduce`.

use clap::ValueEnum;

use crate::error::Result;
use crate::spec::ExperimentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    /// Degeneracy stress: well-specified, d = 10, K = 3, δ = 1.
    Table1,
    /// Contamination sweep ε ∈ {0, 0.05, 0.10}.
    Robustness,
    /// High-dimensional grid with n/d ∈ {2, 5, 10}.
    Highdim,
}

const TABLE1: &str = "
name = table1
dgp.kind = well_specified
dgp.n = 500
dgp.d = 10
dgp.k = 3
dgp.delta = 1.0
methods = [tamd, em]
replications = 30
base_seed = 1
em.restarts = 1
";

const TABLE1_FULL: &str = "
name = table1_full
dgp.kind = well_specified
dgp.n = 1000
dgp.d = 20
dgp.k = 3
dgp.delta = 1.0
methods = [tamd, em]
replications = 100
base_seed = 1
em.restarts = 1
";

const ROBUSTNESS: &str = "
name = robustness
dgp.kind = contaminated
dgp.n = 500
dgp.d = 2
dgp.k = 3
dgp.delta = 2.0
dgp.eps = [0, 0.05, 0.10]
methods = [tamd, em]
replications = 20
base_seed = 2
";

const ROBUSTNESS_FULL: &str = "
name = robustness_full
dgp.kind = contaminated
dgp.n = 1000
dgp.d = 2
dgp.k = 3
dgp.delta = 2.0
dgp.eps = [0, 0.05, 0.10]
methods = [tamd, em]
replications = 100
base_seed = 2
";

const HIGHDIM: &str = "
name = highdim
dgp.kind = high_dim
dgp.n_per_d = [2, 5, 10]
dgp.d = [10, 50]
dgp.k = 3
dgp.delta = 1.0
methods = [tamd, em]
replications = 10
base_seed = 3
hellinger_draws = 4000
";

const HIGHDIM_FULL: &str = "
name = highdim_full
dgp.kind = high_dim
dgp.n_per_d = [2, 5, 10]
dgp.d = [10, 50, 200]
dgp.k = 3
dgp.delta = 1.0
methods = [tamd, em]
replications = 100
base_seed = 3
";

impl Builtin {
    pub fn text(&self, full: bool) -> &'static str {
        match (self, full) {
            (Builtin::Table1, false) => TABLE1,
            (Builtin::Table1, true) => TABLE1_FULL,
            (Builtin::Robustness, false) => ROBUSTNESS,
            (Builtin::Robustness, true) => ROBUSTNESS_FULL,
            (Builtin::Highdim, false) => HIGHDIM,
            (Builtin::Highdim, true) => HIGHDIM_FULL,
        }
    }

    pub fn spec(&self, full: bool) -> Result<ExperimentSpec> {
        ExperimentSpec::parse(self.text(full))
    }
}
