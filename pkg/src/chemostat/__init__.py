"""Multi-site chemostat competition with fast migration.

N species compete for one resource across P connected sites.  When
migration is fast, the network behaves like a single well-stirred chemostat
whose coefficients are site averages; this package builds that averaged
model explicitly, predicts the competitive-exclusion winner from break-even
resource levels, and verifies the reduction quantitatively against stiff
integration of the full network: steady states within O(eps) of the
averaged rest points, fast fluctuations collapsing at the migration
operator's spectral-gap rate, and simulated survivors matching the
prediction.
"""

from .aggregated import (
    AggregatedEquilibrium,
    AggregatedModel,
    CepPrediction,
    CovarianceReport,
    StrengthDecomposition,
    aggregate,
    break_even,
    concentration_reversal,
    covariance_check,
    decompose_strength,
    equilibria,
    predict_cep,
)
from .analysis import (
    CepTable,
    SteadyState,
    SweepResult,
    cep_table,
    continue_steady,
    epsilon_sweep,
    stability_of,
)
from .domain import (
    MigrationOperator,
    SlowFastSplit,
    SpatialDomain,
    build_interval_operator,
    build_patch_operator,
    interval_domain,
    patch_domain,
    project_fast,
    project_slow,
    spectral_gap,
)
from .model import (
    CompetitionModel,
    LinearConsumption,
    MonodConsumption,
    ScaledConsumption,
    full_vector_field,
    reaction,
    reaction_jacobian,
)
from .scenario import Scenario, bundled_scenario_path, initial_state, load_scenario
from .simulate import (
    DecayFit,
    IntegratorConfig,
    Trajectory,
    classify_survivors,
    fast_decay_fit,
    integrate_aggregated,
    integrate_full,
    pure_migration_trajectory,
    write_trajectory_csv,
)

__version__ = "0.1.0"
