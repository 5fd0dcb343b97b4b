"""Coverage measurement and the replication studies."""
from .metrics import (
    FailureTable,
    binomial_upper_pvalue,
    coverage,
    coverage_ci_lower,
    empirical_quantile,
    failure_table,
)
from .studies import (
    GaussianStudyConfig,
    MdpStudyConfig,
    QuantileCIStudyConfig,
    run_gaussian_study,
    run_mdp_study,
    run_quantile_ci_study,
)
