"""Mean-field Belavkin dynamics: simulation and verification laboratory.

Integrates the N-particle continuously-monitored Schrodinger dynamics and its
mean-field (stochastic Hartree) limit on periodic grids, measures the
convergence indicators relating them, and property-tests the supporting
operator estimates at desk scale.
"""

__version__ = "0.1.0"

from .grid import (
    GridFunctionReal,
    GridSpec,
    WaveFunction1P,
    convolve_potential,
    free_propagate,
    gaussian_packet,
    h1_norm,
    inner_l2,
)
from .operators import (
    CouplingOperator,
    PotentialSpec,
    TruncationProfile,
    apply_F1,
    apply_F2,
    expect_L,
    theta_R,
)
from .density import DensityMatrix, pure_state_density
from .meanfield import (
    SchemeParams,
    Trajectory,
    XiPath,
    ensemble_meanfield,
    evolve_belavkin_density,
    h1_moment_series,
    picard_meanfield,
    solve_intermediate,
    step_intermediate,
)
from .nbody import (
    WaveFunctionNP,
    density_from_wave,
    first_marginal,
    pair_marginal,
    step_nbody,
    tensor_power,
)
from .indicators import (
    DeltaStats,
    IndicatorSample,
    delta_stats,
    p3_coefficient,
    pickl_hat,
    sandwich_check,
    trace_distance,
)
from .streams import BrownianDriver, gaussian_stream_audit
from .harness import ExperimentResult, run_convergence, run_delta_sweep
