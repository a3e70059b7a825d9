"""Batch-size dynamics, E(S) fitting and dynamic batch schedules."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: E402
    Crossing,
    NoiseProfile,
    SimConfig,
    constant_noise_oracle,
    data_to_loss,
    find_crossing,
    loss_at_tokens,
    simulate_run,
    stall_bound,
    step_ratio,
    steps_to_loss,
)
from .errors import *  # noqa: E402,F401,F403
from .esfit import (  # noqa: E402
    BatchMetrics,
    FreeParams,
    PiecewiseES,
    constraint_residuals,
    es_derivative,
    eval_es,
    extract_metrics,
    fit_es,
    from_free_params,
    metrics_trend,
)
from .losslaw import ESDataset, PowerLawFit, build_es_dataset, fit_power_law, steps_for_loss  # noqa: E402
from .runs import TrainingRun, read_run  # noqa: E402
from .scheduler import (  # noqa: E402
    BoptCurve,
    Schedule,
    deepseek_bopt,
    fit_bopt_curve,
    make_schedule,
    mccandlish_lr,
    surge_lr,
    verify_equivalence,
)
