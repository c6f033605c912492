"""optbench: adaptive-gradient optimizers (Adam, AdaMax, baselines) with an
online-regret harness and a desk-scale experiment CLI.

The library layers are importable on their own: core (types, RNG,
hyperparameters), optim (update rules), averaging (iterate averaging),
objectives (test problems and data plumbing), regret (online harness and
bound evaluation), trace/config/runner/figures (experiment plumbing). The
CLI entry point is optbench.cli:main.
"""

__version__ = "0.1.0"

from .averaging import AveragerState, averager_update
from .config import (
    ObjectiveSpec,
    OptimizerSpec,
    RunConfig,
    RunSpec,
    SamplerSpec,
    expand_runs,
    load_config,
    parse_config,
)
from .core import (
    ADAM_DEFAULTS,
    ADAMAX_DEFAULTS,
    HyperParams,
    SeededRng,
    SparseGradient,
    densify,
    derive_seed,
    gamma,
    hyperparams_validate,
    sparsify,
)
from .objectives import (
    Batch,
    BatchSampler,
    Dataset,
    Objective,
    check_gradient,
    make_logreg,
    make_quadratic,
    make_sparse_bow,
    read_sparse_dataset,
    sample_batch,
    sample_indices,
)
from .optim import (
    AdamState,
    AdaMaxState,
    BaselineState,
    Learner,
    StepReport,
    adam_step,
    adam_step_efficient,
    adamax_step,
    adamax_u_closed_form,
    baseline_step,
    bias_corrected_moments,
    lp_generalized_u,
    make_learner,
    step_bound,
)
from .regret import (
    OnlineSequence,
    RegretLedger,
    average_regret_decay,
    online_from_objective,
    run_online,
    solve_comparator,
    theorem1_bound,
)
from .runner import build_objective, resolve_jobs, run_experiment
from .trace import (
    RunTrace,
    TraceRow,
    emit_csv,
    emit_dat,
    format_real,
    read_trace_csv,
    traces_equal,
)
