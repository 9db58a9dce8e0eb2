"""linkcast: temporal link prediction on bipartite interaction data.

Matrix methods collapse the time mode (plain or damped sums) and score pairs
through truncated SVD or bipartite Katz weights; tensor methods keep the time
mode, factorize with CP, and score via recent activity or seasonal forecasts.
Everything stays in factored form, so scoring a pair costs O(K) and top-k
extraction runs in bounded memory.
"""

from .collapse import CollapseSpec, collapse, collapse_ct, collapse_cwt
from .cp import (
    FitTrace,
    KruskalModel,
    cp_als,
    cp_heuristic_scores,
    fms,
    load_kruskal,
    normalize_model,
    save_kruskal,
)
from .estimators import (
    CpForecastLinkPredictor,
    CpHeuristicLinkPredictor,
    ExactKatzLinkPredictor,
    LastPeriodLinkPredictor,
    TruncatedKatzLinkPredictor,
    TruncatedSvdLinkPredictor,
)
from .evaluation import (
    EvalReport,
    LabeledPairs,
    auc,
    binarize_test,
    evaluate,
    new_link_filter,
    top_k_correct,
)
from .experiment import (
    ForecastRunResult,
    run_forecast_experiment,
    run_forecast_seeds,
    summarize_runs,
)
from .holtwinters import (
    ForecastResult,
    HoltWintersParams,
    cp_forecast_scores,
    holt_winters_forecast,
)
from .scores import (
    DenseScores,
    ScoreModel,
    ScoreTerm,
    ensemble_scores,
    katz_scores_exact,
    max_admissible_beta,
    psi_minus,
    psi_plus,
    score_pair,
    tkatz_scores,
    top_k_scores,
    tsvd_scores,
)
from .simulate import (
    SynthConfig,
    SynthInstance,
    default_templates,
    degrade,
    gen_participation,
    gen_temporal,
    generate,
    last_period_scores,
)
from .svd import (
    SvdConvergenceError,
    SvdFactors,
    dense_svd,
    load_svd,
    save_svd,
    truncated_svd,
)
from .tensor import (
    CooParseError,
    SparseTensor3,
    frobenius_norm,
    load_coo,
    log_preprocess,
    mttkrp,
    save_coo,
)

__version__ = "0.1.0"
