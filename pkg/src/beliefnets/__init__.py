"""Deep Bayesian belief networks for count data.

Two model kinds share one Gibbs-sampling backbone: the multinomial belief
network (fixed per-sample totals, Dirichlet hidden units) and the
Poisson-gamma belief network (Poisson observations, gamma hidden units).
The package adds holdout evaluation, simulation-based calibration,
cross-chain consensus topics, and a CLI.
"""

from .consensus import (ConsensusResult, TopicSet, consensus_topics,
                        hungarian_match, jsd, project_topics, robust_filter,
                        silhouette)
from .calibration import SbcReport, run_sbc
from .estimators import MultinomialBeliefNetwork, PoissonGammaBeliefNetwork
from .evaluation import (HoldoutSplit, bootstrap_ci, holdout_split,
                         mcmc_summary, perplexity, topic_entropy)
from .mbn import (mbn_generate_counts, mbn_generate_latent, mbn_gibbs_sweep,
                  mbn_predictive)
from .pgbn import (pgbn_compute_q, pgbn_generate_counts, pgbn_generate_latent,
                   pgbn_gibbs_sweep, pgbn_predictive)
from .state import (ChainState, CountMatrix, NetworkConfig, PosteriorSample,
                    init_from_prior)
from .streams import RandomStream
from .trainer import (Phase, TrainPlan, grow_layer, prune_empty_topics,
                      run_chains, simple_plan, train_loglik)

__version__ = "0.1.0"

__all__ = [
    "ChainState", "ConsensusResult", "CountMatrix", "HoldoutSplit",
    "MultinomialBeliefNetwork", "NetworkConfig", "Phase",
    "PoissonGammaBeliefNetwork", "PosteriorSample", "RandomStream",
    "SbcReport", "TopicSet", "TrainPlan", "bootstrap_ci", "consensus_topics",
    "grow_layer", "holdout_split", "hungarian_match", "init_from_prior",
    "jsd", "mbn_generate_counts", "mbn_generate_latent", "mbn_gibbs_sweep",
    "mbn_predictive", "mcmc_summary", "perplexity", "pgbn_compute_q",
    "pgbn_generate_counts", "pgbn_generate_latent", "pgbn_gibbs_sweep",
    "pgbn_predictive", "project_topics", "prune_empty_topics", "robust_filter",
    "run_chains", "run_sbc", "silhouette", "simple_plan", "topic_entropy",
    "train_loglik",
]
