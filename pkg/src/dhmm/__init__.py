"""Diversified hidden Markov models.

HMMs whose transition rows carry a determinantal diversity prior, trained by
MAP-EM (unsupervised) or count estimation plus projected gradient refinement
(supervised).
"""

from .emissions import BernoulliEmission, CategoricalEmission, GaussianEmission, emission_log_prob
from .estimator import DiversifiedHMM, SupervisedDiversifiedHMM
from .evaluation import (effective_state_count, hungarian_align, one_to_one_accuracy,
                         state_histogram)
from .hmm import (HmmParams, NumericalUnderflowError, ObservationSequence, PosteriorMarginals,
                  forward_backward, joint_log_likelihood, sample_sequence,
                  sequence_log_likelihood, viterbi)
from .kernel import (bhattacharyya_distance, kernel_matrix, log_det_gradient, log_det_kernel,
                     mean_pairwise_diversity, normalized_kernel, product_kernel)
from .learning import (EmissionSpec, TrainConfig, TrainedModel, em_fit_unsupervised,
                       fit_supervised, project_to_simplex)

__version__ = "0.1.0"

__all__ = [
    "BernoulliEmission", "CategoricalEmission", "GaussianEmission", "emission_log_prob",
    "DiversifiedHMM", "SupervisedDiversifiedHMM",
    "effective_state_count", "hungarian_align", "one_to_one_accuracy", "state_histogram",
    "HmmParams", "NumericalUnderflowError", "ObservationSequence", "PosteriorMarginals",
    "forward_backward", "joint_log_likelihood", "sample_sequence", "sequence_log_likelihood",
    "viterbi",
    "bhattacharyya_distance", "kernel_matrix", "log_det_gradient", "log_det_kernel",
    "mean_pairwise_diversity", "normalized_kernel", "product_kernel",
    "EmissionSpec", "TrainConfig", "TrainedModel", "em_fit_unsupervised", "fit_supervised",
    "project_to_simplex",
]
