"""Graph-error models, graph autocorrelation, graph filters and GraDe ICA."""

__version__ = "0.1.0"

from .graphs import (Graph, SbmSpec, GraphonSpec, erdos_renyi, sbm, ppm_spec, random_geometric,
                     knn_weighted, cycle_graph, sample_graphon, average_graphons)
from .errors import (ErrorPartition, perturb_m1, perturb_m2, perturb_m3, perturb_m2w, perturb_m3w,
                     effective_er_parameter, ppm_eigen_shift)
from .signals import (GmaModel, AutocorrTheoryParams, gma_generate, graph_autocovariance,
                      graph_autocorrelation, solve_scaling, expected_autocorrelation,
                      expected_signal_energy, scaled_gma_model)
from .filters import (SpectralDecomposition, FilterSpec, GarmaSpec, frequency_order,
                      design_polynomial_filter, apply_polynomial_filter, gft, highpass_response,
                      detect_outliers, translated_normalized_laplacian, garma1_run, garma_k_design,
                      garma_k_run, filter_rmse)
from .grade import (UnmixingEstimate, whiten, autocorr_matrices, joint_diagonalize, grade,
                    md_index, md_index_squared, sov_from_md, ratio_hat)
