"""Low-rank reconstruction and analysis of subsampled hyperspectral cubes."""

__version__ = "0.1.0"

from .cluster import ClusterResult, Dendrogram, WardClustering, cluster_pipeline, cut_dendrogram, label_agreement, ward_linkage
from .hypercube import FormatError, HyperCube, Image2D, WavenumberAxis, band_image, flatten, get_spectrum, load_cube, pixel_index, store_cube, unflatten
from .lowrank import FactorPair, LowRankCompletion, SolverConfig, SolverError, reconstruct
from .peakfit import PeakComponent, PeakModel, PseudoVoigtFitter, fit_amide_bands, lm_fit, model_eval, pseudo_voigt
from .phantom import PhantomSpec, make_phantom, relative_error
from .preprocess import SavitzkyGolay, SGParams, normalize_max, savitzky_golay, second_derivative_cube
from .sampling import SampledData, SamplingMask, acquisition_time, apply_mask, draw_mask, load_samples, store_samples
