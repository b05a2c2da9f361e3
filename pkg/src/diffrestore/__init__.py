"""Staged, region-selective guided diffusion sampling for face restoration.

The reverse diffusion process is guided by task losses instead of a trained
classifier: a weakly guided pass synthesizes a pseudo label from the
degraded photo, then a strongly guided pass restores it under fidelity,
breakage-smoothness, and (late in the schedule) color-coherence gradients,
each confined to its own semantic region. Analytic Gaussian and mixture
denoisers make every step exactly checkable; real denoisers attach through
a small binary wire protocol.
"""

from .errors import (
    ConfigError, ConnectionFailed, DiffRestoreError, FileFormatError,
    NumericError, ProtocolError, ProtocolViolation, RemoteTimeout,
)
from .tensors import (
    BinaryMask, ImageTensor, ParsingMap,
    load_image, save_image, load_mask, save_mask, load_parsing, save_parsing,
    load_tensor, save_tensor, read_ssdt, write_ssdt, rgb_to_saturation,
)
from .schedule import (
    NoiseSchedule, PosteriorMoments, guided_transition, make_linear_schedule,
    posterior, predict_x0, q_sample,
)
from .denoise import (
    Denoiser, DiagonalGaussianModel, GaussianMixtureModel,
    GaussianDenoiser, GMMDenoiser, RemoteDenoiser,
    gaussian_predict_eps, gmm_predict_eps, remote_predict_eps,
)
from .protocol import DenoiserClient
from .regions import (
    DEFAULT_EXCLUDE, DEFAULT_GUIDE, DEFAULT_SKIN,
    LABEL_NAMES, LabelSets, complement, default_radius, extend_mask,
    labels_to_mask, make_guide_mask, select,
)
from .guidance import (
    LossReport, assemble_gradient, color_transfer, edge_magnitude,
    loss_color, loss_fidelity, loss_smoothness,
)
from .metrics import (
    MetricRow, contour_iou, edge_variation, feature_iou, histogram_w1,
    mask_iou, mse_psnr, read_histogram, saturation_distance,
    saturation_histogram, write_histogram,
)
from .sampler import (
    GuidanceConfig, StepTrace, SweepInput, format_trace,
    generate_pseudo_label, restore, run_ablation_sweep,
)

__version__ = "0.1.0"
