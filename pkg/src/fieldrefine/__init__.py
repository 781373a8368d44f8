"""Test-time refinement of dense displacement fields for deformable registration."""

from .errors import InputError, NumericalError
from .losses import LossBreakdown, LossOptions, LossWeights, SsimConstants, hybrid_loss_grad
from .metaimage import read_field, read_labels, read_volume, write_field, write_labels, write_volume
from .metrics import MetricsReport, dice, evaluate, hd95, sdlogj
from .refine import AdamState, RefineResult, TtrConfig, adam_step, refine, warm_vs_cold_report
from .synth import PhantomSpec, make_phantom, make_smooth_field, make_task, make_translation_field
from .volume import DisplacementField, LabelMap, Volume, normalize_intensity
from .warp import jacobian_determinant, sample_trilinear, warp, warp_labels

__version__ = "0.1.0"
