"""Point-cloud diffusion with frequency-guided latent sampling and curve-ordered Mamba blocks."""

from .diffusion import make_schedule, q_sample, sample, train
from .estimators import CurveSerializer, FrequencySelector, PointCloudDiffusion
from .geometry import PointCloud
from .io import RunConfig, read_xyz, synth_dataset, write_xyz
from .metrics import chamfer, coverage, emd_approx, emd_exact, evaluate, one_nna
from .model import ModelConfig, eps_theta, init_params

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "ModelConfig", "RunConfig", "init_params", "eps_theta",
    "make_schedule", "q_sample", "sample", "train",
    "chamfer", "emd_exact", "emd_approx", "one_nna", "coverage", "evaluate",
    "read_xyz", "write_xyz", "synth_dataset",
    "FrequencySelector", "CurveSerializer", "PointCloudDiffusion",
]
