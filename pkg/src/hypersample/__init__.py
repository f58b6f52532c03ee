"""Consistent multi-view video sampling guided by a world-state hyperspace."""

from .geometry import CameraIntrinsics, ColoredPointSet, Pose
from .hyperspace import Hyperspace, InputVideo, WorldState, add_incremental, build_base
from .sampler import NoiseSchedule, SchedulerConfig, sample_independent, sample_multiview, sample_view
from .tsdf import TSDFConfig

__version__ = "0.1.0"
