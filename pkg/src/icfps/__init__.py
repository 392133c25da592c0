"""Instance-centroid point cloud downsampling toolkit.

Fast foreground-focused center sampling for large LiDAR-style clouds:
a block-grid background filter with neighborhood feature diffusion and a
density-distance focal loss, centroid/instance center selection with a
learned centroid offset, exact farthest-point-sampling baselines, a
synthetic labelled-scene generator, and a benchmark harness.
"""

from .version import __version__

from .cloud import (
    Box,
    FormatError,
    LabelSet,
    LengthError,
    PointCloud,
    ValidationError,
    load_cloud,
    load_labels,
    points_in_box,
    save_cloud,
    save_labels,
)
from .rng import Rng
from .blocks import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_S_MAX,
    AugmentedBlockMatrix,
    BlockGrid,
    augment,
    ball_query,
    partition,
)
from .samplers import SampleResult, f_fps, fps, grid_centroid_sample, random_sample
from .nn import Layer, MlpNet, StaleCacheError, masked_maxpool
from .lfdbf import (
    DEFAULT_ALPHA,
    BlockFeatures,
    DdflParams,
    NfdmConfig,
    classify,
    ddfl,
    encode_blocks,
    m_den,
    m_dis,
    nfdm,
    total_loss,
)
from .ciss import (
    PRESETS,
    CenterSet,
    apply_offset_vectors,
    apply_offsets,
    ciss_select,
    icfps,
    icfps_preset,
    offset_loss,
    offset_targets,
)
from .weights import IcfpsWeights
from .synth import (
    SCENE_PRESETS,
    SampleMetrics,
    SceneSpec,
    SynthesisError,
    evaluate,
    far_instance_block_mask,
    foreground_block_mask,
    large_scene_spec,
    small_scene_spec,
    synth,
)
from .train import TrainConfig, train_lfdbf
from .bench import run_bench, write_report
from .cli import cli_dispatch

__all__ = [
    "__version__",
    "Box", "FormatError", "LabelSet", "LengthError", "PointCloud",
    "ValidationError", "load_cloud", "load_labels", "points_in_box",
    "save_cloud", "save_labels",
    "Rng",
    "DEFAULT_BLOCK_SIZE", "DEFAULT_S_MAX", "AugmentedBlockMatrix", "BlockGrid",
    "augment", "ball_query", "partition",
    "SampleResult", "f_fps", "fps", "grid_centroid_sample", "random_sample",
    "Layer", "MlpNet", "StaleCacheError", "masked_maxpool",
    "DEFAULT_ALPHA", "BlockFeatures", "DdflParams", "NfdmConfig", "classify",
    "ddfl", "encode_blocks", "m_den", "m_dis", "nfdm", "total_loss",
    "PRESETS", "CenterSet", "apply_offset_vectors", "apply_offsets",
    "ciss_select", "icfps", "icfps_preset", "offset_loss", "offset_targets",
    "IcfpsWeights",
    "SCENE_PRESETS", "SampleMetrics", "SceneSpec", "SynthesisError",
    "evaluate", "far_instance_block_mask", "foreground_block_mask",
    "large_scene_spec", "small_scene_spec", "synth",
    "TrainConfig", "train_lfdbf",
    "run_bench", "write_report",
    "cli_dispatch",
]
