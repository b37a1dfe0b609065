"""Space-filling-curve guided point cloud network, desk scale.

Pipeline: farthest-point sampling and radius grouping embed local regions;
a Morton-order walk picks a structure skeleton; an all-pairs correlation
grid fuses local and structure features; channel-spatial attention refines
them for classification and part segmentation. Everything runs on a small
built-in float64 autodiff engine.
"""

from .attention import AttentionWeights, apply_attention, channel_attention, spatial_attention
from .config import DEFAULT_SEED, NetworkConfig, micro_profile, paper_profile, profile, read_config, write_config
from .engine import (
    AdamState,
    BatchNormState,
    ComputeGraph,
    DenseLayer,
    Tensor,
    adam_step,
    backward,
    load_checkpoint,
    save_checkpoint,
)
from .errors import ConfigError, ContractError, DimensionError, InputError
from .fusion import CorrelationTensor, FusedFeature, correlate, pairwise_fusion, reduce_correlation, skip_fuse
from .geometry import (
    MortonCode,
    PointCloud,
    equally_spaced_sample,
    load_dataset,
    morton_decode,
    morton_encode,
    morton_order,
    normalize_unit_cube,
    quantize,
    read_cloud,
    write_cloud,
)
from .network import Model, build, evaluate, lr_at, param_count, train
from .sampling import EmbeddedCloud, GroupedNeighborhood, ball_query, fps, set_abstraction
from .zorder import SkeletonCloud, zorder_sample

__version__ = "0.1.0"
