"""Training-free trajectory control for 3D full-attention video transformers.

Token-lattice geometry, 3D rotary embedding with the spatial-temporal
decoupled transform, foreground/background and R-token attention masks, and
a seeded toy transformer block to observe their effect on attention scores.
"""

from .errors import TrajAttnError
from .lattice import LatentShape, TokenLattice, patchify
from .trajectory import BoundingBox, Trajectory, foreground_token_set, min_box_frame, parse_trajectory
from .rope import (
    RopeLayout,
    RopeTable,
    apply_rope,
    build_3d_rope,
    nn_upsample_box,
    rope_angles_1d,
    select_anchor,
    std_rope,
    std_rope_3d_aware,
)
from .masking import (
    AttentionMask,
    ConditionLayout,
    build_cross_mask,
    build_self_mask,
    r_token_set,
    repeat_token_sets,
)
from .attention import BlockWeights, ConditionEmbedding, masked_attention, self_attention_3d
from .guidance import PromptBundle, StubSplitter, RemoteSplitter, encode_text, split_prompt, union_condition

__version__ = "0.1.0"
