"""Video try-on on a synthetic stick-figure world.

Edit the first frame once, then propagate the edit through a pose- and
mask-conditioned space-time transformer trained with flow matching and
adapted with low-rank factors. Everything is seeded and CPU-sized so that
full training, evaluation, and the ablation matrix run in a test suite.
"""

from .adapters import (
    DEFAULT_SITES,
    LoraConfig,
    LoraLinear,
    SITE_UNIVERSE,
    attach_lora,
    checkpoint_name,
    count_params,
    merge_lora,
    parameter_name,
)
from .backbone import DEFAULT_INSTRUCTION, ModelConfig, VideoBackbone, init_model
from .codec import Codec, CodecParams, LatentSequence
from .conditioning import MaskGuider, agnostic_with_mask, build_guider, inject
from .efficiency import (
    EfficiencyReport,
    attention_flops,
    backbone_flops,
    build_report,
    conv3d_flops,
    estimate_flops,
    flops_breakdown,
    guider_flops,
    lora_flops,
    matmul_flops,
    overhead_pct,
    render_table,
)
from .errors import ConfigError, FormatError, PipelineError, VtryonError
from .firstframe import (
    EditorRequest,
    EditorResult,
    OracleEditor,
    SubprocessEditor,
    oracle_edit,
    plug_editor,
)
from .flowmatch import (
    SamplingConditioning,
    TrainConfig,
    TrainState,
    VARIANTS,
    build_conditioning,
    euler_sample,
    sample_path,
    training_step,
    velocity_loss,
)
from .metrics import (
    MetricsReport,
    frechet_video_distance,
    perceptual_distance,
    ssim_video,
    video_features,
)
from .pipeline import (
    TryOnBundle,
    TryOnResult,
    build_bundle,
    continue_training,
    derangement,
    load_checkpoint,
    load_train_state,
    model_config_for_manifest,
    run_ablation,
    run_eval,
    run_tryon,
    save_checkpoint,
    train_model,
)
from .seeding import stable_seed, stable_text_id
from .synthdata import (
    GarmentSpec,
    GenConfig,
    Manifest,
    Sample,
    SceneSpec,
    build_dataset,
    load_manifest,
    make_garment_pool,
    make_scene,
    render_garment,
    render_sample,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "Codec",
    "CodecParams",
    "ConfigError",
    "DEFAULT_INSTRUCTION",
    "DEFAULT_SITES",
    "EditorRequest",
    "EditorResult",
    "EfficiencyReport",
    "FormatError",
    "GarmentSpec",
    "GenConfig",
    "LatentSequence",
    "LoraConfig",
    "LoraLinear",
    "Manifest",
    "MaskGuider",
    "MetricsReport",
    "ModelConfig",
    "OracleEditor",
    "PipelineError",
    "Sample",
    "SamplingConditioning",
    "SceneSpec",
    "SITE_UNIVERSE",
    "SubprocessEditor",
    "TrainConfig",
    "TrainState",
    "TryOnBundle",
    "TryOnResult",
    "VARIANTS",
    "VideoBackbone",
    "VtryonError",
    "agnostic_with_mask",
    "attach_lora",
    "attention_flops",
    "backbone_flops",
    "build_bundle",
    "build_conditioning",
    "build_dataset",
    "build_guider",
    "build_report",
    "checkpoint_name",
    "continue_training",
    "conv3d_flops",
    "count_params",
    "derangement",
    "estimate_flops",
    "euler_sample",
    "flops_breakdown",
    "frechet_video_distance",
    "guider_flops",
    "init_model",
    "inject",
    "load_checkpoint",
    "load_manifest",
    "load_train_state",
    "lora_flops",
    "make_garment_pool",
    "make_scene",
    "matmul_flops",
    "merge_lora",
    "model_config_for_manifest",
    "oracle_edit",
    "plug_editor",
    "overhead_pct",
    "parameter_name",
    "perceptual_distance",
    "read_tensor",
    "render_garment",
    "render_sample",
    "render_table",
    "run_ablation",
    "run_eval",
    "run_tryon",
    "sample_path",
    "save_checkpoint",
    "ssim_video",
    "stable_seed",
    "stable_text_id",
    "train_model",
    "training_step",
    "velocity_loss",
    "video_features",
    "write_tensor",
]
