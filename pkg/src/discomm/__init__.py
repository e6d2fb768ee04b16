"""discomm: learning discrete multi-agent communication through differentiable discretization."""

from .autograd import GraphValue, ParamSet, backward, custom_op
from .discretizers import DiscretizerConfig, DiscretizerKind, Mode, NoiseDraw, discretize
from .envs import ChannelConfig, MatrixConfig, SpeakerListenerConfig
from .nets import AgentParams, Mlp, MlpSpec, load_checkpoint, save_checkpoint
from .training import (
    MatrixTrainer,
    MetricsRecord,
    SpeakerListenerTrainer,
    TrainerConfig,
    communication_amplitude,
    ewma,
    final_summary,
)

__all__ = [
    "GraphValue",
    "ParamSet",
    "backward",
    "custom_op",
    "DiscretizerConfig",
    "DiscretizerKind",
    "Mode",
    "NoiseDraw",
    "discretize",
    "ChannelConfig",
    "MatrixConfig",
    "SpeakerListenerConfig",
    "AgentParams",
    "Mlp",
    "MlpSpec",
    "load_checkpoint",
    "save_checkpoint",
    "MatrixTrainer",
    "MetricsRecord",
    "SpeakerListenerTrainer",
    "TrainerConfig",
    "communication_amplitude",
    "ewma",
    "final_summary",
]
