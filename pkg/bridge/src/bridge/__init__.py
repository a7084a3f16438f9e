"""Sidecar model service: layer-wise embeddings and continuation scoring."""

from .model import BOS, POOLINGS, VOCAB_SIZE, BridgeConfig, ConfigError, ModelError, TinyCausalLM, load_config, pool_states
from .service import create_app, create_replay_app, load_recording
from .xemb import XembError, read_xemb, write_xemb

__version__ = "0.1.0"

__all__ = [
    "BOS",
    "POOLINGS",
    "VOCAB_SIZE",
    "BridgeConfig",
    "ConfigError",
    "ModelError",
    "TinyCausalLM",
    "XembError",
    "create_app",
    "create_replay_app",
    "load_config",
    "load_recording",
    "pool_states",
    "read_xemb",
    "write_xemb",
    "__version__",
]
