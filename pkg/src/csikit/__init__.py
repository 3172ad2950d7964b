"""Wi-Fi CSI toolkit: channel simulation, sanitization, features, BVP and leakage models."""

__version__ = "0.1.0"

from .core import ChannelConfig, CirTensor, as_tensor, cfr_to_cir, unwrap_phase, validate_tensor
from .errors import ConfigError, CsiError, DataError, FormatError, NoMotionDetected, NumericError
from .io import read_csi1, write_csi1

__all__ = [
    "ChannelConfig", "CirTensor", "as_tensor", "cfr_to_cir", "unwrap_phase", "validate_tensor",
    "ConfigError", "CsiError", "DataError", "FormatError", "NoMotionDetected", "NumericError",
    "read_csi1", "write_csi1", "__version__",
]
