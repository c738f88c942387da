from .cbam import CBAM, ChannelAttention, SpatialAttention, cbam_param_count
from .checkpoint import (ImportReport, load_arrays, load_checkpoint, save_arrays,
                         save_checkpoint, weight_import)
from .config import ModelConfig
from .featuremap import FeatureMap
from .fusion import FusionBlock
from .network import ACSSegNet, ForwardTrace, build_model, param_count, param_report

__all__ = [
    "ACSSegNet", "CBAM", "ChannelAttention", "FeatureMap", "ForwardTrace", "FusionBlock",
    "ImportReport", "ModelConfig", "SpatialAttention", "build_model", "cbam_param_count",
    "load_arrays", "load_checkpoint", "param_count", "param_report", "save_arrays",
    "save_checkpoint", "weight_import",
]
