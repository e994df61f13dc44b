"""Location- and time-conditioned acoustic scene classification on a small numpy autograd."""
from .data import SCENES, ClipRecord, read_manifest
from .features import FeatureConfig, extract_logmel, load_wav
from .model import ASCMamba, ASCMambaConfig, LocationVocab
from .setrans import ImprovedSETrans, ScenePartition, SETransConfig, score_fusion
from .training import Dataset, TrainConfig, train

__all__ = ["SCENES", "ClipRecord", "read_manifest", "FeatureConfig", "extract_logmel", "load_wav",
           "ASCMamba", "ASCMambaConfig", "LocationVocab", "ImprovedSETrans", "ScenePartition",
           "SETransConfig", "score_fusion", "Dataset", "TrainConfig", "train"]
