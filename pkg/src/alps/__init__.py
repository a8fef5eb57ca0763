"""One-class anomaly detection by training an autoencoder against an
adversary that perturbs its latent code.  Pure numpy."""

from alps.config import RunConfig, TrainingConfig
from alps.errors import AlpsError, ConfigError, DataError, DivergenceError, ProtocolError
from alps.models import ModelConfig, Networks
from alps.scoring import ScoreSet, ScoreTriple, score_images
from alps.training import train

__version__ = "0.1.0"

__all__ = ["AlpsError", "ConfigError", "DataError", "DivergenceError", "ModelConfig", "Networks",
           "ProtocolError", "RunConfig", "ScoreSet", "ScoreTriple", "TrainingConfig", "score_images", "train"]
