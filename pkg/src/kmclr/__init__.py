"""Knowledge-enhanced multi-behavior contrastive recommendation in numpy."""
from .config import TrainConfig, load_config
from .errors import KmclrError
from .evaluation import RankingReport, evaluate
from .experiments import Experiment, ablate, sweep
from .trainer import VARIANTS, TrainResult, train

__version__ = "0.1.0"

__all__ = ["TrainConfig", "load_config", "KmclrError", "RankingReport", "evaluate",
           "Experiment", "ablate", "sweep", "VARIANTS", "TrainResult", "train"]
