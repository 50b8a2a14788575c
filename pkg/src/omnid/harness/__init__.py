from .config import RunConfig, desk_profile, paper_profile, parse_config, dump_config, config_hash, ConfigError
from .models import build_policy, save_policy, load_policy
from .train import train, finetune, TrainResult
from .evaluate import evaluate, EvalReport
from .baseline import ConcatFusion
from . import gradcheck

__all__ = [
    "RunConfig", "desk_profile", "paper_profile", "parse_config", "dump_config",
    "config_hash", "ConfigError", "build_policy", "save_policy", "load_policy",
    "train", "finetune", "TrainResult", "evaluate", "EvalReport", "ConcatFusion",
    "gradcheck",
]
