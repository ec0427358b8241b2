"""Cost-aware dynamic workflow scheduling with a graph-attention policy trained by evolution strategies."""

from .baselines import BaselineKind, BaselinePolicy
from .errors import CadwsError
from .es import EsConfig, train
from .features import Dhg, build_dhg
from .policy import GraphPolicy, PolicyArch, PolicyParams, init_params, load_checkpoint, save_checkpoint
from .sim import VM_TYPES, CostReport, SimState, run_episode
from .workflow import Pattern, Scale, ScenarioConfig, WorkflowDag, build_dag, generate_pattern, generate_workflows

__version__ = "0.1.0"

__all__ = [
    "BaselineKind", "BaselinePolicy", "CadwsError", "EsConfig", "train", "Dhg", "build_dhg",
    "GraphPolicy", "PolicyArch", "PolicyParams", "init_params", "load_checkpoint", "save_checkpoint",
    "VM_TYPES", "CostReport", "SimState", "run_episode", "Pattern", "Scale", "ScenarioConfig",
    "WorkflowDag", "build_dag", "generate_pattern", "generate_workflows",
]
