from .config import SvdSettings, WorkflowConfig, config_from_dict, dump_config, load_config
from .graph import CancelToken, GraphRun, Task, TaskGraph, TaskRecord, execute_graph
from .pipeline import (RunReport, VerifyResult, bench_svd, build_graph, evaluate_hrom,
                       fit_rule, run_paths, run_workflow, stage1, stage2, stage3,
                       stage4, stage5, verify)

__all__ = [
    "SvdSettings", "WorkflowConfig", "config_from_dict", "dump_config", "load_config",
    "CancelToken", "GraphRun", "Task", "TaskGraph", "TaskRecord", "execute_graph",
    "RunReport", "VerifyResult", "bench_svd", "build_graph", "evaluate_hrom",
    "fit_rule", "run_paths", "run_workflow", "stage1", "stage2", "stage3",
    "stage4", "stage5", "verify",
]
