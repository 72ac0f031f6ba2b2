"""Graph neural network service function chaining: topology model, oracle labels,
from-scratch autodiff, gated graph encoder/decoder models, training and evaluation."""
from .dataset import SimulationConfig, build_dataset, load_dataset, write_dataset
from .model import IncompatibleTopology, ModelConfig, SfcModel, build_model
from .oracle import brute_force, solve_optimal
from .topology import (Request, ResourceLedger, SfcPath, Status, Topology, TopologyError,
                       classify_path, load_topology, path_cost, read_topology)
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "IncompatibleTopology", "ModelConfig", "Request", "ResourceLedger", "SfcModel", "SfcPath",
    "SimulationConfig", "Status", "Topology", "TopologyError", "TrainConfig", "brute_force",
    "build_dataset", "build_model", "classify_path", "evaluate", "load_dataset", "load_topology",
    "path_cost", "read_topology", "solve_optimal", "train", "write_dataset",
]
