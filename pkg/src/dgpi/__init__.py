"""Neural-network solvers for continuous-time optimal control (HJB) problems."""

from .dynamics import Aircraft, Vehicle, make_model
from .hjb import HamiltonianEval
from .networks import Checkpoint, MlpSpec, PolicyNetwork, ValueNetwork
from .oracles import LqrProblem, rollout, solve_care
from .solvers import TrainConfig, train

__all__ = ["Aircraft", "Vehicle", "make_model", "HamiltonianEval", "Checkpoint", "MlpSpec",
           "PolicyNetwork", "ValueNetwork", "LqrProblem", "rollout", "solve_care",
           "TrainConfig", "train"]
__version__ = "0.1.0"
