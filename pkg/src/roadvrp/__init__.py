"""Joint vehicle routing and speed optimization on non-complete road networks."""

from .congestion import BackgroundTraffic, CongestionParams
from .expand import NCSolution, recover
from .instance import GeneratorSpec, Instance, generate_instance, parse_instance, write_instance
from .metrics import NormalizationWeights, ObjectiveVector, WeightVector, pareto_filter
from .network import RoadNetwork, shortest_paths
from .orchestrator import SolveConfig, run_algorithm1, stochastic_replications, sweep_weights

__version__ = "0.1.0"
