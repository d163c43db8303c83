"""Agent-based simulator used to check the steady-state model."""
from .engine import STATUS_NAMES, ScooterAgent, SimConfig, SimStats, run_simulation
from .routing import AnnealSchedule, anneal_tour, constrained_kmeans, nearest_neighbor_tour, plan_routes, tour_length
from .verify import VerifyCell, run_replications, sim_config_from_steady, verification_design, verify_model, write_verify_csv

__all__ = [
    "STATUS_NAMES", "ScooterAgent", "SimConfig", "SimStats", "run_simulation",
    "AnnealSchedule", "anneal_tour", "constrained_kmeans", "nearest_neighbor_tour", "plan_routes", "tour_length",
    "VerifyCell", "run_replications", "sim_config_from_steady", "verification_design", "verify_model", "write_verify_csv",
]
