"""Multiview selection for monitoring urban search-and-rescue simulations."""

from .annealer import AnnealSchedule, MoveConfig, OptimizeResult, brute_force_optimum, optimize, warm_start
from .camera import MultiView, ViewParams, look_at
from .quality import QualityModel, Weights, total_quality
from .scene import RelevanceConfig, Scenario, generate_scenario, parse_scenario, serialize_scenario
from .visibility import VisibilityConfig, coverage_histogram, raycast_oracle, render_item_buffer

__version__ = "0.1.0"
