"""Trajectory diffusion with sum-of-costs guidance and a dynamically chosen guidance start."""
from .costs import CostField, CostParams, cost_gradient, sum_of_costs
from .denoiser import (AnalyticGaussianDenoiser, DenoiserSpec, GaussianPrior, NetworkDenoiser, TrainConfig,
                       load_checkpoint, save_checkpoint, train)
from .diffusion import NoiseSchedule, make_schedule
from .geometry import Aabb, RobotModel, forward_kinematics
from .guidance import GuidanceConfig, detect_trigger, softmax_weights, uniformity
from .planner import PlannerConfig, PlanResult, plan, plan_many
from .world import BenchmarkSuite, Problem, Scene, generate_suite

__version__ = "0.1.0"
