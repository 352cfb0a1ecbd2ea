"""Bouncing-ball benchmark: system, scenarios, batch runs and exports."""

from .ball import FALLING, RISING, BouncingBallParams, bouncing_ball_system, initial_mode
from .batch import BatchStatistics, MethodConfig, RunResult, run_batch, run_scenario
from .export import export_results, read_trajectory_csv, write_trajectory_csv
from .scenarios import Scenario, StartClass, generate_scenarios
