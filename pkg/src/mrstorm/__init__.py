"""Decentralized multi-arm sampling-based MPC with a kinematic benchmark harness."""

from .coordination import Agent, BoardEntry, IntentionBoard, agent_loop, decode_entry, encode_entry
from .cost import CostWeights, GoalSpec, SphereIntent
from .dynamics import ControlSequence, RobotState
from .harness import AlgoMode, Metrics, paired_differences, report, run_trial, sweep
from .kinematics import ArmModel, Pose, SphereSet, forward_kinematics, jacobian, manipulability
from .mppi import Planner, PlannerConfig, Policy, plan_step
from .world import Obstacle, Scenario, load_scenario, make_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AlgoMode",
    "ArmModel",
    "BoardEntry",
    "ControlSequence",
    "CostWeights",
    "GoalSpec",
    "IntentionBoard",
    "Metrics",
    "Obstacle",
    "Planner",
    "PlannerConfig",
    "Policy",
    "Pose",
    "RobotState",
    "Scenario",
    "SphereIntent",
    "SphereSet",
    "agent_loop",
    "decode_entry",
    "encode_entry",
    "forward_kinematics",
    "jacobian",
    "load_scenario",
    "make_scenario",
    "manipulability",
    "paired_differences",
    "plan_step",
    "report",
    "run_trial",
    "save_scenario",
    "sweep",
]
