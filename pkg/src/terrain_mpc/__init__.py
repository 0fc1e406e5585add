"""Terrain-aware MPC locomotion controller for a trotting quadruped.

Heightmap foothold selection, a condensed centroidal MPC solved with a dense
active-set QP, leg-inertia compensation and a desk-scale closed-loop plant.
"""
from .compensation import LegModel, compensate, cross_inertia, distribute_wrench
from .foothold import FootholdConfig, build_contact_sequence, choose_foothold, predict_foothold
from .gait import GaitParams, build_schedule
from .model import RobotParams, RobotState
from .mpc import MpcConfig, MpcWeights, plan_forces
from .reference import UserCommand, anchor_references, resample_zoh
from .sim import SimConfig, run_closed_loop, summarize
from .terrain import HeightMap, fit_plane, load_heightmap

__version__ = "0.1.0"
