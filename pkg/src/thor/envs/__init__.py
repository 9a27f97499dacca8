"""Classic-control tasks and grid-planned experts."""
from .classic import (Acrobot, CartPoleSparse, ClassicControlEnv, ENV_NAMES, MountainCar,
                      PendulumSparse, make_env, wrap_angle)
from .experts import GridExpertPolicy, parse_quality, scripted_expert
from .grid import Grid, GridPlan, grid_value_iteration, lookahead_actions

__all__ = ["Acrobot", "CartPoleSparse", "ClassicControlEnv", "ENV_NAMES", "MountainCar",
           "PendulumSparse", "make_env", "wrap_angle", "GridExpertPolicy", "parse_quality",
           "scripted_expert", "Grid", "GridPlan", "grid_value_iteration", "lookahead_actions"]
