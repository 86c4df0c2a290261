"""Full-size kernels shared by the slow tests; keys match the CLI defaults."""
import os
from functools import lru_cache

from crdsa.cache import cached_plr_curve, cached_q_table
from crdsa.montecarlo import Scenario, default_plr_grid, default_plr_runs
from crdsa.sic import DegreeLaw

from conftest import KERNEL_CACHE

SEED = 1
WORKERS = os.cpu_count() or 1


def scenario(d: int, n_slots: int = 100) -> Scenario:
    return Scenario(n_slots, DegreeLaw.constant(d), 20)


@lru_cache(maxsize=None)
def plr_curve(d: int, n_slots: int = 100):
    grid = default_plr_grid(n_slots)
    runs = default_plr_runs(grid, n_slots)
    return cached_plr_curve(KERNEL_CACHE, scenario(d, n_slots), grid, runs, SEED, workers=WORKERS)[0]


@lru_cache(maxsize=None)
def q_table(d: int, n_max: int, n_runs: int = 100_000):
    return cached_q_table(KERNEL_CACHE, scenario(d), n_max, n_runs, SEED, workers=WORKERS)[0]
