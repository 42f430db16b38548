"""Default corpus recipes.

The training recipe reproduces the 271-sample Line13 set (35 P2P, 70 low-Z
P2G, 70 high-Z P2G, 96 normal). The evaluation recipes are disjoint from it:
other locations, other impedances, other seeds, plus external faults.
"""

from __future__ import annotations

from .core import FaultKind, Pole
from .gridsim.scenario import CorpusRecipe

P2P_OHMS = (1.0, 5.0, 10.0, 20.0, 50.0)
P2G_LOW_OHMS = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 50.0)
P2G_HIGH_OHMS = (75.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0)
NOISE_GRID = (0.002, 0.005, 0.01)

# external faults on every neighbour line: bolted P2P and 1 ohm positive-pole P2G
EVAL_EXTERNAL_SITES = (
    ("Line12", (5.0, 50.0, 95.0)),
    ("Line14", (5.0, 100.0, 195.0)),
    ("Line34", (5.0, 50.0, 95.0)),
    ("Line24", (5.0, 75.0, 145.0)),
)

EVAL_SEED = 100_000
NOISY_EVAL_SEED = 200_000
SOAK_SEED = 300_000


def training_recipe() -> CorpusRecipe:
    return CorpusRecipe(
        kinds={FaultKind.P2P: P2P_OHMS, FaultKind.P2G_LOW: P2G_LOW_OHMS, FaultKind.P2G_HIGH: P2G_HIGH_OHMS},
        location_step_km=30.0,
        location_offset_km=10.0,
        poles=(Pole.POSITIVE,),
        normal_count=32,
        normal_noise_levels=NOISE_GRID,
        normal_flow_steps_ka=(0.0, 0.1, 0.3, 0.5),
        seed=0,
    )


def _external(sites=EVAL_EXTERNAL_SITES) -> tuple:
    return tuple((fl, locs, (0.01,), None) for fl, locs in sites) + tuple(
        (fl, locs, (1.0,), Pole.POSITIVE) for fl, locs in sites
    )


def evaluation_recipe(noise_levels=(0.0,), seed: int = EVAL_SEED) -> CorpusRecipe:
    """P2P, 1 ohm and 300 ohm P2G at 5 locations, both poles, externals and normals."""
    return CorpusRecipe(
        kinds={FaultKind.P2P: (0.0,), FaultKind.P2G_LOW: (1.0,), FaultKind.P2G_HIGH: (300.0,)},
        location_step_km=40.0,
        location_offset_km=25.0,
        poles=(Pole.POSITIVE, Pole.NEGATIVE),
        external=_external(),
        normal_count=8,
        noise_levels=tuple(noise_levels),
        normal_flow_steps_ka=(0.0, 0.2, 0.4, -0.3),
        seed=seed,
    )


def noisy_evaluation_recipe() -> CorpusRecipe:
    """Mixed clean and noisy copy of the evaluation corpus."""
    return evaluation_recipe(noise_levels=(0.0,) + NOISE_GRID, seed=NOISY_EVAL_SEED)


def noise_soak_recipe(seconds: float = 60.0, sigma: float = 0.005, record_s: float = 1.0) -> CorpusRecipe:
    """``seconds`` of aggregate fault-free operation at noise level ``sigma``."""
    n = int(round(seconds / record_s))
    return CorpusRecipe(normal_count=n, noise_levels=(sigma,), seed=SOAK_SEED,
                        duration=record_s, t_fault=0.5 * record_s)


RECIPES = {
    "train": training_recipe,
    "eval": evaluation_recipe,
    "eval-noisy": noisy_evaluation_recipe,
    "noise-soak": noise_soak_recipe,
}
