"""Built-in models and published reference values.

``simulation_model`` is the two-regime model used for the replicated
estimation study; ``quiebrajano_model`` is the three-regime inflow model
fitted to the Quiebrajano reservoir (its initial law was not published and is
taken uniform here). The matrices below are reference fixtures only.
"""

import numpy as np

from .phmodel import Degenerate, ExponentialDensity, Poisson, model_validate


def simulation_model():
    return model_validate(
        beta=[0.6, 0.4],
        jump=[[0.0, 1.0], [1.0, 0.0]],
        sojourn=[([0.5, 0.5], [[0.5, 0.4], [0.3, 0.5]]),
                 ([0.5, 0.5], [[0.3, 0.3], [0.2, 0.5]])],
        emission=[Degenerate(0.0), Poisson(5.0)],
    )


SIMULATION_SETTINGS = {"omega": 5.0, "capacity": 20.0, "max_states": None}

# storage chain of the simulation model, 3 decimals as published
SIMULATION_MORAN = np.array([
    [.881, .115, .004, .000, .000],
    [.693, .189, .115, .004, .000],
    [.000, .693, .189, .115, .004],
    [.000, .000, .693, .189, .119],
    [.000, .000, .000, .693, .307],
])

# published replicate averages (M = 1000, N = 100), phases in canonical order
SIMULATION_AVERAGES = {
    "alpha": [np.array([0.603, 0.397]), np.array([0.611, 0.389])],
    "T": [np.array([[0.599, 0.361], [0.243, 0.369]]),
          np.array([[0.202, 0.312], [0.230, 0.488]])],
    "moran": np.array([
        [.880, .109, .010, .001, .000],
        [.698, .182, .109, .010, .001],
        [.000, .698, .182, .109, .011],
        [.000, .000, .698, .182, .120],
        [.000, .000, .000, .698, .302],
    ]),
    "mttf": 1.989,
}
SIMULATION_TRUE_MTTF = 1.999


def quiebrajano_model(beta=(1 / 3, 1 / 3, 1 / 3)):
    """Drought (1 phase) -> dry (2 phases) -> wet (1 phase) -> drought."""
    return model_validate(
        beta=list(beta),
        jump=[[0, 1, 0], [0, 0, 1], [1, 0, 0]],
        sojourn=[([1.0], [[0.0]]),
                 ([1.0, 0.0], [[0.2651, 0.7349], [0.0, 0.2254]]),
                 ([1.0], [[0.9543]])],
        emission=[ExponentialDensity(6.006), ExponentialDensity(0.626),
                  ExponentialDensity(0.071)],
        labels=("drought", "dry", "wet"),
    )


QUIEBRAJANO_EXTENDED = np.array([
    [0.0000, 1.0000, 0.0000, 0.0000],
    [0.0000, 0.2651, 0.7349, 0.0000],
    [0.0000, 0.0000, 0.2254, 0.7746],
    [0.0457, 0.0000, 0.0000, 0.9543],
])
QUIEBRAJANO_JUMP = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
QUIEBRAJANO_MORAN = np.array([
    [0.5769, 0.2152, 0.1057, 0.1022],
    [0.1440, 0.4329, 0.2152, 0.2079],
    [0.0000, 0.1440, 0.4329, 0.4231],
    [0.0000, 0.0000, 0.1440, 0.8560],
])
QUIEBRAJANO_RELEASE = 10.0
QUIEBRAJANO_AIC = {"AR(1)": 215.7773, "AR(2)": 217.6977, "MA(2)": 217.6396,
                   "ARIMA(1,1,1)": 211.9087, "PH-HMM": 204.3818}

PRESETS = {"simulation": simulation_model, "quiebrajano": quiebrajano_model}
