"""Published surrogate fixtures for the 16-feature Atari feature vectors.

Feature names are 1-based (x1..x16) as printed; arrays here are 0-based.
Only the branches taken by the published walks are known. Off-path leaves are
filled with placeholder class 0 so the trees are complete; the walks never
reach them.
"""

import numpy as np

N_FEATURES = 16
N_ACTIONS_MSPACMAN = 9
N_ACTIONS_ROADRUNNER = 18
PLACEHOLDER = {"class": 0}


def state(**values):
    s = np.zeros(N_FEATURES)
    for name, val in values.items():
        s[int(name[1:]) - 1] = val
    return s


# MsPacman PPO boundary states after inverse mapping, rows 1-3
MSPACMAN_PPO_ROW1 = state(x2=5753.206, x4=530.9578, x10=2318.034, x12=8493.874, x15=8382.263)
MSPACMAN_PPO_ROW2 = state(x2=6628.804, x4=1914.645, x10=1880.883, x12=14349.77, x15=11766.16)
MSPACMAN_PPO_ROW3 = state(x4=2528.653, x12=20786.43, x15=9735.063)

# RoadRunner A2C boundary state, row 1
ROADRUNNER_A2C_ROW1 = state(x1=161.505, x5=849.9095, x8=1037.385, x10=440.8918, x14=270.6354, x15=56.48066,
                            x16=786.6356)


def split(feature_1based, threshold, left, right):
    return {"feature": feature_1based - 1, "threshold": threshold, "left": left, "right": right}


# x12 <= 14173.283 -> x4 <= 2304.729 -> x2 <= 6694.608 -> class 7
MSPACMAN_PPO_TREE = split(12, 14173.283,
                          split(4, 2304.729,
                                split(2, 6694.608, {"class": 7}, PLACEHOLDER),
                                PLACEHOLDER),
                          PLACEHOLDER)

# x8 <= 399.381 (right) -> x11 <= 0.342 (left) -> x7 <= 148.991 (left) -> x8 <= 466.391 (right) -> class 7
ROADRUNNER_A2C_TREE = split(8, 399.381,
                            PLACEHOLDER,
                            split(11, 0.342,
                                  split(7, 148.991,
                                        split(8, 466.391, PLACEHOLDER, {"class": 7}),
                                        PLACEHOLDER),
                                  PLACEHOLDER))

# MsPacman PPO linear model (non-zero coefficients only)
LINEAR_PPO_INTERCEPT = 7.37
LINEAR_PPO_COEFFS = {"x2": 2.77e-4, "x4": -1.94e-4, "x5": -8.30e-3, "x7": -1.58e-3, "x10": -5.66e-4,
                     "x11": 1.29e-3, "x12": 1.29e-5, "x15": -1.35e-4}
LINEAR_PPO_RAW = 6.37

# MsPacman PPO logistic model, classes 5..8
LOGISTIC_PPO_CLASSES = [5, 6, 7, 8]
LOGISTIC_PPO_INTERCEPTS = [2.21e-7, -1.14e-7, 6.06e-7, -7.12e-7]
LOGISTIC_PPO_COEFFS = [
    {"x2": 9.61e-4, "x4": 1.69e-4, "x5": -9.86e-7, "x7": 1.27e-3, "x10": 8.61e-4, "x11": 3.03e-4,
     "x12": -4.15e-4, "x15": -7.49e-5},
    {"x2": -2.17e-3, "x4": 2.28e-3, "x5": -4.62e-7, "x7": -8.96e-4, "x10": 1.08e-3, "x11": -2.40e-4,
     "x12": 1.17e-3, "x15": -4.35e-4},
    {"x2": 1.90e-3, "x4": -1.47e-3, "x5": 1.58e-6, "x7": -3.68e-4, "x10": 1.11e-3, "x11": -5.90e-5,
     "x12": -2.23e-3, "x15": 1.75e-3},
    {"x2": -6.93e-4, "x4": -9.76e-4, "x5": -1.30e-7, "x7": -9.69e-6, "x10": -3.05e-3, "x11": -4.47e-6,
     "x12": 1.47e-3, "x15": -1.23e-3},
]
LOGISTIC_PPO_LOGITS = [-8.93, 26.12, -33.03, 16.12]


def coeff_vector(named):
    return state(**named)


def linear_ppo_bundle_dict():
    """Hand-written bundle carrying the published linear coefficients."""
    tree = {"feature": [-1], "threshold": [0.0], "left": [-1], "right": [-1], "value": [0]}
    return {
        "version": 1,
        "n_features": N_FEATURES,
        "n_actions": N_ACTIONS_MSPACMAN,
        "tree": tree,
        "linear": {"intercept": LINEAR_PPO_INTERCEPT, "coeffs": coeff_vector(LINEAR_PPO_COEFFS).tolist()},
        "logistic": {"classes": LOGISTIC_PPO_CLASSES, "intercepts": LOGISTIC_PPO_INTERCEPTS,
                     "coefs": [coeff_vector(c).tolist() for c in LOGISTIC_PPO_COEFFS]},
        "metadata": {"source": "hand-written"},
    }
