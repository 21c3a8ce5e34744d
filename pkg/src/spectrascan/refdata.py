"""Bundled reference measurements from the original spectral-dynamics study
runs (three custom GPT-style models, plus public GPT-2 and Pythia
checkpoints).

These numbers come from training and ablation experiments this toolkit does
not rerun; they exist so analyses and pruning plans can be compared against
published behavior. Loss/perplexity deltas are inputs here, never computed.
"""

from __future__ import annotations

#: Final-step gradient series step label used below for "Final".
FINAL_STEP = 10_000

#: Compression-gradient evolution (first-layer minus last-layer mean stable
#: rank) per run; steps 250, 500, 1000, 2000, 5000, final.
GRADIENT_EVOLUTION: dict[str, list[tuple[int, float]]] = {
    "D8": [(250, -23.1), (500, -15.0), (1000, 2.9), (2000, 14.4), (5000, 19.7), (FINAL_STEP, 22.1)],
    "D12": [(250, -42.2), (500, -25.9), (1000, -2.6), (2000, 8.1), (5000, 17.0), (FINAL_STEP, 17.2)],
    "D16": [(250, -41.7), (500, -59.6), (1000, -19.5), (2000, -2.6), (5000, 17.8), (FINAL_STEP, 18.8)],
}

#: Final per-layer Q-projection alpha and single-layer-ablation loss increase.
LAYER_ABLATION_ALPHA: dict[str, list[float]] = {
    "D8": [0.453, 0.374, 0.415, 0.461, 0.450, 0.391, 0.280, 0.202],
    "D12": [0.418, 0.361, 0.506, 0.514, 0.516, 0.470, 0.399, 0.346, 0.298, 0.301, 0.273, 0.232],
    "D16": [0.417, 0.401, 0.567, 0.506, 0.502, 0.517, 0.488, 0.421, 0.411, 0.386,
            0.341, 0.321, 0.297, 0.256, 0.286, 0.278],
}

LAYER_ABLATION_DELTA_LOSS: dict[str, list[float]] = {
    "D8": [3.42, 1.72, 5.10, 0.096, 0.091, 0.092, 0.090, 0.085],
    "D12": [2.82, 3.08, 0.163, 0.058, 0.054, 0.031, 0.017, 0.009, 0.006, 0.009, 0.010, 0.007],
    "D16": [3.56, 6.91, 0.083, 0.024, 0.022, 0.014, 0.018, 0.005, 0.006, 0.005,
            0.004, 0.009, 0.010, 0.010, 0.014, 0.016],
}

#: Depth scaling summary per run: (L, delta_alpha, alpha_max, peak_ratio,
#: wave_velocity in steps/layer).
SCALING_SUMMARY: list[tuple[int, float, float, float, float]] = [
    (8, 0.259, 0.461, 0.43, 102.0),
    (12, 0.284, 0.516, 0.36, 131.0),
    (16, 0.310, 0.567, 0.13, 142.0),
]

#: Cross-family final-checkpoint summary:
#: model -> (family, L, delta_alpha, peak_layer, peak_ratio).
CROSS_FAMILY: dict[str, tuple[str, int, float, int, float]] = {
    "D8": ("custom", 8, 0.259, 3, 0.38),
    "D12": ("custom", 12, 0.284, 4, 0.33),
    "D16": ("custom", 16, 0.310, 2, 0.13),
    "gpt2-small": ("gpt2", 12, 0.092, 11, 0.92),
    "gpt2-medium": ("gpt2", 24, 0.285, 0, 0.00),
    "gpt2-large": ("gpt2", 36, 0.107, 1, 0.03),
    "pythia-160m": ("pythia", 12, 0.333, 9, 0.75),
    "pythia-410m": ("pythia", 24, 0.320, 22, 0.92),
    "pythia-1b": ("pythia", 16, 0.061, 3, 0.19),
}
