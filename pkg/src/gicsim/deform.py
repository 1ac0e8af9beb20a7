"""Deformation of canonical Gaussians from tabulated motion bases.

Each time sample carries a small set of motion bases (a position offset and
a scale offset per basis) plus per-point coefficient vectors; the deformed
state is the canonical state plus the coefficient-weighted sum of basis
offsets. Opacity and color pass through unchanged. Track files supply the
samples; see ``load_deformation_track`` for the JSON layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ParseError
from .geometry import GaussianPointSet

DEFAULT_NUM_BASES = 8
SCALE_EPSILON = 1e-6                 # additive scale updates may go negative


@dataclass
class MotionBasisFrame:
    time: float
    d_mu: np.ndarray                 # (N_m, 3) position offsets
    d_s: np.ndarray                  # (N_m,) scale offsets

    def __post_init__(self):
        self.time = float(self.time)
        self.d_mu = np.atleast_2d(np.asarray(self.d_mu, dtype=np.float64))
        self.d_s = np.atleast_1d(np.asarray(self.d_s, dtype=np.float64))
        if self.d_mu.shape != (len(self.d_s), 3):
            raise InvalidInputError("basis arrays must be (N_m, 3) and (N_m,)")

    @property
    def num_bases(self):
        return len(self.d_s)


@dataclass
class CoefficientFrame:
    time: float
    weights: np.ndarray              # (n_points, N_m)

    def __post_init__(self):
        self.time = float(self.time)
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        if not np.all(np.isfinite(self.weights)):
            raise InvalidInputError("coefficient weights must be finite")


def compose_deformation(
    canonical: GaussianPointSet, basis: MotionBasisFrame, coeff: CoefficientFrame
) -> GaussianPointSet:
    """Apply the weighted basis offsets to centers and scales.

    Output scales are clamped to a small positive epsilon; opacity and color
    are copied unchanged.
    """
    n = len(canonical)
    if coeff.weights.shape[0] != n:
        raise InvalidInputError(
            f"coefficient frame has {coeff.weights.shape[0]} weight vectors for {n} points"
        )
    if coeff.weights.shape[1] != basis.num_bases:
        raise InvalidInputError(
            f"weight length {coeff.weights.shape[1]} != basis count {basis.num_bases}"
        )
    centers = canonical.centers + coeff.weights @ basis.d_mu
    scales = np.maximum(canonical.scales + coeff.weights @ basis.d_s, SCALE_EPSILON)
    return GaussianPointSet(centers, scales, canonical.opacities.copy(), canonical.colors.copy())


def load_deformation_track(path):
    """Load a JSON track: {n_m, frames: [{t, bases: [{dmu, ds}], weights}]}.

    Returns basis and coefficient frame lists sorted by time. An empty track
    yields two empty lists.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=str(path), line=e.lineno,
                         offset=e.colno) from None
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ParseError("track file must be an object with a 'frames' list", path=str(path))
    frames = doc["frames"]
    n_m = int(doc.get("n_m", DEFAULT_NUM_BASES))
    bases_out, coeffs_out = [], []
    for i, fr in enumerate(frames):
        try:
            t = float(fr["t"])
            d_mu = np.array([b["dmu"] for b in fr["bases"]], dtype=np.float64).reshape(-1, 3)
            d_s = np.array([b["ds"] for b in fr["bases"]], dtype=np.float64)
            weights = np.asarray(fr["weights"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed frame {i}: {e}", path=str(path)) from None
        if len(d_s) != n_m:
            raise ParseError(f"frame {i} has {len(d_s)} bases, expected n_m={n_m}",
                             path=str(path))
        if weights.ndim != 2 or weights.shape[1] != n_m:
            raise ParseError(f"frame {i} weights must be (n_points, {n_m})", path=str(path))
        bases_out.append(MotionBasisFrame(t, d_mu, d_s))
        coeffs_out.append(CoefficientFrame(t, weights))
    order = np.argsort([b.time for b in bases_out], kind="stable")
    return [bases_out[i] for i in order], [coeffs_out[i] for i in order]


def save_deformation_track(path, bases, coeffs) -> None:
    if len(bases) != len(coeffs):
        raise InvalidInputError("basis and coefficient frame counts differ")
    n_m = bases[0].num_bases if bases else DEFAULT_NUM_BASES
    frames = []
    for b, c in zip(bases, coeffs):
        if b.num_bases != n_m:
            raise InvalidInputError("inconsistent basis counts across frames")
        frames.append({
            "t": b.time,
            "bases": [{"dmu": list(map(float, b.d_mu[i])), "ds": float(b.d_s[i])}
                      for i in range(n_m)],
            "weights": c.weights.tolist(),
        })
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"n_m": n_m, "frames": frames}, f, indent=1)
