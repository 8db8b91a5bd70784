"""Seeded noise and weighted angular sampling shared by every pipeline stage.

All functions here are pure: the same inputs (including generator state)
always produce bit-identical outputs.  Randomness comes from two sources:

* lattice hashing — a splitmix64 chain over integer lattice coordinates,
  used by the gradient and cellular noise so values depend only on
  (seed, position);
* explicit generator state — numpy's PCG64, with every stream derived
  from the master seed via ``derive_seed`` so stage order never matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDistributionError

SECTIONS = 360

_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# 12 cube-edge directions, unit length.  sqrt(3)/2 is the proven supremum of
# trilinear gradient noise with unit gradients, used to normalize into [-1, 1].
_GRADS = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
    ],
    dtype=np.float64,
) / math.sqrt(2.0)

_NORM3 = math.sqrt(3.0) / 2.0


def _splitmix(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point here; silence numpy's scalar-overflow warning
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def hash_u64(seed: int | np.ndarray, *parts: np.ndarray | int) -> np.ndarray:
    """Mix a seed with integer lattice coordinates into a uint64 hash."""
    h = _splitmix(np.asarray(seed, dtype=np.uint64))
    for part in parts:
        p = np.asarray(part)
        if p.dtype.kind in "iu":
            p = p.astype(np.int64, copy=False).view(np.uint64)
        else:
            p = p.astype(np.uint64)
        h = _splitmix(h ^ p)
    return h


def derive_seed(base: int, *salts: int) -> int:
    """Derive a child seed from a master seed and a salt path.

    Used to hand every stage (and every node within a stage) its own
    independent stream, so outputs do not depend on evaluation order.
    """
    h = np.uint64(base & 0xFFFFFFFFFFFFFFFF)
    for salt in salts:
        h = hash_u64(int(h), np.int64(salt))
    return int(h)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for an explicit 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class NoiseParams:
    """Hyperparameters of one noise field."""

    seed: int
    frequency: float
    octaves: int = 1
    lacunarity: float = 2.0
    gain: float = 0.5

    def validate(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise ConfigError(f"noise seed must be a 64-bit unsigned integer, got {self.seed}")
        if not self.frequency > 0:
            raise ConfigError(f"noise frequency must be > 0, got {self.frequency}")
        if self.octaves < 1:
            raise ConfigError(f"noise octaves must be >= 1, got {self.octaves}")
        if not self.lacunarity > 1:
            raise ConfigError(f"noise lacunarity must be > 1, got {self.lacunarity}")
        if not 0 < self.gain < 1:
            raise ConfigError(f"noise gain must be in (0, 1), got {self.gain}")


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _fade_deriv(t: np.ndarray) -> np.ndarray:
    return 30.0 * t * t * (t - 1.0) * (t - 1.0)


def _gradients_at(seed: int, ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    idx = (hash_u64(seed, ix, iy, iz) % np.uint64(12)).astype(np.intp)
    return _GRADS[idx]


def _perlin3_octave(pts: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One octave of 3D gradient noise; returns (value, gradient) per point."""
    cell = np.floor(pts)
    f = pts - cell
    cell = cell.astype(np.int64)

    w = _fade(f)
    dw = _fade_deriv(f)

    value = np.zeros(len(pts))
    grad = np.zeros((len(pts), 3))
    for cx in (0, 1):
        ux = w[:, 0] if cx else 1.0 - w[:, 0]
        dux = dw[:, 0] if cx else -dw[:, 0]
        for cy in (0, 1):
            uy = w[:, 1] if cy else 1.0 - w[:, 1]
            duy = dw[:, 1] if cy else -dw[:, 1]
            for cz in (0, 1):
                uz = w[:, 2] if cz else 1.0 - w[:, 2]
                duz = dw[:, 2] if cz else -dw[:, 2]
                g = _gradients_at(seed, cell[:, 0] + cx, cell[:, 1] + cy, cell[:, 2] + cz)
                d = f - np.array([cx, cy, cz], dtype=np.float64)
                dot = np.einsum("ij,ij->i", g, d)
                weight = ux * uy * uz
                value += weight * dot
                grad[:, 0] += dux * uy * uz * dot + weight * g[:, 0]
                grad[:, 1] += ux * duy * uz * dot + weight * g[:, 1]
                grad[:, 2] += ux * uy * duz * dot + weight * g[:, 2]
    return value, grad


def perlin3_grad(p: np.ndarray, params: NoiseParams) -> tuple[np.ndarray, np.ndarray]:
    """Fractal 3D gradient noise with its analytic gradient.

    Values lie in [-1, 1]; the gradient is the exact spatial derivative of
    the returned value with respect to the input point.
    """
    params.validate()
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    single = np.asarray(p).ndim == 1

    value = np.zeros(len(pts))
    grad = np.zeros((len(pts), 3))
    amp = 1.0
    freq = params.frequency
    amp_sum = 0.0
    for octave in range(params.octaves):
        o_seed = derive_seed(params.seed, octave)
        v, g = _perlin3_octave(pts * freq, o_seed)
        value += amp * v
        grad += (amp * freq) * g
        amp_sum += amp
        amp *= params.gain
        freq *= params.lacunarity
    scale = 1.0 / (amp_sum * _NORM3)
    value *= scale
    grad *= scale
    if single:
        return value[0], grad[0]
    return value, grad


def perlin3(p: np.ndarray, params: NoiseParams) -> np.ndarray:
    """Fractal 3D gradient noise in [-1, 1], deterministic in (p, params)."""
    return perlin3_grad(p, params)[0]


def voronoi_feature(seed: int, cx: np.ndarray, cy: np.ndarray, cz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jittered feature point of a lattice cell, in scaled-domain coordinates."""
    jx = hash_u64(seed, cx, cy, cz, np.int64(0))
    jy = hash_u64(seed, cx, cy, cz, np.int64(1))
    jz = hash_u64(seed, cx, cy, cz, np.int64(2))
    fx = cx + (jx >> np.uint64(11)) * 2.0**-53
    fy = cy + (jy >> np.uint64(11)) * 2.0**-53
    fz = cz + (jz >> np.uint64(11)) * 2.0**-53
    return fx, fy, fz


def voronoi_cell_id(seed: int, cx: np.ndarray, cy: np.ndarray, cz: np.ndarray) -> np.ndarray:
    return hash_u64(seed, cx, cy, cz, np.int64(3))


def voronoi3(p: np.ndarray, params: NoiseParams) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the nearest jittered feature point and that feature's cell id.

    One feature per unit cell of the frequency-scaled domain, searched over
    the 3x3x3 cell neighborhood; the returned distance is measured in world
    units, which makes it 1-Lipschitz in p.
    """
    params.validate()
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64)) * params.frequency
    single = np.asarray(p).ndim == 1

    cell = np.floor(pts).astype(np.int64)
    best_d2 = np.full(len(pts), np.inf)
    best_id = np.zeros(len(pts), dtype=np.uint64)
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            for oz in (-1, 0, 1):
                cx = cell[:, 0] + ox
                cy = cell[:, 1] + oy
                cz = cell[:, 2] + oz
                fx, fy, fz = voronoi_feature(params.seed, cx, cy, cz)
                d2 = (pts[:, 0] - fx) ** 2 + (pts[:, 1] - fy) ** 2 + (pts[:, 2] - fz) ** 2
                closer = d2 < best_d2
                best_d2 = np.where(closer, d2, best_d2)
                best_id = np.where(closer, voronoi_cell_id(params.seed, cx, cy, cz), best_id)
    f1 = np.sqrt(best_d2) / params.frequency
    if single:
        return f1[0], best_id[0]
    return f1, best_id


@dataclass
class AngularWeights:
    """Spawn probability per integer-degree section of a circle."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (SECTIONS,):
            raise ConfigError(f"angular weights need exactly {SECTIONS} entries, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ConfigError("angular weights must be finite and non-negative")

    def validate(self) -> None:
        if abs(float(self.values.sum()) - 1.0) > 1e-9:
            raise ConfigError(f"angular weights must sum to 1, got {self.values.sum()!r}")


def _circular_distance_deg(a: np.ndarray, b: float) -> np.ndarray:
    return np.abs((a - b + 180.0) % 360.0 - 180.0)


def gaussian_weights(mean_deg: float, sigma_deg: float) -> AngularWeights:
    """Wrapped Gaussian over the 360 sections, anchored at integer degrees."""
    if not sigma_deg > 0:
        raise ConfigError(f"gaussian sigma must be > 0, got {sigma_deg}")
    d = _circular_distance_deg(np.arange(SECTIONS, dtype=np.float64), float(mean_deg))
    w = np.exp(-0.5 * (d / sigma_deg) ** 2)
    return AngularWeights(w / w.sum())


def uniform_weights() -> AngularWeights:
    return AngularWeights(np.full(SECTIONS, 1.0 / SECTIONS))


def _perlin1_periodic(x: np.ndarray, seed: int, period: int) -> np.ndarray:
    """1D gradient noise with lattice wrap; values in [-1, 1]."""
    i0 = np.floor(x).astype(np.int64)
    t = x - i0
    i0 = i0 % period
    i1 = (i0 + 1) % period
    g0 = 1.0 - 2.0 * (hash_u64(seed, i0) & np.uint64(1)).astype(np.float64)
    g1 = 1.0 - 2.0 * (hash_u64(seed, i1) & np.uint64(1)).astype(np.float64)
    w = _fade(t)
    v = (1.0 - w) * g0 * t + w * g1 * (t - 1.0)
    return 2.0 * v


def perlin_weights(seed: int, frequency: float) -> AngularWeights:
    """Periodic 1D gradient noise sampled at the 360 sections, normalized."""
    if not frequency > 0:
        raise ConfigError(f"perlin weight frequency must be > 0, got {frequency}")
    period = max(1, int(round(frequency)))
    x = np.arange(SECTIONS, dtype=np.float64) / SECTIONS * period
    v = _perlin1_periodic(x, seed, period)
    w = (v + 1.0) * 0.5
    total = w.sum()
    if total <= 0:
        raise DegenerateDistributionError("perlin angular weights collapsed to zero")
    return AngularWeights(w / total)


def hybrid_weights(g: AngularWeights, p: AngularWeights, blend: float) -> AngularWeights:
    """Convex combination of two angular distributions, renormalized."""
    if not 0.0 <= blend <= 1.0:
        raise ConfigError(f"hybrid blend must be in [0, 1], got {blend}")
    if blend == 0.0:
        return AngularWeights(g.values.copy())
    if blend == 1.0:
        return AngularWeights(p.values.copy())
    w = (1.0 - blend) * g.values + blend * p.values
    return AngularWeights(w / w.sum())


def sample_section(w: AngularWeights, rng: np.random.Generator) -> int:
    """Draw one section index with probability proportional to its weight."""
    values = w.values
    positive = np.flatnonzero(values > 0)
    if positive.size == 0:
        raise DegenerateDistributionError("cannot sample from all-zero angular weights")
    cdf = np.cumsum(values)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= SECTIONS or values[idx] == 0.0:
        idx = int(positive[-1])
    return idx


def sample_sections(w: AngularWeights, rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized batch draw; same distribution as repeated sample_section."""
    values = w.values
    positive = np.flatnonzero(values > 0)
    if positive.size == 0:
        raise DegenerateDistributionError("cannot sample from all-zero angular weights")
    cdf = np.cumsum(values)
    u = rng.random(n) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    bad = (idx >= SECTIONS) | (values[np.minimum(idx, SECTIONS - 1)] == 0.0)
    idx[bad] = positive[-1]
    return idx
