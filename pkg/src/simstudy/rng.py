"""Deterministic per-replicate and per-batch random streams.

Seed derivation
    seed = splitmix64(global_seed XOR fnv1a64(utf8(key)))

    ``fnv1a64`` is FNV-1a over bytes (offset basis 0xCBF29CE484222325, prime
    0x100000001B3). ``splitmix64`` is one step of the SplitMix64 generator
    applied to its input as state: add 0x9E3779B97F4A7C15, then the
    finalizer with multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB
    (shifts 30, 27, 31). All arithmetic is mod 2**64.

Keys
    replicate: ``replicate|<name>=<value>;...;rep=<rep_id>``
    batch:     ``batch|<name>=<value>;...;rep=<rep_id>;block=<k>``

    Names are sorted, values are canonical JSON, and only batch-level
    variables appear in batch keys.

Generator
    PCG64 (PCG XSL-RR 128/64, as implemented by numpy's ``PCG64`` bit
    generator). A 64-bit stream seed is expanded with four successive
    SplitMix64 outputs s0..s3 into state = s0<<64 | s1 and
    increment = (s2<<64 | s3) | 1.

Distributions (all built on the raw 64-bit outputs, never on numpy's
``Generator`` methods, whose streams are not version-stable):

- uniform [0,1): ``(x >> 11) * 2**-53``
- normal: Marsaglia polar method on consecutive uniform pairs
- Poisson: inversion against the cumulative pmf for lam <= 30, Hoermann's
  PTRS transformed rejection otherwise
- gamma: Marsaglia-Tsang (shape < 1 boosted by U**(1/shape)); beta as
  G(a) / (G(a) + G(b))
- permutation: Fisher-Yates, high index first
- integers: ``low + floor(u * (high - low))``
- multivariate normal: mean + z @ chol(cov).T
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.special import gammaln

from .levels import value_key

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_TWO_M53 = 2.0 ** -53


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


@dataclass(frozen=True)
class StreamKey:
    kind: str  # "replicate" or "batch"
    canonical_key: str

    @staticmethod
    def _assignments(assignments: Mapping[str, Any]) -> list[str]:
        return [f"{name}={value_key(assignments[name])}" for name in sorted(assignments)]

    @classmethod
    def replicate(cls, assignments: Mapping[str, Any], rep_id: int) -> "StreamKey":
        parts = cls._assignments(assignments) + [f"rep={rep_id}"]
        return cls("replicate", "replicate|" + ";".join(parts))

    @classmethod
    def batch(cls, assignments: Mapping[str, Any], rep_id: int, block: int) -> "StreamKey":
        parts = cls._assignments(assignments) + [f"rep={rep_id}", f"block={block}"]
        return cls("batch", "batch|" + ";".join(parts))


def derive_seed(global_seed: int, key: StreamKey) -> int:
    return splitmix64((global_seed & MASK64) ^ fnv1a64(key.canonical_key.encode("utf-8")))


def _count(size) -> tuple[int, tuple]:
    if size is None:
        return 1, ()
    shape = (size,) if np.isscalar(size) else tuple(size)
    return int(np.prod(shape, dtype=np.int64)), shape


def _shaped(values: np.ndarray, shape: tuple):
    if shape == ():
        return values[0].item()
    return values.reshape(shape)


class RngStream:
    """A replayable random stream; see the module docstring for algorithms."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        s = self.seed
        words = []
        for _ in range(4):
            words.append(splitmix64(s))
            s = (s + GOLDEN_GAMMA) & MASK64
        state = (words[0] << 64) | words[1]
        inc = ((words[2] << 64) | words[3]) | 1
        self._bg = np.random.PCG64(0)
        self._bg.state = {
            "bit_generator": "PCG64",
            "state": {"state": state, "inc": inc},
            "has_uint32": 0,
            "uinteger": 0,
        }

    # -- raw material -----------------------------------------------------
    def raw(self, n: int) -> np.ndarray:
        return self._bg.random_raw(n)

    def _u01(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def _std_normal(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            pairs = (n - filled + 1) // 2
            u = 2.0 * self._u01(2 * pairs) - 1.0
            x, y = u[0::2], u[1::2]
            s = x * x + y * y
            ok = (s > 0.0) & (s < 1.0)
            x, y, s = x[ok], y[ok], s[ok]
            f = np.sqrt(-2.0 * np.log(s) / s)
            z = np.column_stack((x * f, y * f)).ravel()
            take = min(z.size, n - filled)
            out[filled:filled + take] = z[:take]
            filled += take
        return out

    # -- public distributions ---------------------------------------------
    def random(self, size=None):
        n, shape = _count(size)
        return _shaped(self._u01(n), shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        n, shape = _count(size)
        return _shaped(low + (high - low) * self._u01(n), shape)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)`` (or ``[0, low)`` when ``high`` is omitted)."""
        if high is None:
            low, high = 0, low
        if high <= low:
            raise ValueError("integers: high must exceed low")
        n, shape = _count(size)
        vals = low + np.floor(self._u01(n) * (high - low)).astype(np.int64)
        return _shaped(vals, shape)

    def normal(self, mean=0.0, sd=1.0, size=None):
        if sd < 0:
            raise ValueError("normal: sd must be non-negative")
        n, shape = _count(size)
        if sd == 0:
            return _shaped(np.full(n, float(mean)), shape)
        return _shaped(mean + sd * self._std_normal(n), shape)

    def poisson(self, lam, size=None):
        if not lam > 0:
            raise ValueError("poisson: lam must be positive")
        n, shape = _count(size)
        if lam <= 30:
            vals = self._poisson_inversion(float(lam), n)
        else:
            vals = self._poisson_ptrs(float(lam), n)
        return _shaped(vals, shape)

    def _poisson_inversion(self, lam: float, n: int) -> np.ndarray:
        kmax = int(lam + 12.0 * np.sqrt(lam) + 30)
        k = np.arange(kmax + 1)
        log_pmf = -lam + k * np.log(lam) - gammaln(k + 1)
        cdf = np.cumsum(np.exp(log_pmf))
        u = self._u01(n)
        # smallest k with u < F(k)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, kmax).astype(np.int64)

    def _poisson_ptrs(self, lam: float, n: int) -> np.ndarray:
        slam = np.sqrt(lam)
        loglam = np.log(lam)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            r = n - filled
            uv = self._u01(2 * r)
            u = uv[0::2] - 0.5
            v = uv[1::2]
            us = 0.5 - np.abs(u)
            k = np.floor((2.0 * a / us + b) * u + lam + 0.43)
            quick = (us >= 0.07) & (v <= vr)
            hopeless = (k < 0) | ((us < 0.013) & (v > us))
            with np.errstate(divide="ignore", invalid="ignore"):
                lhs = np.log(v) + np.log(invalpha) - np.log(a / (us * us) + b)
                rhs = -lam + k * loglam - gammaln(np.maximum(k, 0) + 1)
            ok = quick | (~hopeless & (lhs <= rhs))
            acc = k[ok].astype(np.int64)
            take = min(acc.size, r)
            out[filled:filled + take] = acc[:take]
            filled += take
        return out

    def _gamma_std(self, shape: float, n: int) -> np.ndarray:
        if shape < 1.0:
            g = self._gamma_std(shape + 1.0, n)
            return g * self._u01(n) ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(n)
        filled = 0
        while filled < n:
            r = n - filled
            x = self._std_normal(r)
            u = self._u01(r)
            v = (1.0 + c * x) ** 3
            with np.errstate(divide="ignore", invalid="ignore"):
                ok = (v > 0) & (np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v))
            acc = d * v[ok]
            take = min(acc.size, r)
            out[filled:filled + take] = acc[:take]
            filled += take
        return out

    def gamma(self, shape, scale=1.0, size=None):
        if not shape > 0 or not scale > 0:
            raise ValueError("gamma: shape and scale must be positive")
        n, shp = _count(size)
        return _shaped(scale * self._gamma_std(float(shape), n), shp)

    def beta(self, a, b, size=None):
        if not a > 0 or not b > 0:
            raise ValueError("beta: shape parameters must be positive")
        n, shape = _count(size)
        x = self._gamma_std(float(a), n)
        y = self._gamma_std(float(b), n)
        return _shaped(x / (x + y), shape)

    def permutation(self, x):
        arr = np.arange(x) if np.isscalar(x) else np.array(x, copy=True)
        n = len(arr)
        if n < 2:
            return arr
        u = self._u01(n - 1)
        js = np.floor(u * np.arange(n, 1, -1)).astype(np.int64)
        for i, j in zip(range(n - 1, 0, -1), js):
            arr[i], arr[j] = arr[j], arr[i]
        return arr

    def mvnorm(self, mean, sigma, size=None):
        mean = np.asarray(mean, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        d = mean.shape[0]
        if sigma.shape != (d, d):
            raise ValueError("incompatible arguments: 'Sigma' must be a square matrix matching 'mu'")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("'Sigma' is not symmetric")
        factor = _psd_factor(sigma)
        n, shape = _count(size)
        z = self._std_normal(n * d).reshape(n, d)
        draws = mean + z @ factor.T
        return draws[0] if shape == () else draws.reshape(shape + (d,))


def _psd_factor(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(sigma)
    tol = 1e-10 * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        raise ValueError("'Sigma' is not positive definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def replicate_stream(global_seed: int, assignments, rep_id: int) -> RngStream:
    return RngStream(derive_seed(global_seed, StreamKey.replicate(assignments, rep_id)))
