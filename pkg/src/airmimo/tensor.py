"""Complex tensor primitives shared by every other module.

Complex tensors are plain ``numpy.ndarray`` objects of dtype ``complex128``
indexed in (user, subcarrier, antenna) order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from airmimo.errors import NumericError

__all__ = [
    "RandomSource",
    "as_complex",
    "hermitian_solve",
    "pack_complex_to_real",
    "sample_complex_gaussian",
    "unpack_real_to_complex",
]

_UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RandomSource:
    """Seedable, splittable random source.

    ``(seed, stream_index)`` fully determines the draw sequence. Independent
    sub-streams for different purposes inside one trial are obtained with
    ``generator(tag)``; the tags never collide with other stream indices
    because they are appended to the spawn key.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_index"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _UINT64_MAX:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self, tag: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index, tag))
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, stream_index: int) -> "RandomSource":
        return RandomSource(self.seed, stream_index)


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng).__name__}")


def as_complex(x, name: str = "array") -> np.ndarray:
    out = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name} contains non-finite entries")
    return out


def pack_complex_to_real(m) -> np.ndarray:
    """Stack real parts then imaginary parts along the last axis.

    An ``R x C`` complex matrix becomes an ``R x 2C`` real matrix; leading
    batch axes are carried through unchanged.
    """
    m = as_complex(m, "m")
    return np.concatenate([m.real, m.imag], axis=-1)


def unpack_real_to_complex(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 0 or m.shape[-1] % 2:
        raise ValueError(f"last dimension must be even to unpack, got shape {m.shape}")
    half = m.shape[-1] // 2
    return m[..., :half] + 1j * m[..., half:]


def hermitian_solve(a, b, *, hermitian_tol: float = 1e-12) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian positive-definite ``a``.

    Works on stacks: ``a`` of shape ``(..., N, N)`` and ``b`` of shape
    ``(..., N, M)`` or ``(..., N)``. Uses a Cholesky factorization and two
    triangular solves.

    Raises
    ------
    NumericError
        If ``a`` is not Hermitian or not positive definite. The message
        includes the 2-norm condition number of the offending matrix.
    """
    a = as_complex(a, "a")
    b = as_complex(b, "b")
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"a must be square, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2))), initial=0.0) > hermitian_tol * scale:
        raise NumericError("a is not Hermitian within tolerance")
    vector_rhs = b.ndim == a.ndim - 1
    if vector_rhs:
        b = b[..., None]
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(a)
        raise NumericError(
            f"matrix is not positive definite (condition number {np.max(cond):.3e})"
        ) from exc
    y = np.linalg.solve(chol, b)
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), y)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"solve produced non-finite values (condition number {np.max(np.linalg.cond(a)):.3e})")
    return x[..., 0] if vector_rhs else x


def sample_complex_gaussian(rng, n, variance: float = 1.0) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric CN(0, variance) samples.

    ``n`` may be an int or a shape tuple. Real and imaginary parts each
    carry ``variance / 2``.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    gen = _rng(rng)
    shape = (n,) if np.isscalar(n) else tuple(n)
    draw = gen.standard_normal(shape + (2,))
    return np.sqrt(variance / 2.0) * (draw[..., 0] + 1j * draw[..., 1])
