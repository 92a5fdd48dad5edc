"""Loop bodies and per-iteration cost vectors.

Two kinds of workload feed the engine: the Mandelbrot escape-time kernel
(really computed, highly irregular) and synthetic cost vectors drawn from a
seeded distribution.  Synthetic vectors are reproducible bit for bit across
platforms because they come from SplitMix64, a counter-based 64-bit
generator whose reference outputs are pinned in the test-suite:

    seed 1234567 -> 6457827717110365317, 3203168211198807973,
                    9817491932198370423, 4593380528125082431,
                    16408922859458223821
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


# ---------------------------------------------------------------------------
# SplitMix64
# ---------------------------------------------------------------------------

_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(seed: int, count: int) -> np.ndarray:
    """The first ``count`` SplitMix64 outputs for ``seed`` as uint64.

    Output ``i`` depends only on ``seed + (i + 1) * gamma``, so the stream can
    be evaluated in one vectorised pass.
    """
    seed &= _MASK
    with np.errstate(over="ignore"):
        counters = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed) + counters * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, count: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of each SplitMix64 output."""
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


# ---------------------------------------------------------------------------
# Workload description
# ---------------------------------------------------------------------------


class WorkloadKind(enum.Enum):
    MANDELBROT = "mandelbrot"
    SYNTHETIC = "synthetic"
    FILE = "file"


DISTRIBUTIONS = ("constant", "uniform", "gaussian", "exponential")


@dataclass(frozen=True)
class MandelbrotParams:
    width: int = 256
    height: int = 256
    max_iterations: int = 10_000
    window: tuple = (-2.0, 1.0, -1.5, 1.5)  # x_min, x_max, y_min, y_max

    @property
    def pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class SyntheticParams:
    distribution: str = "exponential"
    mean: float = 1000.0
    stddev: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"unknown distribution {self.distribution!r}; "
                f"accepted: {', '.join(DISTRIBUTIONS)}"
            )
        if not self.mean > 0:
            raise ValueError("mean must be > 0")
        if self.stddev < 0:
            raise ValueError("stddev must be >= 0")
        if self.distribution == "exponential" and self.stddev > self.mean:
            raise ValueError("exponential costs need stddev <= mean")


# Imbalance profiles used by the experiment recipes.
PSIA_LIKE = SyntheticParams("gaussian", mean=1000.0, stddev=300.0)
MANDELBROT_LIKE = SyntheticParams("exponential", mean=1000.0, stddev=1000.0)


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    mandelbrot: MandelbrotParams = field(default_factory=MandelbrotParams)
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    path: Optional[str] = None


# ---------------------------------------------------------------------------
# Mandelbrot
# ---------------------------------------------------------------------------


def _pixel_coordinate(index: int, params: MandelbrotParams):
    x_min, x_max, y_min, y_max = params.window
    row, col = divmod(index, params.width)
    dx = (x_max - x_min) / (params.width - 1) if params.width > 1 else 0.0
    dy = (y_max - y_min) / (params.height - 1) if params.height > 1 else 0.0
    return x_min + col * dx, y_min + row * dy


def mandelbrot_kernel(index: int, params: MandelbrotParams) -> int:
    """Escape count of pixel ``index`` (row-major) under z <- z^2 + c."""
    if not 0 <= index < params.pixels:
        raise IndexError(f"pixel {index} outside {params.width}x{params.height}")
    cr, ci = _pixel_coordinate(index, params)
    zr = zi = 0.0
    count = 0
    while count < params.max_iterations and zr * zr + zi * zi <= 4.0:
        zr, zi = zr * zr - zi * zi + cr, 2.0 * zr * zi + ci
        count += 1
    return count


def _mandelbrot_range_py(start, end, width, height, max_iter, x_min, x_max, y_min, y_max, out):
    dx = (x_max - x_min) / (width - 1) if width > 1 else 0.0
    dy = (y_max - y_min) / (height - 1) if height > 1 else 0.0
    for index in range(start, end):
        row = index // width
        col = index - row * width
        cr = x_min + col * dx
        ci = y_min + row * dy
        zr = 0.0
        zi = 0.0
        count = 0
        while count < max_iter and zr * zr + zi * zi <= 4.0:
            t = zr * zr - zi * zi + cr
            zi = 2.0 * zr * zi + ci
            zr = t
            count += 1
        out[index] = count


if numba is not None:
    _mandelbrot_range = numba.njit(nogil=True, cache=False)(_mandelbrot_range_py)
else:  # pragma: no cover
    _mandelbrot_range = _mandelbrot_range_py


# ---------------------------------------------------------------------------
# Kernels for the real backend
# ---------------------------------------------------------------------------


class KernelError(RuntimeError):
    """A loop body failed; ``iteration`` is the failing index."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"kernel failed on iteration {iteration}: {cause!r}")
        self.iteration = iteration
        self.cause = cause


class Kernel:
    """A loop body.  Subclasses override ``__call__`` or ``run_range``."""

    def __call__(self, index: int):
        raise NotImplementedError

    def run_range(self, start: int, end: int, out=None) -> None:
        for i in range(start, end):
            try:
                value = self(i)
            except Exception as exc:
                raise KernelError(i, exc) from exc
            if out is not None:
                out[i] = value


class FunctionKernel(Kernel):
    def __init__(self, func):
        self.func = func

    def __call__(self, index):
        return self.func(index)


class MandelbrotKernel(Kernel):
    """Escape-time kernel; ranges run compiled and without the GIL."""

    def __init__(self, params: MandelbrotParams):
        self.params = params
        self._scratch = None

    def __call__(self, index):
        return mandelbrot_kernel(index, self.params)

    def warm_up(self) -> None:
        out = np.zeros(1, dtype=np.int64)
        p = self.params
        _mandelbrot_range(0, 0, p.width, p.height, p.max_iterations, *p.window, out)

    def run_range(self, start, end, out=None):
        p = self.params
        if out is None:
            if self._scratch is None:
                self._scratch = np.zeros(p.pixels, dtype=np.int64)
            out = self._scratch
        _mandelbrot_range(start, end, p.width, p.height, p.max_iterations, *p.window, out)

    def serial(self) -> np.ndarray:
        out = np.zeros(self.params.pixels, dtype=np.int64)
        self.run_range(0, self.params.pixels, out)
        return out


class SleepKernel(Kernel):
    """Waits ``costs[i]`` nanoseconds per iteration while releasing the GIL,
    so thread groups overlap like dedicated cores would."""

    def __init__(self, costs: Sequence[int]):
        self.costs = np.asarray(costs, dtype=np.int64)
        self._prefix = np.concatenate(([0], np.cumsum(self.costs)))

    def __call__(self, index):
        time.sleep(self.costs[index] / 1e9)
        return index

    def run_range(self, start, end, out=None):
        total = int(self._prefix[end] - self._prefix[start])
        if total > 0:
            deadline = time.perf_counter_ns() + total
            time.sleep(total / 1e9)
            while time.perf_counter_ns() < deadline:
                time.sleep(0)
        if out is not None:
            out[start:end] = range(start, end)


class SpinKernel(Kernel):
    """Busy-waits ``costs[i]`` nanoseconds per iteration (holds the GIL)."""

    def __init__(self, costs: Sequence[int]):
        self.costs = [int(c) for c in costs]

    def __call__(self, index):
        deadline = time.perf_counter_ns() + self.costs[index]
        while time.perf_counter_ns() < deadline:
            pass
        return index


# ---------------------------------------------------------------------------
# Cost vectors
# ---------------------------------------------------------------------------


def generate_costs(spec: Union[WorkloadSpec, SyntheticParams], n: int) -> List[int]:
    """A deterministic vector of ``n`` non-negative integer costs in ns."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(spec, SyntheticParams):
        spec = WorkloadSpec(WorkloadKind.SYNTHETIC, synthetic=spec)

    if spec.kind is WorkloadKind.FILE:
        costs = read_costs(spec.path)
        if len(costs) != n:
            raise ValueError(f"{spec.path} holds {len(costs)} costs, expected {n}")
        return costs
    if spec.kind is WorkloadKind.MANDELBROT:
        if spec.mandelbrot.pixels != n:
            raise ValueError(
                f"mandelbrot {spec.mandelbrot.width}x{spec.mandelbrot.height} "
                f"has {spec.mandelbrot.pixels} pixels, expected {n}"
            )
        counts = MandelbrotKernel(spec.mandelbrot).serial()
        return [int(c) * MANDELBROT_NS_PER_ESCAPE_STEP for c in counts]

    s = spec.synthetic
    if s.distribution == "constant":
        return [int(round(s.mean))] * n
    if s.distribution == "uniform":
        half_width = math.sqrt(3.0) * s.stddev
        samples = s.mean - half_width + 2.0 * half_width * uniform01(s.seed, n)
    elif s.distribution == "exponential":
        # Shifted exponential: mean ``mean``, standard deviation ``stddev``.
        samples = (s.mean - s.stddev) - s.stddev * np.log1p(-uniform01(s.seed, n))
    else:
        # Box-Muller on consecutive pairs of the stream.
        u = uniform01(s.seed, 2 * n)
        u1, u2 = u[0::2], u[1::2]
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        samples = s.mean + s.stddev * radius * np.cos(2.0 * math.pi * u2)
    return [int(x) for x in np.rint(np.maximum(samples, 0.0))]


# Escape-count to virtual-time conversion for simulating Mandelbrot.
MANDELBROT_NS_PER_ESCAPE_STEP = 10


def read_costs(path) -> List[int]:
    """Parse a cost file: one non-negative integer per line, ``#`` comments."""
    costs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            value = int(line)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not an integer: {line!r}") from None
        if value < 0:
            raise ValueError(f"{path}:{lineno}: negative cost {value}")
        costs.append(value)
    return costs


def write_costs(path, costs: Sequence[int]) -> None:
    Path(path).write_text("".join(f"{int(c)}\n" for c in costs))


def kernel_for(spec: WorkloadSpec, costs: Optional[Sequence[int]] = None) -> Kernel:
    """The real-backend loop body for a workload."""
    if spec.kind is WorkloadKind.MANDELBROT:
        return MandelbrotKernel(spec.mandelbrot)
    if costs is None:
        raise ValueError("synthetic and file workloads need their cost vector")
    return SleepKernel(costs)
