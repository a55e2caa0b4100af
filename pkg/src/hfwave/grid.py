"""Periodic space-time grids and the discrete calculus used everywhere else.

Space is a flat torus (period L per axis, Nx samples, exact wrap-around);
time is a finite slab [0, T) sampled at Nt levels.  All stencils are
second-order central, with one-sided second-order closures at the two
time-slab ends.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpacetimeGrid:
    """Uniform grid on [0,T) x torus^n with n in {1,2}."""

    n: int
    T: float
    L: float
    Nt: int
    Nx: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.n}")
        if self.T <= 0 or self.L <= 0 or self.Nt < 8 or self.Nx < 4:
            raise ValueError("need T, L > 0 and Nt >= 8, Nx >= 4")

    @property
    def dt(self):
        return self.T / self.Nt

    @property
    def dx(self):
        return self.L / self.Nx

    @property
    def shape(self):
        return (self.Nt,) + (self.Nx,) * self.n

    @property
    def ndim(self):
        return 1 + self.n

    @property
    def cell_volume(self):
        return self.dt * self.dx**self.n

    @property
    def volume(self):
        return self.T * self.L**self.n

    def axes(self):
        t = np.arange(self.Nt) * self.dt
        xs = [np.arange(self.Nx) * self.dx for _ in range(self.n)]
        return (t, *xs)

    def coords(self):
        """Broadcast-ready coordinate arrays (t, x1[, x2])."""
        return np.meshgrid(*self.axes(), indexing="ij", sparse=True)

    def dense_coords(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def sample(self, fn):
        """Sample fn(t, x1[, x2]) on the grid."""
        out = np.asarray(fn(*self.coords()), dtype=float)
        return np.broadcast_to(out, self.shape).copy() if out.shape != self.shape else out

    def freqs(self):
        """Physical angular-frequency lattices (xi_0, xi_1[, xi_2]), broadcastable."""
        ft = 2 * np.pi * np.fft.fftfreq(self.Nt, d=self.dt)
        fx = [2 * np.pi * np.fft.fftfreq(self.Nx, d=self.dx) for _ in range(self.n)]
        return np.meshgrid(ft, *fx, indexing="ij", sparse=True)

    def mode_numbers(self):
        """Integer FFT mode lattices per axis, broadcastable."""
        kt = np.fft.fftfreq(self.Nt, d=1.0 / self.Nt)
        kx = [np.fft.fftfreq(self.Nx, d=1.0 / self.Nx) for _ in range(self.n)]
        return np.meshgrid(kt, *kx, indexing="ij", sparse=True)

    def coarsen_time(self, factor):
        return SpacetimeGrid(self.n, self.T, self.L, self.Nt // factor, self.Nx)

    def refine(self, factor=2):
        return SpacetimeGrid(self.n, self.T, self.L, self.Nt * factor, self.Nx * factor)

    # ---- discrete calculus -------------------------------------------------

    def diff(self, f, axis):
        """First derivative: periodic central in space, edge-aware in time."""
        f = np.asarray(f)
        if axis == 0:
            return np.gradient(f, self.dt, axis=0, edge_order=2)
        h = self.dx
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)

    def diff2(self, f, axis):
        """Pure second derivative along one axis, uniformly second order."""
        f = np.asarray(f)
        if axis != 0:
            h = self.dx
            return (np.roll(f, -1, axis=axis) - 2 * f + np.roll(f, 1, axis=axis)) / h**2
        h = self.dt
        out = np.empty_like(f, dtype=float)
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
        return out

    def diff_mixed(self, f, axis_a, axis_b):
        """Mixed second derivative; spatial axis applied first so the
        time-edge closure never differentiates a one-sided error field."""
        if axis_a == axis_b:
            return self.diff2(f, axis_a)
        inner, outer = max(axis_a, axis_b), min(axis_a, axis_b)
        return self.diff(self.diff(f, inner), outer)

    def gradient(self, f):
        """All first derivatives, stacked on a leading axis."""
        return np.stack([self.diff(f, a) for a in range(self.ndim)])

    def time_diff_hi(self, f):
        """Fourth-order first time derivative (diagnostics only)."""
        f = np.asarray(f)
        h = self.dt
        out = np.empty_like(f, dtype=float)
        out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
        for k in (0, 1):
            out[k] = (-25 * f[k] + 48 * f[k + 1] - 36 * f[k + 2]
                      + 16 * f[k + 3] - 3 * f[k + 4]) / (12 * h)
            out[-1 - k] = -(-25 * f[-1 - k] + 48 * f[-2 - k] - 36 * f[-3 - k]
                            + 16 * f[-4 - k] - 3 * f[-5 - k]) / (12 * h)
        return out

    def spectral_diff_space(self, f, axis):
        """Spectral spatial derivative (periodic axes only)."""
        if axis == 0:
            raise ValueError("time axis is not periodic")
        k = 2 * np.pi * np.fft.fftfreq(self.Nx, d=self.dx)
        shape = [1] * np.ndim(f)
        shape[axis] = self.Nx
        fhat = np.fft.fft(f, axis=axis)
        out = np.fft.ifft(1j * k.reshape(shape) * fhat, axis=axis)
        return out.real if np.isrealobj(f) else out

    def spectral_diff_slice(self, f, spatial_axis):
        """Spectral derivative of a single-time spatial slice along axis i."""
        k = 2 * np.pi * np.fft.fftfreq(self.Nx, d=self.dx)
        shape = [1] * np.ndim(f)
        shape[spatial_axis] = self.Nx
        fhat = np.fft.fft(f, axis=spatial_axis)
        out = np.fft.ifft(1j * k.reshape(shape) * fhat, axis=spatial_axis)
        return out.real if np.isrealobj(f) else out

    def integrate(self, f, weight=None):
        """Midpoint quadrature: sum * cell volume, optional weight field."""
        f = np.asarray(f)
        if weight is not None:
            f = f * weight
        return float(f.sum()) * self.cell_volume

    def interior_slice(self, skip=3):
        """Slab interior, away from the one-sided time closures."""
        return (slice(skip, self.Nt - skip),) + (slice(None),) * self.n


def norm_sup(f):
    return float(np.abs(f).max())


def norm_lp(grid, f, p=2):
    return float(grid.integrate(np.abs(f) ** p)) ** (1.0 / p)


def loglog_slope(x, y):
    """Least-squares slope of log|y| vs log x, with a half-width estimate.

    Returns (slope, halfwidth); halfwidth is the 1-sigma standard error.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if np.any(y == 0):
        raise ValueError("zero values have no log-log slope")
    lx, ly = np.log(x), np.log(y)
    if len(x) == 2:
        return float((ly[1] - ly[0]) / (lx[1] - lx[0])), np.inf
    coef, cov = np.polyfit(lx, ly, 1, cov=True)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


def richardson(values, ratio):
    """Extrapolate a geometric-ladder sequence to its limit.

    Assumes first-order convergence in the ladder parameter: the limit is
    read off the two finest levels; the error bar is the spread of the
    last three raw values around the extrapolant.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise ValueError("need at least two ladder levels")
    limit = v[-1] + (v[-1] - v[-2]) * ratio / (1.0 - ratio)
    tail = v[-3:] if len(v) >= 3 else v[-2:]
    err = float(np.max(np.abs(tail - limit)))
    return float(limit), err
