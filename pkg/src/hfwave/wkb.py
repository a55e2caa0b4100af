"""Geometric-optics families u_eps = eps a(x) cos(phi(x)/eps) with a null
phase, and their exact defect measure (the oracle the estimator is checked
against).

The phase is stored as phi = w.x + chi with a constant spatial winding
covector w and a periodic remainder chi, so spatial derivatives can be
taken spectrally while phi itself is free to wind around the torus.  The
null phase is propagated by bicharacteristic rays (phi is constant along
them), the amplitude by the first-order transport rule chosen so that the
wave-equation residual of u_eps is O(eps).
"""

from dataclasses import dataclass, field

import numpy as np

from .families import EpsilonFamily
from .geometry import MetricEvaluator, box_apply
from .grid import norm_lp, norm_sup
from .microlocal import DefectMeasureHistogram


class CausticError(RuntimeError):
    def __init__(self, time, jmin):
        super().__init__(f"ray-map Jacobian collapsed to {jmin:.3e} at t={time:.6g}; "
                         "amplitude transport is invalid beyond the first caustic")
        self.time = time
        self.jacobian = jmin


@dataclass
class PhaseField:
    """Null phase phi = winding.x + chi(t,x) on the slab."""

    grid: object
    winding: np.ndarray
    chi: np.ndarray
    branch: str = "future"
    residual_max: float = None
    _dphi: np.ndarray = field(default=None, repr=False)

    def phi(self):
        coords = self.grid.coords()
        out = self.chi.copy()
        for i in range(self.grid.n):
            out += self.winding[i] * coords[i + 1]
        return out

    def dphi(self):
        """Gradient covector field, shape (1+n, *grid.shape)."""
        if self._dphi is None:
            grid = self.grid
            comps = [grid.time_diff_hi(self.chi)]
            for i in range(grid.n):
                comps.append(self.winding[i] + grid.spectral_diff_space(self.chi, i + 1))
            self._dphi = np.stack(comps)
        return self._dphi

    def eikonal_residual(self, metric, normalized=True):
        """Pointwise g^{ab} d_a phi d_b phi, optionally over |dphi|^2."""
        dp = self.dphi()
        res = np.einsum("ab...,a...,b...->...", metric.ginv, dp, dp)
        if not normalized:
            return res
        return res / np.maximum((dp ** 2).sum(axis=0), 1e-300)


def _null_root(ginv_pts, xi_spatial, sign):
    """xi_0 from the light-cone identity: xi_0 = beta.xi + sign * N |xi|_gt."""
    g00 = ginv_pts[:, 0, 0]
    beta = -ginv_pts[:, 0, 1:] / g00[:, None]
    gt = ginv_pts[:, 1:, 1:] - np.einsum("pi,pj->pij", ginv_pts[:, 0, 1:],
                                         ginv_pts[:, 0, 1:]) / g00[:, None, None]
    quad = np.einsum("pij,pi,pj->p", gt, xi_spatial, xi_spatial)
    lapse = 1.0 / np.sqrt(-g00)
    return np.einsum("pi,pi->p", beta, xi_spatial) + sign * lapse * np.sqrt(quad)


def eikonal_solve(metric, winding, chi0=None, branch="future", substeps=2,
                  caustic_tol=1e-3):
    """Propagate an initial spatial phase through the slab along null rays.

    The t=0 phase is winding.x + chi0(x); the time root of the light-cone
    identity is the future branch by default ("past" selects the other
    sign).  Rays are launched from every spatial grid point, integrated in
    coordinate time with RK4, and the (constant-along-rays) phase is
    interpolated back to the uniform grid per time level.  The ray-map
    Jacobian is monitored; collapse below caustic_tol halts propagation.
    """
    grid = metric.grid
    n = grid.n
    sign = {"future": -1.0, "past": +1.0}[branch]
    if chi0 is None:
        chi0 = np.zeros((grid.Nx,) * n)
    chi0 = np.asarray(chi0, dtype=float)
    winding = np.asarray(winding, dtype=float).reshape(n)

    t_ax, *x_ax = grid.axes()
    if n == 1:
        launch = x_ax[0][:, None].copy()
        chi0_flat = chi0
        dchi0 = grid.spectral_diff_space(chi0[None, :], 1)[0]
        xi = (winding[0] + dchi0)[:, None].copy()
    else:
        X1, X2 = np.meshgrid(x_ax[0], x_ax[1], indexing="ij")
        launch = np.stack([X1.ravel(), X2.ravel()], axis=1)
        chi0_flat = chi0.ravel()
        d1 = grid.spectral_diff_space(chi0[None], 1)[0]
        d2 = grid.spectral_diff_space(chi0[None], 2)[0]
        xi = np.stack([winding[0] + d1.ravel(), winding[1] + d2.ravel()], axis=1)

    phi0 = chi0_flat + launch @ winding
    ev = MetricEvaluator(metric)
    if np.min(np.einsum("pi,pi->p", xi, xi)) <= 0:
        raise ValueError("initial spatial phase gradient vanishes somewhere")

    def rhs(t, X, Xi):
        coords = np.concatenate([np.full((len(X), 1), t), X], axis=1)
        gi = ev.inverse(coords)
        xi0 = _null_root(gi, Xi, sign)
        xi_full = np.concatenate([xi0[:, None], Xi], axis=1)
        denom = np.einsum("pb,pb->p", gi[:, 0, :], xi_full)
        vx = np.einsum("pib,pb->pi", gi[:, 1:, :], xi_full) / denom[:, None]
        dgi = ev.inverse_deriv(coords)
        dH = 0.5 * np.einsum("pcab,pa,pb->pc", dgi, xi_full, xi_full)
        vxi = -dH[:, 1:] / denom[:, None]
        return vx, vxi

    X = launch.copy()
    chis = [chi0.copy()]
    h = grid.dt / substeps
    jmin_floor = 1.0

    def jacobian(Xc):
        disp = Xc - launch
        if n == 1:
            dcol = disp[:, 0].reshape(grid.Nx)
            ddisp = (np.roll(dcol, -1) - np.roll(dcol, 1)) / (2 * grid.dx)
            return 1.0 + ddisp
        d11 = _wrap_diff(disp[:, 0].reshape(grid.Nx, grid.Nx), 0, grid.dx)
        d12 = _wrap_diff(disp[:, 0].reshape(grid.Nx, grid.Nx), 1, grid.dx)
        d21 = _wrap_diff(disp[:, 1].reshape(grid.Nx, grid.Nx), 0, grid.dx)
        d22 = _wrap_diff(disp[:, 1].reshape(grid.Nx, grid.Nx), 1, grid.dx)
        return ((1 + d11) * (1 + d22) - d12 * d21).ravel()

    for k in range(1, grid.Nt):
        t = t_ax[k - 1]
        for s in range(substeps):
            ts = t + s * h
            k1x, k1xi = rhs(ts, X, xi)
            k2x, k2xi = rhs(ts + h / 2, X + h / 2 * k1x, xi + h / 2 * k1xi)
            k3x, k3xi = rhs(ts + h / 2, X + h / 2 * k2x, xi + h / 2 * k2xi)
            k4x, k4xi = rhs(ts + h, X + h * k3x, xi + h * k3xi)
            X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            xi = xi + h / 6 * (k1xi + 2 * k2xi + 2 * k3xi + k4xi)
        J = jacobian(X)
        jmin = float(np.min(np.abs(J)))
        jmin_floor = min(jmin_floor, jmin)
        if jmin < caustic_tol:
            raise CausticError(t_ax[k], jmin)
        chis.append(_scatter_to_grid(grid, X, phi0 - X @ winding))

    phase = PhaseField(grid, winding, np.stack(chis), branch=branch)
    res = phase.eikonal_residual(metric)
    phase.residual_max = float(np.abs(res).max())
    return phase


def _wrap_diff(f2d, axis, h):
    return (np.roll(f2d, -1, axis=axis) - np.roll(f2d, 1, axis=axis)) / (2 * h)


def _scatter_to_grid(grid, X, values):
    """Interpolate periodic ray samples back onto the uniform spatial grid."""
    from scipy.interpolate import CubicSpline

    if grid.n == 1:
        xw = X[:, 0] % grid.L
        order = np.argsort(xw, kind="stable")
        xs, vs = xw[order], values[order]
        xs = np.concatenate([xs, [xs[0] + grid.L]])
        vs = np.concatenate([vs, [vs[0]]])
        # guard against coincident samples after wrapping
        keep = np.concatenate([[True], np.diff(xs) > 1e-12])
        spline = CubicSpline(xs[keep], vs[keep], bc_type="periodic")
        return spline(np.arange(grid.Nx) * grid.dx)
    from scipy.interpolate import CloughTocher2DInterpolator

    pts = X % grid.L
    margin = 0.2 * grid.L
    tiles, vals = [pts], [values]
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            if sx == sy == 0:
                continue
            shifted = pts + np.array([sx, sy]) * grid.L
            keep = np.all((shifted > -margin) & (shifted < grid.L + margin), axis=1)
            if np.any(keep):
                tiles.append(shifted[keep])
                vals.append(values[keep])
    interp = CloughTocher2DInterpolator(np.concatenate(tiles), np.concatenate(vals))
    x = np.arange(grid.Nx) * grid.dx
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return interp(np.stack([X1.ravel(), X2.ravel()], axis=1)).reshape(grid.Nx, grid.Nx)


def box_linear_part(metric, winding):
    """Box applied to the non-periodic linear phase piece w.x:
    (1/sqrt|g|) d_a (sqrt|g| g^{ai}) w_i."""
    grid = metric.grid
    out = np.zeros(grid.shape)
    for i in range(grid.n):
        acc = np.zeros(grid.shape)
        for a in range(grid.ndim):
            acc += grid.diff(metric.sqrtdet * metric.ginv[a, i + 1], a)
        out += winding[i] * acc / metric.sqrtdet
    return out


def transport_solve(metric, phase, a0, spectral_cfl=0.85):
    """Propagate the leading amplitude: 2 g^{ab} d_a phi d_b a + (box phi) a = 0.

    Method of lines: RK4 in time, spectral spatial derivatives, metric and
    phase coefficients averaged onto half steps.  The slab must satisfy
    dt <= spectral_cfl * dx / v_max for the advection speed v_max.
    """
    grid = metric.grid
    n = grid.n
    dphi = phase.dphi()
    gi = metric.ginv
    denom = 2.0 * np.einsum("b...,b...->...", gi[0], dphi)
    if np.any(np.abs(denom) < 1e-12):
        raise ValueError("transport direction degenerates: g^{0b} d_b phi vanishes")
    adv = np.stack([2.0 * np.einsum("b...,b...->...", gi[i + 1], dphi) / denom
                    for i in range(n)])
    boxphi = (box_apply(metric, phase.chi) + box_linear_part(metric, phase.winding))
    react = boxphi / denom

    vmax = float(np.abs(adv).max())
    if grid.dt > spectral_cfl * grid.dx / max(vmax, 1e-300) * (2.8 / np.pi):
        raise ValueError(
            f"transport needs dt <= {spectral_cfl * 2.8 / np.pi:.3f} dx / v_max "
            f"= {spectral_cfl * (2.8 / np.pi) * grid.dx / vmax:.3e}, got dt={grid.dt:.3e}")

    def rhs(a, adv_k, react_k):
        out = -react_k * a
        for i in range(n):
            out -= adv_k[i] * grid.spectral_diff_slice(a, i)
        return out

    a = np.empty(grid.shape)
    a[0] = a0
    for k in range(grid.Nt - 1):
        c0 = (adv[:, k], react[k])
        c1 = (0.5 * (adv[:, k] + adv[:, k + 1]), 0.5 * (react[k] + react[k + 1]))
        c2 = (adv[:, k + 1], react[k + 1])
        y = a[k]
        k1 = rhs(y, *c0)
        k2 = rhs(y + 0.5 * grid.dt * k1, *c1)
        k3 = rhs(y + 0.5 * grid.dt * k2, *c1)
        k4 = rhs(y + grid.dt * k3, *c2)
        a[k + 1] = y + grid.dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return a


def required_nx(L, eps_min, points_per_wavelength=16):
    """Grid size demanded by the resolution rule dx <= eps_min / P,
    rounded up to a power of two."""
    raw = int(np.ceil(L * points_per_wavelength / eps_min))
    return 1 << (raw - 1).bit_length()


@dataclass
class WkbFamily:
    """Sampled oscillating family u_eps = eps a cos(phi/eps) on one grid."""

    grid: object
    phase: PhaseField
    amplitude: np.ndarray
    eps: list
    fields: list
    norms: dict

    def scalar_family(self):
        return EpsilonFamily(self.grid, list(self.eps), list(self.fields))

    def gradient_family(self):
        """Analytic gradients d u_eps = eps da cos - a sin dphi (exact for
        the sampled family, no stencil penalty at few points/wavelength)."""
        grid = self.grid
        phi = self.phase.phi()
        dphi = self.phase.dphi()
        da = np.stack([grid.time_diff_hi(self.amplitude)]
                      + [grid.spectral_diff_space(self.amplitude, i + 1)
                         for i in range(grid.n)])
        fields = []
        for eps in self.eps:
            c, s = np.cos(phi / eps), np.sin(phi / eps)
            fields.append(eps * da * c - self.amplitude * s * dphi)
        limit = np.zeros((grid.ndim,) + grid.shape)
        return EpsilonFamily(grid, list(self.eps), fields, limit=limit)

    def residual_family(self, metric):
        """box_g u_eps from the analytic expansion: the O(eps) remainder
        plus eikonal/transport defects (used as the source ladder)."""
        grid = self.grid
        phi = self.phase.phi()
        dphi = self.phase.dphi()
        gi = metric.ginv
        eik = np.einsum("ab...,a...,b...->...", gi, dphi, dphi)
        boxphi = box_apply(metric, self.phase.chi) + box_linear_part(metric, self.phase.winding)
        boxa = box_apply(metric, self.amplitude)
        da = np.stack([grid.diff(self.amplitude, a) for a in range(grid.ndim)])
        cross = 2.0 * np.einsum("ab...,a...,b...->...", gi, dphi, da) \
            + self.amplitude * boxphi
        fields = []
        for eps in self.eps:
            c, s = np.cos(phi / eps), np.sin(phi / eps)
            fields.append(eps * boxa * c - cross * s - self.amplitude / eps * c * eik)
        return EpsilonFamily(grid, list(self.eps), fields)


def sample_family(phase, amplitude, eps_ladder, points_per_wavelength=16,
                  measure_norms=True):
    """Sample u_eps = eps a cos(phi/eps) for each ladder level.

    Rejects under-resolved grids: the rule is dx <= eps_min / P, and the
    error message carries the power-of-two Nx that would satisfy it.
    """
    grid = phase.grid
    eps_ladder = list(eps_ladder)
    eps_min = min(eps_ladder)
    if grid.dx > eps_min / points_per_wavelength * (1 + 1e-12):
        need = required_nx(grid.L, eps_min, points_per_wavelength)
        raise ValueError(
            f"grid under-resolves eps={eps_min:.6g} at P={points_per_wavelength}: "
            f"dx={grid.dx:.3e} > {eps_min / points_per_wavelength:.3e}; need Nx >= {need}")
    phi = phase.phi()
    amplitude = np.asarray(amplitude, dtype=float)
    if amplitude.shape != grid.shape:
        raise ValueError("amplitude must be sampled on the phase grid")
    fields = [eps * amplitude * np.cos(phi / eps) for eps in eps_ladder]
    norms = {}
    if measure_norms:
        sup_u = np.array([norm_sup(u) for u in fields])
        sup_du = np.array([max(norm_sup(g) for g in (grid.diff(u, a)
                           for a in range(grid.ndim))) for u in fields])
        sup_d2u = np.array([max(norm_sup(g) for g in (grid.diff_mixed(u, a, b)
                            for a in range(grid.ndim) for b in range(grid.ndim)))
                            for u in fields])
        eps_arr = np.asarray(eps_ladder)
        norms = {"sup_u_over_eps": sup_u / eps_arr, "sup_du": sup_du,
                 "eps_sup_d2u": eps_arr * sup_d2u}
    return WkbFamily(grid, phase, amplitude, eps_ladder, fields, norms)


def reference_measure(family, dictionary):
    """Exact defect measure of (du_eps) for the sampled family.

    Stationary phase: mass density a^2 |dphi|^2 / 4 at each of the two
    antipodal directions +-dphi/|dphi|, deposited with the dictionary's
    window-square and direction-bump weights.  Exactly on-shell and even
    by construction.
    """
    grid = family.grid
    a = family.amplitude
    dphi = family.phase.dphi()
    mag2 = (dphi ** 2).sum(axis=0)
    if np.any((np.abs(a) > 1e-14) & (mag2 < 1e-20)):
        raise ValueError("dphi vanishes on the amplitude support")
    dim = grid.ndim
    mass = 0.25 * a ** 2 * mag2 * grid.cell_volume
    flat_mass = mass.ravel()
    keep = flat_mass > 0
    dirs = (dphi / np.sqrt(np.maximum(mag2, 1e-300))).reshape(dim, -1).T[keep]
    m_flat = flat_mass[keep]

    cells, centers = dictionary.cell_layout(grid)
    D = dictionary.n_bins
    nu = np.zeros((len(cells), D))
    blocks = np.zeros((len(cells), D, dim, dim), dtype=complex)
    mv_plus = dictionary.m_values(dirs)
    mv_minus = dictionary.m_values(-dirs)
    outer = np.einsum("pa,pb->pab", dirs, dirs)
    for ci, cell in enumerate(cells):
        w = (dictionary.window_field(grid, cell) ** 2).ravel()[keep] * m_flat
        if not np.any(w):
            continue
        both = (mv_plus + mv_minus) * w
        nu[ci] = both.sum(axis=1)
        blocks[ci] = np.einsum("dp,pab->dab", both, outer)
    return DefectMeasureHistogram(
        dictionary=dictionary, cells=cells, cell_centers=centers,
        bin_centers=dictionary.bin_centers, nu_blocks=blocks, nu=nu,
        meta={"kind": "wkb-reference"})
