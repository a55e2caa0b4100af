"""Lorentzian metrics on the periodic slab and the covariant wave operator.

A metric is stored component-first: g[a, b] is the grid function g_{ab}.
The Cauchy frame (N, beta, gtilde) diagonalizes the principal part of the
wave operator,

    g^{ab} xi_a xi_b = g^{00} (xi_0 - beta^k xi_k)^2 + gtilde^{ij} xi_i xi_j,

and is cached on construction together with the inverse metric and the
volume density sqrt|det g|.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import SpacetimeGrid, loglog_slope, norm_lp, norm_sup

GTILDE_EIG_BAND = (1e-3, 1e3)


class SignatureError(ValueError):
    """Raised when a metric fails the Lorentzian validity checks."""


def _matmul_fields(a, b):
    # a, b: (d, d, *grid) -> pointwise matrix product
    return np.einsum("ab...,bc...->ac...", a, b)


@dataclass
class MetricField:
    """Lorentzian metric sampled on a SpacetimeGrid.

    Attributes
    ----------
    g : array (1+n, 1+n, *grid.shape), the covariant components g_ab
    ginv : contravariant components g^ab
    lapse, shift, gtilde : Cauchy-frame fields N, beta^i, gtilde^ij
    sqrtdet : sqrt|det g|
    fn : optional callable (t, x...) -> (1+n, 1+n) array used for
         off-grid evaluation (ray tracing, time sub-steps)
    """

    grid: SpacetimeGrid
    g: np.ndarray
    ginv: np.ndarray = field(init=False)
    lapse: np.ndarray = field(init=False)
    shift: np.ndarray = field(init=False)
    gtilde: np.ndarray = field(init=False)
    sqrtdet: np.ndarray = field(init=False)
    fn: object = None
    validate: bool = True

    def __post_init__(self):
        d = self.grid.ndim
        self.g = np.asarray(self.g, dtype=float)
        if self.g.shape != (d, d) + self.grid.shape:
            raise ValueError(f"metric components must have shape {(d, d) + self.grid.shape}")
        asym = norm_sup(self.g - np.swapaxes(self.g, 0, 1))
        if asym > 1e-12:
            raise SignatureError(f"metric not symmetric (max asymmetry {asym:.3e})")
        flat = np.moveaxis(self.g.reshape(d, d, -1), -1, 0)
        det = np.linalg.det(flat)
        inv = np.moveaxis(np.linalg.inv(flat), 0, -1).reshape(d, d, *self.grid.shape)
        self.ginv = inv
        self.sqrtdet = np.sqrt(np.abs(det)).reshape(self.grid.shape)
        self.lapse, self.shift, self.gtilde = cauchy_frame_arrays(self.grid, inv, check=self.validate)
        if self.validate:
            ident = _matmul_fields(self.g, self.ginv)
            eye = np.zeros_like(ident)
            for a in range(d):
                eye[a, a] = 1.0
            err = norm_sup(ident - eye)
            if err > 1e-10:
                raise SignatureError(f"g * g^-1 deviates from identity by {err:.3e}")

    @property
    def n(self):
        return self.grid.n

    def component_fn(self):
        if self.fn is not None:
            return self.fn
        return None

    def mass_shell(self, index, xi):
        """g^{ab}(x) xi_a xi_b at the grid multi-index."""
        gi = self.ginv[(slice(None), slice(None)) + tuple(index)]
        xi = np.asarray(xi, dtype=float)
        return float(xi @ gi @ xi)


def cauchy_frame_arrays(grid, ginv, check=True):
    """Cauchy-frame decomposition from contravariant components.

    beta^i = -g^{0i}/g^{00},  gtilde^{ij} = g^{ij} - g^{0i}g^{0j}/g^{00},
    N = (-g^{00})^{-1/2}.
    """
    g00 = ginv[0, 0]
    if check and np.any(g00 >= 0):
        idx = np.unravel_index(np.argmax(g00), g00.shape)
        raise SignatureError(
            f"g^00 >= 0 at grid index {tuple(int(i) for i in idx)} (value {g00[idx]:.6g})")
    shift = -ginv[0, 1:] / g00
    gtilde = ginv[1:, 1:] - ginv[0, 1:][:, None] * ginv[0, None, 1:] / g00
    lapse = 1.0 / np.sqrt(-g00)
    if check:
        n = gtilde.shape[0]
        if n == 1:
            eigs = gtilde[0, 0]
            lo, hi = eigs.min(), eigs.max()
        else:
            tr = gtilde[0, 0] + gtilde[1, 1]
            det = gtilde[0, 0] * gtilde[1, 1] - gtilde[0, 1] * gtilde[1, 0]
            disc = np.sqrt(np.maximum((tr / 2) ** 2 - det, 0.0))
            lo, hi = (tr / 2 - disc).min(), (tr / 2 + disc).max()
        if lo <= GTILDE_EIG_BAND[0] or hi >= GTILDE_EIG_BAND[1]:
            raise SignatureError(
                f"gtilde eigenvalues [{lo:.3e}, {hi:.3e}] leave the allowed band {GTILDE_EIG_BAND}")
    return lapse, shift, gtilde


def cauchy_frame(metric):
    """(N, beta, gtilde) of a valid MetricField."""
    return metric.lapse, metric.shift, metric.gtilde


def metric_from_fn(grid, fn, validate=True):
    """Sample a callable metric fn(t, x...) -> (1+n)x(1+n) matrix."""
    d = grid.ndim
    coords = grid.dense_coords()
    g = np.asarray(fn(*coords))
    if g.shape != (d, d) + grid.shape:
        # allow pointwise callables returning a matrix
        g = np.empty((d, d) + grid.shape)
        it = np.nditer(coords[0], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            g[(slice(None), slice(None)) + idx] = fn(*(c[idx] for c in coords))
    return MetricField(grid, g, fn=fn, validate=validate)


def minkowski(grid):
    d = grid.ndim
    g = np.zeros((d, d) + grid.shape)
    g[0, 0] = -1.0
    for i in range(1, d):
        g[i, i] = 1.0
    def fn(t, *xs):
        eta = np.diag([-1.0] + [1.0] * grid.n)
        return eta[(...,) + (None,) * np.ndim(t)] * np.ones_like(t)
    return MetricField(grid, g, fn=fn)


def mass_shell(metric, index, xi):
    """Quadratic form g^{ab}(x) xi_a xi_b at one grid point."""
    return metric.mass_shell(index, xi)


def e0_apply(grid, metric, f):
    """The frame derivative e_0 f = d_t f - beta^i d_i f."""
    out = grid.diff(f, 0)
    for i in range(grid.n):
        out -= metric.shift[i] * grid.diff(f, i + 1)
    return out


def box_apply(metric, u, form="divergence"):
    """Discrete covariant wave operator.

    form="divergence": (1/sqrt|g|) d_a (sqrt|g| g^{ab} d_b u), with the
    time-time flux expanded so the one-sided closures stay second order.
    form="diagonal": the Cauchy-frame expansion g^{00} e0^2 u
    + gtilde^{ij} d2_ij u + first-order terms.  Both agree to O(h^2).
    """
    grid = metric.grid
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    gi, sq = metric.ginv, metric.sqrtdet
    n = grid.n
    if form == "divergence":
        du = [grid.diff(u, a) for a in range(grid.ndim)]
        # time-time part expanded: g^00 u_tt + (1/sq) d_t(sq g^00) u_t
        out = gi[0, 0] * grid.diff2(u, 0)
        out += grid.diff(sq * gi[0, 0], 0) / sq * du[0]
        # remaining time flux: (1/sq) d_t(sq g^{0j} d_j u)
        flux_t = np.zeros_like(u)
        for j in range(1, grid.ndim):
            flux_t += sq * gi[0, j] * du[j]
        out += grid.diff(flux_t, 0) / sq
        # spatial flux divergence
        for i in range(1, grid.ndim):
            flux = np.zeros_like(u)
            for b in range(grid.ndim):
                flux += sq * gi[i, b] * du[b]
            out += grid.diff(flux, i) / sq
        return out
    if form != "diagonal":
        raise ValueError(f"unknown form {form!r}")

    beta, gt = metric.shift, metric.gtilde
    du = [grid.diff(u, a) for a in range(grid.ndim)]
    e0u = du[0] - sum(beta[i] * du[i + 1] for i in range(n))
    # e0(e0 u) expanded into pure/mixed stencils (uniform O(h^2))
    e0e0 = grid.diff2(u, 0)
    for j in range(n):
        e0e0 -= grid.diff(beta[j], 0) * du[j + 1]
        e0e0 -= 2 * beta[j] * grid.diff_mixed(u, 0, j + 1)
    for i in range(n):
        for j in range(n):
            e0e0 += beta[i] * grid.diff(beta[j], i + 1) * du[j + 1]
            e0e0 += beta[i] * beta[j] * grid.diff_mixed(u, i + 1, j + 1)
    out = gi[0, 0] * e0e0
    for i in range(n):
        for j in range(n):
            out += gt[i, j] * grid.diff_mixed(u, i + 1, j + 1)
    out += 0.5 * grid.diff(gi[0, 0], 0) * e0u
    for i in range(n):
        for b in range(grid.ndim):
            out += grid.diff(gi[i + 1, b], i + 1) * du[b]
            out += gi[i + 1, b] * grid.diff(metric.sqrtdet, i + 1) / metric.sqrtdet * du[b]
    for i in range(n):
        for j in range(n):
            out -= gi[0, i + 1] * grid.diff(gi[0, j + 1] / gi[0, 0], i + 1) * du[j + 1]
    # q(gtilde) = det gtilde^{ij}; |det g^-1| = -g^00 q
    if n == 1:
        q = gt[0, 0]
    else:
        q = gt[0, 0] * gt[1, 1] - gt[0, 1] * gt[1, 0]
    out -= gi[0, 0] / (2 * q) * grid.diff(q, 0) * e0u
    return out


def christoffel(metric):
    """Christoffel symbols Gamma^a_{bc} by central differences, shape (d,d,d,*grid)."""
    grid = metric.grid
    d = grid.ndim
    dg = np.stack([np.stack([np.stack([grid.diff(metric.g[a, b], c)
                                       for c in range(d)]) for b in range(d)]) for a in range(d)])
    # dg[a, b, c] = d_c g_ab
    gam = np.einsum("ar...,rbc...->abc...",
                    metric.ginv,
                    0.5 * (np.einsum("rbc...->rbc...", dg)
                           + np.transpose(dg, (0, 2, 1) + tuple(range(3, 3 + grid.n + 1)))
                           - np.transpose(dg, (1, 2, 0) + tuple(range(3, 3 + grid.n + 1)))))
    return gam


def ricci_tensor(metric):
    """Ricci tensor R_ab by second-order finite differences.

    R_ab = d_c Gam^c_ab - d_a Gam^c_cb + Gam^c_cd Gam^d_ab - Gam^c_ad Gam^d_cb.
    """
    grid = metric.grid
    d = grid.ndim
    gam = christoffel(metric)
    term1 = np.zeros((d, d) + grid.shape)
    term2 = np.zeros_like(term1)
    for a in range(d):
        for b in range(d):
            for c in range(d):
                term1[a, b] += grid.diff(gam[c, a, b], c)
                term2[a, b] += grid.diff(gam[c, c, b], a)
    gam_trace = np.einsum("ccd...->d...", gam)
    term3 = np.einsum("d...,dab...->ab...", gam_trace, gam)
    term4 = np.einsum("cad...,dcb...->ab...", gam, gam)
    return term1 - term2 + term3 - term4


class MetricEvaluator:
    """Pointwise inverse-metric evaluation for ray integration.

    Prefers the metric's analytic callable (derivatives by small-step
    central differences of the sampled matrix, then the inverse-derivative
    sandwich); falls back to cubic interpolation of the grid samples.
    Coordinates wrap in space; time is clamped to the slab.
    """

    def __init__(self, metric, fd_step=1e-5):
        self.metric = metric
        self.grid = metric.grid
        self.h = fd_step * min(metric.grid.T, metric.grid.L)
        self._interp = None
        if metric.fn is None:
            self._build_interp()

    def _build_interp(self):
        from scipy.interpolate import RegularGridInterpolator

        grid = self.grid
        pad = 3
        t, *xs = grid.axes()
        axes = [t]
        comps = {}
        d = grid.ndim
        for a in range(d):
            for b in range(a, d):
                arr = self.metric.g[a, b]
                for ax in range(1, grid.ndim):
                    arr = np.concatenate([arr.take(range(-pad, 0), axis=ax), arr,
                                          arr.take(range(pad), axis=ax)], axis=ax)
                comps[(a, b)] = arr
        for x in xs:
            axes.append(np.concatenate([x[-pad:] - grid.L, x, x[:pad] + grid.L]))
        self._interp = {k: RegularGridInterpolator(tuple(axes), v, method="cubic",
                                                   bounds_error=False, fill_value=None)
                        for k, v in comps.items()}

    def _g_at(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        d = self.grid.ndim
        out = np.empty((len(coords), d, d))
        wrapped = coords.copy()
        wrapped[:, 1:] %= self.grid.L
        wrapped[:, 0] = np.clip(wrapped[:, 0], 0.0, self.grid.T - self.grid.dt)
        if self.metric.fn is not None:
            # fn must broadcast: fn(t, x...) with (Np,) arrays -> (d, d, Np)
            vals = np.asarray(self.metric.fn(*(wrapped[:, a] for a in range(d))), dtype=float)
            return np.moveaxis(vals, (0, 1), (1, 2))
        for a in range(d):
            for b in range(a, d):
                v = self._interp[(a, b)](wrapped)
                out[:, a, b] = v
                out[:, b, a] = v
        return out

    def inverse(self, coords):
        """g^{ab} at coords, shape (Np, d, d)."""
        return np.linalg.inv(self._g_at(coords))

    def inverse_deriv(self, coords):
        """d_c g^{ab} at coords, shape (Np, d, d, d), derivative index first."""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        d = self.grid.ndim
        ginv = self.inverse(coords)
        out = np.empty((len(coords), d, d, d))
        for c in range(d):
            e = np.zeros(d)
            e[c] = self.h
            dg = (self._g_at(coords + e) - self._g_at(coords - e)) / (2 * self.h)
            out[:, c] = -np.einsum("pab,pbc,pcd->pad", ginv, dg, ginv)
        return out


@dataclass
class OscillatingMetricFamily:
    """Ladder of metrics g_eps = g + lam * sin(phase/lam) * shape."""

    base: MetricField
    shape: np.ndarray           # symmetric (d,d,*grid) perturbation tensor
    phase: np.ndarray           # grid function psi_osc
    lams: list                  # lam per level, decreasing
    levels: list = field(default_factory=list)  # MetricField per lam

    def __iter__(self):
        return iter(zip(self.lams, self.levels))


def oscillating_family(base, shape, phase, lams):
    """Build g_eps = g + lam sin(phase/lam) shape for each ladder level.

    Every level must remain a valid Lorentzian metric; the first offending
    level is reported otherwise.
    """
    grid = base.grid
    shape = np.asarray(shape, dtype=float)
    phase = np.asarray(phase, dtype=float)
    levels = []
    for k, lam in enumerate(lams):
        pert = lam * np.sin(phase / lam) * shape
        try:
            levels.append(MetricField(grid, base.g + pert))
        except SignatureError as exc:
            raise SignatureError(
                f"ladder level {k} (lam={lam:.6g}) loses Lorentzian signature: {exc}") from exc
    return OscillatingMetricFamily(base, shape, phase, list(lams), levels)


def burnett_rate_check(family, p_product=4):
    """Measure the high-frequency amplitude/derivative bounds on a ladder.

    Works on an OscillatingMetricFamily (component-wise sup norms of
    g_eps - g and its first two derivatives) or on an EpsilonFamily of
    scalar fields (norms of u_eps - u).  Returns a dict with per-level
    norms, fitted log-log slopes against the ladder parameter, and
    booleans for each bound (single constant across the ladder).
    """
    from .families import EpsilonFamily

    if isinstance(family, OscillatingMetricFamily):
        grid = family.base.grid
        lams = np.asarray(family.lams, dtype=float)
        diffs = [lev.g - family.base.g for lev in family.levels]
        def all_derivs(h, order):
            if order == 0:
                return [h]
            if order == 1:
                return [np.stack([grid.diff(h[a, b], c) for c in range(grid.ndim)])
                        for a in range(grid.ndim) for b in range(grid.ndim)]
            return [np.stack([grid.diff_mixed(h[a, b], c, e) for c in range(grid.ndim)
                              for e in range(grid.ndim)])
                    for a in range(grid.ndim) for b in range(grid.ndim)]
        sup = {k: np.array([max(norm_sup(d) for d in all_derivs(h, k)) for h in diffs])
               for k in (0, 1, 2)}
        product = None
    elif isinstance(family, EpsilonFamily):
        grid = family.grid
        lams = np.asarray(family.eps, dtype=float)
        diffs = [f - family.limit for f in family.fields]
        def derivs(h, order):
            if order == 0:
                return [h]
            if order == 1:
                return [grid.diff(h, a) for a in range(grid.ndim)]
            return [grid.diff_mixed(h, a, b) for a in range(grid.ndim) for b in range(grid.ndim)]
        sup = {k: np.array([max(norm_sup(d) for d in derivs(h, k)) for h in diffs])
               for k in (0, 1, 2)}
        product = np.array([
            norm_sup(h) * max(norm_lp(grid, d, p_product) for d in derivs(h, 2))
            for h in diffs])
    else:
        raise TypeError("family must be OscillatingMetricFamily or EpsilonFamily")

    if len(lams) < 3:
        raise ValueError("rate check needs at least 3 ladder levels")

    # bound k: sup_k <= C lam^{1-k}, i.e. log sup_k decays at least like
    # (1-k) log lam; a fitted slope below (1-k) - slack flags a violation.
    slack = 0.25
    report = {"lams": lams, "sup": sup, "constants": {}, "slopes": {}, "passes": {}}
    for k in (0, 1, 2):
        vals = sup[k]
        report["constants"][k] = float((vals * lams ** (k - 1.0)).max())
        if np.all(vals == 0):
            report["slopes"][k] = (None, None)
            report["passes"][k] = True
            continue
        slope, half = loglog_slope(lams, np.maximum(vals, 1e-300))
        report["slopes"][k] = (slope, half)
        report["passes"][k] = bool(slope >= (1.0 - k) - slack)
    if product is not None:
        report["product"] = product
        if np.all(product == 0):
            report["product_pass"] = True
        else:
            pslope, _ = loglog_slope(lams, np.maximum(product, 1e-300))
            report["product_pass"] = bool(pslope >= -slack)
    report["hypotheses_pass"] = bool(all(report["passes"].values())
                                     and report.get("product_pass", True))
    return report
