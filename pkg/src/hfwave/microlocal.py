"""Separable zeroth-order symbols via FFT, defect-measure estimation on a
(x-cell, direction-bin) histogram, the three-way frequency partition, and
commutator pairings with their per-regime decay rates.

Conventions
-----------
* Symbols are separable, a(x, xi) = b(x) m(xi/|xi|), applied as
  v -> IFFT( m * FFT(b v) ) with integer modes |k| < R0 zeroed.
* Spatial windows satisfy sum_c b_c^2 = 1 on the measurement region and
  direction bumps satisfy sum_d m_d = 1 on the sphere, so histogram masses
  are pairings of the underlying measure against b_c^2 m_d and sum to the
  total mass.
* Inner products are L^2(dx dt); Parseval supplies the FFT-side form.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import SpacetimeGrid, loglog_slope, richardson

DEFAULT_R0 = 4


def bump(r):
    """Smooth compactly supported profile, bump(0)=1, support |r|<1."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def _periodic_bump(x, center, width, L):
    # wrap-aware distance on the circle of circumference L
    d = np.abs((x - center + L / 2) % L - L / 2)
    return bump(d / width)


def sphere_bins(n, bins):
    """Unit direction-bin centers on S^n in (xi_0, .., xi_n) space.

    n=1: `bins` equal angles on the circle; n=2: `bins` is (nlat, nlon),
    a latitude-longitude lattice with antipode-closed centers.
    """
    if n == 1:
        D = int(bins)
        if D % 2:
            raise ValueError("need an even number of circle bins (antipode closure)")
        theta = 2 * np.pi * np.arange(D) / D
        centers = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        anti = (np.arange(D) + D // 2) % D
        width = 2 * np.pi / D
        return centers, anti, width
    nlat, nlon = bins
    if nlon % 2:
        raise ValueError("need an even longitude count (antipode closure)")
    th = (np.arange(nlat) + 0.5) * np.pi / nlat
    ph = 2 * np.pi * np.arange(nlon) / nlon
    TH, PH = np.meshgrid(th, ph, indexing="ij")
    centers = np.stack([np.cos(TH), np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH)],
                       axis=-1).reshape(-1, 3)
    ilat, ilon = np.meshgrid(np.arange(nlat), np.arange(nlon), indexing="ij")
    anti = ((nlat - 1 - ilat) * nlon + (ilon + nlon // 2) % nlon).reshape(-1)
    width = max(np.pi / nlat, 2 * np.pi / nlon)
    return centers, anti, width


@dataclass
class SymbolDictionary:
    """Smooth partition-of-unity test symbols b_c(x) m_d(xi).

    Spatial cells tile the measurement sub-slab [t_margin*T, (1-t_margin)*T]
    times the full torus; direction bins tile the unit sphere.  Window
    squares sum to 1 on the region; direction bumps sum to 1 on the sphere.
    """

    n: int
    t_cells: int = 2
    x_cells: int = 3
    bins: object = 32            # int for n=1, (nlat, nlon) for n=2
    t_margin: float = 0.12
    overlap: float = 1.6
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n == 2 and isinstance(self.bins, int):
            self.bins = (16, 32)
        self.bin_centers, self.antipode, self.bin_width = sphere_bins(self.n, self.bins)
        self.kernel_width = self.overlap * self.bin_width

    # ---- direction side ----------------------------------------------------

    @property
    def n_bins(self):
        return len(self.bin_centers)

    def m_values(self, directions):
        """Evaluate all m_d at unit directions, shape (D, ...)."""
        directions = np.asarray(directions, dtype=float)
        dots = np.tensordot(self.bin_centers, directions, axes=([1], [-1]))
        ang = np.arccos(np.clip(dots, -1.0, 1.0))
        raw = bump(ang / self.kernel_width)
        tot = raw.sum(axis=0)
        tot = np.where(tot > 0, tot, 1.0)
        return raw / tot

    def bin_parity_pairs(self):
        """Indices (d, antipode(d)) with d < antipode(d)."""
        return [(d, a) for d, a in enumerate(self.antipode) if d < a]

    # ---- spatial side -------------------------------------------------------

    def cell_layout(self, grid):
        """Cell ids and center coordinates for a grid."""
        key = ("layout", grid)
        if key not in self._cache:
            t0, t1 = self.t_margin * grid.T, (1 - self.t_margin) * grid.T
            tw = (t1 - t0) / self.t_cells
            t_centers = t0 + (np.arange(self.t_cells) + 0.5) * tw
            x_centers = (np.arange(self.x_cells) + 0.5) * grid.L / self.x_cells
            ids, centers = [], []
            for it in range(self.t_cells):
                for rest in np.ndindex(*(self.x_cells,) * self.n):
                    ids.append((it,) + rest)
                    centers.append((t_centers[it],) + tuple(x_centers[list(rest)]))
            self._cache[key] = (ids, np.asarray(centers))
        return self._cache[key]

    def window_profiles(self, grid):
        """Per-axis normalized window samples; squares sum to 1 on the region."""
        key = ("profiles", grid)
        if key not in self._cache:
            t, *xs = grid.axes()
            t0, t1 = self.t_margin * grid.T, (1 - self.t_margin) * grid.T
            tw = (t1 - t0) / self.t_cells
            t_raw = np.stack([bump((t - (t0 + (i + 0.5) * tw)) / (0.5 * self.overlap * tw))
                              for i in range(self.t_cells)])
            xw = grid.L / self.x_cells
            x_raw = np.stack([_periodic_bump(xs[0], (c + 0.5) * xw, 0.5 * self.overlap * xw, grid.L)
                              for c in range(self.x_cells)])
            def normalize(raw):
                tot = np.sqrt((raw ** 2).sum(axis=0))
                return np.where(tot > 0, raw / np.where(tot > 0, tot, 1.0), 0.0)
            self._cache[key] = (normalize(t_raw), normalize(x_raw))
        return self._cache[key]

    def window_field(self, grid, cell):
        """The window b_c on a grid, outer product of axis profiles."""
        t_prof, x_prof = self.window_profiles(grid)
        it, *rest = cell
        out = t_prof[it].reshape((-1,) + (1,) * grid.n).copy()
        for axis, c in enumerate(rest):
            shape = [1] * grid.ndim
            shape[axis + 1] = grid.Nx
            out = out * x_prof[c].reshape(shape)
        return out

    def window_at_points(self, grid, cell, coords):
        """Evaluate b_c at scattered (t, x...) coordinates, shape (Np,)."""
        t0, t1 = self.t_margin * grid.T, (1 - self.t_margin) * grid.T
        tw = (t1 - t0) / self.t_cells
        it, *rest = cell
        coords = np.asarray(coords, dtype=float)
        # single-axis normalization must match the gridded profiles: recompute
        # raw bumps of every cell at the points and normalize identically
        t_raw = np.stack([bump((coords[:, 0] - (t0 + (i + 0.5) * tw)) / (0.5 * self.overlap * tw))
                          for i in range(self.t_cells)])
        t_tot = np.sqrt((t_raw ** 2).sum(axis=0))
        val = np.where(t_tot > 0, t_raw[it] / np.where(t_tot > 0, t_tot, 1.0), 0.0)
        xw = grid.L / self.x_cells
        for axis, c in enumerate(rest):
            x_raw = np.stack([_periodic_bump(coords[:, axis + 1], (cc + 0.5) * xw,
                                             0.5 * self.overlap * xw, grid.L)
                              for cc in range(self.x_cells)])
            x_tot = np.sqrt((x_raw ** 2).sum(axis=0))
            val = val * np.where(x_tot > 0, x_raw[c] / np.where(x_tot > 0, x_tot, 1.0), 0.0)
        return val

    # ---- FFT-lattice machinery ----------------------------------------------

    def _lattice_geometry(self, grid, R0):
        key = ("lattice", grid, R0)
        if key not in self._cache:
            freqs = grid.freqs()
            modes = grid.mode_numbers()
            r2 = sum(np.broadcast_to(m, grid.shape).astype(float) ** 2 for m in modes)
            mask = r2 >= R0 * R0
            mag = np.sqrt(sum(np.broadcast_to(f, grid.shape) ** 2 for f in freqs))
            mag = np.where(mag > 0, mag, 1.0)
            dirs = np.stack([np.broadcast_to(f, grid.shape) / mag for f in freqs], axis=-1)
            self._cache[key] = (mask, dirs)
        return self._cache[key]

    def micro_index(self, grid, R0=DEFAULT_R0, micro=8192):
        """n=1 angular micro-binning of the FFT lattice: returns
        (flat indices of admissible modes, micro-bin index per mode,
        m-table of shape (D, micro))."""
        key = ("micro", grid, R0, micro)
        if key not in self._cache:
            if self.n != 1:
                raise ValueError("micro-binning is the n=1 fast path")
            mask, dirs = self._lattice_geometry(grid, R0)
            theta = np.arctan2(dirs[..., 1], dirs[..., 0])
            idx = (np.floor((theta + np.pi) / (2 * np.pi) * micro).astype(np.int64)) % micro
            flat = np.flatnonzero(mask.ravel())
            idx = idx.ravel()[flat]
            th_c = (np.arange(micro) + 0.5) * 2 * np.pi / micro - np.pi
            table = self.m_values(np.stack([np.cos(th_c), np.sin(th_c)], axis=-1))
            self._cache[key] = (flat, idx, table, micro)
        return self._cache[key]


# --------------------------------------------------------------------------
# symbol application
# --------------------------------------------------------------------------

def m_lattice(dictionary_or_m, grid, R0=DEFAULT_R0):
    """Sample a 0-homogeneous multiplier on the FFT lattice, zeroed for
    integer-mode radius < R0.  Accepts a callable m(directions)->values."""
    m_fn = dictionary_or_m
    freqs = grid.freqs()
    modes = grid.mode_numbers()
    r2 = sum(np.broadcast_to(m, grid.shape).astype(float) ** 2 for m in modes)
    mask = r2 >= R0 * R0
    mag = np.sqrt(sum(np.broadcast_to(f, grid.shape) ** 2 for f in freqs))
    mag = np.where(mag > 0, mag, 1.0)
    dirs = np.stack([np.broadcast_to(f, grid.shape) / mag for f in freqs], axis=-1)
    vals = np.asarray(m_fn(dirs), dtype=float)
    return np.where(mask, vals, 0.0)


def apply_symbol(grid, v, b=None, m=None, R0=DEFAULT_R0, m_table=None):
    """Apply the separable symbol b(x) m(xi/|xi|): IFFT(m * FFT(b v)).

    `m` is a callable on unit directions (stacked on the last axis); a
    precomputed lattice table can be passed instead.  Modes with integer
    radius < R0 (including DC) are zeroed.  Returns a real array for real
    input with real even m (the imaginary part is rounding noise and is
    dropped); complex input returns complex.
    """
    v = np.asarray(v)
    w = v if b is None else b * v
    if m_table is None:
        if m is None:
            m_table = m_lattice(lambda d: np.ones(d.shape[:-1]), grid, R0)
        else:
            m_table = m_lattice(m, grid, R0)
    out = np.fft.ifftn(m_table * np.fft.fftn(w))
    if np.isrealobj(v):
        return out.real
    return out


# --------------------------------------------------------------------------
# histogram container
# --------------------------------------------------------------------------

@dataclass
class DefectMeasureHistogram:
    """(x-cell, direction-bin) histogram of a matrix-valued conic measure.

    nu_blocks[c, d] is the extrapolated (1+n)x(1+n) complex block; nu is
    its real trace (the radially averaged scalar measure), lam and sigma
    the source cross-measures contracted with the bin direction.
    """

    dictionary: SymbolDictionary
    cells: list
    cell_centers: np.ndarray          # (C, 1+n)
    bin_centers: np.ndarray           # (D, 1+n)
    nu_blocks: np.ndarray             # (C, D, d, d) complex
    nu: np.ndarray                    # (C, D) real
    lam: np.ndarray = None
    sigma: np.ndarray = None
    eps: list = None
    per_level: dict = None            # {"nu": (K,C,D), "nu_blocks": ..., ...}
    errbar: np.ndarray = None
    flags: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def total_mass(self):
        return float(np.abs(self.nu).sum())

    def pair(self, symbol_fn, which="nu"):
        """Quadrature of the histogram against phi(x_center, xi_center)."""
        table = getattr(self, which)
        vals = np.array([[symbol_fn(xc, xd) for xd in self.bin_centers]
                         for xc in self.cell_centers])
        return float(np.sum(vals * table))

    def pair_blocks(self, weight_fn):
        """Sum_{c,d} weight(x_c, xi_d)_{ab} . nu_blocks[c,d,a,b]."""
        acc = 0.0 + 0.0j
        for ci, xc in enumerate(self.cell_centers):
            for di, xd in enumerate(self.bin_centers):
                acc += np.sum(np.asarray(weight_fn(xc, xd)) * self.nu_blocks[ci, di])
        return acc

    def symmetrized(self):
        """Antipodal symmetrization of the scalar histogram."""
        anti = self.dictionary.antipode
        out = 0.5 * (self.nu + self.nu[:, anti])
        return out

    def odd_fraction(self, which="nu"):
        table = getattr(self, which)
        if table is None:
            return None
        anti = self.dictionary.antipode
        odd = 0.5 * np.abs(table - table[:, anti]).sum()
        tot = np.abs(table).sum()
        return float(odd / tot) if tot > 0 else 0.0

    def even_fraction(self, which="lam"):
        table = getattr(self, which)
        if table is None:
            return None
        anti = self.dictionary.antipode
        even = 0.5 * np.abs(table + table[:, anti]).sum()
        tot = np.abs(table).sum()
        return float(even / tot) if tot > 0 else 0.0

    def rank1_residual(self):
        """Relative deviation of each block from xi xi^T * nu at bin centers."""
        res, tot = 0.0, 0.0
        for ci in range(len(self.cells)):
            for di, xd in enumerate(self.bin_centers):
                model = np.outer(xd, xd) * self.nu[ci, di]
                res += np.abs(self.nu_blocks[ci, di] - model).sum()
                tot += np.abs(self.nu_blocks[ci, di]).sum()
        return float(res / tot) if tot > 0 else 0.0

    def relative_l1(self, other):
        tot = np.abs(other.nu).sum()
        return float(np.abs(self.nu - other.nu).sum() / tot) if tot > 0 else float("inf")


def deposit_points(dictionary, grid, coords, directions, masses):
    """Bin point masses into the histogram lattice.

    Deposit weight: mass * b_c(x)^2 * m_d(xi_hat), matching the pairing
    semantics of the estimator.  Returns (nu (C,D), blocks (C,D,dim,dim)).
    """
    cells, centers = dictionary.cell_layout(grid)
    D = dictionary.n_bins
    dim = 1 + dictionary.n
    coords = np.asarray(coords, dtype=float)
    directions = np.asarray(directions, dtype=float)
    masses = np.asarray(masses, dtype=float)
    mvals = dictionary.m_values(directions)          # (D, Np)
    nu = np.zeros((len(cells), D))
    blocks = np.zeros((len(cells), D, dim, dim), dtype=complex)
    outer = directions[:, :, None] * directions[:, None, :]   # (Np, dim, dim)
    for ci, cell in enumerate(cells):
        w = dictionary.window_at_points(grid, cell, coords) ** 2 * masses
        if not np.any(w):
            continue
        nu[ci] = mvals @ w
        blocks[ci] = np.einsum("dp,pab->dab", mvals * w, outer)
    return nu, blocks, cells, centers


# --------------------------------------------------------------------------
# H-measure estimation
# --------------------------------------------------------------------------

def _level_histogram(dictionary, grid, comps, R0, needed_pairs):
    """Pairings <m_d(D)(b_c comps[a]), b_c comps[b]> for requested pairs.

    Returns dict {(a, b): (C, D) complex array}.
    """
    cells, _ = dictionary.cell_layout(grid)
    D = dictionary.n_bins
    scale = grid.cell_volume / np.prod(grid.shape)
    out = {pair: np.zeros((len(cells), D), dtype=complex) for pair in needed_pairs}
    use_micro = dictionary.n == 1
    if use_micro:
        flat, micro_idx, table, M = dictionary.micro_index(grid, R0)
    else:
        mask, dirs = dictionary._lattice_geometry(grid, R0)
        mtabs = [np.where(mask, m, 0.0) for m in dictionary.m_values(dirs)]
    for ci, cell in enumerate(cells):
        b = dictionary.window_field(grid, cell)
        hats = [np.fft.fftn(b * comp) for comp in comps]
        for (a, bb) in needed_pairs:
            prod = hats[a] * np.conj(hats[bb])
            if use_micro:
                p = prod.ravel()[flat]
                re = np.bincount(micro_idx, weights=p.real, minlength=M)
                im = np.bincount(micro_idx, weights=p.imag, minlength=M)
                out[(a, bb)][ci] = (table @ re + 1j * (table @ im)) * scale
            else:
                for di, mt in enumerate(mtabs):
                    out[(a, bb)][ci, di] = prod[mt > 0].dot(mt[mt > 0]) * scale \
                        if np.any(mt > 0) else 0.0
        del hats
    return out, cells


def hmeasure_estimate(families, dictionary, sources=None, hsources=None,
                      R0=DEFAULT_R0, ladder_ratio=None, flag_tol=0.5):
    """Estimate the defect measure of one or several gradient ladders.

    families : EpsilonFamily (fields shaped (1+n, *grid.shape)) or a list
        of them; multiple families contribute additively (component sum,
        any x-weighting is applied by the caller before the call).
    sources : optional EpsilonFamily of scalar fields paired against the
        gradients to form the lam cross-histogram; hsources likewise for
        sigma (gradient against metric-oscillation + source residual).
    Returns a DefectMeasureHistogram with per-level tables, the
    ladder-extrapolated limit, error bars and non-convergence flags.
    """
    if not isinstance(families, (list, tuple)):
        families = [families]
    fam0 = families[0]
    K = len(fam0)
    dim = 1 + dictionary.n
    eps = list(fam0.eps)
    cells, centers = dictionary.cell_layout(fam0.grids[0])
    C, D = len(cells), dictionary.n_bins

    per_nu = np.zeros((K, C, D, dim, dim), dtype=complex)
    per_lam = np.zeros((K, C, D), dtype=complex) if sources is not None else None
    per_sig = np.zeros((K, C, D), dtype=complex) if hsources is not None else None

    for k in range(K):
        grid_k = fam0.grids[k]
        for fam in families:
            w = fam.fields[k] - fam.limits[k]
            comps = [w[a] for a in range(dim)]
            extra = []
            if sources is not None:
                extra.append(sources.fields[k] - sources.limits[k])
            if hsources is not None:
                extra.append(hsources.fields[k] - hsources.limits[k])
            allcomps = comps + extra
            pairs = [(a, b) for a in range(dim) for b in range(dim)]
            s_idx = dim
            if sources is not None:
                pairs += [(a, s_idx) for a in range(dim)]
            if hsources is not None:
                h_idx = dim + (1 if sources is not None else 0)
                pairs += [(a, h_idx) for a in range(dim)]
            tables, _ = _level_histogram(dictionary, grid_k, allcomps, R0, pairs)
            for a in range(dim):
                for b in range(dim):
                    per_nu[k, :, :, a, b] += tables[(a, b)]
            if sources is not None:
                lam_vec = np.stack([tables[(a, s_idx)] for a in range(dim)], axis=-1)
                per_lam[k] += np.einsum("cdv,dv->cd", lam_vec,
                                        dictionary.bin_centers)
            if hsources is not None:
                h_idx = dim + (1 if sources is not None else 0)
                sig_vec = np.stack([tables[(a, h_idx)] for a in range(dim)], axis=-1)
                per_sig[k] += np.einsum("cdv,dv->cd", sig_vec,
                                        dictionary.bin_centers)

    if ladder_ratio is None:
        ladder_ratio = float(np.median(np.asarray(eps[1:]) / np.asarray(eps[:-1]))) \
            if K > 1 else 0.5

    def extrapolate(stack):
        if K == 1:
            return stack[0], np.zeros(stack[0].shape, dtype=float)
        lim = stack[-1] + (stack[-1] - stack[-2]) * ladder_ratio / (1 - ladder_ratio)
        tail = stack[-3:] if K >= 3 else stack[-2:]
        err = np.max(np.abs(tail - lim), axis=0)
        return lim, err

    nu_blocks, block_err = extrapolate(per_nu)
    nu = np.einsum("cdaa->cd", nu_blocks).real
    per_level_nu = np.einsum("kcdaa->kcd", per_nu).real
    err_scalar = np.einsum("cdaa->cd", block_err).real if block_err.ndim == 4 \
        else np.abs(block_err).sum(axis=(-2, -1))
    scale = max(np.abs(nu).max(), 1e-300)
    flags = err_scalar > flag_tol * scale

    lam = sigma = None
    per_level = {"eps": eps, "nu": per_level_nu, "nu_blocks": per_nu}
    if per_lam is not None:
        lam_lim, _ = extrapolate(per_lam)
        lam = lam_lim.real
        per_level["lam"] = per_lam
    if per_sig is not None:
        sig_lim, _ = extrapolate(per_sig)
        sigma = sig_lim.real
        per_level["sigma"] = per_sig

    return DefectMeasureHistogram(
        dictionary=dictionary, cells=cells, cell_centers=centers,
        bin_centers=dictionary.bin_centers, nu_blocks=nu_blocks, nu=nu,
        lam=lam, sigma=sigma, eps=eps, per_level=per_level,
        errbar=err_scalar, flags=flags,
        meta={"R0": R0, "ladder_ratio": ladder_ratio})


def support_parity_check(hist, metric, band=None):
    """Mass-shell support and parity diagnostics of a histogram.

    Returns off-shell |nu|-mass fraction (extrapolated and per level),
    the odd-part fraction of nu, and the even-part fraction of lam.
    """
    dct = hist.dictionary
    if band is None:
        band = max(0.05, 2.0 * dct.bin_width)
    ginv_at = _metric_inverse_at(metric, hist.cell_centers)
    Q = np.einsum("cab,da,db->cd", ginv_at, hist.bin_centers, hist.bin_centers)
    off = np.abs(Q) > band

    def frac(table):
        tot = np.abs(table).sum()
        return float(np.abs(table)[off].sum() / tot) if tot > 0 else 0.0

    report = {
        "band": band,
        "off_shell_fraction": frac(hist.nu),
        "odd_fraction_nu": hist.odd_fraction("nu"),
    }
    if hist.lam is not None:
        report["even_fraction_lam"] = hist.even_fraction("lam")
    if hist.per_level is not None:
        report["off_shell_per_level"] = [frac(hist.per_level["nu"][k])
                                         for k in range(len(hist.eps))]
    return report


def _metric_inverse_at(metric, coords):
    """g^{ab} at scattered coordinates, via the analytic callable when
    available, otherwise nearest grid sample."""
    out = np.empty((len(coords), metric.grid.ndim, metric.grid.ndim))
    if metric.fn is not None:
        for i, c in enumerate(coords):
            out[i] = np.linalg.inv(np.asarray(metric.fn(*c), dtype=float))
        return out
    grid = metric.grid
    for i, c in enumerate(coords):
        it = int(round(c[0] / grid.dt)) % grid.Nt
        idx = (it,) + tuple(int(round(xx / grid.dx)) % grid.Nx for xx in c[1:])
        out[i] = metric.ginv[(slice(None), slice(None)) + idx]
    return out


# --------------------------------------------------------------------------
# frequency partition
# --------------------------------------------------------------------------

def zeta_profile(x):
    """Smooth cutoff: 1 for x <= 1, 0 for x >= 2."""
    x = np.asarray(x, dtype=float)
    def f(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out
    num = f(2.0 - x)
    return num / (num + f(x - 1.0))


@dataclass
class FrequencyPartition:
    """Three-way cutoffs on the FFT lattice: low, spatially dominated and
    time dominated frequencies; they sum to 1 pointwise by construction."""

    grid: SpacetimeGrid
    delta1: float
    delta2: float
    omega: float
    theta_low: np.ndarray
    theta_spa: np.ndarray
    theta_time: np.ndarray

    def project(self, field, regime):
        theta = {"low": self.theta_low, "spa": self.theta_spa,
                 "time": self.theta_time}[regime]
        out = np.fft.ifftn(theta * np.fft.fftn(field))
        return out.real if np.isrealobj(field) else out

    def support_scan(self):
        """Check the stated support inclusions on every lattice point."""
        rt, rs = _lattice_magnitudes(self.grid)
        ok_low = np.all(rt[self.theta_low > 0] <= 2.0 / self.omega ** self.delta1 + 1e-9)
        spa_mask = self.theta_spa > 0
        ok_spa = np.all(rs[spa_mask] >= rt[spa_mask] ** self.delta2 - 1e-9) and \
            np.all(rt[spa_mask] >= self.omega ** (-self.delta1) - 1e-9)
        time_mask = self.theta_time > 0
        rho0sq = rt ** 2 - rs ** 2
        ok_time = np.all(rho0sq[time_mask] >= rt[time_mask] ** 2
                         - 4 * rt[time_mask] ** (2 * self.delta2) - 1e-9) and \
            np.all(rt[time_mask] >= self.omega ** (-self.delta1) - 1e-9)
        return {"low": bool(ok_low), "spa": bool(ok_spa), "time": bool(ok_time)}


def _lattice_magnitudes(grid):
    freqs = grid.freqs()
    rt = np.sqrt(sum(np.broadcast_to(f, grid.shape) ** 2 for f in freqs))
    rs = np.sqrt(sum(np.broadcast_to(f, grid.shape) ** 2 for f in freqs[1:]))
    return rt, rs


def check_partition_exponents(delta1, delta2):
    if not (0.5 < delta1 < 1.0):
        raise ValueError(
            f"delta1={delta1} violates the time-regime requirement 1/2 < delta1 < 1")
    if not (1.0 / (2 * delta1) < delta2 < 1.0):
        raise ValueError(
            f"delta2={delta2} violates the spatial-regime requirement "
            f"1/(2*delta1) < delta2 < 1 (with delta1={delta1})")


def partition_build(grid, delta1, delta2, omega, zeta=zeta_profile):
    """Build the low/spatial/time cutoff triple for one ladder scale."""
    check_partition_exponents(delta1, delta2)
    rt, rs = _lattice_magnitudes(grid)
    theta_low = zeta(omega ** delta1 * rt)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rt > 0, rs / np.maximum(rt, 1e-300) ** delta2, 0.0)
    theta_spa = (1.0 - theta_low) * (1.0 - zeta(ratio))
    theta_time = 1.0 - theta_low - theta_spa
    return FrequencyPartition(grid, delta1, delta2, omega,
                              theta_low, theta_spa, theta_time)


# --------------------------------------------------------------------------
# commutator pairings and regime rates
# --------------------------------------------------------------------------

def commutator_pairing(metric, w, h, b=None, m=None, partition=None,
                       R0=DEFAULT_R0, m_table=None):
    """Evaluate sum_{a,b} <d_a w, [A, h^{ab}] d_b e0 w> over the grid.

    metric supplies the limit-frame e0 = d_t - beta^i d_i; h is the
    contravariant oscillation tensor (d, d, *grid); A is the separable
    symbol (b, m) with m real and even (odd symbols are rejected: the
    parity reduction makes them vacuous).  With a partition, returns the
    regime-split dict {"total", "low", "spa", "time"}.
    """
    grid = metric.grid
    dim = grid.ndim
    if m is not None:
        rng = np.random.default_rng(7)
        probe = rng.normal(size=(8, dim))
        probe /= np.linalg.norm(probe, axis=1, keepdims=True)
        vals = np.asarray(m(probe))
        anti = np.asarray(m(-probe))
        if np.abs(np.imag(vals)).max() > 1e-12 or np.abs(vals - anti).max() > 1e-10:
            raise ValueError("commutator pairing requires a real even symbol m")
    if m_table is None:
        m_table = m_lattice(m if m is not None else (lambda d: np.ones(d.shape[:-1])),
                            grid, R0)

    dw = [grid.diff(w, a) for a in range(dim)]
    e0w = dw[0] - sum(metric.shift[i] * dw[i + 1] for i in range(grid.n))
    de0w = [grid.diff(e0w, a) for a in range(dim)]

    def A(v):
        return apply_symbol(grid, v, b=b, m_table=m_table)

    Av = [A(v) for v in de0w]

    def pairing_with(htensor):
        tot = 0.0
        for a in range(dim):
            for bb in range(dim):
                hab = htensor[a, bb]
                comm = A(hab * de0w[bb]) - hab * Av[bb]
                tot += grid.integrate(dw[a] * comm)
        return float(tot)

    if partition is None:
        return pairing_with(h)
    out = {"total": pairing_with(h)}
    for regime in ("low", "spa", "time"):
        hproj = np.stack([np.stack([partition.project(h[a, bb], regime)
                                    for bb in range(dim)]) for a in range(dim)])
        out[regime] = pairing_with(hproj)
    return out


def regime_rates(pairings, omegas, delta1, delta2, slack=0.15, floor=1e-13):
    """Fit log-log decay slopes of |pairing| vs omega per regime and
    compare against the guaranteed exponents (1-d1, 2 d1 d2 - 1, d1 - 1/2).

    pairings: dict regime -> array over the ladder (needs >= 4 levels).
    Zero/noise-floor pairings pass trivially (slope undefined).  The total
    pairing is extrapolated to its ladder limit with an error bar.
    """
    omegas = np.asarray(omegas, dtype=float)
    if len(omegas) < 4:
        raise ValueError("regime rate fit needs at least 4 ladder levels")
    targets = {"low": 1.0 - delta1, "spa": 2.0 * delta1 * delta2 - 1.0,
               "time": delta1 - 0.5}
    scale = max(max(np.abs(np.asarray(v, dtype=float)).max()
                    for v in pairings.values()), 1e-300)
    report = {"targets": targets, "regimes": {}}
    for regime, target in targets.items():
        vals = np.abs(np.asarray(pairings[regime], dtype=float))
        entry = {"values": vals, "target": target}
        if vals.max() < floor * max(1.0, scale):
            entry.update(slope=None, half=None, passed=True, note="below noise floor")
        else:
            vals_f = np.maximum(vals, floor * scale)
            slope, half = loglog_slope(omegas, vals_f)
            entry.update(slope=slope, half=half,
                         passed=bool(slope >= target - slack))
            diffs = np.diff(vals)
            entry["monotone"] = bool(np.all(diffs <= 0) or np.all(diffs >= 0))
            if not entry["monotone"]:
                entry["note"] = "non-monotone pairing sequence"
        report["regimes"][regime] = entry
    if "total" in pairings:
        ratio = float(np.median(omegas[1:] / omegas[:-1]))
        limit, err = richardson(np.asarray(pairings["total"], dtype=float), ratio)
        report["total"] = {"limit": limit, "errbar": err,
                           "vanishes": bool(abs(limit) <= err + floor * scale)}
    report["passed"] = bool(all(e["passed"] for e in report["regimes"].values())
                            and report.get("total", {}).get("vanishes", True))
    return report
