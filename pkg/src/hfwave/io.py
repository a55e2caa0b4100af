"""Binary field dumps and CSV helpers.

Field dump layout: a 64-byte header (magic "BLAB", version, n, Nt, Nx,
T, L, component count) followed by little-endian float64 payload,
row-major with t slowest, then x1, x2.  Metric dumps store the
(1+n)(2+n)/2 independent components in lexicographic (a <= b) order.
"""

import struct

import numpy as np

from .grid import SpacetimeGrid

MAGIC = b"BLAB"
VERSION = 1
_HEADER = struct.Struct("<4sII QQ ddQ")   # magic, version, n, Nt, Nx, T, L, ncomp
HEADER_SIZE = 64


def _pack_header(grid, ncomp):
    raw = _HEADER.pack(MAGIC, VERSION, grid.n, grid.Nt, grid.Nx, grid.T, grid.L, ncomp)
    return raw + b"\0" * (HEADER_SIZE - len(raw))


def _unpack_header(raw):
    magic, version, n, nt, nx, T, L, ncomp = _HEADER.unpack(raw[:_HEADER.size])
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported dump version {version}")
    return SpacetimeGrid(n, T, L, nt, nx), ncomp


def write_field(path, grid, *fields):
    """Dump one or more grid functions to a binary file."""
    arrs = [np.ascontiguousarray(np.asarray(f, dtype="<f8")) for f in fields]
    for a in arrs:
        if a.shape != grid.shape:
            raise ValueError(f"field shape {a.shape} does not match grid {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(_pack_header(grid, len(arrs)))
        for a in arrs:
            fh.write(a.tobytes())


def read_field(path):
    """Load a dump; returns (grid, [fields])."""
    with open(path, "rb") as fh:
        grid, ncomp = _unpack_header(fh.read(HEADER_SIZE))
        count = int(np.prod(grid.shape))
        fields = [np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(grid.shape).copy()
                  for _ in range(ncomp)]
    return grid, fields


def metric_components(n):
    """Lexicographic (a <= b) index pairs for the symmetric metric."""
    d = 1 + n
    return [(a, b) for a in range(d) for b in range(a, d)]


def write_metric(path, metric):
    pairs = metric_components(metric.grid.n)
    write_field(path, metric.grid, *[metric.g[a, b] for a, b in pairs])


def read_metric(path):
    from .geometry import MetricField

    grid, fields = read_field(path)
    pairs = metric_components(grid.n)
    if len(fields) != len(pairs):
        raise ValueError(f"expected {len(pairs)} metric components, found {len(fields)}")
    d = grid.ndim
    g = np.zeros((d, d) + grid.shape)
    for (a, b), comp in zip(pairs, fields):
        g[a, b] = comp
        g[b, a] = comp
    return MetricField(grid, g)


def write_csv(path, header, rows, preamble=()):
    """Deterministic CSV writer: fixed float format, '#' preamble lines."""
    with open(path, "w", newline="\n") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for item in row:
                if isinstance(item, float):
                    cells.append(f"{item:.17g}")
                elif isinstance(item, (np.floating,)):
                    cells.append(f"{float(item):.17g}")
                else:
                    cells.append(str(item))
            fh.write(",".join(cells) + "\n")
