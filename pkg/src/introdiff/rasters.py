"""Plain-text grid raster I/O.

Format: six header lines (``ncols``, ``nrows``, ``xllcorner``, ``yllcorner``,
``cellsize``, ``NODATA_value``) followed by ``nrows`` whitespace-separated
rows of values, top row = northmost.  Values are written with ``repr`` so a
write/read round trip is bit-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, RasterParseError
from .grid import CovariateRaster, GridSpec

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass
class RasterData:
    """A parsed raster: values (NaN where NODATA) plus geometry."""

    values: np.ndarray
    origin: tuple[float, float]
    cellsize: float
    nodata: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


def write_ascii_raster(
    path: str | os.PathLike,
    values: np.ndarray,
    origin: tuple[float, float],
    cellsize: float,
    nodata: float = -9999.0,
    valid: np.ndarray | None = None,
) -> None:
    """Write a fine-grid array (row 0 = north) to the plain-text format.

    Cells where ``valid`` is False (or the value is NaN) are written as the
    NODATA value.
    """
    values = np.asarray(values, dtype=float)
    nrows, ncols = values.shape
    if valid is None:
        valid = np.isfinite(values)
    nodata = float(nodata)
    with open(path, "w") as f:
        f.write(f"ncols {ncols}\n")
        f.write(f"nrows {nrows}\n")
        f.write(f"xllcorner {float(origin[0])!r}\n")
        f.write(f"yllcorner {float(origin[1])!r}\n")
        f.write(f"cellsize {float(cellsize)!r}\n")
        f.write(f"NODATA_value {nodata!r}\n")
        for i in range(nrows):
            row = [
                repr(float(values[i, j])) if valid[i, j] else repr(nodata)
                for j in range(ncols)
            ]
            f.write(" ".join(row) + "\n")


def read_raster(path: str | os.PathLike) -> RasterData:
    """Parse a plain-text grid raster; NODATA cells become NaN."""
    with open(path) as f:
        header: dict[str, float] = {}
        for _ in range(6):
            line = f.readline()
            if not line:
                raise RasterParseError(f"{path}: truncated header")
            parts = line.split()
            if len(parts) != 2:
                raise RasterParseError(f"{path}: malformed header line {line!r}")
            key = parts[0].lower()
            if key not in _HEADER_KEYS:
                raise RasterParseError(f"{path}: unexpected header key {parts[0]!r}")
            try:
                header[key] = float(parts[1])
            except ValueError:
                raise RasterParseError(
                    f"{path}: non-numeric header value {parts[1]!r}"
                ) from None
        missing = [k for k in _HEADER_KEYS if k not in header]
        if missing:
            raise RasterParseError(f"{path}: missing header keys {missing}")

        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        values = np.empty((nrows, ncols), dtype=float)
        for i in range(nrows):
            line = f.readline()
            if not line:
                raise RasterParseError(f"{path}: expected {nrows} rows, got {i}")
            cells = line.split()
            if len(cells) != ncols:
                raise RasterParseError(
                    f"{path}: row {i} has {len(cells)} cells, expected {ncols}"
                )
            try:
                values[i, :] = [float(c) for c in cells]
            except ValueError as e:
                raise RasterParseError(f"{path}: non-numeric cell in row {i}: {e}") from None

    nodata = header["nodata_value"]
    values[values == nodata] = np.nan
    return RasterData(
        values=values,
        origin=(header["xllcorner"], header["yllcorner"]),
        cellsize=header["cellsize"],
        nodata=nodata,
    )


def read_ascii_raster(path: str | os.PathLike, expected_grid: GridSpec) -> RasterData:
    """Read a raster and check it is aligned with the fine grid.

    Raises :class:`AlignmentError` when shape, cell size, or corner disagree
    with ``expected_grid``.
    """
    data = read_raster(path)
    g = expected_grid
    nrows, ncols = data.values.shape
    if (nrows, ncols) != (g.n_fine_rows, g.n_fine_cols):
        raise AlignmentError(
            f"{path}: raster is {nrows}x{ncols}, grid expects "
            f"{g.n_fine_rows}x{g.n_fine_cols}"
        )
    if abs(data.cellsize - g.fine_cell_size) > 1e-6:
        raise AlignmentError(
            f"{path}: cellsize {data.cellsize} != fine cell size {g.fine_cell_size}"
        )
    if (
        abs(data.origin[0] - g.origin[0]) > 1e-6
        or abs(data.origin[1] - g.origin[1]) > 1e-6
    ):
        raise AlignmentError(f"{path}: corner {data.origin} != grid origin {g.origin}")
    return data


def load_layer(raster: CovariateRaster, name: str, path: str | os.PathLike) -> np.ndarray:
    """Read an aligned raster and attach it as a covariate layer.

    NODATA cells must fall outside the grid mask; returns the per-cell valid
    mask so callers composing a grid can intersect masks first.
    """
    data = read_ascii_raster(path, raster.grid)
    values = data.values.copy()
    # NODATA outside the mask is irrelevant to the layer contract; fill with 0
    values[~data.valid] = 0.0
    if not data.valid[raster.grid.domain_mask].all():
        raise AlignmentError(f"{path}: NODATA cells inside the domain mask")
    raster.add_layer(name, values)
    return data.valid
