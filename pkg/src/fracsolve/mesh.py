"""Q1 finite elements on uniform Cartesian meshes of the unit square.

Boundary nodes are eliminated: every matrix and vector is indexed by the
interior nodes only, numbered row-major (x fastest).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

MIN_LEVEL = 2
MAX_LEVEL = 12

# closed-form Q1 element matrices on a square cell, local nodes ordered
# (0,0), (1,0), (1,1), (0,1)
_ELEMENT_STIFFNESS = np.array(
    [[4.0, -1.0, -2.0, -1.0],
     [-1.0, 4.0, -1.0, -2.0],
     [-2.0, -1.0, 4.0, -1.0],
     [-1.0, -2.0, -1.0, 4.0]]
) / 6.0
_ELEMENT_MASS = np.array(
    [[4.0, 2.0, 1.0, 2.0],
     [2.0, 4.0, 2.0, 1.0],
     [1.0, 2.0, 4.0, 2.0],
     [2.0, 1.0, 2.0, 4.0]]
) / 36.0

# 4-point Gauss-Legendre on [0, 1]
_GL_POINTS, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_POINTS = 0.5 * (_GL_POINTS + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class CartesianMesh:
    level: int

    def __post_init__(self):
        if not isinstance(self.level, (int, np.integer)) or isinstance(self.level, bool):
            raise TypeError(f"mesh level must be an integer, got {self.level!r}")
        if not MIN_LEVEL <= self.level <= MAX_LEVEL:
            raise ValueError(f"mesh level must lie in [{MIN_LEVEL}, {MAX_LEVEL}], got {self.level}")

    @property
    def nodes_per_side(self):
        return 2**self.level

    @property
    def cells_per_side(self):
        return self.nodes_per_side - 1

    @property
    def h(self):
        return 1.0 / self.cells_per_side

    @property
    def interior_per_side(self):
        return self.nodes_per_side - 2

    @property
    def n_dofs(self):
        return self.interior_per_side**2

    @property
    def coordinates(self):
        """1D node coordinates, boundary included."""
        return np.arange(self.nodes_per_side) / self.cells_per_side

    @property
    def interior_coordinates(self):
        return self.coordinates[1:-1]

    def interior_points(self):
        """``(x1, x2)`` arrays of interior node coordinates in DOF order."""
        x = self.interior_coordinates
        X1, X2 = np.meshgrid(x, x, indexing="xy")
        return X1.ravel(), X2.ravel()

    def interior_index(self):
        """Map from full node number to interior DOF number (-1 on the boundary)."""
        n = self.nodes_per_side
        index = -np.ones(n * n, dtype=np.int64)
        i = np.arange(1, n - 1)
        full = (i[:, None] * n + i[None, :]).ravel()
        index[full] = np.arange(full.size)
        return index

    def to_grid(self, values):
        """Reshape an interior vector to a full nodal grid with zero boundary, [row=y, col=x]."""
        n = self.nodes_per_side
        grid = np.zeros((n, n))
        grid[1:-1, 1:-1] = np.asarray(values).reshape(self.interior_per_side, self.interior_per_side)
        return grid


def build_mesh(level):
    return CartesianMesh(int(level) if isinstance(level, (int, np.integer)) else level)


def _cell_connectivity(mesh):
    n = mesh.nodes_per_side
    c = np.arange(mesh.cells_per_side)
    # lower-left node of each cell, cells row-major
    ll = (c[:, None] * n + c[None, :]).ravel()
    return np.stack([ll, ll + 1, ll + n + 1, ll + n], axis=1)


def _assemble(mesh, element):
    conn = _cell_connectivity(mesh)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.tile(element.ravel(), conn.shape[0])
    n_full = mesh.nodes_per_side**2
    full = sp.coo_matrix((vals, (rows, cols)), shape=(n_full, n_full)).tocsr()
    full.sum_duplicates()
    return full


def _restrict(mesh, full):
    interior = np.flatnonzero(mesh.interior_index() >= 0)
    A = full[interior][:, interior].tocsr()
    A.sort_indices()
    return A


def assemble_stiffness_full(mesh):
    """Stiffness matrix over all nodes, boundary rows included."""
    return _assemble(mesh, _ELEMENT_STIFFNESS)


def assemble_mass_full(mesh):
    return _assemble(mesh, _ELEMENT_MASS * mesh.h**2)


def assemble_stiffness(mesh):
    """Q1 stiffness matrix on interior nodes; h-independent in 2D."""
    return _restrict(mesh, assemble_stiffness_full(mesh))


def assemble_mass(mesh):
    """Q1 mass matrix on interior nodes."""
    return _restrict(mesh, assemble_mass_full(mesh))


# ---------------------------------------------------------------- load data


@dataclass(frozen=True)
class SineProduct:
    """amplitude * sin(n pi x1) sin(m pi x2)."""

    n: int = 1
    m: int = 1
    amplitude: float = 1.0

    def __call__(self, x1, x2):
        return self.amplitude * np.sin(self.n * np.pi * x1) * np.sin(self.m * np.pi * x2)


@dataclass(frozen=True)
class Polynomial:
    """sum_{i,j} coeffs[i, j] x1^i x2^j."""

    coeffs: tuple

    def __call__(self, x1, x2):
        c = np.asarray(self.coeffs, dtype=float)
        return np.polynomial.polynomial.polyval2d(x1, x2, c)


@dataclass(frozen=True)
class Indicator:
    """Indicator function of the rectangle [x_lo, x_hi] x [y_lo, y_hi]."""

    x_lo: float = 0.25
    x_hi: float = 0.75
    y_lo: float = 0.25
    y_hi: float = 0.75

    def __call__(self, x1, x2):
        inside = (x1 >= self.x_lo) & (x1 <= self.x_hi) & (x2 >= self.y_lo) & (x2 <= self.y_hi)
        return inside.astype(float)


@dataclass(frozen=True)
class NodalFunction:
    """Q1 interpolant of nodal values given on the interior nodes."""

    values: np.ndarray


def _quadrature_load(mesh, func):
    n = mesh.nodes_per_side
    h = mesh.h
    xs = mesh.coordinates
    # 1D shape functions at the Gauss points: phi0 = 1 - t, phi1 = t
    t = _GL_POINTS
    shape = np.stack([1.0 - t, t])  # (2, q)
    load = np.zeros(n * n)
    conn = _cell_connectivity(mesh).reshape(mesh.cells_per_side, mesh.cells_per_side, 4)
    for row in range(mesh.cells_per_side):
        y = xs[row] + h * t  # (q,)
        x = xs[:-1, None] + h * t[None, :]  # (cells, q)
        X = x[:, None, :]  # (cells, qy, qx)
        Y = y[None, :, None]
        vals = func(np.broadcast_to(X, (x.shape[0], t.size, t.size)),
                    np.broadcast_to(Y, (x.shape[0], t.size, t.size)))
        vals = vals * (_GL_WEIGHTS[None, :, None] * _GL_WEIGHTS[None, None, :]) * h * h
        # local node k has (ix, iy) = (0,0), (1,0), (1,1), (0,1)
        contrib = np.empty((x.shape[0], 4))
        for k, (ix, iy) in enumerate(((0, 0), (1, 0), (1, 1), (0, 1))):
            contrib[:, k] = np.einsum("cyx,y,x->c", vals, shape[iy], shape[ix])
        np.add.at(load, conn[row].ravel(), contrib.ravel())
    return load


def _hat_interval_integrals(xs, lo, hi):
    """int_{[lo, hi]} hat_i(x) dx for every 1D hat function on the nodes ``xs``."""
    h = xs[1] - xs[0]

    def antiderivative_left(i, a, b):
        # rising part on [x_{i-1}, x_i]: (x - x_{i-1}) / h
        left = xs[i] - h
        a = np.clip(a, left, xs[i])
        b = np.clip(b, left, xs[i])
        return ((b - left) ** 2 - (a - left) ** 2) / (2 * h)

    def antiderivative_right(i, a, b):
        right = xs[i] + h
        a = np.clip(a, xs[i], right)
        b = np.clip(b, xs[i], right)
        return ((right - a) ** 2 - (right - b) ** 2) / (2 * h)

    idx = np.arange(xs.size)
    out = antiderivative_left(idx, lo, hi) + antiderivative_right(idx, lo, hi)
    # boundary hats only live on one side of their node
    out[0] = antiderivative_right(np.array([0]), lo, hi)[0]
    out[-1] = antiderivative_left(np.array([xs.size - 1]), lo, hi)[0]
    return out


def _indicator_load(mesh, ind):
    xs = mesh.coordinates
    lo_x, hi_x = max(ind.x_lo, 0.0), min(ind.x_hi, 1.0)
    lo_y, hi_y = max(ind.y_lo, 0.0), min(ind.y_hi, 1.0)
    if lo_x >= hi_x or lo_y >= hi_y:
        return np.zeros(mesh.nodes_per_side**2)
    fx = _hat_interval_integrals(xs, lo_x, hi_x)
    fy = _hat_interval_integrals(xs, lo_y, hi_y)
    return np.outer(fy, fx).ravel()


def assemble_load(mesh, f):
    """Load vector (f, psi_j) over interior nodes.

    ``f`` is a :class:`SineProduct`, :class:`Polynomial`, :class:`Indicator`
    or :class:`NodalFunction`; the number 0 gives the zero vector.
    """
    if isinstance(f, (int, float)) and f == 0:
        return np.zeros(mesh.n_dofs)
    if isinstance(f, NodalFunction):
        values = np.asarray(f.values, dtype=float)
        if values.shape != (mesh.n_dofs,):
            raise ValueError(f"nodal data must have {mesh.n_dofs} entries, got {values.shape}")
        return assemble_mass(mesh) @ values
    if isinstance(f, Indicator):
        full = _indicator_load(mesh, f)
    elif isinstance(f, (SineProduct, Polynomial)):
        full = _quadrature_load(mesh, f)
    else:
        raise TypeError(f"unknown load descriptor {f!r}")
    return full[mesh.interior_index() >= 0]


def export_coo(A, path=None):
    """Coordinate text, one ``row col value`` triple per line, 1-based indices."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    text = "".join(
        f"{C.row[k] + 1} {C.col[k] + 1} {C.data[k]:.17g}\n" for k in order
    )
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def nodal_interpolant(mesh, func):
    """Values of ``func`` at the interior nodes."""
    x1, x2 = mesh.interior_points()
    return np.asarray(func(x1, x2), dtype=float)
