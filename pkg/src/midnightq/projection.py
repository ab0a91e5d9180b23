"""Galerkin projection solver for the stationary density of the daily diffusion.

The stationary density pi* satisfies an adjoint identity: for every bounded
test function f, the expected one-step change L f = P f - f integrates to
zero against pi*.  Writing pi* = q * r for a strictly positive reference
density r turns that into an orthogonality statement in the r-weighted L2
space: q is orthogonal to every L f.  Projecting the constant function onto
the span of {L f_i} for a finite element family {f_i} and rescaling the
orthogonal remainder yields a computable approximation of q, hence of pi*.

The test space is a family of piecewise-linear hats on a uniform grid with
a node pinned at zero, where the kernel's conditional mean has a kink.  The
inner one-step expectation P f is available in closed form (truncated
Gaussian moments per linear piece); only the outer r-weighted integrals
need quadrature: fixed-order Gauss-Legendre per element plus composite
panels marching down the two semi-infinite tails beyond the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import lsqr
from scipy.special import ndtr

from .model import DiffusionParams
from .diffusion import DensityTable, TransitionKernel, proxy_density

_SQRT2PI = math.sqrt(2.0 * math.pi)


class GramError(RuntimeError):
    """Gram assembly or solve failed in a way that signals misconfiguration."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function, zero outside its breakpoints."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or nodes.size != values.size:
            raise ValueError("nodes and values must be matching 1-d arrays, length >= 2")
        if not np.all(np.diff(nodes) > 0.0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.nodes, self.values, left=0.0, right=0.0)
        inside = (x >= self.nodes[0]) & (x <= self.nodes[-1])
        out = np.where(inside, out, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class FemBasis:
    """Uniform hat-function family on [grid_lo, grid_hi] with a node at zero."""

    grid_lo: float
    grid_hi: float
    num_elements: int
    nodes: np.ndarray

    @property
    def size(self) -> int:
        """Number of basis functions (one hat per node)."""
        return self.num_elements + 1

    @property
    def width(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def hat(self, i: int) -> PiecewiseLinear:
        """The i-th hat as a standalone piecewise-linear function."""
        t = self.nodes
        if i == 0:
            return PiecewiseLinear(t[:2], np.array([1.0, 0.0]))
        if i == self.num_elements:
            return PiecewiseLinear(t[-2:], np.array([0.0, 1.0]))
        return PiecewiseLinear(t[i - 1 : i + 2], np.array([0.0, 1.0, 0.0]))

    def hat_matrix(self, x) -> np.ndarray:
        """Values of every hat at the points ``x``; shape (size, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = self.width
        tent = 1.0 - np.abs(x[None, :] - self.nodes[:, None]) / h
        inside = (x >= self.grid_lo) & (x <= self.grid_hi)
        return np.clip(tent, 0.0, None) * inside[None, :]


def build_basis(grid_lo: float, grid_hi: float, m: int) -> FemBasis:
    """Uniform basis with ``m`` elements; zero must land on a node.

    The kernel's conditional mean is non-smooth at zero, so zero has to be
    resolvable by the element boundaries; inputs whose uniform grid misses it
    are rejected.
    """
    if not grid_lo < 0.0 < grid_hi:
        raise ValueError(
            f"the working domain must straddle zero, got ({grid_lo!r}, {grid_hi!r})"
        )
    if m < 4:
        raise ValueError(f"need at least 4 elements, got {m!r}")
    h = (grid_hi - grid_lo) / m
    j0 = round(-grid_lo / h)
    if abs(grid_lo + j0 * h) > 1e-9 * h or not 0 < j0 < m:
        raise ValueError(
            "zero must be a node of the uniform grid (the kernel changes branch there); "
            f"got grid ({grid_lo!r}, {grid_hi!r}) with {m} elements"
        )
    # Anchor the grid at the zero node so it is exact, not merely close.
    nodes = (np.arange(m + 1) - j0) * h
    return FemBasis(
        grid_lo=float(nodes[0]), grid_hi=float(nodes[-1]), num_elements=m, nodes=nodes
    )


def default_domain(d: DiffusionParams) -> tuple[float, float]:
    """Working domain covering the Gaussian branch to 6 sd and the
    exponential branch to twelve e-folds of decay."""
    if d.tail_rate <= 0.0:
        raise ValueError("default domain needs a stable regime (positive tail rate)")
    lo = d.gaussian_center - 6.0 * math.sqrt(d.ou_variance)
    hi = 12.0 / d.tail_rate
    return lo, hi


def default_basis(d: DiffusionParams, m: int) -> FemBasis:
    """Basis on the default domain, shifted minimally so zero is a node."""
    lo, hi = default_domain(d)
    h = (hi - lo) / m
    j0 = min(max(round(-lo / h), 1), m - 1)
    lo = -j0 * h
    return build_basis(lo, lo + m * h, m)


def _piece_integrals(breaks: np.ndarray, means: np.ndarray, sd: float):
    """Gaussian moments over each interval of ``breaks``, per mean.

    Returns (I0, I1) of shape (n_pieces, n_means): the Gaussian mass and
    first moment of Normal(mean, sd^2) restricted to each piece.  Uses the
    survival function on the right half so far-tail masses keep relative
    precision.
    """
    z = (breaks[:, None] - means[None, :]) / sd
    cdf = ndtr(z)
    sf = ndtr(-z)
    pdf = np.exp(-0.5 * z * z) / _SQRT2PI
    use_sf = (z[:-1] + z[1:]) > 0.0
    i0 = np.where(use_sf, sf[:-1] - sf[1:], cdf[1:] - cdf[:-1])
    i1 = means[None, :] * i0 + sd * (pdf[:-1] - pdf[1:])
    return i0, i1


def apply_kernel_operator(kernel: TransitionKernel, f, x):
    """One-step expectation P f at the points ``x``, in closed form.

    ``f`` may be a PiecewiseLinear (zero outside its support) or a plain
    number, meaning the constant function, which P preserves exactly.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(f, (int, float)):
        out = np.full(x_arr.shape, float(f))
        return out if np.ndim(x) else float(out[0])
    d = kernel.diffusion
    means = np.asarray(kernel.step_base(x_arr), dtype=float) + d.drift
    sd = math.sqrt(d.variance)
    t = f.nodes
    v = f.values
    i0, i1 = _piece_integrals(t, means, sd)
    slopes = np.diff(v) / np.diff(t)
    intercepts = v[:-1] - slopes * t[:-1]
    out = intercepts @ i0 + slopes @ i1
    return out if np.ndim(x) else float(out[0])


def _pf_hat_matrix(basis: FemBasis, kernel: TransitionKernel, x: np.ndarray) -> np.ndarray:
    """P applied to every hat, at the points ``x``; shape (size, len(x))."""
    d = kernel.diffusion
    means = np.asarray(kernel.step_base(x), dtype=float) + d.drift
    sd = math.sqrt(d.variance)
    t = basis.nodes
    h = basis.width
    i0, i1 = _piece_integrals(t, means, sd)
    up = (i1 - t[:-1, None] * i0) / h
    down = (t[1:, None] * i0 - i1) / h
    pf = np.zeros((basis.size, x.size))
    pf[1:] += up
    pf[:-1] += down
    return pf


def lf_hat_matrix(basis: FemBasis, kernel: TransitionKernel, x) -> np.ndarray:
    """L applied to every hat (P f - f) at the points ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return _pf_hat_matrix(basis, kernel, x) - basis.hat_matrix(x)


def _gauss_legendre01(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return (nodes + 1.0) / 2.0, weights / 2.0


@dataclass(eq=False)
class GramSystem:
    """Assembled normal equations of the projection, plus quadrature state.

    ``matrix`` holds the pairwise r-weighted inner products of the mapped
    basis, ``rhs`` their inner products with the constant function.  The
    quadrature nodes, weights (r included), and mapped-basis values are kept
    so the reconstruction reuses exactly the same discrete inner product.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    reference: object
    kernel: TransitionKernel
    basis: FemBasis
    quad_x: np.ndarray
    quad_w: np.ndarray
    lf: np.ndarray
    e_mass: float
    n_core: int
    rhs_scale: float = 1.0
    coefficients: np.ndarray | None = None
    residual: float | None = None
    condition_estimate: float | None = None


def _tail_segments(r, cut: float, step_sd: float, outward: float) -> list[tuple[float, float]]:
    """Segments marching away from ``cut``, one step-sd long each.

    Stops once the reference has shed 45 e-folds of its tail mass or after
    ten step standard deviations, beyond which the mapped basis functions
    are zero to double precision.
    """
    def remaining(x: float) -> float:
        c = float(r.cdf(x))
        return c if outward < 0 else 1.0 - c

    total = remaining(cut)
    if total <= 1e-280:
        return []
    segments = []
    a = cut
    for _ in range(10):
        b = a + outward * step_sd
        segments.append((a, b))
        if remaining(b) <= math.exp(-45.0) * total:
            break
        a = b
    return segments


def assemble_gram(
    basis: FemBasis,
    kernel: TransitionKernel,
    r,
    quad_order: int = 16,
    tail_order: int = 24,
) -> GramSystem:
    """Assemble the r-weighted normal equations of the projection.

    The reference density ``r`` must be callable and expose a ``cdf``.  The
    two semi-infinite tails beyond the grid are integrated by composite
    Gauss-Legendre panels, one kernel-step standard deviation long, marched
    outward until either the reference mass or the mapped basis functions
    are exhausted.
    """
    u, wu = _gauss_legendre01(quad_order)
    t = basis.nodes
    h = basis.width
    core_x = (t[:-1, None] + h * u[None, :]).ravel()
    core_w = (h * np.tile(wu, basis.num_elements)) * np.asarray(r(core_x), dtype=float)
    if not np.isfinite(core_w).all():
        bad = int(np.argmin(np.isfinite(core_w)))
        raise GramError(
            f"non-finite reference weight in element {bad // quad_order} "
            f"(x={core_x[bad]!r})"
        )

    ut, wut = _gauss_legendre01(tail_order)
    step_sd = math.sqrt(kernel.diffusion.variance)
    xs = [core_x]
    ws = [core_w]
    for cut, outward in ((basis.grid_lo, -1.0), (basis.grid_hi, +1.0)):
        for a, b in _tail_segments(r, cut, step_sd, outward):
            seg_x = a + (b - a) * ut
            xs.append(seg_x)
            ws.append(abs(b - a) * wut * np.asarray(r(seg_x), dtype=float))
    quad_x = np.concatenate(xs)
    quad_w = np.concatenate(ws)
    if not (np.isfinite(quad_x).all() and np.isfinite(quad_w).all()):
        raise GramError("tail quadrature produced non-finite nodes or weights")

    lf = lf_hat_matrix(basis, kernel, quad_x)
    weighted = lf * np.sqrt(quad_w)[None, :]
    matrix = weighted @ weighted.T
    matrix = 0.5 * (matrix + matrix.T)
    rhs = lf @ quad_w
    if not (np.isfinite(matrix).all() and np.isfinite(rhs).all()):
        raise GramError("non-finite Gram entries; check the reference density scale")
    return GramSystem(
        matrix=matrix,
        rhs=rhs,
        reference=r,
        kernel=kernel,
        basis=basis,
        quad_x=quad_x,
        quad_w=quad_w,
        lf=lf,
        e_mass=float(quad_w.sum()),
        n_core=core_x.size,
        rhs_scale=float(np.linalg.norm(np.abs(lf) @ quad_w)),
    )


def solve_gram(system: GramSystem, rel_tol: float = 1e-8) -> np.ndarray:
    """Least-squares solve of the assembled system.

    Tries a Cholesky factorization with a tiny diagonal shift first, then
    falls back to LSQR.  The acceptance test is on the residual: any
    coefficient vector reproducing the right-hand side is as good as any
    other, because the projection itself is unique.
    """
    a = system.matrix
    b = system.rhs
    m = b.size
    shift = 1e-12 * np.trace(a) / m
    norm_b = float(np.linalg.norm(b))
    # The rhs entries carry roundoff of order eps times their absolute-value
    # quadrature sums; no solver can push the residual below that noise.
    tol = max(rel_tol * norm_b, 100.0 * np.finfo(float).eps * system.rhs_scale)

    def _residual(alpha: np.ndarray) -> float:
        return float(np.linalg.norm(a @ alpha - b))

    alpha = None
    try:
        factor = cho_factor(a + shift * np.eye(m), lower=True)
        candidate = cho_solve(factor, b)
        if _residual(candidate) <= tol:
            alpha = candidate
    except (np.linalg.LinAlgError, ValueError):
        alpha = None

    if alpha is None:
        candidate = lsqr(a, b, atol=1e-14, btol=1e-14, iter_lim=50 * m)[0]
        res = _residual(candidate)
        if res > tol:
            raise GramError(
                f"Gram solve residual {res:.3e} exceeds tolerance {tol:.3e}; "
                "check basis and quadrature",
                residual=res,
            )
        alpha = candidate

    system.coefficients = alpha
    system.residual = _residual(alpha)
    system.condition_estimate = float(np.linalg.cond(system.matrix))
    return alpha


class RatioReconstruction:
    """Stationary-density estimate r * (1 - projection) / norm_sq.

    ``projected`` is the best approximation of the constant function inside
    the mapped test space, ``norm_sq`` the squared distance left over, and
    ``ratio``/``density`` the resulting correction factor and density.
    """

    def __init__(self, system: GramSystem):
        alpha = system.coefficients
        if alpha is None:
            raise GramError("solve the Gram system before reconstructing the density")
        self._system = system
        self._alpha = alpha
        norm_sq = float(
            system.e_mass - 2.0 * alpha @ system.rhs + alpha @ system.matrix @ alpha
        )
        if norm_sq <= 0.0:
            raise GramError(
                "projection captured the constant function (nonpositive remainder norm)"
            )
        self.norm_sq = norm_sq

    def projected(self, x):
        """The projected constant function, evaluable anywhere."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = self._alpha @ lf_hat_matrix(self._system.basis, self._system.kernel, x_arr)
        return out if np.ndim(x) else float(out[0])

    def ratio(self, x):
        """Correction factor against the reference density."""
        out = (1.0 - np.atleast_1d(self.projected(x))) / self.norm_sq
        return out if np.ndim(x) else float(out[0])

    def density(self, x):
        """Unclipped stationary-density estimate."""
        out = np.atleast_1d(np.asarray(self._system.reference(x), dtype=float)) * np.atleast_1d(
            self.ratio(x)
        )
        return out if np.ndim(x) else float(out[0])

    def domain_mass(self) -> tuple[float, float]:
        """(raw mass, clipped-away negative mass) over the working domain."""
        sl = slice(0, self._system.n_core)
        q = (1.0 - self._system.lf[:, sl].T @ self._alpha) / self.norm_sq
        w = self._system.quad_w[sl]
        raw = float(w @ q)
        clipped = float(w @ np.clip(-q, 0.0, None))
        return raw, clipped

    def bin_masses(self, edges: np.ndarray, points_per_bin: int = 8) -> np.ndarray:
        """Per-bin integrals of the clipped density.

        The density has derivative kinks at every basis node, so each bin is
        split there before applying the fixed-order panel rule; every panel
        then integrates a smooth piece.
        """
        edges = np.asarray(edges, dtype=float)
        nodes = self._system.basis.nodes
        interior = nodes[(nodes > edges[0]) & (nodes < edges[-1])]
        cuts = np.unique(np.concatenate([edges, interior]))
        u, wu = _gauss_legendre01(points_per_bin)
        widths = np.diff(cuts)
        x = (cuts[:-1, None] + widths[:, None] * u[None, :]).ravel()
        vals = np.clip(self.density(x), 0.0, None).reshape(-1, points_per_bin)
        panel = widths * (vals @ wu)
        masses = np.zeros(edges.size - 1)
        np.add.at(masses, np.searchsorted(edges, cuts[:-1], side="right") - 1, panel)
        return masses

    def table(self, grid: np.ndarray):
        """Clipped, domain-renormalized samples plus diagnostics.

        Returns (DensityTable, diagnostics dict).  Diagnostics report the
        raw mass before any clipping, the clipped-away mass, and the largest
        negative excursion on the requested grid.
        """
        grid = np.asarray(grid, dtype=float)
        raw_vals = np.atleast_1d(self.density(grid))
        raw_mass, clipped_mass = self.domain_mass()
        clipped = np.clip(raw_vals, 0.0, None)
        positive_mass = raw_mass + clipped_mass
        table = DensityTable(x=grid, density=clipped / positive_mass)
        diagnostics = {
            "norm_sq": self.norm_sq,
            "residual": self._system.residual,
            "condition_estimate": self._system.condition_estimate,
            "raw_mass": raw_mass,
            "clipped_mass": clipped_mass,
            "max_clip": float(np.clip(-raw_vals, 0.0, None).max()),
        }
        return table, diagnostics


def reconstruct_density(system: GramSystem, basis: FemBasis, r) -> RatioReconstruction:
    """Turn a solved Gram system into the stationary-density estimate.

    ``basis`` and ``r`` must be the ones the system was assembled with; the
    quadrature cached on the system guarantees the remainder norm uses the
    identical discrete inner product.
    """
    del basis, r
    return RatioReconstruction(system)


def project_stationary_density(
    d: DiffusionParams,
    mu: float,
    num_elements: int = 160,
    grid_lo: float | None = None,
    grid_hi: float | None = None,
    quad_order: int = 16,
    tail_order: int = 24,
):
    """End-to-end pipeline: proxy reference, basis, assembly, solve, rebuild.

    Returns (basis, system, reconstruction).
    """
    r = proxy_density(d, mu)
    if grid_lo is None or grid_hi is None:
        basis = default_basis(d, num_elements)
    else:
        basis = build_basis(grid_lo, grid_hi, num_elements)
    kernel = TransitionKernel(diffusion=d, service_prob=mu)
    system = assemble_gram(basis, kernel, r, quad_order=quad_order, tail_order=tail_order)
    solve_gram(system)
    recon = reconstruct_density(system, basis, r)
    return basis, system, recon
