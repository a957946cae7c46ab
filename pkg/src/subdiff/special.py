"""Power-law kernels, weakly singular convolutions, and the Mittag-Leffler function.

Everything on uniform time grids.  The convolution routines are the numerical
backbone of the solvers: a trapezoid rule for regular integrands and a
product-integration rule (kernel integrated exactly cell by cell) for the
power kernels Y_nu(t) = t^(nu-1)/Gamma(nu), which are singular at the origin
for nu < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy import special as sps
from scipy.signal import fftconvolve

__all__ = [
    "UniformTimeGrid",
    "PowerKernel",
    "gamma",
    "y_eval",
    "product_convolve_y",
    "product_convolve_cells",
    "convolve",
    "volterra_solve",
    "mittag_leffler",
    "beta_integral",
]


def gamma(x):
    """Gamma function for positive arguments (scalar or array).

    Raises ValueError on any x <= 0; use the reflection formula yourself if
    you genuinely need negative arguments.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("gamma: argument must be positive")
    out = sps.gamma(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


@dataclass(frozen=True)
class UniformTimeGrid:
    """Uniform grid t_j = j*dt, j = 0..n_steps."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("UniformTimeGrid: dt must be positive")
        if self.n_steps < 1:
            raise ValueError("UniformTimeGrid: need at least one step")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


@dataclass(frozen=True)
class PowerKernel:
    """Y_nu(t) = t^(nu-1)/Gamma(nu); the family satisfies Y_mu * Y_nu = Y_(mu+nu)."""

    nu: float

    def __post_init__(self):
        if not self.nu > 0.0:
            raise ValueError("PowerKernel: exponent nu must be positive")


def _nu_of(kernel) -> float:
    return kernel.nu if isinstance(kernel, PowerKernel) else float(kernel)


def y_eval(kernel, t):
    """Evaluate Y_nu at t (scalar or array).

    t must be positive where nu < 1 (the kernel is singular at 0); for
    nu >= 1 the value at t = 0 is the continuous limit (1 for nu = 1, else 0).
    """
    nu = _nu_of(kernel)
    if nu <= 0.0:
        raise ValueError("y_eval: nu must be positive")
    tarr = np.asarray(t, dtype=float)
    if np.any(tarr < 0.0):
        raise ValueError("y_eval: t must be nonnegative")
    if nu < 1.0 and np.any(tarr == 0.0):
        raise ValueError("y_eval: Y_nu is singular at t = 0 for nu < 1")
    g = sps.gamma(nu)
    with np.errstate(divide="ignore"):
        out = np.where(tarr > 0.0, tarr ** (nu - 1.0) / g, 1.0 if nu == 1.0 else 0.0)
    return float(out) if np.isscalar(t) or tarr.ndim == 0 else out


def _y_cell_integrals(nu: float, dt: float, n_cells: int):
    """Exact per-cell integrals of Y_nu on [l*dt, (l+1)*dt], l = 0..n_cells-1.

    Returns (I0, I1) with I0[l] = int_cell Y_nu(u) du and
    I1[l] = int_cell Y_nu(u) * (u - l*dt)/dt du  (weight of the cell's right
    endpoint under linear interpolation in u).
    """
    ell = np.arange(n_cells, dtype=float)
    pow0 = (ell + 1.0) ** nu - ell ** nu
    pow1 = (ell + 1.0) ** (nu + 1.0) - ell ** (nu + 1.0)
    I0 = dt ** nu * pow0 / sps.gamma(nu + 1.0)
    I1 = dt ** nu * nu * pow1 / sps.gamma(nu + 2.0) - ell * I0
    return I0, I1


def product_convolve_cells(I0: np.ndarray, I1: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Product-integration convolution with an arbitrary kernel given by its cells.

    I0[l], I1[l] are the kernel's exact integrals over [l*dt, (l+1)*dt]
    (plain and first-moment-weighted as in _y_cell_integrals); f holds node
    values f_0..f_N of the regular factor, interpolated linearly per cell.
    Returns (k * f)(t_n) for n = 0..N.  Lower-triangular Toeplitz structure,
    evaluated with FFT convolutions.
    """
    f = np.asarray(f, dtype=complex if np.iscomplexobj(f) else float)
    n_nodes = f.shape[0]
    n = n_nodes - 1
    if I0.shape[0] < n:
        raise ValueError("product_convolve_cells: kernel cells shorter than grid")
    W1 = I0[:n] - I1[:n]
    # S1[m] = sum_l W1[l] f[m-l] over cells l = 0..m-1
    c1 = fftconvolve(W1, f)[:n_nodes]
    extra = np.zeros(n_nodes, dtype=c1.dtype)
    extra[: min(n_nodes, n)] = W1[: min(n_nodes, n)] * f[0]
    S1 = c1 - extra
    # S2[m] = sum_{j=1..m} I1[j-1] f[m-j]
    c2 = fftconvolve(I1[:n], f)[: n_nodes - 1]
    S2 = np.concatenate([np.zeros(1, dtype=c2.dtype), c2])
    out = S1 + S2
    out[0] = 0.0
    if not np.iscomplexobj(f):
        out = out.real
    return out


def product_convolve_y(kernel, f, grid: UniformTimeGrid, singular_origin: float | None = None) -> np.ndarray:
    """(Y_nu * f)(t_n) on the grid, second order for smooth f.

    The kernel is integrated exactly on every cell; f is interpolated
    linearly between nodes.  If f itself blows up like c*t^(p-1) at the
    origin, pass singular_origin=p: the leading power (calibrated on the
    first node after 0, f[0] is then ignored) is convolved in closed form
    via Y_nu * Y_p = Y_(nu+p) and only the remainder goes through the
    piecewise-linear rule.
    """
    nu = _nu_of(kernel)
    f = np.asarray(f, dtype=float)
    if f.shape[0] != grid.n_steps + 1:
        raise ValueError("product_convolve_y: f must be sampled on the grid nodes")
    if singular_origin is not None:
        p = float(singular_origin)
        if not p > 0.0:
            raise ValueError("product_convolve_y: singular_origin must be positive")
        cf = f[1] / y_eval(p, grid.dt)
        times = grid.times
        lead = np.zeros_like(f)
        lead[1:] = cf * y_eval(nu + p, times[1:])
        rem = f - cf * np.concatenate([[0.0], y_eval(p, times[1:])])
        rem[0] = 0.0
        I0, I1 = _y_cell_integrals(nu, grid.dt, grid.n_steps)
        out = lead + product_convolve_cells(I0, I1, rem)
        out[0] = 0.0
        return out
    I0, I1 = _y_cell_integrals(nu, grid.dt, grid.n_steps)
    return product_convolve_cells(I0, I1, f)


def convolve(f, g, grid: UniformTimeGrid) -> np.ndarray:
    """Trapezoid-rule convolution (f * g)(t_n) of two regular node samples.

    Symmetric in (f, g) bit for bit: the FFT pass runs in both argument
    orders and the results are averaged, so swapping f and g only swaps the
    operands of commutative additions.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n_nodes = grid.n_steps + 1
    if f.shape[0] != n_nodes or g.shape[0] != n_nodes:
        raise ValueError("convolve: f and g must be sampled on the grid nodes")
    full = 0.5 * (fftconvolve(f, g)[:n_nodes] + fftconvolve(g, f)[:n_nodes])
    out = grid.dt * (full - 0.5 * (f[0] * g + g[0] * f))
    out[0] = 0.0
    return out


_VOLTERRA_BASE = 64  # direct-loop block size of the divide-and-conquer solver


def volterra_solve(weights: np.ndarray, forcing: np.ndarray) -> np.ndarray:
    """Solve x_n = forcing_n + sum_{m<=n} weights_{n-m} x_m for n = 0..N.

    Discrete linear Volterra equation of the second kind with lower-
    triangular Toeplitz structure (the x_n term on the right is handled
    implicitly, so require weights_0 != 1).  Leading axes are independent
    batch problems; weights broadcast against forcing.  Divide and conquer:
    solve the first half, push its influence into the second half with one
    FFT convolution, recurse -- O(N log^2 N) per batch row.
    """
    forcing = np.asarray(forcing)
    weights = np.asarray(weights)
    if weights.shape[-1] != forcing.shape[-1]:
        raise ValueError("volterra_solve: weights and forcing must share the time axis")
    dtype = np.result_type(weights.dtype, forcing.dtype, float)
    shape = np.broadcast_shapes(weights.shape, forcing.shape)
    w = np.ascontiguousarray(np.broadcast_to(weights, shape), dtype=dtype)
    g = np.array(np.broadcast_to(forcing, shape), dtype=dtype)
    denom = 1.0 - w[..., 0:1]
    if np.any(np.abs(denom) < 1e-12):
        raise ValueError("volterra_solve: weights_0 too close to 1 (implicit step degenerate)")
    x = np.zeros(shape, dtype=dtype)
    _volterra_recurse(w, g, x, denom[..., 0], 0, shape[-1])
    return x


def _volterra_recurse(w, g, x, denom, lo, hi):
    if hi - lo <= _VOLTERRA_BASE:
        for n in range(lo, hi):
            j = n - lo
            if j > 0:
                # accumulated influence of x_lo..x_{n-1} inside this block
                g[..., n] = g[..., n] + np.einsum(
                    "...j,...j->...", w[..., 1 : j + 1], x[..., n - 1 : lo - 1 if lo else None : -1]
                )
            x[..., n] = g[..., n] / denom
        return
    mid = (lo + hi) // 2
    _volterra_recurse(w, g, x, denom, lo, mid)
    # influence of the solved first half on the second half, one FFT pass:
    # sum_{m in [lo,mid)} w_{n-m} x_m for n in [mid,hi)
    seg = fftconvolve(x[..., lo:mid], w[..., : hi - lo], axes=-1)
    g[..., mid:hi] += seg[..., mid - lo : hi - lo]
    _volterra_recurse(w, g, x, denom, mid, hi)


# --- Mittag-Leffler ---------------------------------------------------------

_ML_SERIES_CUT = 1.0  # |z| below which the float64 power series is safe


def _ml_series(alpha: float, z: float) -> float:
    # plain power series; cancellation is harmless for |z| <= _ML_SERIES_CUT
    acc = 1.0
    term = 1.0
    k = 0
    while k < 500:
        k += 1
        term = z ** k / sps.gamma(alpha * k + 1.0)
        acc += term
        if abs(term) < 1e-16 * (1.0 + abs(acc)):
            break
    return acc


def _ml_integral(alpha: float, x: float) -> float:
    # Spectral form, exact for 0 < alpha < 1 and x > 0:
    #   E_alpha(-x) = sin(a*pi)/pi * int_0^inf e^-v v^(a-1) / (x*D(v^a/x)) dv,
    #   D(u) = u^2 + 2u*cos(a*pi) + 1  (positive: discriminant < 0).
    # Split at v=1 and substitute w = v^a on [0,1] to remove the endpoint
    # singularity; both pieces are smooth and quad-friendly for any x.
    ca = math.cos(alpha * math.pi)
    inv_a = 1.0 / alpha

    def D(u):
        return u * (u + 2.0 * ca) + 1.0

    def head(w):  # v = w^(1/a), dv contributes dw/alpha
        return math.exp(-(w ** inv_a)) / D(w / x)

    def tail(v):
        return math.exp(-v) * v ** (alpha - 1.0) / D(v ** alpha / x)

    i1, _ = integrate.quad(head, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    i2, _ = integrate.quad(tail, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return math.sin(alpha * math.pi) / math.pi / x * (i1 / alpha + i2)


def _ml_series_extended(alpha: float, z: float) -> float:
    # high-precision series for alpha near 1, where the spectral denominator
    # nearly degenerates; term count stays modest because |z|^(1/alpha) ~ |z|
    import mpmath as mp

    az = abs(z)
    k_peak = az ** (1.0 / alpha) / alpha
    log10_peak = k_peak * math.log10(az) - float(sps.gammaln(alpha * k_peak + 1.0)) / math.log(10.0) if az > 1 else 0.0
    with mp.workdps(int(max(30, log10_peak + 30))):
        zz = mp.mpf(z)
        aa = mp.mpf(alpha)  # keep the Gamma argument in working precision:
        acc = mp.mpf(1)     # double-rounded arguments perturb the huge terms
        k = 0               # by more than the final answer
        while True:
            k += 1
            term = zz ** k / mp.gamma(aa * k + 1)
            acc += term
            if abs(term) < mp.mpf(10) ** (-25) * (1 + abs(acc)) and k > k_peak:
                return float(acc)
            if k > 100000:
                raise RuntimeError("mittag_leffler: series failed to converge")


def mittag_leffler(alpha: float, z) -> float | np.ndarray:
    """E_alpha(z) = sum_k z^k / Gamma(alpha*k + 1) for 0 < alpha <= 1 and z <= 0.

    Power series for small |z|; for larger arguments either the exact
    spectral integral (alpha < 0.9) or an extended-precision series
    (alpha >= 0.9, where the spectral denominator degenerates).  Absolute
    error <= 1e-10 throughout |z| <= 100 and stays in (0, 1] as the
    completely monotone regime demands.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("mittag_leffler: alpha must lie in (0, 1]")
    zarr = np.asarray(z, dtype=float)
    if np.any(zarr > 0.0):
        raise ValueError("mittag_leffler: z must be nonpositive")
    scalar = np.isscalar(z) or zarr.ndim == 0
    flat = np.atleast_1d(zarr).ravel()
    out = np.empty_like(flat)
    for i, zi in enumerate(flat):
        if zi == 0.0:
            out[i] = 1.0
        elif alpha == 1.0:
            out[i] = math.exp(zi)
        elif -zi <= _ML_SERIES_CUT:
            out[i] = _ml_series(alpha, zi)
        elif alpha >= 0.9:
            out[i] = _ml_series_extended(alpha, zi)
        else:
            out[i] = _ml_integral(alpha, -zi)
    if scalar:
        return float(out[0])
    return out.reshape(zarr.shape)


def beta_integral(mu: float, nu: float) -> float:
    """B(mu, nu) = Gamma(mu)Gamma(nu)/Gamma(mu+nu) = int_0^1 (1-u)^(mu-1) u^(nu-1) du.

    This is the normalization behind the power-kernel semigroup property.
    """
    if mu <= 0.0 or nu <= 0.0:
        raise ValueError("beta_integral: both exponents must be positive")
    return float(sps.gamma(mu) * sps.gamma(nu) / sps.gamma(mu + nu))
