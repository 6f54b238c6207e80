"""Poisson maximum-likelihood fit of a bi-exponential decay plus flat background.

Model for bin ``j`` starting at ``t_j`` with width ``w``::

    mu_j = sum_i a_i * integral_{t_j}^{t_j+w} exp(-g_i s) ds + b

with parameters ``(g_f, g_s, a_f, a_s, b)``. Amplitudes ``a_i`` are the
measured (wrap-around inflated) intensities at zero delay, in counts/ns;
``b`` is in counts per bin. The optimiser works on log rates and log
amplitudes so those stay positive without clamps; the background is left
linear so a level consistent with zero does not drift toward ``-inf``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSignalError, ParameterAtBoundWarning
from .kinetics import BiExpSolution
from .synth import DecayHistogram

__all__ = [
    "PARAM_NAMES",
    "InitialGuess",
    "FitResult",
    "GoodnessOfFit",
    "initial_guess",
    "fit_biexponential",
    "goodness_of_fit",
    "model_counts",
    "poisson_nll",
    "nll_gradient",
]

logger = logging.getLogger(__name__)

PARAM_NAMES = ("gamma_f", "gamma_s", "a_f", "a_s", "background")

RATE_FLOOR = 1e-6  # ns^-1; fitted rates below this are reported as at-bound
_LOG_FLOOR = math.log(1e-30)
_LOG_CEIL = math.log(1e30)


@dataclass(frozen=True)
class InitialGuess:
    params: np.ndarray
    degenerate: bool = False

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.params, dtype=dtype)


@dataclass
class FitResult:
    solution: BiExpSolution
    background: float
    scale: float
    covariance: np.ndarray
    nll: float
    converged: bool
    n_iter: int
    bin_width: float = 0.0
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        s = self.solution
        return np.array([s.gamma_f, s.gamma_s, s.a_f, s.a_s, self.background])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


@dataclass(frozen=True)
class GoodnessOfFit:
    chi2: float
    dof: int
    reduced_chi2: float
    lack_of_fit: bool
    n_bins_used: int


# ---------------------------------------------------------------------------
# model and derivatives


def _components(gamma, a, t, w):
    """Bin integral and its first two log-rate derivatives for one component.

    Returns ``(B, dB, d2B)`` where derivatives are with respect to ``ln gamma``
    and already multiplied by the amplitude ``a``.
    """
    e0 = np.exp(-gamma * t)
    decay_w = math.exp(-gamma * w)
    frac = -math.expm1(-gamma * w) / gamma
    B = e0 * frac
    t1 = t + w
    e1 = e0 * decay_w
    inv = 1.0 / gamma
    # F(s) = exp(-g s)/g ; G1 = g dF/dg ; G2 = g dG1/dg
    g1 = -(e0 * (t + inv) - e1 * (t1 + inv))
    g2 = e0 * (gamma * t * t + t + inv) - e1 * (gamma * t1 * t1 + t1 + inv)
    return a * B, a * g1, a * g2


def model_counts(params, t, width):
    """Expected counts per bin for ``params = (g_f, g_s, a_f, a_s, b)``."""
    g_f, g_s, a_f, a_s, b = (float(p) for p in params)
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, b)
    for g, a in ((g_f, a_f), (g_s, a_s)):
        if g == 0.0:
            out += a * width
        else:
            out += a * np.exp(-g * t) * (-math.expm1(-g * width) / g)
    return out


def poisson_nll(params, counts, t, width) -> float:
    """``sum(mu - counts * ln mu)`` (the data-only constant is dropped)."""
    mu = model_counts(params, t, width)
    counts = np.asarray(counts, dtype=float)
    if np.any(mu <= 0):
        return math.inf
    return float(np.sum(mu) - np.dot(counts, np.log(mu)))


def _derivatives(u, counts, t, width):
    """Objective, gradient and Hessian in optimiser coordinates.

    Coordinates are ``(ln g_f, ln g_s, ln a_f, ln a_s, b)``.

    The objective is the Poisson deviance/2, which has the same minimiser as
    :func:`poisson_nll` but stays O(n_bins) at the optimum, keeping the
    acceptance test free of large-number cancellation.
    """
    g_f, g_s, a_f, a_s = np.exp(u[:4])
    b = u[4]
    Bf, dBf, d2Bf = _components(g_f, a_f, t, width)
    Bs, dBs, d2Bs = _components(g_s, a_s, t, width)
    mu = Bf + Bs + b
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        return math.inf, None, None, None
    # per-bin deviance terms, each small near the optimum
    d = mu - counts
    pos = counts > 0
    terms = d.copy()
    terms[pos] -= counts[pos] * np.log1p(d[pos] / counts[pos])
    obj = float(np.sum(terms))
    J = np.empty((t.size, 5))
    J[:, 0] = dBf
    J[:, 1] = dBs
    J[:, 2] = Bf
    J[:, 3] = Bs
    J[:, 4] = 1.0
    resid = 1.0 - counts / mu
    grad = J.T @ resid
    wts = counts / (mu * mu)
    H = (J * wts[:, None]).T @ J
    # second-derivative-of-model terms
    H[0, 0] += resid @ d2Bf
    H[1, 1] += resid @ d2Bs
    H[0, 2] += resid @ dBf
    H[2, 0] = H[0, 2]
    H[1, 3] += resid @ dBs
    H[3, 1] = H[1, 3]
    H[2, 2] += resid @ Bf
    H[3, 3] += resid @ Bs
    fdiag = np.einsum("ij,ij,i->j", J, J, 1.0 / mu)
    return obj, grad, H, fdiag


def _to_opt(params):
    u = np.array(params, dtype=float)
    u[:4] = np.clip(np.log(u[:4]), _LOG_FLOOR, _LOG_CEIL)
    return u


def _from_opt(u):
    p = np.array(u, dtype=float)
    p[:4] = np.exp(u[:4])
    return p


def _jac_scale(params):
    # d(natural)/d(optimiser coordinate)
    s = np.array(params, dtype=float)
    s[4] = 1.0
    return s


def nll_gradient(params, counts, t, width) -> np.ndarray:
    """Analytic gradient of :func:`poisson_nll` with respect to the natural parameters."""
    params = np.asarray(params, dtype=float)
    _, g_opt, _, _ = _derivatives(_to_opt(params), np.asarray(counts, float),
                                  np.asarray(t, float), width)
    return g_opt / _jac_scale(params)


# ---------------------------------------------------------------------------
# initial guess


def _weighted_loglinear(t, y):
    """Weighted least-squares line through ``ln y``; weights ~ y (Poisson)."""
    w = y
    lx = np.log(y)
    sw = w.sum()
    tm = (w * t).sum() / sw
    lm = (w * lx).sum() / sw
    var = (w * (t - tm) ** 2).sum()
    if var <= 0:
        return None
    slope = (w * (t - tm) * (lx - lm)).sum() / var
    return slope, lm - slope * tm


def _amp_from_bin(y0, gamma, width):
    # per-bin count at t=0 -> intensity (counts/ns) at t=0
    return y0 * gamma / -math.expm1(-gamma * width)


def _tail_scan(t, c, w, bg0, stop=None):
    """Slow rate, amplitude and background from the tail of the curve.

    For each trial rate on a log grid, amplitude and background follow from
    a weighted linear solve over the whole slice; the best background is
    then used for a log-linear fit to the first ``stop`` bins, where signal
    is still above background. A slow component that is still alive at the
    end of the window would otherwise inflate the background.
    """
    span = max(t[-1] - t[0], w)
    grid = np.geomspace(0.01 / max(t[-1], w), 50.0 / span, 400)
    wts = 1.0 / np.maximum(c, 1.0)
    best = None
    for g in grid:
        basis = np.exp(-g * (t - t[0]))
        A = np.column_stack([basis, np.ones_like(t)])
        Aw = A * np.sqrt(wts)[:, None]
        coef, *_ = np.linalg.lstsq(Aw, c * np.sqrt(wts), rcond=None)
        if coef[0] <= 0:
            continue
        coef[1] = max(coef[1], 0.0)
        chi = float(np.sum(wts * (c - A @ coef) ** 2))
        if best is None or chi < best[0]:
            best = (chi, g, coef[1])
    if best is None:
        bg = bg0
    else:
        bg = best[2]
    y = c - bg
    sl = slice(0, stop)
    ok = y[sl] > 0
    line = _weighted_loglinear(t[sl][ok], y[sl][ok]) if ok.sum() >= 3 else None
    if line is None or -line[0] <= 0:
        if best is None:
            g_s = 1.0 / span
            return g_s, _amp_from_bin(max(c[0] - bg, 1.0) * math.exp(g_s * t[0]), g_s, w), bg
        g_s = best[1]
        y0 = max(float(np.mean(y[: max(3, y.size // 10)])), 1.0) * math.exp(g_s * t[0])
        return g_s, _amp_from_bin(y0, g_s, w), bg
    g_s = max(-line[0], RATE_FLOOR)
    return g_s, _amp_from_bin(math.exp(line[1]), g_s, w), bg


def _fast_from_residual(t, c, w, start, bg, g_s, a_s):
    """Log-linear fit to the early residual left after removing the slow part."""
    n = c.size
    slow = a_s * np.exp(-g_s * t) * (-math.expm1(-g_s * w) / g_s)
    early = slice(start, start + max((n - start) // 3, 3))
    r = (c - bg - slow)[early]
    above = r > 3.0 * np.sqrt(bg + slow[early] + 1.0)
    # contiguous run from the peak
    stop = int(np.argmin(above)) if not above.all() else above.size
    if stop < 3:
        return None, None
    line = _weighted_loglinear(t[early][:stop], r[:stop])
    if line is None or not -line[0] > g_s:
        return None, None
    g_f = -line[0]
    return g_f, _amp_from_bin(math.exp(line[1]), g_f, w)


def initial_guess(hist: DecayHistogram) -> InitialGuess:
    """Heuristic starting point for :func:`fit_biexponential`.

    The mean of the last 5% of bins seeds the background and sets the
    signal check. The slow rate and a corrected background come from the
    last third of the curve; the fast rate from a log-linear fit to the
    early residual once the slow component is subtracted. A second pass
    repeats the slow fit over everything after the fast part has died out.
    If no residual fast decay is visible the guess is flagged
    ``degenerate``.

    Raises
    ------
    InsufficientSignalError
        Fewer than 20 non-empty bins, or peak below ten times background.
    """
    c = np.asarray(hist.counts, dtype=float)
    t = np.asarray(hist.bin_start_times, dtype=float)
    w = hist.bin_width
    n = c.size
    if np.count_nonzero(c) < 20:
        raise InsufficientSignalError("fewer than 20 non-empty bins")
    n_tail = max(1, int(math.ceil(0.05 * n)))
    bg = float(c[-n_tail:].mean())
    peak = float(c.max())
    if peak < 10.0 * bg or peak <= 0:
        raise InsufficientSignalError(f"peak {peak:g} < 10 x background {bg:g}")

    start = int(np.argmax(c))
    # last bin still clearly above background (smoothed)
    win = max(5, n // 100)
    smooth = np.convolve(c, np.ones(win) / win, mode="same")
    above = np.nonzero(smooth > bg + 3.0 * math.sqrt(max(bg, 1.0) / win))[0]
    k_end = int(above[-1]) + 1 if above.size else n
    if k_end - start < 30:
        k_end = n
    tail_from = start + 2 * (k_end - start) // 3
    g_s, a_s, bg = _tail_scan(t[tail_from:], c[tail_from:], w, bg, k_end - tail_from)
    g_f, a_f = _fast_from_residual(t, c, w, start, bg, g_s, a_s)
    if g_f is not None:
        # widen the slow window to where the fast part is below 1% of the slow part
        t_quiet = t[start] + math.log(max(100.0 * a_f / a_s, 1.0)) / (g_f - g_s)
        j = int(np.searchsorted(t, t_quiet))
        if j < tail_from and n - j >= 10:
            g_s2, a_s2, bg2 = _tail_scan(t[j:], c[j:], w, bg, max(k_end - j, 3))
            g_f2, a_f2 = _fast_from_residual(t, c, w, start, bg2, g_s2, a_s2)
            if g_f2 is not None:
                g_s, a_s, bg, g_f, a_f = g_s2, a_s2, bg2, g_f2, a_f2
    degenerate = g_f is None
    if degenerate:
        g_f = 5.0 * g_s
        a_f = 0.05 * a_s
    # keep wild extrapolations inside what the histogram can express
    g_cap = 1.0 / w
    a_cap = 10.0 * peak / w
    g_f = min(g_f, g_cap)
    g_s = min(g_s, 0.5 * g_f)
    params = np.array([g_f, g_s, min(max(a_f, 1e-12), a_cap), min(max(a_s, 1e-12), a_cap), bg])
    return InitialGuess(params, degenerate)


# ---------------------------------------------------------------------------
# fit


def _swap(params, cov):
    perm = [1, 0, 3, 2, 4]
    return params[perm], cov[np.ix_(perm, perm)]


def _newton_decrement(H, g) -> float:
    """``g^T H^-1 g``: twice the NLL drop a full Newton step would give."""
    try:
        return float(g @ np.linalg.solve(H, g))
    except np.linalg.LinAlgError:
        return math.inf


def fit_biexponential(hist: DecayHistogram, guess=None, *, max_iter: int = 500,
                      ftol: float = 1e-10, gtol: float = 1e-8, dtol: float = 1e-8) -> FitResult:
    """Maximum-likelihood bi-exponential fit with a damped-Newton trust region.

    Each step solves ``(H + lam * diag(F)) d = -g`` in log-parameter space,
    with ``H`` the exact Hessian of the negative log-likelihood and ``F`` the
    Fisher information. Steps that do not lower the likelihood are rejected
    and the damping raised. Convergence requires a relative NLL change below
    ``ftol`` on an accepted step and either a gradient norm below ``gtol`` or,
    once the gradient sits at its rounding floor, a Newton decrement
    ``g^T H^-1 g`` below ``dtol``. The decrement is in log-likelihood units,
    so ``dtol = 1e-8`` puts the parameters within ~1e-4 standard errors of
    the optimum whatever the count level.

    The result is relabelled so that ``gamma_f >= gamma_s``.
    """
    counts = np.asarray(hist.counts, dtype=float)
    t = np.asarray(hist.bin_start_times, dtype=float)
    width = hist.bin_width
    if guess is None:
        guess = initial_guess(hist)
    p0 = np.asarray(guess, dtype=float)
    if p0.shape != (5,) or not np.all(np.isfinite(p0)) or np.any(p0[:4] <= 0):
        raise ValueError("guess must be five finite numbers with positive rates and amplitudes")

    u = _to_opt(p0)
    obj, g, H, fdiag = _derivatives(u, counts, t, width)
    if not math.isfinite(obj):
        raise ValueError("model is non-positive at the initial guess")
    const = float(np.sum(counts[counts > 0] * (1 - np.log(counts[counts > 0]))))
    lam = 1e-3
    history = [obj + const]
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        scale = np.maximum(fdiag, 1e-12)
        step = None
        while lam < 1e16:
            A = H + lam * np.diag(scale)
            try:
                L = np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                lam = max(lam * 10, 1e-6)
                continue
            step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
            u_new = u + step
            u_new[:4] = np.clip(u_new[:4], _LOG_FLOOR, _LOG_CEIL)
            res = _derivatives(u_new, counts, t, width)
            if math.isfinite(res[0]) and res[0] <= obj:
                break
            lam = max(lam * 4, 1e-6)
            step = None
        if step is None:
            logger.debug("damping exhausted after %d iterations", n_iter)
            converged = bool(np.linalg.norm(g) < gtol) or _newton_decrement(H, g) < dtol
            break
        obj_new, g, H, fdiag = res
        nll_new = obj_new + const
        rel = abs(history[-1] - nll_new) / max(abs(nll_new), 1e-300)
        u_prev, u = u, u_new
        obj = obj_new
        history.append(nll_new)
        lam = max(lam / 3, 1e-12)
        # the damped step can be tiny far from the optimum; judge by the full Newton step
        if rel < ftol and (np.linalg.norm(g) < gtol or _newton_decrement(H, g) < dtol):
            converged = True
            break
        if np.array_equal(u_new, u_prev):
            logger.debug("stalled at rounding floor after %d iterations", n_iter)
            break

    params = _from_opt(u)
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        Hinv = np.linalg.pinv(H)
    scale = _jac_scale(params)
    cov = Hinv * np.outer(scale, scale)
    cov = 0.5 * (cov + cov.T)
    if params[0] < params[1]:
        params, cov = _swap(params, cov)

    flags = []
    if np.any(params[:2] < RATE_FLOOR):
        warnings.warn("fitted rate at positivity floor", ParameterAtBoundWarning, stacklevel=2)
        flags.append("rate-at-bound")
    if params[4] < 0:
        flags.append("negative-background")
    if not converged:
        flags.append("not-converged")
    sol = BiExpSolution(float(params[0]), float(params[1]), float(params[2]), float(params[3]))
    return FitResult(
        solution=sol,
        background=float(params[4]),
        scale=float(params[2] + params[3]),
        covariance=cov,
        nll=float(history[-1]),
        converged=converged,
        n_iter=n_iter,
        bin_width=width,
        history=history,
        flags=flags,
    )


def goodness_of_fit(hist: DecayHistogram, fit: FitResult, min_expected: float = 5.0) -> GoodnessOfFit:
    """Pearson chi-square over bins with expected count >= ``min_expected``."""
    mu = model_counts(fit.params, hist.bin_start_times, hist.bin_width)
    use = mu >= min_expected
    c = np.asarray(hist.counts, dtype=float)[use]
    chi2 = float(np.sum((c - mu[use]) ** 2 / mu[use]))
    n_used = int(use.sum())
    dof = n_used - 5
    if dof <= 0:
        return GoodnessOfFit(chi2, dof, math.nan, False, n_used)
    red = chi2 / dof
    return GoodnessOfFit(chi2, dof, red, red > 1 + 5 * math.sqrt(2 / dof), n_used)
