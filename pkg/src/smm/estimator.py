"""Maximum-likelihood estimation of factor models with mean structure.

The discrepancy minimized is the normal-theory ML fit function for a
mean-and-covariance structure,

    F = ln|Sigma| - ln|S| + tr(S Sigma^-1) - p + (xbar - mu)' Sigma^-1 (xbar - mu)

which is zero exactly when the implied moments reproduce the sample
moments, and (n - 1) F is the chi-square test statistic under the model.

Unique variances are optimized as logs so positivity never needs explicit
constraints; everything else is optimized on its natural scale. Gradients
are central differences evaluated in a single batched pass: the 2t probe
points are stacked into one (2t, p, p) array and factored together, which
is what keeps a full Monte Carlo study at a few milliseconds per fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import rng
from .errors import (
    SmmError,
    BAD_INPUT,
    DIMENSION_MISMATCH,
    NONPOSITIVE_UNIQUE_VARIANCE,
    InvalidModelError,
    NotPositiveDefiniteError,
)
from .model_spec import ModelSpec, ParameterIndex, ParameterMatrices, validate
from .moments import SampleMoments
from .simulate import cholesky

# The optimizer aims an order of magnitude past the convergence flag so
# that "converged" results sit well inside the acceptance region.
OPTIMIZER_GTOL = 1e-8

GRADIENT_STEP_SCALE = 1e-6


def _clamp_tiny_negative(f: float) -> float:
    """Zero out rounding noise in a mathematically nonnegative discrepancy.

    At an exact fit the formula evaluates to 0 plus accumulated rounding
    of order machine epsilon, either sign. Only that noise band is
    clamped; a substantially negative value would mean a broken formula
    and is passed through for tests to catch.
    """
    return 0.0 if -1e-10 < f < 0.0 else f


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    max_restarts: int = 3
    jitter_fraction: float = 0.2
    seed: int = 0
    gradient_tolerance: float = 1e-6
    f_decrease_tolerance: float = 1e-10
    warm_start_factor_means: bool = True


@dataclass(frozen=True)
class ImpliedMoments:
    """Model-implied covariance and mean vector at one parameter point."""

    sigma: np.ndarray
    mu_model: np.ndarray


@dataclass(frozen=True)
class FitResult:
    estimates: ParameterMatrices
    f_min: float
    chi_square: float
    df: int
    n: int
    converged: bool
    iterations: int
    grad_inf_norm: float
    retries_used: int
    free_values: np.ndarray
    labels: tuple


class _Workspace:
    """Precomputed index arrays for fast batched moment construction.

    All evaluation paths (objective, gradient probes, public
    implied_moments) go through build_stack so they share one definition
    of the implied moments, including the exact-symmetrization of Sigma.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.index = ParameterIndex(spec)
        self.p, self.q = spec.p, spec.q
        base = self.index.base_matrices()
        self.lam0 = base.loadings
        self.nu0 = base.intercepts
        self.theta0 = base.factor_means
        self.phi0 = base.factor_cov
        self.psi20 = base.unique_variances

        def positions(matrix):
            return [(k, e.row, e.col) for k, e in enumerate(self.index.entries) if e.matrix == matrix]

        def unzip(triples):
            if not triples:
                return (np.empty(0, int),) * 3
            pos, rows, cols = zip(*triples)
            return np.array(pos), np.array(rows), np.array(cols)

        self.lam_pos, self.lam_rows, self.lam_cols = unzip(positions("lambda"))
        self.phi_pos, self.phi_rows, self.phi_cols = unzip(positions("phi"))
        self.psi2_pos, self.psi2_rows, _ = unzip(positions("psi2"))
        self.nu_pos, self.nu_rows, _ = unzip(positions("nu"))
        self.theta_pos, self.theta_rows, _ = unzip(positions("theta"))
        self.log_mask = np.zeros(self.index.t, dtype=bool)
        self.log_mask[self.psi2_pos] = True

    @property
    def t(self) -> int:
        return self.index.t

    def to_unconstrained(self, values: np.ndarray) -> np.ndarray:
        z = np.array(values, dtype=float)
        if np.any(z[self.log_mask] <= 0):
            raise SmmError(
                NONPOSITIVE_UNIQUE_VARIANCE,
                "unique variances must be > 0 on the raw scale",
            )
        z[self.log_mask] = np.log(z[self.log_mask])
        return z

    def to_raw(self, z: np.ndarray) -> np.ndarray:
        v = np.array(z, dtype=float)
        if v.ndim == 1:
            v[self.log_mask] = np.exp(v[self.log_mask])
        else:
            v[:, self.log_mask] = np.exp(v[:, self.log_mask])
        return v

    def build_stack(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Implied (sigma, mu) for a (k, t) batch of raw parameter vectors."""
        values = np.atleast_2d(values)
        k = values.shape[0]
        lam = np.broadcast_to(self.lam0, (k, self.p, self.q)).copy()
        phi = np.broadcast_to(self.phi0, (k, self.q, self.q)).copy()
        psi2 = np.broadcast_to(self.psi20, (k, self.p)).copy()
        nu = np.broadcast_to(self.nu0, (k, self.p)).copy()
        theta = np.broadcast_to(self.theta0, (k, self.q)).copy()
        if self.lam_pos.size:
            lam[:, self.lam_rows, self.lam_cols] = values[:, self.lam_pos]
        if self.phi_pos.size:
            phi[:, self.phi_rows, self.phi_cols] = values[:, self.phi_pos]
            phi[:, self.phi_cols, self.phi_rows] = values[:, self.phi_pos]
        if self.psi2_pos.size:
            psi2[:, self.psi2_rows] = values[:, self.psi2_pos]
        if self.nu_pos.size:
            nu[:, self.nu_rows] = values[:, self.nu_pos]
        if self.theta_pos.size:
            theta[:, self.theta_rows] = values[:, self.theta_pos]

        cross = lam @ phi @ lam.transpose(0, 2, 1)
        sigma = np.tril(cross)
        sigma = sigma + np.tril(cross, -1).transpose(0, 2, 1)
        diag = np.arange(self.p)
        sigma[:, diag, diag] += psi2
        mu = nu + np.einsum("kpq,kq->kp", lam, theta)
        return sigma, mu


def _stack_discrepancy(
    sigma: np.ndarray,
    mu: np.ndarray,
    sample_cov: np.ndarray,
    xbar: np.ndarray,
    lndet_s: float,
) -> np.ndarray:
    """ML discrepancy for a stack of implied moments against one sample.

    Factors every Sigma in the stack at once; a LinAlgError from the
    batched Cholesky means at least one probe point left the positive
    definite cone and is translated by callers.
    """
    k, p, _ = sigma.shape
    lower = np.linalg.cholesky(sigma)
    lndet = 2.0 * np.sum(np.log(np.diagonal(lower, axis1=1, axis2=2)), axis=1)
    diff = xbar - mu
    rhs = np.concatenate(
        [
            np.broadcast_to(sample_cov, (k, p, p)),
            diff[:, :, None],
            np.broadcast_to(np.eye(p), (k, p, p)),
        ],
        axis=2,
    )
    y = np.linalg.solve(lower, rhs)
    y_s = y[:, :, :p]
    y_d = y[:, :, p]
    y_i = y[:, :, p + 1 :]
    trace = np.einsum("kij,kij->k", y_s, y_i)
    quad = np.einsum("ki,ki->k", y_d, y_d)
    return lndet - lndet_s + trace - p + quad


def implied_moments(spec: ModelSpec, free_values: np.ndarray) -> ImpliedMoments:
    """Implied covariance and means with free cells taken from free_values.

    free_values is on the raw scale (actual variances, not logs) in
    ParameterIndex order.
    """
    ws = _Workspace(spec)
    values = np.asarray(free_values, dtype=float)
    if values.shape != (ws.t,):
        raise SmmError(DIMENSION_MISMATCH, f"expected {ws.t} free values, got {values.shape}")
    mats = ws.index.insert(values)
    if np.any(mats.unique_variances <= 0):
        raise SmmError(
            NONPOSITIVE_UNIQUE_VARIANCE,
            "implied unique variances must be strictly positive",
        )
    sigma, mu = ws.build_stack(values[None, :])
    return ImpliedMoments(sigma=sigma[0], mu_model=mu[0])


def ml_discrepancy(sample: SampleMoments, implied: ImpliedMoments) -> float:
    """Normal-theory discrepancy between sample moments and implied moments.

    Nonnegative, and zero exactly when Sigma = S and mu = xbar. Both
    matrices must be positive definite; the Cholesky in simulate is used
    for the checks so near-singular matrices fail loudly instead of
    returning a huge but finite value.
    """
    if implied.sigma.shape[0] != sample.p:
        raise SmmError(DIMENSION_MISMATCH, "implied moments and sample have different p")
    lower_s = cholesky(sample.cov)
    cholesky(implied.sigma)
    lndet_s = 2.0 * float(np.sum(np.log(np.diag(lower_s))))
    f = _stack_discrepancy(
        implied.sigma[None, :, :], implied.mu_model[None, :], sample.cov, sample.mean, lndet_s
    )
    return _clamp_tiny_negative(float(f[0]))


def to_unconstrained(spec: ModelSpec, free_values: np.ndarray) -> np.ndarray:
    """Map raw free values to the optimizer's unconstrained coordinates."""
    return _Workspace(spec).to_unconstrained(np.asarray(free_values, dtype=float))


def to_raw(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Inverse of to_unconstrained."""
    return _Workspace(spec).to_raw(np.asarray(z, dtype=float))


def central_difference(fun, x: np.ndarray, scale: float = GRADIENT_STEP_SCALE) -> np.ndarray:
    """Plain central-difference gradient of a scalar function.

    Steps are scale * max(1, |x_i|) per coordinate. This is the simple
    loop implementation, kept separate from the batched path inside fit so
    the two can be checked against each other.
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        h = scale * max(1.0, abs(x[i]))
        up = x.copy()
        down = x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fun(up) - fun(down)) / (2.0 * h)
    return grad


def _batched_gradient(ws: _Workspace, z: np.ndarray, sample_cov, xbar, lndet_s) -> np.ndarray:
    """Central differences in unconstrained coordinates, one batched pass."""
    t = ws.t
    h = GRADIENT_STEP_SCALE * np.maximum(1.0, np.abs(z))
    probes = np.repeat(z[None, :], 2 * t, axis=0)
    idx = np.arange(t)
    probes[2 * idx, idx] += h
    probes[2 * idx + 1, idx] -= h
    sigma, mu = ws.build_stack(ws.to_raw(probes))
    f = _stack_discrepancy(sigma, mu, sample_cov, xbar, lndet_s)
    return (f[0::2] - f[1::2]) / (2.0 * h)


def numeric_gradient(
    spec: ModelSpec, free_values: np.ndarray, sample: SampleMoments
) -> np.ndarray:
    """Gradient of the discrepancy in the unconstrained parameterization.

    free_values is raw scale; the differencing happens after the log
    transform of unique variances, matching what the optimizer sees. A
    probe point with non-positive-definite implied covariance raises
    rather than being patched over.
    """
    ws = _Workspace(spec)
    values = np.asarray(free_values, dtype=float)
    if values.shape != (ws.t,):
        raise SmmError(DIMENSION_MISMATCH, f"expected {ws.t} free values, got {values.shape}")
    lower_s = cholesky(sample.cov)
    lndet_s = 2.0 * float(np.sum(np.log(np.diag(lower_s))))
    z = ws.to_unconstrained(values)
    try:
        return _batched_gradient(ws, z, sample.cov, sample.mean, lndet_s)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "implied covariance not positive definite at a probe point"
        ) from None


def fit_statistics(f_min: float, n: int, spec: ModelSpec) -> tuple[float, int]:
    """Chi-square statistic T = (n - 1) f_min and model degrees of freedom."""
    if n < 2:
        raise SmmError(BAD_INPUT, f"need n >= 2 for a test statistic, got {n}")
    report = validate(spec)
    return (n - 1) * f_min, report.df


def _sign_convention(spec: ModelSpec, index: ParameterIndex, mats: ParameterMatrices):
    """Flip loading columns whose sum is negative, where the flip is free.

    Flipping column k together with theta_k and the off-diagonal phi
    entries of factor k leaves the implied moments unchanged, so this is a
    pure reporting convention. A column is only flipped when every cell it
    would touch is free or fixed at zero; otherwise it is left alone.
    """
    lam = mats.loadings.copy()
    theta = mats.factor_means.copy()
    phi = mats.factor_cov.copy()
    q = spec.q
    for k in range(q):
        if np.sum(lam[:, k]) >= 0:
            continue

        def movable(cell, current):
            return cell.is_free or current == 0.0

        ok = all(movable(spec.loadings[i][k], lam[i, k]) for i in range(spec.p))
        ok = ok and movable(spec.factor_means[k], theta[k])
        ok = ok and all(
            movable(spec.factor_cov[k][j], phi[k, j]) for j in range(q) if j != k
        )
        if not ok:
            continue
        lam[:, k] = -lam[:, k]
        theta[k] = -theta[k]
        for j in range(q):
            if j != k:
                phi[k, j] = -phi[k, j]
                phi[j, k] = -phi[j, k]
    return ParameterMatrices(lam, mats.intercepts, theta, phi, mats.unique_variances)


def _warm_start_theta(ws: _Workspace, v0: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    """Start free factor means at their least-squares values.

    Uses the starting loadings and intercepts: theta0 solves
    Lambda0 theta = xbar - nu0. Skipped when the starting loadings are
    rank deficient, in which case the spec-supplied starts stand.
    """
    base = ws.index.insert(v0)
    theta_ls, _, rank, _ = np.linalg.lstsq(
        base.loadings, xbar - base.intercepts, rcond=1e-10
    )
    if rank < ws.q:
        return v0
    out = v0.copy()
    out[ws.theta_pos] = theta_ls[ws.theta_rows]
    return out


class _AttemptFailed(Exception):
    pass


def _minimize_once(ws: _Workspace, z_start, sample_cov, xbar, lndet_s, options: FitOptions):
    def objective(z):
        try:
            sigma, mu = ws.build_stack(ws.to_raw(z[None, :]))
            return float(_stack_discrepancy(sigma, mu, sample_cov, xbar, lndet_s)[0])
        except np.linalg.LinAlgError:
            return np.inf

    def gradient(z):
        try:
            return _batched_gradient(ws, z, sample_cov, xbar, lndet_s)
        except np.linalg.LinAlgError:
            raise _AttemptFailed("gradient probe left the positive definite cone") from None

    iterates = [np.array(z_start)]
    result = scipy.optimize.minimize(
        objective,
        z_start,
        jac=gradient,
        method="BFGS",
        callback=lambda zk: iterates.append(np.array(zk)),
        options={"maxiter": options.max_iterations, "gtol": OPTIMIZER_GTOL},
    )
    f_final = objective(result.x)
    if not np.isfinite(f_final):
        raise _AttemptFailed("non-finite discrepancy at the returned point")
    grad_inf = float(np.max(np.abs(gradient(result.x)))) if ws.t else 0.0

    converged = grad_inf <= options.gradient_tolerance
    if not converged and len(iterates) >= 2:
        f_prev = objective(iterates[-2])
        decrease = f_prev - f_final
        if 0.0 <= decrease <= options.f_decrease_tolerance * max(1.0, abs(f_prev)):
            converged = True
    return result.x, f_final, grad_inf, int(result.nit), converged


def fit(spec: ModelSpec, sample: SampleMoments, options: FitOptions = FitOptions()) -> FitResult:
    """Minimize the ML discrepancy over the free parameters of spec.

    Runs BFGS from the spec starting values (factor means warm-started
    from the observed means), retrying from jittered starts when an
    attempt fails to converge. The best attempt is always reported;
    converged=False survives into the result rather than raising, so
    Monte Carlo callers can count failures.
    """
    report = validate(spec)
    if not report.is_valid:
        raise InvalidModelError(report)
    if sample.p != spec.p:
        raise SmmError(
            DIMENSION_MISMATCH,
            f"sample has {sample.p} variables but the model expects {spec.p}",
        )
    lower_s = cholesky(sample.cov)
    lndet_s = 2.0 * float(np.sum(np.log(np.diag(lower_s))))
    ws = _Workspace(spec)

    v0 = ws.index.starting_values()
    if options.warm_start_factor_means and ws.theta_pos.size:
        v0 = _warm_start_theta(ws, v0, sample.mean)

    if ws.t == 0:
        sigma, mu = ws.build_stack(np.empty((1, 0)))
        f0 = _clamp_tiny_negative(
            float(_stack_discrepancy(sigma, mu, sample.cov, sample.mean, lndet_s)[0])
        )
        mats = ws.index.insert(np.empty(0))
        chi2, df = (sample.n - 1) * f0, report.df
        return FitResult(
            estimates=mats,
            f_min=f0,
            chi_square=chi2,
            df=df,
            n=sample.n,
            converged=True,
            iterations=0,
            grad_inf_norm=0.0,
            retries_used=0,
            free_values=np.empty(0),
            labels=ws.index.labels(),
        )

    best = None
    last_error: Exception | None = None
    attempts = 0
    for attempt in range(options.max_restarts + 1):
        attempts = attempt + 1
        if attempt == 0:
            v_start = v0
        else:
            jitter_seed = rng.derive_seed(options.seed, rng.STREAM_JITTER, attempt)
            noise = rng.uniform(
                jitter_seed, (ws.t,), -options.jitter_fraction, options.jitter_fraction
            )
            v_start = np.where(v0 != 0.0, v0 * (1.0 + noise), noise)
        try:
            z_start = ws.to_unconstrained(np.asarray(v_start, dtype=float))
            z_hat, f_hat, grad_inf, nit, converged = _minimize_once(
                ws, z_start, sample.cov, sample.mean, lndet_s, options
            )
        except (_AttemptFailed, SmmError) as err:
            last_error = err
            continue
        candidate = (z_hat, f_hat, grad_inf, nit, converged)
        if best is None or (converged, -f_hat) > (best[4], -best[1]):
            best = candidate
        if converged:
            break

    if best is None:
        raise NotPositiveDefiniteError(
            f"every optimization attempt failed; last error: {last_error}"
        )

    z_hat, f_hat, grad_inf, nit, converged = best
    f_hat = _clamp_tiny_negative(f_hat)
    mats = _sign_convention(spec, ws.index, ws.index.insert(ws.to_raw(z_hat)))
    free_hat = ws.index.extract(mats)
    chi2 = (sample.n - 1) * f_hat
    return FitResult(
        estimates=mats,
        f_min=f_hat,
        chi_square=chi2,
        df=report.df,
        n=sample.n,
        converged=converged,
        iterations=nit,
        grad_inf_norm=grad_inf,
        retries_used=attempts - 1,
        free_values=free_hat,
        labels=ws.index.labels(),
    )
