"""The four posterior targets.

Each model exposes a joint log-density (up to an additive constant) and its
exact analytic gradient in unconstrained coordinates, with a selectable
likelihood backend:

* ``naive``: per-observation evaluation, cost grows with n;
* ``suffstat``: precomputed statistics, n enters only as a multiplier
  (except the Poisson exp-sum, which is irreducible);
* ``suffstat_woodbury`` (factor model only): the precision matrix via the
  Woodbury identity, replacing the p x p inverse with a d x d solve.

Naive and suffstat differ only by a point-independent additive constant, so
they induce identical posteriors. Half-family priors carry their log(2)
truncation constant for the same reason.

The plain ``*_loglik`` functions document the likelihood formulas on their
own; the fused log-density+gradient kernels live in ``_engine`` and are
checked against these (and against finite differences) in the tests.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .errors import NotPositiveDefinite
from .linalg import cholesky, logdet_spd, trace_prod, woodbury_inverse, woodbury_logdet_omega
from .priors import PriorSpec
from .suffstats import (
    Dataset,
    FactorStats,
    MixedStats,
    PoissonStats,
    RegressionStats,
    build_factor_stats,
    build_mixed_stats,
    build_poisson_stats,
    build_regression_stats,
)

__all__ = [
    "BACKENDS",
    "ParamBlock",
    "ParamLayout",
    "PosteriorModel",
    "FactorPriors",
    "regression_loglik",
    "mixed_loglik",
    "factor_loglik",
    "factor_loglik_grad",
    "poisson_loglik",
    "assemble_loadings",
    "logdensity_grad",
    "regression_model",
    "mixed_model",
    "factor_model",
    "poisson_model",
    "std_normal_model",
]

BACKENDS = ("naive", "suffstat", "suffstat_woodbury")

DEFAULT_PRIORS = {
    "regression": {
        "b": PriorSpec("normal", loc=0.0, scale=10.0),
        "sigma": PriorSpec("half_student_t", df=3.0, loc=0.0, scale=3.7),
    },
    "mixed": {
        "b": PriorSpec("normal", loc=0.0, scale=10.0),
        "sigma": PriorSpec("half_student_t", df=3.0, loc=0.0, scale=2.5),
        "sd_u": PriorSpec("half_student_t", df=3.0, loc=0.0, scale=2.5),
    },
    "poisson": {
        "b": PriorSpec("normal", loc=0.0, scale=2.0),
    },
}


@dataclass(frozen=True)
class FactorPriors:
    """Scales of the factor model's Cauchy prior hierarchy.

    Diagonal loadings: half_cauchy(0, ld_scale). Off-diagonal loadings:
    cauchy(mu_lt, sigma_lt) with cauchy(0, mu_lt_scale) and
    half_cauchy(0, sigma_lt_scale) hyperpriors. Idiosyncratic variances:
    half_cauchy(mu_psi, sigma_psi) with half-Cauchy hyperpriors on both.
    """

    ld_scale: float = 3.0
    mu_psi_scale: float = 1.0
    sigma_psi_scale: float = 1.0
    mu_lt_scale: float = 1.0
    sigma_lt_scale: float = 1.0


# ---------------------------------------------------------------------------
# likelihoods (documented formulas; the fused kernels mirror these)
# ---------------------------------------------------------------------------


def regression_loglik(stats: RegressionStats, b, sigma) -> float:
    """-n log(sigma) - (Syy - 2 Syx b + b' Sxx b) / (2 sigma^2).

    Equals the per-observation Gaussian log-likelihood up to the constant
    -(n/2) log(2 pi).
    """
    b = np.asarray(b, dtype=np.float64)
    rss = stats.Syy - 2.0 * float(stats.Syx @ b) + float(b @ stats.Sxx @ b)
    return -stats.n * np.log(sigma) - rss / (2.0 * sigma * sigma)


def mixed_loglik(stats: MixedStats, b, sigma, sd_u, z) -> float:
    """Mixed-effects likelihood through adjusted statistics.

    With r = sd_u * z (non-centered random effects):
    Syy_adj = Syy - 2 r'u_sumY + (r*r)'u_count, Syx_adj = Syx - r'u_sumX,
    then the regression formula on the adjusted statistics. The z ~ N(0,1)
    and hyperprior terms belong to the posterior assembly, not here.
    """
    b = np.asarray(b, dtype=np.float64)
    r = sd_u * np.asarray(z, dtype=np.float64)
    syy_adj = stats.Syy - 2.0 * float(r @ stats.u_sumY) + float((r * r) @ stats.u_count)
    syx_adj = stats.Syx - r @ stats.u_sumX
    rss = syy_adj - 2.0 * float(syx_adj @ b) + float(b @ stats.Sxx @ b)
    return -stats.n * np.log(sigma) - rss / (2.0 * sigma * sigma)


def factor_loglik(stats: FactorStats, Lambda, psi, backend="suffstat") -> float:
    """(n/2) (-p log(2 pi) + log|Omega| - tr(Sbar Omega)).

    Omega = (Lambda Lambda' + diag(psi))^-1, computed directly (suffstat) or
    through the Woodbury identity (suffstat_woodbury). Raises
    NotPositiveDefinite on degenerate proposals; samplers map that to -inf.
    """
    Lambda = np.asarray(Lambda, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if backend == "suffstat_woodbury":
        omega = woodbury_inverse(psi, Lambda)
        logdet = woodbury_logdet_omega(psi, Lambda)
    else:
        sigma_mat = Lambda @ Lambda.T + np.diag(psi)
        logdet = -logdet_spd(sigma_mat)
        chol = cholesky(sigma_mat)
        inv_chol = np.linalg.inv(chol)
        omega = inv_chol.T @ inv_chol
    p = stats.p
    return 0.5 * stats.n * (-p * np.log(2.0 * np.pi) + logdet - trace_prod(stats.Sbar, omega))


def factor_loglik_grad(stats: FactorStats, Lambda, psi, backend="suffstat"):
    """Likelihood value plus gradients w.r.t. Lambda and psi.

    Uses G = (n/2) (Omega Sbar Omega - Omega): dl/dLambda = 2 G Lambda and
    dl/dpsi_j = G_jj.
    """
    Lambda = np.asarray(Lambda, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if backend == "suffstat_woodbury":
        omega = woodbury_inverse(psi, Lambda)
    else:
        sigma_mat = Lambda @ Lambda.T + np.diag(psi)
        chol = cholesky(sigma_mat)
        inv_chol = np.linalg.inv(chol)
        omega = inv_chol.T @ inv_chol
    ll = factor_loglik(stats, Lambda, psi, backend)
    g = 0.5 * stats.n * (omega @ stats.Sbar @ omega - omega)
    return ll, 2.0 * g @ Lambda, np.diag(g).copy()


def poisson_loglik(stats: PoissonStats, b) -> float:
    """Syx'b - sum_i exp(x_i'b); the dropped sum log(y_i!) is parameter-free.

    Returns -inf when any linear predictor exceeds 700 (exp overflow), which
    samplers treat as a rejected proposal.
    """
    b = np.asarray(b, dtype=np.float64)
    eta = stats.X @ b
    if np.any(eta > 700.0):
        return -np.inf
    return float(stats.Syx @ b) - float(np.exp(eta).sum())


def assemble_loadings(lt, ld, p, d):
    """Lower-triangular loading matrix from its packed free elements.

    Upper triangle is exactly zero; the diagonal comes from ld; the packing
    runs column-major down each column below the diagonal.
    """
    lam = np.zeros((p, d))
    idx = 0
    for j in range(d):
        lam[j, j] = ld[j]
        for i in range(j + 1, p):
            lam[i, j] = lt[idx]
            idx += 1
    return lam


# ---------------------------------------------------------------------------
# parameter layout and the evaluable posterior target
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamBlock:
    name: str
    size: int
    transform: str  # "identity" | "log"


@dataclass(frozen=True)
class ParamLayout:
    """Ordered parameter blocks with their constraining transforms."""

    blocks: tuple

    @property
    def dim(self):
        return sum(b.size for b in self.blocks)

    @property
    def names(self):
        out = []
        for b in self.blocks:
            if b.size == 1:
                out.append(b.name)
            else:
                out.extend(f"{b.name}[{i + 1}]" for i in range(b.size))
        return out

    def log_mask(self):
        mask = np.zeros(self.dim, dtype=bool)
        off = 0
        for b in self.blocks:
            if b.transform == "log":
                mask[off:off + b.size] = True
            off += b.size
        return mask

    def constrain(self, q):
        """Unconstrained vector (or draw matrix) to the constrained scale."""
        q = np.asarray(q, dtype=np.float64)
        out = q.copy()
        mask = self.log_mask()
        out[..., mask] = np.exp(out[..., mask])
        return out

    def unpack(self, theta):
        """Split a constrained vector into named blocks."""
        theta = np.asarray(theta)
        out = {}
        off = 0
        for b in self.blocks:
            v = theta[off:off + b.size]
            out[b.name] = float(v[0]) if b.size == 1 else v.copy()
            off += b.size
        return out


@dataclass(frozen=True)
class PosteriorModel:
    """An evaluable target: dimension, joint log-density and gradient.

    Immutable after construction; ``logdensity_grad`` is reentrant, so any
    number of chains may evaluate the same model concurrently.
    """

    name: str
    backend: str
    code: int
    layout: ParamLayout
    iargs: np.ndarray
    dargs: np.ndarray
    v1: np.ndarray = field(default_factory=lambda: _engine._EMPTY_D)
    v2: np.ndarray = field(default_factory=lambda: _engine._EMPTY_D)
    v3: np.ndarray = field(default_factory=lambda: _engine._EMPTY_D)
    m1: np.ndarray = field(default_factory=lambda: _engine._EMPTY_M)
    m2: np.ndarray = field(default_factory=lambda: _engine._EMPTY_M)
    gidx: np.ndarray = field(default_factory=lambda: _engine._EMPTY_I)

    @property
    def dim(self):
        return self.layout.dim

    def margs(self):
        return (self.iargs, self.dargs, self.v1, self.v2, self.v3,
                self.m1, self.m2, self.gidx)

    def logdensity_grad(self, q):
        """Joint log-density and gradient at an unconstrained point.

        Degenerate points (failed Cholesky, exp overflow) come back as
        lp = -inf with a zero gradient rather than raising.
        """
        q = np.ascontiguousarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}")
        grad = np.empty(self.dim)
        lp = _engine.model_lp_grad(self.code, q, grad, self.margs())
        return float(lp), grad

    def logdensity(self, q):
        return self.logdensity_grad(q)[0]

    def constrain(self, q):
        return self.layout.constrain(q)


def logdensity_grad(model: PosteriorModel, q):
    """Free-function alias for PosteriorModel.logdensity_grad."""
    return model.logdensity_grad(q)


# ---------------------------------------------------------------------------
# model factories
# ---------------------------------------------------------------------------


def _packed(spec: PriorSpec):
    return list(spec.packed())


def _merge_priors(model_name, priors):
    out = dict(DEFAULT_PRIORS[model_name])
    if priors:
        unknown = set(priors) - set(out)
        if unknown:
            raise ValueError(f"unknown prior blocks for {model_name}: {sorted(unknown)}")
        out.update(priors)
    return out


def _as_regression_stats(data):
    if isinstance(data, RegressionStats):
        return data
    return build_regression_stats(data)


def regression_model(data, backend="suffstat", priors=None, fix_sigma=False):
    """Gaussian linear regression target.

    ``data`` is a Dataset (required for the naive backend) or prebuilt
    RegressionStats. ``fix_sigma`` pins sigma at 1 and drops it from the
    layout, which makes the b-posterior Gaussian and analytically checkable.
    """
    pr = _merge_priors("regression", priors)
    if backend == "naive":
        if not isinstance(data, Dataset):
            raise ValueError("the naive backend needs the raw Dataset")
        n, p = data.n, data.p
        stats_args = dict(
            v1=data.y, m1=data.X, m2=np.ascontiguousarray(data.X.T))
        syy = 0.0
        code = _engine.REG_NAIVE
    elif backend == "suffstat":
        stats = _as_regression_stats(data)
        n, p = stats.n, stats.Syx.shape[0]
        stats_args = dict(v1=np.ascontiguousarray(stats.Syx),
                          m1=np.ascontiguousarray(stats.Sxx))
        syy = stats.Syy
        code = _engine.REG_SUFF
    else:
        raise ValueError(f"regression backend must be naive or suffstat, got {backend!r}")
    blocks = [ParamBlock("b", p, "identity")]
    if not fix_sigma:
        blocks.append(ParamBlock("sigma", 1, "log"))
    return PosteriorModel(
        name="regression", backend=backend, code=code,
        layout=ParamLayout(tuple(blocks)),
        iargs=np.array([n, p, 1 if fix_sigma else 0], dtype=np.int64),
        dargs=np.array([syy] + _packed(pr["b"]) + _packed(pr["sigma"])),
        **stats_args,
    )


def mixed_model(data, backend="suffstat", priors=None):
    """Mixed-effects target with non-centered random effects r = sd_u * z."""
    pr = _merge_priors("mixed", priors)
    if backend == "naive":
        if not isinstance(data, Dataset) or data.group is None:
            raise ValueError("the naive backend needs a grouped Dataset")
        n, p, nj = data.n, data.p, data.n_groups
        stats_args = dict(
            v1=data.y, m1=data.X, m2=np.ascontiguousarray(data.X.T),
            gidx=np.ascontiguousarray(data.group - 1))
        syy = 0.0
        code = _engine.MIXED_NAIVE
    elif backend == "suffstat":
        stats = data if isinstance(data, MixedStats) else build_mixed_stats(data)
        n, p, nj = stats.n, stats.Syx.shape[0], stats.n_groups
        stats_args = dict(
            v1=np.ascontiguousarray(stats.Syx), v2=np.ascontiguousarray(stats.u_sumY),
            v3=np.ascontiguousarray(stats.u_count), m1=np.ascontiguousarray(stats.Sxx),
            m2=np.ascontiguousarray(stats.u_sumX))
        syy = stats.Syy
        code = _engine.MIXED_SUFF
    else:
        raise ValueError(f"mixed backend must be naive or suffstat, got {backend!r}")
    layout = ParamLayout((
        ParamBlock("b", p, "identity"),
        ParamBlock("sigma", 1, "log"),
        ParamBlock("sd_u", 1, "log"),
        ParamBlock("z", nj, "identity"),
    ))
    return PosteriorModel(
        name="mixed", backend=backend, code=code, layout=layout,
        iargs=np.array([n, p, nj], dtype=np.int64),
        dargs=np.array([syy] + _packed(pr["b"]) + _packed(pr["sigma"]) + _packed(pr["sd_u"])),
        **stats_args,
    )


def factor_model(data, n_factors, backend="suffstat", priors=None):
    """Latent factor target over the marginal covariance Lam Lam' + diag(psi).

    ``data`` is the raw n x p matrix (required for naive) or FactorStats.
    """
    if priors is None:
        priors = FactorPriors()
    if backend == "naive":
        y_mat = np.ascontiguousarray(data, dtype=np.float64)
        if y_mat.ndim != 2:
            raise ValueError("the naive backend needs the raw n x p data matrix")
        n, p = y_mat.shape
        m1 = y_mat
        code = _engine.FACTOR_NAIVE
    elif backend in ("suffstat", "suffstat_woodbury"):
        stats = data if isinstance(data, FactorStats) else build_factor_stats(data)
        n, p = stats.n, stats.p
        m1 = np.ascontiguousarray(stats.Sbar)
        code = _engine.FACTOR_SUFF if backend == "suffstat" else _engine.FACTOR_WOODBURY
    else:
        raise ValueError(f"unknown factor backend {backend!r}")
    d = int(n_factors)
    if not 1 <= d <= p:
        raise ValueError(f"n_factors must lie in 1..{p}")
    m = d * (p - d) + d * (d - 1) // 2
    layout = ParamLayout((
        ParamBlock("L_t", m, "identity"),
        ParamBlock("L_d", d, "log"),
        ParamBlock("psi", p, "log"),
        ParamBlock("mu_psi", 1, "log"),
        ParamBlock("sigma_psi", 1, "log"),
        ParamBlock("mu_lt", 1, "identity"),
        ParamBlock("sigma_lt", 1, "log"),
    ))
    return PosteriorModel(
        name="factor", backend=backend, code=code, layout=layout,
        iargs=np.array([n, p, d, m], dtype=np.int64),
        dargs=np.array([priors.ld_scale, priors.mu_psi_scale, priors.sigma_psi_scale,
                        priors.mu_lt_scale, priors.sigma_lt_scale]),
        m1=m1,
    )


def poisson_model(data, backend="suffstat", priors=None):
    """Poisson GLM target with log link and partial sufficient statistics."""
    pr = _merge_priors("poisson", priors)
    if backend == "naive":
        if not isinstance(data, Dataset):
            raise ValueError("the naive backend needs the raw Dataset")
        stats = build_poisson_stats(data)  # validates counts
        n, p = data.n, data.p
        stats_args = dict(v1=data.y, m1=data.X, m2=np.ascontiguousarray(data.X.T))
        code = _engine.POIS_NAIVE
    elif backend == "suffstat":
        stats = data if isinstance(data, PoissonStats) else build_poisson_stats(data)
        n, p = stats.n, stats.Syx.shape[0]
        stats_args = dict(v1=np.ascontiguousarray(stats.Syx),
                          m1=np.ascontiguousarray(stats.X),
                          m2=np.ascontiguousarray(stats.X.T))
        code = _engine.POIS_SUFF
    else:
        raise ValueError(f"poisson backend must be naive or suffstat, got {backend!r}")
    return PosteriorModel(
        name="poisson", backend=backend, code=code,
        layout=ParamLayout((ParamBlock("b", p, "identity"),)),
        iargs=np.array([n, p], dtype=np.int64),
        dargs=np.array(_packed(pr["b"])),
        **stats_args,
    )


def std_normal_model(dim):
    """Independent standard-normal target, used for sampler calibration."""
    return PosteriorModel(
        name="std_normal", backend="suffstat", code=_engine.STD_NORMAL,
        layout=ParamLayout((ParamBlock("x", dim, "identity"),)),
        iargs=_engine._EMPTY_I, dargs=_engine._EMPTY_D,
    )
