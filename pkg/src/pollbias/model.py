"""Joint log-posterior of the poll-bias model and its exact gradient.

Poll model (logit scale, per poll i in race r, group g, house h)::

    logit(p_i) = logit(v_r) + alpha1_r + t_i beta1_r - (10 alpha2_r) gamma_g + kappa_h
    y_i ~ Normal(p_i, p_i (1 - p_i) / n_i + tau1_sq_r)

Undecided model::

    u_i ~ Normal(alpha2_r + t_i beta2_r, tau2_sq_r)

The baseline model keeps only the poll model without the gamma and kappa
terms. Every nonnegative parameter is sampled on the log scale; the
log-Jacobian is included in :meth:`Posterior.__call__`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import PreparedDataset

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
VARIANCE_FLOOR = 1e-10
UNDECIDED_SCALE = 10.0
# sentinel log density for out-of-support or overflowing states; finite so the
# sampler treats it as a divergent point rather than crashing
REJECTED_LOGP = -1e100

MODELS = ("extended", "baseline")


class LinearPredictorOverflow(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# densities: value and partial derivatives, elementwise

def normal_lpdf(x, loc, sd):
    z = (x - loc) / sd
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z


def normal_lpdf_grad(x, loc, sd):
    """Return (logpdf, d/dx, d/dloc, d/dsd)."""
    z = (x - loc) / sd
    val = -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z
    dx = -z / sd
    return val, dx, -dx, (z * z - 1.0) / sd


def half_normal_lpdf(x, sd):
    z = x / sd
    return LOG_2 - 0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z


def half_normal_lpdf_grad(x, sd):
    """Return (logpdf, d/dx, d/dsd) on x >= 0."""
    z = x / sd
    val = LOG_2 - 0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z
    return val, -z / sd, (z * z - 1.0) / sd


def laplace_lpdf(x, scale):
    return -math.log(2.0 * scale) - np.abs(x) / scale


def laplace_lpdf_grad(x, scale):
    return laplace_lpdf(x, scale), -np.sign(x) / scale


def exponential_lpdf(x, mean):
    return -math.log(mean) - x / mean


def exponential_lpdf_grad(x, mean):
    return exponential_lpdf(x, mean), np.full_like(np.asarray(x, dtype=float), -1.0 / mean)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorScales:
    """Fixed scales of the top-level priors. Normal scales are standard deviations."""
    mu1_alpha: float = 0.2
    sigma1_alpha: float = 0.2
    mu1_beta: float = 0.2
    sigma1_beta: float = 0.2
    sigma1_tau: float = 0.05
    gamma: float = 0.05          # Laplace scale
    mu_kappa: float = 0.05
    sigma_kappa: float = 0.05    # exponential mean
    phi_mean: float = 0.04
    phi: float = 0.01
    sigma2_alpha: float = 0.02
    mu2_beta: float = 0.02
    sigma2_beta: float = 0.02
    sigma2_tau: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if f.name != "phi_mean" and not getattr(self, f.name) > 0:
                raise ValueError(f"prior scale {f.name} must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "PriorScales":
        if not d:
            return cls()
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown prior scales: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


PER_RACE = ("alpha1", "beta1", "tau1_sq", "alpha2", "beta2", "tau2_sq")
HYPER = ("mu1_alpha", "sigma1_alpha", "mu1_beta", "sigma1_beta", "sigma1_tau",
         "mu_kappa", "sigma_kappa", "sigma2_alpha", "mu2_beta", "sigma2_beta", "sigma2_tau")
POSITIVE = frozenset({"tau1_sq", "tau2_sq", "sigma1_alpha", "sigma1_beta", "sigma1_tau",
                      "sigma_kappa", "sigma2_alpha", "sigma2_beta", "sigma2_tau"})
BASELINE_BLOCKS = ("alpha1", "beta1", "tau1_sq", "mu1_alpha", "sigma1_alpha",
                   "mu1_beta", "sigma1_beta", "sigma1_tau")
# normal hierarchies that can be sampled as loc + scale * z
NONCENTERABLE = {
    "alpha1": ("mu1_alpha", "sigma1_alpha"),
    "beta1": ("mu1_beta", "sigma1_beta"),
    "kappa": ("mu_kappa", "sigma_kappa"),
    "alpha2": ("phi", "sigma2_alpha"),
    "beta2": ("mu2_beta", "sigma2_beta"),
}
# alpha2 stays centred: the undecided data pin it down tightly
DEFAULT_NONCENTERED = ("alpha1", "beta1", "beta2", "kappa")


@dataclass
class ParameterSet:
    """All model parameters. Arrays may carry a leading draws axis."""
    alpha1: np.ndarray
    beta1: np.ndarray
    tau1_sq: np.ndarray
    alpha2: np.ndarray
    beta2: np.ndarray
    tau2_sq: np.ndarray
    gamma: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray
    mu1_alpha: float | np.ndarray = 0.0
    sigma1_alpha: float | np.ndarray = 0.1
    mu1_beta: float | np.ndarray = 0.0
    sigma1_beta: float | np.ndarray = 0.1
    sigma1_tau: float | np.ndarray = 0.02
    mu_kappa: float | np.ndarray = 0.0
    sigma_kappa: float | np.ndarray = 0.05
    sigma2_alpha: float | np.ndarray = 0.01
    mu2_beta: float | np.ndarray = 0.0
    sigma2_beta: float | np.ndarray = 0.01
    sigma2_tau: float | np.ndarray = 0.005

    @classmethod
    def zeros(cls, data: PreparedDataset, **overrides) -> "ParameterSet":
        R, G, H, Y = data.race_count, data.group_count, data.house_count, data.year_count
        base = dict(alpha1=np.zeros(R), beta1=np.zeros(R), tau1_sq=np.zeros(R),
                    alpha2=np.zeros(R), beta2=np.zeros(R), tau2_sq=np.zeros(R),
                    gamma=np.zeros(G), kappa=np.zeros(H), phi=np.zeros(Y))
        base.update({k: (np.asarray(v, dtype=float) if k in base else v)
                     for k, v in overrides.items()})
        return cls(**base)

    def with_values(self, **kw) -> "ParameterSet":
        return replace(self, **kw)

    def check(self) -> None:
        for name in POSITIVE:
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be nonnegative")

    def draw(self, i: int) -> "ParameterSet":
        """Select draw ``i`` from a batched set."""
        return ParameterSet(**{f.name: np.asarray(getattr(self, f.name))[i] for f in fields(self)})


class Block(NamedTuple):
    name: str
    start: int
    stop: int
    labels: tuple[str, ...]
    positive: bool


class ModelLayout:
    """Bijection between a :class:`ParameterSet` and a flat unconstrained vector."""

    def __init__(self, data: PreparedDataset, model: str = "extended",
                 noncentered: tuple[str, ...] = ()):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        unknown = set(noncentered) - set(NONCENTERABLE)
        if unknown:
            raise ValueError(f"cannot non-centre {sorted(unknown)}")
        self.model = model
        self.data = data
        race = tuple(data.race_labels)
        per = {
            "alpha1": race, "beta1": race, "tau1_sq": race,
            "alpha2": race, "beta2": race, "tau2_sq": race,
            "gamma": tuple(data.group_labels),
            "kappa": tuple(data.houses),
            "phi": tuple(str(y) for y in data.years),
        }
        order = PER_RACE + ("gamma", "kappa", "phi") + HYPER
        if model == "baseline":
            order = BASELINE_BLOCKS
        blocks = []
        pos = 0
        for name in order:
            labels = per.get(name)
            size = 1 if labels is None else len(labels)
            blocks.append(Block(name, pos, pos + size, labels or (), name in POSITIVE))
            pos += size
        self.blocks = tuple(blocks)
        self.by_name = {b.name: b for b in blocks}
        self.dim = pos
        self.positive_mask = np.zeros(pos, dtype=bool)
        for b in blocks:
            if b.positive:
                self.positive_mask[b.start:b.stop] = True
        # (block slice, loc index per element, scale index) for each non-centred block
        self.noncentered = tuple(n for n in NONCENTERABLE if n in noncentered
                                 and n in self.by_name)
        self._nc = []
        for name in self.noncentered:
            b = self.by_name[name]
            loc_name, scale_name = NONCENTERABLE[name]
            loc = self.by_name[loc_name]
            if name == "alpha2":
                loc_idx = loc.start + data.race_year_index
            else:
                loc_idx = np.full(b.stop - b.start, loc.start)
            self._nc.append((slice(b.start, b.stop), loc_idx, self.by_name[scale_name].start))

    @property
    def names(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.labels:
                out.extend(f"{b.name}[{lab}]" for lab in b.labels)
            elif b.name in HYPER:
                out.append(b.name)
        return out

    def has(self, name: str) -> bool:
        return name in self.by_name

    def constrain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            theta = np.where(self.positive_mask, np.exp(x), x)
            for sl, loc, scale in self._nc:
                theta[..., sl] = theta[..., loc] + theta[..., scale, None] * x[..., sl]
        return theta

    def unconstrain(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(self.positive_mask, np.log(np.where(self.positive_mask, theta, 1.0)),
                         theta)
            for sl, loc, scale in self._nc:
                x[..., sl] = (theta[..., sl] - theta[..., loc]) / theta[..., scale, None]
        return x

    def noncentered_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (element, loc, scale) index arrays for the compiled kernel."""
        elem, loc, scale = [], [], []
        for sl, loc_idx, sc in self._nc:
            elem.extend(range(sl.start, sl.stop))
            loc.extend(loc_idx)
            scale.extend([sc] * (sl.stop - sl.start))
        return (np.array(elem, dtype=np.int64), np.array(loc, dtype=np.int64),
                np.array(scale, dtype=np.int64))

    def pullback(self, x: np.ndarray, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. ``x`` (Jacobian terms included) from one w.r.t. ``theta``."""
        g = np.array(grad, dtype=float)
        for sl, loc, scale in self._nc:
            gb = g[sl].copy()
            np.add.at(g, loc, gb)
            g[scale] += np.dot(gb, x[sl]) + gb.size / theta[scale]
            g[sl] = gb * theta[scale]
        return np.where(self.positive_mask, g * theta + 1.0, g)

    def unpack(self, theta: np.ndarray) -> ParameterSet:
        """Constrained flat vector (or draws x dim matrix) to a ParameterSet."""
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        d = self.data
        sizes = {"alpha1": d.race_count, "beta1": d.race_count, "tau1_sq": d.race_count,
                 "alpha2": d.race_count, "beta2": d.race_count, "tau2_sq": d.race_count,
                 "gamma": d.group_count, "kappa": d.house_count, "phi": d.year_count}
        values = {}
        for name, size in sizes.items():
            b = self.by_name.get(name)
            values[name] = (theta[..., b.start:b.stop].copy() if b is not None
                            else np.zeros(lead + (size,)))
        defaults = {f.name: f.default for f in fields(ParameterSet) if f.name in HYPER}
        for name in HYPER:
            b = self.by_name.get(name)
            values[name] = (theta[..., b.start] if b is not None
                            else np.full(lead, defaults[name]) if lead else defaults[name])
        return ParameterSet(**values)

    def pack(self, params: ParameterSet) -> np.ndarray:
        """ParameterSet to constrained flat vector."""
        parts = []
        for b in self.blocks:
            v = np.asarray(getattr(params, b.name), dtype=float)
            parts.append(v[..., None] if b.name in HYPER else v)
        return np.concatenate(parts, axis=-1)

    def from_unconstrained(self, x: np.ndarray) -> ParameterSet:
        return self.unpack(self.constrain(x))

    def to_unconstrained(self, params: ParameterSet) -> np.ndarray:
        return self.unconstrain(self.pack(params))

    def log_jacobian(self, x: np.ndarray) -> float:
        x = np.asarray(x)
        lj = np.sum(x[..., self.positive_mask], axis=-1)
        for sl, _, scale in self._nc:
            lj = lj + (sl.stop - sl.start) * x[..., scale]
        return float(lj) if np.ndim(lj) == 0 else lj

    def initial_point(self, rng: np.random.Generator, priors: PriorScales | None = None,
                      radius: float = 0.5) -> np.ndarray:
        """Jittered start: U(-radius, radius) on each unconstrained coordinate,
        centred on log prior medians for the positive parameters."""
        priors = priors or PriorScales()
        hn = 0.6744897501960817  # median of the standard half-normal
        centres = {
            "sigma1_alpha": hn * priors.sigma1_alpha,
            "sigma1_beta": hn * priors.sigma1_beta,
            "sigma1_tau": hn * priors.sigma1_tau,
            "sigma_kappa": math.log(2.0) * priors.sigma_kappa,
            "sigma2_alpha": hn * priors.sigma2_alpha,
            "sigma2_beta": hn * priors.sigma2_beta,
            "sigma2_tau": hn * priors.sigma2_tau,
        }
        centres["tau1_sq"] = hn * centres["sigma1_tau"]
        centres["tau2_sq"] = hn * centres["sigma2_tau"]
        x = rng.uniform(-radius, radius, size=self.dim)
        for b in self.blocks:
            if b.positive:
                x[b.start:b.stop] += math.log(centres[b.name])
        return x


# ---------------------------------------------------------------------------
# plain evaluation on a ParameterSet (no gradient)

def linear_predictor(params: ParameterSet, data: PreparedDataset, *, time: bool = True,
                     alpha1: bool = True, undecided: bool = True, house: bool = True
                     ) -> np.ndarray:
    """logit(p_i) with optional components switched off. Broadcasts over draws."""
    a = data.arrays
    eta = np.broadcast_to(a.logit_v, np.shape(params.alpha1)[:-1] + a.logit_v.shape).copy()
    if alpha1:
        eta += np.asarray(params.alpha1)[..., a.race]
    if time:
        eta += a.t * np.asarray(params.beta1)[..., a.race]
    if undecided:
        eta -= (UNDECIDED_SCALE * np.asarray(params.alpha2)[..., a.race]
                * np.asarray(params.gamma)[..., a.group])
    if house and data.house_count:
        kap = np.asarray(params.kappa)
        padded = np.concatenate([kap, np.zeros(kap.shape[:-1] + (1,))], axis=-1)
        eta += padded[..., a.house]
    return eta


def _poll_probs(eta: np.ndarray) -> np.ndarray:
    p = expit(eta)
    if np.any(p <= 0.0) or np.any(p >= 1.0) or not np.all(np.isfinite(p)):
        raise LinearPredictorOverflow("linear predictor overflow")
    return p


def log_likelihood_polls(params: ParameterSet, data: PreparedDataset,
                         model: str = "extended") -> float:
    a = data.arrays
    extended = model == "extended"
    eta = linear_predictor(params, data, undecided=extended, house=extended)
    p = _poll_probs(eta)
    s2 = p * (1.0 - p) / a.n + np.asarray(params.tau1_sq)[a.race]
    return float(np.sum(normal_lpdf(a.y, p, np.sqrt(s2))))


def log_likelihood_undecided(params: ParameterSet, data: PreparedDataset) -> float:
    a = data.arrays
    m = a.has_u
    if not m.any():
        return 0.0
    race = a.race[m]
    mean = np.asarray(params.alpha2)[race] + a.t[m] * np.asarray(params.beta2)[race]
    var = np.maximum(np.asarray(params.tau2_sq)[race], VARIANCE_FLOOR)
    return float(np.sum(normal_lpdf(a.u[m], mean, np.sqrt(var))))


def log_prior(params: ParameterSet, data: PreparedDataset | None = None,
              priors: PriorScales | None = None, model: str = "extended") -> float:
    """Sum of all prior log densities (constrained space, no Jacobian)."""
    pr = priors or PriorScales()
    params.check()
    P = params
    lp = 0.0
    lp += np.sum(normal_lpdf(P.alpha1, P.mu1_alpha, P.sigma1_alpha))
    lp += np.sum(normal_lpdf(P.beta1, P.mu1_beta, P.sigma1_beta))
    lp += normal_lpdf(P.mu1_alpha, 0.0, pr.mu1_alpha)
    lp += half_normal_lpdf(P.sigma1_alpha, pr.sigma1_alpha)
    lp += normal_lpdf(P.mu1_beta, 0.0, pr.mu1_beta)
    lp += half_normal_lpdf(P.sigma1_beta, pr.sigma1_beta)
    lp += np.sum(half_normal_lpdf(P.tau1_sq, P.sigma1_tau))
    lp += half_normal_lpdf(P.sigma1_tau, pr.sigma1_tau)
    if model == "baseline":
        return float(lp)
    lp += np.sum(laplace_lpdf(P.gamma, pr.gamma))
    lp += np.sum(normal_lpdf(P.kappa, P.mu_kappa, P.sigma_kappa))
    lp += normal_lpdf(P.mu_kappa, 0.0, pr.mu_kappa)
    lp += exponential_lpdf(P.sigma_kappa, pr.sigma_kappa)
    year = (data.race_year_index if data is not None
            else np.zeros(np.shape(P.alpha2)[-1], dtype=np.intp))
    lp += np.sum(normal_lpdf(P.alpha2, np.asarray(P.phi)[year], P.sigma2_alpha))
    lp += np.sum(normal_lpdf(P.phi, pr.phi_mean, pr.phi))
    lp += half_normal_lpdf(P.sigma2_alpha, pr.sigma2_alpha)
    lp += np.sum(normal_lpdf(P.beta2, P.mu2_beta, P.sigma2_beta))
    lp += normal_lpdf(P.mu2_beta, 0.0, pr.mu2_beta)
    lp += half_normal_lpdf(P.sigma2_beta, pr.sigma2_beta)
    lp += np.sum(half_normal_lpdf(P.tau2_sq, P.sigma2_tau))
    lp += half_normal_lpdf(P.sigma2_tau, pr.sigma2_tau)
    return float(lp)


def log_joint(params: ParameterSet, data: PreparedDataset, priors: PriorScales | None = None,
              model: str = "extended") -> float:
    lp = log_likelihood_polls(params, data, model) + log_prior(params, data, priors, model)
    if model == "extended":
        lp += log_likelihood_undecided(params, data)
    return lp


# ---------------------------------------------------------------------------

@dataclass
class Posterior:
    """Log density and gradient on the unconstrained scale.

    Picklable, so chains can run in worker processes. ``likelihood=False``
    leaves prior + Jacobian only. ``compiled=False`` evaluates with the numpy
    reference path instead of the compiled kernel.
    """
    data: PreparedDataset
    model: str = "extended"
    priors: PriorScales = field(default_factory=PriorScales)
    likelihood: bool = True
    compiled: bool = True
    noncentered: tuple[str, ...] = DEFAULT_NONCENTERED

    def __post_init__(self):
        self.noncentered = tuple(self.noncentered)
        self.layout = ModelLayout(self.data, self.model, self.noncentered)
        a = self.data.arrays
        self._u_idx = np.flatnonzero(a.has_u)
        self._house = np.where(a.house < 0, self.data.house_count, a.house)
        if self.compiled:
            from . import _kernel
            off = np.full(len(_kernel.SLOTS), -1, dtype=np.int64)
            for k, name in enumerate(_kernel.SLOTS):
                b = self.layout.by_name.get(name)
                if b is not None:
                    off[k] = b.start
            d = self.data
            self._kernel = _kernel.logp_grad
            self._kernel_args = (
                self.layout.positive_mask, off, d.race_count, d.group_count, d.house_count,
                d.year_count, self.model == "extended", self.likelihood,
                a.y, np.nan_to_num(a.u), a.has_u, a.t, a.n, a.race.astype(np.int64),
                a.group.astype(np.int64), a.house.astype(np.int64), a.logit_v,
                d.race_year_index.astype(np.int64),
                np.array([getattr(self.priors, k) for k in _kernel.SCALE_ORDER]),
                VARIANCE_FLOOR, UNDECIDED_SCALE, *self.layout.noncentered_index(),
            )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def __getstate__(self):
        return {"data": self.data, "model": self.model, "priors": self.priors,
                "likelihood": self.likelihood, "compiled": self.compiled,
                "noncentered": self.noncentered}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.__post_init__()

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite unconstrained vector")
        if self.compiled:
            lp, g, status = self._kernel(x, *self._kernel_args)
            if status or not (math.isfinite(lp) and np.all(np.isfinite(g))):
                return REJECTED_LOGP, np.zeros(self.dim)
            return lp, g
        layout = self.layout
        theta = layout.constrain(x)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                lp, g = self.constrained_logp_grad(theta)
            except LinearPredictorOverflow:
                return REJECTED_LOGP, np.zeros(self.dim)
            lp += layout.log_jacobian(x)
            g = layout.pullback(x, theta, g)
        if not (math.isfinite(lp) and np.all(np.isfinite(g))):
            return REJECTED_LOGP, np.zeros(self.dim)
        return lp, g

    def logp(self, x: np.ndarray) -> float:
        return self(x)[0]

    def constrained_logp_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Log joint density and its gradient with respect to the constrained vector."""
        L = self.layout
        B = L.by_name
        grad = np.zeros(L.dim)

        def val(name):
            b = B[name]
            return theta[b.start] if b.name in HYPER else theta[b.start:b.stop]

        def gview(name):
            b = B[name]
            return grad[b.start:b.stop]

        extended = self.model == "extended"
        data = self.data
        a = data.arrays
        R, G = data.race_count, data.group_count
        pr = self.priors
        lp = 0.0

        alpha1, beta1, tau1 = val("alpha1"), val("beta1"), val("tau1_sq")
        if extended:
            alpha2, beta2, tau2 = val("alpha2"), val("beta2"), val("tau2_sq")
            gamma, kappa, phi = val("gamma"), val("kappa"), val("phi")

        if self.likelihood:
            race, t = a.race, a.t
            eta = a.logit_v + alpha1[race] + t * beta1[race]
            if extended:
                a2r = alpha2[race]
                gg = gamma[a.group]
                eta = eta - UNDECIDED_SCALE * a2r * gg
                if data.house_count:
                    eta = eta + np.append(kappa, 0.0)[self._house]
            p = _poll_probs(eta)
            q = p * (1.0 - p)
            s2 = q / a.n + tau1[race]
            e = a.y - p
            e2s = e * e / s2
            lp += -0.5 * float(np.sum(LOG_2PI + np.log(s2) + e2s))
            d_s2 = 0.5 * (e2s - 1.0) / s2
            d_eta = (e / s2 + d_s2 * (1.0 - 2.0 * p) / a.n) * q
            gview("alpha1")[:] += np.bincount(race, d_eta, R)
            gview("beta1")[:] += np.bincount(race, d_eta * t, R)
            gview("tau1_sq")[:] += np.bincount(race, d_s2, R)
            if extended:
                gview("alpha2")[:] += np.bincount(race, -UNDECIDED_SCALE * gg * d_eta, R)
                gview("gamma")[:] += np.bincount(a.group, -UNDECIDED_SCALE * a2r * d_eta, G)
                if data.house_count:
                    gview("kappa")[:] += np.bincount(self._house, d_eta,
                                                     data.house_count + 1)[:-1]
                idx = self._u_idx
                if idx.size:
                    ru, tu = race[idx], t[idx]
                    mean = alpha2[ru] + tu * beta2[ru]
                    raw = tau2[ru]
                    var = np.maximum(raw, VARIANCE_FLOOR)
                    d = a.u[idx] - mean
                    d2v = d * d / var
                    lp += -0.5 * float(np.sum(LOG_2PI + np.log(var) + d2v))
                    dm = d / var
                    gview("alpha2")[:] += np.bincount(ru, dm, R)
                    gview("beta2")[:] += np.bincount(ru, dm * tu, R)
                    dv = np.where(raw > VARIANCE_FLOOR, 0.5 * (d2v - 1.0) / var, 0.0)
                    gview("tau2_sq")[:] += np.bincount(ru, dv, R)

        # hierarchical priors
        def hier_normal(x_name, loc_name, sd_name, loc=None):
            nonlocal lp
            x = val(x_name)
            m = val(loc_name) if loc is None else loc
            s = val(sd_name)
            v, dx, dm, ds = normal_lpdf_grad(x, m, s)
            lp += float(np.sum(v))
            gview(x_name)[:] += dx
            grad[B[sd_name].start] += np.sum(ds)
            return dm

        def top_normal(name, loc, sd):
            nonlocal lp
            v, dx, _, _ = normal_lpdf_grad(val(name), loc, sd)
            lp += float(np.sum(v))
            gview(name)[:] += dx

        def top_half_normal(name, sd):
            nonlocal lp
            v, dx, _ = half_normal_lpdf_grad(val(name), sd)
            lp += float(np.sum(v))
            gview(name)[:] += dx

        def hier_half_normal(x_name, sd_name):
            nonlocal lp
            v, dx, ds = half_normal_lpdf_grad(val(x_name), val(sd_name))
            lp += float(np.sum(v))
            gview(x_name)[:] += dx
            grad[B[sd_name].start] += np.sum(ds)

        grad[B["mu1_alpha"].start] += np.sum(hier_normal("alpha1", "mu1_alpha", "sigma1_alpha"))
        grad[B["mu1_beta"].start] += np.sum(hier_normal("beta1", "mu1_beta", "sigma1_beta"))
        top_normal("mu1_alpha", 0.0, pr.mu1_alpha)
        top_half_normal("sigma1_alpha", pr.sigma1_alpha)
        top_normal("mu1_beta", 0.0, pr.mu1_beta)
        top_half_normal("sigma1_beta", pr.sigma1_beta)
        hier_half_normal("tau1_sq", "sigma1_tau")
        top_half_normal("sigma1_tau", pr.sigma1_tau)
        if not extended:
            return lp, grad

        v, dx = laplace_lpdf_grad(gamma, pr.gamma)
        lp += float(np.sum(v))
        gview("gamma")[:] += dx
        if data.house_count:
            grad[B["mu_kappa"].start] += np.sum(hier_normal("kappa", "mu_kappa", "sigma_kappa"))
        top_normal("mu_kappa", 0.0, pr.mu_kappa)
        v, dx = exponential_lpdf_grad(val("sigma_kappa"), pr.sigma_kappa)
        lp += float(v)
        grad[B["sigma_kappa"].start] += dx

        year = data.race_year_index
        dphi = hier_normal("alpha2", "phi", "sigma2_alpha", loc=phi[year])
        gview("phi")[:] += np.bincount(year, dphi, data.year_count)
        top_normal("phi", pr.phi_mean, pr.phi)
        top_half_normal("sigma2_alpha", pr.sigma2_alpha)
        grad[B["mu2_beta"].start] += np.sum(hier_normal("beta2", "mu2_beta", "sigma2_beta"))
        top_normal("mu2_beta", 0.0, pr.mu2_beta)
        top_half_normal("sigma2_beta", pr.sigma2_beta)
        hier_half_normal("tau2_sq", "sigma2_tau")
        top_half_normal("sigma2_tau", pr.sigma2_tau)
        return lp, grad

    def initial_point(self, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
        for _ in range(max_tries):
            x = self.layout.initial_point(rng, self.priors)
            lp, g = self(x)
            if lp > REJECTED_LOGP and np.all(np.isfinite(g)):
                return x
        raise RuntimeError(f"no finite log density after {max_tries} initialisation attempts")


def log_posterior_and_grad(x: np.ndarray, data: PreparedDataset, model: str = "extended",
                           priors: PriorScales | None = None) -> tuple[float, np.ndarray]:
    """One-off evaluation; build a :class:`Posterior` once for repeated calls."""
    return Posterior(data, model, priors or PriorScales())(x)


def is_rejected(logp: float) -> bool:
    return logp <= REJECTED_LOGP
