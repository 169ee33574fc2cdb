"""No-U-Turn Hamiltonian Monte Carlo with windowed warmup adaptation.

Multinomial sampling along the trajectory, generalised U-turn criterion
checked across every subtree merge, dual-averaging step size and a diagonal
metric estimated from warmup windows (75 / 25-doubling / 50 by default).
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import diagnostics

log = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], "tuple[float, np.ndarray]"]
THREADS_ENV = "POLLBIAS_THREADS"
DIVERGENCE_FRACTION = 0.1


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    mass_matrix: str = "diag"     # "diag" (adapted) or "identity"
    max_energy_error: float = 1000.0
    init_radius: float = 0.5
    check_gradient: bool = True

    def __post_init__(self):
        if self.chains < 1 or self.samples < 1 or self.warmup < 0:
            raise ValueError("chains and samples must be positive, warmup nonnegative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be positive")
        if self.mass_matrix not in ("diag", "identity"):
            raise ValueError(f"unknown mass matrix {self.mass_matrix!r}")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainResult:
    chain: int
    draws: np.ndarray          # (samples, dim), unconstrained
    logp: np.ndarray
    accept_stat: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergences: int = 0


@dataclass
class PosteriorDraws:
    names: list[str]
    values: np.ndarray         # (chains, samples, dim), constrained scale
    chains: list[ChainResult]
    config: SamplerConfig
    diagnostics: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """All draws stacked chain by chain: (chains * samples, dim)."""
        return self.values.reshape(-1, self.values.shape[-1])

    @property
    def divergence_count(self) -> list[int]:
        return [int(c.divergent.sum()) for c in self.chains]

    @property
    def treedepth_hits(self) -> list[int]:
        return [int((c.treedepth >= self.config.max_treedepth).sum()) for c in self.chains]

    @property
    def step_size(self) -> list[float]:
        return [c.step_size for c in self.chains]

    @property
    def unreliable(self) -> bool:
        total = sum(self.divergence_count)
        return total > DIVERGENCE_FRACTION * self.n_chains * self.n_samples

    @property
    def converged(self) -> bool:
        return bool(self.summary.get("converged", True))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.names.index(name)]

    def sampler_report(self) -> dict:
        return {
            "chains": self.n_chains,
            "samples": self.n_samples,
            "divergences": self.divergence_count,
            "treedepth_hits": self.treedepth_hits,
            "step_size": self.step_size,
            "mean_accept_stat": [float(c.accept_stat.mean()) for c in self.chains],
            "unreliable": self.unreliable,
            **self.summary,
        }


# ---------------------------------------------------------------------------

class DualAveraging:
    def __init__(self, target: float, gamma: float = 0.05, kappa: float = 0.75, t0: float = 10.0):
        self.target, self.gamma, self.kappa, self.t0 = target, gamma, kappa, t0
        self.mu = math.log(10.0)
        self.restart()

    def restart(self, step_size: float | None = None):
        if step_size is not None:
            self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


class WarmupSchedule:
    """Metric adaptation windows: fast buffer, doubling slow windows, terminal buffer."""

    def __init__(self, warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                 base_window: int = 25):
        self.warmup = warmup
        if warmup < 20:
            self.windows = []
            return
        if init_buffer + base_window + term_buffer > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            base_window = warmup - (init_buffer + term_buffer)
        end = warmup - term_buffer
        windows = []
        start, size = init_buffer, base_window
        while start < end:
            stop = start + size
            # stretch the last window rather than leave a short one
            if stop + 2 * size > end:
                stop = end
            windows.append((start, stop))
            start, size = stop, 2 * size
        self.windows = windows

    def window_end(self, i: int) -> bool:
        return any(i == stop - 1 for _, stop in self.windows)

    def in_window(self, i: int) -> bool:
        return any(start <= i < stop for start, stop in self.windows)


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        n = self.n
        var = self.m2 / (n - 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


class _State:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q, self.p, self.logp, self.grad = q, p, logp, grad


class NUTSKernel:
    def __init__(self, logp_grad: LogDensity, dim: int, rng: np.random.Generator,
                 max_treedepth: int = 10, max_energy_error: float = 1000.0):
        self.f = logp_grad
        self.dim = dim
        self.rng = rng
        self.max_treedepth = max_treedepth
        self.max_energy_error = max_energy_error
        self.inv_metric = np.ones(dim)
        self.step_size = 1.0

    # -- Hamiltonian pieces
    def kinetic(self, p: np.ndarray) -> float:
        return 0.5 * float(np.dot(p, self.inv_metric * p))

    def sample_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def leapfrog(self, z: _State, eps: float) -> _State:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        logp, grad = self.f(q)
        p = p + 0.5 * eps * grad
        return _State(q, p, logp, grad)

    def hamiltonian(self, z: _State) -> float:
        h = -z.logp + self.kinetic(z.p)
        return math.inf if math.isnan(h) else h

    # -- trajectory construction
    def _build_tree(self, depth: int, z: _State, direction: int, H0: float):
        """Extend ``depth`` levels from edge state ``z``.

        Returns (valid, new edge, proposal, rho, p_sharp_beg, p_sharp_end,
        p_beg, p_end, log_sum_weight); beg is the end nearest the existing
        trajectory.
        """
        if depth == 0:
            z_new = self.leapfrog(z, direction * self.step_size)
            self._n_leapfrog += 1
            h = self.hamiltonian(z_new)
            if h - H0 > self.max_energy_error:
                self._divergent = True
            lw = H0 - h
            self._sum_metro += 1.0 if lw > 0 else math.exp(lw)
            ps = self.inv_metric * z_new.p
            return (not self._divergent, z_new, z_new, z_new.p.copy(), ps, ps,
                    z_new.p, z_new.p, lw)

        (valid, z, prop_init, rho_init, ps_beg, ps_init_end, p_beg, p_init_end,
         lw_init) = self._build_tree(depth - 1, z, direction, H0)
        if not valid:
            return (False, z, prop_init, rho_init, ps_beg, ps_init_end, p_beg, p_init_end,
                    lw_init)
        (valid, z, prop_final, rho_final, ps_final_beg, ps_end, p_final_beg, p_end,
         lw_final) = self._build_tree(depth - 1, z, direction, H0)
        if not valid:
            return (False, z, prop_final, rho_final, ps_final_beg, ps_end, p_final_beg, p_end,
                    lw_final)

        lw = np.logaddexp(lw_init, lw_final)
        if self.rng.uniform() < math.exp(lw_final - lw):
            prop = prop_final
        else:
            prop = prop_init
        rho = rho_init + rho_final
        persist = _no_uturn(ps_beg, ps_end, rho)
        persist &= _no_uturn(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist &= _no_uturn(ps_init_end, ps_end, rho_final + p_init_end)
        return persist, z, prop, rho, ps_beg, ps_end, p_beg, p_end, lw

    def transition(self, z0: _State) -> tuple[_State, dict]:
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False

        p0 = self.sample_momentum()
        z0 = _State(z0.q, p0, z0.logp, z0.grad)
        H0 = self.hamiltonian(z0)
        ps0 = self.inv_metric * p0

        z_fwd = z_bck = z0
        # momenta (and sharps) at the two ends of the whole trajectory
        p_fwd, ps_fwd = p0, ps0
        p_bck, ps_bck = p0, ps0
        rho = p0.copy()
        log_sum_weight = 0.0
        sample = z0
        depth = 0

        while depth < self.max_treedepth:
            rho_old = rho
            if self.rng.uniform() > 0.5:
                p_old_end, ps_old_end, ps_old_far = p_fwd, ps_fwd, ps_bck
                (valid, z_fwd, prop, rho_new, ps_new_beg, ps_fwd, p_new_beg, p_fwd,
                 lw_sub) = self._build_tree(depth, z_fwd, 1, H0)
                ps_new_far = ps_fwd
            else:
                p_old_end, ps_old_end, ps_old_far = p_bck, ps_bck, ps_fwd
                (valid, z_bck, prop, rho_new, ps_new_beg, ps_bck, p_new_beg, p_bck,
                 lw_sub) = self._build_tree(depth, z_bck, -1, H0)
                ps_new_far = ps_bck
            if not valid:
                break
            depth += 1
            if lw_sub > log_sum_weight or self.rng.uniform() < math.exp(lw_sub - log_sum_weight):
                sample = prop
            log_sum_weight = np.logaddexp(log_sum_weight, lw_sub)
            rho = rho_old + rho_new
            persist = _no_uturn(ps_bck, ps_fwd, rho)
            # old trajectory plus the first point of the new subtree, and the new
            # subtree plus the last point of the old trajectory
            persist &= _no_uturn(ps_old_far, ps_new_beg, rho_old + p_new_beg)
            persist &= _no_uturn(ps_old_end, ps_new_far, rho_new + p_old_end)
            if not persist:
                break

        n = max(self._n_leapfrog, 1)
        info = {
            "accept_stat": self._sum_metro / n,
            "treedepth": depth,
            "n_leapfrog": self._n_leapfrog,
            "divergent": self._divergent,
            "energy": self.hamiltonian(sample) if sample is not z0 else H0,
        }
        return _State(sample.q, None, sample.logp, sample.grad), info

    def find_reasonable_step_size(self, z: _State) -> float:
        """Double or halve the step until one leapfrog crosses acceptance 0.8."""
        eps = self.step_size
        direction = 0
        for _ in range(100):
            p0 = self.sample_momentum()
            start = _State(z.q, p0, z.logp, z.grad)
            H0 = self.hamiltonian(start)
            h = self.hamiltonian(self.leapfrog(start, eps))
            delta = H0 - h
            up = delta > math.log(0.8)
            if direction == 0:
                direction = 1 if up else -1
            elif (direction == 1 and not up) or (direction == -1 and up):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                raise RuntimeError("step size search did not converge; posterior is improper "
                                   "or the gradient is wrong")
        self.step_size = eps
        return eps


def _no_uturn(ps_minus: np.ndarray, ps_plus: np.ndarray, rho: np.ndarray) -> bool:
    return bool(np.dot(ps_plus, rho) > 0.0 and np.dot(ps_minus, rho) > 0.0)


# ---------------------------------------------------------------------------

REJECTED = -1e100


def _guarded(f: LogDensity, dim: int) -> LogDensity:
    """Map non-finite positions or densities to a rejected state."""
    def g(x):
        if not np.all(np.isfinite(x)):
            return REJECTED, np.zeros(dim)
        lp, grad = f(x)
        if not (math.isfinite(lp) and np.all(np.isfinite(grad))):
            return REJECTED, np.zeros(dim)
        return lp, grad
    return g


def check_gradient(f: LogDensity, x: np.ndarray, h: float = 1e-5) -> float:
    """Largest relative error of the analytic gradient against central differences.

    Relative error is |g - fd| / max(1, |fd|).
    """
    x = np.asarray(x, dtype=float)
    _, g = f(x)
    worst = 0.0
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fd = (f(x + e)[0] - f(x - e)[0]) / (2.0 * h)
        worst = max(worst, abs(g[k] - fd) / max(1.0, abs(fd)))
    return worst


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))


def _initial(f, dim, rng, config, posterior, init):
    if init is not None:
        x = np.asarray(init, dtype=float).copy()
        lp, g = f(x)
        if lp <= REJECTED:
            raise RuntimeError("supplied initial point has no finite log density")
        return x, lp, g
    layout = getattr(posterior, "layout", None)
    for _ in range(100):
        if layout is not None:
            x = layout.initial_point(rng, getattr(posterior, "priors", None),
                                     radius=config.init_radius)
        else:
            x = rng.uniform(-config.init_radius, config.init_radius, dim)
        lp, g = f(x)
        if lp > REJECTED:
            return x, lp, g
    raise RuntimeError("no finite log density after 100 initialisation attempts")


def run_chain(posterior, config: SamplerConfig, chain: int, init=None) -> ChainResult:
    dim = int(posterior.dim) if hasattr(posterior, "dim") else len(init)
    rng = chain_rng(config.seed, chain)
    f = _guarded(posterior, dim)
    x, lp, g = _initial(f, dim, rng, config, posterior, init)

    kernel = NUTSKernel(f, dim, rng, config.max_treedepth, config.max_energy_error)
    z = _State(x, None, lp, g)
    kernel.find_reasonable_step_size(z)
    adapt = DualAveraging(config.target_accept)
    adapt.restart(kernel.step_size)
    schedule = WarmupSchedule(config.warmup)
    adapt_metric = config.mass_matrix == "diag"
    welford = _Welford(dim)

    warm_div = 0
    for i in range(config.warmup):
        z, info = kernel.transition(z)
        warm_div += info["divergent"]
        kernel.step_size = adapt.update(info["accept_stat"])
        if adapt_metric and schedule.in_window(i):
            welford.add(z.q)
            if schedule.window_end(i):
                kernel.inv_metric = welford.regularized_variance()
                welford = _Welford(dim)
                kernel.find_reasonable_step_size(z)
                adapt.restart(kernel.step_size)
    if config.warmup > 0:
        kernel.step_size = adapt.final

    n = config.samples
    draws = np.empty((n, dim))
    out = {k: np.empty(n) for k in ("logp", "accept_stat", "energy")}
    depth = np.empty(n, dtype=int)
    leap = np.empty(n, dtype=int)
    div = np.zeros(n, dtype=bool)
    for i in range(n):
        z, info = kernel.transition(z)
        draws[i] = z.q
        out["logp"][i] = z.logp
        out["accept_stat"][i] = info["accept_stat"]
        out["energy"][i] = info["energy"]
        depth[i] = info["treedepth"]
        leap[i] = info["n_leapfrog"]
        div[i] = info["divergent"]
    return ChainResult(chain, draws, out["logp"], out["accept_stat"], depth, leap, div,
                       out["energy"], float(kernel.step_size), kernel.inv_metric.copy(),
                       int(warm_div))


def worker_count(chains: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    else:
        n = os.cpu_count() or 1
    return max(1, min(n, chains))


def sample(posterior, config: SamplerConfig | None = None, init=None) -> PosteriorDraws:
    """Run ``config.chains`` NUTS chains on a callable returning (logp, grad).

    Results depend only on the seed and chain index, never on the worker count.
    """
    config = config or SamplerConfig()
    dim = int(posterior.dim)
    layout = getattr(posterior, "layout", None)

    if config.check_gradient:
        rng = chain_rng(config.seed, config.chains)
        x, _, _ = _initial(_guarded(posterior, dim), dim, rng, config, posterior, init)
        err = check_gradient(posterior, x)
        if err > 1e-4:
            raise RuntimeError(f"gradient check failed: relative error {err:.3g}")

    workers = worker_count(config.chains)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(run_chain, posterior, config, c, init)
                       for c in range(config.chains)]
            results = [fu.result() for fu in futures]
    else:
        results = [run_chain(posterior, config, c, init) for c in range(config.chains)]

    raw = np.stack([r.draws for r in results])
    if layout is not None:
        values, names = layout.constrain(raw), list(layout.names)
    else:
        values, names = raw, [f"x[{k}]" for k in range(dim)]

    report, summary = {}, {}
    if config.samples >= 4:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report = diagnostics.summarize_chains(values, names)
        summary = diagnostics.run_summary(report)
        if config.chains < 2:
            summary["converged"] = True
            warnings.warn("single chain: R-hat omitted", RuntimeWarning, stacklevel=2)
    draws = PosteriorDraws(names, values, results, config, report, summary)
    total_div = sum(draws.divergence_count)
    if total_div:
        log.warning("%d divergent transitions after warmup", total_div)
    if draws.unreliable:
        warnings.warn("more than 10% of transitions diverged; results are unreliable",
                      RuntimeWarning, stacklevel=2)
    return draws
