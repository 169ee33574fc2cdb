"""Compiled log density + gradient on the unconstrained scale.

Mirrors ``Posterior.constrained_logp_grad`` loop by loop; the numpy version
is kept as the readable reference and the tests hold the two together.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)

# slot order in the ``off`` array; -1 marks an absent block
SLOTS = ("alpha1", "beta1", "tau1_sq", "alpha2", "beta2", "tau2_sq", "gamma", "kappa", "phi",
         "mu1_alpha", "sigma1_alpha", "mu1_beta", "sigma1_beta", "sigma1_tau", "mu_kappa",
         "sigma_kappa", "sigma2_alpha", "mu2_beta", "sigma2_beta", "sigma2_tau")
(A1, B1, T1, A2, B2, T2, GAM, KAP, PHI, MU1A, S1A, MU1B, S1B, S1T, MUK, SK, S2A, MU2B, S2B,
 S2T) = range(len(SLOTS))

# prior scale order in the ``scales`` array
SCALE_ORDER = ("mu1_alpha", "sigma1_alpha", "mu1_beta", "sigma1_beta", "sigma1_tau", "gamma",
               "mu_kappa", "sigma_kappa", "phi_mean", "phi", "sigma2_alpha", "mu2_beta",
               "sigma2_beta", "sigma2_tau")


@njit(cache=True)
def _normal(x, m, s):
    z = (x - m) / s
    return -0.5 * LOG_2PI - math.log(s) - 0.5 * z * z, -z / s, (z * z - 1.0) / s


@njit(cache=True)
def _half_normal(x, s):
    z = x / s
    return LOG_2 - 0.5 * LOG_2PI - math.log(s) - 0.5 * z * z, -z / s, (z * z - 1.0) / s


@njit(cache=True)
def logp_grad(x, pos_mask, off, n_race, n_group, n_house, n_year, extended, use_lik,
              y, u, has_u, t, n, race, group, house, logit_v, race_year, scales, var_floor,
              und_scale, nc_elem, nc_loc, nc_scale):
    """Return (logp, grad, status); status 1 flags linear-predictor overflow.

    ``nc_elem`` lists coordinates sampled non-centred: theta = loc + scale * x
    with loc and scale taken from ``nc_loc`` and ``nc_scale``.
    """
    dim = x.shape[0]
    th = np.empty(dim)
    lp = 0.0
    for k in range(dim):
        if pos_mask[k]:
            if x[k] > 700.0:
                return 0.0, np.zeros(dim), 2
            th[k] = math.exp(x[k])
            lp += x[k]
        else:
            th[k] = x[k]
    for j in range(nc_elem.shape[0]):
        e = nc_elem[j]
        th[e] = th[nc_loc[j]] + th[nc_scale[j]] * x[e]
    g = np.zeros(dim)
    a1, b1, t1 = off[A1], off[B1], off[T1]
    a2, b2, t2 = off[A2], off[B2], off[T2]
    gam, kap, phi = off[GAM], off[KAP], off[PHI]

    if use_lik:
        for i in range(y.shape[0]):
            r = race[i]
            eta = logit_v[i] + th[a1 + r] + t[i] * th[b1 + r]
            if extended:
                eta -= und_scale * th[a2 + r] * th[gam + group[i]]
                if house[i] >= 0:
                    eta += th[kap + house[i]]
            if eta >= 0.0:
                e_ = math.exp(-eta)
                p = 1.0 / (1.0 + e_)
            else:
                e_ = math.exp(eta)
                p = e_ / (1.0 + e_)
            if not (p > 0.0 and p < 1.0):
                return 0.0, np.zeros(dim), 1
            q = p * (1.0 - p)
            s2 = q / n[i] + th[t1 + r]
            e = y[i] - p
            e2s = e * e / s2
            lp -= 0.5 * (LOG_2PI + math.log(s2) + e2s)
            ds2 = 0.5 * (e2s - 1.0) / s2
            deta = (e / s2 + ds2 * (1.0 - 2.0 * p) / n[i]) * q
            g[a1 + r] += deta
            g[b1 + r] += deta * t[i]
            g[t1 + r] += ds2
            if extended:
                g[a2 + r] -= und_scale * th[gam + group[i]] * deta
                g[gam + group[i]] -= und_scale * th[a2 + r] * deta
                if house[i] >= 0:
                    g[kap + house[i]] += deta
                if has_u[i]:
                    mean = th[a2 + r] + t[i] * th[b2 + r]
                    raw = th[t2 + r]
                    var = raw if raw > var_floor else var_floor
                    d = u[i] - mean
                    d2v = d * d / var
                    lp -= 0.5 * (LOG_2PI + math.log(var) + d2v)
                    dm = d / var
                    g[a2 + r] += dm
                    g[b2 + r] += dm * t[i]
                    if raw > var_floor:
                        g[t2 + r] += 0.5 * (d2v - 1.0) / var

    # poll-model priors
    for r in range(n_race):
        v, dx, ds = _normal(th[a1 + r], th[off[MU1A]], th[off[S1A]])
        lp += v
        g[a1 + r] += dx
        g[off[MU1A]] -= dx
        g[off[S1A]] += ds
        v, dx, ds = _normal(th[b1 + r], th[off[MU1B]], th[off[S1B]])
        lp += v
        g[b1 + r] += dx
        g[off[MU1B]] -= dx
        g[off[S1B]] += ds
        v, dx, ds = _half_normal(th[t1 + r], th[off[S1T]])
        lp += v
        g[t1 + r] += dx
        g[off[S1T]] += ds
    v, dx, ds = _normal(th[off[MU1A]], 0.0, scales[0])
    lp += v
    g[off[MU1A]] += dx
    v, dx, ds = _half_normal(th[off[S1A]], scales[1])
    lp += v
    g[off[S1A]] += dx
    v, dx, ds = _normal(th[off[MU1B]], 0.0, scales[2])
    lp += v
    g[off[MU1B]] += dx
    v, dx, ds = _half_normal(th[off[S1B]], scales[3])
    lp += v
    g[off[S1B]] += dx
    v, dx, ds = _half_normal(th[off[S1T]], scales[4])
    lp += v
    g[off[S1T]] += dx

    if extended:
        b = scales[5]
        for k in range(n_group):
            gk = th[gam + k]
            lp += -math.log(2.0 * b) - abs(gk) / b
            if gk > 0:
                g[gam + k] -= 1.0 / b
            elif gk < 0:
                g[gam + k] += 1.0 / b
        for h in range(n_house):
            v, dx, ds = _normal(th[kap + h], th[off[MUK]], th[off[SK]])
            lp += v
            g[kap + h] += dx
            g[off[MUK]] -= dx
            g[off[SK]] += ds
        v, dx, ds = _normal(th[off[MUK]], 0.0, scales[6])
        lp += v
        g[off[MUK]] += dx
        lp += -math.log(scales[7]) - th[off[SK]] / scales[7]
        g[off[SK]] -= 1.0 / scales[7]
        for r in range(n_race):
            yr = race_year[r]
            v, dx, ds = _normal(th[a2 + r], th[phi + yr], th[off[S2A]])
            lp += v
            g[a2 + r] += dx
            g[phi + yr] -= dx
            g[off[S2A]] += ds
            v, dx, ds = _normal(th[b2 + r], th[off[MU2B]], th[off[S2B]])
            lp += v
            g[b2 + r] += dx
            g[off[MU2B]] -= dx
            g[off[S2B]] += ds
            v, dx, ds = _half_normal(th[t2 + r], th[off[S2T]])
            lp += v
            g[t2 + r] += dx
            g[off[S2T]] += ds
        for j in range(n_year):
            v, dx, ds = _normal(th[phi + j], scales[8], scales[9])
            lp += v
            g[phi + j] += dx
        v, dx, ds = _half_normal(th[off[S2A]], scales[10])
        lp += v
        g[off[S2A]] += dx
        v, dx, ds = _normal(th[off[MU2B]], 0.0, scales[11])
        lp += v
        g[off[MU2B]] += dx
        v, dx, ds = _half_normal(th[off[S2B]], scales[12])
        lp += v
        g[off[S2B]] += dx
        v, dx, ds = _half_normal(th[off[S2T]], scales[13])
        lp += v
        g[off[S2T]] += dx

    for j in range(nc_elem.shape[0]):
        e = nc_elem[j]
        sc = nc_scale[j]
        gb = g[e]
        g[nc_loc[j]] += gb
        g[sc] += gb * x[e] + 1.0 / th[sc]
        g[e] = gb * th[sc]
        lp += x[sc]
    for k in range(dim):
        if pos_mask[k]:
            g[k] = g[k] * th[k] + 1.0
    return lp, g, 0
