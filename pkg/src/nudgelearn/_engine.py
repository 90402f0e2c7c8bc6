"""Compiled inner loop for coupled true/nudged runs.

The loop is resumable: all mutable run state lives in the arrays passed in,
so the Python driver can call :func:`advance` chunk by chunk and hand over a
fresh block of normal variates each time.

Per step (1-based counter ``ti = k + 1``, time ``t0 + k*dt``) the order is:

1. snapshot the errors for the record row;
2. draw forcing (3 normals) when enabled;
3. on observation steps draw observation noise (3 normals) and form the
   feedback, otherwise feedback is zero (or uses the held observation);
4. apply parameter updates if this is an update step;
5. step the true system with forcing, then the nudged system with feedback.
"""
import math

import numpy as np
from numba import njit

from .dynamics import lorenz_xyz, nudged_xyz
from .learn import (LOG_FLOOR, R_DEGENERATE, R_NO_OBSERVATION, R_NONE, R_NONPOSITIVE, beta_rule, fit_push,
                    fit_reset, gate, replacement_rule, rho_rule, sigma_rule)

EULER = 0
RK4 = 1

FIXED = 0
THRESHOLD = 1

NUDGING = 0
TRANSLATED = 1

OK = 0
NONFINITE = 1

BLOWUP = 1e8

# aux layout
A_OBS = 0      # 0:3 last observation (noisy; z translated when applicable)
A_SNAP = 3     # 3:6 nudged state at the last observation
A_HAS = 6      # an observation has been taken
A_TN = 7       # time of the last update

# replacement-passenger layout
P_Y, P_Z, P_XPREV, P_XLAST, P_N, P_SIG, P_MON = range(7)

N_COLS = 15
COLUMNS = ("t", "e_sol", "e_sigma", "e_rho", "e_beta", "K", "L", "sigma", "rho", "beta",
           "u", "v", "w", "sigma_replace", "monitor")


@njit(cache=True)
def _feedback_stage(mu, mask, translated, vx, vy, vz, ox, oy, oz, sd, rd):
    mz = vz - sd - rd if translated else vz
    f1 = mu[0] * (vx - ox) if mask[0] else 0.0
    f2 = mu[1] * (vy - oy) if mask[1] else 0.0
    f3 = mu[2] * (mz - oz) if mask[2] else 0.0
    return f1, f2, f3


@njit(cache=True)
def _coupled_deriv(ux, uy, uz, vx, vy, vz, p, est, fx, fy, fz, mu, mask, translated, ex, ey, ez):
    # stage derivative with the observation taken from the true stage state
    a1, a2, a3 = lorenz_xyz(ux, uy, uz, p[0], p[1], p[2])
    oz = uz - p[0] - p[1] if translated else uz
    F1, F2, F3 = _feedback_stage(mu, mask, translated, vx, vy, vz, ux + ex, uy + ey, oz + ez, est[0], est[1])
    b1, b2, b3 = nudged_xyz(vx, vy, vz, est[0], est[1], est[2], F1, F2, F3)
    return a1 + fx, a2 + fy, a3 + fz, b1, b2, b3


@njit(cache=True)
def _rk4_pair(U, V, dt, p, est, fx, fy, fz, F1, F2, F3, coupled, mu, mask, translated, ex, ey, ez):
    ux, uy, uz = U[0], U[1], U[2]
    vx, vy, vz = V[0], V[1], V[2]
    h = 0.5 * dt
    if coupled:
        k1 = _coupled_deriv(ux, uy, uz, vx, vy, vz, p, est, fx, fy, fz, mu, mask, translated, ex, ey, ez)
        k2 = _coupled_deriv(ux + h * k1[0], uy + h * k1[1], uz + h * k1[2],
                            vx + h * k1[3], vy + h * k1[4], vz + h * k1[5],
                            p, est, fx, fy, fz, mu, mask, translated, ex, ey, ez)
        k3 = _coupled_deriv(ux + h * k2[0], uy + h * k2[1], uz + h * k2[2],
                            vx + h * k2[3], vy + h * k2[4], vz + h * k2[5],
                            p, est, fx, fy, fz, mu, mask, translated, ex, ey, ez)
        k4 = _coupled_deriv(ux + dt * k3[0], uy + dt * k3[1], uz + dt * k3[2],
                            vx + dt * k3[3], vy + dt * k3[4], vz + dt * k3[5],
                            p, est, fx, fy, fz, mu, mask, translated, ex, ey, ez)
    else:
        # true and nudged halves decouple: feedback is a fixed vector over the step
        a = lorenz_xyz(ux, uy, uz, p[0], p[1], p[2])
        b = nudged_xyz(vx, vy, vz, est[0], est[1], est[2], F1, F2, F3)
        k1 = (a[0] + fx, a[1] + fy, a[2] + fz, b[0], b[1], b[2])
        a = lorenz_xyz(ux + h * k1[0], uy + h * k1[1], uz + h * k1[2], p[0], p[1], p[2])
        b = nudged_xyz(vx + h * k1[3], vy + h * k1[4], vz + h * k1[5], est[0], est[1], est[2], F1, F2, F3)
        k2 = (a[0] + fx, a[1] + fy, a[2] + fz, b[0], b[1], b[2])
        a = lorenz_xyz(ux + h * k2[0], uy + h * k2[1], uz + h * k2[2], p[0], p[1], p[2])
        b = nudged_xyz(vx + h * k2[3], vy + h * k2[4], vz + h * k2[5], est[0], est[1], est[2], F1, F2, F3)
        k3 = (a[0] + fx, a[1] + fy, a[2] + fz, b[0], b[1], b[2])
        a = lorenz_xyz(ux + dt * k3[0], uy + dt * k3[1], uz + dt * k3[2], p[0], p[1], p[2])
        b = nudged_xyz(vx + dt * k3[3], vy + dt * k3[4], vz + dt * k3[5], est[0], est[1], est[2], F1, F2, F3)
        k4 = (a[0] + fx, a[1] + fy, a[2] + fz, b[0], b[1], b[2])
    w = dt / 6.0
    U[0] = ux + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    U[1] = uy + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    U[2] = uz + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    V[0] = vx + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    V[1] = vy + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
    V[2] = vz + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])


@njit(cache=True)
def _log_event(ev, n_ev, t, which, old, new, den, skipped):
    ev[n_ev, 0] = t
    ev[n_ev, 1] = which
    ev[n_ev, 2] = old
    ev[n_ev, 3] = new
    ev[n_ev, 4] = den
    ev[n_ev, 5] = 1.0 if skipped else 0.0
    if skipped:
        ev[n_ev, 6] = R_DEGENERATE
    elif new <= 0.0:
        ev[n_ev, 6] = R_NONPOSITIVE
    else:
        ev[n_ev, 6] = R_NONE
    return n_ev + 1


@njit(cache=True)
def _apply_rules(est, mup, learn, u, v, w, xn, yn, zn, p_tol, t, ev, n_ev):
    if learn[0]:
        old = est[0]
        new, den, skipped = sigma_rule(old, mup[0], u, xn, yn, p_tol)
        est[0] = new
        n_ev = _log_event(ev, n_ev, t, 0, old, new, den, skipped)
    if learn[1]:
        old = est[1]
        new, den, skipped = rho_rule(old, mup[1], v, xn, p_tol)
        est[1] = new
        n_ev = _log_event(ev, n_ev, t, 1, old, new, den, skipped)
    if learn[2]:
        old = est[2]
        new, den, skipped = beta_rule(old, mup[2], w, zn, p_tol)
        est[2] = new
        n_ev = _log_event(ev, n_ev, t, 2, old, new, den, skipped)
    return n_ev


@njit(cache=True)
def advance(k0, k1, n_total, t0, dt, p, est, mu, mup, U, V,
            scheme, obs_int, mask, translated, eta, eps,
            learn, mode, param_int, T_R, p_tol, estimator,
            matlab_compat, hold, replace,
            noise, forcing_draws, obs_draws,
            aux, fits, rep, record_every, rec, ev):
    """Run steps ``k0 <= k < k1``; returns (status, abort_step, n_rec, n_ev, n_noise_used)."""
    cur = 0
    n_rec = 0
    n_ev = 0
    sq = math.sqrt(dt)
    learning = learn[0] or learn[1] or learn[2]
    dt_obs = obs_int * dt
    for k in range(k0, k1):
        ti = k + 1
        t = t0 + k * dt
        s0, r0, b0 = est[0], est[1], est[2]
        ux, uy, uz = U[0], U[1], U[2]
        vx, vy, vz = V[0], V[1], V[2]

        fx = fy = fz = 0.0
        if forcing_draws:
            fx = eps * sq * noise[cur]
            fy = eps * sq * noise[cur + 1]
            fz = eps * sq * noise[cur + 2]
            cur += 3

        is_obs = obs_int == 1 or ti % obs_int == 1
        ex = ey = ez = 0.0
        F1 = F2 = F3 = 0.0
        if is_obs:
            if obs_draws:
                ex = eta * noise[cur]
                ey = eta * noise[cur + 1]
                ez = eta * noise[cur + 2]
                cur += 3
            ox = ux + ex
            oy = uy + ey
            oz = (uz - p[0] - p[1] if translated else uz) + ez
            aux[A_OBS] = ox
            aux[A_OBS + 1] = oy
            aux[A_OBS + 2] = oz
            aux[A_SNAP] = vx
            aux[A_SNAP + 1] = vy
            aux[A_SNAP + 2] = vz
            aux[A_HAS] = 1.0
            F1, F2, F3 = _feedback_stage(mu, mask, translated, vx, vy, vz, ox, oy, oz, s0, r0)
            if replace:
                rep[P_XPREV] = rep[P_XLAST]
                rep[P_XLAST] = ox
                rep[P_N] += 1.0
                if rep[P_N] >= 2.0:
                    sig, xdot, den, ok = replacement_rule(rep[P_XPREV], ox, dt_obs, rep[P_Y], p_tol)
                    if ok:
                        rep[P_SIG] = sig
                        gap = abs(uy - ox)
                        rep[P_MON] = abs(xdot) * abs(rep[P_Y] - uy) / (abs(den) * gap) if gap > 0 else np.inf
        elif hold and aux[A_HAS] > 0.0:
            F1, F2, F3 = _feedback_stage(mu, mask, translated, vx, vy, vz,
                                         aux[A_OBS], aux[A_OBS + 1], aux[A_OBS + 2], s0, r0)

        if learning:
            if mode == FIXED:
                if ti % param_int == 0:
                    if estimator == TRANSLATED:
                        zt = uz - p[0] - p[1] if matlab_compat else aux[A_OBS + 2]
                        if matlab_compat or aux[A_HAS] > 0.0:
                            new = -zt - 1.0
                            n_ev = _log_event(ev, n_ev, t, 0, est[0], new, 0.0, False)
                            est[0] = new
                    elif matlab_compat:
                        n_ev = _apply_rules(est, mup, learn, vx - ux, vy - uy, vz - uz, vx, vy, vz, p_tol,
                                            t, ev, n_ev)
                    elif aux[A_HAS] > 0.0:
                        sx, sy, sz = aux[A_SNAP], aux[A_SNAP + 1], aux[A_SNAP + 2]
                        n_ev = _apply_rules(est, mup, learn, sx - aux[A_OBS], sy - aux[A_OBS + 1],
                                            sz - aux[A_OBS + 2], sx, sy, sz, p_tol, t, ev, n_ev)
                    else:
                        for i in range(3):
                            if learn[i]:
                                _log_event(ev, n_ev, t, i, est[i], est[i], 0.0, True)
                                ev[n_ev, 6] = R_NO_OBSERVATION
                                n_ev += 1
            else:
                elapsed = t - aux[A_TN]
                if estimator == TRANSLATED:
                    if elapsed >= T_R and elapsed > 0.0:
                        new = -aux[A_OBS + 2] - 1.0
                        n_ev = _log_event(ev, n_ev, t, 0, est[0], new, 0.0, False)
                        est[0] = new
                        aux[A_TN] = t
                else:
                    iu = vx - aux[A_OBS]
                    iv = vy - aux[A_OBS + 1]
                    iw = vz - aux[A_OBS + 2]
                    fire = True
                    if learn[0] and not gate(iu, vy - vx, p_tol, elapsed, T_R, fits[0]):
                        fire = False
                    if learn[1] and not gate(iv, vx, p_tol, elapsed, T_R, fits[1]):
                        fire = False
                    if learn[2] and not gate(iw, vz, p_tol, elapsed, T_R, fits[2]):
                        fire = False
                    if fire:
                        n_ev = _apply_rules(est, mup, learn, iu, iv, iw, vx, vy, vz, p_tol, t, ev, n_ev)
                        aux[A_TN] = t
                        for i in range(3):
                            fit_reset(fits[i])
                    s_rel = t - aux[A_TN]
                    if learn[0] and abs(iu) >= LOG_FLOOR:
                        fit_push(fits[0], s_rel, math.log(abs(iu)))
                    if learn[1] and abs(iv) >= LOG_FLOOR:
                        fit_push(fits[1], s_rel, math.log(abs(iv)))
                    if learn[2] and abs(iw) >= LOG_FLOOR:
                        fit_push(fits[2], s_rel, math.log(abs(iw)))

        a1, a2, a3 = lorenz_xyz(ux, uy, uz, p[0], p[1], p[2])
        b1, b2, b3 = nudged_xyz(vx, vy, vz, est[0], est[1], est[2], F1, F2, F3)
        a1 += fx
        a2 += fy
        a3 += fz

        if k % record_every == 0 or k == n_total - 1:
            du = vx - ux
            dv = vy - uy
            dw = vz - uz
            kk = 0.5 * (du * du + dv * dv + dw * dw)
            g1 = b1 - a1
            g2 = b2 - a2
            g3 = b3 - a3
            rec[n_rec, 0] = t
            rec[n_rec, 1] = math.sqrt(2.0 * kk)
            rec[n_rec, 2] = abs(s0 - p[0])
            rec[n_rec, 3] = abs(r0 - p[1])
            rec[n_rec, 4] = abs(b0 - p[2])
            rec[n_rec, 5] = kk
            rec[n_rec, 6] = 0.5 * (g1 * g1 + g2 * g2 + g3 * g3)
            rec[n_rec, 7] = s0
            rec[n_rec, 8] = r0
            rec[n_rec, 9] = b0
            rec[n_rec, 10] = du
            rec[n_rec, 11] = dv
            rec[n_rec, 12] = dw
            rec[n_rec, 13] = rep[P_SIG] if replace else np.nan
            rec[n_rec, 14] = rep[P_MON] if replace else np.nan
            n_rec += 1

        if replace:
            xh = rep[P_XLAST]
            yr = rep[P_Y]
            zr = rep[P_Z]
            rep[P_Y] = yr + dt * (est[1] * xh - yr - xh * zr)
            rep[P_Z] = zr + dt * (xh * yr - est[2] * zr)

        if scheme == EULER:
            U[0] = ux + dt * a1
            U[1] = uy + dt * a2
            U[2] = uz + dt * a3
            V[0] = vx + dt * b1
            V[1] = vy + dt * b2
            V[2] = vz + dt * b3
        else:
            coupled = is_obs and obs_int == 1
            _rk4_pair(U, V, dt, p, est, fx, fy, fz, F1, F2, F3, coupled, mu, mask, translated, ex, ey, ez)

        for i in range(3):
            if not (abs(U[i]) <= BLOWUP and abs(V[i]) <= BLOWUP):
                return NONFINITE, k, n_rec, n_ev, cur
    return OK, -1, n_rec, n_ev, cur


@njit(cache=True)
def integrate_true(x, y, z, sigma, rho, beta, dt, n_steps, scheme, stride):
    """Deterministic true-system trajectory; returns every ``stride``-th state incl. the start."""
    n_out = n_steps // stride + 1
    out = np.empty((n_out, 3))
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = z
    j = 1
    h = 0.5 * dt
    for k in range(1, n_steps + 1):
        if scheme == EULER:
            d = lorenz_xyz(x, y, z, sigma, rho, beta)
            x, y, z = x + dt * d[0], y + dt * d[1], z + dt * d[2]
        else:
            k1 = lorenz_xyz(x, y, z, sigma, rho, beta)
            k2 = lorenz_xyz(x + h * k1[0], y + h * k1[1], z + h * k1[2], sigma, rho, beta)
            k3 = lorenz_xyz(x + h * k2[0], y + h * k2[1], z + h * k2[2], sigma, rho, beta)
            k4 = lorenz_xyz(x + dt * k3[0], y + dt * k3[1], z + dt * k3[2], sigma, rho, beta)
            w = dt / 6.0
            x = x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            y = y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            z = z + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        if k % stride == 0:
            out[j, 0] = x
            out[j, 1] = y
            out[j, 2] = z
            j += 1
    return out[:j]
