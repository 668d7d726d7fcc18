"""Hot loops of the ion transport.

Two interchangeable backends:

* ``track_ions_numba``: one ion at a time in compiled code.
* ``track_ions_numpy``: all ions advanced in lockstep with array operations.

Both consume the counter-based uniforms of :mod:`vsiarray.rng` with the same
(ion key, step, slot) indexing, so they simulate the same physics from the
same random numbers; results agree to floating-point rounding.

Random slots per step: 0 partner species, 1 impact parameter, 2 azimuth,
3 first-flight fraction (step 0 only).
"""

import math

import numpy as np

from .._accel import njit
from ..rng import counter_uniform, counter_uniform_array
from .physics import ZBL_C, ZBL_D, _KERNEL_U, _KERNEL_W, gauss_theta, kinchin_pease

N_SLOTS = 4
TWO_PI = 2.0 * math.pi

# Columns of the per-ion scalar result table.
COL_X, COL_Y, COL_Z, COL_E_FINAL, COL_NUCLEAR, COL_ELECTRONIC, COL_NCOLL, COL_BACK = range(8)
N_COLS = 8


@njit(cache=True)
def _rotate(cx, cy, cz, psi, phi):
    cp = math.cos(psi)
    sp = math.sin(psi)
    cf = math.cos(phi)
    sf = math.sin(phi)
    st2 = 1.0 - cz * cz
    if st2 > 1e-20:
        st = math.sqrt(st2)
        nx = cx * cp + sp * (cx * cz * cf - cy * sf) / st
        ny = cy * cp + sp * (cy * cz * cf + cx * sf) / st
        nz = cz * cp - sp * cf * st
    else:
        nx = sp * cf
        ny = sp * sf
        nz = cp if cz > 0.0 else -cp
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


@njit(cache=True)
def track_one(
    e0, d0x, d0y, d0z, key, m1,
    tm, cum_frac, ed, a_scr, eps_fac, gam,
    lam, pmax, se_coef, cutoff,
    bin_width, vac_hist, out, vac_out,
    rec_pos, rec_t, rec_e, rec_sp,
):
    """Track one ion; fills ``out`` (N_COLS) and ``vac_out`` (per species).

    Vacancies are added to ``vac_hist[species, depth_bin]``. If ``rec_t`` is
    non-empty the collision list is recorded and the collision count is
    returned.
    """
    n_bins = vac_hist.shape[1]
    n_sp = tm.shape[0]
    record = rec_t.shape[0] > 0
    x = 0.0
    y = 0.0
    z = 0.0
    cx = d0x
    cy = d0y
    cz = d0z
    e = e0
    nuclear = 0.0
    electronic = 0.0
    back = 0.0
    ncoll = 0
    for k in range(n_sp):
        vac_out[k] = 0.0
    step = 0
    while e >= cutoff:
        base = np.uint64(step * N_SLOTS)
        if step == 0:
            flight = lam * counter_uniform(key, base + np.uint64(3))
        else:
            flight = lam
        nz = z + cz * flight
        if nz < 0.0:
            # leaves through the surface
            flight = z / (-cz)
            loss = se_coef * math.sqrt(e) * flight
            if loss > e:
                loss = e
            e -= loss
            electronic += loss
            x += cx * flight
            y += cy * flight
            z = 0.0
            back = 1.0
            break
        x += cx * flight
        y += cy * flight
        z = nz
        loss = se_coef * math.sqrt(e) * flight
        if loss > e:
            loss = e
        e -= loss
        electronic += loss
        if e < cutoff:
            break

        u0 = counter_uniform(key, base)
        j = 0
        while j < n_sp - 1 and u0 >= cum_frac[j]:
            j += 1
        p = pmax * math.sqrt(counter_uniform(key, base + np.uint64(1)))
        phi = TWO_PI * counter_uniform(key, base + np.uint64(2))
        theta = gauss_theta(e * eps_fac[j], p / a_scr[j])
        s = math.sin(0.5 * theta)
        t = gam[j] * e * s * s
        if record:
            rec_pos[ncoll, 0] = x
            rec_pos[ncoll, 1] = y
            rec_pos[ncoll, 2] = z
            rec_t[ncoll] = t
            rec_e[ncoll] = e
            rec_sp[ncoll] = j
        e -= t
        nuclear += t
        ncoll += 1
        nv = kinchin_pease(t, ed[j])
        if nv > 0.0:
            vac_out[j] += nv
            b = int(z / bin_width)
            if b >= n_bins:
                b = n_bins - 1
            vac_hist[j, b] += nv
        psi = math.atan2(math.sin(theta), m1 / tm[j] + math.cos(theta))
        cx, cy, cz = _rotate(cx, cy, cz, psi, phi)
        step += 1

    out[COL_X] = x
    out[COL_Y] = y
    out[COL_Z] = z
    out[COL_E_FINAL] = e
    out[COL_NUCLEAR] = nuclear
    out[COL_ELECTRONIC] = electronic
    out[COL_NCOLL] = ncoll
    out[COL_BACK] = back
    return ncoll


@njit(cache=True)
def track_ions_numba(
    e0, direction, keys, m1,
    tm, cum_frac, ed, a_scr, eps_fac, gam,
    lam, pmax, se_coef, cutoff, bin_width, n_bins,
):
    n = keys.shape[0]
    n_sp = tm.shape[0]
    table = np.zeros((n, N_COLS))
    vac = np.zeros((n, n_sp))
    vac_hist = np.zeros((n_sp, n_bins))
    rec_pos = np.zeros((0, 3))
    rec_t = np.zeros(0)
    rec_e = np.zeros(0)
    rec_sp = np.zeros(0, dtype=np.int64)
    for i in range(n):
        track_one(
            e0, direction[0], direction[1], direction[2], keys[i], m1,
            tm, cum_frac, ed, a_scr, eps_fac, gam,
            lam, pmax, se_coef, cutoff,
            bin_width, vac_hist, table[i], vac[i],
            rec_pos, rec_t, rec_e, rec_sp,
        )
    return table, vac, vac_hist


def _closest_approach_vec(eps, b):
    r = 0.5 / eps + np.sqrt(0.25 / (eps * eps) + b * b)
    active = np.ones(r.shape, dtype=bool)
    for _ in range(100):
        if not active.any():
            break
        ra, ea, ba = r[active], eps[active], b[active]
        ex = np.exp(-np.multiply.outer(ra, ZBL_D))
        phi = ex @ ZBL_C
        dphi = -(ex @ (ZBL_C * ZBL_D))
        f = 1.0 - phi / (ea * ra) - (ba / ra) ** 2
        df = -(dphi * ra - phi) / (ea * ra * ra) + 2.0 * ba * ba / (ra * ra * ra)
        r_new = ra - f / df
        r_new = np.where(r_new <= 0.0, 0.5 * ra, r_new)
        done = np.abs(r_new - ra) <= 1e-13 * r_new
        r[active] = r_new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return r


def _gauss_theta_vec(eps, b):
    theta = np.full(eps.shape, np.pi)
    ok = b > 0.0
    if not ok.any():
        return theta
    eps, b = eps[ok], b[ok]
    r0 = _closest_approach_vec(eps, b)
    r = r0[:, None] / _KERNEL_U[None, :]
    phi = np.exp(-r[:, :, None] * ZBL_D) @ ZBL_C
    g = 1.0 - phi / (eps[:, None] * r) - (b[:, None] / r) ** 2
    acc = np.sum(_KERNEL_W / np.sqrt(g / (1.0 - _KERNEL_U * _KERNEL_U)), axis=1)
    theta[ok] = np.pi - 2.0 * b / r0 * acc
    return theta


def _kinchin_pease_vec(t, ed):
    return np.where(t < ed, 0.0, np.where(t < 2.0 * ed / 0.8, 1.0, 0.8 * t / (2.0 * ed)))


def track_ions_numpy(
    e0, direction, keys, m1,
    tm, cum_frac, ed, a_scr, eps_fac, gam,
    lam, pmax, se_coef, cutoff, bin_width, n_bins,
):
    n = keys.shape[0]
    n_sp = tm.shape[0]
    table = np.zeros((n, N_COLS))
    vac = np.zeros((n, n_sp))
    vac_hist = np.zeros((n_sp, n_bins))
    pos = np.zeros((n, 3))
    d = np.tile(np.asarray(direction, dtype=np.float64), (n, 1))
    e = np.full(n, float(e0))
    alive = np.full(n, e0 >= cutoff)
    step = 0
    while alive.any():
        idx = np.flatnonzero(alive)
        k = keys[idx]
        base = np.uint64(step * N_SLOTS)
        ce = e[idx]
        cpos = pos[idx]
        cd = d[idx]
        if step == 0:
            flight = lam * counter_uniform_array(k, np.full(idx.size, base + np.uint64(3)))
        else:
            flight = np.full(idx.size, lam)
        nz = cpos[:, 2] + cd[:, 2] * flight
        leaving = nz < 0.0
        if leaving.any():
            flight = np.where(leaving, cpos[:, 2] / np.where(leaving, -cd[:, 2], 1.0), flight)
        cpos = cpos + cd * flight[:, None]
        cpos[leaving, 2] = 0.0
        loss = np.minimum(se_coef * np.sqrt(ce) * flight, ce)
        ce = ce - loss
        table[idx, COL_ELECTRONIC] += loss
        table[idx[leaving], COL_BACK] = 1.0
        collide = ~leaving & (ce >= cutoff)

        ci = np.flatnonzero(collide)
        if ci.size:
            kc = k[ci]
            u0 = counter_uniform_array(kc, np.full(ci.size, base))
            u1 = counter_uniform_array(kc, np.full(ci.size, base + np.uint64(1)))
            u2 = counter_uniform_array(kc, np.full(ci.size, base + np.uint64(2)))
            j = np.minimum(np.searchsorted(cum_frac[:-1], u0, side="right"), n_sp - 1)
            p = pmax * np.sqrt(u1)
            phi = TWO_PI * u2
            ee = ce[ci]
            theta = _gauss_theta_vec(ee * eps_fac[j], p / a_scr[j])
            s = np.sin(0.5 * theta)
            t = gam[j] * ee * s * s
            ce[ci] = ee - t
            gi = idx[ci]
            table[gi, COL_NUCLEAR] += t
            table[gi, COL_NCOLL] += 1.0
            nv = _kinchin_pease_vec(t, ed[j])
            zb = np.minimum((cpos[ci, 2] / bin_width).astype(np.int64), n_bins - 1)
            np.add.at(vac, (gi, j), nv)
            np.add.at(vac_hist, (j, zb), nv)
            psi = np.arctan2(np.sin(theta), m1 / tm[j] + np.cos(theta))
            cd[ci] = _rotate_vec(cd[ci], psi, phi)

        e[idx] = ce
        pos[idx] = cpos
        d[idx] = cd
        alive[idx] = collide & (ce >= cutoff)
        step += 1

    table[:, COL_X:COL_Z + 1] = pos
    table[:, COL_E_FINAL] = e
    return table, vac, vac_hist


def _rotate_vec(d, psi, phi):
    cx, cy, cz = d[:, 0], d[:, 1], d[:, 2]
    cp, sp = np.cos(psi), np.sin(psi)
    cf, sf = np.cos(phi), np.sin(phi)
    st2 = 1.0 - cz * cz
    polar = st2 <= 1e-20
    st = np.sqrt(np.where(polar, 1.0, st2))
    nx = np.where(polar, sp * cf, cx * cp + sp * (cx * cz * cf - cy * sf) / st)
    ny = np.where(polar, sp * sf, cy * cp + sp * (cy * cz * cf + cx * sf) / st)
    nz = np.where(polar, np.where(cz > 0.0, cp, -cp), cz * cp - sp * cf * st)
    out = np.stack([nx, ny, nz], axis=1)
    return out / np.linalg.norm(out, axis=1)[:, None]
