# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled right-hand side and RK4 loop over the packed system arrays.

Index constants must match ``hacgrid.system``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, atan2, fmod, hypot, isfinite, M_PI

cnp.import_array()

cdef double K = 1.5
cdef double RADICAND_FLOOR = 1e-9


cdef inline double wrap(double x) nogil:
    cdef double y = fmod(x + M_PI, 2.0 * M_PI)
    if y < 0:
        y += 2.0 * M_PI
    y -= M_PI
    if y == -M_PI:
        y = M_PI
    return y


cdef inline double clamp(double x, double lo, double hi) nogil:
    return lo if x < lo else (hi if x > hi else x)


cdef class Model:
    cdef double[:, ::1] cp
    cdef long[:, ::1] ci
    cdef double[:, ::1] mp
    cdef long[:, ::1] mi
    cdef long[::1] bfrom, bto
    cdef double[::1] R, L, C, G
    cdef int n_conv, n_mach, n_branch, n_bus, n_port, net_off, bus_off, n
    cdef double[:, ::1] pv
    cdef double[:, ::1] vn
    cdef double[:, ::1] acc
    cdef double[::1] k1, k2, k3, k4, tmp

    def __init__(self, system):
        net = system.network
        self.cp = np.ascontiguousarray(system.conv_p, dtype=np.float64)
        self.ci = np.ascontiguousarray(system.conv_i, dtype=np.int64)
        self.mp = np.ascontiguousarray(system.mach_p, dtype=np.float64)
        self.mi = np.ascontiguousarray(system.mach_i, dtype=np.int64)
        self.n_conv = system.conv_p.shape[0]
        self.n_mach = system.mach_p.shape[0]
        self.bfrom = np.ascontiguousarray(net.branch_from, dtype=np.int64)
        self.bto = np.ascontiguousarray(net.branch_to, dtype=np.int64)
        self.R = np.ascontiguousarray(net.R, dtype=np.float64)
        self.L = np.ascontiguousarray(net.L, dtype=np.float64)
        self.C = np.ascontiguousarray(net.C, dtype=np.float64)
        self.G = np.ascontiguousarray(net.G, dtype=np.float64).copy()
        self.n_branch = net.n_branch
        self.n_bus = net.n_bus
        self.n_port = net.n_port
        self.net_off = system.net_offset
        self.bus_off = system.bus_offset
        self.n = system.layout.size
        self.pv = np.zeros((max(self.n_port, 1), 2))
        self.vn = np.zeros((self.n_bus + self.n_port, 2))
        self.acc = np.zeros((self.n_bus + self.n_port, 2))
        self.k1 = np.zeros(self.n)
        self.k2 = np.zeros(self.n)
        self.k3 = np.zeros(self.n)
        self.k4 = np.zeros(self.n)
        self.tmp = np.zeros(self.n)

    def set_conductance(self, G):
        self.G = np.ascontiguousarray(G, dtype=np.float64).copy()

    cdef void _rhs(self, double[::1] x, double[::1] dx, double[:, :, ::1] out, int j, bint want) nogil:
        cdef int k, o, b, node, nb = self.n_bus
        cdef double eq, i0, i1
        # port voltages
        for k in range(self.n_conv):
            o = self.ci[k, 6]
            node = self.ci[k, 7]
            self.pv[node, 0] = self.cp[k, 9] * x[o + 4]
            self.pv[node, 1] = self.cp[k, 9] * x[o + 5]
        for k in range(self.n_mach):
            o = self.mi[k, 1]
            node = self.mi[k, 2]
            eq = self.mp[k, 18] * x[o + 3]
            self.pv[node, 0] = eq * cos(x[o])
            self.pv[node, 1] = eq * sin(x[o])
        for k in range(nb):
            self.vn[k, 0] = x[self.bus_off + 2 * k]
            self.vn[k, 1] = x[self.bus_off + 2 * k + 1]
            self.acc[k, 0] = 0.0
            self.acc[k, 1] = 0.0
        for k in range(self.n_port):
            self.vn[nb + k, 0] = self.pv[k, 0]
            self.vn[nb + k, 1] = self.pv[k, 1]
            self.acc[nb + k, 0] = 0.0
            self.acc[nb + k, 1] = 0.0
        # branches
        for b in range(self.n_branch):
            o = self.net_off + 2 * b
            i0 = x[o]
            i1 = x[o + 1]
            dx[o] = (self.vn[self.bfrom[b], 0] - self.vn[self.bto[b], 0] - self.R[b] * i0) / self.L[b]
            dx[o + 1] = (self.vn[self.bfrom[b], 1] - self.vn[self.bto[b], 1] - self.R[b] * i1) / self.L[b]
            self.acc[self.bto[b], 0] += i0
            self.acc[self.bto[b], 1] += i1
            self.acc[self.bfrom[b], 0] -= i0
            self.acc[self.bfrom[b], 1] -= i1
        for k in range(nb):
            o = self.bus_off + 2 * k
            dx[o] = (self.acc[k, 0] - self.G[k] * x[o]) / self.C[k]
            dx[o + 1] = (self.acc[k, 1] - self.G[k] * x[o + 1]) / self.C[k]
        for k in range(self.n_conv):
            self._conv(k, x, dx, out, j, want)
        for k in range(self.n_mach):
            self._mach(k, x, dx, out, j, want)

    cdef void _conv(self, int k, double[::1] x, double[::1] dx, double[:, :, ::1] out, int j, bint want) nogil:
        cdef int o = self.ci[k, 6]
        cdef int b = self.ci[k, 5]
        cdef double sg = self.ci[k, 8] * self.cp[k, 9]
        cdef double ig0 = sg * x[self.net_off + 2 * b]
        cdef double ig1 = sg * x[self.net_off + 2 * b + 1]
        cdef double i_dc = x[o], v_dc = x[o + 1], isa = x[o + 2], isb = x[o + 3]
        cdef double va = x[o + 4], vb = x[o + 5], th = x[o + 6], f1 = x[o + 7], f2 = x[o + 8]
        cdef double z = x[o + 9], dr = x[o + 10]
        cdef double S = self.cp[k, 8], wf = self.cp[k, 21], vr = self.cp[k, 12]
        cdef double p_w = K * (va * ig0 + vb * ig1)
        cdef double p_pu = p_w / S
        cdef double v_mag = hypot(va, vb)
        cdef double mu, err, u, dz = 0.0, df1 = 0.0, df2 = 0.0, ddr = 0.0, omega, ac
        cdef double p_r = self.cp[k, 11], pf, vf, u0, u1, c, s, d, q, cr, sr, rad
        cdef double ma, mb, i_x, i_ref, lim, i_cmd, vdcr = self.cp[k, 7]
        cdef int strat = self.ci[k, 0]
        if self.cp[k, 16] >= 0.0:
            mu = self.cp[k, 16]
        else:
            err = (vr - v_mag) / vr
            u = self.cp[k, 14] * err + self.cp[k, 15] * z
            mu = clamp(u, 0.0, 1.0)
            if (u >= 1.0 and err > 0.0) or (u <= 0.0 and err < 0.0):
                dz = 0.0
            else:
                dz = err
        c = cos(th)
        s = sin(th)
        ma = mu * c
        mb = mu * s
        i_x = K * (ma * isa + mb * isb)
        if strat == 0:
            pf = p_pu if wf == 0.0 else f1
            omega = self.cp[k, 10] + self.cp[k, 17] * (p_r - pf)
            if wf != 0.0:
                df1 = wf * (p_pu - f1)
        elif strat == 1:
            vf = v_dc if wf == 0.0 else f1
            omega = self.cp[k, 18] * vf
            if wf != 0.0:
                df1 = wf * (v_dc - f1)
        else:
            if self.ci[k, 1]:
                u0 = va / vr
                u1 = vb / vr
                if self.ci[k, 2]:
                    if wf != 0.0:
                        df1 = wf * (u0 - f1)
                        df2 = wf * (u1 - f2)
                        u0 = f1
                        u1 = f2
                    d = c * u0 + s * u1
                    q = -s * u0 + c * u1
                else:
                    d = c * u0 + s * u1
                    q = -s * u0 + c * u1
                    if wf != 0.0:
                        df1 = wf * (d - f1)
                        df2 = wf * (q - f2)
                        d = f1
                        q = f2
                cr = cos(dr)
                sr = sin(dr)
                rad = 2.0 * (1.0 + d * cr - q * sr)
                if rad < RADICAND_FLOOR:
                    rad = RADICAND_FLOOR
                ac = (sr * d + q * cr) / sqrt(rad)
            else:
                ac = -sin(0.5 * wrap(th - atan2(vb, va) - dr))
            omega = self.cp[k, 10] + self.cp[k, 19] * (v_dc - vdcr) + self.cp[k, 20] * ac
            if self.ci[k, 4]:
                p_r = self.cp[k, 24] + self.cp[k, 23] * (omega - self.cp[k, 10])
                ddr = self.cp[k, 22] * (p_r - p_pu)
        i_ref = self.cp[k, 13] * (vdcr - v_dc)
        if self.ci[k, 3]:
            i_ref = i_ref + p_r * S / vdcr + (self.cp[k, 0] * v_dc + (v_dc * i_x - p_w) / vdcr)
        lim = self.cp[k, 6]
        i_cmd = clamp(i_ref, -lim, lim)
        dx[o] = (i_cmd - i_dc) / self.cp[k, 5]
        dx[o + 1] = (i_dc - self.cp[k, 0] * v_dc - i_x) / self.cp[k, 1]
        dx[o + 2] = (ma * v_dc - self.cp[k, 2] * isa - va) / self.cp[k, 3]
        dx[o + 3] = (mb * v_dc - self.cp[k, 2] * isb - vb) / self.cp[k, 3]
        dx[o + 4] = (isa - ig0) / self.cp[k, 4]
        dx[o + 5] = (isb - ig1) / self.cp[k, 4]
        dx[o + 6] = omega
        dx[o + 7] = df1
        dx[o + 8] = df2
        dx[o + 9] = dz
        dx[o + 10] = ddr
        if want:
            out[j, k, 0] = omega
            out[j, k, 1] = p_pu
            out[j, k, 2] = mu
            out[j, k, 3] = i_x
            out[j, k, 4] = v_dc * i_x
            out[j, k, 5] = K * v_dc * (ma * isa + mb * isb)
            out[j, k, 6] = i_ref
            out[j, k, 7] = v_mag
            out[j, k, 8] = p_r

    cdef void _mach(self, int k, double[::1] x, double[::1] dx, double[:, :, ::1] out, int j, bint want) nogil:
        cdef int o = self.mi[k, 1]
        cdef int b = self.mi[k, 0]
        cdef double sg = self.mi[k, 3]
        cdef double ih0 = sg * x[self.net_off + 2 * b], ih1 = sg * x[self.net_off + 2 * b + 1]
        cdef double dih0 = sg * dx[self.net_off + 2 * b], dih1 = sg * dx[self.net_off + 2 * b + 1]
        cdef double th = x[o], w = x[o + 1], pm = x[o + 2], eq = x[o + 3], ef = x[o + 4]
        cdef double pw = x[o + 5], pl = x[o + 6]
        cdef double H = self.mp[k, 0], Dm = self.mp[k, 1], dp = self.mp[k, 2], tg = self.mp[k, 3]
        cdef double wb = self.mp[k, 4], Vb = self.mp[k, 18], Sb = self.mp[k, 17]
        cdef double Ib = Sb / (K * Vb)
        cdef double c = cos(th), s = sin(th)
        cdef double e0 = Vb * eq * c, e1 = Vb * eq * s
        cdef double vt0 = (e0 - self.mp[k, 19] * ih0 - self.mp[k, 20] * dih0) / Vb
        cdef double vt1 = (e1 - self.mp[k, 19] * ih1 - self.mp[k, 20] * dih1) / Vb
        cdef double i0 = ih0 / Ib, i1 = ih1 / Ib
        cdef double p_e = eq * (c * i0 + s * i1)
        cdef double wn = w / wb
        cdef double i_d = i0 * s - i1 * c
        cdef double v_pss = 0.0, uin, yw, dw = 0.0, dl = 0.0
        cdef double vt = hypot(vt0, vt1)
        if self.mp[k, 12] != 0.0:
            uin = self.mp[k, 16] * (wn - 1.0)
            yw = uin - pw
            v_pss = pl + (self.mp[k, 14] / self.mp[k, 15]) * (yw - pl)
            dw = yw / self.mp[k, 13]
            dl = (yw - pl) / self.mp[k, 15]
        dx[o] = w
        dx[o + 1] = wb * (pm - p_e - Dm * (wn - 1.0)) / (2.0 * H)
        dx[o + 2] = (self.mp[k, 5] + (1.0 - wn) / dp - pm) / tg
        dx[o + 3] = (ef - eq - (self.mp[k, 6] - self.mp[k, 7]) * i_d) / self.mp[k, 8]
        dx[o + 4] = (self.mp[k, 9] * (self.mp[k, 11] - vt + v_pss) - ef) / self.mp[k, 10]
        dx[o + 5] = dw
        dx[o + 6] = dl
        if want:
            out[j, self.n_conv + k, 0] = w
            out[j, self.n_conv + k, 1] = p_e
            out[j, self.n_conv + k, 2] = vt
            out[j, self.n_conv + k, 3] = ef
            out[j, self.n_conv + k, 4] = pm

    def rhs(self, x):
        """Derivative at ``x`` (returns a new array)."""
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        dx = np.zeros(self.n)
        cdef double[::1] dv = dx
        cdef double[:, :, ::1] dummy = np.zeros((1, 1, 1))
        self._rhs(xv, dv, dummy, 0, False)
        return dx

    def outputs(self, samples):
        """Device output signals for each row of ``samples``: (n_samples, n_units, 9)."""
        cdef double[:, ::1] xs = np.ascontiguousarray(samples, dtype=np.float64).reshape(-1, self.n)
        cdef int m = xs.shape[0], j
        res = np.zeros((m, self.n_conv + self.n_mach, 9))
        cdef double[:, :, ::1] rv = res
        cdef double[::1] dx = self.tmp
        for j in range(m):
            self._rhs(xs[j], dx, rv, j, True)
        return res

    cdef int _finite(self, double[::1] v) nogil:
        cdef int i
        for i in range(self.n):
            if not isfinite(v[i]):
                return i
        return -1

    def integrate(self, x0, double t0, double h, long n_steps, long record_every):
        """RK4 from ``x0``; returns (times, samples, fail_time, fail_index).

        On a non-finite stage derivative integration stops; ``fail_index`` is
        then the offending state index (else -1) and the samples are truncated
        to what was recorded before.
        """
        cdef double[::1] x = np.array(x0, dtype=np.float64)
        cdef long n_rec = n_steps // record_every + 1
        if n_steps % record_every:
            n_rec += 1
        samples = np.empty((n_rec, self.n))
        times = np.empty(n_rec)
        cdef double[:, ::1] sv = samples
        cdef double[::1] tv = times
        cdef double[:, :, ::1] dummy = np.zeros((1, 1, 1))
        cdef double[::1] k1 = self.k1, k2 = self.k2, k3 = self.k3, k4 = self.k4, tmp = self.tmp
        cdef long step, jrec = 0
        cdef int i, bad = -1, n = self.n
        cdef double t, hh = 0.5 * h, fail_t = 0.0
        with nogil:
            for step in range(n_steps + 1):
                if step % record_every == 0 or step == n_steps:
                    for i in range(n):
                        sv[jrec, i] = x[i]
                    tv[jrec] = t0 + step * h
                    jrec += 1
                if step == n_steps:
                    break
                t = t0 + step * h
                self._rhs(x, k1, dummy, 0, False)
                bad = self._finite(k1)
                if bad >= 0:
                    fail_t = t
                    break
                for i in range(n):
                    tmp[i] = x[i] + hh * k1[i]
                self._rhs(tmp, k2, dummy, 0, False)
                bad = self._finite(k2)
                if bad >= 0:
                    fail_t = t + hh
                    break
                for i in range(n):
                    tmp[i] = x[i] + hh * k2[i]
                self._rhs(tmp, k3, dummy, 0, False)
                bad = self._finite(k3)
                if bad >= 0:
                    fail_t = t + hh
                    break
                for i in range(n):
                    tmp[i] = x[i] + h * k3[i]
                self._rhs(tmp, k4, dummy, 0, False)
                bad = self._finite(k4)
                if bad >= 0:
                    fail_t = t + h
                    break
                for i in range(n):
                    x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return times[:jrec], samples[:jrec], fail_t, bad
