# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-shooting objective: RK4 rollout, stage and obstacle costs, reverse sweep.

Mirrors :mod:`penaltynav._pykernels` operation for operation.
"""

from libc.math cimport sin, cos, tan

import numpy as np

DEF MAX_STACK = 64
DEF BICYCLE = 0

BACKEND = "compiled"


cdef inline void dyn(int kind, double L, double* q, double* u, double* out) noexcept nogil:
    cdef double c = cos(q[2])
    cdef double s = sin(q[2])
    cdef double w
    if kind == BICYCLE:
        out[0] = u[0] * c
        out[1] = u[0] * s
        out[2] = u[0] / L * tan(u[1])
    else:
        w = (u[1] * c - u[0] * s) / L
        out[0] = u[0] + L * s * w
        out[1] = u[1] - L * c * w
        out[2] = w


cdef inline void dyn_vjp(int kind, double L, double* q, double* u, double* bar,
                         double* qbar_theta, double* ubar) noexcept nogil:
    # qbar_theta = (df/dtheta).bar ; ubar += (df/du)^T bar
    cdef double c = cos(q[2])
    cdef double s = sin(q[2])
    cdef double a, b, t, cd
    if kind == BICYCLE:
        t = tan(u[1])
        cd = cos(u[1])
        qbar_theta[0] = -u[0] * s * bar[0] + u[0] * c * bar[1]
        ubar[0] += c * bar[0] + s * bar[1] + t / L * bar[2]
        ubar[1] += u[0] / (L * cd * cd) * bar[2]
    else:
        a = u[0] * c + u[1] * s
        b = u[1] * c - u[0] * s
        qbar_theta[0] = (-s * a + c * b) * bar[0] + (c * a + s * b) * bar[1] - a / L * bar[2]
        ubar[0] += c * c * bar[0] + s * c * bar[1] - s / L * bar[2]
        ubar[1] += c * s * bar[0] + s * s * bar[1] + c / L * bar[2]


cdef inline void rk4(int kind, double L, double h, double* q, double* u, double* out) noexcept nogil:
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double tmp[3]
    cdef int j
    dyn(kind, L, q, u, k1)
    for j in range(3):
        tmp[j] = q[j] + 0.5 * h * k1[j]
    dyn(kind, L, tmp, u, k2)
    for j in range(3):
        tmp[j] = q[j] + 0.5 * h * k2[j]
    dyn(kind, L, tmp, u, k3)
    for j in range(3):
        tmp[j] = q[j] + h * k3[j]
    dyn(kind, L, tmp, u, k4)
    for j in range(3):
        out[j] = q[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


cdef inline void rk4_vjp(int kind, double L, double h, double* q, double* u, double* lam,
                         double* qbar, double* ubar) noexcept nogil:
    # Reverse sweep through one RK4 step.  lam is the adjoint of the step output.
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double q2[3]
    cdef double q3[3]
    cdef double q4[3]
    cdef double b1[3]
    cdef double b2[3]
    cdef double b3[3]
    cdef double b4[3]
    cdef double at
    cdef int j
    dyn(kind, L, q, u, k1)
    for j in range(3):
        q2[j] = q[j] + 0.5 * h * k1[j]
    dyn(kind, L, q2, u, k2)
    for j in range(3):
        q3[j] = q[j] + 0.5 * h * k2[j]
    dyn(kind, L, q3, u, k3)
    for j in range(3):
        q4[j] = q[j] + h * k3[j]
        b4[j] = h / 6.0 * lam[j]
        b3[j] = h / 3.0 * lam[j]
        b2[j] = h / 3.0 * lam[j]
        b1[j] = h / 6.0 * lam[j]
        qbar[j] = lam[j]
    ubar[0] = 0.0
    ubar[1] = 0.0
    dyn_vjp(kind, L, q4, u, b4, &at, ubar)
    qbar[2] += at
    b3[2] += h * at
    dyn_vjp(kind, L, q3, u, b3, &at, ubar)
    qbar[2] += at
    b2[2] += 0.5 * h * at
    dyn_vjp(kind, L, q2, u, b2, &at, ubar)
    qbar[2] += at
    b1[2] += 0.5 * h * at
    dyn_vjp(kind, L, q, u, b1, &at, ubar)
    qbar[2] += at


cdef class ProblemKernel:
    """Objective ``l(u)`` of one NMPC problem with fixed data.

    Parameters follow :class:`penaltynav._pykernels.ProblemKernel`.
    """

    cdef readonly int kind, N, n_obs
    cdef readonly double L, ts
    cdef double q0[3]
    cdef double qref[3]
    cdef double uref[2]
    cdef double Qs[9]
    cdef double QNs[9]
    cdef double R[2]
    cdef int[::1] ops
    cdef int[::1] args
    cdef int[::1] toff
    cdef int[::1] ooff
    cdef double[::1] consts
    cdef double[:, ::1] states
    cdef double[:, ::1] sgrad
    cdef double[::1] hbuf

    def __init__(self, int kind, double L, double ts, int N, q0, qref, uref, Q, R, QN, pack):
        cdef int i, j
        self.kind = kind
        self.L = L
        self.ts = ts
        self.N = N
        Qa = np.asarray(Q, dtype=np.float64)
        QNa = np.asarray(QN, dtype=np.float64)
        for i in range(3):
            self.q0[i] = q0[i]
            self.qref[i] = qref[i]
            for j in range(3):
                # gradient of e'Qe is (Q + Q')e
                self.Qs[3 * i + j] = Qa[i, j] + Qa[j, i]
                self.QNs[3 * i + j] = QNa[i, j] + QNa[j, i]
        for i in range(2):
            self.uref[i] = uref[i]
            self.R[i] = R[i]
        self.ops = np.ascontiguousarray(pack.ops, dtype=np.int32)
        self.args = np.ascontiguousarray(pack.args, dtype=np.int32)
        self.consts = np.ascontiguousarray(pack.consts, dtype=np.float64)
        self.toff = np.ascontiguousarray(pack.tape_offsets, dtype=np.int32)
        self.ooff = np.ascontiguousarray(pack.obs_offsets, dtype=np.int32)
        self.n_obs = len(pack.obs_offsets) - 1
        max_m = 1
        for i in range(self.n_obs):
            max_m = max(max_m, self.ooff[i + 1] - self.ooff[i])
        self.hbuf = np.zeros(max_m)
        self.states = np.zeros((N + 1, 3))
        self.sgrad = np.zeros((N + 1, 3))

    cdef double tape(self, int t, double x, double y) noexcept nogil:
        cdef double stack[MAX_STACK]
        cdef int sp = 0
        cdef int pc, op, n, j
        cdef double a, b
        for pc in range(self.toff[t], self.toff[t + 1]):
            op = self.ops[pc]
            if op == 0:
                stack[sp] = self.consts[self.args[pc]]
                sp += 1
            elif op == 1:
                stack[sp] = x
                sp += 1
            elif op == 2:
                stack[sp] = y
                sp += 1
            elif op == 3:
                sp -= 1
                stack[sp - 1] = stack[sp - 1] + stack[sp]
            elif op == 4:
                sp -= 1
                stack[sp - 1] = stack[sp - 1] - stack[sp]
            elif op == 5:
                sp -= 1
                stack[sp - 1] = stack[sp - 1] * stack[sp]
            elif op == 6:
                stack[sp - 1] = -stack[sp - 1]
            elif op == 7:
                n = self.args[pc]
                a = stack[sp - 1]
                b = 1.0
                for j in range(n):
                    b = b * a
                stack[sp - 1] = b
            elif op == 8:
                stack[sp - 1] = sin(stack[sp - 1])
            else:
                stack[sp - 1] = cos(stack[sp - 1])
        return stack[0]

    cdef void forward(self, double[::1] u) noexcept nogil:
        cdef int k, j
        for j in range(3):
            self.states[0, j] = self.q0[j]
        for k in range(self.N):
            rk4(self.kind, self.L, self.ts, &self.states[k, 0], &u[2 * k], &self.states[k + 1, 0])

    cdef double costs(self, double[:, ::1] mu, double[::1] u, bint want_grad) noexcept nogil:
        cdef int k, i, j, c, c0, c1
        cdef double value = 0.0, tracking, e0, e1, e2, d0, d1
        cdef double x, y, psi, h, gx, gy, mik, others
        cdef double* Qm
        for k in range(self.N + 1):
            e0 = self.states[k, 0] - self.qref[0]
            e1 = self.states[k, 1] - self.qref[1]
            e2 = self.states[k, 2] - self.qref[2]
            if k < self.N:
                Qm = &self.Qs[0]
            else:
                Qm = &self.QNs[0]
            # 0.5 * e'(Q + Q')e == e'Qe
            tracking = 0.5 * (e0 * (Qm[0] * e0 + Qm[1] * e1 + Qm[2] * e2)
                              + e1 * (Qm[3] * e0 + Qm[4] * e1 + Qm[5] * e2)
                              + e2 * (Qm[6] * e0 + Qm[7] * e1 + Qm[8] * e2))
            value += tracking
            if k < self.N:
                d0 = u[2 * k] - self.uref[0]
                d1 = u[2 * k + 1] - self.uref[1]
                value += self.R[0] * d0 * d0 + self.R[1] * d1 * d1
            if want_grad:
                self.sgrad[k, 0] = Qm[0] * e0 + Qm[1] * e1 + Qm[2] * e2
                self.sgrad[k, 1] = Qm[3] * e0 + Qm[4] * e1 + Qm[5] * e2
                self.sgrad[k, 2] = Qm[6] * e0 + Qm[7] * e1 + Qm[8] * e2
        for k in range(1, self.N + 1):
            x = self.states[k, 0]
            y = self.states[k, 1]
            for i in range(self.n_obs):
                mik = mu[i, k - 1]
                if mik == 0.0:
                    continue
                c0 = self.ooff[i]
                c1 = self.ooff[i + 1]
                psi = 1.0
                for c in range(c0, c1):
                    h = self.tape(3 * c, x, y)
                    if h <= 0.0:
                        psi = 0.0
                        break
                    self.hbuf[c - c0] = h
                    psi = psi * h
                if psi == 0.0:
                    continue
                value += 0.5 * mik * psi * psi
                if want_grad:
                    gx = 0.0
                    gy = 0.0
                    for c in range(c0, c1):
                        others = psi / self.hbuf[c - c0]
                        gx += others * self.tape(3 * c + 1, x, y)
                        gy += others * self.tape(3 * c + 2, x, y)
                    self.sgrad[k, 0] += mik * psi * gx
                    self.sgrad[k, 1] += mik * psi * gy
        return value

    def value(self, double[:, ::1] mu, double[::1] u):
        """Objective value; may be non-finite."""
        self.check(mu, u)
        cdef double v
        with nogil:
            self.forward(u)
            v = self.costs(mu, u, False)
        return v

    def value_grad(self, double[:, ::1] mu, double[::1] u, double[::1] grad):
        """Objective value, writing the gradient into ``grad``."""
        self.check(mu, u)
        if grad.shape[0] != 2 * self.N:
            raise ValueError("gradient buffer has wrong length")
        cdef double v
        cdef double lam[3]
        cdef double qbar[3]
        cdef double ubar[2]
        cdef int k, j
        with nogil:
            self.forward(u)
            v = self.costs(mu, u, True)
            for j in range(3):
                lam[j] = self.sgrad[self.N, j]
            for k in range(self.N - 1, -1, -1):
                rk4_vjp(self.kind, self.L, self.ts, &self.states[k, 0], &u[2 * k], lam, qbar, ubar)
                grad[2 * k] = 2.0 * self.R[0] * (u[2 * k] - self.uref[0]) + ubar[0]
                grad[2 * k + 1] = 2.0 * self.R[1] * (u[2 * k + 1] - self.uref[1]) + ubar[1]
                for j in range(3):
                    lam[j] = self.sgrad[k, j] + qbar[j]
        return v

    cdef check(self, double[:, ::1] mu, double[::1] u):
        if u.shape[0] != 2 * self.N:
            raise ValueError(f"expected {2 * self.N} control values, got {u.shape[0]}")
        if mu.shape[0] != self.n_obs or mu.shape[1] != self.N:
            raise ValueError(f"penalty matrix must have shape ({self.n_obs}, {self.N})")

    def rollout(self, double[::1] u):
        if u.shape[0] != 2 * self.N:
            raise ValueError(f"expected {2 * self.N} control values, got {u.shape[0]}")
        with nogil:
            self.forward(u)
        return np.array(self.states, copy=True)

    def stage_psi(self, double[::1] u):
        """Obstacle functions at predicted stages 1..N, shape ``(n_obs, N)``."""
        states = self.rollout(u)
        return self.psi_at(states[1:, 0].copy(), states[1:, 1].copy())

    def psi_at(self, double[::1] xs, double[::1] ys):
        cdef Py_ssize_t n = xs.shape[0], p
        out = np.zeros((self.n_obs, n))
        cdef double[:, ::1] o = out
        cdef int i, c
        cdef double psi, h
        with nogil:
            for p in range(n):
                for i in range(self.n_obs):
                    psi = 1.0
                    for c in range(self.ooff[i], self.ooff[i + 1]):
                        h = self.tape(3 * c, xs[p], ys[p])
                        if h <= 0.0:
                            psi = 0.0
                            break
                        psi = psi * h
                    o[i, p] = psi
        return out
