"""Pure-Python objective kernel, used when the compiled extension is unavailable.

Same interface and arithmetic as ``_kernels.pyx``; obstacle programs are
vectorized over the horizon with numpy, the rollout and reverse sweep are
scalar loops.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_BICYCLE = 0


def _dyn(kind, L, q0, q1, q2, u0, u1):
    c, s = math.cos(q2), math.sin(q2)
    if kind == _BICYCLE:
        return u0 * c, u0 * s, u0 / L * math.tan(u1)
    w = (u1 * c - u0 * s) / L
    return u0 + L * s * w, u1 - L * c * w, w


def _dyn_vjp(kind, L, q2, u0, u1, b0, b1, b2):
    """Return ``(theta_bar, u0_bar, u1_bar)`` for cotangent ``b``."""
    c, s = math.cos(q2), math.sin(q2)
    if kind == _BICYCLE:
        cd = math.cos(u1)
        return (
            -u0 * s * b0 + u0 * c * b1,
            c * b0 + s * b1 + math.tan(u1) / L * b2,
            u0 / (L * cd * cd) * b2,
        )
    a = u0 * c + u1 * s
    b = u1 * c - u0 * s
    return (
        (-s * a + c * b) * b0 + (c * a + s * b) * b1 - a / L * b2,
        c * c * b0 + s * c * b1 - s / L * b2,
        c * s * b0 + s * s * b1 + c / L * b2,
    )


def _rk4(kind, L, h, q, u0, u1):
    x, y, t = q
    k1 = _dyn(kind, L, x, y, t, u0, u1)
    k2 = _dyn(kind, L, x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], t + 0.5 * h * k1[2], u0, u1)
    k3 = _dyn(kind, L, x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], t + 0.5 * h * k2[2], u0, u1)
    k4 = _dyn(kind, L, x + h * k3[0], y + h * k3[1], t + h * k3[2], u0, u1)
    return tuple(
        q[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in range(3)
    )


def _rk4_vjp(kind, L, h, q, u0, u1, lam):
    x, y, t = q
    k1 = _dyn(kind, L, x, y, t, u0, u1)
    t2 = t + 0.5 * h * k1[2]
    k2 = _dyn(kind, L, x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], t2, u0, u1)
    t3 = t + 0.5 * h * k2[2]
    k3 = _dyn(kind, L, x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], t3, u0, u1)
    t4 = t + h * k3[2]
    b4 = [h / 6.0 * v for v in lam]
    b3 = [h / 3.0 * v for v in lam]
    b2 = [h / 3.0 * v for v in lam]
    b1 = [h / 6.0 * v for v in lam]
    qbar = list(lam)
    at, ua, ub = _dyn_vjp(kind, L, t4, u0, u1, *b4)
    qbar[2] += at
    b3[2] += h * at
    at, da, db = _dyn_vjp(kind, L, t3, u0, u1, *b3)
    ua += da
    ub += db
    qbar[2] += at
    b2[2] += 0.5 * h * at
    at, da, db = _dyn_vjp(kind, L, t2, u0, u1, *b2)
    ua += da
    ub += db
    qbar[2] += at
    b1[2] += 0.5 * h * at
    at, da, db = _dyn_vjp(kind, L, t, u0, u1, *b1)
    ua += da
    ub += db
    qbar[2] += at
    return qbar, ua, ub


class ProblemKernel:
    """Objective ``l(u)`` of one NMPC problem with fixed data.

    Parameters
    ----------
    kind, L, ts, N
        Vehicle model code (0 bicycle, 1 trailer), its length, sampling time
        and horizon.
    q0, qref, uref
        Initial state and tracking references.
    Q, R, QN
        Stage state weight (3x3), input weight diagonal (2,), terminal weight.
    pack
        :class:`penaltynav._pack.ObstaclePack` of the (enlarged) obstacles.
    """

    def __init__(self, kind, L, ts, N, q0, qref, uref, Q, R, QN, pack):
        self.kind = int(kind)
        self.L = float(L)
        self.ts = float(ts)
        self.N = int(N)
        self.q0 = tuple(float(v) for v in q0)
        self.qref = np.asarray(qref, dtype=float)
        self.uref = np.asarray(uref, dtype=float)
        Q = np.asarray(Q, dtype=float)
        QN = np.asarray(QN, dtype=float)
        self.Qs = Q + Q.T
        self.QNs = QN + QN.T
        self.R = np.asarray(R, dtype=float)
        self.pack = pack
        self.n_obs = pack.n_obstacles
        self._ops = pack.ops.tolist()
        self._args = pack.args.tolist()
        self._consts = pack.consts.tolist()
        self._toff = pack.tape_offsets.tolist()
        self._ooff = pack.obs_offsets.tolist()

    def _tape(self, t, xs, ys):
        stack = []
        ops, args, consts = self._ops, self._args, self._consts
        for pc in range(self._toff[t], self._toff[t + 1]):
            op = ops[pc]
            if op == 0:
                stack.append(np.full_like(xs, consts[args[pc]]))
            elif op == 1:
                stack.append(xs)
            elif op == 2:
                stack.append(ys)
            elif op == 3:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif op == 4:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif op == 5:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif op == 6:
                stack[-1] = -stack[-1]
            elif op == 7:
                a = stack[-1]
                out = np.ones_like(a)
                for _ in range(args[pc]):
                    out = out * a
                stack[-1] = out
            elif op == 8:
                stack[-1] = np.sin(stack[-1])
            else:
                stack[-1] = np.cos(stack[-1])
        return stack[0]

    def _check(self, mu, u):
        if u.shape[0] != 2 * self.N:
            raise ValueError(f"expected {2 * self.N} control values, got {u.shape[0]}")
        if mu.shape != (self.n_obs, self.N):
            raise ValueError(f"penalty matrix must have shape ({self.n_obs}, {self.N})")

    def _forward(self, u):
        states = [self.q0]
        q = self.q0
        for k in range(self.N):
            q = _rk4(self.kind, self.L, self.ts, q, u[2 * k], u[2 * k + 1])
            states.append(q)
        return np.array(states)

    def _costs(self, mu, u, states, want_grad):
        E = states - self.qref
        Ek = E[: self.N]
        sg = Ek @ self.Qs.T
        value = 0.0
        dU = u.reshape(-1, 2) - self.uref
        for k in range(self.N):
            value += 0.5 * float(Ek[k] @ sg[k])
            value += self.R[0] * dU[k, 0] ** 2 + self.R[1] * dU[k, 1] ** 2
        sgN = self.QNs @ E[self.N]
        value += 0.5 * float(E[self.N] @ sgN)
        sgrad = np.vstack([sg, sgN]) if want_grad else None
        if self.n_obs:
            xs = np.ascontiguousarray(states[1:, 0])
            ys = np.ascontiguousarray(states[1:, 1])
            for i in range(self.n_obs):
                c0, c1 = self._ooff[i], self._ooff[i + 1]
                H = np.array([self._tape(3 * c, xs, ys) for c in range(c0, c1)])
                active = np.all(H > 0.0, axis=0) & (mu[i] != 0.0)
                if not active.any():
                    continue
                psi = np.where(active, np.prod(np.where(active, H, 1.0), axis=0), 0.0)
                value += float(np.sum(0.5 * mu[i] * psi * psi))
                if want_grad:
                    gx = np.zeros(self.N)
                    gy = np.zeros(self.N)
                    Hs = np.where(active, H, 1.0)
                    for c in range(c0, c1):
                        others = psi / Hs[c - c0]
                        gx += others * self._tape(3 * c + 1, xs, ys)
                        gy += others * self._tape(3 * c + 2, xs, ys)
                    scale = np.where(active, mu[i] * psi, 0.0)
                    sgrad[1:, 0] += scale * gx
                    sgrad[1:, 1] += scale * gy
        return value, sgrad

    def value(self, mu, u):
        """Objective value; may be non-finite."""
        u = np.asarray(u, dtype=float)
        mu = np.asarray(mu, dtype=float)
        self._check(mu, u)
        with np.errstate(all="ignore"):
            states = self._forward(u)
            return self._costs(mu, u, states, False)[0]

    def value_grad(self, mu, u, grad):
        """Objective value, writing the gradient into ``grad``."""
        u = np.asarray(u, dtype=float)
        mu = np.asarray(mu, dtype=float)
        self._check(mu, u)
        if grad.shape[0] != 2 * self.N:
            raise ValueError("gradient buffer has wrong length")
        with np.errstate(all="ignore"):
            states = self._forward(u)
            value, sgrad = self._costs(mu, u, states, True)
            lam = sgrad[self.N].tolist()
            st = states.tolist()
            ul = u.tolist()
            r0, r1 = 2.0 * self.R[0], 2.0 * self.R[1]
            for k in range(self.N - 1, -1, -1):
                u0, u1 = ul[2 * k], ul[2 * k + 1]
                qbar, ua, ub = _rk4_vjp(self.kind, self.L, self.ts, st[k], u0, u1, lam)
                grad[2 * k] = r0 * (u0 - self.uref[0]) + ua
                grad[2 * k + 1] = r1 * (u1 - self.uref[1]) + ub
                lam = [sgrad[k, j] + qbar[j] for j in range(3)]
        return value

    def rollout(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != 2 * self.N:
            raise ValueError(f"expected {2 * self.N} control values, got {u.shape[0]}")
        return self._forward(u)

    def stage_psi(self, u):
        """Obstacle functions at predicted stages 1..N, shape ``(n_obs, N)``."""
        states = self.rollout(u)
        return self.psi_at(states[1:, 0].copy(), states[1:, 1].copy())

    def psi_at(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        out = np.zeros((self.n_obs, xs.shape[0]))
        for i in range(self.n_obs):
            psi = np.ones_like(xs)
            for c in range(self._ooff[i], self._ooff[i + 1]):
                psi = psi * np.maximum(self._tape(3 * c, xs, ys), 0.0)
            out[i] = psi
        return out
