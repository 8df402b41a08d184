"""Pure numpy fallback for the compiled sweeps in ``_ckernels``.

Same contract, same sweep order and the same status codes; only the
floating-point summation order of the inner products may differ.
"""

import numpy as np

BACKEND = "python"


def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _kkt(c, pen, x, grad):
    resid = c - grad
    viol = np.where(
        x == 0.0,
        np.maximum(np.abs(resid) - pen, 0.0),
        np.abs(resid - pen * np.sign(x)),
    )
    return float(viol.max()) if viol.size else 0.0


def cd_gram(G, c, pen, a, x, grad, tol, max_sweeps, cap):
    p = G.shape[0]
    diag = a * np.diagonal(G)
    sweep = 0
    kkt = 0.0
    while sweep < max_sweeps:
        sweep += 1
        for j in range(p):
            d = diag[j]
            if d <= 0.0:
                if abs(c[j]) > pen[j]:
                    return sweep, kkt, 3
                x[j] = 0.0
                continue
            xj = x[j]
            new = _soft(c[j] - grad[j] + d * xj, pen[j]) / d
            delta = new - xj
            if delta != 0.0:
                grad += (a * delta) * G[j]
                x[j] = new
        kkt = _kkt(c, pen, x, grad)
        if kkt <= tol:
            return sweep, kkt, 0
        if np.abs(x).sum() > cap:
            return sweep, kkt, 2
    return sweep, kkt, 1


def cd_design(X, colsq, c, pen, a, x, r, tol, max_sweeps, cap):
    n, p = X.shape
    sweep = 0
    kkt = 0.0
    while sweep < max_sweeps:
        sweep += 1
        move = 0.0
        for j in range(p):
            d = a * colsq[j]
            if d <= 0.0:
                if abs(c[j]) > pen[j]:
                    return sweep, kkt, 3
                x[j] = 0.0
                continue
            col = X[:, j]
            xj = x[j]
            g = a * float(col @ r) / n
            new = _soft(c[j] - g + d * xj, pen[j]) / d
            delta = new - xj
            if delta != 0.0:
                r += delta * col
                x[j] = new
                move = max(move, abs(delta) * d)
        if move <= tol:
            kkt = _kkt(c, pen, x, a * (X.T @ r) / n)
            if kkt <= tol:
                return sweep, kkt, 0
        else:
            kkt = move
        if np.abs(x).sum() > cap:
            return sweep, kkt, 2
    return sweep, kkt, 1
