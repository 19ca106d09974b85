"""Independent reference computations used by the tests.

Nothing here calls into the code paths it is used to check.
"""

import numpy as np


def tv_dual_projected_gradient(signals, lams, iters=60000, tol=1e-15):
    """Solve TV denoising for many short signals through the dual problem.

    For weight t = 1/lam the minimizer is u = f - D^T w where w solves
    min 0.5*||f - D^T w||^2 subject to |w_i| <= t, D the forward
    difference.  Plain projected gradient with step 1/4 (||D D^T|| <= 4),
    batched over signals of unequal length with a mask.
    """
    n_max = max(len(s) for s in signals)
    b = len(signals)
    f = np.zeros((b, n_max))
    mask = np.zeros((b, max(n_max - 1, 1)), dtype=bool)
    for i, s in enumerate(signals):
        f[i, :len(s)] = s
        mask[i, :len(s) - 1] = True
    t = (1.0 / np.asarray(lams, dtype=np.float64))[:, None]
    w = np.zeros(mask.shape)

    def primal(w):
        dtw = np.zeros_like(f)
        dtw[:, :-1] -= w[:, :n_max - 1]
        dtw[:, 1:] += w[:, :n_max - 1]
        return f - dtw

    for _ in range(iters):
        u = primal(w)
        du = np.zeros_like(w)
        du[:, :n_max - 1] = u[:, 1:] - u[:, :-1]
        w_new = np.clip(w + 0.25 * du * mask, -t, t)
        step = np.max(np.abs(w_new - w))
        w = w_new
        if step < tol:
            break
    u = primal(w)
    return [u[i, :len(s)].copy() for i, s in enumerate(signals)]


def central_difference_grad(fun, x, h=1e-5):
    """Central finite-difference gradient of scalar ``fun`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = fun()
        x[idx] = old - h
        fm = fun()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def hand_correlate_same(x, k):
    """Zero-padded 'same' cross-correlation by explicit loops; extra pad on the right."""
    n, m = len(x), len(k)
    left = (m - 1) // 2
    out = []
    for i in range(n):
        acc = 0.0
        for j in range(m):
            p = i + j - left
            if 0 <= p < n:
                acc += k[j] * x[p]
        out.append(acc)
    return out
