"""Pure-Python exact 1-D TV denoising, used when the compiled kernel is absent."""


def tv1d_denoise(y, weight):
    """Minimize 0.5*sum((y - x)**2) + weight*sum(|x[k+1] - x[k]|) exactly.

    Direct O(n) "taut string" style scan (Condat 2013): a segment is grown
    while the lower and upper candidate levels stay consistent with the
    residual bounds, and emitted as soon as one of them is ruled out.
    Mirrors ``_tvcore.tv1d_denoise`` line for line.
    """
    y = [float(v) for v in y]
    n = len(y)
    x = [0.0] * n
    if n == 0:
        return x
    lam = float(weight)
    mlam = -lam
    twolam = 2.0 * lam
    k = k0 = kplus = kminus = 0
    umin = lam
    umax = mlam
    vmin = y[0] - lam
    vmax = y[0] + lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while k0 <= kminus:
                    x[k0] = vmin
                    k0 += 1
                k = kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while k0 <= kplus:
                    x[k0] = vmax
                    k0 += 1
                k = kplus = k0
                vmax = y[k0]
                umax = mlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while k0 <= k:
                    x[k0] = vmin
                    k0 += 1
                return x
        umin += y[k + 1] - vmin
        if umin < mlam:
            while k0 <= kminus:
                x[k0] = vmin
                k0 += 1
            k = kminus = kplus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = mlam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            while k0 <= kplus:
                x[k0] = vmax
                k0 += 1
            k = kminus = kplus = k0
            vmax = y[k0]
            vmin = vmax - twolam
            umin = lam
            umax = mlam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= mlam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = mlam
