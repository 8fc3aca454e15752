"""Ridge (zero-order Tikhonov) solves in the SVD basis and L-curve corner search."""
import numpy as np


def svd_operator(H):
    U, s, Vt = np.linalg.svd(np.asarray(H, dtype=float), full_matrices=False)
    return U, s, Vt


def lambda_grid(s, n=20, span=1e-8):
    """``n`` log-spaced ridge weights between ``span * s_max**2`` and ``s_max**2``."""
    smax2 = float(s[0] ** 2) if s.size and s[0] > 0 else 1.0
    return np.logspace(np.log10(span * smax2), np.log10(smax2), n)


def ridge_solve(svd, B, lam):
    """``argmin ||H X - B||^2 + lam ||X||^2`` column by column."""
    U, s, Vt = svd
    coef = (s / (s * s + lam))[:, None] * (U.T @ B)
    return Vt.T @ coef


def ridge_curve(svd, B, lams):
    """Residual and solution Frobenius norms along ``lams``."""
    U, s, Vt = svd
    beta = U.T @ B
    outside = max(float(np.sum(B * B) - np.sum(beta * beta)), 0.0)
    rho = np.empty(len(lams))
    eta = np.empty(len(lams))
    for i, lam in enumerate(lams):
        f = (s * s / (s * s + lam))[:, None]
        rho[i] = np.sqrt(np.sum(((1 - f) * beta) ** 2) + outside)
        eta[i] = np.sqrt(np.sum((f * beta / np.where(s > 0, s, 1.0)[:, None]) ** 2))
    return rho, eta


def lcurve_corner(rho, eta, lams):
    """Grid point of maximum curvature of ``(log rho, log eta)``.

    Returns ``(index, curvature array)``. Curvature is computed with finite
    differences in ``log lam``; the end points are excluded from the argmax.
    """
    tiny = np.finfo(float).tiny
    x = np.log(np.maximum(rho, tiny))
    y = np.log(np.maximum(eta, tiny))
    t = np.log(lams)
    dx, dy = np.gradient(x, t), np.gradient(y, t)
    ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
    kappa = (dx * ddy - ddx * dy) / np.maximum((dx * dx + dy * dy) ** 1.5, tiny)
    interior = kappa[1:-1]
    if interior.size == 0 or not np.any(np.isfinite(interior)):
        return len(lams) // 2, kappa
    return 1 + int(np.nanargmax(interior)), kappa


def lcurve_lambda(H_or_svd, B, n=20, span=1e-8):
    svd = H_or_svd if isinstance(H_or_svd, tuple) else svd_operator(H_or_svd)
    lams = lambda_grid(svd[1], n, span)
    rho, eta = ridge_curve(svd, B, lams)
    i, _ = lcurve_corner(rho, eta, lams)
    return float(lams[i])
