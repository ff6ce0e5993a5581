"""Monte-Carlo oracle for noisy multi-view triangulation error.

Independent of the package's DLT path: points are recovered by minimizing
pixel reprojection error with scipy's least-squares solver. Run as a script
to regenerate the frozen bounds used in the tests.
"""

import numpy as np
from scipy.optimize import least_squares


def ring_cameras(n, radius=4.0, height=2.5, f=900.0, size=(1280, 720), seed=0):
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(n):
        a = 2 * np.pi * i / n + rng.uniform(-0.1, 0.1)
        pos = np.array([radius * np.cos(a), radius * np.sin(a), height + rng.uniform(-0.3, 0.3)])
        fwd = -pos + np.array([0, 0, 1.0])
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0, 0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        K = np.array([[f, 0, (size[0] - 1) / 2], [0, f, (size[1] - 1) / 2], [0, 0, 1]])
        cams.append((K, R, -R @ pos))
    return cams


def _proj(cam, X):
    K, R, t = cam
    x = K @ (R @ X + t)
    return x[:2] / x[2]


def mc_mean_error(n_cams, sigma, trials, seed=1):
    rng = np.random.default_rng(seed)
    cams = ring_cameras(n_cams)
    errs = np.empty(trials)
    for k in range(trials):
        X = rng.uniform([-1, -1, 0.5], [1, 1, 1.8])
        obs = [_proj(c, X) + rng.normal(0, sigma, 2) for c in cams]

        def resid(P):
            return np.concatenate([_proj(c, P) - o for c, o in zip(cams, obs)])

        sol = least_squares(resid, X + rng.normal(0, 0.05, 3))
        errs[k] = np.linalg.norm(sol.x - X)
    return errs.mean(), errs.std() / np.sqrt(trials)


if __name__ == "__main__":
    for n in (15, 6):
        m, se = mc_mean_error(n, 2.0, 10_000)
        print(f"{n} cams sigma=2px: mean {m*1000:.3f} mm  (s.e. {se*1000:.3f} mm)")


def ml_triangulate(cams, obs, x0):
    """Reprojection-error minimizer over (K, R, t) cameras and pixel observations."""

    def resid(P):
        return np.concatenate([_proj(c, P) - o for c, o in zip(cams, obs)])

    return least_squares(resid, x0).x


def mc_session_error(cams, points, targets, sizes, sigma, seed=1):
    """Mean position (m) and direction (deg) error of ML triangulation.

    ``points`` are true hand positions, ``targets`` the pointed markers;
    each point is observed by the cameras that see it inside the image.
    """
    rng = np.random.default_rng(seed)
    pos_err, ang_err = [], []
    for X, M in zip(points, targets):
        use = []
        for c, (w, h) in zip(cams, sizes):
            K, R, t = c
            if (R @ X + t)[2] <= 0:
                continue
            u, v = _proj(c, X)
            if 0 <= u <= w - 1 and 0 <= v <= h - 1:
                use.append(c)
        if len(use) < 2:
            continue
        obs = [_proj(c, X) + rng.normal(0, sigma, 2) for c in use]
        Y = ml_triangulate(use, obs, X + rng.normal(0, 0.05, 3))
        pos_err.append(np.linalg.norm(Y - X))
        a = (M - X) / np.linalg.norm(M - X)
        b = (M - Y) / np.linalg.norm(M - Y)
        ang_err.append(np.degrees(np.arccos(np.clip(a @ b, -1, 1))))
    return float(np.mean(pos_err)), float(np.mean(ang_err)), len(pos_err)
