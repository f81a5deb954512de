import numpy as np
from pcqa import PointCloud

def surface_shape(kind, n, rng):
    """Distinct synthetic surfaces, all roughly 20 units across."""
    if kind % 8 == 0:  # sphere
        v = rng.normal(0, 1, (n, 3)); v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * 10
    if kind % 8 == 1:  # cube surface
        face = rng.integers(0, 6, n)
        uv = rng.uniform(-10, 10, (n, 2)); out = np.zeros((n, 3))
        axis = face % 3; sign = np.where(face < 3, 10.0, -10.0)
        rows = np.arange(n)
        out[rows, axis] = sign
        rest = np.array([[a for a in range(3) if a != ax] for ax in axis])
        out[rows, rest[:, 0]] = uv[:, 0]; out[rows, rest[:, 1]] = uv[:, 1]
        return out
    if kind % 8 == 2:  # torus
        u, v = rng.uniform(0, 2*np.pi, n), rng.uniform(0, 2*np.pi, n)
        R, r = 7.5, 3
        return np.stack([(R + r*np.cos(v))*np.cos(u), (R + r*np.cos(v))*np.sin(u), r*np.sin(v)], 1)
    if kind % 8 == 3:  # cylinder
        u = rng.uniform(0, 2*np.pi, n); z = rng.uniform(-10, 10, n)
        return np.stack([7*np.cos(u), 7*np.sin(u), z], 1)
    if kind % 8 == 4:  # two parallel planes
        pts = rng.uniform(-10, 10, (n, 3)); pts[:, 2] = np.where(pts[:, 2] > 0, 5.0, -5.0)
        return pts
    if kind % 8 == 5:  # gaussian blob
        return rng.normal(0, 5, (n, 3))
    if kind % 8 == 6:  # helix tube
        t = rng.uniform(0, 6*np.pi, n)
        jit = rng.normal(0, 0.8, (n, 3))
        return np.stack([7*np.cos(t), 7*np.sin(t), t - 3*np.pi], 1) + jit
    u = rng.uniform(-10, 10, n)  # saddle
    v = rng.uniform(-10, 10, n)
    return np.stack([u, v, (u*u - v*v)/10], 1)

def make_cloud(kind, n, seed, sigma_pct=0.0, name=None):
    rng = np.random.default_rng(seed)
    pos = surface_shape(kind, n, rng)
    if sigma_pct > 0:
        diag = float(np.linalg.norm(pos.max(0) - pos.min(0)))
        pos = pos + rng.normal(0, sigma_pct/100 * diag, pos.shape)
    colors = rng.integers(0, 256, (n, 3)).astype(float)
    return PointCloud(pos.astype(np.float32).astype(float), colors,
                      name=name or f"shape{kind}")
