"""Shared test helpers: finite-difference oracles and tiny fixtures."""

from __future__ import annotations

import numpy as np

from speechlab.tensor import Tensor, gradients


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_gradcheck(make_loss, params: dict[str, Tensor], h: float = 1e-4,
                 entries_per_tensor: int | None = 4, seed: int = 0,
                 tol: float = 1e-4, atol: float = 1e-8) -> float:
    """Compare reverse-mode gradients of make_loss() against central finite
    differences.

    make_loss must rebuild the forward pass from the current parameter
    values. Checks every entry when entries_per_tensor is None, otherwise a
    random sample per tensor. Entries where both sides sit below atol are
    treated as matching zeros (central differences only resolve gradients
    down to machine-eps * |loss| / h, about 1e-12). Returns the worst
    relative error seen.
    """
    loss = make_loss()
    grads = gradients(loss, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = None
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if entries_per_tensor is None or entries_per_tensor >= flat.size:
            indices = range(flat.size)
        else:
            indices = rng.choice(flat.size, size=entries_per_tensor, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            up = float(make_loss().data)
            flat[i] = orig - h
            down = float(make_loss().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            an = grads[name].reshape(-1)[i]
            if max(abs(fd), abs(an)) <= atol:
                continue
            err = rel_err(fd, an)
            if err > worst:
                worst, worst_at = err, (name, int(i), fd, an)
    assert worst <= tol, f"gradient mismatch {worst:.3e} at {worst_at}"
    return worst
