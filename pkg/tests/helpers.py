"""Shared test utilities: central finite differences and probe selection."""

import numpy as np

FD_STEP = 1e-5
REL_TOL = 1e-4
# below this magnitude a gradient is compared on an absolute scale
GRAD_FLOOR = 1e-6


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)


def probe_errors(f, arrays, grads, n_probes, rng, h=FD_STEP):
    """Relative errors at ``n_probes`` random coordinates.

    ``f`` evaluates the scalar loss from ``arrays`` (a dict of float arrays
    that is perturbed in place and restored). Probes are spread over the
    entries in proportion to their size.
    """
    names = sorted(arrays)
    sizes = np.array([arrays[k].size for k in names], dtype=np.float64)
    picks = rng.choice(len(names), size=n_probes, p=sizes / sizes.sum())
    errors = []
    for i in picks:
        name = names[i]
        a = arrays[name]
        flat = int(rng.integers(a.size))
        idx = np.unravel_index(flat, a.shape)
        old = a[idx]
        a[idx] = old + h
        up = f(arrays)
        a[idx] = old - h
        down = f(arrays)
        a[idx] = old
        numeric = (up - down) / (2 * h)
        g = grads.get(name)
        analytic = 0.0 if g is None else float(g[idx])
        errors.append((relative_error(analytic, numeric), name, idx, analytic, numeric))
    return errors


def worst(errors):
    return max(errors, key=lambda e: e[0])
