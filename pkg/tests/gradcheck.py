"""Central finite-difference gradient checker shared by the unit and acceptance tests."""

import numpy as np

from cryolocal.mlp import Activation, MlpArch, init_params, mlp_backward

H = 1e-4
# gradients below this magnitude are compared absolutely (round-off floor of the difference quotient)
FLOOR = 1e-6


def _loss_and_signs(params, x, y, kind):
    h = x
    signs = []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if k < last:
            signs.append(z > 0)
            if kind is Activation.RELU:
                h = np.maximum(z, 0.0)
            else:
                c = np.sqrt(2.0 / np.pi)
                h = 0.5 * z * (1.0 + np.tanh(c * (z + 0.044715 * z**3)))
        else:
            h = z
    return float(np.mean((h[:, 0] - y) ** 2)), signs


def max_relative_error(params, x, y, activation):
    """Largest relative error over all parameters; also returns how many kink-crossing
    coordinates were skipped (relu only)."""
    kind = Activation(activation)
    _, grads = mlp_backward(params, x, y, kind)
    _, base_signs = _loss_and_signs(params, x, y, kind)
    worst, skipped = 0.0, 0
    for arr, g in zip(params.arrays, grads.arrays):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + H
            lp, sp = _loss_and_signs(params, x, y, kind)
            flat[i] = orig - H
            lm, sm = _loss_and_signs(params, x, y, kind)
            flat[i] = orig
            if kind is Activation.RELU and any(
                np.any(a != b) or np.any(c != b) for a, b, c in zip(sp, base_signs, sm)
            ):
                skipped += 1
                continue
            fd = (lp - lm) / (2 * H)
            an = float(gflat[i])
            err = abs(fd - an) / max(abs(fd), abs(an), FLOOR)
            worst = max(worst, err)
    return worst, skipped


def random_case(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    hidden = tuple(int(w) for w in rng.integers(2, 8, size=depth))
    arch = MlpArch(int(rng.integers(2, 10)), hidden, rng.choice(["relu", "gelu"]))
    params = init_params(arch, seed=seed, dtype=np.float64)
    for b in params.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    batch = int(rng.integers(1, 9))
    x = rng.normal(size=(batch, arch.input_dim))
    y = rng.normal(size=batch)
    return arch, params, x, y
