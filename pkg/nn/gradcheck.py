"""
Finite-difference gradient checking
"""
from typing import Callable

import numpy as np

from nn.network import Network


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """
    Central differences of a scalar function, perturbing x in place

    Args:
        f: Function of x returning a scalar
        x: float64 array, restored on return
        eps: Perturbation

    Returns:
        Gradient array with the shape of x
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = f(x)
        flat[i] = original - eps
        minus = f(x)
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def grad_check(network: Network, input: np.ndarray, eps: float = 1e-3, n_params: int = 100, seed: int = 0) -> float:
    """
    Compare backprop against central differences on sampled parameters

    The check runs on a float64 copy of the weights and input; the loss is
    a fixed random projection of the network output.

    Args:
        network: Network to check
        input: Input batch
        eps: Finite-difference step
        n_params: Number of parameters to sample (all if fewer exist)
        seed: Sampling seed

    Returns:
        Maximum relative error over the sampled parameters
    """
    rng = np.random.default_rng(seed)
    params = {name: value.astype(np.float64) for name, value in network.parameters().items()}
    x = np.asarray(input, dtype=np.float64)

    out, caches = network.run(x, params)
    projection = rng.standard_normal(out.shape)
    _, grads = network.run_backward(projection, caches, params)

    def loss() -> float:
        value, _ = network.run(x, params, keep_cache=False)
        return float(np.sum(value * projection))

    names = list(params)
    sizes = np.array([params[name].size for name in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    analytic, numeric = [], []
    for flat_index in np.sort(picks):
        slot = int(np.searchsorted(offsets, flat_index, side='right') - 1)
        name = names[slot]
        local = int(flat_index - offsets[slot])
        values = params[name].reshape(-1)
        original = values[local]
        values[local] = original + eps
        plus = loss()
        values[local] = original - eps
        minus = loss()
        values[local] = original
        numeric.append((plus - minus) / (2.0 * eps))
        analytic.append(grads[name].reshape(-1)[local])

    return relative_error(np.array(analytic), np.array(numeric))
