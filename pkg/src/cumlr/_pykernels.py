"""Pure numpy implementation of the training kernels.

Mirrors ``_ckernels.pyx`` function for function. Parameters live in one flat
float64 vector laid out layer by layer as ``W_i`` (row-major, shape
``(sizes[i+1], sizes[i])``) followed by ``b_i``.
"""

import math

import numpy as np

NAME = "python"


def layer_views(theta, sizes):
    views = []
    off = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        w = theta[off:off + a * b].reshape(b, a)
        off += a * b
        views.append((w, theta[off:off + b]))
        off += b
    return views


def _forward(views, X):
    # overflow here is a diverged network, reported as an infinite loss downstream
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_raw(views, X)


def _forward_raw(views, X):
    acts = []
    h = X
    last = len(views) - 1
    for i, (w, b) in enumerate(views):
        z = h @ w.T
        z += b
        if i < last:
            np.maximum(z, 0.0, out=z)
        acts.append(z)
        h = z
    return acts


def _cross_entropy(z, y, want_delta):
    n = z.shape[0]
    if not np.all(np.isfinite(z)):
        return math.inf, None, 0
    mx = z.max(axis=1, keepdims=True)
    e = np.exp(z - mx)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    total = float(np.sum(mx[:, 0] + np.log(s[:, 0]) - z[rows, y]))
    correct = int(np.count_nonzero(np.argmax(z, axis=1) == y))
    if not math.isfinite(total):
        return math.inf, None, correct
    delta = None
    if want_delta:
        delta = e / s
        delta[rows, y] -= 1.0
        delta /= n
    return total, delta, correct


def loss_grad(theta, grad, sizes, X, y):
    """Mean cross-entropy on ``(X, y)``; gradient written into ``grad``.

    Returns ``inf`` (and leaves ``grad`` unspecified) if any logit is
    non-finite.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_grad(theta, grad, sizes, X, y)


def _loss_grad(theta, grad, sizes, X, y):
    views = layer_views(theta, sizes)
    gviews = layer_views(grad, sizes)
    acts = _forward_raw(views, X)
    total, delta, _ = _cross_entropy(acts[-1], y, True)
    if not math.isfinite(total):
        return math.inf
    for i in range(len(views) - 1, -1, -1):
        h = X if i == 0 else acts[i - 1]
        gw, gb = gviews[i]
        np.matmul(delta.T, h, out=gw)
        gb[:] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ views[i][0]
            delta *= h > 0.0
    return total / X.shape[0]


def eval_loss(theta, sizes, X, y):
    """Return ``(mean_loss, correct_count)`` without computing gradients."""
    acts = _forward(layer_views(theta, sizes), X)
    total, _, correct = _cross_entropy(acts[-1], y, False)
    if not math.isfinite(total):
        return math.inf, correct
    return total / X.shape[0], correct


def logits(theta, sizes, X):
    return _forward(layer_views(theta, sizes), X)[-1]


def sgd_update(theta, grad, lr):
    theta -= lr * grad


def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, t):
    # t is the step count after incrementing (first update uses t=1)
    with np.errstate(over="ignore", invalid="ignore"):
        _adam(theta, grad, m, v, lr, beta1, beta2, eps, t)


def _adam(theta, grad, m, v, lr, beta1, beta2, eps, t):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def run_epoch(theta, sizes, X, y, perm, batch_size, lr, use_adam, m, v, t,
              beta1, beta2, eps, max_loss=math.inf):
    """One pass over ``X[perm]`` in minibatches, updating ``theta`` in place.

    Returns ``(batch_losses, t)``. Stops after the first batch loss that is
    non-finite or above ``max_loss``; that loss is the last entry.
    """
    n = perm.shape[0]
    grad = np.empty_like(theta)
    losses = []
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        loss = loss_grad(theta, grad, sizes, X[idx], y[idx])
        losses.append(loss)
        if not loss <= max_loss:
            break
        if use_adam:
            t += 1
            adam_update(theta, grad, m, v, lr, beta1, beta2, eps, t)
        else:
            sgd_update(theta, grad, lr)
    return np.asarray(losses, dtype=np.float64), t
