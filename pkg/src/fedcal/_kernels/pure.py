"""Reference SGD kernel in plain numpy.

Both backends implement the same contract:

    sgd_train(params, dims, x, y, perms, batch_size, lr, anchor_ref, mu)
        -> (epoch_losses, bad_step)

``params`` is a flat float64 vector of (W, b) layers for the dense chain
described by ``dims`` (ReLU between layers, linear last) and is updated
in place. ``perms`` holds one precomputed sample order per epoch so the
shuffle RNG lives with the caller, not the backend. ``bad_step`` is -1
on success, else the global step index where the loss went non-finite
(params are then mid-flight garbage and the caller should discard them).
Backends may differ in floating-point summation order, nothing else.
"""

import numpy as np


def _views(vec, dims):
    out = []
    off = 0
    for i in range(len(dims) - 1):
        din, dout = int(dims[i]), int(dims[i + 1])
        w = vec[off : off + din * dout].reshape(din, dout)
        off += din * dout
        b = vec[off : off + dout]
        off += dout
        out.append((w, b))
    return out


def sgd_train(params, dims, x, y, perms, batch_size, lr, anchor_ref=None, mu=0.0):
    # overflow is an expected, detected condition (bad_step), not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(params, dims, x, y, perms, batch_size, lr, anchor_ref, mu)


def _run(params, dims, x, y, perms, batch_size, lr, anchor_ref, mu):
    views = _views(params, dims)
    ref_views = _views(anchor_ref, dims) if mu != 0.0 else None
    n = x.shape[0]
    num_layers = len(views)
    epochs = perms.shape[0]
    epoch_losses = np.full(epochs, np.nan)
    step = 0

    for e in range(epochs):
        order = perms[e]
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb = x[idx]
            yb = y[idx]
            m = idx.shape[0]

            acts = [xb]
            h = xb
            for i, (w, b) in enumerate(views):
                h = h @ w + b
                if i < num_layers - 1:
                    np.maximum(h, 0.0, out=h)
                acts.append(h)
            logits = acts[-1]

            shifted = logits - logits.max(axis=1, keepdims=True)
            expx = np.exp(shifted)
            sumexp = expx.sum(axis=1)
            loss = float(np.mean(np.log(sumexp) - shifted[np.arange(m), yb]))
            if mu != 0.0:
                diff = params - anchor_ref
                loss += 0.5 * mu * float(diff @ diff)
            if not np.isfinite(loss):
                return epoch_losses, step
            batch_losses.append(loss)

            delta = expx / sumexp[:, None]
            delta[np.arange(m), yb] -= 1.0
            delta /= m
            for i in range(num_layers - 1, -1, -1):
                w, b = views[i]
                gw = acts[i].T @ delta
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ w.T) * (acts[i] > 0)
                if mu != 0.0:
                    rw, rb = ref_views[i]
                    gw += mu * (w - rw)
                    gb += mu * (b - rb)
                w -= lr * gw
                b -= lr * gb
            step += 1
        epoch_losses[e] = float(np.mean(batch_losses))
    return epoch_losses, -1
