import numpy as np


def unit_ball(rng, n, d, radius=1.0):
    """Uniform draws from the ball of the given radius in R^d."""
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * radius * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)


def central_difference(fun, x, h=1e-6):
    """Numerical gradient of scalar ``fun`` at array ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fun(x)
        flat[i] = old - h
        down = fun(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    """``|a - b| / (|a| + |b|)`` over the whole array."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def dense_gradient_error(net, X, y, kind):
    """Relative error between backprop and central differences over the
    concatenation of every parameter gradient of ``net``."""
    from randrelu.learn import dense_loss_grad

    _, grads = dense_loss_grad(net, X, y, kind)
    numeric = []
    for p in net.params():
        def loss_at(q, p=p):
            saved = p.copy()
            p[...] = q
            value = dense_loss_grad(net, X, y, kind)[0]
            p[...] = saved
            return value

        numeric.append(central_difference(loss_at, p).ravel())
    analytic = np.concatenate([g.ravel() for g in grads])
    return rel_error(analytic, np.concatenate(numeric))
