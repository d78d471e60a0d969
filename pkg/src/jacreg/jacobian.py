"""Exact input Jacobians of ReLU MLPs and closed-form gradients of their norms.

For a bias-free ReLU net the Jacobian is the masked matrix product

    J(x)^T = W_L diag(m_{L-1}) W_{L-1} ... diag(m_1) W_1        (k x d)

built here by right-to-left accumulation so the running product never exceeds
k x d_l. The same sweep yields every suffix product G_l = d(logits)/d(h_l),
which the penalty gradients reuse.

Penalty gradients treat the masks as constants (ReLU has zero second
derivative away from the kink set), which makes them closed forms:

    d||J||_F^2 / dW_l  = 2 diag(m_l) G_l^T J^T M_{l-1}^T
    d||J||_1,1 / dW_l  =   diag(m_l) G_l^T sign(J)^T M_{l-1}^T

with M_l = diag(m_l) W_l ... diag(m_1) W_1 the linearized forward prefix
(M_0 = I, and the diag factor is dropped at l = L). sign(0) is taken as 0,
a valid subgradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import PenaltyKind
from .network import BatchTrace, ForwardTrace, MlpParams, ParamGrad, forward
from .tensor import Matrix, ShapeError, Vector, as_vector


@dataclass
class Jacobian:
    matrix: Matrix  # d x k, column j = gradient of logit j
    frob_sq: float
    l11: float


@dataclass
class JacobianStats:
    mean_frob_sq: float
    mean_l11: float
    n: int


def _check_trace(params: MlpParams, trace: ForwardTrace) -> None:
    if len(trace.masks) != params.depth - 1:
        raise ShapeError(
            f"trace has {len(trace.masks)} masks, expected {params.depth - 1}"
        )
    for i, m in enumerate(trace.masks):
        if m.shape[0] != params.dims[i + 1]:
            raise ShapeError(f"mask {i} has dim {m.shape[0]}, expected {params.dims[i + 1]}")


def _suffix_products(params: MlpParams, trace: ForwardTrace) -> list[Matrix]:
    """G[l] = d(logits)/d(h_l) as a k x d_l matrix, for l = 0 .. L-1."""
    L = params.depth
    G: list[Matrix] = [None] * L
    G[L - 1] = params.layers[L - 1]
    for l in range(L - 2, -1, -1):
        G[l] = (G[l + 1] * trace.masks[l]) @ params.layers[l]
    return G


def input_jacobian(params: MlpParams, trace: ForwardTrace) -> Jacobian:
    """Exact d x k input Jacobian from a cached forward trace."""
    _check_trace(params, trace)
    w = _suffix_products(params, trace)[0]  # k x d, equals J^T
    return Jacobian(
        matrix=w.T.copy(),
        frob_sq=float((w * w).sum()),
        l11=float(np.abs(w).sum()),
    )


def check_homogeneity_identity(params: MlpParams, x: Vector) -> float:
    """Residual ||f(x) - J(x)^T x||_inf of the ReLU homogeneity identity.

    Exact in exact arithmetic for any ReLU net; callers assert the residual
    against 1e-9 * (1 + ||f(x)||_inf).
    """
    x = as_vector(x)
    trace = forward(params, x)
    jac = input_jacobian(params, trace)
    return float(np.abs(trace.logits - jac.matrix.T @ x).max())


def penalty_grad_frob_sq(params: MlpParams, trace: ForwardTrace) -> ParamGrad:
    """Gradient of ||J||_F^2 w.r.t. every layer, masks held fixed."""
    return _penalty_grad(params, trace, PenaltyKind.FROB_SQ)


def penalty_grad_l11(params: MlpParams, trace: ForwardTrace) -> ParamGrad:
    """Subgradient of ||J||_{1,1} w.r.t. every layer, masks held fixed."""
    return _penalty_grad(params, trace, PenaltyKind.L11)


def _penalty_grad(params: MlpParams, trace: ForwardTrace, kind: PenaltyKind) -> ParamGrad:
    _check_trace(params, trace)
    L = params.depth
    G = _suffix_products(params, trace)
    w = G[0]
    if kind is PenaltyKind.FROB_SQ:
        factor, t = 2.0, w
    else:
        factor, t = 1.0, np.sign(w)
    grads: list[Matrix] = [None] * L
    for i in range(L):
        if i > 0:
            # advance t from J-side prefix M_{i-1} to M_i (applied transposed)
            t = (t @ params.layers[i - 1].T) * trace.masks[i - 1]
        if i < L - 1:
            grads[i] = factor * trace.masks[i][:, None] * (G[i + 1].T @ t)
        else:
            grads[i] = factor * t
    return ParamGrad(layers=grads)


def batch_stats(params: MlpParams, xs: np.ndarray, chunk: int = 2048) -> JacobianStats:
    """Means of ||J||_F^2 and ||J||_{1,1} over the rows of xs."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError("batch_stats needs a nonempty n x d array")
    total_frob = 0.0
    total_l11 = 0.0
    from .network import forward_batch  # local import to keep module load light

    for lo in range(0, xs.shape[0], chunk):
        bt = forward_batch(params, xs[lo:lo + chunk])
        w = jacobian_batch(params, bt)
        total_frob += float((w * w).sum())
        total_l11 += float(np.abs(w).sum())
    n = xs.shape[0]
    return JacobianStats(mean_frob_sq=total_frob / n, mean_l11=total_l11 / n, n=n)


# --- independent finite-difference oracles ---------------------------------

def fd_input_jacobian(params: MlpParams, x: Vector, step: float = 1e-6) -> Matrix:
    """Central-difference estimate of the d x k input Jacobian.

    Built purely from forward evaluations, so it shares no code path with
    input_jacobian. Only trustworthy at generic points (no pre-activation
    within ~step of the ReLU kink).
    """
    x = as_vector(x).copy()
    out = np.zeros((x.shape[0], params.dims[-1]))
    for i in range(x.shape[0]):
        orig = x[i]
        x[i] = orig + step
        up = forward(params, x).logits
        x[i] = orig - step
        down = forward(params, x).logits
        x[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return out


def fd_param_grad(params: MlpParams, fn, step: float = 1e-6) -> ParamGrad:
    """Central-difference gradient of a scalar fn(params) w.r.t. every weight."""
    probe = MlpParams([w.copy() for w in params.layers], params.activation)
    grads: list[Matrix] = []
    for w in probe.layers:
        g = np.zeros_like(w)
        flat, gf = w.ravel(), g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = fn(probe)
            flat[idx] = orig - step
            down = fn(probe)
            flat[idx] = orig
            gf[idx] = (up - down) / (2.0 * step)
        grads.append(g)
    return ParamGrad(layers=grads)


# --- batched fast paths (pure reshapes of the per-sample formulas) ---------

def _bmm(t: np.ndarray, m: Matrix) -> np.ndarray:
    """(n, k, a) @ (a, b) -> (n, k, b) as a single BLAS call."""
    n, k, a = t.shape
    return (t.reshape(n * k, a) @ m).reshape(n, k, m.shape[1])


def _suffix_products_batch(params: MlpParams, bt: BatchTrace) -> list[np.ndarray]:
    L = params.depth
    n = bt.logits.shape[0]
    k = params.dims[-1]
    G: list[np.ndarray] = [None] * L
    G[L - 1] = np.broadcast_to(params.layers[L - 1], (n, k, params.dims[L - 1]))
    for l in range(L - 2, -1, -1):
        G[l] = _bmm(G[l + 1] * bt.masks[l][:, None, :], params.layers[l])
    return G


def jacobian_batch(params: MlpParams, bt: BatchTrace) -> np.ndarray:
    """Stacked J^T for a batch: shape n x k x d."""
    L = params.depth
    w = np.broadcast_to(params.layers[L - 1],
                        (bt.logits.shape[0], params.dims[-1], params.dims[L - 1]))
    for l in range(L - 2, -1, -1):
        w = _bmm(w * bt.masks[l][:, None, :], params.layers[l])
    return w


def penalty_grads_batch(
    params: MlpParams, bt: BatchTrace, kind: PenaltyKind
) -> tuple[list[Matrix], np.ndarray, np.ndarray]:
    """Batch-summed penalty gradients plus per-sample (frob_sq, l11) norms."""
    L = params.depth
    n = bt.logits.shape[0]
    k = params.dims[-1]
    G = _suffix_products_batch(params, bt)
    w = G[0]
    frob_sq = np.einsum("nij,nij->n", w, w)
    l11 = np.abs(w).sum(axis=(1, 2))
    if kind is PenaltyKind.FROB_SQ:
        factor, t = 2.0, w
    else:
        factor, t = 1.0, np.sign(w)
    grads: list[Matrix] = [None] * L
    for i in range(L):
        if i > 0:
            t = _bmm(t, params.layers[i - 1].T) * bt.masks[i - 1][:, None, :]
        if i < L - 1:
            gm = G[i + 1] * bt.masks[i][:, None, :]
            a = gm.shape[2]
            grads[i] = factor * (
                gm.reshape(n * k, a).T @ t.reshape(n * k, t.shape[2])
            )
        else:
            grads[i] = factor * t.sum(axis=0)
    return grads, frob_sq, l11
