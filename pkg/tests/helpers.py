"""Shared finite-difference oracles used by the unit and acceptance suites."""
from __future__ import annotations

import numpy as np

from coge import gnn, graphs
from coge.transport import TransportProblem, sinkhorn


def param_grad_max_rel_err(model, batch, labels, h=1e-5, stride=7):
    """Central finite differences of the training loss against the analytic
    parameter gradients; every tensor is covered (strided over big ones).
    Relative error is |analytic - fd| / max(1, |fd|)."""
    _, grads = gnn.loss_and_grads(model, batch, labels)
    worst = 0.0
    for pi, p in enumerate(model.parameters()):
        flat_idx = np.arange(p.size)
        take = flat_idx if p.size <= 64 else flat_idx[::stride]
        for k in take:
            idx = np.unravel_index(k, p.shape)
            orig = p[idx]
            p[idx] = orig + h
            lp, _ = gnn.loss_and_grads(model, batch, labels)
            p[idx] = orig - h
            lm, _ = gnn.loss_and_grads(model, batch, labels)
            p[idx] = orig
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(grads[pi][idx] - fd) / max(1.0, abs(fd)))
    return worst


def input_grad_max_abs_err(model, g, class_idx, h=1e-4):
    """Central finite differences of one class logit w.r.t. every feature."""
    analytic = gnn.input_gradient(model, g, class_idx)
    X = np.array(g.features)
    worst = 0.0
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            for sign in (+1, -1):
                X[i, j] += sign * h
                shifted = graphs.Graph(g.id, g.n, g.edges, X.copy(), g.label,
                                       g.ground_truth_edges)
                logits, _ = gnn.forward(model, shifted)
                if sign > 0:
                    lp = logits[class_idx]
                else:
                    lm = logits[class_idx]
                X[i, j] -= sign * h
            worst = max(worst, abs(analytic[i, j] - (lp - lm) / (2 * h)))
    return worst


def marginal_grad_max_err(rng, n_problems=50, n_dirs=10, eps_scale=0.2,
                          delta=1e-6, tol=1e-12):
    """|<f, v> - central FD of the regularized optimum| over random problems
    and random simplex-tangent directions."""
    from coge.transport import cost_matrix, marginal_gradient

    worst = 0.0
    for _ in range(n_problems):
        n, m = int(rng.integers(3, 8)), int(rng.integers(3, 8))
        C = cost_matrix(rng.normal(size=(n, 3)), rng.normal(size=(m, 3)))
        a = rng.random(n) + 0.2
        a /= a.sum()
        b = rng.random(m) + 0.2
        b /= b.sum()
        eps = eps_scale * C.mean()
        res = sinkhorn(TransportProblem(a, b, C), eps, tol=tol, max_iter=50000)
        f = marginal_gradient(res)
        for _ in range(n_dirs):
            v = rng.normal(size=n)
            v -= v.mean()
            rp = sinkhorn(TransportProblem(a + delta * v, b, C), eps, tol=tol, max_iter=50000)
            rm = sinkhorn(TransportProblem(a - delta * v, b, C), eps, tol=tol, max_iter=50000)
            fd = (rp.dual_value - rm.dual_value) / (2 * delta)
            worst = max(worst, abs(fd - f @ v))
    return worst


def composed_grad_max_err(rng, variants=("full_ot", "full_average"), n_instances=3,
                          delta=1e-6):
    """Central FD over the softmax logits of the full composed loss."""
    from coge.explain import ContrastEmbeddings, ExplainConfig, coge_loss, stable_softmax

    worst = 0.0
    for variant in variants:
        cfg = ExplainConfig(variant=variant, sinkhorn_tol=1e-13, sinkhorn_max_iter=50000)
        for _ in range(n_instances):
            n = 6
            Zg = rng.normal(size=(n, 4))
            contrast = ContrastEmbeddings(
                same=[rng.normal(size=(int(rng.integers(4, 8)), 4)) for _ in range(2)],
                diff=[rng.normal(size=(int(rng.integers(4, 8)), 4)) for _ in range(2)],
            )
            theta = rng.normal(size=n) * 0.3
            _, grad = coge_loss(stable_softmax(theta), Zg, contrast, cfg)
            for i in range(n):
                tp = theta.copy()
                tp[i] += delta
                tm = theta.copy()
                tm[i] -= delta
                vp, _ = coge_loss(stable_softmax(tp), Zg, contrast, cfg)
                vm, _ = coge_loss(stable_softmax(tm), Zg, contrast, cfg)
                worst = max(worst, abs((vp - vm) / (2 * delta) - grad[i]))
    return worst
