"""Finite-difference scenarios for every differentiable kernel.

Each scenario freezes a random instance at f64, probes the forward
formula with central differences, and compares against the hand-derived
backward pass. The composite scenario chains the whole model into the
weighted loss exactly as the trainer does.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .kernels import (
    GradCheckReport,
    MsaParams,
    PoolParams,
    attention_pool_backward,
    attention_pool_forward,
    grad_check,
    linear_backward,
    linear_forward,
    max_pool,
    max_pool_backward,
    mean_pool,
    mean_pool_backward,
    msa_backward,
    msa_forward,
    softmax_rows,
    softmax_rows_vjp,
)
from .losses import (
    LossConfig,
    center_loss,
    context_broadcast,
    context_broadcast_vjp,
    focal_loss,
    kl_div,
    supcon_loss,
)
from .model import ModelConfig, ModelParams, backward_pass, forward_pass, init_params, zero_grads


def check_linear(t: int, d: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    k = max(2, d // 4)
    probe = rng.normal(size=(t, k))

    def fn(p):
        y = linear_forward(p["x"], p["w"], p["b"])
        dx, dw, db = linear_backward(p["x"], p["w"], probe)
        return float(np.sum(probe * y)), {"x": dx, "w": dw, "b": db}

    params = {"x": rng.normal(size=(t, d)), "w": rng.normal(size=(d, k)), "b": rng.normal(size=k)}
    return grad_check(fn, params, h, tol)


def check_softmax(d: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    probe = rng.normal(size=d)

    def fn(p):
        y = softmax_rows(p["logits"])
        return float(np.sum(probe * y)), {"logits": softmax_rows_vjp(y, probe)}

    return grad_check(fn, {"logits": rng.normal(size=d)}, h, tol)


def check_msa(t: int, d: int, heads: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    mp = MsaParams.init(rng, d, heads)
    probe = rng.normal(size=(t, d))

    def fn(p):
        mp.w_q, mp.w_k, mp.w_v, mp.w_o = p["w_q"], p["w_k"], p["w_v"], p["w_o"]
        out, cache = msa_forward(p["x"], mp)
        dx, g = msa_backward(mp, cache, probe)
        return float(np.sum(probe * out)), {
            "x": dx, "w_q": g.w_q, "w_k": g.w_k, "w_v": g.w_v, "w_o": g.w_o,
        }

    params = {"x": rng.normal(size=(t, d)), "w_q": mp.w_q, "w_k": mp.w_k, "w_v": mp.w_v, "w_o": mp.w_o}
    return grad_check(fn, params, h, tol)


def check_attention_pool(
    t: int, d: int, seed: int, use_softmax: bool, h: float = 1e-5, tol: float = 1e-4
) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    pp = PoolParams.init(rng, d)
    probe = rng.normal(size=d)

    def fn(p):
        pp.weight = p["weight"]
        if "bias" in p:
            pp.bias = p["bias"]
        f, cache = attention_pool_forward(p["x"], pp, use_softmax)
        dx, dw, db = attention_pool_backward(pp, cache, probe)
        return float(np.sum(probe * f)), {"x": dx, "weight": dw, "bias": db}

    params = {"x": rng.normal(size=(t, d)), "weight": pp.weight}
    # Softmax is shift-invariant, so there the bias gradient is exactly
    # zero; finite differences cannot resolve an exact zero against
    # rounding noise, so that case is asserted exactly in the unit tests.
    if not use_softmax:
        params["bias"] = pp.bias
    return grad_check(fn, params, h, tol)


def check_max_pool(t: int, d: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(t, d))
    # Keep the argmax margin far above the step so the kink stays away.
    x[x.argmax(axis=0), np.arange(d)] += 0.1
    probe = rng.normal(size=d)

    def fn(p):
        return float(np.sum(probe * max_pool(p["x"]))), {"x": max_pool_backward(p["x"], probe)}

    return grad_check(fn, {"x": x}, h, tol)


def check_mean_pool(t: int, d: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    probe = rng.normal(size=d)

    def fn(p):
        return float(np.sum(probe * mean_pool(p["x"]))), {"x": mean_pool_backward(p["x"], probe)}

    return grad_check(fn, {"x": rng.normal(size=(t, d))}, h, tol)


def check_context_broadcast(t: int, d: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    probe = rng.normal(size=(t, d))

    def fn(p):
        return float(np.sum(probe * context_broadcast(p["x"]))), {"x": context_broadcast_vjp(probe)}

    return grad_check(fn, {"x": rng.normal(size=(t, d))}, h, tol)


def _random_simplex(rng: np.random.Generator, c: int, zero_one: bool = True) -> np.ndarray:
    y = rng.uniform(0.1, 1.0, size=c)
    if zero_one and c > 2:
        y[rng.integers(c)] = 0.0
    return y / y.sum()


def check_kl(c: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    y = _random_simplex(rng, c)

    def fn(p):
        value, grad = kl_div(y, p["y_hat"])
        return value, {"y_hat": grad}

    return grad_check(fn, {"y_hat": rng.uniform(0.05, 0.95, size=c)}, h, tol)


def check_focal(c: int, seed: int, gamma: float = 2.0, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    y = _random_simplex(rng, c)

    def fn(p):
        value, grad = focal_loss(y, p["y_hat"], gamma)
        return value, {"y_hat": grad}

    return grad_check(fn, {"y_hat": rng.uniform(0.05, 0.95, size=c)}, h, tol)


def check_center(b: int, p_dim: int, seed: int, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=b)
    centers = rng.normal(size=(3, p_dim))

    def fn(p):
        value, grad = center_loss(p["f_low"], labels, centers)
        return value, {"f_low": grad}

    return grad_check(fn, {"f_low": rng.normal(size=(b, p_dim))}, h, tol)


def check_supcon(
    b: int, t: int, p_dim: int, seed: int, normalize: bool = True, h: float = 1e-5, tol: float = 1e-4
) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(b)])

    def fn(p):
        value, grads = supcon_loss(list(p["frames"]), labels, 0.07, normalize)
        return value, {"frames": np.stack(grads)}

    return grad_check(fn, {"frames": rng.normal(size=(b, t, p_dim))}, h, tol)


def check_full_model(
    t: int,
    d: int,
    heads: int,
    b: int,
    seed: int,
    aggregation: str = "flam",
    h: float = 1e-5,
    tol: float = 1e-4,
    share_projection: bool = False,
    pool_softmax: bool = False,
    cb_enabled: bool = True,
) -> GradCheckReport:
    """End-to-end check of the composite loss w.r.t. every trainable tensor."""
    rng = np.random.default_rng(seed)
    n_classes = 3
    mcfg = ModelConfig(
        dim=d,
        n_classes=n_classes,
        n_heads=heads,
        proj_dim=8,
        aggregation=aggregation,
        cb_enabled=cb_enabled,
        share_projection=share_projection,
        pool_softmax=pool_softmax,
    )
    lcfg = LossConfig(proj_dim=8, cb_enabled=cb_enabled)
    model = init_params(mcfg, rng)
    model.centers = rng.normal(size=(n_classes, 8))
    xs = [rng.normal(size=(t, d)) for _ in range(b)]
    labels = np.array([i % n_classes for i in range(b)])
    soft = np.zeros((b, n_classes))
    soft[np.arange(b), labels] = 0.8
    soft += 0.2 / n_classes
    soft /= soft.sum(axis=1, keepdims=True)
    lam = lcfg.lambdas

    def fn(p):
        merged = model.trainable()
        merged.update(p)
        model.set_trainable(merged)
        fwds = [forward_pass(x, model, mcfg, with_frames=True) for x in xs]
        total = 0.0
        dprobs = []
        for k, fw in enumerate(fwds):
            v_kl, g_kl = kl_div(soft[k], fw.probs)
            v_f, g_f = focal_loss(soft[k], fw.probs, lcfg.gamma)
            total += (lam[0] * v_kl + lam[1] * v_f) / b
            dprobs.append((lam[0] * g_kl + lam[1] * g_f) / b)
        f_low = np.stack([fw.f_low for fw in fwds])
        v_c, g_c = center_loss(f_low, labels, model.centers)
        total += lam[2] * v_c
        v_s, g_s = supcon_loss([fw.frames for fw in fwds], labels, lcfg.tau, lcfg.normalize_embeddings)
        total += lam[3] * v_s
        grads = zero_grads(model)
        for k, fw in enumerate(fwds):
            dlogits = softmax_rows_vjp(fw.probs, dprobs[k])
            backward_pass(model, mcfg, fw, dlogits, lam[2] * g_c[k], lam[3] * g_s[k], grads)
        return total, grads

    checked = model.trainable()
    # Tensors a configuration leaves out of the graph (separate frame
    # projection under sharing, pool parameters under max/mean pooling)
    # have exactly zero gradients, which finite differences cannot
    # certify, so they are dropped from the perturbation set.
    if share_projection:
        checked.pop("frame_proj_w")
        checked.pop("frame_proj_b")
    if aggregation != "flam":
        checked.pop("pool.weight")
        checked.pop("pool.bias")
    elif pool_softmax:
        # softmax pooling is invariant to bias shifts, another exact zero
        checked.pop("pool.bias")
    return grad_check(fn, checked, h, tol)


def run_all(
    t: int = 6,
    d: int = 32,
    heads: int = 16,
    b: int = 3,
    seed: int = 0,
    h: float = 1e-5,
    tol: float = 1e-4,
    threads: int = 1,
) -> dict[str, GradCheckReport]:
    """Run every kernel scenario; the dict is ordered and thread-invariant."""
    jobs: list[tuple[str, callable]] = [
        ("linear", lambda: check_linear(t, d, seed, h, tol)),
        ("softmax", lambda: check_softmax(5, seed, h, tol)),
        ("msa", lambda: check_msa(t, d, heads, seed, h, tol)),
        ("attention_pool", lambda: check_attention_pool(t, d, seed, False, h, tol)),
        ("attention_pool_softmax", lambda: check_attention_pool(t, d, seed, True, h, tol)),
        ("max_pool", lambda: check_max_pool(t, d, seed, h, tol)),
        ("mean_pool", lambda: check_mean_pool(t, d, seed, h, tol)),
        ("context_broadcast", lambda: check_context_broadcast(t, 8, seed, h, tol)),
        ("kl", lambda: check_kl(5, seed, h, tol)),
        ("focal", lambda: check_focal(5, seed, 2.0, h, tol)),
        ("center", lambda: check_center(b, 6, seed, h, tol)),
        ("supcon", lambda: check_supcon(b, 4, 6, seed, True, h, tol)),
        ("supcon_raw", lambda: check_supcon(b, 4, 6, seed, False, h, tol)),
        ("full_model", lambda: check_full_model(t, d, heads, b, seed, "flam", h, tol)),
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: job[1](), jobs))
    else:
        results = [job[1]() for job in jobs]
    return {name: rep for (name, _), rep in zip(jobs, results)}
