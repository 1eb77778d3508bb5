"""Minimal dense-network core with hand-written backprop.

Float64 numpy throughout: small enough networks that clarity and exact
finite-difference checkability beat raw speed. A network is a parameter dict
plus a static architecture description; forward returns a cache that backward
consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Params = dict[str, np.ndarray]


def he_init(rng: np.random.Generator, n_in: int, n_out: int, scale: float = 1.0, dtype=np.float64) -> np.ndarray:
    return rng.normal(0.0, scale * math.sqrt(2.0 / n_in), size=(n_in, n_out)).astype(dtype)


@dataclass(frozen=True)
class TwoBranchMLP:
    """Image branch -> concat with the flat features -> trunk -> linear heads.

    With img_dim == 0 the image branch disappears and the trunk consumes the
    flat features directly. ReLU between all hidden layers.
    """

    img_dim: int
    img_hidden: tuple[int, ...]
    vec_dim: int
    trunk_hidden: tuple[int, ...]
    head_dims: tuple[int, ...]

    def init(self, rng: np.random.Generator, zero_heads: tuple[int, ...] = (), dtype=np.float64) -> Params:
        params: Params = {}
        prev = self.img_dim
        if self.img_dim > 0:
            for i, width in enumerate(self.img_hidden):
                params[f"img{i}_W"] = he_init(rng, prev, width, dtype=dtype)
                params[f"img{i}_b"] = np.zeros(width, dtype=dtype)
                prev = width
            trunk_in = prev + self.vec_dim
        else:
            trunk_in = self.vec_dim
        prev = trunk_in
        for i, width in enumerate(self.trunk_hidden):
            params[f"trunk{i}_W"] = he_init(rng, prev, width, dtype=dtype)
            params[f"trunk{i}_b"] = np.zeros(width, dtype=dtype)
            prev = width
        for i, width in enumerate(self.head_dims):
            if i in zero_heads:
                params[f"head{i}_W"] = np.zeros((prev, width), dtype=dtype)
            else:
                params[f"head{i}_W"] = he_init(rng, prev, width, scale=0.1, dtype=dtype)
            params[f"head{i}_b"] = np.zeros(width, dtype=dtype)
        return params

    def forward(self, params: Params, img: np.ndarray | None, vec: np.ndarray):
        """Returns (list of head outputs, cache). Inputs are (batch, dim)."""
        cache = {"img_pre": [], "img_x": [], "trunk_pre": [], "trunk_x": []}
        if self.img_dim > 0:
            x = img
            for i in range(len(self.img_hidden)):
                cache["img_x"].append(x)
                pre = x @ params[f"img{i}_W"] + params[f"img{i}_b"]
                cache["img_pre"].append(pre)
                x = np.maximum(pre, 0.0)
            feat = np.concatenate([x, vec], axis=1)
        else:
            feat = vec
        x = feat
        cache["trunk_in"] = feat
        for i in range(len(self.trunk_hidden)):
            cache["trunk_x"].append(x)
            pre = x @ params[f"trunk{i}_W"] + params[f"trunk{i}_b"]
            cache["trunk_pre"].append(pre)
            x = np.maximum(pre, 0.0)
        cache["final"] = x
        heads = [x @ params[f"head{i}_W"] + params[f"head{i}_b"] for i in range(len(self.head_dims))]
        return heads, cache

    def backward(self, params: Params, cache, dheads, inputs_only: bool = False):
        """Grad dict plus gradients w.r.t. the img and vec inputs.

        With inputs_only=True the (expensive) parameter gradients are skipped;
        only the chain back to the inputs is computed.
        """
        grads: Params = {}
        final = cache["final"]
        dx = np.zeros_like(final)
        for i, dh in enumerate(dheads):
            if dh is None:
                if not inputs_only:
                    grads[f"head{i}_W"] = np.zeros_like(params[f"head{i}_W"])
                    grads[f"head{i}_b"] = np.zeros(params[f"head{i}_b"].shape, dtype=final.dtype)
                continue
            if not inputs_only:
                grads[f"head{i}_W"] = final.T @ dh
                grads[f"head{i}_b"] = dh.sum(axis=0)
            dx = dx + dh @ params[f"head{i}_W"].T
        for i in reversed(range(len(self.trunk_hidden))):
            dpre = dx * (cache["trunk_pre"][i] > 0)
            if not inputs_only:
                grads[f"trunk{i}_W"] = cache["trunk_x"][i].T @ dpre
                grads[f"trunk{i}_b"] = dpre.sum(axis=0)
            dx = dpre @ params[f"trunk{i}_W"].T
        if self.img_dim > 0:
            img_width = self.img_hidden[-1]
            dimg_feat = dx[:, :img_width]
            dvec = dx[:, img_width:]
            dx = dimg_feat
            if not inputs_only:
                for i in reversed(range(len(self.img_hidden))):
                    dpre = dx * (cache["img_pre"][i] > 0)
                    grads[f"img{i}_W"] = cache["img_x"][i].T @ dpre
                    grads[f"img{i}_b"] = dpre.sum(axis=0)
                    dx = dpre @ params[f"img{i}_W"].T
            return grads, dx, dvec
        return grads, None, dx


class Adam:
    """Per-parameter-dict Adam with bias correction."""

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def init_state(self, params: Params) -> dict:
        return {
            "t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
        }

    def step(self, params: Params, grads: Params, state: dict) -> None:
        state["t"] += 1
        t = state["t"]
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for k, g in grads.items():
            m = state["m"][k]
            v = state["v"][k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def flat_grad_norm(grads: Params) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    return math.sqrt(total)


def finite_diff_check(
    loss_fn,
    params: Params,
    analytic: Params,
    rng: np.random.Generator,
    samples_per_param: int = 4,
    eps: float = 1e-6,
) -> float:
    """Max relative error between analytic grads and central differences.

    Probes a few randomly chosen entries of every parameter tensor, so each
    trainable layer gets checked.
    """
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        n = min(samples_per_param, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = g_flat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    return worst
