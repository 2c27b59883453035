"""Desk-scale training of the invertible network.

Loss (weights alpha=100, beta=1):

    total = alpha * MSE(I_p, I_c) + beta * L1(I'_l, I_l)

The concealment term keeps the protected image close to the cover; the
extraction term makes the revealed map match the agreed one after the
benign channel. Both raw (pre-clamp) images feed the losses so the
gradient path through the coupling algebra stays exact; the published
image is still the clamped one and reaches the reveal path through a
straight-through clamp (forward clips, backward passes through).

Everything is analytic backpropagation over float64 numpy; gradcheck
verifies it against central finite differences.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .degrade import Degradation, apply_differentiable
from .errors import DivergenceError
from .inn import (
    couple_forward,
    couple_forward_backward,
    couple_inverse,
    couple_inverse_backward,
    default_train_init,
    save_model,
)
from .wavelet import dwt_stack, idwt_stack


@dataclass
class TrainConfig:
    alpha: float = 100.0
    beta: float = 1.0
    learning_rate: float = 1e-4
    lr_final: float = None     # linear decay target; None = constant lr
    grad_clip: float = 0.0     # global L2 norm ceiling; 0 disables
    iterations: int = 500
    batch_size: int = 4
    seed: int = 0
    degradation_schedule: tuple = ()  # Degradation templates; () = clean only
    checkpoint_every: int = 100
    checkpoint_path: str = None
    log_path: str = None

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.lr_final is not None and self.lr_final < 0:
            raise ValueError("lr_final must be >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")


@dataclass
class LossBreakdown:
    total: float
    enc: float  # MSE(I_p, I_c)
    ext: float  # L1(I'_l, I_l)


def _forward(model, covers, maps, deg):
    """Shared forward pass; returns the breakdown pieces and all caches."""
    n, h, w, _c = covers.shape
    x_c = dwt_stack(covers)
    x_l = dwt_stack(maps)
    y_c, _y_l, fwd_caches = couple_forward(model, x_c, x_l)
    raw_p = idwt_stack(y_c, h, w)
    published = np.clip(raw_p, 0.0, 1.0)
    if deg is None or deg.kind == "none":
        received = published
    else:
        received = np.empty_like(published)
        for i in range(n):
            item_deg = Degradation(
                deg.kind, sigma=deg.sigma, peak=deg.peak,
                quality=deg.quality, seed=deg.seed + i,
            )
            received[i] = apply_differentiable(item_deg, published[i])
    z = dwt_stack(received)
    lat, _w_p, pem_cache = model.pem.forward(z)
    x_c0, x_l0, inv_caches = couple_inverse(model, z, lat)
    raw_l = idwt_stack(x_l0, h, w)
    return raw_p, raw_l, (fwd_caches, pem_cache, inv_caches)


def _losses(raw_p, raw_l, covers, maps, alpha, beta):
    enc = float(((raw_p - covers) ** 2).mean())
    ext = float(np.abs(raw_l - maps).mean())
    return LossBreakdown(total=alpha * enc + beta * ext, enc=enc, ext=ext)


def compute_loss(model, cover, lmap, deg=None, alpha=100.0, beta=1.0):
    """Loss breakdown for one cover/map pair; no gradients touched."""
    covers = np.asarray(cover, dtype=np.float64)[None]
    maps = np.asarray(lmap, dtype=np.float64)[None]
    raw_p, raw_l, _ = _forward(model, covers, maps, deg)
    return _losses(raw_p, raw_l, covers, maps, alpha, beta)


def loss_and_grads(model, covers, maps, deg=None, alpha=100.0, beta=1.0):
    """Forward + analytic backward; gradients accumulate on model params."""
    covers = np.asarray(covers, dtype=np.float64)
    maps = np.asarray(maps, dtype=np.float64)
    n, h, w, _c = covers.shape
    raw_p, raw_l, (fwd_caches, pem_cache, inv_caches) = _forward(model, covers, maps, deg)
    breakdown = _losses(raw_p, raw_l, covers, maps, alpha, beta)

    d_raw_l = beta * np.sign(raw_l - maps) / raw_l.size
    dx_l0 = dwt_stack(d_raw_l)  # adjoint of idwt is dwt (orthonormal)
    dz, dlat = couple_inverse_backward(model, inv_caches, np.zeros_like(dx_l0), dx_l0)
    dz = dz + model.pem.backward(pem_cache, dlat)
    d_received = idwt_stack(dz, h, w)  # adjoint of dwt
    # degradation and [0,1] clamp are straight-through: gradient unchanged
    d_raw_p = d_received + alpha * 2.0 * (raw_p - covers) / raw_p.size
    dy_c = dwt_stack(d_raw_p)
    couple_forward_backward(model, fwd_caches, dy_c, np.zeros_like(dy_c))
    return breakdown


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def step(model, batch, config, opt):
    """One optimization step on a (covers, maps) batch."""
    covers, maps = batch
    model.zero_grad()
    breakdown = loss_and_grads(
        model, covers, maps, deg=None, alpha=config.alpha, beta=config.beta
    )
    opt.step()
    return breakdown


def _pick_degradation(schedule, rng, iteration):
    if not schedule:
        return None
    tmpl = schedule[int(rng.integers(len(schedule)))]
    return Degradation(
        tmpl.kind, sigma=tmpl.sigma, peak=tmpl.peak, quality=tmpl.quality,
        seed=int(rng.integers(2**62)) + iteration,
    )


def fit(model, covers, maps, config, init=True):
    """Full training loop; returns the per-iteration loss history.

    Deterministic given (config.seed, inputs): batch sampling, degradation
    draws, and initialization all derive from one PCG64 stream.
    """
    covers = np.asarray(covers, dtype=np.float64)
    maps = np.asarray(maps, dtype=np.float64)
    n = covers.shape[0]
    rng = np.random.Generator(np.random.PCG64(config.seed))
    if init:
        default_train_init(model, rng)
    opt = Adam(model.params(), lr=config.learning_rate)
    history = []
    log_lines = []
    for it in range(config.iterations):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
        deg = _pick_degradation(config.degradation_schedule, rng, it)
        model.zero_grad()
        breakdown = loss_and_grads(
            model, covers[idx], maps[idx], deg=deg,
            alpha=config.alpha, beta=config.beta,
        )
        if not math.isfinite(breakdown.total):
            if config.log_path:
                _write_log(config.log_path, log_lines)
            raise DivergenceError(
                f"non-finite loss at iteration {it}; last checkpoint kept"
            )
        if config.grad_clip > 0:
            gn = math.sqrt(sum(float((p.grad ** 2).sum())
                               for p in model.params()))
            if gn > config.grad_clip:
                scale = config.grad_clip / gn
                for p in model.params():
                    p.grad *= scale
        if config.lr_final is not None and config.iterations > 1:
            frac = it / (config.iterations - 1)
            opt.lr = config.learning_rate + frac * (
                config.lr_final - config.learning_rate)
        opt.step()
        history.append(breakdown)
        log_lines.append(
            f"iter={it} enc={breakdown.enc:.8f} ext={breakdown.ext:.8f} "
            f"total={breakdown.total:.8f}"
        )
        if config.checkpoint_path and config.checkpoint_every > 0:
            if (it + 1) % config.checkpoint_every == 0:
                save_model(model, config.checkpoint_path)
    if config.checkpoint_path:
        save_model(model, config.checkpoint_path)
    if config.log_path:
        _write_log(config.log_path, log_lines)
    return history


def _write_log(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def smoothed_losses(history, window=None):
    """Trailing-window means of the total loss, one value per window."""
    totals = [b.total for b in history]
    if window is None:
        window = max(1, len(totals) // 10)
    return [
        float(np.mean(totals[i : i + window]))
        for i in range(0, len(totals) - window + 1, window)
    ]


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_err: float
    n_checked: int
    worst_param: str
    per_param: dict = field(default_factory=dict)

    def passed(self, tolerance=1e-3):
        return self.max_rel_err < tolerance


def analytic_gradients(model, cover, lmap, alpha=100.0, beta=1.0):
    """One clean backward pass; returns {param name: gradient copy}."""
    model.zero_grad()
    loss_and_grads(
        model, np.asarray(cover)[None], np.asarray(lmap)[None],
        deg=None, alpha=alpha, beta=beta,
    )
    return {p.name: p.grad.copy() for p in model.params()}


def gradcheck(
    model, cover, lmap, tolerance=1e-3, fraction=0.05, h=1e-3, seed=0,
    alpha=100.0, beta=1.0, gradients=None,
):
    """Central-difference check on a seeded random parameter subset.

    rel err = |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|). The caller may
    supply precomputed ``gradients`` (e.g. deliberately corrupted ones)
    to verify the check itself can fail.
    """
    params = model.params()
    total = sum(p.size for p in params)
    if total > 5000:
        raise ValueError(f"model too large for gradcheck ({total} parameters)")
    if gradients is None:
        gradients = analytic_gradients(model, cover, lmap, alpha, beta)

    def loss():
        return compute_loss(model, cover, lmap, None, alpha, beta).total

    rng = np.random.Generator(np.random.PCG64(seed))
    n_check = max(1, int(round(fraction * total)))
    picks = np.sort(rng.choice(total, size=n_check, replace=False))
    spans = []
    off = 0
    for p in params:
        spans.append((off, off + p.size, p))
        off += p.size
    max_err, worst, per_param = 0.0, "", {}
    si = 0
    for flat_idx in picks:
        while flat_idx >= spans[si][1]:
            si += 1
        start, _end, p = spans[si]
        local = int(flat_idx - start)
        pf = p.value.reshape(-1)
        keep = pf[local]
        pf[local] = keep + h
        lp = loss()
        pf[local] = keep - h
        lm = loss()
        pf[local] = keep
        g_fd = (lp - lm) / (2 * h)
        g_a = float(gradients[p.name].reshape(-1)[local])
        err = abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd))
        per_param[p.name] = max(per_param.get(p.name, 0.0), err)
        if err > max_err:
            max_err, worst = err, f"{p.name}[{local}]"
    return GradcheckReport(
        max_rel_err=max_err, n_checked=n_check, worst_param=worst, per_param=per_param
    )
