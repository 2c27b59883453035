"""Invertible embed/reveal network over Haar subband streams.

Two streams of 4*C subband channels flow through a stack of affine
coupling blocks. Per block, writing x_c for the cover stream and x_l for
the location-map stream:

    x_c' = x_c + phi(x_l)
    s    = clamp * (2*sigmoid(eta(x_c')) - 1)
    x_l' = x_l * exp(s) + rho(x_c')

The reverse direction is exact algebra (subtract the shift, multiply by
exp(-s), subtract phi), so composing the two reconstructs both streams
for any parameter values. The embed side discards its transformed map
stream; the reveal side re-estimates it from the received image with the
posterior estimator before running the blocks backwards.
"""

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .layers import (
    Conv2d,
    Param,
    ResBlock,
    Subnet,
    WindowChannelAttention,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
    softmax,
    softmax_grad,
)
from .wavelet import dwt_stack, idwt_stack

CHECKPOINT_MAGIC = b"VZMK"
CHECKPOINT_VERSION = 1


@dataclass
class InnConfig:
    """Architecture hyperparameters; the checkpoint header serializes this."""

    channels: int = 3          # image channels C; streams carry 4*C
    blocks: int = 4
    growth: int = 8            # dense-block growth per layer
    subnet_mid: int = None     # dense-block output width; None = stream width
    clamp: float = 2.0
    pem_width: int = 16
    pem_res_blocks: int = 2    # full-scale setting is 8
    pem_attn_blocks: int = 1   # full-scale setting is 4
    pem_window: int = 8        # attention window in subband pixels
    prompt_dim: int = 8        # degradation prompt embedding width

    @property
    def stream_channels(self):
        return 4 * self.channels


class CouplingBlock:
    """One affine coupling step with three independent subnets."""

    def __init__(self, cfg, rng=None, init_scale=1.0, name="block"):
        c = cfg.stream_channels
        mid = cfg.subnet_mid
        self.clamp = cfg.clamp
        self.phi = Subnet(c, c, cfg.growth, mid, rng, init_scale, f"{name}.phi")
        self.eta = Subnet(c, c, cfg.growth, mid, rng, init_scale, f"{name}.eta")
        self.rho = Subnet(c, c, cfg.growth, mid, rng, init_scale, f"{name}.rho")

    def params(self):
        return self.phi.params() + self.eta.params() + self.rho.params()

    def _scale(self, e):
        sg = sigmoid(e)
        s = self.clamp * (2.0 * sg - 1.0)
        return sg, s

    def forward(self, x_c, x_l):
        u, cphi = self.phi.forward(x_l)
        x_c1 = x_c + u
        e, ceta = self.eta.forward(x_c1)
        sg, s = self._scale(e)
        g = np.exp(s)
        r, crho = self.rho.forward(x_c1)
        x_l1 = x_l * g + r
        return x_c1, x_l1, (cphi, ceta, crho, x_l, sg, g)

    def backward(self, cache, dx_c1, dx_l1):
        cphi, ceta, crho, x_l, sg, g = cache
        dx_l = dx_l1 * g
        ds = dx_l1 * x_l * g
        de = ds * self.clamp * 2.0 * sg * (1.0 - sg)
        dx_c1 = dx_c1 + self.eta.backward(ceta, de) + self.rho.backward(crho, dx_l1)
        dx_l = dx_l + self.phi.backward(cphi, dx_c1)
        return dx_c1, dx_l

    def inverse(self, x_c1, x_l1):
        e, ceta = self.eta.forward(x_c1)
        sg, s = self._scale(e)
        ginv = np.exp(-s)
        r, crho = self.rho.forward(x_c1)
        x_l = (x_l1 - r) * ginv
        u, cphi = self.phi.forward(x_l)
        x_c = x_c1 - u
        return x_c, x_l, (cphi, ceta, crho, x_l1, r, sg, ginv)

    def inverse_backward(self, cache, dx_c, dx_l):
        cphi, ceta, crho, x_l1, r, sg, ginv = cache
        dxl_tot = dx_l + self.phi.backward(cphi, -dx_c)
        dx_l1 = dxl_tot * ginv
        ds = -dxl_tot * (x_l1 - r) * ginv
        de = ds * self.clamp * 2.0 * sg * (1.0 - sg)
        dx_c1 = dx_c + self.eta.backward(ceta, de) + self.rho.backward(crho, -dx_l1)
        return dx_c1, dx_l1


class PosteriorEstimator:
    """Predicts the reveal path's missing map-stream initialization.

    Local features come from residual blocks, non-local mixing from
    windowed channel attention, with the residual skip joining the two.
    Three learnable degradation prompts are blended by softmax weights
    pooled from the features, then a projection maps everything to the
    map-stream shape.
    """

    def __init__(self, cfg, rng=None, init_scale=1.0, name="pem"):
        c = cfg.stream_channels
        w = cfg.pem_width
        self.width = w
        self.conv_in = Conv2d(c, w, 3, rng, init_scale, f"{name}.conv_in")
        self.res = [
            ResBlock(w, rng, init_scale, f"{name}.res{i}") for i in range(cfg.pem_res_blocks)
        ]
        self.attn = [
            WindowChannelAttention(w, cfg.pem_window, rng, init_scale, f"{name}.attn{i}")
            for i in range(cfg.pem_attn_blocks)
        ]
        self.wp_conv = Conv2d(w, 3, 1, rng, init_scale, f"{name}.wp")
        if rng is None:
            prompts = np.zeros((3, cfg.prompt_dim))
        else:
            prompts = rng.standard_normal((3, cfg.prompt_dim)) * init_scale
        self.prompts = Param(prompts, f"{name}.prompts")
        self.proj = Conv2d(w + cfg.prompt_dim, c, 3, rng, init_scale, f"{name}.proj")

    def params(self):
        out = self.conv_in.params()
        for rb in self.res:
            out += rb.params()
        for ab in self.attn:
            out += ab.params()
        out += self.wp_conv.params()
        out.append(self.prompts)
        out += self.proj.params()
        return out

    def forward(self, z):
        """z: DWT-stacked received image, (N, H/2, W/2, 4C)."""
        pre, c_in = self.conv_in.forward(z)
        h = leaky_relu(pre)
        res_caches = []
        for rb in self.res:
            h, cc = rb.forward(h)
            res_caches.append(cc)
        h1 = h
        attn_caches = []
        h2 = h1
        for ab in self.attn:
            h2, cc = ab.forward(h2)
            attn_caches.append(cc)
        feat = h1 + h2
        logits_map, c_wp = self.wp_conv.forward(feat)
        n, hh, ww, _ = logits_map.shape
        logits = logits_map.mean(axis=(1, 2))
        w_p = softmax(logits, axis=-1)
        p = w_p @ self.prompts.value  # (N, prompt_dim)
        p_map = np.broadcast_to(p[:, None, None, :], (n, hh, ww, p.shape[-1]))
        fused = np.concatenate([feat, p_map], axis=-1)
        lat, c_proj = self.proj.forward(fused)
        cache = (c_in, pre, res_caches, attn_caches, c_wp, w_p, (n, hh, ww), c_proj)
        return lat, w_p, cache

    def backward(self, cache, dlat):
        c_in, pre, res_caches, attn_caches, c_wp, w_p, geom, c_proj = cache
        n, hh, ww = geom
        dfused = self.proj.backward(c_proj, dlat)
        dfeat = dfused[..., : self.width].copy()
        dp = dfused[..., self.width :].sum(axis=(1, 2))  # (N, prompt_dim)
        self.prompts.grad += w_p.T @ dp
        dw_p = dp @ self.prompts.value.T
        dlogits = softmax_grad(w_p, dw_p, axis=-1)
        dlogits_map = np.broadcast_to(
            dlogits[:, None, None, :] / (hh * ww), (n, hh, ww, 3)
        )
        dfeat += self.wp_conv.backward(c_wp, dlogits_map)
        dh2 = dfeat
        for ab, cc in zip(reversed(self.attn), reversed(attn_caches)):
            dh2 = ab.backward(cc, dh2)
        dh = dfeat + dh2
        for rb, cc in zip(reversed(self.res), reversed(res_caches)):
            dh = rb.backward(cc, dh)
        dpre = leaky_relu_grad(pre, dh)
        return self.conv_in.backward(c_in, dpre)


class InnModel:
    """Coupling-block stack plus posterior estimator."""

    def __init__(self, cfg, rng=None, init_scale=1.0):
        self.cfg = cfg
        self.blocks = [
            CouplingBlock(cfg, rng, init_scale, f"block{i}") for i in range(cfg.blocks)
        ]
        self.pem = PosteriorEstimator(cfg, rng, init_scale)

    def params(self):
        out = []
        for b in self.blocks:
            out += b.params()
        out += self.pem.params()
        return out

    def param_count(self):
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.grad[:] = 0.0


def randomize_params(model, rng, scale=0.5):
    """He-scaled random refill of every parameter; used by property tests.

    Unlike fresh construction this also randomizes the zero-initialized
    mixing layers, so coupling blocks stop being the identity.
    """
    for p in model.params():
        v = p.value
        if v.ndim >= 2:
            fan_in = int(np.prod(v.shape[:-1]))
            p.value[:] = rng.standard_normal(v.shape) * (scale * np.sqrt(2.0 / max(1, fan_in)))
        else:
            p.value[:] = rng.standard_normal(v.shape) * (0.1 * scale)


def default_train_init(model, rng, init_scale=0.5):
    """Structured training init: He weights with zeroed mix outputs.

    Freshly built models are all-zero; this re-rolls the inner layers so
    gradients flow while every coupling block still starts at identity
    (FeatureMix keeps its final 1x1 at zero).
    """
    tmp = InnModel(model.cfg, rng=rng, init_scale=init_scale)
    for dst, src in zip(model.params(), tmp.params()):
        dst.value[:] = src.value
    for block in model.blocks:
        for sub in (block.phi, block.eta, block.rho):
            sub.mix.out.w.value[:] = 0.0
            sub.mix.out.b.value[:] = 0.0


# ---------------------------------------------------------------------------
# stream-level transforms (batched, subband domain)
# ---------------------------------------------------------------------------


def couple_forward(model, x_c, x_l):
    """Run all blocks in embed order; returns final streams + caches."""
    caches = []
    for block in model.blocks:
        x_c, x_l, cc = block.forward(x_c, x_l)
        caches.append(cc)
    return x_c, x_l, caches


def couple_forward_backward(model, caches, dx_c, dx_l):
    for block, cc in zip(reversed(model.blocks), reversed(caches)):
        dx_c, dx_l = block.backward(cc, dx_c, dx_l)
    return dx_c, dx_l


def couple_inverse(model, x_c, x_l):
    """Run all blocks in reveal order (last block first, inverse algebra)."""
    caches = []
    for block in reversed(model.blocks):
        x_c, x_l, cc = block.inverse(x_c, x_l)
        caches.append(cc)
    return x_c, x_l, caches


def couple_inverse_backward(model, caches, dx_c, dx_l):
    for block, cc in zip(model.blocks, reversed(caches)):
        dx_c, dx_l = block.inverse_backward(cc, dx_c, dx_l)
    return dx_c, dx_l


# ---------------------------------------------------------------------------
# image-level operations
# ---------------------------------------------------------------------------


def _check_pipeline_image(img, name):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"{name} must be (H, W, C), got {img.shape}")
    if img.shape[0] % 2 or img.shape[1] % 2:
        raise ShapeError(f"{name} height/width must be even, got {img.shape[:2]}")
    return img


def embed(model, cover, location_map):
    """Hide the location map in the cover; returns the protected image."""
    cover = _check_pipeline_image(cover, "cover")
    location_map = _check_pipeline_image(location_map, "location map")
    if cover.shape != location_map.shape:
        raise ShapeError(f"cover {cover.shape} vs map {location_map.shape}")
    x_c = dwt_stack(cover[None])
    x_l = dwt_stack(location_map[None])
    x_c, _x_l, _ = couple_forward(model, x_c, x_l)
    h, w = cover.shape[:2]
    return np.clip(idwt_stack(x_c, h, w)[0], 0.0, 1.0)


def embed_with_streams(model, cover, location_map):
    """Like :func:`embed` but also returns the final subband streams.

    The transformed map stream is what the embed side normally discards;
    tests use it as the oracle initialization for the reveal direction.
    """
    cover = _check_pipeline_image(cover, "cover")
    location_map = _check_pipeline_image(location_map, "location map")
    x_c = dwt_stack(cover[None])
    x_l = dwt_stack(location_map[None])
    x_c, x_l, _ = couple_forward(model, x_c, x_l)
    h, w = cover.shape[:2]
    protected = np.clip(idwt_stack(x_c, h, w)[0], 0.0, 1.0)
    return protected, x_c, x_l


def estimate_posterior(pem, received):
    """Posterior latent for the map stream: (H/2, W/2, 4C)."""
    received = _check_pipeline_image(received, "received")
    lat, _w_p, _ = pem.forward(dwt_stack(received[None]))
    return lat[0]


def reveal(model, received):
    """Extract (recovered_map, recovered_cover) from a received image."""
    received = _check_pipeline_image(received, "received")
    z = dwt_stack(received[None])
    lat, _w_p, _ = model.pem.forward(z)
    x_c0, x_l0, _ = couple_inverse(model, z, lat)
    h, w = received.shape[:2]
    rec_map = np.clip(idwt_stack(x_l0, h, w)[0], 0.0, 1.0)
    rec_cover = np.clip(idwt_stack(x_c0, h, w)[0], 0.0, 1.0)
    return rec_map, rec_cover


def reveal_oracle(model, received, x_l_init):
    """Reveal with a caller-supplied map-stream initialization.

    Bypasses the posterior estimator; used to test the pure algebraic
    inverse and its locality.
    """
    received = _check_pipeline_image(received, "received")
    z = dwt_stack(received[None])
    x_c0, x_l0, _ = couple_inverse(model, z, x_l_init)
    h, w = received.shape[:2]
    rec_map = np.clip(idwt_stack(x_l0, h, w)[0], 0.0, 1.0)
    rec_cover = np.clip(idwt_stack(x_c0, h, w)[0], 0.0, 1.0)
    return rec_map, rec_cover


def oracle_locality_radius(cfg):
    """Image-space support radius of a reveal with oracle initialization.

    Each subnet is five 3x3 convs (radius 5 in subband space); walking the
    block stack grows the map stream's support by at most 10 per block.
    The trailing +2 covers the DWT/IDWT 2x2 block coupling.
    """
    return 2 * (10 * cfg.blocks - 5) + 2


# ---------------------------------------------------------------------------
# location maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocationMapPattern:
    """Deterministic generator spec for the pre-agreed payload image."""

    kind: str = "checkerboard"  # "checkerboard" | "solid"
    cell: int = 16
    color0: tuple = (0.0, 0.0, 0.0)
    color1: tuple = (1.0, 1.0, 1.0)

    def realize(self, height, width, channels=3):
        return realize_location_map(self, height, width, channels)


DEFAULT_MAP_PATTERN = LocationMapPattern()


def realize_location_map(pattern, height, width, channels=3):
    """Rasterize a map pattern; bit-identical for identical arguments."""
    if height % 2 or width % 2:
        raise ShapeError(f"map size must be even, got {height}x{width}")

    def as_channels(color):
        col = np.asarray(color, dtype=np.float64)
        if channels == 1:
            return np.array([col.mean()])
        return col[:channels]

    if pattern.kind == "solid":
        out = np.empty((height, width, channels))
        out[:] = as_channels(pattern.color0)
        return out
    if pattern.kind == "checkerboard":
        if pattern.cell <= 0:
            raise ValueError(f"cell must be positive, got {pattern.cell}")
        ys = np.arange(height)[:, None] // pattern.cell
        xs = np.arange(width)[None, :] // pattern.cell
        parity = ((ys + xs) % 2).astype(bool)
        out = np.empty((height, width, channels))
        out[~parity] = as_channels(pattern.color0)
        out[parity] = as_channels(pattern.color1)
        return out
    raise ValueError(f"unknown map pattern kind {pattern.kind!r}")


# ---------------------------------------------------------------------------
# checkpoint I/O: magic, version, config JSON, then float32 tensors
# ---------------------------------------------------------------------------


def save_model(model, path):
    cfg_bytes = json.dumps(asdict(model.cfg), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    for p in model.params():
        buf.write(p.value.astype("<f4").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", data, 6)
    off = 10
    cfg = InnConfig(**json.loads(data[off : off + cfg_len].decode("utf-8")))
    off += cfg_len
    model = InnModel(cfg)
    for p in model.params():
        nbytes = p.size * 4
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated parameter data")
        flat = np.frombuffer(data, dtype="<f4", count=p.size, offset=off)
        p.value[:] = flat.reshape(p.value.shape).astype(np.float64)
        off += nbytes
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return model
