"""Minimal hand-differentiated NN layers on float64 numpy arrays.

Activations flow as (N, H, W, C). Every layer implements

    forward(x)            -> (y, cache)
    backward(cache, dy)   -> dx          (parameter grads accumulate in place)

so inference is stateless and thread-safe while training stays
single-writer. All backward passes are checked against central finite
differences in the test suite; keep both directions in sync when editing.
"""

import numpy as np

LEAK = 0.2  # LeakyReLU slope inside dense blocks


class Param:
    """A learnable array plus its gradient accumulator."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def size(self):
        return self.value.size


def he_normal(rng, shape, fan_in, scale=1.0):
    return rng.standard_normal(shape) * (scale * np.sqrt(2.0 / max(1, fan_in)))


def leaky_relu(x):
    return np.where(x > 0.0, x, LEAK * x)


def leaky_relu_grad(x, dy):
    return np.where(x > 0.0, dy, LEAK * dy)


def sigmoid(x):
    # numerically stable split form
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_grad(y, dy, axis=-1):
    # y = softmax(x); dx = y * (dy - sum(dy * y))
    s = (dy * y).sum(axis=axis, keepdims=True)
    return y * (dy - s)


class Conv2d:
    """Odd-kernel, stride-1, zero-padded 'same' convolution via im2col."""

    def __init__(self, c_in, c_out, ksize=3, rng=None, init_scale=1.0, name="conv"):
        assert ksize % 2 == 1
        self.c_in, self.c_out, self.k = c_in, c_out, ksize
        fan_in = ksize * ksize * c_in
        if rng is None:
            w = np.zeros((ksize, ksize, c_in, c_out))
        else:
            w = he_normal(rng, (ksize, ksize, c_in, c_out), fan_in, init_scale)
        self.w = Param(w, f"{name}.w")
        self.b = Param(np.zeros(c_out), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def _im2col(self, x):
        k, p = self.k, self.k // 2
        if k == 1:
            n, h, w, c = x.shape
            return x.reshape(n * h * w, c)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        # win: (N, H, W, C, k, k) -> (N*H*W, k*k*C) matching w.reshape(k*k*C, -1)
        n, h, w = x.shape[:3]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * self.c_in)
        return np.ascontiguousarray(cols)

    def forward(self, x):
        n, h, w, _ = x.shape
        cols = self._im2col(x)
        y = cols @ self.w.value.reshape(-1, self.c_out) + self.b.value
        return y.reshape(n, h, w, self.c_out), x

    def backward(self, cache, dy):
        x = cache
        n, h, w, _ = x.shape
        dy_flat = dy.reshape(n * h * w, self.c_out)
        cols = self._im2col(x)
        self.w.grad += (cols.T @ dy_flat).reshape(self.w.value.shape)
        self.b.grad += dy_flat.sum(axis=0)
        if self.k == 1:
            dx = dy_flat @ self.w.value.reshape(self.c_in, self.c_out).T
            return dx.reshape(x.shape)
        # dx = same-pad conv of dy with the 180-degree-rotated, io-swapped kernel
        w_rot = self.w.value[::-1, ::-1].transpose(0, 1, 3, 2)
        k, p = self.k, self.k // 2
        dyp = np.pad(dy, ((0, 0), (p, p), (p, p), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(dyp, (k, k), axis=(1, 2))
        cols_dy = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * self.c_out)
        dx = np.ascontiguousarray(cols_dy) @ w_rot.reshape(-1, self.c_in)
        return dx.reshape(x.shape)


class DenseBlock5:
    """Five stacked 3x3 convolutions with dense (concatenated) skips.

    Layers 1-4 emit ``growth`` channels through LeakyReLU; layer 5 is a
    linear projection to ``c_mid`` channels.
    """

    def __init__(self, c_in, c_mid, growth, rng=None, init_scale=1.0, name="dense"):
        self.convs = []
        c = c_in
        for i in range(4):
            self.convs.append(Conv2d(c, growth, 3, rng, init_scale, f"{name}.conv{i + 1}"))
            c += growth
        self.convs.append(Conv2d(c, c_mid, 3, rng, init_scale, f"{name}.conv5"))

    def params(self):
        return [p for conv in self.convs for p in conv.params()]

    def forward(self, x):
        feats = [x]
        caches = []
        for conv in self.convs[:4]:
            inp = np.concatenate(feats, axis=-1)
            pre, cc = conv.forward(inp)
            caches.append((cc, pre))
            feats.append(leaky_relu(pre))
        inp = np.concatenate(feats, axis=-1)
        y, cc = self.convs[4].forward(inp)
        caches.append((cc, None))
        return y, (caches, [f.shape[-1] for f in feats])

    def backward(self, cache, dy):
        caches, widths = cache
        # accumulated gradient for each concatenated feature slot;
        # conv i consumed only the first i+1 slots
        dfeats = [None] * len(widths)

        def add_split(dinp, nslots):
            off = 0
            for i in range(nslots):
                piece = dinp[..., off : off + widths[i]]
                dfeats[i] = piece if dfeats[i] is None else dfeats[i] + piece
                off += widths[i]

        cc, _ = caches[4]
        add_split(self.convs[4].backward(cc, dy), 5)
        for i in range(3, -1, -1):
            cc, pre = caches[i]
            dpre = leaky_relu_grad(pre, dfeats[i + 1])
            add_split(self.convs[i].backward(cc, dpre), i + 1)
        return dfeats[0]


class FeatureMix:
    """Pointwise feature-interaction head: gate product then 1x1 mix.

    The final 1x1 conv is zero-initialized, so a freshly built subnet is
    the zero function and the enclosing coupling block starts at identity.
    """

    def __init__(self, c_mid, c_out, rng=None, init_scale=1.0, name="mix"):
        self.pre = Conv2d(c_mid, 2 * c_out, 1, rng, init_scale, f"{name}.pre")
        self.out = Conv2d(c_out, c_out, 1, None, name=f"{name}.out")  # zero init
        self.c_out = c_out

    def params(self):
        return self.pre.params() + self.out.params()

    def forward(self, x):
        ab, c1 = self.pre.forward(x)
        a, b = ab[..., : self.c_out], ab[..., self.c_out :]
        prod = a * b
        y, c2 = self.out.forward(prod)
        return y, (c1, a, b, c2)

    def backward(self, cache, dy):
        c1, a, b, c2 = cache
        dprod = self.out.backward(c2, dy)
        dab = np.concatenate([dprod * b, dprod * a], axis=-1)
        return self.pre.backward(c1, dab)


class Subnet:
    """Coupling-block transform: five-layer dense block + pointwise mix."""

    def __init__(self, c_in, c_out, growth, c_mid=None, rng=None, init_scale=1.0, name="subnet"):
        c_mid = c_out if c_mid is None else c_mid
        self.dense = DenseBlock5(c_in, c_mid, growth, rng, init_scale, f"{name}.dense")
        self.mix = FeatureMix(c_mid, c_out, rng, init_scale, f"{name}.mix")

    def params(self):
        return self.dense.params() + self.mix.params()

    def forward(self, x):
        h, c1 = self.dense.forward(x)
        y, c2 = self.mix.forward(h)
        return y, (c1, c2)

    def backward(self, cache, dy):
        c1, c2 = cache
        dh = self.mix.backward(c2, dy)
        return self.dense.backward(c1, dh)


class ResBlock:
    """x + conv(lrelu(conv(x))), 3x3 kernels, fixed width."""

    def __init__(self, width, rng=None, init_scale=1.0, name="res"):
        self.conv1 = Conv2d(width, width, 3, rng, init_scale, f"{name}.conv1")
        self.conv2 = Conv2d(width, width, 3, rng, init_scale, f"{name}.conv2")

    def params(self):
        return self.conv1.params() + self.conv2.params()

    def forward(self, x):
        pre, c1 = self.conv1.forward(x)
        h = leaky_relu(pre)
        r, c2 = self.conv2.forward(h)
        return x + r, (c1, pre, c2)

    def backward(self, cache, dy):
        c1, pre, c2 = cache
        dh = self.conv2.backward(c2, dy)
        dpre = leaky_relu_grad(pre, dh)
        return dy + self.conv1.backward(c1, dpre)


class WindowChannelAttention:
    """Channel-to-channel attention within non-overlapping spatial windows.

    Per window, tokens are channels observed over the window's pixels:
    A = softmax(Q^T K / L) mixes value channels. Spatial layout inside a
    window passes through untouched, which keeps the receptive field
    bounded by the window, and the whole block is residual.
    """

    def __init__(self, width, window=8, rng=None, init_scale=1.0, name="attn"):
        self.width = width
        self.window = window
        shape = (width, width)
        if rng is None:
            mats = [np.zeros(shape) for _ in range(4)]
        else:
            mats = [he_normal(rng, shape, width, init_scale) for _ in range(4)]
        self.wq = Param(mats[0], f"{name}.wq")
        self.wk = Param(mats[1], f"{name}.wk")
        self.wv = Param(mats[2], f"{name}.wv")
        self.wo = Param(mats[3], f"{name}.wo")

    def params(self):
        return [self.wq, self.wk, self.wv, self.wo]

    def _tile(self, x):
        n, h, w, c = x.shape
        ws = self.window
        ph, pw = (-h) % ws, (-w) % ws
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)))
        hh, ww = x.shape[1], x.shape[2]
        t = x.reshape(n, hh // ws, ws, ww // ws, ws, c)
        t = t.transpose(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)
        return np.ascontiguousarray(t), (n, h, w, hh, ww)

    def _untile(self, t, geom):
        n, h, w, c = geom[0], geom[1], geom[2], t.shape[-1]
        hh, ww = geom[3], geom[4]
        ws = self.window
        x = t.reshape(n, hh // ws, ww // ws, ws, ws, c)
        x = x.transpose(0, 1, 3, 2, 4, 5).reshape(n, hh, ww, c)
        return x[:, :h, :w, :]

    def forward(self, x):
        t, geom = self._tile(x)
        L = t.shape[1]
        q = t @ self.wq.value
        k = t @ self.wk.value
        v = t @ self.wv.value
        s = np.einsum("blc,bld->bcd", q, k) / L
        a = softmax(s, axis=-1)
        y = np.einsum("blj,bij->bli", v, a)
        out = y @ self.wo.value
        return x + self._untile(out, geom), (t, q, k, v, a, geom)

    def backward(self, cache, dy):
        t, q, k, v, a, geom = cache
        L = t.shape[1]
        dout, _ = self._tile(dy)  # same zero padding as forward
        dyy = dout @ self.wo.value.T
        self.wo.grad += np.einsum("bli,blo->io", np.einsum("blj,bij->bli", v, a), dout)
        dv = np.einsum("bli,bij->blj", dyy, a)
        da = np.einsum("bli,blj->bij", dyy, v)
        ds = softmax_grad(a, da, axis=-1) / L
        dq = np.einsum("bcd,bld->blc", ds, k)
        dk = np.einsum("bcd,blc->bld", ds, q)
        dt = dq @ self.wq.value.T + dk @ self.wk.value.T + dv @ self.wv.value.T
        self.wq.grad += np.einsum("blc,bld->cd", t, dq)
        self.wk.grad += np.einsum("blc,bld->cd", t, dk)
        self.wv.grad += np.einsum("blc,bld->cd", t, dv)
        return dy + self._untile(dt, geom)


def l2_norm_params(layers):
    return float(np.sqrt(sum(float((p.value**2).sum()) for l in layers for p in l.params())))
