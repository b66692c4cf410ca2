"""Dense-tensor substrate: conv2d, pooling, upsampling, matvec, seeded RNG.

Tensors are plain numpy arrays. The engine runs in float32 throughout;
every operation here preserves the dtype of its inputs, so numerical
probes (finite differences, oracle comparisons) can run the same code in
float64.

The RNG is counter-based splitmix64: draw number i of a stream with seed s
is ``mix64(s + (i + 1) * GOLDEN)`` where ``mix64`` is the splitmix64
xorshift-multiply finalizer. The stream depends only on the seed and the
draw index, never on block sizes, so it is bit-reproducible across
platforms and call patterns.
"""

from __future__ import annotations

import hashlib

import numpy as np

DTYPE = np.float32

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays (wrapping)."""
    with np.errstate(over="ignore"):
        z = z.copy()
        z ^= z >> np.uint64(30)
        z *= _MIX1
        z ^= z >> np.uint64(27)
        z *= _MIX2
        z ^= z >> np.uint64(31)
    return z


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit seed from a tuple of ints/strings (blake2b based).

    Used to give every sub-stream (per layer, per sample, per epoch) an
    independent seed derived from the global one, independent of call order.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            b = p.encode("utf-8")
            h.update(len(b).to_bytes(4, "little"))
            h.update(b)
        else:
            h.update(int(p).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Deterministic counter-based splitmix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit draws."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GOLDEN
        return _mix64(z)

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        """i.i.d. float32 uniforms in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got lo={lo}, hi={hi}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        bits = self.u64(n)
        # top 24 bits -> exact float32 in [0, 1)
        u = (bits >> np.uint64(40)).astype(np.float32) * np.float32(2.0**-24)
        lo32 = np.float32(lo)
        hi32 = np.float32(hi)
        out = lo32 + (hi32 - lo32) * u
        # guard against rounding up to hi at the top of the range
        out = np.minimum(out, np.nextafter(hi32, lo32))
        return out.reshape(shape) if shape else out[0]

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n) (argsort of raw 64-bit keys)."""
        return np.argsort(self.u64(n), kind="stable")

    def split(self, *parts: int | str) -> "Rng":
        """Independent child stream keyed by (seed, *parts)."""
        return Rng(derive_seed(self.seed, *parts))


def rng_uniform(rng: Rng, lo: float, hi: float, shape=()) -> np.ndarray:
    return rng.uniform(lo, hi, shape)


def _check_image(x: np.ndarray, ndim_ok=(3, 4), name="input") -> None:
    if x.ndim not in ndim_ok:
        raise ValueError(f"{name} must have ndim in {ndim_ok}, got shape {x.shape}")


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Window matrix [N*Hout*Wout, Cin*k*k] of a [N,C,H,W] tensor.

    Built with k*k slab copies into GEMM-ready layout; much faster than
    copying a 6-D strided window view.
    """
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = x.shape
    hout = (h - k) // stride + 1
    wout = (w - k) // stride + 1
    cols = np.empty((n, hout, wout, c, k, k), dtype=x.dtype)
    for ky in range(k):
        ye = ky + (hout - 1) * stride + 1
        for kx in range(k):
            xe = kx + (wout - 1) * stride + 1
            cols[:, :, :, :, ky, kx] = x[:, :, ky:ye:stride, kx:xe:stride].transpose(
                0, 2, 3, 1
            )
    return cols.reshape(n * hout * wout, c * k * k)


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation (no kernel flip) with zero padding.

    x: [Cin,H,W] or [N,Cin,H,W]; weight: [Cout,Cin,k,k]; bias: [Cout] or None.
    """
    _check_image(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    cout, cin, kh, kw = weight.shape
    if kh != kw:
        raise ValueError(f"kernel must be square, got {kh}x{kw}")
    if kh % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {kh}")
    if stride < 1 or padding < 0:
        raise ValueError(f"bad stride/padding: stride={stride}, padding={padding}")
    if x.shape[1] != cin:
        raise ValueError(
            f"input channels {x.shape[1]} (input shape {x.shape}) do not match "
            f"weight Cin {cin} (weight shape {weight.shape})"
        )
    n, _, h, w = x.shape
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise ValueError(f"empty conv output for input {x.shape} kernel {kh}")
    cols = _im2col(x, kh, stride, padding)
    out = cols @ weight.reshape(cout, cin * kh * kw).T
    out = np.ascontiguousarray(out.reshape(n, hout, wout, cout).transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias[:, None, None]
    return out[0] if squeeze else out


def maxpool2d(x: np.ndarray, k: int = 2, stride: int = 2) -> np.ndarray:
    """Non-overlapping max pooling; H and W must divide by k."""
    if stride != k:
        raise ValueError(f"only stride == k pooling is supported, got k={k} stride={stride}")
    _check_image(x)
    h, w = x.shape[-2], x.shape[-1]
    if h % k:
        raise ValueError(f"height {h} not divisible by pooling size {k}")
    if w % k:
        raise ValueError(f"width {w} not divisible by pooling size {k}")
    if k == 2:  # hot path: pairwise maxima beat a two-axis reduction
        a = np.maximum(x[..., 0::2, 0::2], x[..., 0::2, 1::2])
        b = np.maximum(x[..., 1::2, 0::2], x[..., 1::2, 1::2])
        return np.maximum(a, b)
    shape = x.shape[:-2] + (h // k, k, w // k, k)
    return x.reshape(shape).max(axis=(-3, -1))


def maxpool2d_scatter(x: np.ndarray, grad_out: np.ndarray, k: int = 2) -> np.ndarray:
    """Adjoint of maxpool2d: route grad_out to the first max of each window.

    Ties resolve to the earliest row-major position, matching argmax.
    """
    _check_image(x)
    if k != 2:
        raise ValueError(f"only 2x2 pooling scatter is supported, got k={k}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    win_a = (a >= b) & (a >= c) & (a >= d)
    win_b = (b > a) & (b >= c) & (b >= d)
    win_c = (c > a) & (c > b) & (c >= d)
    win_d = (d > a) & (d > b) & (d > c)
    out = np.zeros_like(x)
    out[..., 0::2, 0::2] = grad_out * win_a
    out[..., 0::2, 1::2] = grad_out * win_b
    out[..., 1::2, 0::2] = grad_out * win_c
    out[..., 1::2, 1::2] = grad_out * win_d
    return out


def upsample_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Replicate each cell into a factor x factor block."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    _check_image(x)
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_nearest_adjoint(grad_out: np.ndarray, factor: int = 2) -> np.ndarray:
    """Adjoint of upsample_nearest: sum each factor x factor block."""
    _check_image(grad_out)
    h, w = grad_out.shape[-2], grad_out.shape[-1]
    shape = grad_out.shape[:-2] + (h // factor, factor, w // factor, factor)
    return grad_out.reshape(shape).sum(axis=(-3, -1))


def matvec(weight: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = weight @ x; x may be [N] or batched [B,N] (returns [B,M])."""
    if weight.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"matvec dimension mismatch: weight {weight.shape} vs x {x.shape}"
        )
    return x @ weight.T
