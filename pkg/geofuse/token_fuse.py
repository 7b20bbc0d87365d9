import functools
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Protocol, Tuple, Union

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .sampling import SplitMix64

logger = logging.getLogger(__name__)

LOCATION_DIM = 256
DEFAULT_TOKEN_DIM = 768
DEFAULT_PATCH_SIZE = 8
LAYER_NORM_EPS = 1e-5

# stub basis: 128 (cos, sin) pairs at geometric frequencies
_STUB_PAIRS = LOCATION_DIM // 2
_STUB_MIN_FREQ = 1.0
_STUB_MAX_FREQ = 32.0


class LocationEncoder(Protocol):
    @property
    def frozen(self) -> bool:
        ...

    @property
    def descriptor(self) -> str:
        ...

    def encode(self, lat: float, lon: float) -> np.ndarray:
        ...


def _check_coordinates(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
        raise ParameterError(f"Location: Latitude out of range ({lat})")
    if not (math.isfinite(lon) and -180.0 < lon <= 180.0):
        raise ParameterError(f"Location: Longitude out of range ({lon})")


@functools.lru_cache(maxsize=16)
def _stub_basis(seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = SplitMix64(seed)
    directions = np.empty((_STUB_PAIRS, 3), dtype=np.float64)
    for k in range(_STUB_PAIRS):
        # uniform on the sphere: z uniform in [-1, 1], azimuth uniform
        z = 2.0 * rng.next_float() - 1.0
        phi = 2.0 * math.pi * rng.next_float()
        r = math.sqrt(max(0.0, 1.0 - z * z))
        directions[k] = (r * math.cos(phi), r * math.sin(phi), z)

    ratio = math.log(_STUB_MAX_FREQ / _STUB_MIN_FREQ) / (_STUB_PAIRS - 1)
    frequencies = _STUB_MIN_FREQ * np.exp(np.arange(_STUB_PAIRS) * ratio)
    directions.flags.writeable = False
    frequencies.flags.writeable = False
    return directions, frequencies


def encode_location_stub(lat: float, lon: float, seed: int = 0) -> np.ndarray:
    """Deterministic smooth 256-d unit embedding of a coordinate.

    Random Fourier features of the 3-D unit vector of (lat, lon): nearby points get
    nearly identical vectors, distant points nearly orthogonal ones.
    """
    _check_coordinates(lat, lon)
    directions, frequencies = _stub_basis(seed)

    phi, lam = math.radians(lat), math.radians(lon)
    point = np.array(
        [math.cos(phi) * math.cos(lam), math.cos(phi) * math.sin(lam), math.sin(phi)]
    )
    phase = frequencies * (directions @ point)

    out = np.empty(LOCATION_DIM, dtype=np.float64)
    out[0::2] = np.cos(phase)
    out[1::2] = np.sin(phase)
    return out / np.linalg.norm(out)


@dataclass(frozen=True)
class StubLocationEncoder:
    seed: int = 0
    frozen: bool = True

    @property
    def descriptor(self) -> str:
        return f"fourier-sphere-stub/1 seed={self.seed}"

    def encode(self, lat: float, lon: float) -> np.ndarray:
        return encode_location_stub(lat, lon, seed=self.seed)


@dataclass(frozen=True)
class Projection:
    """Linear map of a location embedding to token width: vec @ weights + bias."""

    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"Projection: Shapes {self.weights.shape} / {self.bias.shape} disagree"
            )
        if self.weights.shape[1] <= 0:
            raise ShapeError("Projection: Output dimension must be > 0")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise DataError("Projection: Non-finite weights")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    @classmethod
    def initialize(
        cls, dim: int = DEFAULT_TOKEN_DIM, seed: int = 0, in_dim: int = LOCATION_DIM
    ) -> "Projection":
        if dim <= 0 or in_dim <= 0:
            raise ParameterError(
                f"Projection: Invalid dimensions ({in_dim} -> {dim})"
            )
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(in_dim)
        return cls(
            weights=rng.uniform(-bound, bound, size=(in_dim, dim)),
            bias=rng.uniform(-bound, bound, size=dim),
        )


def project_embedding(vec: np.ndarray, proj: Projection) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (proj.weights.shape[0],):
        raise ShapeError(
            f"Projection: Input length {vec.shape} != {proj.weights.shape[0]}"
        )
    return vec @ proj.weights + proj.bias


@dataclass(frozen=True)
class PatchEmbedding:
    """Linear patch embedding; rows of `weights` follow (channel, row, col) order."""

    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    @classmethod
    def initialize(
        cls, channels: int, patch: int, dim: int = DEFAULT_TOKEN_DIM, seed: int = 0
    ) -> "PatchEmbedding":
        if channels <= 0 or patch <= 0 or dim <= 0:
            raise ParameterError(
                "PatchEmbedding: Invalid size "
                f"(channels={channels}, patch={patch}, dim={dim})"
            )
        rng = np.random.default_rng(seed)
        fan_in = channels * patch * patch
        bound = 1.0 / math.sqrt(fan_in)
        return cls(
            weights=rng.uniform(-bound, bound, size=(fan_in, dim)),
            bias=rng.uniform(-bound, bound, size=dim),
        )


def patchify(
    image: np.ndarray,
    patch: int = DEFAULT_PATCH_SIZE,
    embed: Optional[PatchEmbedding] = None,
) -> np.ndarray:
    """Split a C x H x W image into raster-ordered patches and embed them (N x D).

    Without `embed` the flattened patches themselves are returned.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"Patchify: Expected C x H x W ({image.shape})")
    if patch <= 0:
        raise ParameterError(f"Patchify: Invalid patch size ({patch})")
    channels, height, width = image.shape
    if height % patch != 0 or width % patch != 0:
        raise ShapeError(
            f"Patchify: {height}x{width} is not divisible by patch size {patch}"
        )

    rows, cols = height // patch, width // patch
    flat = (
        image.reshape(channels, rows, patch, cols, patch)
        .transpose(1, 3, 0, 2, 4)
        .reshape(rows * cols, channels * patch * patch)
    )
    if embed is None:
        return flat
    if embed.weights.shape[0] != flat.shape[1]:
        raise ShapeError(
            f"Patchify: Embedding expects {embed.weights.shape[0]} inputs, "
            f"patches have {flat.shape[1]}"
        )
    return flat @ embed.weights + embed.bias


@dataclass(frozen=True)
class TokenSequence:
    """Rows ordered [cls; loc; patches; registers]; z0 = tokens + pos_embed[ids]."""

    tokens: np.ndarray = field(repr=False)
    positional_ids: np.ndarray
    z0: np.ndarray = field(repr=False)
    n_patches: int
    n_registers: int
    has_loc: bool

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def x_cls(self) -> np.ndarray:
        return self.tokens[0]

    @property
    def x_loc(self) -> Optional[np.ndarray]:
        return self.tokens[1] if self.has_loc else None

    @property
    def x_patch(self) -> np.ndarray:
        start = 2 if self.has_loc else 1
        return self.tokens[start : start + self.n_patches]

    @property
    def registers(self) -> np.ndarray:
        return self.tokens[len(self) - self.n_registers :]


def init_registers(count: int, dim: int, seed: int = 0) -> np.ndarray:
    if count < 0:
        raise ParameterError(f"Registers: Invalid count ({count})")
    if dim <= 0:
        raise ParameterError(f"Registers: Invalid dimension ({dim})")
    return np.random.default_rng(seed).standard_normal((count, dim))


def init_pos_embed(length: int, dim: int, seed: int = 0) -> np.ndarray:
    if length <= 0 or dim <= 0:
        raise ParameterError(f"PosEmbed: Invalid shape ({length}, {dim})")
    return 0.02 * np.random.default_rng(seed).standard_normal((length, dim))


def positional_ids(n_patches: int, has_loc: bool, n_registers: int) -> np.ndarray:
    """cls -> 0, patches -> 1..N, loc -> N+1, registers after."""
    ids = [0]
    if has_loc:
        ids.append(n_patches + 1)
    ids.extend(range(1, n_patches + 1))
    first_register = n_patches + 2 if has_loc else n_patches + 1
    ids.extend(range(first_register, first_register + n_registers))
    return np.array(ids, dtype=np.int64)


def build_token_sequence(
    patches: np.ndarray,
    cls: np.ndarray,
    pos_embed: np.ndarray,
    loc256: Optional[np.ndarray] = None,
    proj: Optional[Projection] = None,
    registers: Optional[np.ndarray] = None,
) -> TokenSequence:
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    n_patches, dim = patches.shape
    cls = np.asarray(cls, dtype=np.float64)
    if cls.shape != (dim,):
        raise ShapeError(f"Tokens: Class token shape {cls.shape} != ({dim},)")

    rows = [cls[None, :]]
    has_loc = loc256 is not None
    if has_loc:
        if proj is None:
            raise ParameterError("Tokens: A location embedding needs a projection")
        if proj.dim != dim:
            raise ShapeError(
                f"Tokens: Projection width {proj.dim} != token width {dim}"
            )
        rows.append(project_embedding(np.asarray(loc256), proj)[None, :])
    rows.append(patches)

    n_registers = 0
    if registers is not None:
        registers = np.atleast_2d(np.asarray(registers, dtype=np.float64))
        if registers.shape[0] > 0:
            if registers.shape[1] != dim:
                raise ShapeError(
                    f"Tokens: Register width {registers.shape[1]} != token width {dim}"
                )
            rows.append(registers)
            n_registers = registers.shape[0]

    tokens = np.concatenate(rows, axis=0)
    ids = positional_ids(n_patches, has_loc, n_registers)

    pos_embed = np.asarray(pos_embed, dtype=np.float64)
    if pos_embed.ndim != 2 or pos_embed.shape[1] != dim:
        raise ShapeError(f"Tokens: Positional table shape {pos_embed.shape} invalid")
    if pos_embed.shape[0] <= int(ids.max()):
        raise ShapeError(
            f"Tokens: Positional table has {pos_embed.shape[0]} rows, "
            f"needs {int(ids.max()) + 1}"
        )

    return TokenSequence(
        tokens=tokens,
        positional_ids=ids,
        z0=tokens + pos_embed[ids],
        n_patches=n_patches,
        n_registers=n_registers,
        has_loc=has_loc,
    )


@dataclass(frozen=True)
class EncoderBlockWeights:
    """Pre-norm block: single-head attention and a GELU MLP, each residual."""

    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.w_q.shape[0])

    @property
    def hidden(self) -> int:
        return int(self.w_1.shape[1])

    def check(self) -> None:
        d, hidden = self.dim, self.hidden
        expected = {
            "ln1_gamma": (d,),
            "ln1_beta": (d,),
            "w_q": (d, d),
            "b_q": (d,),
            "w_k": (d, d),
            "b_k": (d,),
            "w_v": (d, d),
            "b_v": (d,),
            "w_o": (d, d),
            "b_o": (d,),
            "ln2_gamma": (d,),
            "ln2_beta": (d,),
            "w_1": (d, hidden),
            "b_1": (hidden,),
            "w_2": (hidden, d),
            "b_2": (d,),
        }
        for name, shape in expected.items():
            actual = np.shape(getattr(self, name))
            if actual != shape:
                raise ShapeError(
                    f"EncoderBlock: {name} has shape {actual}, expected {shape}"
                )

    @classmethod
    def initialize(cls, dim: int, hidden: int, seed: int = 0) -> "EncoderBlockWeights":
        rng = np.random.default_rng(seed)

        def dense(n_in: int, n_out: int) -> np.ndarray:
            return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

        return cls(
            ln1_gamma=1.0 + 0.1 * rng.standard_normal(dim),
            ln1_beta=0.1 * rng.standard_normal(dim),
            w_q=dense(dim, dim),
            b_q=0.1 * rng.standard_normal(dim),
            w_k=dense(dim, dim),
            b_k=0.1 * rng.standard_normal(dim),
            w_v=dense(dim, dim),
            b_v=0.1 * rng.standard_normal(dim),
            w_o=dense(dim, dim),
            b_o=0.1 * rng.standard_normal(dim),
            ln2_gamma=1.0 + 0.1 * rng.standard_normal(dim),
            ln2_beta=0.1 * rng.standard_normal(dim),
            w_1=dense(dim, hidden),
            b_1=0.1 * rng.standard_normal(hidden),
            w_2=dense(hidden, dim),
            b_2=0.1 * rng.standard_normal(dim),
        )

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "EncoderBlockWeights":
        """Zero attention and MLP weights; the block reduces to its residual path."""
        return cls(
            ln1_gamma=np.ones(dim),
            ln1_beta=np.zeros(dim),
            w_q=np.zeros((dim, dim)),
            b_q=np.zeros(dim),
            w_k=np.zeros((dim, dim)),
            b_k=np.zeros(dim),
            w_v=np.zeros((dim, dim)),
            b_v=np.zeros(dim),
            w_o=np.zeros((dim, dim)),
            b_o=np.zeros(dim),
            ln2_gamma=np.ones(dim),
            ln2_beta=np.zeros(dim),
            w_1=np.zeros((dim, hidden)),
            b_1=np.zeros(hidden),
            w_2=np.zeros((hidden, dim)),
            b_2=np.zeros(dim),
        )

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def _layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray
) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(variance + LAYER_NORM_EPS)
    xhat = centered * rstd
    return xhat * gamma + beta, (xhat, rstd)


def _layer_norm_backward(
    dy: np.ndarray, gamma: np.ndarray, cache: Tuple[np.ndarray, np.ndarray]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, rstd = cache
    dxhat = dy * gamma
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(u: np.ndarray) -> np.ndarray:
    """tanh approximation of GELU."""
    return 0.5 * u * (1.0 + np.tanh(_GELU_C * (u + _GELU_K * u**3)))


def gelu_grad(u: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (u + _GELU_K * u**3))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (
        1.0 + 3.0 * _GELU_K * u * u
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_matrix(
    seq: Union[TokenSequence, np.ndarray], weights: EncoderBlockWeights
) -> np.ndarray:
    x = seq.z0 if isinstance(seq, TokenSequence) else np.asarray(seq, dtype=np.float64)
    weights.check()
    if x.ndim != 2 or x.shape[1] != weights.dim:
        raise ShapeError(
            f"EncoderBlock: Tokens {x.shape} do not match block width {weights.dim}"
        )
    if not np.all(np.isfinite(x)):
        raise DataError("EncoderBlock: Non-finite token values")
    return x


def _forward(x: np.ndarray, w: EncoderBlockWeights) -> Tuple[np.ndarray, dict]:
    h1, ln1 = _layer_norm(x, w.ln1_gamma, w.ln1_beta)
    q = h1 @ w.w_q + w.b_q
    k = h1 @ w.w_k + w.b_k
    v = h1 @ w.w_v + w.b_v
    scale = 1.0 / math.sqrt(w.dim)
    attn = _softmax((q @ k.T) * scale)
    o = attn @ v
    x1 = x + o @ w.w_o + w.b_o

    h2, ln2 = _layer_norm(x1, w.ln2_gamma, w.ln2_beta)
    u = h2 @ w.w_1 + w.b_1
    g = gelu(u)
    out = x1 + g @ w.w_2 + w.b_2

    cache = dict(
        h1=h1,
        ln1=ln1,
        q=q,
        k=k,
        v=v,
        scale=scale,
        attn=attn,
        o=o,
        h2=h2,
        ln2=ln2,
        u=u,
        g=g,
    )
    return out, cache


def attention_weights(
    seq: Union[TokenSequence, np.ndarray], weights: EncoderBlockWeights
) -> np.ndarray:
    x = _as_matrix(seq, weights)
    return _forward(x, weights)[1]["attn"]


def encoder_block_forward(
    seq: Union[TokenSequence, np.ndarray], weights: EncoderBlockWeights
) -> np.ndarray:
    x = _as_matrix(seq, weights)
    return _forward(x, weights)[0]


def encoder_block_backward(
    seq: Union[TokenSequence, np.ndarray],
    weights: EncoderBlockWeights,
    grad_out: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, EncoderBlockWeights]:
    """Gradients of sum(grad_out * forward(x)) w.r.t. the tokens and every weight.

    `grad_out` defaults to ones, i.e. the gradient of the output sum.
    """
    x = _as_matrix(seq, weights)
    w = weights
    out, c = _forward(x, w)
    if grad_out is None:
        dout = np.ones_like(out)
    else:
        dout = np.asarray(grad_out, dtype=np.float64)
    if dout.shape != out.shape:
        raise ShapeError(f"EncoderBlock: grad_out {dout.shape} != output {out.shape}")

    # MLP branch
    d_w2 = c["g"].T @ dout
    d_b2 = dout.sum(axis=0)
    du = (dout @ w.w_2.T) * gelu_grad(c["u"])
    d_w1 = c["h2"].T @ du
    d_b1 = du.sum(axis=0)
    dx1_ln, d_ln2_gamma, d_ln2_beta = _layer_norm_backward(
        du @ w.w_1.T, w.ln2_gamma, c["ln2"]
    )
    dx1 = dout + dx1_ln

    # attention branch
    d_wo = c["o"].T @ dx1
    d_bo = dx1.sum(axis=0)
    do = dx1 @ w.w_o.T
    attn = c["attn"]
    d_attn = do @ c["v"].T
    dv = attn.T @ do
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    dq = d_scores @ c["k"] * c["scale"]
    dk = d_scores.T @ c["q"] * c["scale"]

    h1 = c["h1"]
    dh1 = dq @ w.w_q.T + dk @ w.w_k.T + dv @ w.w_v.T
    dx_ln, d_ln1_gamma, d_ln1_beta = _layer_norm_backward(dh1, w.ln1_gamma, c["ln1"])

    grads = EncoderBlockWeights(
        ln1_gamma=d_ln1_gamma,
        ln1_beta=d_ln1_beta,
        w_q=h1.T @ dq,
        b_q=dq.sum(axis=0),
        w_k=h1.T @ dk,
        b_k=dk.sum(axis=0),
        w_v=h1.T @ dv,
        b_v=dv.sum(axis=0),
        w_o=d_wo,
        b_o=d_bo,
        ln2_gamma=d_ln2_gamma,
        ln2_beta=d_ln2_beta,
        w_1=d_w1,
        b_1=d_b1,
        w_2=d_w2,
        b_2=d_b2,
    )
    return dx1 + dx_ln, grads
