"""Decoder families over 200 ms EEG windows.

Five families share one window contract (20 time-major samples x C channels,
scalar speed out): a linear readout, a bagged CART forest, a feedforward net
on the flattened window, a single-layer LSTM over the 20 steps, and a one-
block encoder-style transformer (token projection, sinusoidal positions,
bidirectional multi-head attention, a width-3 convolution over tokens, dense
head). All trainable families run on the package's own autodiff graph; the
forest is fitted greedily and wrapped behind the same predict surface.

Body/head naming is load-bearing: parameters prefixed ``head.`` form the
final dense stack and are the only ones updated when fine-tuning with a
frozen body. Stored model files hold float32 tensors, so finished decoders
are quantized to float32-representable values once at the end of training;
save -> load -> predict is then bitwise reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ModelLoadError, SpecMismatchError
from .forest import Forest, ForestSpec, Tree, forest_fit, forest_predict
from .sessions import WINDOW_LEN, WindowView

FAMILIES = (
    "linear",
    "random_forest",
    "ffnn",
    "lstm_rnn",
    "transformer_encoder",
    "speed_rnn",
)
TRAINABLE_FAMILIES = tuple(f for f in FAMILIES if f != "random_forest")
RECURRENT_FAMILIES = ("lstm_rnn", "speed_rnn")

MODEL_MAGIC = b"LCMD1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class DecoderSpec:
    family: str
    n_channels: int = 32
    window_len: int = WINDOW_LEN
    ffnn_hidden: tuple[int, ...] = (256, 64)
    lstm_hidden: int = 64
    head_hidden: tuple[int, ...] = (32,)
    embed_dim: int = 64
    n_heads: int = 4
    n_blocks: int = 1
    conv_kernel: int = 3
    dropout: float = 0.0
    n_trees: int = 100
    max_depth: int | None = 12
    use_positional: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown decoder family {self.family!r}; known: {FAMILIES}")
        if self.n_channels < 1 or self.window_len < 1:
            raise ValueError("n_channels and window_len must be positive")
        if self.family == "speed_rnn" and self.n_channels != 1:
            raise ValueError("speed_rnn takes exactly one input channel")
        if self.family == "transformer_encoder":
            if self.embed_dim % self.n_heads != 0:
                raise ValueError(
                    f"embed_dim {self.embed_dim} must divide into {self.n_heads} heads"
                )
            if not 1 <= self.conv_kernel <= self.window_len:
                raise ValueError(f"conv_kernel must be in [1, {self.window_len}]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def flat_dim(self) -> int:
        return self.n_channels * self.window_len


def _glorot(rng, shape: tuple[int, int]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _mlp_param_names(prefix: str, in_dim: int, hidden: tuple[int, ...]):
    dims = [in_dim, *hidden, 1]
    return [(f"{prefix}.w{i}", f"{prefix}.b{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def _init_params(spec: DecoderSpec) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    if spec.family == "linear":
        params["head.w0"] = _glorot(rng, (spec.flat_dim, 1))
        params["head.b0"] = np.zeros(1)
    elif spec.family == "ffnn":
        dims = [spec.flat_dim, *spec.ffnn_hidden]
        for i in range(len(dims) - 1):
            params[f"body.w{i}"] = _glorot(rng, (dims[i], dims[i + 1]))
            params[f"body.b{i}"] = np.zeros(dims[i + 1])
        params["head.w0"] = _glorot(rng, (dims[-1], 1))
        params["head.b0"] = np.zeros(1)
    elif spec.family in RECURRENT_FAMILIES:
        h = spec.lstm_hidden
        params["body.wx"] = _glorot(rng, (spec.n_channels, 4 * h))
        params["body.wh"] = _glorot(rng, (h, 4 * h))
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate bias opens the memory path at init
        params["body.b"] = b
        for name, bname, din, dout in _mlp_param_names("head", h, spec.head_hidden):
            params[name] = _glorot(rng, (din, dout))
            params[bname] = np.zeros(dout)
    elif spec.family == "transformer_encoder":
        e = spec.embed_dim
        params["body.embed_w"] = _glorot(rng, (spec.n_channels, e))
        params["body.embed_b"] = np.zeros(e)
        for blk in range(spec.n_blocks):
            for proj in ("wq", "wk", "wv", "wo"):
                params[f"body.blk{blk}.{proj}"] = _glorot(rng, (e, e))
                params[f"body.blk{blk}.{proj[1]}b"] = np.zeros(e)
        params["body.conv_w"] = rng.uniform(
            -math.sqrt(6.0 / (spec.conv_kernel * e + e)),
            math.sqrt(6.0 / (spec.conv_kernel * e + e)),
            size=(spec.conv_kernel, e, e),
        )
        params["body.conv_b"] = np.zeros(e)
        for name, bname, din, dout in _mlp_param_names("head", e, spec.head_hidden):
            params[name] = _glorot(rng, (din, dout))
            params[bname] = np.zeros(dout)
    else:  # random_forest has no trainable tensors
        return {}
    return {k: ad.parameter(v, k) for k, v in params.items()}


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position table (length, dim)."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _dropout(t: ad.Tensor, rate: float, rng) -> ad.Tensor:
    if rng is None or rate <= 0.0:
        return t
    mask = (rng.random(t.data.shape) >= rate) / (1.0 - rate)
    return ad.mul(t, ad.constant(mask))


def _mlp_head(h: ad.Tensor, params, prefix: str, hidden: tuple[int, ...], rate, rng) -> ad.Tensor:
    n_layers = len(hidden) + 1
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = _dropout(ad.relu(h), rate, rng)
    return h


class Decoder:
    """A decoder spec plus its parameters (tensors or a fitted forest)."""

    def __init__(self, spec: DecoderSpec, params=None, forest_model: Forest | None = None):
        self.spec = spec
        if spec.family == "random_forest":
            self.params: dict[str, ad.Tensor] = {}
            self.forest = forest_model
        else:
            self.params = params if params is not None else _init_params(spec)
            self.forest = None

    # -- parameter bookkeeping ------------------------------------------------

    def param_items(self):
        return sorted(self.params.items())

    def param_list(self) -> list[ad.Tensor]:
        return [t for _, t in self.param_items()]

    def body_names(self) -> tuple[str, ...]:
        return tuple(n for n in sorted(self.params) if n.startswith("body."))

    def head_names(self) -> tuple[str, ...]:
        return tuple(n for n in sorted(self.params) if n.startswith("head."))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise SpecMismatchError(f"parameter name mismatch: {sorted(missing)}")
        for n, arr in arrays.items():
            if arr.shape != self.params[n].data.shape:
                raise SpecMismatchError(
                    f"parameter {n}: shape {arr.shape} != expected {self.params[n].data.shape}"
                )
            self.params[n].data = np.asarray(arr, dtype=np.float64).copy()

    def clone(self) -> "Decoder":
        if self.spec.family == "random_forest":
            return Decoder(self.spec, forest_model=self.forest)
        fresh = Decoder(self.spec, params={n: ad.parameter(t.data, n) for n, t in self.params.items()})
        return fresh

    def quantize_f32(self) -> None:
        """Snap parameters to float32-representable values (storage grid)."""
        for t in self.params.values():
            t.data = t.data.astype(np.float32).astype(np.float64)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n, t in self.param_items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        if self.forest is not None:
            for tree in self.forest.trees:
                for arr in (tree.feature, tree.threshold, tree.left, tree.right, tree.value):
                    h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -- forward passes --------------------------------------------------------

    def _forward_flat(self, x2d: np.ndarray, rng) -> ad.Tensor:
        p = self.params
        h = ad.constant(x2d)
        if self.spec.family == "linear":
            return ad.add(ad.matmul(h, p["head.w0"]), p["head.b0"])
        dims = len(self.spec.ffnn_hidden)
        for i in range(dims):
            h = _dropout(ad.relu(ad.add(ad.matmul(h, p[f"body.w{i}"]), p[f"body.b{i}"])), self.spec.dropout, rng)
        return ad.add(ad.matmul(h, p["head.w0"]), p["head.b0"])

    def _forward_lstm(self, x3d: np.ndarray, rng) -> ad.Tensor:
        p = self.params
        n, t_len, _ = x3d.shape
        hdim = self.spec.lstm_hidden
        h = ad.constant(np.zeros((n, hdim)))
        c = ad.constant(np.zeros((n, hdim)))
        for t in range(t_len):
            gates = ad.add(
                ad.add(ad.matmul(ad.constant(x3d[:, t, :]), p["body.wx"]), ad.matmul(h, p["body.wh"])),
                p["body.b"],
            )
            i_g = ad.sigmoid(ad.narrow(gates, 1, 0, hdim))
            f_g = ad.sigmoid(ad.narrow(gates, 1, hdim, 2 * hdim))
            g_g = ad.tanh(ad.narrow(gates, 1, 2 * hdim, 3 * hdim))
            o_g = ad.sigmoid(ad.narrow(gates, 1, 3 * hdim, 4 * hdim))
            c = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
            h = ad.mul(o_g, ad.tanh(c))
        h = _dropout(h, self.spec.dropout, rng)
        return _mlp_head(h, p, "head", self.spec.head_hidden, self.spec.dropout, rng)

    def _forward_transformer_one(self, x2d: np.ndarray, rng, collect_attn=None) -> ad.Tensor:
        p = self.params
        spec = self.spec
        e = spec.embed_dim
        dh = e // spec.n_heads
        tok = ad.add(ad.matmul(ad.constant(x2d), p["body.embed_w"]), p["body.embed_b"])
        if spec.use_positional:
            tok = ad.add(tok, ad.constant(positional_encoding(x2d.shape[0], e)))
        for blk in range(spec.n_blocks):
            q = ad.add(ad.matmul(tok, p[f"body.blk{blk}.wq"]), p[f"body.blk{blk}.qb"])
            k = ad.add(ad.matmul(tok, p[f"body.blk{blk}.wk"]), p[f"body.blk{blk}.kb"])
            v = ad.add(ad.matmul(tok, p[f"body.blk{blk}.wv"]), p[f"body.blk{blk}.vb"])
            heads = []
            for hi in range(spec.n_heads):
                lo, hi_end = hi * dh, (hi + 1) * dh
                qh = ad.narrow(q, 1, lo, hi_end)
                kh = ad.narrow(k, 1, lo, hi_end)
                vh = ad.narrow(v, 1, lo, hi_end)
                scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh))
                attn = ad.softmax(scores, axis=1)
                if collect_attn is not None:
                    collect_attn.append(attn.data.copy())
                heads.append(ad.matmul(attn, vh))
            tok = ad.add(ad.matmul(ad.concat(heads, axis=1), p[f"body.blk{blk}.wo"]), p[f"body.blk{blk}.ob"])
        z = ad.relu(ad.conv1d(tok, p["body.conv_w"], p["body.conv_b"]))
        pooled = _dropout(ad.mean(z, axis=0, keepdims=True), spec.dropout, rng)
        return _mlp_head(pooled, p, "head", spec.head_hidden, spec.dropout, rng)

    def _forward(self, x: np.ndarray, rng=None) -> ad.Tensor:
        fam = self.spec.family
        if fam in ("linear", "ffnn"):
            return self._forward_flat(x, rng)
        if fam in RECURRENT_FAMILIES:
            return self._forward_lstm(x, rng)
        if fam == "transformer_encoder":
            outs = [self._forward_transformer_one(x[i], rng) for i in range(x.shape[0])]
            return outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)
        raise ValueError(f"family {fam} has no differentiable forward pass")

    def loss_batch(self, x: np.ndarray, y: np.ndarray, train_rng=None) -> ad.Tensor:
        out = self._forward(x, rng=train_rng)
        return ad.mse(out, ad.constant(np.asarray(y, dtype=np.float64).reshape(-1, 1)))

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        if self.spec.family == "random_forest":
            if self.forest is None:
                raise SpecMismatchError("random_forest decoder has not been fitted")
            return forest_predict(self.forest, x)
        if x.shape[0] == 0:
            return np.empty(0)
        return self._forward(x).data.reshape(-1).copy()


def new_decoder(spec: DecoderSpec) -> Decoder:
    return Decoder(spec)


def fit_forest_decoder(spec: DecoderSpec, x2d: np.ndarray, y: np.ndarray, seed: int | None = None) -> Decoder:
    fspec = ForestSpec(
        n_trees=spec.n_trees,
        max_depth=spec.max_depth,
        seed=spec.seed if seed is None else seed,
    )
    return Decoder(spec, forest_model=forest_fit(x2d, y, fspec))


def featurize(window, family: str) -> np.ndarray:
    """Per-family input from one window (a WindowView or a (20, C) layout).

    Flat families get the time-major flattening (sample 0's channels first);
    sequence families get the layout unchanged.
    """
    layout = window.layout if isinstance(window, WindowView) else np.asarray(window)
    if family in ("linear", "ffnn", "random_forest"):
        return np.asarray(layout, dtype=np.float64).reshape(-1)
    if family in (*RECURRENT_FAMILIES, "transformer_encoder"):
        return np.asarray(layout, dtype=np.float64)
    raise ValueError(f"unknown decoder family {family!r}")


def featurize_batch(x: np.ndarray, family: str) -> np.ndarray:
    """Vector form of :func:`featurize` over (n, window_len, C) stacks."""
    x = np.asarray(x, dtype=np.float64)
    if family in ("linear", "ffnn", "random_forest"):
        return x.reshape(x.shape[0], -1)
    if family in (*RECURRENT_FAMILIES, "transformer_encoder"):
        return x
    raise ValueError(f"unknown decoder family {family!r}")


def predict(decoder: Decoder, window_input, clip_nonnegative: bool = False) -> float:
    """Scalar speed for one already-featurized input (or WindowView)."""
    if isinstance(window_input, WindowView):
        window_input = featurize(window_input, decoder.spec.family)
    x = np.asarray(window_input, dtype=np.float64)
    out = float(decoder.predict_batch(x[None, ...])[0])
    return max(0.0, out) if clip_nonnegative else out


def attention_maps(decoder: Decoder, layout: np.ndarray) -> np.ndarray:
    """(blocks*heads, T, T) row-stochastic attention for one window."""
    if decoder.spec.family != "transformer_encoder":
        raise ValueError("attention maps exist only for transformer_encoder")
    collected: list[np.ndarray] = []
    decoder._forward_transformer_one(np.asarray(layout, dtype=np.float64), None, collect_attn=collected)
    return np.stack(collected)


# ---------------------------------------------------------------------------
# model files


# model weights are stored as float32; extras (e.g. normalizer statistics)
# keep their native precision so reload-and-evaluate is bitwise faithful
_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8"}


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    if arr.dtype.kind in "iu":
        return 2
    raise ValueError(f"unsupported array dtype {arr.dtype}")


def _pack_tensor(name: str, arr: np.ndarray, as_f32: bool = False) -> bytes:
    if as_f32:
        arr = np.asarray(arr, dtype=np.float32)
    else:
        arr = np.asarray(arr)
        if arr.dtype.kind == "i":
            arr = arr.astype(np.int64)
    code = _dtype_code(arr)
    nb = name.encode("utf-8")
    parts = [struct.pack("<H", len(nb)), nb, struct.pack("<BB", arr.ndim, code)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise ModelLoadError(f"{self.path}: truncated model file")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _spec_to_json(spec: DecoderSpec) -> dict:
    d = asdict(spec)
    d["ffnn_hidden"] = list(spec.ffnn_hidden)
    d["head_hidden"] = list(spec.head_hidden)
    return d


def _spec_from_json(d: dict) -> DecoderSpec:
    d = dict(d)
    d["ffnn_hidden"] = tuple(d["ffnn_hidden"])
    d["head_hidden"] = tuple(d["head_hidden"])
    return DecoderSpec(**d)


def save_state(decoder: Decoder, path, extras: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
    """Serialize a decoder (plus optional named extra arrays such as
    normalizer statistics) to the binary model format."""
    header = json.dumps(
        {
            "spec": _spec_to_json(decoder.spec),
            "meta": meta or {},
            "kind": "forest" if decoder.spec.family == "random_forest" else "tensors",
        },
        sort_keys=True,
    ).encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(header)), header]
    if decoder.spec.family == "random_forest":
        if decoder.forest is None:
            raise SpecMismatchError("cannot save an unfitted random_forest decoder")
        f = decoder.forest
        chunks.append(struct.pack("<II", f.n_features, len(f.trees)))
        for tree in f.trees:
            chunks.append(struct.pack("<I", tree.n_nodes))
            chunks.append(np.ascontiguousarray(tree.feature, dtype="<i4").tobytes())
            chunks.append(np.ascontiguousarray(tree.threshold, dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(tree.left, dtype="<i4").tobytes())
            chunks.append(np.ascontiguousarray(tree.right, dtype="<i4").tobytes())
            chunks.append(np.ascontiguousarray(tree.value, dtype="<f4").tobytes())
        chunks.append(struct.pack("<I", len(extras or {})))
        for name in sorted(extras or {}):
            chunks.append(_pack_tensor(f"extra.{name}", np.asarray(extras[name])))
    else:
        params = decoder.param_items()
        chunks.append(struct.pack("<I", len(params) + len(extras or {})))
        for name, t in params:
            chunks.append(_pack_tensor(name, t.data, as_f32=True))
        for name in sorted(extras or {}):
            chunks.append(_pack_tensor(f"extra.{name}", np.asarray(extras[name])))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _read_tensor(r: _Reader) -> tuple[str, np.ndarray]:
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode("utf-8")
    ndim, code = r.unpack("<BB")
    if code not in _DTYPE_CODES:
        raise ModelLoadError(f"{r.path}: unknown tensor dtype code {code}")
    shape = r.unpack(f"<{ndim}I") if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    dt = np.dtype(_DTYPE_CODES[code])
    arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
    if code == 0:
        return name, arr.astype(np.float64)
    return name, arr.copy()


def load_state(path, expected_family: str | None = None):
    """Read a model file back: (decoder, extras, meta)."""
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise ModelLoadError(f"{path}: bad magic, not a model file")
    version, header_len = r.unpack("<II")
    if version != MODEL_VERSION:
        raise ModelLoadError(f"{path}: unsupported model version {version}")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
        spec = _spec_from_json(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelLoadError(f"{path}: corrupt header ({exc})")
    if expected_family is not None and spec.family != expected_family:
        raise SpecMismatchError(
            f"{path}: model family {spec.family!r} does not match expected {expected_family!r}"
        )
    extras: dict[str, np.ndarray] = {}
    if header["kind"] == "forest":
        n_features, n_trees = r.unpack("<II")
        trees = []
        for _ in range(n_trees):
            (n_nodes,) = r.unpack("<I")
            feature = np.frombuffer(r.take(4 * n_nodes), dtype="<i4").astype(np.int32)
            threshold = np.frombuffer(r.take(4 * n_nodes), dtype="<f4").astype(np.float64)
            left = np.frombuffer(r.take(4 * n_nodes), dtype="<i4").astype(np.int32)
            right = np.frombuffer(r.take(4 * n_nodes), dtype="<i4").astype(np.int32)
            value = np.frombuffer(r.take(4 * n_nodes), dtype="<f4").astype(np.float64)
            trees.append(Tree(feature, threshold, left, right, value))
        (n_extra,) = r.unpack("<I")
        for _ in range(n_extra):
            name, arr = _read_tensor(r)
            extras[name[len("extra.") :]] = arr
        fspec = ForestSpec(n_trees=spec.n_trees, max_depth=spec.max_depth, seed=spec.seed)
        decoder = Decoder(spec, forest_model=Forest(fspec, n_features, tuple(trees)))
        return decoder, extras, header.get("meta", {})
    (n_tensors,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name, arr = _read_tensor(r)
        if name.startswith("extra."):
            extras[name[len("extra.") :]] = arr
        else:
            arrays[name] = arr
    decoder = Decoder(spec)
    decoder.load_arrays(arrays)
    return decoder, extras, header.get("meta", {})


def gradcheck_decoder(
    spec: DecoderSpec,
    n_windows: int = 3,
    n_samples: int = 60,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> ad.GradcheckReport:
    """Finite-difference verification of a family's full loss gradient on a
    fixed random batch."""
    if spec.family == "random_forest":
        raise ValueError("random_forest is not gradient-trained")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_windows, spec.window_len, spec.n_channels))
    y = rng.standard_normal(n_windows)
    decoder = new_decoder(spec)
    xf = featurize_batch(x, spec.family)
    params = decoder.param_list()
    return ad.gradcheck(
        lambda: decoder.loss_batch(xf, y),
        params,
        n_samples=n_samples,
        h=h,
        tolerance=tolerance,
        seed=seed,
    )
