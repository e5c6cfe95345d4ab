"""Character-level encoder-decoder with Luong attention.

Encoder: character embedding (optionally concatenated with word features),
a bidirectional GRU layer whose two directions are summed, then a forward
GRU layer. Decoder: two GRU layers fed character embeddings only, general
attention over the top encoder layer, and a linear projection to the
character vocabulary. Decoder states start from a tanh layer applied to the
first top-layer encoder state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import PAD, SOS, Batch, Vocabulary
from .errors import CheckpointError, ConfigError, DataError, EmptySourceError
from .numerics import ParamStore, Tensor

CHECKPOINT_MAGIC = b"CHNRMCKP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_voc: int
    d_ce: int = 128
    d: int = 256
    d_we: int = 0
    dropout_p: float = 0.1
    sampling_p: float = 0.35

    def __post_init__(self):
        for name in ("d_voc", "d_ce", "d"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_we < 0:
            raise ConfigError("d_we must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not 0.0 <= self.sampling_p <= 1.0:
            raise ConfigError(f"sampling_p must be in [0, 1], got {self.sampling_p}")

    def parameter_count(self) -> int:
        d, ce, we, v = self.d, self.d_ce, self.d_we, self.d_voc
        gru = lambda d_in: d_in * 3 * d + d * 3 * d + 3 * d  # noqa: E731
        return (
            v * ce
            + 2 * gru(ce + we)
            + gru(d)
            + 2 * (d * d + d)
            + gru(ce)
            + gru(d)
            + d * d
            + 2 * d * d
            + d * v
            + v
        )


@dataclass
class EncoderOutput:
    states: Tensor  # [B, T, d], top layer
    mask: np.ndarray  # [B, T], true at real positions
    first: Tensor  # [B, d], top layer at step 0

    def repeat(self, k: int) -> "EncoderOutput":
        """Tile a single-sentence encoding ``k`` times (inference only)."""
        states = np.repeat(self.states.data, k, axis=0)
        return EncoderOutput(Tensor(states), np.repeat(self.mask, k, axis=0), Tensor(states[:, 0]))

    def take(self, rows) -> "EncoderOutput":
        states = self.states.data[rows]
        return EncoderOutput(Tensor(states), self.mask[rows], Tensor(states[:, 0]))


def source_features(provider, texts, width: int, dtype=nx.TRAIN_DTYPE) -> np.ndarray | None:
    """``[B, width, d_we]`` word features; positions past a text (EOS, PAD) get the whitespace vector."""
    if provider is None or provider.dim == 0:
        return None
    out = np.empty((len(texts), width, provider.dim), dtype=dtype)
    out[:] = provider.whitespace
    for i, text in enumerate(texts):
        feats = provider.feature_sequence(text)
        out[i, : len(text)] = feats[:width]
    return out


class Seq2Seq:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=nx.TRAIN_DTYPE):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        P = self.params
        P.add("char_embedding", nx.uniform_unit_variance(rng, (c.d_voc, c.d_ce), dtype))
        inputs = {
            "encoder.fwd": c.d_ce + c.d_we,
            "encoder.bwd": c.d_ce + c.d_we,
            "encoder.top": c.d,
            "decoder.l1": c.d_ce,
            "decoder.l2": c.d,
        }
        for name in ("encoder.fwd", "encoder.bwd", "encoder.top"):
            self._add_gru(rng, name, inputs[name])
        for layer in ("l1", "l2"):
            P.add(f"bridge.{layer}.W", nx.glorot_uniform(rng, c.d, c.d, dtype=dtype))
            P.add(f"bridge.{layer}.b", np.zeros(c.d, dtype=dtype))
        for name in ("decoder.l1", "decoder.l2"):
            self._add_gru(rng, name, inputs[name])
        P.add("attention.W_a", nx.glorot_uniform(rng, c.d, c.d, dtype=dtype))
        P.add("attention.W_c", nx.glorot_uniform(rng, 2 * c.d, c.d, dtype=dtype))
        P.add("output.W", nx.glorot_uniform(rng, c.d, c.d_voc, dtype=dtype))
        P.add("output.b", np.zeros(c.d_voc, dtype=dtype))

    def _add_gru(self, rng, name, d_in):
        d = self.config.d
        self.params.add(f"{name}.W", nx.glorot_uniform(rng, d_in, d, shape=(d_in, 3 * d), dtype=self.dtype))
        self.params.add(f"{name}.U", nx.glorot_uniform(rng, d, d, shape=(d, 3 * d), dtype=self.dtype))
        self.params.add(f"{name}.b", np.zeros(3 * d, dtype=self.dtype))

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # -- encoder ------------------------------------------------------------

    def _projected(self, x: Tensor, name: str) -> Tensor:
        B, T, d_in = x.shape
        flat = nx.reshape(x, (B * T, d_in))
        gx = nx.linear(flat, self._p(f"{name}.W"), self._p(f"{name}.b"))
        return nx.reshape(gx, (B, T, gx.shape[-1]))

    def encode(self, src_ids, features=None, lengths=None, training: bool = False, rng=None) -> EncoderOutput:
        """Encode ``[B, T]`` ids (EOS included, PAD on the right)."""
        c = self.config
        src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        B, T = src_ids.shape
        if T == 0:
            raise EmptySourceError("cannot encode an empty source")
        if np.any(src_ids >= c.d_voc):
            raise IndexError(f"source id outside vocabulary of size {c.d_voc}")
        if lengths is None:
            lengths = (src_ids != PAD).sum(axis=1)
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise EmptySourceError("a source row has no characters")
        x = nx.embedding(self._p("char_embedding"), src_ids)
        if c.d_we:
            if features is None or features.shape != (B, T, c.d_we):
                got = None if features is None else features.shape
                raise ValueError(f"expected word features of shape {(B, T, c.d_we)}, got {got}")
            x = nx.concat([x, Tensor(np.asarray(features, dtype=self.dtype))], axis=-1)
        x = nx.dropout(x, c.dropout_p, rng, training)
        h0 = Tensor(np.zeros((B, c.d), dtype=self.dtype))
        fwd = nx.gru_sequence(self._projected(x, "encoder.fwd"), h0, self._p("encoder.fwd.U"), lengths)
        bwd = nx.gru_sequence(self._projected(x, "encoder.bwd"), h0, self._p("encoder.bwd.U"), lengths, reverse=True)
        layer1 = nx.dropout(nx.add(fwd, bwd), c.dropout_p, rng, training)
        top = nx.gru_sequence(self._projected(layer1, "encoder.top"), h0, self._p("encoder.top.U"), lengths)
        mask = np.arange(T)[None, :] < lengths[:, None]
        return EncoderOutput(top, mask, nx.select(top, 0, axis=1))

    def bridge_init(self, first: Tensor) -> list[Tensor]:
        return [nx.tanh(nx.linear(first, self._p(f"bridge.{l}.W"), self._p(f"bridge.{l}.b"))) for l in ("l1", "l2")]

    # -- decoder ------------------------------------------------------------

    def decode_step(self, prev_ids, states, enc: EncoderOutput, training: bool = False, rng=None):
        """One decoder step for a batch. Returns (logits, new states, attention weights)."""
        c = self.config
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        if np.any(prev_ids >= c.d_voc) or np.any(prev_ids < 0):
            raise IndexError(f"character id outside vocabulary of size {c.d_voc}")
        x = nx.dropout(nx.embedding(self._p("char_embedding"), prev_ids), c.dropout_p, rng, training)
        s1 = nx.gru_cell(x, states[0], self._p("decoder.l1.W"), self._p("decoder.l1.U"), self._p("decoder.l1.b"))
        x2 = nx.dropout(s1, c.dropout_p, rng, training)
        s2 = nx.gru_cell(x2, states[1], self._p("decoder.l2.W"), self._p("decoder.l2.U"), self._p("decoder.l2.b"))
        _, attn_out, weights = nx.luong_attention(
            s2, enc.states, self._p("attention.W_a"), self._p("attention.W_c"), enc.mask
        )
        o = nx.dropout(attn_out, c.dropout_p, rng, training)
        logits = nx.linear(o, self._p("output.W"), self._p("output.b"))
        return logits, [s1, s2], weights

    def forward_train(self, batch: Batch, rng=None, features=None, training: bool = True, sampling_p=None) -> Tensor:
        """Masked mean cross-entropy over the target characters and EOS.

        With probability ``sampling_p`` per row and step the decoder is fed
        its own previous argmax instead of the gold character.
        """
        c = self.config
        sampling_p = c.sampling_p if sampling_p is None else sampling_p
        tgt = batch.target
        B, L = tgt.shape
        if L < 2 or not np.any(tgt[:, 1:] != PAD):
            raise DataError("batch has no target positions")
        enc = self.encode(batch.source, features, batch.source_lengths, training, rng)
        states = self.bridge_init(enc.first)
        prev = tgt[:, 0]
        steps = []
        for t in range(L - 1):
            logits, states, _ = self.decode_step(prev, states, enc, training, rng)
            steps.append(logits)
            gold = tgt[:, t + 1]
            if sampling_p > 0.0 and t + 2 < L:
                own = logits.data.argmax(axis=-1)
                prev = np.where(rng.random(B) < sampling_p, own, gold)
            else:
                prev = gold
        flat = nx.reshape(nx.stack(steps, axis=1), (B * (L - 1), c.d_voc))
        targets = tgt[:, 1:].reshape(-1)
        return nx.cross_entropy(flat, targets, targets != PAD)

    def sequence_log_likelihood(self, src_ids, out_ids, features=None) -> float:
        """Sum of log-probabilities of ``out_ids`` given the source, by a fresh teacher-forced pass."""
        enc = self.encode(np.asarray(src_ids)[None, :], features)
        states = self.bridge_init(enc.first)
        prev = np.array([SOS])
        total = 0.0
        for tok in out_ids:
            logits, states, _ = self.decode_step(prev, states, enc)
            logp = logits.data[0] - logits.data[0].max()
            logp = logp - np.log(np.exp(logp).sum())
            total += float(logp[tok])
            prev = np.array([tok])
        return total


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Seq2Seq, vocab: Vocabulary, path, features: dict | None = None) -> None:
    """Write header JSON plus little-endian float32 tensors in parameter order."""
    if len(vocab) != model.config.d_voc:
        raise CheckpointError(f"vocabulary of size {len(vocab)} does not match d_voc={model.config.d_voc}")
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": vocab.chars,
        "features": features or {},
        "tensors": [[name, list(t.shape)] for name, t in model.params.items()],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, t in model.params.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path, vocab: Vocabulary | None = None):
    """Returns ``(model, vocab, features)``; any inconsistency raises CheckpointError."""
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 8
    if len(raw) < head or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", raw[len(CHECKPOINT_MAGIC) : head])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(raw[head : head + n].decode("utf-8"))
        known = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in header["config"].items() if k in known})
        stored_vocab = Vocabulary(header["vocab"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if vocab is not None and vocab != stored_vocab:
        raise CheckpointError(f"{path}: vocabulary differs from the one supplied")
    if len(stored_vocab) != config.d_voc:
        raise CheckpointError(f"{path}: vocabulary size {len(stored_vocab)} != d_voc {config.d_voc}")
    model = Seq2Seq(config)
    expected = [[name, list(t.shape)] for name, t in model.params.items()]
    if header["tensors"] != expected:
        raise CheckpointError(f"{path}: tensor names or shapes do not match the model")
    offset = head + n
    total = sum(int(np.prod(shape)) for _, shape in expected) * 4
    if len(raw) - offset != total:
        raise CheckpointError(f"{path}: expected {total} tensor bytes, found {len(raw) - offset}")
    loaded = {}
    for name, shape in expected:
        size = int(np.prod(shape)) * 4
        loaded[name] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=offset).reshape(shape)
        offset += size
    for name, data in loaded.items():
        model.params[name].data = data.astype(np.float32)
    return model, stored_vocab, header.get("features", {})
