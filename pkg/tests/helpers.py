"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

from charnorm import numerics as nx

STEP = 1e-5
REL_TOL = 1e-4
# below this magnitude both gradients are compared absolutely (|a - n| / FLOOR)
FLOOR = 1e-6


def rel_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)


def numeric_grad(loss_fn, array, step=STEP):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    for idx in np.ndindex(array.shape):
        old = array[idx]
        array[idx] = old + step
        up = loss_fn()
        array[idx] = old - step
        down = loss_fn()
        array[idx] = old
        grad[idx] = (up - down) / (2 * step)
    return grad


def check_op(op, *shapes, seed=0, low=-1.0, high=1.0):
    """Max relative error of ``op``'s gradients for inputs uniform on [low, high].

    The scalar loss is ``sum(op(inputs) * R)`` with a fixed random ``R`` so
    every output element contributes a distinct weight.
    """
    rng = np.random.default_rng(seed)
    inputs = [nx.Tensor(rng.uniform(low, high, size=s), requires_grad=True) for s in shapes]
    out_shape = op(*inputs).shape
    weights = nx.Tensor(rng.uniform(-1, 1, size=out_shape))

    def loss_value():
        return float(nx.total(nx.mul(op(*inputs), weights)).data)

    for t in inputs:
        t.grad = None
    with nx.Tape() as tape:
        loss = nx.total(nx.mul(op(*inputs), weights))
    tape.backward(loss)
    worst = 0.0
    for t in inputs:
        num = numeric_grad(loss_value, t.data)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, float(rel_error(ana, num).max()))
    return worst


TINY = dict(d_voc=12, d_ce=4, d=8, d_we=6)
TINY_PAIRS = [("abcd", "abdc"), ("efg", "efgh")]  # sources of 4 and 3 chars, T=5 with EOS


def tiny_setup(seed=0, dropout_p=0.1):
    """Float64 tiny model, a two-row batch over an 8-char vocabulary, and random word features."""
    from charnorm.corpus import Vocabulary, make_batch
    from charnorm.model import ModelConfig, Seq2Seq

    vocab = Vocabulary("abcdefgh")
    model = Seq2Seq(ModelConfig(**TINY, dropout_p=dropout_p), seed=seed, dtype=np.float64)
    batch = make_batch(TINY_PAIRS, vocab)
    rng = np.random.default_rng(seed + 100)
    feats = rng.uniform(-1, 1, size=batch.source.shape + (TINY["d_we"],))
    return model, batch, feats


def model_gradient_errors(seed=0):
    """Worst relative error per parameter between backprop and central differences.

    Dropout stays on with a mask stream reseeded for every evaluation, so
    the loss is a smooth function of the parameters; sampling is off since
    the argmax feed is piecewise constant.
    """
    model, batch, feats = tiny_setup(seed)

    def loss_value():
        rng = np.random.default_rng(7)
        return float(model.forward_train(batch, rng, feats, training=True, sampling_p=0.0).data)

    model.params.zero_grad()
    with nx.Tape() as tape:
        loss = model.forward_train(batch, np.random.default_rng(7), feats, training=True, sampling_p=0.0)
    tape.backward(loss)
    errors = {}
    for name, p in model.params.items():
        num = numeric_grad(loss_value, p.data)
        errors[name] = float(rel_error(p.grad, num).max())
    return errors


# one "PASS|FAIL name: detail" line per acceptance criterion, printed at session end
ACCEPTANCE_LINES: list[str] = []


def record(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
