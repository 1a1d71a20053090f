"""Lyrics-conditioned LSTM generator and discriminator with adversarial losses.

Generator, per step t::

    u_t   = [z_t (30) | y_t (20) | x_{t-1} (3)]      x_0 = 0
    a_t   = relu(fc_in u_t)                          400
    h1_t  = lstm1(a_t),  h2_t = lstm2(h1_t)          400, 400
    x_t   = fc_out h2_t                              3, linear

Discriminator reads ``[x_t (3) | y_t (20)]`` through two LSTM layers and maps
the last hidden state through a sigmoid unit to P(real).

Both networks work in *network units*: MIDI number, duration and rest divided
by ``ATTRIBUTE_SCALE``. The public ``generator_forward`` /
``discriminator_forward`` convert from and to musical units.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .nn import (
    DTYPE,
    INIT_SCALE,
    DenseParams,
    LstmCellParams,
    ParamTree,
    ShapeError,
    StateError,
    dense_backward,
    dense_cached,
    init_dense,
    init_lstm,
    lstm_cell_backward,
    lstm_cell_forward,
    sgd_update,
    split_stacked_grads,
    zero_state,
)

NOISE_DIM = 30
EMBED_DIM = 20
ATTR_DIM = 3
SEQ_LEN = 20
HIDDEN = 400
ATTRIBUTE_SCALE = np.array([127.0, 32.0, 32.0])
NO_SCALE = np.ones(3)
SCORE_EPS = 1e-7


@dataclass
class GeneratorParams(ParamTree):
    fc_in: DenseParams
    lstm1: LstmCellParams
    lstm2: LstmCellParams
    fc_out: DenseParams

    def __post_init__(self):
        h = self.lstm1.hidden_size
        if self.fc_in.activation != "relu" or self.fc_out.activation != "linear":
            raise ValueError("generator needs a relu input layer and a linear output layer")
        if self.fc_in.out_size != h or self.lstm1.input_size != h:
            raise ShapeError("input layer width must match the first LSTM")
        if self.lstm2.input_size != h or self.lstm2.hidden_size != h or self.fc_out.in_size != h:
            raise ShapeError("generator LSTM layers must share one hidden size")
        if self.fc_out.out_size != ATTR_DIM:
            raise ShapeError("generator output must be a triplet")
        if self.fc_in.in_size <= ATTR_DIM:
            raise ShapeError("generator input must hold noise, embedding and the previous triplet")

    @property
    def hidden_size(self) -> int:
        return self.lstm1.hidden_size

    @property
    def input_size(self) -> int:
        return self.fc_in.in_size


@dataclass
class DiscriminatorParams(ParamTree):
    lstm1: LstmCellParams
    lstm2: LstmCellParams
    fc_out: DenseParams

    def __post_init__(self):
        h = self.lstm1.hidden_size
        if self.lstm2.input_size != h or self.fc_out.in_size != self.lstm2.hidden_size:
            raise ShapeError("discriminator layer sizes do not chain")
        if self.fc_out.out_size != 1 or self.fc_out.activation != "sigmoid":
            raise ValueError("discriminator output must be a single sigmoid unit")
        if self.lstm1.input_size <= ATTR_DIM:
            raise ShapeError("discriminator input must hold a triplet and an embedding")

    @property
    def hidden_size(self) -> int:
        return self.lstm1.hidden_size

    @property
    def embed_dim(self) -> int:
        return self.lstm1.input_size - ATTR_DIM


def init_generator(rng: np.random.Generator, hidden: int = HIDDEN, noise_dim: int = NOISE_DIM,
                   embed_dim: int = EMBED_DIM, scale: float = INIT_SCALE) -> GeneratorParams:
    return GeneratorParams(
        fc_in=init_dense(rng, noise_dim + embed_dim + ATTR_DIM, hidden, "relu", scale),
        lstm1=init_lstm(rng, hidden, hidden, scale),
        lstm2=init_lstm(rng, hidden, hidden, scale),
        fc_out=init_dense(rng, hidden, ATTR_DIM, "linear", scale),
    )


def init_discriminator(rng: np.random.Generator, hidden: int = HIDDEN, embed_dim: int = EMBED_DIM,
                       scale: float = INIT_SCALE) -> DiscriminatorParams:
    return DiscriminatorParams(
        lstm1=init_lstm(rng, ATTR_DIM + embed_dim, hidden, scale),
        lstm2=init_lstm(rng, hidden, hidden, scale),
        fc_out=init_dense(rng, hidden, 1, "sigmoid", scale),
    )


def _prefixed(prefix: str, grads: dict) -> dict:
    return {prefix + k: v for k, v in grads.items()}


class Generator:
    """Recording generator network; ``forward`` then ``backward``."""

    def __init__(self, params: GeneratorParams):
        self.params = params
        self._tape = None

    def forward(self, noise: np.ndarray, embeds: np.ndarray) -> np.ndarray:
        """``noise`` (B, T, k), ``embeds`` (B, T, e) -> triplets (B, T, 3)."""
        p = self.params
        noise = np.asarray(noise, DTYPE)
        embeds = np.asarray(embeds, DTYPE)
        if noise.ndim != 3 or embeds.ndim != 3 or noise.shape[:2] != embeds.shape[:2]:
            raise ShapeError(f"noise {noise.shape} and embeddings {embeds.shape} must be (B, T, *) alike")
        if noise.shape[2] + embeds.shape[2] + ATTR_DIM != p.input_size:
            raise ShapeError(
                f"generator expects noise+embedding width {p.input_size - ATTR_DIM}, "
                f"got {noise.shape[2]}+{embeds.shape[2]}"
            )
        batch, steps, _ = noise.shape
        w1, w1_t, b1 = p.lstm1.stacked_t()
        w2, w2_t, b2 = p.lstm2.stacked_t()
        s1 = zero_state(p.hidden_size, batch)
        s2 = zero_state(p.hidden_size, batch)
        h1, c1, h2, c2 = s1.h, s1.c, s2.h, s2.c
        prev = np.zeros((batch, ATTR_DIM), DTYPE)
        out = np.empty((batch, steps, ATTR_DIM), DTYPE)
        caches = []
        for t in range(steps):
            u = np.concatenate([noise[:, t], embeds[:, t], prev], axis=1)
            a, cache_in = dense_cached(p.fc_in, u)
            h1, c1, cache1 = lstm_cell_forward(w1_t, b1, a, h1, c1)
            h2, c2, cache2 = lstm_cell_forward(w2_t, b2, h1, h2, c2)
            prev, cache_out = dense_cached(p.fc_out, h2)
            out[:, t] = prev
            caches.append((cache_in, cache1, cache2, cache_out))
        self._tape = (w1, w2, caches)
        return out

    def backward(self, dout: np.ndarray, need_param_grads: bool = True):
        """Exact BPTT including the feedback path through previous outputs.

        Returns ``(grads, None)``.
        """
        if self._tape is None:
            raise StateError("backward called before forward")
        p = self.params
        w1, w2, caches = self._tape
        dout = np.asarray(dout, DTYPE)
        batch, steps, _ = dout.shape
        hidden = p.hidden_size
        g_in = {"weight": np.zeros_like(p.fc_in.weight), "bias": np.zeros_like(p.fc_in.bias)}
        g_out = {"weight": np.zeros_like(p.fc_out.weight), "bias": np.zeros_like(p.fc_out.bias)}
        da1s = np.empty((steps, batch, 4 * hidden), DTYPE)
        da2s = np.empty((steps, batch, 4 * hidden), DTYPE)
        dh1 = np.zeros((batch, hidden), DTYPE)
        dc1 = np.zeros((batch, hidden), DTYPE)
        dh2 = np.zeros((batch, hidden), DTYPE)
        dc2 = np.zeros((batch, hidden), DTYPE)
        dprev = np.zeros((batch, ATTR_DIM), DTYPE)
        for t in reversed(range(steps)):
            cache_in, cache1, cache2, cache_out = caches[t]
            g, dh2_out = dense_backward(p.fc_out, cache_out, dout[:, t] + dprev, need_param_grads)
            if need_param_grads:
                g_out["weight"] += g["weight"]
                g_out["bias"] += g["bias"]
            da2, dh1_in, dh2, dc2 = lstm_cell_backward(w2, cache2, dh2_out + dh2, dc2)
            da1, da_in, dh1, dc1 = lstm_cell_backward(w1, cache1, dh1_in + dh1, dc1)
            da1s[t] = da1
            da2s[t] = da2
            g, du = dense_backward(p.fc_in, cache_in, da_in, need_param_grads)
            if need_param_grads:
                g_in["weight"] += g["weight"]
                g_in["bias"] += g["bias"]
            dprev = du[:, -ATTR_DIM:]
        grads = {}
        if need_param_grads:
            z1 = np.stack([c[1][0] for c in caches]).reshape(steps * batch, -1)
            z2 = np.stack([c[2][0] for c in caches]).reshape(steps * batch, -1)
            dw1 = da1s.reshape(-1, 4 * hidden).T @ z1
            dw2 = da2s.reshape(-1, 4 * hidden).T @ z2
            grads.update(_prefixed("fc_in.", g_in))
            grads.update(split_stacked_grads(dw1, da1s.sum(axis=(0, 1)), "lstm1."))
            grads.update(split_stacked_grads(dw2, da2s.sum(axis=(0, 1)), "lstm2."))
            grads.update(_prefixed("fc_out.", g_out))
        return grads, None


class Discriminator:
    """Recording discriminator network; ``forward`` then ``backward``."""

    def __init__(self, params: DiscriminatorParams):
        self.params = params
        self._tape = None

    def forward(self, triplets: np.ndarray, embeds: np.ndarray) -> np.ndarray:
        """``triplets`` (B, T, 3), ``embeds`` (B, T, e) -> P(real) of shape (B,)."""
        p = self.params
        triplets = np.asarray(triplets, DTYPE)
        embeds = np.asarray(embeds, DTYPE)
        if triplets.ndim != 3 or embeds.ndim != 3 or triplets.shape[:2] != embeds.shape[:2]:
            raise ShapeError(f"triplets {triplets.shape} and embeddings {embeds.shape} must be (B, T, *) alike")
        if triplets.shape[2] != ATTR_DIM or embeds.shape[2] != p.embed_dim:
            raise ShapeError(
                f"discriminator expects {ATTR_DIM}+{p.embed_dim} inputs per step, "
                f"got {triplets.shape[2]}+{embeds.shape[2]}"
            )
        batch, steps, _ = triplets.shape
        if steps == 0:
            raise ValueError("empty sequence")
        w1, w1_t, b1 = p.lstm1.stacked_t()
        w2, w2_t, b2 = p.lstm2.stacked_t()
        s1 = zero_state(p.hidden_size, batch)
        s2 = zero_state(p.hidden_size, batch)
        h1, c1, h2, c2 = s1.h, s1.c, s2.h, s2.c
        v = np.concatenate([triplets, embeds], axis=2)
        caches1, caches2 = [], []
        for t in range(steps):
            h1, c1, cache1 = lstm_cell_forward(w1_t, b1, v[:, t], h1, c1)
            h2, c2, cache2 = lstm_cell_forward(w2_t, b2, h1, h2, c2)
            caches1.append(cache1)
            caches2.append(cache2)
        score, cache_out = dense_cached(p.fc_out, h2)
        self._tape = (w1, w2, caches1, caches2, cache_out)
        return score[:, 0]

    def backward(self, dscores: np.ndarray, need_param_grads: bool = True):
        """Returns ``(grads, dtriplets)`` where ``dtriplets`` is (B, T, 3)."""
        if self._tape is None:
            raise StateError("backward called before forward")
        p = self.params
        w1, w2, caches1, caches2, cache_out = self._tape
        dscores = np.asarray(dscores, DTYPE).reshape(-1, 1)
        steps = len(caches1)
        batch = dscores.shape[0]
        hidden = p.hidden_size
        g_out, dh_top = dense_backward(p.fc_out, cache_out, dscores, need_param_grads)
        da1s = np.empty((steps, batch, 4 * hidden), DTYPE)
        da2s = np.empty((steps, batch, 4 * hidden), DTYPE)
        dtrip = np.empty((batch, steps, ATTR_DIM), DTYPE)
        dh1 = np.zeros((batch, hidden), DTYPE)
        dc1 = np.zeros((batch, hidden), DTYPE)
        dh2 = dh_top
        dc2 = np.zeros((batch, hidden), DTYPE)
        for t in reversed(range(steps)):
            da2, dh1_in, dh2, dc2 = lstm_cell_backward(w2, caches2[t], dh2, dc2)
            da1, dv, dh1, dc1 = lstm_cell_backward(w1, caches1[t], dh1_in + dh1, dc1)
            da1s[t] = da1
            da2s[t] = da2
            dtrip[:, t] = dv[:, :ATTR_DIM]
        grads = {}
        if need_param_grads:
            z1 = np.stack([c[0] for c in caches1]).reshape(steps * batch, -1)
            z2 = np.stack([c[0] for c in caches2]).reshape(steps * batch, -1)
            dw1 = da1s.reshape(-1, 4 * hidden).T @ z1
            dw2 = da2s.reshape(-1, 4 * hidden).T @ z2
            grads.update(split_stacked_grads(dw1, da1s.sum(axis=(0, 1)), "lstm1."))
            grads.update(split_stacked_grads(dw2, da2s.sum(axis=(0, 1)), "lstm2."))
            grads.update(_prefixed("fc_out.", g_out))
        return grads, dtrip


def _batched(arr, width: int, name: str):
    arr = np.asarray(arr, DTYPE)
    if arr.ndim == 2:
        arr = arr[None]
        single = True
    elif arr.ndim == 3:
        single = False
    else:
        raise ShapeError(f"{name} must be (T, {width}) or (B, T, {width}), got {arr.shape}")
    if arr.shape[-1] != width:
        raise ShapeError(f"{name} must have {width} features per step, got {arr.shape[-1]}")
    return arr, single


def generator_forward(g: GeneratorParams, noise, embeds, scale: np.ndarray = ATTRIBUTE_SCALE,
                      steps: int | None = SEQ_LEN) -> np.ndarray:
    """Generate continuous triplets in musical units (MIDI, beats, beats).

    Accepts a single sequence ``(T, ...)`` or a batch ``(B, T, ...)``;
    ``steps`` pins T (pass None to allow any length).
    """
    embed_dim = g.input_size - NOISE_DIM - ATTR_DIM
    noise, single = _batched(noise, NOISE_DIM, "noise")
    embeds, _ = _batched(embeds, embed_dim, "embeddings")
    if noise.shape[:2] != embeds.shape[:2]:
        raise ShapeError("noise and embeddings must have equal batch and length")
    if steps is not None and noise.shape[1] != steps:
        raise ShapeError(f"expected {steps} steps, got {noise.shape[1]}")
    out = Generator(g).forward(noise, embeds) * scale
    return out[0] if single else out


def discriminator_forward(d: DiscriminatorParams, triplets, embeds,
                          scale: np.ndarray = ATTRIBUTE_SCALE, steps: int | None = SEQ_LEN):
    """P(real) for triplets given in musical units; scalar for one sequence."""
    triplets, single = _batched(triplets, ATTR_DIM, "triplets")
    embeds, _ = _batched(embeds, d.embed_dim, "embeddings")
    if triplets.shape[:2] != embeds.shape[:2]:
        raise ShapeError("triplets and embeddings must have equal batch and length")
    if steps is not None and triplets.shape[1] != steps:
        raise ShapeError(f"expected {steps} steps, got {triplets.shape[1]}")
    scores = Discriminator(d).forward(triplets / scale, embeds)
    return float(scores[0]) if single else scores


def sample_noise(rng: np.random.Generator, batch: int, steps: int = SEQ_LEN,
                 dim: int = NOISE_DIM) -> np.ndarray:
    """Uniform [0, 1] noise, one fresh vector per step."""
    return rng.uniform(0.0, 1.0, size=(batch, steps, dim))


# ----------------------------------------------------------------------------
# losses


def _scores(scores) -> np.ndarray:
    s = np.atleast_1d(np.asarray(scores, DTYPE))
    if s.size == 0:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("discriminator scores must lie in [0, 1]")
    return s


def loss_generator(d_scores) -> float:
    """mean log(1 - D(G(z|y))) over the minibatch; the generator minimises it."""
    s = np.clip(_scores(d_scores), SCORE_EPS, 1.0 - SCORE_EPS)
    return float(np.mean(np.log1p(-s)))


def loss_generator_grad(d_scores) -> np.ndarray:
    raw = _scores(d_scores)
    s = np.clip(raw, SCORE_EPS, 1.0 - SCORE_EPS)
    grad = -1.0 / ((1.0 - s) * s.size)
    return np.where(s == raw, grad, 0.0)


def loss_discriminator(real_scores, fake_scores) -> float:
    """mean[-log D(x|y) - log(1 - D(G(z|y)))]."""
    r = np.clip(_scores(real_scores), SCORE_EPS, 1.0 - SCORE_EPS)
    f = np.clip(_scores(fake_scores), SCORE_EPS, 1.0 - SCORE_EPS)
    if r.shape != f.shape:
        raise ShapeError("real and fake score batches must have equal size")
    return float(np.mean(-np.log(r) - np.log1p(-f)))


def loss_discriminator_grad(real_scores, fake_scores) -> tuple[np.ndarray, np.ndarray]:
    r_raw, f_raw = _scores(real_scores), _scores(fake_scores)
    r = np.clip(r_raw, SCORE_EPS, 1.0 - SCORE_EPS)
    f = np.clip(f_raw, SCORE_EPS, 1.0 - SCORE_EPS)
    m = r.size
    dr = np.where(r == r_raw, -1.0 / (m * r), 0.0)
    df = np.where(f == f_raw, 1.0 / (m * (1.0 - f)), 0.0)
    return dr, df


# ----------------------------------------------------------------------------
# model files


def model_tensors(g: GeneratorParams, d: DiscriminatorParams) -> dict[str, np.ndarray]:
    out = {"generator." + k: v for k, v in g.tensors().items()}
    out.update({"discriminator." + k: v for k, v in d.tensors().items()})
    return out


def model_metadata(g: GeneratorParams, d: DiscriminatorParams, scale: np.ndarray, **extra) -> dict:
    return {
        "generator_hidden": g.hidden_size,
        "discriminator_hidden": d.hidden_size,
        "noise_dim": NOISE_DIM,
        "embed_dim": d.embed_dim,
        "attribute_scale": [float(s) for s in scale],
        **extra,
    }


def save_model(path, g: GeneratorParams, d: DiscriminatorParams, scale: np.ndarray, **extra) -> None:
    checkpoint.save(path, model_tensors(g, d), model_metadata(g, d, scale, **extra))


def load_model(path) -> tuple[GeneratorParams, DiscriminatorParams, dict]:
    tensors, meta = checkpoint.load(path)
    rng = np.random.default_rng(0)
    g = init_generator(rng, meta["generator_hidden"], meta["noise_dim"], meta["embed_dim"])
    d = init_discriminator(rng, meta["discriminator_hidden"], meta["embed_dim"])
    try:
        g = g.replace_tensors({k[len("generator."):]: v for k, v in tensors.items()
                               if k.startswith("generator.")})
        d = d.replace_tensors({k[len("discriminator."):]: v for k, v in tensors.items()
                               if k.startswith("discriminator.")})
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"checkpoint is missing tensor {exc}") from exc
    return g, d, meta


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 400
    batch: int = 32
    hidden: int = HIDDEN
    lr0: float = 0.1
    lr_decay: float = 0.995
    init_scale: float = INIT_SCALE
    scale_attributes: bool = True
    mmd_on_tuned: bool = True
    keep_checkpoints: str = "all"  # "all" writes every epoch, "best" only best.ckpt

    @property
    def scale(self) -> np.ndarray:
        return ATTRIBUTE_SCALE if self.scale_attributes else NO_SCALE


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_d: float
    loss_g: float
    mmd2: float


@dataclass
class TrainResult:
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    history: list[EpochRecord]
    best_epoch: int

    @property
    def best(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


def _arrays(seqs, word_table, syll_table):
    from .embedding import embed_sequence

    notes = np.stack([s.array() for s in seqs])
    embeds = np.stack([embed_sequence(s.syllables, word_table, syll_table) for s in seqs])
    return notes, embeds


def validation_samples(g: GeneratorParams, embeds: np.ndarray, noise: np.ndarray,
                       scale: np.ndarray, tuned: bool = True) -> np.ndarray:
    """Generated validation melodies as flattened, scaled vectors for MMD."""
    from .tuning import tune

    raw = Generator(g).forward(noise, embeds) * scale
    if tuned:
        raw = np.array([tune(seq)[0] for seq in raw], dtype=np.float64)
    return (raw / scale).reshape(len(raw), -1)


def train(split, word_table, syll_table, config: TrainConfig | None = None, seed: int = 0,
          out_dir=None, log=None) -> TrainResult:
    """Adversarial training with MMD-based epoch selection.

    Per minibatch: one discriminator step on real and generated sequences,
    then one generator step on the same generated batch (its parameters are
    unchanged by the discriminator step, so the recorded forward pass is
    reused). After each epoch the generator's melodies for the validation
    lyrics are compared to the real validation melodies with MMD^2; the
    epoch with the smallest value is returned.
    """
    from .evaluation import mmd2_unbiased

    config = config or TrainConfig()
    if not split.train or len(split.validation) < 2:
        raise ValueError("need a non-empty training split and at least 2 validation sequences")
    if config.epochs < 1 or config.batch < 1:
        raise ValueError("epochs and batch must be positive")
    scale = config.scale
    train_notes, train_embeds = _arrays(split.train, word_table, syll_table)
    val_notes, val_embeds = _arrays(split.validation, word_table, syll_table)
    train_x = train_notes / scale
    val_real = (val_notes / scale).reshape(len(val_notes), -1)
    steps = train_x.shape[1]

    init_rng = np.random.default_rng([seed, 0])
    rng = np.random.default_rng([seed, 1])
    val_noise = sample_noise(np.random.default_rng([seed, 2]), len(val_notes), steps)
    g = init_generator(init_rng, config.hidden, NOISE_DIM, train_embeds.shape[2], config.init_scale)
    d = init_discriminator(init_rng, config.hidden, train_embeds.shape[2], config.init_scale)

    history: list[EpochRecord] = []
    best = (np.inf, 0, g, d)
    n = len(train_x)
    for epoch in range(config.epochs):
        lr = config.lr0 * config.lr_decay ** epoch
        order = rng.permutation(n)
        losses_d, losses_g = [], []
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            m = len(idx)
            real, cond = train_x[idx], train_embeds[idx]
            gen = Generator(g)
            fake = gen.forward(sample_noise(rng, m, steps), cond)

            disc = Discriminator(d)
            scores = disc.forward(np.concatenate([real, fake]), np.concatenate([cond, cond]))
            losses_d.append(loss_discriminator(scores[:m], scores[m:]))
            dr, df = loss_discriminator_grad(scores[:m], scores[m:])
            grads_d, _ = disc.backward(np.concatenate([dr, df]))
            d = sgd_update(d, grads_d, lr)

            disc = Discriminator(d)
            fake_scores = disc.forward(fake, cond)
            losses_g.append(loss_generator(fake_scores))
            _, dfake = disc.backward(loss_generator_grad(fake_scores), need_param_grads=False)
            grads_g, _ = gen.backward(dfake)
            g = sgd_update(g, grads_g, lr)

        gen_val = validation_samples(g, val_embeds, val_noise, scale, config.mmd_on_tuned)
        mmd2 = mmd2_unbiased(gen_val, val_real)
        record = EpochRecord(epoch + 1, lr, float(np.mean(losses_d)), float(np.mean(losses_g)), mmd2)
        history.append(record)
        if log is not None:
            log(record)
        if mmd2 < best[0]:
            best = (mmd2, epoch + 1, g, d)
        if out_dir is not None and config.keep_checkpoints == "all":
            save_model(Path(out_dir) / f"epoch_{epoch + 1:03d}.ckpt", g, d, scale, epoch=epoch + 1)

    _, best_epoch, best_g, best_d = best
    result = TrainResult(best_g, best_d, history, best_epoch)
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_model(out_dir / "best.ckpt", best_g, best_d, scale, epoch=best_epoch)
        manifest = {
            "best_epoch": best_epoch,
            "config": {k: v for k, v in dataclasses.asdict(config).items()},
            "seed": seed,
            "epochs": [dataclasses.asdict(r) for r in history],
        }
        checkpoint.atomic_write_bytes(
            out_dir / "selection.json",
            json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"),
        )
    return result


def generate(g: GeneratorParams, embeds: np.ndarray, rng: np.random.Generator,
             scale: np.ndarray = ATTRIBUTE_SCALE) -> np.ndarray:
    """Raw continuous melodies (B, T, 3) in musical units for lyric embeddings (B, T, e)."""
    embeds = np.asarray(embeds, DTYPE)
    noise = sample_noise(rng, embeds.shape[0], embeds.shape[1])
    return Generator(g).forward(noise, embeds) * scale
