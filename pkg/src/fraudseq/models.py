"""Generative sequence models emitting per-position token distributions.

Two architectures over a target token channel (treatment or treatment type):

* ``NextTokenModel`` — predicts each token from the previous visit's tokens
  (target, cost-type and benefit-type channels) plus the patient's general
  features, through two stacked LSTM layers and a softmax head.  Position 1
  reads a begin-of-sequence token (embedding row ``size + 1``).
* ``AutoencoderModel`` — a seq2seq reconstructor: a two-layer bidirectional
  LSTM encoder over the target channel plus general features, a two-layer
  unidirectional decoder that is teacher-forced with the true previous token
  both in training and scoring, and multiplicative attention over the
  encoder states feeding the softmax head.

All padded positions are excluded from loss and gradients and emit zero
probability rows.  Training is deterministic given the config seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, LSTMCellParams, Tensor, Trace
from .data import Dataset, PatientSequence, TokenDictionary, padded_length
from .errors import ConfigurationError, NumericError, VocabularyError

__all__ = [
    "ProbabilitySet",
    "GeneralEncoder",
    "NextTokenConfig",
    "AutoencoderConfig",
    "NextTokenModel",
    "AutoencoderModel",
    "train",
    "lstm_forward",
    "autoencoder_forward",
    "attention_context",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass
class ProbabilitySet:
    """Per-position probability vectors over the target dictionary.

    ``probs`` has one row per padded position (zeros where masked); ``mask``
    marks the real positions.
    """

    probs: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def from_rows(cls, rows) -> "ProbabilitySet":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return cls(rows, np.ones(rows.shape[0], dtype=bool))

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def real_probs(self) -> np.ndarray:
        return self.probs[self.mask]

    def check_simplex(self, tol: float = 1e-6) -> None:
        live = self.real_probs()
        if live.size and (np.abs(live.sum(axis=1) - 1.0).max() > tol or live.min() < 0):
            raise NumericError("probability rows are not on the simplex")


class GeneralEncoder:
    """Fixed-width numeric encoding of the per-patient general features.

    Age and total invoice are z-scored with training statistics; sex and
    insurance type are one-hot.  Insurance ids unseen at fit time encode as
    all zeros.
    """

    def __init__(self, age_mean, age_std, invoice_mean, invoice_std, n_insurance):
        self.age_mean = float(age_mean)
        self.age_std = float(age_std)
        self.invoice_mean = float(invoice_mean)
        self.invoice_std = float(invoice_std)
        self.n_insurance = int(n_insurance)

    @classmethod
    def fit(cls, sequences: list[PatientSequence]) -> "GeneralEncoder":
        ages = np.array([s.general.age for s in sequences], dtype=np.float64)
        inv = np.array([s.general.total_invoice for s in sequences], dtype=np.float64)
        n_ins = max(s.general.insurance_type for s in sequences) + 1
        return cls(
            ages.mean(),
            max(ages.std(), 1e-9),
            inv.mean(),
            max(inv.std(), 1e-9),
            n_ins,
        )

    @property
    def dim(self) -> int:
        return 4 + self.n_insurance

    def encode(self, seq: PatientSequence) -> np.ndarray:
        g = seq.general
        out = np.zeros(self.dim)
        out[0] = (g.age - self.age_mean) / self.age_std
        out[1] = (g.total_invoice - self.invoice_mean) / self.invoice_std
        out[2 + (1 if g.sex else 0)] = 1.0
        if 0 <= g.insurance_type < self.n_insurance:
            out[4 + g.insurance_type] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "age_mean": self.age_mean,
            "age_std": self.age_std,
            "invoice_mean": self.invoice_mean,
            "invoice_std": self.invoice_std,
            "n_insurance": self.n_insurance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralEncoder":
        return cls(**d)


@dataclass
class NextTokenConfig:
    target_channel: str = "treatment"
    hidden_size: int = 128
    target_embed: int = 128
    cost_embed: int = 16
    benefit_embed: int = 16
    num_layers: int = 2
    batch_size: int = 256
    epochs: int = 100
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    grad_clip: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.target_channel not in ("treatment", "treatment_type"):
            raise ConfigurationError(f"bad target channel {self.target_channel!r}")
        if self.num_layers != 2:
            raise ConfigurationError("this architecture is fixed at two LSTM layers")
        for name in ("hidden_size", "target_embed", "cost_embed", "benefit_embed", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")

    @classmethod
    def paper(cls, target_channel: str = "treatment", **overrides) -> "NextTokenConfig":
        embed = 128 if target_channel == "treatment" else 32
        cfg = cls(target_channel=target_channel, target_embed=embed)
        return _with_overrides(cfg, overrides)

    @classmethod
    def desk(cls, target_channel: str = "treatment", **overrides) -> "NextTokenConfig":
        cfg = cls(
            target_channel=target_channel,
            hidden_size=64,
            target_embed=32,
            epochs=20,
            base_lr=3e-3,
        )
        return _with_overrides(cfg, overrides)


@dataclass
class AutoencoderConfig:
    target_channel: str = "treatment"
    hidden_size: int = 128
    embed_size: int = 128
    num_layers: int = 2
    batch_size: int = 128
    epochs: int = 70
    base_lr: float = 3e-6
    lr_decay: float = 0.95
    grad_clip: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.target_channel not in ("treatment", "treatment_type"):
            raise ConfigurationError(f"bad target channel {self.target_channel!r}")
        if self.num_layers != 2:
            raise ConfigurationError("this architecture is fixed at two LSTM layers")
        for name in ("hidden_size", "embed_size", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")

    @classmethod
    def paper(cls, target_channel: str = "treatment", **overrides) -> "AutoencoderConfig":
        lr = 3e-6 if target_channel == "treatment" else 1e-6
        cfg = cls(target_channel=target_channel, base_lr=lr)
        return _with_overrides(cfg, overrides)

    @classmethod
    def desk(cls, target_channel: str = "treatment", **overrides) -> "AutoencoderConfig":
        cfg = cls(
            target_channel=target_channel,
            hidden_size=64,
            embed_size=32,
            epochs=20,
            base_lr=3e-3,
        )
        return _with_overrides(cfg, overrides)


def _with_overrides(cfg, overrides: dict):
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigurationError(f"unknown config field {k!r}")
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# parameter construction


def _uniform(rng, shape, bound, name) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _embedding(rng, rows, width, name) -> Tensor:
    data = rng.uniform(-0.1, 0.1, size=(rows, width))
    data[0] = 0.0  # pad row, frozen
    return Tensor(data, requires_grad=True, name=name)


def _lstm_params(rng, in_size, hidden, name, params: dict) -> LSTMCellParams:
    bound = 1.0 / np.sqrt(hidden)
    w_x = _uniform(rng, (in_size, 4 * hidden), bound, f"{name}.w_x")
    w_h = _uniform(rng, (hidden, 4 * hidden), bound, f"{name}.w_h")
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias
    bt = Tensor(b, requires_grad=True, name=f"{name}.b")
    params[w_x.name] = w_x
    params[w_h.name] = w_h
    params[bt.name] = bt
    return LSTMCellParams(w_x, w_h, bt)


def _zeros_state(batch: int, hidden: int) -> Tensor:
    return Tensor(np.zeros((batch, hidden)))


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class _Batch:
    ids: dict[str, np.ndarray]  # channel -> (B, L) int ids, 0 = pad
    mask: np.ndarray  # (B, L) bool
    g: np.ndarray  # (B, G)
    seq_padded: list[int]  # per-sequence own padded length


def _make_batch(
    seqs: list[PatientSequence], channels: tuple[str, ...], encoder: GeneralEncoder
) -> _Batch:
    lengths = [s.length for s in seqs]
    per_seq = [padded_length(t) for t in lengths]
    big = max(per_seq)
    ids = {ch: np.zeros((len(seqs), big), dtype=np.int64) for ch in channels}
    mask = np.zeros((len(seqs), big), dtype=bool)
    for i, (s, t) in enumerate(zip(seqs, lengths)):
        mask[i, :t] = True
        for ch in channels:
            ids[ch][i, :t] = s.channel_ids(ch)[:t]
    g = np.stack([encoder.encode(s) for s in seqs])
    return _Batch(ids, mask, g, per_seq)


def _shift_with_bos(ids: np.ndarray, bos_id: int) -> np.ndarray:
    out = np.empty_like(ids)
    out[:, 0] = bos_id
    out[:, 1:] = ids[:, :-1]
    return out


# ---------------------------------------------------------------------------
# next-token model


class NextTokenModel:
    kind = "lstm"
    channels = ("treatment", "treatment_type", "cost_type", "benefit_type")

    def __init__(
        self,
        config: NextTokenConfig,
        dictionaries: dict[str, TokenDictionary],
        encoder: GeneralEncoder,
    ):
        config.validate()
        self.config = config
        self.dictionaries = dictionaries
        self.encoder = encoder
        self.split_info: dict | None = None
        self.n_classes = dictionaries[config.target_channel].size
        if self.n_classes < 1:
            raise ConfigurationError("target dictionary is empty")

        rng = np.random.default_rng([config.seed, 7])
        h = config.hidden_size
        p: dict[str, Tensor] = {}
        for ch, width in (
            (config.target_channel, config.target_embed),
            ("cost_type", config.cost_embed),
            ("benefit_type", config.benefit_embed),
        ):
            rows = dictionaries[ch].size + 2  # pad + tokens + BOS
            p[f"emb.{ch}"] = _embedding(rng, rows, width, f"emb.{ch}")
        in_size = config.target_embed + config.cost_embed + config.benefit_embed + encoder.dim
        self.layer1 = _lstm_params(rng, in_size, h, "lstm1", p)
        self.layer2 = _lstm_params(rng, h, h, "lstm2", p)
        bound = 1.0 / np.sqrt(h)
        p["head.w"] = _uniform(rng, (h, self.n_classes), bound, "head.w")
        p["head.b"] = Tensor(np.zeros(self.n_classes), requires_grad=True, name="head.b")
        self.params = p

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def input_channels(self) -> tuple[str, ...]:
        return (self.config.target_channel, "cost_type", "benefit_type")

    def _step_distributions(self, batch: _Batch, labels: np.ndarray, collect: bool):
        cfg = self.config
        b, big = batch.mask.shape
        shifted = {}
        for ch in self.input_channels:
            bos = self.dictionaries[ch].size + 1
            shifted[ch] = _shift_with_bos(batch.ids[ch], bos)
        g_t = Tensor(batch.g)
        h1 = c1 = h2 = c2 = _zeros_state(b, cfg.hidden_size)
        loss_acc = None
        probs_steps = []
        for j in range(big):
            parts = [
                ad.embedding_lookup(self.params[f"emb.{ch}"], shifted[ch][:, j])
                for ch in self.input_channels
            ]
            parts.append(g_t)
            x = ad.concat(parts)
            h1, c1 = ad.lstm_cell(x, h1, c1, self.layer1)
            h2, c2 = ad.lstm_cell(h1, h2, c2, self.layer2)
            logits = ad.dense(h2, self.params["head.w"], self.params["head.b"])
            loss_j, probs_j = ad.softmax_cross_entropy_rows(logits, labels[:, j])
            loss_acc = loss_j if loss_acc is None else ad.add(loss_acc, loss_j)
            if collect:
                probs_steps.append(probs_j * batch.mask[:, j][:, None])
        return loss_acc, probs_steps

    def batch_loss(self, batch: _Batch) -> tuple[Tensor, float, int]:
        labels = np.where(batch.mask, batch.ids[self.config.target_channel], 0)
        loss_acc, _ = self._step_distributions(batch, labels, collect=False)
        n_tok = int(batch.mask.sum())
        total = ad.sum_all(loss_acc)
        return ad.scale(total, 1.0 / n_tok), float(total.data), n_tok

    def batch_probs(self, batch: _Batch) -> np.ndarray:
        labels = np.zeros_like(batch.mask, dtype=np.int64)  # all masked: probs only
        _, steps = self._step_distributions(batch, labels, collect=True)
        return np.stack(steps, axis=1)


# ---------------------------------------------------------------------------
# autoencoder model


class AutoencoderModel:
    kind = "autoencoder"

    def __init__(
        self,
        config: AutoencoderConfig,
        dictionaries: dict[str, TokenDictionary],
        encoder: GeneralEncoder,
    ):
        config.validate()
        self.config = config
        self.dictionaries = dictionaries
        self.encoder = encoder
        self.split_info: dict | None = None
        self.n_classes = dictionaries[config.target_channel].size
        if self.n_classes < 1:
            raise ConfigurationError("target dictionary is empty")

        rng = np.random.default_rng([config.seed, 7])
        h = config.hidden_size
        e = config.embed_size
        bound = 1.0 / np.sqrt(h)
        p: dict[str, Tensor] = {}
        p["emb"] = _embedding(rng, self.n_classes + 2, e, "emb")
        enc_in = e + encoder.dim
        self.enc1f = _lstm_params(rng, enc_in, h, "enc1f", p)
        self.enc1b = _lstm_params(rng, enc_in, h, "enc1b", p)
        self.enc2f = _lstm_params(rng, 2 * h, h, "enc2f", p)
        self.enc2b = _lstm_params(rng, 2 * h, h, "enc2b", p)
        self.dec1 = _lstm_params(rng, e, h, "dec1", p)
        self.dec2 = _lstm_params(rng, h, h, "dec2", p)
        p["attn.w"] = _uniform(rng, (2 * h, h), bound, "attn.w")
        for layer in (1, 2):
            p[f"dec_init{layer}.w"] = _uniform(rng, (2 * h, h), bound, f"dec_init{layer}.w")
            p[f"dec_init{layer}.b"] = Tensor(
                np.zeros(h), requires_grad=True, name=f"dec_init{layer}.b"
            )
        p["head.w"] = _uniform(rng, (3 * h, self.n_classes), bound, "head.w")
        p["head.b"] = Tensor(np.zeros(self.n_classes), requires_grad=True, name="head.b")
        self.params = p

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def input_channels(self) -> tuple[str, ...]:
        return (self.config.target_channel,)

    def _run_direction(self, xs, keep, cell: LSTMCellParams, reverse: bool):
        """Gated scan over one direction; returns per-position h and final state."""
        b = keep.shape[0]
        h = c = _zeros_state(b, cell.hidden_size)
        order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
        out: list[Tensor | None] = [None] * len(xs)
        for j in order:
            m = keep[:, j][:, None]
            hn, cn = ad.lstm_cell(xs[j], h, c, cell)
            h = ad.blend(h, hn, m)
            c = ad.blend(c, cn, m)
            out[j] = h
        return out, h

    def _encode(self, batch: _Batch):
        cfg = self.config
        ids = batch.ids[cfg.target_channel]
        keep = batch.mask
        g_t = Tensor(batch.g)
        xs = [
            ad.concat([ad.embedding_lookup(self.params["emb"], ids[:, j]), g_t])
            for j in range(ids.shape[1])
        ]
        h1f, _ = self._run_direction(xs, keep, self.enc1f, reverse=False)
        h1b, _ = self._run_direction(xs, keep, self.enc1b, reverse=True)
        mid = [ad.concat([f, bwd]) for f, bwd in zip(h1f, h1b)]
        h2f, last_f = self._run_direction(mid, keep, self.enc2f, reverse=False)
        h2b, last_b = self._run_direction(mid, keep, self.enc2b, reverse=True)
        states = ad.stack_steps([ad.concat([f, bwd]) for f, bwd in zip(h2f, h2b)])
        summary = ad.concat([last_f, last_b])
        return states, summary

    def _step_distributions(self, batch: _Batch, labels: np.ndarray, collect: bool):
        cfg = self.config
        b, big = batch.mask.shape
        h = cfg.hidden_size
        ids = batch.ids[cfg.target_channel]
        dec_in = _shift_with_bos(ids, self.n_classes + 1)

        states, summary = self._encode(batch)
        flat = ad.reshape(states, (b * big, 2 * h))
        keys = ad.reshape(ad.matmul(flat, self.params["attn.w"]), (b, big, h))

        dec_h = [
            ad.tanh(
                ad.dense(
                    summary,
                    self.params[f"dec_init{layer}.w"],
                    self.params[f"dec_init{layer}.b"],
                )
            )
            for layer in (1, 2)
        ]
        dec_c = [_zeros_state(b, h), _zeros_state(b, h)]
        loss_acc = None
        probs_steps = []
        for j in range(big):
            x = ad.embedding_lookup(self.params["emb"], dec_in[:, j])
            dec_h[0], dec_c[0] = ad.lstm_cell(x, dec_h[0], dec_c[0], self.dec1)
            dec_h[1], dec_c[1] = ad.lstm_cell(dec_h[0], dec_h[1], dec_c[1], self.dec2)
            scores = ad.attn_scores(dec_h[1], keys)
            weights = ad.masked_softmax(scores, batch.mask)
            context = ad.attn_combine(weights, states)
            logits = ad.dense(
                ad.concat([dec_h[1], context]), self.params["head.w"], self.params["head.b"]
            )
            loss_j, probs_j = ad.softmax_cross_entropy_rows(logits, labels[:, j])
            loss_acc = loss_j if loss_acc is None else ad.add(loss_acc, loss_j)
            if collect:
                probs_steps.append(probs_j * batch.mask[:, j][:, None])
        return loss_acc, probs_steps

    def batch_loss(self, batch: _Batch) -> tuple[Tensor, float, int]:
        labels = np.where(batch.mask, batch.ids[self.config.target_channel], 0)
        loss_acc, _ = self._step_distributions(batch, labels, collect=False)
        n_tok = int(batch.mask.sum())
        total = ad.sum_all(loss_acc)
        return ad.scale(total, 1.0 / n_tok), float(total.data), n_tok

    def batch_probs(self, batch: _Batch) -> np.ndarray:
        labels = np.zeros_like(batch.mask, dtype=np.int64)
        _, steps = self._step_distributions(batch, labels, collect=True)
        return np.stack(steps, axis=1)


# ---------------------------------------------------------------------------
# shared inference and training


def probability_sets(model, sequences: list[PatientSequence], batch_size: int | None = None):
    """Forward every sequence and return one ProbabilitySet per patient.

    Sequences are grouped by padded length into deterministic batches; the
    returned list follows the input order.  Each set spans the sequence's own
    power-of-two padded length.
    """
    for seq in sequences:
        for ch in model.input_channels:
            if seq.channel_ids(ch).max(initial=0) > model.dictionaries[ch].size:
                raise VocabularyError(
                    f"patient {seq.patient_id!r} has ids outside the model's "
                    f"{ch!r} dictionary"
                )
    bs = batch_size or model.config.batch_size
    order = sorted(range(len(sequences)), key=lambda i: (padded_length(sequences[i].length), i))
    out: list[ProbabilitySet | None] = [None] * len(sequences)
    for lo in range(0, len(order), bs):
        chunk = order[lo : lo + bs]
        seqs = [sequences[i] for i in chunk]
        batch = _make_batch(seqs, model.input_channels, model.encoder)
        probs = model.batch_probs(batch)
        for row, i in enumerate(chunk):
            span = batch.seq_padded[row]
            out[i] = ProbabilitySet(probs[row, :span], batch.mask[row, :span])
    return out


NextTokenModel.probability_sets = probability_sets
AutoencoderModel.probability_sets = probability_sets


def lstm_forward(seq: PatientSequence, model: NextTokenModel) -> ProbabilitySet:
    return probability_sets(model, [seq])[0]


def autoencoder_forward(seq: PatientSequence, model: AutoencoderModel) -> ProbabilitySet:
    return probability_sets(model, [seq])[0]


def attention_context(decoder_h, encoder_states, attn_w, mask=None):
    """Attend over one sequence's encoder states; returns (context, weights)."""
    q = Tensor(np.asarray(decoder_h, dtype=np.float64)[None, :])
    states = Tensor(np.asarray(encoder_states, dtype=np.float64)[None, :, :])
    w = attn_w if isinstance(attn_w, Tensor) else Tensor(attn_w)
    t = states.shape[1]
    m = np.ones((1, t), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)[None, :]
    flat = ad.reshape(states, (t, states.shape[2]))
    keys = ad.reshape(ad.matmul(flat, w), (1, t, w.shape[1]))
    weights = ad.masked_softmax(ad.attn_scores(q, keys), m)
    context = ad.attn_combine(weights, states)
    return context.data[0], weights.data[0]


def _model_for(kind: str, config, dictionaries, encoder):
    if kind == "lstm":
        if not isinstance(config, NextTokenConfig):
            raise ConfigurationError("lstm model needs a NextTokenConfig")
        return NextTokenModel(config, dictionaries, encoder)
    if kind == "autoencoder":
        if not isinstance(config, AutoencoderConfig):
            raise ConfigurationError("autoencoder model needs an AutoencoderConfig")
        return AutoencoderModel(config, dictionaries, encoder)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def train(model_kind: str, dataset: Dataset, config) -> tuple[object, list[float]]:
    """Train a model on the dataset; returns (model, per-epoch mean token loss).

    Adam with cross-entropy over unmasked positions, learning rate decayed by
    ``config.lr_decay`` per epoch.  Deterministic given the config seed.
    """
    if not dataset.sequences:
        raise ConfigurationError("cannot train on an empty dataset")
    config.validate()
    encoder = GeneralEncoder.fit(dataset.sequences)
    model = _model_for(model_kind, config, dataset.dictionaries, encoder)
    history = train_model(model, dataset.sequences)
    return model, history


def train_model(model, sequences: list[PatientSequence]) -> list[float]:
    cfg = model.config
    params = model.param_list()
    state = AdamState(base_lr=cfg.base_lr, decay=cfg.lr_decay)

    order = sorted(range(len(sequences)), key=lambda i: (padded_length(sequences[i].length), i))
    batches = []
    for lo in range(0, len(order), cfg.batch_size):
        seqs = [sequences[i] for i in order[lo : lo + cfg.batch_size]]
        batches.append(_make_batch(seqs, model.input_channels, model.encoder))

    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 1000 + epoch])
        epoch_loss = 0.0
        epoch_tokens = 0
        for bi in rng.permutation(len(batches)):
            batch = batches[int(bi)]
            ad.zero_grads(params)
            with Trace() as trace:
                mean_loss, loss_sum, n_tok = model.batch_loss(batch)
            if not np.isfinite(loss_sum):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {int(bi)}")
            trace.backward(mean_loss)
            if cfg.grad_clip is not None:
                ad.clip_gradients(params, cfg.grad_clip)
            ad.adam_step(params, state, epoch)
            epoch_loss += loss_sum
            epoch_tokens += n_tok
        history.append(epoch_loss / epoch_tokens)
    return history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path: str | Path) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "encoder": model.encoder.to_dict(),
        "dictionaries": {ch: d.tokens for ch, d in model.dictionaries.items()},
        "split_info": model.split_info,
    }
    arrays = {name: p.data for name, p in model.params.items()}
    np.savez(path, __meta__=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as blob:
        meta = json.loads(str(blob["__meta__"]))
        arrays = {k: blob[k] for k in blob.files if k != "__meta__"}
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version in {path}")
    dictionaries = {ch: TokenDictionary(ch, toks) for ch, toks in meta["dictionaries"].items()}
    encoder = GeneralEncoder.from_dict(meta["encoder"])
    kind = meta["kind"]
    cfg_cls = NextTokenConfig if kind == "lstm" else AutoencoderConfig
    config = cfg_cls(**meta["config"])
    model = _model_for(kind, config, dictionaries, encoder)
    for name, param in model.params.items():
        stored = arrays.get(name)
        if stored is None or stored.shape != param.data.shape:
            raise ConfigurationError(f"checkpoint array {name!r} missing or mis-shaped")
        param.data = stored.astype(np.float64)
    model.split_info = meta.get("split_info")
    return model
