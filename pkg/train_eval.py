"""
Datasets, masking, training schedules and evaluation for the MLM experiments.

Reported losses are base 2 (natural-log cross-entropy divided by ln 2) and
perplexity is 2**loss.
"""

import enum
import logging
import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from errors import ConfigError, EmbeddingsIgnored, ParseError, SplitError, TrainingDiverged
from lm_core import IGNORE_INDEX, Batch, Injection, SATLayer, mlm_loss, seeded_init

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ('[PAD]', '[CLS]', '[MASK]', '[UNK]')
PAD_ID, CLS_ID, MASK_ID, UNK_ID = range(len(SPECIAL_TOKENS))
MASK_MIX = (0.8, 0.1, 0.1)
LN2 = math.log(2.0)


# Tokenizer and corpus

@dataclass(frozen=True)
class Tokenizer:
    """Whitespace tokenizer over a closed word list; ids start after the special tokens."""
    words: tuple

    @property
    def vocab_size(self):
        return len(SPECIAL_TOKENS) + len(self.words)

    @property
    def first_word_id(self):
        return len(SPECIAL_TOKENS)

    def encode(self, tokens):
        index = self._index()
        return tuple(index.get(t, UNK_ID) for t in tokens)

    def decode(self, ids):
        table = SPECIAL_TOKENS + self.words
        return [table[i] for i in ids]

    def _index(self):
        cached = self.__dict__.get('_lookup')
        if cached is None:
            cached = {w: i + len(SPECIAL_TOKENS) for i, w in enumerate(self.words)}
            object.__setattr__(self, '_lookup', cached)
        return cached

    @classmethod
    def from_token_lists(cls, token_lists):
        return cls(words=tuple(sorted({t for tokens in token_lists for t in tokens})))

    def to_dict(self):
        return {'words': list(self.words)}

    @classmethod
    def from_dict(cls, data):
        return cls(words=tuple(data['words']))


@dataclass(frozen=True)
class Document:
    doc_id: int
    group_id: str
    token_ids: tuple


@dataclass
class Corpus:
    documents: list
    tokenizer: Tokenizer

    @property
    def group_ids(self):
        return tuple(sorted({d.group_id for d in self.documents}))

    def by_group(self):
        groups = {}
        for doc in self.documents:
            groups.setdefault(doc.group_id, []).append(doc)
        return groups

    @classmethod
    def from_texts(cls, rows, tokenizer=None):
        """rows: iterable of (group_id, list of word tokens)."""
        rows = list(rows)
        tokenizer = tokenizer or Tokenizer.from_token_lists(tokens for _, tokens in rows)
        documents = [Document(i, g, tokenizer.encode(tokens)) for i, (g, tokens) in enumerate(rows)]
        return cls(documents=documents, tokenizer=tokenizer)

    @classmethod
    def load(cls, path, tokenizer=None):
        rows = []
        with open(path, encoding='utf-8') as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip('\r\n')
                if not line or line.startswith('#'):
                    continue
                group_id, sep, text = line.partition('\t')
                if not sep or not group_id or not text.strip():
                    raise ParseError(lineno, "expected 'group_id<TAB>tokens'")
                rows.append((group_id, text.split()))
        corpus = cls.from_texts(rows, tokenizer)
        logger.info(f"Loaded {len(corpus.documents)} documents from {len(corpus.group_ids)} groups")
        return corpus

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            for doc in self.documents:
                f.write(f"{doc.group_id}\t{' '.join(self.tokenizer.decode(doc.token_ids))}\n")


# Splits

@dataclass(frozen=True)
class SplitSpec:
    known_group_fraction: float = 0.9
    val_text_fraction: float = 0.1
    seed: int = 0
    min_docs_per_group: int = None

    def __post_init__(self):
        for name in ('known_group_fraction', 'val_text_fraction'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {value}")


@dataclass
class DatasetSplits:
    train: list
    val_k: list
    val_u: list

    TAGS = ('train', 'val-k', 'val-u')

    def by_tag(self, tag):
        try:
            return {'train': self.train, 'val-k': self.val_k, 'val-u': self.val_u}[tag]
        except KeyError:
            raise ConfigError(f"unknown dataset tag {tag!r}") from None

    def to_manifest(self):
        return {
            tag: [d.doc_id for d in self.by_tag(tag)] for tag in self.TAGS
        } | {
            'known_groups': sorted({d.group_id for d in self.train}),
            'unknown_groups': sorted({d.group_id for d in self.val_u}),
        }

    @classmethod
    def from_manifest(cls, corpus, manifest):
        docs = {d.doc_id: d for d in corpus.documents}
        try:
            return cls(*([docs[i] for i in manifest[tag]] for tag in cls.TAGS))
        except KeyError as e:
            raise SplitError(f"split manifest does not match corpus: {e}") from e


def split_datasets(corpus, spec):
    """train / val-k (held-out texts of known groups) / val-u (all texts of held-out groups)."""
    groups = corpus.by_group()
    if spec.min_docs_per_group:
        small = [g for g, docs in groups.items() if len(docs) < spec.min_docs_per_group]
        for g in small:
            del groups[g]
        if small:
            logger.info(f"Dropped {len(small)} groups with fewer than {spec.min_docs_per_group} documents")
    names = sorted(groups)
    if len(names) < 2:
        raise SplitError(f"need at least 2 groups, got {len(names)}")

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(names))
    n_known = min(max(int(round(spec.known_group_fraction * len(names))), 1), len(names) - 1)
    known = sorted(names[i] for i in order[:n_known])
    unknown = sorted(names[i] for i in order[n_known:])

    train, val_k = [], []
    for index, group in enumerate(known):
        docs = groups[group]
        if len(docs) < 2:
            raise SplitError(f"group {group!r} has {len(docs)} document(s); known groups need 2")
        shuffled = [docs[i] for i in np.random.default_rng([spec.seed, index]).permutation(len(docs))]
        n_val = min(len(docs) - 1, max(1, int(round(spec.val_text_fraction * len(docs)))))
        val_k.extend(shuffled[:n_val])
        train.extend(shuffled[n_val:])
    val_u = [d for g in unknown for d in groups[g]]

    by_id = lambda d: d.doc_id  # noqa: E731
    splits = DatasetSplits(sorted(train, key=by_id), sorted(val_k, key=by_id), sorted(val_u, key=by_id))
    logger.info(f"Split {len(known)} known / {len(unknown)} unknown groups: "
                f"train={len(splits.train)} val-k={len(splits.val_k)} val-u={len(splits.val_u)}")
    return splits


# Masking and batches

def mask_tokens(sequence, mask_rate, seed, vocab_size=None, mask_id=MASK_ID, protected=(),
                mix=MASK_MIX, min_masked=0, first_word_id=len(SPECIAL_TOKENS)):
    """Select ~mask_rate of positions; of those 80% -> [MASK], 10% random word, 10% kept.

    `mix=None` replaces every selected position by [MASK]. Returns (input_ids, labels)
    with labels set to the original id at selected positions and IGNORE_INDEX elsewhere.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tokens = np.asarray(sequence, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("cannot mask an empty sequence")
    candidates = ~np.isin(tokens, protected)
    selected = (rng.random(tokens.size) < mask_rate) & candidates
    shortfall = min_masked - int(selected.sum())
    if shortfall > 0:
        free = np.flatnonzero(candidates & ~selected)
        if free.size:
            selected[rng.choice(free, size=min(shortfall, free.size), replace=False)] = True

    labels = np.where(selected, tokens, IGNORE_INDEX)
    inputs = tokens.copy()
    if mix is None:
        inputs[selected] = mask_id
    else:
        roll = rng.random(tokens.size)
        to_mask = selected & (roll < mix[0])
        to_random = selected & (roll >= mix[0]) & (roll < mix[0] + mix[1])
        inputs[to_mask] = mask_id
        if to_random.any():
            if vocab_size is None:
                raise ValueError("vocab_size is required for random replacement")
            inputs[to_random] = rng.integers(first_word_id, vocab_size, size=int(to_random.sum()))
    return inputs, labels


def make_batch(documents, tokenizer, max_seq_len, social_dim, embeddings=None, mask_rate=0.15,
               rngs=None, dtype=torch.float32, mix=MASK_MIX):
    """Pad [CLS] + first (max_seq_len - 1) tokens of each document; one generator per document."""
    rows, labels = [], []
    for doc, rng in zip(documents, rngs):
        sequence = (CLS_ID,) + tuple(doc.token_ids[:max_seq_len - 1])
        ids, lab = mask_tokens(sequence, mask_rate, rng, vocab_size=tokenizer.vocab_size,
                               protected=(PAD_ID, CLS_ID), mix=mix, min_masked=1,
                               first_word_id=tokenizer.first_word_id)
        rows.append(ids)
        labels.append(lab)
    width = max(len(r) for r in rows)
    token_ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    mlm_labels = torch.full((len(rows), width), IGNORE_INDEX, dtype=torch.long)
    attention = torch.zeros((len(rows), width), dtype=torch.bool)
    for i, (ids, lab) in enumerate(zip(rows, labels)):
        token_ids[i, :len(ids)] = torch.as_tensor(ids)
        mlm_labels[i, :len(lab)] = torch.as_tensor(lab)
        attention[i, :len(ids)] = True
    group_ids = [d.group_id for d in documents]
    if embeddings is None:
        social = torch.zeros((len(rows), social_dim), dtype=dtype)
    else:
        social = torch.as_tensor(embeddings.matrix(group_ids), dtype=dtype)
    return Batch(token_ids=token_ids, attention_mask=attention, mlm_labels=mlm_labels,
                 social_vectors=social, group_ids=group_ids)


# Training

class Schedule(str, enum.Enum):
    BASELINE = 'baseline'
    ZERO_TOKEN = 'zero_token'
    SAT_TWO_PHASE = 'sat_two_phase'

    @property
    def injection(self):
        return {'baseline': Injection.NONE, 'zero_token': Injection.ZERO_TOKEN,
                'sat_two_phase': Injection.SAT}[self.value]


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    warmup_steps: int = 500
    max_steps: int = 20000
    batch_size: int = 32
    mask_rate: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    schedule: Schedule = Schedule.BASELINE
    phase1_steps: int = None
    sat_layer: int = 3
    sat_channels: int = 4
    eval_every: int = 200
    patience: int = 3
    log_window: int = 50
    precision: int = 32

    def __post_init__(self):
        try:
            object.__setattr__(self, 'schedule', Schedule(self.schedule))
        except ValueError:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps > self.max_steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} exceeds max_steps {self.max_steps}")
        if self.batch_size < 1 or self.max_steps < 0 or self.learning_rate < 0:
            raise ConfigError("batch_size must be positive; max_steps and learning_rate non-negative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigError("mask_rate must be in [0, 1]")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.sat_layer < 1 or self.sat_channels < 1:
            raise ConfigError(f"sat_layer and sat_channels must be >= 1, got {self.sat_layer} and {self.sat_channels}")

    def to_dict(self):
        data = asdict(self)
        data['schedule'] = self.schedule.value
        return data


@dataclass(frozen=True)
class StepLog:
    step: int
    loss: float
    lr: float


@dataclass
class TrainResult:
    model: object
    curve: list
    stopped_early: bool = False
    best_val_loss: float = None
    substitution_step: int = None

    @property
    def steps(self):
        return self.curve[-1].step if self.curve else 0


def warmup_factor(step, warmup_steps):
    """Linear ramp: step s of the warmup runs at s / warmup_steps of the base rate."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


def trailing_mean(curve, window=50):
    """Mean training loss over the last `window` logged steps."""
    if not curve:
        return float('nan')
    tail = curve[-window:]
    return sum(s.loss for s in tail) / len(tail)


def write_training_log(curve, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write("step\tloss\tlr\n")
        for s in curve:
            f.write(f"{s.step}\t{s.loss:.17g}\t{s.lr:.17g}\n")


def read_training_log(path):
    curve = []
    with open(path, encoding='utf-8') as f:
        next(f, None)
        for lineno, line in enumerate(f, start=2):
            parts = line.split('\t')
            if len(parts) != 3:
                raise ParseError(lineno, "expected 'step<TAB>loss<TAB>lr'")
            curve.append(StepLog(int(parts[0]), float(parts[1]), float(parts[2])))
    return curve


def freeze_and_substitute(model, layer_index, channels, seed=None):
    """Freeze every tensor and replace layer `layer_index` (1-based) by a SAT layer.

    The C parallel layers start as copies of the replaced layer and are trainable;
    the mixing MLP is freshly initialised and trainable.
    """
    config = model.config
    if not 1 <= layer_index <= config.num_layers:
        raise ConfigError(f"layer {layer_index} outside 1..{config.num_layers}")
    if channels < 1:
        raise ConfigError("channels must be >= 1")
    if isinstance(model.layers[layer_index - 1], SATLayer):
        raise ConfigError(f"layer {layer_index} is already a SAT layer")

    for p in model.parameters():
        p.requires_grad_(False)
    base = model.layers[layer_index - 1]
    sat = SATLayer(base, config.social_dim, channels)
    seeded_init(sat.mlp, config.init_std, config.seed + 1 if seed is None else seed)
    reference = next(base.parameters())
    sat.to(dtype=reference.dtype)
    for p in sat.parameters():
        p.requires_grad_(True)
    model.layers[layer_index - 1] = sat
    model.config = replace(config, injection=Injection.SAT, sat_layer=layer_index, sat_channels=channels)
    logger.info(f"Substituted layer {layer_index} by a SAT layer with {channels} channels; "
                f"{sum(p.numel() for p in sat.parameters())} trainable parameters")
    return model


def _batch_indices(step, num_docs, cfg):
    per_epoch = math.ceil(num_docs / cfg.batch_size)
    epoch, offset = divmod(step - 1, per_epoch)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(num_docs)
    return order[offset * cfg.batch_size:(offset + 1) * cfg.batch_size]


def _optimizer(model, cfg):
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
                                 eps=cfg.eps, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda e: warmup_factor(e + 1, cfg.warmup_steps))
    return optimizer, scheduler


def train_mlm(model, splits, cfg, tokenizer, embeddings=None, resume_state=None,
              checkpoint_path=None, checkpoint_every=None, on_checkpoint=None):
    """Train on splits.train, early-stopping on splits.val_k.

    SAT_TWO_PHASE trains the given injection-free model for `phase1_steps`
    (one epoch by default), then freezes it, substitutes the SAT layer and
    keeps training only the SAT tensors. `resume_state` continues a run saved
    by `on_checkpoint`, reproducing the uninterrupted run.
    """
    if not splits.train:
        raise ConfigError("training split is empty")
    dtype = torch.float64 if cfg.precision == 64 else torch.float32
    model.to(dtype=dtype)
    if embeddings is not None and cfg.schedule is Schedule.BASELINE:
        message = "injection is none; social embeddings are ignored"
        logger.warning(message)
        warnings.warn(message, EmbeddingsIgnored, stacklevel=2)
        embeddings = None
    if cfg.schedule is not Schedule.BASELINE and embeddings is None:
        raise ConfigError(f"schedule {cfg.schedule.value} needs social embeddings")
    if cfg.schedule is Schedule.ZERO_TOKEN and model.injection is not Injection.ZERO_TOKEN:
        raise ConfigError("zero_token schedule needs a model built with zero-token injection")

    phase1_steps = cfg.phase1_steps
    if phase1_steps is None:
        phase1_steps = math.ceil(len(splits.train) / cfg.batch_size)
    state = {'step': 0, 'curve': [], 'best': None, 'bad_evals': 0, 'stopped': False,
             'substitution_step': None}
    if resume_state:
        state.update({k: v for k, v in resume_state.items() if k in state})
        state['curve'] = [StepLog(*row) for row in resume_state['curve']]

    two_phase = cfg.schedule is Schedule.SAT_TWO_PHASE
    if two_phase and cfg.sat_layer > model.config.num_layers:
        raise ConfigError(f"sat_layer {cfg.sat_layer} outside 1..{model.config.num_layers}")
    if two_phase and model.injection is not Injection.SAT and state['substitution_step'] is not None:
        raise ConfigError("resume state says the SAT layer was substituted but the model has none")

    optimizer, scheduler = _optimizer(model, cfg)
    if resume_state:
        optimizer.load_state_dict(resume_state['optimizer'])
        scheduler.load_state_dict(resume_state['scheduler'])

    def checkpoint():
        if on_checkpoint is None:
            return
        on_checkpoint(model, {
            'step': state['step'],
            'curve': [[s.step, s.loss, s.lr] for s in state['curve']],
            'best': state['best'], 'bad_evals': state['bad_evals'], 'stopped': state['stopped'],
            'substitution_step': state['substitution_step'],
            'optimizer': optimizer.state_dict(), 'scheduler': scheduler.state_dict(),
        })

    docs = splits.train
    while state['step'] < cfg.max_steps and not state['stopped']:
        if two_phase and model.injection is not Injection.SAT and state['step'] >= phase1_steps:
            freeze_and_substitute(model, cfg.sat_layer, cfg.sat_channels)
            model.to(dtype=dtype)
            optimizer, scheduler = _optimizer(model, cfg)
            state['substitution_step'] = state['step']
            state['best'], state['bad_evals'] = None, 0
            logger.info(f"Phase 2 starts at step {state['step']}: SAT layer at {cfg.sat_layer}, "
                        f"C={cfg.sat_channels}")

        step = state['step'] + 1
        chosen = [docs[i] for i in _batch_indices(step, len(docs), cfg)]
        rngs = [np.random.default_rng([cfg.seed, step, d.doc_id]) for d in chosen]
        batch = make_batch(chosen, tokenizer, model.config.max_seq_len, model.config.social_dim,
                           embeddings if model.injection is not Injection.NONE else None,
                           cfg.mask_rate, rngs, dtype=dtype)
        model.train()
        logits = model(batch.token_ids, batch.attention_mask, batch.social_vectors)
        loss = mlm_loss(logits, batch.mlm_labels)
        if not torch.isfinite(loss):
            raise TrainingDiverged(step, loss.item())
        optimizer.zero_grad()
        loss.backward()
        lr = optimizer.param_groups[0]['lr']
        optimizer.step()
        scheduler.step()
        state['step'] = step
        state['curve'].append(StepLog(step, loss.item() / LN2, lr))

        if step % max(cfg.log_window, 1) == 0:
            logger.info(f"step {step}: loss {trailing_mean(state['curve'], cfg.log_window):.4f} lr {lr:.3g}")

        in_phase1 = two_phase and model.injection is not Injection.SAT
        if cfg.eval_every and step % cfg.eval_every == 0 and splits.val_k and not in_phase1:
            report = evaluate(model, splits.val_k, embeddings, tokenizer, tag='val-k', seed=cfg.seed,
                              batch_size=cfg.batch_size, mask_rate=cfg.mask_rate)
            if state['best'] is None or report.loss < state['best']:
                state['best'], state['bad_evals'] = report.loss, 0
            else:
                state['bad_evals'] += 1
                if state['bad_evals'] >= cfg.patience:
                    state['stopped'] = True
                    logger.info(f"Early stop at step {step}: val-k loss rose for {cfg.patience} evaluations")
        if checkpoint_every and step % checkpoint_every == 0:
            checkpoint()

    checkpoint()
    return TrainResult(model=model, curve=state['curve'], stopped_early=state['stopped'],
                       best_val_loss=state['best'], substitution_step=state['substitution_step'])


# Evaluation

@dataclass(frozen=True)
class EvalReport:
    tag: str
    loss: float
    perplexity: float
    count: int
    steps: int = 0
    entropy_floor: float = None

    def to_tsv(self):
        return f"{self.tag}\t{self.loss:.17g}\t{self.perplexity:.17g}\t{self.count}"

    @classmethod
    def from_tsv(cls, line):
        parts = line.rstrip('\n').split('\t')
        if len(parts) != 4:
            raise ParseError(1, "expected 'tag<TAB>loss<TAB>perplexity<TAB>count'")
        return cls(tag=parts[0], loss=float(parts[1]), perplexity=float(parts[2]), count=int(parts[3]))


def perplexity_from_loss(loss):
    return 2.0 ** loss


def check_report_relation(loss, perplexity, tol=1e-12):
    """True when perplexity == 2**loss within `tol`."""
    return abs(perplexity_from_loss(loss) - perplexity) <= tol


def evaluate(model, documents, embeddings, tokenizer, tag='val-k', seed=0, batch_size=32,
             mask_rate=0.15, entropy_floor=None):
    """Masked-token cross-entropy over `documents`; each document is masked by its own seeded generator."""
    if not documents:
        raise ConfigError(f"dataset {tag} is empty")
    dtype = next(model.parameters()).dtype
    use_social = model.injection is not Injection.NONE
    model.eval()
    total, count, steps = 0.0, 0, 0
    with torch.no_grad():
        for start in range(0, len(documents), batch_size):
            chunk = documents[start:start + batch_size]
            rngs = [np.random.default_rng([seed, d.doc_id]) for d in chunk]
            batch = make_batch(chunk, tokenizer, model.config.max_seq_len, model.config.social_dim,
                               embeddings if use_social else None, mask_rate, rngs, dtype=dtype)
            logits = model(batch.token_ids, batch.attention_mask, batch.social_vectors)
            masked = batch.mlm_labels != IGNORE_INDEX
            total += F.cross_entropy(logits[masked], batch.mlm_labels[masked], reduction='sum').item()
            count += int(masked.sum())
            steps += 1
    loss = total / count / LN2
    report = EvalReport(tag=tag, loss=loss, perplexity=perplexity_from_loss(loss), count=count,
                        steps=steps, entropy_floor=entropy_floor)
    logger.info(f"eval {tag}: loss {loss:.4f} perplexity {report.perplexity:.4f} over {count} tokens")
    return report
