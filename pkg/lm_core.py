"""
Small BERT-style encoder with an MLM head and two ways of conditioning on a
group's social embedding:

  zero-token: the projected social vector is added to the position-0 ([CLS])
              embedding, P is a learned H x d matrix initialised to zero;
  SAT:        encoder layer i is replaced by C parallel copies whose outputs
              are mixed by W = softmax(MLP(social)), one W per sequence.

With injection NONE the social vectors are never read.
"""

import copy
import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ConfigError, EmptyBatch, VocabError

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
CHECKPOINT_VERSION = 1
MAX_SEQ_LEN_LIMIT = 128


class Injection(str, enum.Enum):
    NONE = 'none'
    ZERO_TOKEN = 'zero'
    SAT = 'sat'


@dataclass
class ModelConfig:
    num_layers: int = 4
    hidden_size: int = 128
    num_heads: int = 4
    ffn_size: int = 512
    vocab_size: int = 2005
    max_seq_len: int = 64
    social_dim: int = 32
    injection: Injection = Injection.NONE
    sat_layer: int = 3
    sat_channels: int = 4
    dropout: float = 0.0
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        try:
            self.injection = Injection(self.injection)
        except ValueError:
            raise ConfigError(f"unknown injection {self.injection!r}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by {self.num_heads} heads")
        if not 1 <= self.max_seq_len <= MAX_SEQ_LEN_LIMIT:
            raise ConfigError(f"max_seq_len must be in [1, {MAX_SEQ_LEN_LIMIT}]")
        if self.num_layers < 1 or self.vocab_size < 1 or self.social_dim < 1:
            raise ConfigError("num_layers, vocab_size and social_dim must be positive")
        if self.injection is Injection.SAT:
            if not 1 <= self.sat_layer <= self.num_layers:
                raise ConfigError(f"sat_layer {self.sat_layer} outside 1..{self.num_layers}")
            if self.sat_channels < 1:
                raise ConfigError("sat_channels must be >= 1")

    def to_dict(self):
        data = asdict(self)
        data['injection'] = self.injection.value
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class Batch:
    token_ids: torch.Tensor        # (B, S) long
    attention_mask: torch.Tensor   # (B, S) bool, True for real tokens
    mlm_labels: torch.Tensor       # (B, S) long, IGNORE_INDEX where not masked
    social_vectors: torch.Tensor   # (B, d)
    group_ids: list = field(default_factory=list)

    def __len__(self):
        return int(self.token_ids.shape[0])


class EncoderLayer(nn.Module):
    """Post-norm transformer layer: self-attention and GELU feed-forward."""

    def __init__(self, config):
        super().__init__()
        h = config.hidden_size
        self.num_heads = config.num_heads
        self.head_size = h // config.num_heads
        self.query = nn.Linear(h, h)
        self.key = nn.Linear(h, h)
        self.value = nn.Linear(h, h)
        self.attn_out = nn.Linear(h, h)
        self.attn_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.ffn_in = nn.Linear(h, config.ffn_size)
        self.ffn_out = nn.Linear(config.ffn_size, h)
        self.ffn_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.dropout = nn.Dropout(config.dropout)

    def _split_heads(self, x):
        b, s, _ = x.shape
        return x.view(b, s, self.num_heads, self.head_size).transpose(1, 2)

    def attention_probs(self, hidden, mask):
        """(B, heads, S, S); padded keys get no weight and padded queries attend to nothing."""
        q = self._split_heads(self.query(hidden))
        k = self._split_heads(self.key(hidden))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_size)
        scores = scores.masked_fill(~mask[:, None, None, :], torch.finfo(scores.dtype).min)
        probs = torch.softmax(scores, dim=-1)
        return probs * mask[:, None, :, None].to(probs.dtype)

    def forward(self, hidden, mask):
        b, s, h = hidden.shape
        probs = self.dropout(self.attention_probs(hidden, mask))
        context = (probs @ self._split_heads(self.value(hidden))).transpose(1, 2).reshape(b, s, h)
        hidden = self.attn_norm(hidden + self.dropout(self.attn_out(context)))
        ffn = self.ffn_out(F.gelu(self.ffn_in(hidden)))
        return self.ffn_norm(hidden + self.dropout(ffn))


def zero_token_inject(social, token_embeddings, projection):
    """Add projection @ social to position 0; every other position is untouched.

    social: (B, d) or (d,); token_embeddings: (B, S, H) or (S, H); projection: (H, d).
    """
    first = token_embeddings[..., 0, :] + social @ projection.T
    return torch.cat([first.unsqueeze(-2), token_embeddings[..., 1:, :]], dim=-2)


class ZeroTokenInjection(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.projection = nn.Linear(config.social_dim, config.hidden_size, bias=False)

    def forward(self, embeddings, social):
        return zero_token_inject(social, embeddings, self.projection.weight)


class SATLayer(nn.Module):
    """C parallel copies of one encoder layer mixed by a softmax over an MLP of the social vector."""

    def __init__(self, base_layer, social_dim, channels, mlp_hidden=None):
        super().__init__()
        mlp_hidden = mlp_hidden or social_dim
        self.mlp = nn.Sequential(
            nn.Linear(social_dim, mlp_hidden),
            nn.GELU(),
            nn.Linear(mlp_hidden, channels),
        )
        self.layers = nn.ModuleList(copy.deepcopy(base_layer) for _ in range(channels))

    @property
    def channels(self):
        return len(self.layers)

    def mixture_weights(self, social):
        return torch.softmax(self.mlp(social), dim=-1)

    def forward(self, hidden, mask, social):
        return sat_forward(hidden, social, self, mask)


def sat_forward(hidden, social, sat, attention_mask=None):
    """sum_c W_c * Layer_c(hidden) with W = softmax(MLP(social)) computed once per sequence."""
    if attention_mask is None:
        attention_mask = torch.ones(hidden.shape[:2], dtype=torch.bool, device=hidden.device)
    weights = sat.mixture_weights(social)
    if weights.dim() == 1:
        weights = weights.expand(hidden.shape[0], -1)
    output = 0
    for c, layer in enumerate(sat.layers):
        output = output + weights[:, c, None, None] * layer(hidden, attention_mask)
    return output


def init_weights(module, std):
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, mean=0.0, std=std, a=-2 * std, b=2 * std)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def seeded_init(module, std, seed):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module.apply(lambda m: init_weights(m, std))


class SocialBert(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        h = config.hidden_size
        self.token_embeddings = nn.Embedding(config.vocab_size, h)
        self.position_embeddings = nn.Embedding(config.max_seq_len, h)
        self.embed_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.embed_dropout = nn.Dropout(config.dropout)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self.injector = ZeroTokenInjection(config) if config.injection is Injection.ZERO_TOKEN else None
        self.head_transform = nn.Linear(h, h)
        self.head_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.decoder = nn.Linear(h, config.vocab_size)

        seeded_init(self, config.init_std, config.seed)
        if self.injector is not None:
            nn.init.zeros_(self.injector.projection.weight)
        if config.injection is Injection.SAT:
            index = config.sat_layer - 1
            sat = SATLayer(self.layers[index], config.social_dim, config.sat_channels)
            seeded_init(sat.mlp, config.init_std, config.seed + 1)
            self.layers[index] = sat

    @property
    def injection(self):
        return self.config.injection

    def _check_tokens(self, token_ids):
        if token_ids.numel() and (int(token_ids.max()) >= self.config.vocab_size or int(token_ids.min()) < 0):
            raise VocabError(f"token id outside [0, {self.config.vocab_size})")
        if token_ids.shape[1] > self.config.max_seq_len:
            raise VocabError(f"sequence length {token_ids.shape[1]} exceeds {self.config.max_seq_len}")

    def _social(self, social, batch_size, dtype):
        if social is None:
            return torch.zeros(batch_size, self.config.social_dim, dtype=dtype)
        return social.to(dtype)

    def embed(self, token_ids, social=None):
        self._check_tokens(token_ids)
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        embeddings = self.token_embeddings(token_ids) + self.position_embeddings(positions)[None]
        embeddings = self.embed_norm(embeddings)
        if self.injector is not None:
            embeddings = self.injector(embeddings, self._social(social, token_ids.shape[0], embeddings.dtype))
        return self.embed_dropout(embeddings)

    def encode(self, token_ids, attention_mask=None, social=None):
        if attention_mask is None:
            attention_mask = torch.ones_like(token_ids, dtype=torch.bool)
        hidden = self.embed(token_ids, social)
        for layer in self.layers:
            if isinstance(layer, SATLayer):
                hidden = layer(hidden, attention_mask, self._social(social, token_ids.shape[0], hidden.dtype))
            else:
                hidden = layer(hidden, attention_mask)
        return hidden

    def mlm_logits(self, hidden):
        return self.decoder(self.head_norm(F.gelu(self.head_transform(hidden))))

    def forward(self, token_ids, attention_mask=None, social=None):
        return self.mlm_logits(self.encode(token_ids, attention_mask, social))


def encode(batch, model):
    """Hidden states (B, S, H) for a batch."""
    return model.encode(batch.token_ids, batch.attention_mask, batch.social_vectors)


def mlm_loss(logits, labels):
    """Natural-log cross-entropy averaged over masked positions."""
    masked = labels != IGNORE_INDEX
    if not bool(masked.any()):
        raise EmptyBatch("batch has no masked positions")
    return F.cross_entropy(logits[masked], labels[masked])


def named_trainable(parameters):
    if isinstance(parameters, nn.Module):
        return [(n, p) for n, p in parameters.named_parameters() if p.requires_grad]
    return [(n, p) for n, p in dict(parameters).items() if p.requires_grad]


def compute_gradients(loss, parameters):
    """Reverse-mode gradients for every trainable tensor; frozen tensors are left out."""
    named = named_trainable(parameters)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {name: torch.zeros_like(p) if g is None else g for (name, p), g in zip(named, grads)}


def save_checkpoint(path, model, extra=None):
    state = model.state_dict()
    torch.save({
        'format_version': CHECKPOINT_VERSION,
        'config': model.config.to_dict(),
        'tensor_index': [
            {'name': name, 'shape': list(t.shape), 'dtype': str(t.dtype).replace('torch.', '')}
            for name, t in state.items()
        ],
        'state_dict': state,
        'frozen': [n for n, p in model.named_parameters() if not p.requires_grad],
        'extra': extra or {},
    }, path)
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path):
    """Returns (model, extra)."""
    payload = torch.load(path, map_location='cpu', weights_only=False)
    version = payload.get('format_version')
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r} in {path}")
    model = SocialBert(ModelConfig.from_dict(payload['config']))
    dtypes = {entry['dtype'] for entry in payload['tensor_index']}
    if 'float64' in dtypes:
        model.double()
    model.load_state_dict(payload['state_dict'])
    frozen = set(payload.get('frozen', ()))
    for name, p in model.named_parameters():
        p.requires_grad_(name not in frozen)
    return model, payload.get('extra', {})
