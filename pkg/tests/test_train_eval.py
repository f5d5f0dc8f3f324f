"""
Tests for corpora, splits, masking, the training schedules and evaluation.
"""

import functools
import math

import numpy as np
import pytest
import torch

from embed import SocialEmbedding
from errors import ConfigError, EmbeddingsIgnored, ParseError, SplitError, TrainingDiverged
from lm_core import IGNORE_INDEX, Injection, ModelConfig, SocialBert, compute_gradients, load_checkpoint, save_checkpoint
from train_eval import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    UNK_ID,
    Corpus,
    DatasetSplits,
    EvalReport,
    Schedule,
    SplitSpec,
    StepLog,
    TrainConfig,
    Tokenizer,
    check_report_relation,
    evaluate,
    freeze_and_substitute,
    make_batch,
    mask_tokens,
    read_training_log,
    split_datasets,
    train_mlm,
    trailing_mean,
    warmup_factor,
    write_training_log,
)

WORDS = [f"w{i:02d}" for i in range(12)]


def make_corpus(num_groups=10, docs_per_group=5, length=10, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for g in range(num_groups):
        for _ in range(docs_per_group):
            rows.append((f"g{g:02d}", [WORDS[i] for i in rng.integers(0, len(WORDS), size=length)]))
    return Corpus.from_texts(rows)


def make_embeddings(corpus, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return SocialEmbedding(d_svd=0, d_dw=dim, vectors={g: rng.normal(size=dim) for g in corpus.group_ids})


def make_model(tokenizer, injection=Injection.NONE, seed=0):
    return SocialBert(ModelConfig(num_layers=2, hidden_size=16, num_heads=2, ffn_size=32,
                                  vocab_size=tokenizer.vocab_size, max_seq_len=16, social_dim=4,
                                  injection=injection, seed=seed))


def quick_config(**overrides):
    values = dict(learning_rate=1e-3, warmup_steps=2, max_steps=6, batch_size=4, eval_every=0, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


# ============ TOKENIZER & CORPUS ============

def test_tokenizer_ids_start_after_specials():
    tok = Tokenizer.from_token_lists([['b', 'a'], ['c']])
    assert tok.words == ('a', 'b', 'c')
    assert tok.encode(['a', 'c', 'zzz']) == (4, 6, UNK_ID)
    assert tok.decode([CLS_ID, 5]) == ['[CLS]', 'b']
    assert tok.vocab_size == 7


def test_corpus_save_load_round_trip(tmp_path):
    corpus = make_corpus(num_groups=3, docs_per_group=2)
    first, second = tmp_path / 'a.tsv', tmp_path / 'b.tsv'
    corpus.save(first)
    loaded = Corpus.load(first)
    loaded.save(second)
    assert first.read_bytes() == second.read_bytes()
    assert [d.group_id for d in loaded.documents] == [d.group_id for d in corpus.documents]


def test_corpus_parse_error_has_line(tmp_path):
    path = tmp_path / 'bad.tsv'
    path.write_text('g1\tw00 w01\nno tab here\n')
    with pytest.raises(ParseError) as info:
        Corpus.load(path)
    assert info.value.line_number == 2


def test_corpus_load_ignores_repeated_spaces(tmp_path):
    path = tmp_path / 'spaced.tsv'
    path.write_text('g1\tw00  w01   w02 \n')
    corpus = Corpus.load(path)
    assert corpus.tokenizer.words == ('w00', 'w01', 'w02')
    assert len(corpus.documents[0].token_ids) == 3


# ============ SPLITS ============

def test_split_counts_and_membership():
    corpus = make_corpus(num_groups=10, docs_per_group=5)
    splits = split_datasets(corpus, SplitSpec(known_group_fraction=0.9, val_text_fraction=0.2, seed=3))
    train_groups = {d.group_id for d in splits.train}
    unknown = {d.group_id for d in splits.val_u}
    assert len(train_groups) == 9 and len(unknown) == 1
    assert len(splits.val_u) == 5
    assert {d.group_id for d in splits.val_k} <= train_groups
    assert not unknown & train_groups
    ids = [set(d.doc_id for d in part) for part in (splits.train, splits.val_k, splits.val_u)]
    assert not ids[0] & ids[1] and not ids[0] & ids[2] and not ids[1] & ids[2]
    assert sum(len(i) for i in ids) == len(corpus.documents)


def test_split_is_deterministic():
    corpus = make_corpus()
    spec = SplitSpec(seed=11)
    assert split_datasets(corpus, spec).to_manifest() == split_datasets(corpus, spec).to_manifest()


def test_split_manifest_round_trip():
    corpus = make_corpus()
    splits = split_datasets(corpus, SplitSpec(seed=1))
    again = DatasetSplits.from_manifest(corpus, splits.to_manifest())
    assert again.val_k == splits.val_k and again.val_u == splits.val_u


def test_split_errors():
    with pytest.raises(SplitError):
        split_datasets(make_corpus(num_groups=1), SplitSpec())
    with pytest.raises(SplitError):
        split_datasets(make_corpus(num_groups=4, docs_per_group=1), SplitSpec())
    with pytest.raises(ConfigError):
        SplitSpec(known_group_fraction=1.0)


def test_min_docs_filter_drops_small_groups():
    rows = [('big', ['w00', 'w01'])] * 6 + [('other', ['w02'])] * 6 + [('tiny', ['w03'])]
    corpus = Corpus.from_texts(rows)
    splits = split_datasets(corpus, SplitSpec(known_group_fraction=0.5, min_docs_per_group=5))
    groups = {d.group_id for part in (splits.train, splits.val_k, splits.val_u) for d in part}
    assert groups == {'big', 'other'}


# ============ MASKING ============

def test_mask_rate_zero_is_identity():
    seq = np.arange(4, 40)
    ids, labels = mask_tokens(seq, 0.0, seed=1, vocab_size=50)
    assert np.array_equal(ids, seq)
    assert np.all(labels == IGNORE_INDEX)


def test_full_masking_without_mix():
    seq = np.arange(4, 40)
    ids, labels = mask_tokens(seq, 1.0, seed=1, mix=None)
    assert np.all(ids == MASK_ID)
    assert np.array_equal(labels, seq)


def test_mask_proportions():
    seq = np.random.default_rng(0).integers(4, 1000, size=100_000)
    ids, labels = mask_tokens(seq, 0.15, seed=7, vocab_size=1000)
    selected = labels != IGNORE_INDEX
    assert 0.14 <= selected.mean() <= 0.16
    masked = (ids[selected] == MASK_ID).mean()
    kept = (ids[selected] == seq[selected]).mean()
    randomised = 1.0 - masked - kept
    assert abs(masked - 0.8) <= 0.02
    assert abs(kept - 0.1) <= 0.02
    assert abs(randomised - 0.1) <= 0.02


def test_protected_tokens_never_selected_and_min_masked():
    seq = [CLS_ID, 5, 6, 7]
    ids, labels = mask_tokens(seq, 0.0, seed=0, protected=(CLS_ID,), min_masked=1, mix=None)
    assert labels[0] == IGNORE_INDEX
    assert (labels != IGNORE_INDEX).sum() == 1
    ids, labels = mask_tokens(seq, 1.0, seed=0, protected=(CLS_ID,), mix=None)
    assert ids[0] == CLS_ID and labels[0] == IGNORE_INDEX


def test_make_batch_truncates_pads_and_prefixes_cls():
    corpus = Corpus.from_texts([('a', WORDS * 2), ('b', WORDS[:3])])
    rngs = [np.random.default_rng(i) for i in range(2)]
    batch = make_batch(corpus.documents, corpus.tokenizer, max_seq_len=8, social_dim=4, rngs=rngs)
    assert batch.token_ids.shape == (2, 8)
    assert torch.all(batch.token_ids[:, 0] == CLS_ID)
    assert batch.attention_mask[1].tolist() == [True] * 4 + [False] * 4
    assert torch.all(batch.token_ids[1, 4:] == PAD_ID)
    assert torch.all(batch.mlm_labels[:, 0] == IGNORE_INDEX)
    assert torch.all(batch.mlm_labels[1, 4:] == IGNORE_INDEX)
    assert torch.all((batch.mlm_labels != IGNORE_INDEX).sum(dim=1) >= 1)
    assert torch.all(batch.social_vectors == 0)


# ============ SCHEDULE & TRAINING ============

def test_warmup_is_linear_then_constant():
    assert warmup_factor(250, 500) == 0.5
    assert warmup_factor(500, 500) == 1.0
    assert warmup_factor(900, 500) == 1.0
    assert warmup_factor(3, 0) == 1.0


def test_effective_lr_halfway_through_warmup():
    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    cfg = quick_config(learning_rate=1e-3, warmup_steps=10, max_steps=10)
    result = train_mlm(make_model(corpus.tokenizer), splits, cfg, corpus.tokenizer)
    assert result.curve[4].step == 5
    assert result.curve[4].lr == pytest.approx(0.5e-3)
    assert result.curve[-1].lr == pytest.approx(1e-3)


def test_config_rejects_warmup_beyond_max_steps():
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=10, max_steps=5)


def test_zero_learning_rate_leaves_parameters_unchanged():
    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    model = make_model(corpus.tokenizer)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train_mlm(model, splits, quick_config(learning_rate=0.0, warmup_steps=0), corpus.tokenizer)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_training_loss_decreases_on_tiny_corpus():
    rows = [('g', ['w00', 'w01', 'w02', 'w03', 'w04', 'w05'] * 2),
            ('g', ['w06', 'w07', 'w08', 'w09', 'w10', 'w11'] * 2),
            ('h', ['w00', 'w02', 'w04', 'w06', 'w08', 'w10'] * 2)]
    corpus = Corpus.from_texts(rows)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    drops = []
    for seed in range(3):
        cfg = quick_config(learning_rate=3e-3, warmup_steps=5, max_steps=50, batch_size=3, mask_rate=0.3, seed=seed)
        curve = train_mlm(make_model(corpus.tokenizer, seed=seed), splits, cfg, corpus.tokenizer).curve
        drops.append(np.mean([s.loss for s in curve[:5]]) - trailing_mean(curve, 5))
    assert np.mean(drops) > 0


def test_divergence_reports_step():
    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    model = make_model(corpus.tokenizer)
    with torch.no_grad():
        model.decoder.bias.fill_(float('nan'))
    with pytest.raises(TrainingDiverged) as info:
        train_mlm(model, splits, quick_config(), corpus.tokenizer)
    assert info.value.step == 1


def test_early_stop_after_patience_without_improvement():
    corpus = make_corpus(num_groups=3, docs_per_group=4)
    splits = split_datasets(corpus, SplitSpec(known_group_fraction=0.6, val_text_fraction=0.25))
    cfg = quick_config(learning_rate=0.0, warmup_steps=0, max_steps=20, eval_every=1, patience=3)
    result = train_mlm(make_model(corpus.tokenizer), splits, cfg, corpus.tokenizer)
    assert result.stopped_early
    assert result.steps == 4


def test_baseline_ignores_embeddings():
    corpus = make_corpus(num_groups=3, docs_per_group=4)
    splits = split_datasets(corpus, SplitSpec(known_group_fraction=0.6, val_text_fraction=0.25))
    embeddings = make_embeddings(corpus)
    plain = train_mlm(make_model(corpus.tokenizer), splits, quick_config(), corpus.tokenizer)
    with pytest.warns(EmbeddingsIgnored):
        given = train_mlm(make_model(corpus.tokenizer), splits, quick_config(), corpus.tokenizer,
                          embeddings=embeddings)
    assert [s.loss for s in plain.curve] == [s.loss for s in given.curve]
    a = evaluate(plain.model, splits.val_u, None, corpus.tokenizer, tag='val-u')
    b = evaluate(given.model, splits.val_u, embeddings, corpus.tokenizer, tag='val-u')
    assert a == b


def test_injection_schedules_need_embeddings():
    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    with pytest.raises(ConfigError):
        train_mlm(make_model(corpus.tokenizer, Injection.ZERO_TOKEN), splits,
                  quick_config(schedule=Schedule.ZERO_TOKEN), corpus.tokenizer)


def test_zero_token_training_updates_projection():
    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    model = make_model(corpus.tokenizer, Injection.ZERO_TOKEN)
    train_mlm(model, splits, quick_config(schedule='zero_token'), corpus.tokenizer,
              embeddings=make_embeddings(corpus))
    assert model.injector.projection.weight.abs().sum() > 0


# ============ FREEZE & SUBSTITUTE ============

def test_single_copy_substitution_preserves_outputs():
    corpus = make_corpus(num_groups=2, docs_per_group=2)
    model = make_model(corpus.tokenizer)
    rngs = [np.random.default_rng(i) for i in range(4)]
    batch = make_batch(corpus.documents, corpus.tokenizer, 16, 4, make_embeddings(corpus), rngs=rngs)
    before = model(batch.token_ids, batch.attention_mask)
    freeze_and_substitute(model, 2, channels=1)
    after = model(batch.token_ids, batch.attention_mask, batch.social_vectors)
    assert model.injection is Injection.SAT
    assert torch.allclose(before, after, atol=1e-6)

    grads = compute_gradients(
        torch.nn.functional.cross_entropy(after.view(-1, after.shape[-1]), batch.token_ids.view(-1)), model)
    assert grads and all(name.startswith('layers.1.') for name in grads)


def test_substitute_validates_layer_index():
    model = make_model(make_corpus(num_groups=2).tokenizer)
    with pytest.raises(ConfigError):
        freeze_and_substitute(model, 3, channels=2)
    with pytest.raises(ConfigError):
        freeze_and_substitute(model, 0, channels=2)


def test_sat_settings_rejected_before_training():
    with pytest.raises(ConfigError):
        quick_config(sat_layer=0)
    with pytest.raises(ConfigError):
        quick_config(sat_channels=0)

    corpus = make_corpus(num_groups=2, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    model = make_model(corpus.tokenizer)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    cfg = quick_config(schedule=Schedule.SAT_TWO_PHASE, phase1_steps=3, sat_layer=5, sat_channels=2)
    with pytest.raises(ConfigError):
        train_mlm(model, splits, cfg, corpus.tokenizer, embeddings=make_embeddings(corpus))
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_sat_two_phase_schedule():
    corpus = make_corpus(num_groups=3, docs_per_group=4)
    splits = DatasetSplits(train=corpus.documents, val_k=[], val_u=[])
    cfg = quick_config(schedule=Schedule.SAT_TWO_PHASE, phase1_steps=3, max_steps=6, sat_layer=2, sat_channels=2)
    result = train_mlm(make_model(corpus.tokenizer), splits, cfg, corpus.tokenizer,
                       embeddings=make_embeddings(corpus))
    assert result.substitution_step == 3
    assert result.model.injection is Injection.SAT
    trainable = [n for n, p in result.model.named_parameters() if p.requires_grad]
    assert trainable and all(n.startswith('layers.1.') for n in trainable)
    assert len(result.curve) == 6


# ============ RESUME ============

def test_resume_matches_uninterrupted_run(tmp_path):
    corpus = make_corpus(num_groups=3, docs_per_group=4)
    splits = split_datasets(corpus, SplitSpec(known_group_fraction=0.6, val_text_fraction=0.25))
    embeddings = make_embeddings(corpus)
    cfg = quick_config(schedule=Schedule.ZERO_TOKEN, max_steps=8, precision=64)
    full = train_mlm(make_model(corpus.tokenizer, Injection.ZERO_TOKEN), splits, cfg, corpus.tokenizer,
                     embeddings=embeddings)

    path = tmp_path / 'ckpt.pt'

    def save(model, state):
        save_checkpoint(path, model, {'train_state': state})

    train_mlm(make_model(corpus.tokenizer, Injection.ZERO_TOKEN), splits, quick_config(
        schedule=Schedule.ZERO_TOKEN, max_steps=4, precision=64), corpus.tokenizer, embeddings=embeddings,
        on_checkpoint=save)
    model, extra = load_checkpoint(path)
    resumed = train_mlm(model, splits, cfg, corpus.tokenizer, embeddings=embeddings,
                        resume_state=extra['train_state'])

    assert [s.step for s in resumed.curve] == list(range(1, 9))
    a = evaluate(full.model, splits.val_u, embeddings, corpus.tokenizer, tag='val-u')
    b = evaluate(resumed.model, splits.val_u, embeddings, corpus.tokenizer, tag='val-u')
    assert abs(a.loss - b.loss) <= 1e-6


# ============ EVALUATION & REPORTS ============

def test_uniform_model_has_perplexity_vocab_size():
    tokenizer = Tokenizer(words=tuple(WORDS))
    assert tokenizer.vocab_size == 16
    corpus = Corpus.from_texts([('g', WORDS[:8]), ('g', WORDS[4:])], tokenizer=tokenizer)
    model = make_model(tokenizer)
    with torch.no_grad():
        model.decoder.weight.zero_()
        model.decoder.bias.zero_()
    report = evaluate(model, corpus.documents, None, tokenizer, tag='train')
    assert report.loss == pytest.approx(4.0, abs=1e-6)
    assert report.perplexity == pytest.approx(16.0, abs=1e-4)


def test_evaluation_is_deterministic_and_consistent():
    corpus = make_corpus(num_groups=2, docs_per_group=6)
    model = make_model(corpus.tokenizer)
    first = evaluate(model, corpus.documents, None, corpus.tokenizer, tag='val-k', seed=4, entropy_floor=1.5)
    second = evaluate(model, corpus.documents, None, corpus.tokenizer, tag='val-k', seed=4, entropy_floor=1.5)
    assert first == second
    assert abs(first.perplexity - 2 ** first.loss) <= 1e-12
    assert first.loss >= 0
    assert first.entropy_floor == 1.5


def test_evaluation_independent_of_batch_size():
    corpus = make_corpus(num_groups=2, docs_per_group=6)
    model = make_model(corpus.tokenizer).double()
    a = evaluate(model, corpus.documents, None, corpus.tokenizer, batch_size=1)
    b = evaluate(model, corpus.documents, None, corpus.tokenizer, batch_size=12)
    assert a.count == b.count
    assert a.loss == pytest.approx(b.loss, abs=1e-9)


@pytest.mark.parametrize('loss, perplexity', [(1.82, 3.54), (1.69, 3.23), (2.00, 4.0), (1.50, 2.83), (1.39, 2.62)])
def test_published_pairs_pass_relation_check(loss, perplexity):
    assert check_report_relation(loss, perplexity, tol=0.01)


def test_relation_check_rejects_natural_log_reading():
    assert not check_report_relation(1.39, math.exp(1.39), tol=0.01)


def test_report_tsv_round_trip():
    report = EvalReport(tag='val-u', loss=1.473, perplexity=2 ** 1.473, count=321)
    line = report.to_tsv()
    assert line.split('\t')[0] == 'val-u'
    parsed = EvalReport.from_tsv(line)
    assert (parsed.tag, parsed.loss, parsed.perplexity, parsed.count) == ('val-u', 1.473, 2 ** 1.473, 321)


def test_training_log_round_trip_and_window(tmp_path):
    curve = [StepLog(step=i, loss=float(i), lr=1e-3) for i in range(1, 101)]
    path = tmp_path / 'log.tsv'
    write_training_log(curve, path)
    assert path.read_text().splitlines()[0] == 'step\tloss\tlr'
    assert read_training_log(path) == curve
    assert trailing_mean(curve, 50) == pytest.approx(np.mean(range(51, 101)))


# ============ DIRECTION OF EFFECT ============

BENCH_SEEDS = (0, 1, 2)
BENCH_STEPS = 3000
BENCH_PHASE1 = 1500


@functools.lru_cache(maxsize=1)
def planted_benchmark():
    from embed import Recipe, embed_graph
    from graph_core import compute_intersections
    from synthgen import SynthSpec, generate_corpus, generate_network

    spec = SynthSpec(num_groups=20, num_users=2000, num_topics=2, p_in=0.3, p_out=0.02, vocab_size=2000,
                     topic_vocab_overlap=0.5, docs_per_group=200, doc_length=24, seed=0)
    graph = generate_network(spec)
    corpus = generate_corpus(graph, spec)
    embeddings = embed_graph(graph, compute_intersections(graph), Recipe.CORR_DW, d_svd=16, d_dw=16)
    return corpus, embeddings


def bench_model(corpus, embeddings, seed, injection=Injection.NONE):
    return SocialBert(ModelConfig(num_layers=4, hidden_size=128, num_heads=4, ffn_size=512,
                                  vocab_size=corpus.tokenizer.vocab_size, max_seq_len=32,
                                  social_dim=embeddings.dim, seed=seed, injection=injection))


def bench_config(seed, schedule=Schedule.BASELINE, max_steps=BENCH_STEPS):
    return TrainConfig(learning_rate=5e-4, warmup_steps=100, max_steps=max_steps, batch_size=32, eval_every=0,
                       seed=seed, schedule=schedule, phase1_steps=BENCH_PHASE1, sat_layer=3, sat_channels=4)


def bench_losses(model, splits, embeddings, tokenizer, seed):
    return {tag: evaluate(model, docs, embeddings, tokenizer, tag=tag, seed=seed).loss
            for tag, docs in (('val-k', splits.val_k), ('val-u', splits.val_u))}


@pytest.mark.slow
def test_social_injection_beats_baseline_on_planted_topics():
    corpus, embeddings = planted_benchmark()
    arms = {'baseline': (Schedule.BASELINE, Injection.NONE), 'zero': (Schedule.ZERO_TOKEN, Injection.ZERO_TOKEN),
            'sat': (Schedule.SAT_TWO_PHASE, Injection.NONE)}
    losses = {arm: {'val-k': [], 'val-u': []} for arm in arms}
    for seed in BENCH_SEEDS:
        splits = split_datasets(corpus, SplitSpec(seed=seed))
        for arm, (schedule, injection) in arms.items():
            result = train_mlm(bench_model(corpus, embeddings, seed, injection), splits, bench_config(seed, schedule),
                               corpus.tokenizer, embeddings=None if arm == 'baseline' else embeddings)
            for tag, loss in bench_losses(result.model, splits, embeddings, corpus.tokenizer, seed).items():
                losses[arm][tag].append(loss)
    mean = {arm: {tag: np.mean(v) for tag, v in tags.items()} for arm, tags in losses.items()}

    assert mean['sat']['val-u'] < mean['zero']['val-u'] < mean['baseline']['val-u']
    gain = {tag: (mean['baseline'][tag] - mean['sat'][tag]) / mean['baseline'][tag] for tag in ('val-k', 'val-u')}
    assert gain['val-u'] >= 0.02
    assert gain['val-k'] >= gain['val-u']
    # injected models do better on groups seen in training
    for arm in ('zero', 'sat'):
        assert mean[arm]['val-u'] >= mean[arm]['val-k']


@pytest.mark.slow
def test_phase_two_improves_on_frozen_phase_one_model():
    corpus, embeddings = planted_benchmark()
    improvements = []
    for seed in BENCH_SEEDS:
        splits = split_datasets(corpus, SplitSpec(seed=seed))
        frozen = train_mlm(bench_model(corpus, embeddings, seed), splits,
                           bench_config(seed, max_steps=BENCH_PHASE1), corpus.tokenizer).model
        sat = train_mlm(bench_model(corpus, embeddings, seed), splits,
                        bench_config(seed, Schedule.SAT_TWO_PHASE), corpus.tokenizer, embeddings=embeddings).model
        before = evaluate(frozen, splits.val_k, None, corpus.tokenizer, tag='val-k', seed=seed).loss
        after = evaluate(sat, splits.val_k, embeddings, corpus.tokenizer, tag='val-k', seed=seed).loss
        improvements.append(before - after)
    assert np.mean(improvements) > 0
