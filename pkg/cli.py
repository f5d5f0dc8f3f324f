#!/usr/bin/env python3
"""
Command-line pipeline: synth -> ingest -> intersect -> similarity -> embed -> train -> eval.

Every subcommand except `serve` writes a RunManifest under the runs directory.
Exit codes: 0 success, 2 usage or validation, 3 data inconsistency, 4 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace
from datetime import datetime

import numpy as np
import torch

import settings
from embed import DEFAULT_DW_DIM, DEFAULT_SVD_DIM, Recipe, SocialEmbedding, WalkConfig, embed_graph
from errors import ConfigError, ReportTagError, SocialMLMError
from graph_core import compute_intersections, filter_groups, load_memberships, write_memberships
from lm_core import Injection, ModelConfig, SocialBert, load_checkpoint, save_checkpoint
from runs import RunManifest, new_run_id
from similarity import Metric, build_similarity_matrix
from synthgen import SynthSpec, entropy_floor, generate_corpus, generate_network
from train_eval import (Corpus, DatasetSplits, Schedule, SplitSpec, TrainConfig, Tokenizer, evaluate,
                        split_datasets, train_mlm, write_training_log)

logger = logging.getLogger('cli')

INJECTION_SCHEDULES = {'none': Schedule.BASELINE, 'zero': Schedule.ZERO_TOKEN, 'sat': Schedule.SAT_TWO_PHASE}

# name, schedule, embedding recipe
EXPERIMENT_ARMS = (
    ('baseline', Schedule.BASELINE, None),
    ('zero+corr+dw', Schedule.ZERO_TOKEN, Recipe.CORR_DW),
    ('zero+cos+dw', Schedule.ZERO_TOKEN, Recipe.COS_DW),
    ('zero+dw-only', Schedule.ZERO_TOKEN, Recipe.DW_ONLY),
    ('sat+corr+dw', Schedule.SAT_TWO_PHASE, Recipe.CORR_DW),
)


# Config plumbing

def _field_names(cls):
    return {f.name for f in fields(cls)}


def _config_values(args, *classes):
    """Config-file values for this subcommand; keys no config class knows are rejected."""
    values = settings.load_config_file(args.config, section=args.command)
    known = set().union(*(_field_names(c) for c in classes)) | {'threads', 'min_size', 'recipe'}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys for '{args.command}' in {args.config}: {sorted(unknown)}")
    return values


def _resolve(cls, file_values, args, **overrides):
    names = _field_names(cls)
    flags = {k: v for k, v in vars(args).items() if k in names}
    flags.update(overrides)
    return settings.resolve(cls, {k: v for k, v in file_values.items() if k in names}, flags)


def _threads(args):
    if args.deterministic:
        return 1
    return args.threads or settings.DEFAULT_THREADS


def _config_snapshot(*configs):
    snapshot = {}
    for cfg in configs:
        data = cfg.to_dict() if hasattr(cfg, 'to_dict') else {f.name: getattr(cfg, f.name) for f in fields(cfg)}
        snapshot[type(cfg).__name__] = data
    return snapshot


def _load_graph(path, min_size):
    graph = load_memberships(path)
    return filter_groups(graph, min_size) if min_size else graph


def _default_path(path, suffix):
    return os.path.splitext(path)[0] + suffix


# Subcommands

def cmd_synth(args):
    values = _config_values(args, SynthSpec)
    spec = _resolve(SynthSpec, values, args)
    graph = generate_network(spec)
    corpus = generate_corpus(graph, spec)
    write_memberships(graph, args.memberships)
    corpus.save(args.corpus)
    spec_path = args.spec_out or _default_path(args.corpus, '.spec.json')
    with open(spec_path, 'w', encoding='utf-8') as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
    print(f"groups={graph.num_groups} users={graph.num_users} documents={len(corpus.documents)} "
          f"entropy_floor={entropy_floor(spec):.6f}")
    return (_config_snapshot(spec), {},
            {'memberships': args.memberships, 'corpus': args.corpus, 'spec': spec_path}, spec.seed)


def cmd_ingest(args):
    graph = _load_graph(args.memberships, args.min_size)
    write_memberships(graph, args.out)
    print(f"groups={graph.num_groups} users={graph.num_users}")
    return {'min_size': args.min_size}, {'memberships': args.memberships}, {'memberships': args.out}, args.seed


def cmd_intersect(args):
    graph = _load_graph(args.memberships, args.min_size)
    inter = compute_intersections(graph, threads=_threads(args))
    inter.save(args.out)
    return {'min_size': args.min_size}, {'memberships': args.memberships}, {'intersections': args.out}, args.seed


def cmd_similarity(args):
    graph = _load_graph(args.memberships, args.min_size)
    threads = _threads(args)
    sim = build_similarity_matrix(graph, compute_intersections(graph, threads=threads), args.metric,
                                  threads=threads)
    sim.save(args.out)
    return ({'metric': sim.metric.value, 'min_size': args.min_size}, {'memberships': args.memberships},
            {'similarity': args.out}, args.seed)


def cmd_embed(args):
    values = _config_values(args, WalkConfig)
    walk_cfg = _resolve(WalkConfig, values, args, seed=args.seed if args.seed is not None else values.get('seed'))
    recipe = Recipe(args.recipe or values.get('recipe') or f"{args.metric or 'corr'}+dw")
    graph = _load_graph(args.memberships, args.min_size)
    threads = _threads(args)
    fast = args.fast and not args.deterministic
    embedding = embed_graph(graph, compute_intersections(graph, threads=threads), recipe,
                            d_svd=args.d_svd, d_dw=args.d_dw, walk_cfg=walk_cfg, epochs=args.epochs,
                            method=args.svd_method, fast=fast, threads=threads)
    embedding.save(args.out)
    config = _config_snapshot(walk_cfg) | {
        'recipe': recipe.value, 'd_svd': args.d_svd, 'd_dw': args.d_dw, 'epochs': args.epochs,
        'svd_method': args.svd_method, 'fast': fast, 'min_size': args.min_size,
    }
    return config, {'memberships': args.memberships}, {'embeddings': args.out}, walk_cfg.seed


def _check_embeddings(corpus, embeddings):
    for group_id in corpus.group_ids:
        embeddings.get(group_id)


def _build_model(model_values, args, tokenizer, embeddings, schedule, seed):
    social_dim = embeddings.dim if embeddings is not None and schedule is not Schedule.BASELINE else None
    overrides = {'vocab_size': tokenizer.vocab_size, 'seed': seed,
                 'injection': Injection.ZERO_TOKEN if schedule is Schedule.ZERO_TOKEN else Injection.NONE}
    if social_dim:
        overrides['social_dim'] = social_dim
    config = _resolve(ModelConfig, model_values, args, **overrides)
    return SocialBert(config)


def _resume_train_config(stored, args, schedule):
    """The checkpoint's training settings win on resume; only --max-steps may extend the run."""
    cfg = TrainConfig(**stored)
    if schedule is not cfg.schedule:
        raise ConfigError(f"checkpoint was trained with schedule {cfg.schedule.value}, not {schedule.value}")
    given = {k: getattr(args, k) for k in _field_names(TrainConfig) if getattr(args, k, None) is not None}
    differing = sorted(k for k, v in given.items() if k != 'max_steps' and v != getattr(cfg, k))
    if differing:
        logger.warning(f"Keeping the checkpoint's values for {differing}; flags differ from the stored config")
    if 'max_steps' in given:
        cfg = replace(cfg, max_steps=given['max_steps'])
    return cfg


def cmd_train(args):
    values = _config_values(args, ModelConfig, TrainConfig, SplitSpec)
    schedule = INJECTION_SCHEDULES[args.injection]
    model, extra = load_checkpoint(args.resume) if args.resume else (None, {})
    if 'train_config' in extra:
        train_cfg = _resume_train_config(extra['train_config'], args, schedule)
    else:
        train_cfg = _resolve(TrainConfig, values, args, schedule=schedule, seed=args.seed)
    if 'split_spec' in extra:
        split_spec = SplitSpec(**extra['split_spec'])
    else:
        split_spec = _resolve(SplitSpec, values, args, seed=train_cfg.seed)

    resume_state = None
    if args.resume:
        tokenizer = Tokenizer.from_dict(extra['tokenizer'])
        corpus = Corpus.load(args.corpus, tokenizer=tokenizer)
        splits = DatasetSplits.from_manifest(corpus, extra['splits'])
        resume_state = extra.get('train_state')
        logger.info(f"Resuming from {args.resume} at step {resume_state['step'] if resume_state else 0}")
    else:
        corpus = Corpus.load(args.corpus)
        tokenizer = corpus.tokenizer
        splits = split_datasets(corpus, split_spec)

    embeddings = SocialEmbedding.load(args.embeddings) if args.embeddings else None
    if embeddings is not None and schedule is not Schedule.BASELINE:
        _check_embeddings(corpus, embeddings)
    if model is None:
        model = _build_model(values, args, tokenizer, embeddings, schedule, train_cfg.seed)

    log_path = args.log_out or _default_path(args.out, '.log.tsv')
    extra = {'tokenizer': tokenizer.to_dict(), 'splits': splits.to_manifest(),
             'train_config': train_cfg.to_dict(), 'split_spec': _config_snapshot(split_spec)['SplitSpec']}

    def on_checkpoint(model, state):
        save_checkpoint(args.out, model, extra | {'train_state': state})

    result = train_mlm(model, splits, train_cfg, tokenizer, embeddings=embeddings, resume_state=resume_state,
                       checkpoint_every=args.checkpoint_every, on_checkpoint=on_checkpoint)
    write_training_log(result.curve, log_path)
    if result.substitution_step is not None:
        print(f"substitution_step={result.substitution_step}")
    print(f"steps={result.steps} stopped_early={result.stopped_early}")

    config = _config_snapshot(result.model.config, train_cfg, split_spec) | {'injection': args.injection}
    inputs = {'corpus': args.corpus, 'embeddings': args.embeddings, 'resume': args.resume}
    return config, inputs, {'checkpoint': args.out, 'training_log': log_path}, train_cfg.seed


def _entropy_floor_for(corpus_path, spec_path):
    spec_path = spec_path or _default_path(corpus_path, '.spec.json')
    if not os.path.isfile(spec_path):
        return None
    with open(spec_path, encoding='utf-8') as f:
        return entropy_floor(SynthSpec(**json.load(f)))


def cmd_eval(args):
    model, extra = load_checkpoint(args.checkpoint)
    if 'tokenizer' not in extra or 'splits' not in extra:
        raise ConfigError(f"{args.checkpoint} carries no tokenizer or split manifest")
    tokenizer = Tokenizer.from_dict(extra['tokenizer'])
    corpus = Corpus.load(args.corpus, tokenizer=tokenizer)
    manifest = extra['splits']
    tags = ['val-k', 'val-u'] if args.all else [args.dataset]
    for tag in tags:
        if not manifest.get(tag):
            raise ReportTagError(f"dataset {tag!r} is not in the checkpoint's split manifest")
    splits = DatasetSplits.from_manifest(corpus, manifest)

    embeddings = None
    if model.injection is not Injection.NONE:
        if not args.embeddings:
            raise ConfigError(f"model uses {model.injection.value} injection; --embeddings is required")
        embeddings = SocialEmbedding.load(args.embeddings)
    train_cfg = extra.get('train_config', {})
    seed = args.seed if args.seed is not None else train_cfg.get('seed', 0)
    floor = _entropy_floor_for(args.corpus, args.spec)

    lines = []
    for tag in tags:
        docs = splits.by_tag(tag)
        if embeddings is not None:
            _check_embeddings(Corpus(documents=docs, tokenizer=tokenizer), embeddings)
        report = evaluate(model, docs, embeddings, tokenizer, tag=tag, seed=seed,
                          batch_size=train_cfg.get('batch_size', 32), mask_rate=train_cfg.get('mask_rate', 0.15),
                          entropy_floor=floor)
        lines.append(report.to_tsv())
    if floor is not None:
        lines.append(f"# entropy_floor\t{floor:.17g}")
    text = '\n'.join(lines) + '\n'
    sys.stdout.write(text)
    outputs = {}
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(text)
        outputs['report'] = args.out
    return {'tags': tags, 'seed': seed}, {'checkpoint': args.checkpoint, 'corpus': args.corpus}, outputs, seed


def run_experiment(graph, corpus, model_values, train_cfg, split_spec, seeds, embed_options, threads=None,
                   arms=EXPERIMENT_ARMS):
    """Train and evaluate every arm for every seed; returns rows of (arm, seed, EvalReport)."""
    rows = []
    inter = compute_intersections(graph, threads=threads)
    for seed in seeds:
        splits = split_datasets(corpus, replace(split_spec, seed=seed))
        walk_cfg = replace(embed_options.get('walk_cfg') or WalkConfig(), seed=seed)
        cache = {}
        for name, schedule, recipe in arms:
            embeddings = None
            if recipe is not None:
                if recipe not in cache:
                    cache[recipe] = embed_graph(graph, inter, recipe, d_svd=embed_options.get('d_svd', DEFAULT_SVD_DIM),
                                                d_dw=embed_options.get('d_dw', DEFAULT_DW_DIM), walk_cfg=walk_cfg,
                                                epochs=embed_options.get('epochs', 5), threads=threads)
                embeddings = cache[recipe]
                _check_embeddings(corpus, embeddings)
            cfg = replace(train_cfg, schedule=schedule, seed=seed)
            social_dim = embeddings.dim if embeddings is not None else model_values.get('social_dim', 32)
            model = SocialBert(ModelConfig(**(model_values | {
                'vocab_size': corpus.tokenizer.vocab_size, 'social_dim': social_dim, 'seed': seed,
                'injection': Injection.ZERO_TOKEN if schedule is Schedule.ZERO_TOKEN else Injection.NONE,
            })))
            logger.info(f"Experiment arm {name} seed {seed}")
            result = train_mlm(model, splits, cfg, corpus.tokenizer, embeddings=embeddings)
            for tag in ('val-k', 'val-u'):
                docs = splits.by_tag(tag)
                if docs:
                    rows.append((name, seed, evaluate(result.model, docs, embeddings, corpus.tokenizer, tag=tag,
                                                      seed=seed, batch_size=cfg.batch_size, mask_rate=cfg.mask_rate)))
    return rows


def summarize_experiment(rows):
    """Mean loss per (arm, tag) and relative improvement over the baseline arm."""
    means = {}
    for name, _, report in rows:
        means.setdefault((name, report.tag), []).append(report.loss)
    summary = []
    for (name, tag), losses in means.items():
        mean = float(np.mean(losses))
        base = means.get(('baseline', tag))
        improvement = (float(np.mean(base)) - mean) / float(np.mean(base)) if base else float('nan')
        summary.append((name, tag, mean, 2.0 ** mean, improvement))
    return summary


def cmd_experiment(args):
    values = _config_values(args, ModelConfig, TrainConfig, SplitSpec, SynthSpec)
    base_seed = args.seed if args.seed is not None else 0
    if args.memberships and args.corpus:
        graph = _load_graph(args.memberships, args.min_size)
        corpus = Corpus.load(args.corpus)
        inputs = {'memberships': args.memberships, 'corpus': args.corpus}
    else:
        spec = _resolve(SynthSpec, values, args, seed=base_seed)
        graph = generate_network(spec)
        corpus = generate_corpus(graph, spec)
        inputs = {'synth': spec.to_dict()}
    train_cfg = _resolve(TrainConfig, values, args, seed=base_seed)
    split_spec = _resolve(SplitSpec, values, args, seed=base_seed)
    model_values = {k: v for k, v in vars(args).items() if k in _field_names(ModelConfig) and v is not None}
    model_values = {k: v for k, v in values.items() if k in _field_names(ModelConfig)} | model_values
    for key in ('vocab_size', 'social_dim', 'seed', 'injection'):
        model_values.pop(key, None)
    seeds = [base_seed + i for i in range(args.seeds)]
    rows = run_experiment(graph, corpus, model_values, train_cfg, split_spec, seeds,
                          {'d_svd': args.d_svd, 'd_dw': args.d_dw, 'epochs': args.epochs}, threads=_threads(args))

    lines = ['arm\tseed\ttag\tloss\tperplexity\tcount']
    lines += [f"{name}\t{seed}\t{r.tag}\t{r.loss:.17g}\t{r.perplexity:.17g}\t{r.count}" for name, seed, r in rows]
    lines.append('')
    lines.append('arm\ttag\tmean_loss\tperplexity\trelative_improvement')
    lines += [f"{name}\t{tag}\t{mean:.6f}\t{ppl:.6f}\t{imp:+.4%}" for name, tag, mean, ppl, imp in summarize_experiment(rows)]
    text = '\n'.join(lines) + '\n'
    sys.stdout.write(text)
    with open(args.out, 'w', encoding='utf-8') as f:
        f.write(text)
    config = _config_snapshot(train_cfg, split_spec) | {'model': model_values, 'seeds': seeds}
    return config, inputs, {'results': args.out}, base_seed


def cmd_serve(args):
    import app as dashboard
    dashboard.RUNS_DIR = args.runs_dir or settings.RUNS_DIR
    dashboard.start_scheduler()
    dashboard.app.run(host=args.host, port=args.port)


# Parser

def _add_model_flags(p):
    g = p.add_argument_group('model')
    g.add_argument('--layers', dest='num_layers', type=int)
    g.add_argument('--hidden', dest='hidden_size', type=int)
    g.add_argument('--heads', dest='num_heads', type=int)
    g.add_argument('--ffn', dest='ffn_size', type=int)
    g.add_argument('--max-seq-len', dest='max_seq_len', type=int)
    g.add_argument('--sat-layer', dest='sat_layer', type=int)
    g.add_argument('--sat-channels', dest='sat_channels', type=int)
    g.add_argument('--dropout', type=float)


def _add_train_flags(p):
    g = p.add_argument_group('training')
    g.add_argument('--lr', dest='learning_rate', type=float)
    g.add_argument('--warmup', dest='warmup_steps', type=int)
    g.add_argument('--max-steps', dest='max_steps', type=int)
    g.add_argument('--batch-size', dest='batch_size', type=int)
    g.add_argument('--mask-rate', dest='mask_rate', type=float)
    g.add_argument('--eval-every', dest='eval_every', type=int)
    g.add_argument('--patience', type=int)
    g.add_argument('--phase1-steps', dest='phase1_steps', type=int)
    g.add_argument('--precision', type=int, choices=(32, 64))
    g.add_argument('--known-fraction', dest='known_group_fraction', type=float)
    g.add_argument('--val-fraction', dest='val_text_fraction', type=float)
    g.add_argument('--min-docs', dest='min_docs_per_group', type=int)


def _add_synth_flags(p):
    g = p.add_argument_group('synthetic spec')
    g.add_argument('--num-groups', dest='num_groups', type=int)
    g.add_argument('--num-users', dest='num_users', type=int)
    g.add_argument('--num-topics', dest='num_topics', type=int)
    g.add_argument('--p-in', dest='p_in', type=float)
    g.add_argument('--p-out', dest='p_out', type=float)
    g.add_argument('--vocab-size', dest='vocab_size', type=int)
    g.add_argument('--overlap', dest='topic_vocab_overlap', type=float)
    g.add_argument('--docs-per-group', dest='docs_per_group', type=int)
    g.add_argument('--doc-length', dest='doc_length', type=int)
    g.add_argument('--zipf-exponent', dest='zipf_exponent', type=float)


def _add_embed_flags(p):
    p.add_argument('--d-svd', dest='d_svd', type=int, default=DEFAULT_SVD_DIM)
    p.add_argument('--d-dw', dest='d_dw', type=int, default=DEFAULT_DW_DIM)
    p.add_argument('--epochs', type=int, default=5)


def build_parser():
    parser = argparse.ArgumentParser(prog='social-mlm', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--seed', type=int)
    parser.add_argument('--threads', type=int)
    parser.add_argument('--deterministic', action='store_true')
    parser.add_argument('--config', help='JSON config file; a key named after the subcommand holds its section')
    parser.add_argument('--runs-dir')
    parser.add_argument('--log-level')
    parser.add_argument('--no-manifest', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='generate a planted-topic membership graph and corpus')
    _add_synth_flags(p)
    p.add_argument('--memberships', required=True)
    p.add_argument('--corpus', required=True)
    p.add_argument('--spec-out')
    p.set_defaults(handler=cmd_synth)

    for name, handler, out_help in (('ingest', cmd_ingest, 'normalised membership TSV'),
                                    ('intersect', cmd_intersect, 'intersection matrix')):
        p = sub.add_parser(name, help=f"write the {out_help}")
        p.add_argument('--memberships', required=True)
        p.add_argument('--min-size', dest='min_size', type=int)
        p.add_argument('--out', required=True)
        p.set_defaults(handler=handler)

    p = sub.add_parser('similarity', help='write a group-group similarity matrix')
    p.add_argument('--memberships', required=True)
    p.add_argument('--metric', choices=[m.value for m in Metric], required=True)
    p.add_argument('--min-size', dest='min_size', type=int)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_similarity)

    p = sub.add_parser('embed', help='build social embeddings for every group')
    p.add_argument('--memberships', required=True)
    p.add_argument('--recipe', choices=[r.value for r in Recipe])
    p.add_argument('--metric', choices=[m.value for m in Metric])
    _add_embed_flags(p)
    p.add_argument('--walks-per-node', dest='walks_per_node', type=int)
    p.add_argument('--walk-length', dest='walk_length', type=int)
    p.add_argument('--window', type=int)
    p.add_argument('--svd-method', dest='svd_method', choices=('eigh', 'randomized'), default='eigh')
    p.add_argument('--fast', action='store_true', help='gensim skip-gram with worker threads (nondeterministic)')
    p.add_argument('--min-size', dest='min_size', type=int)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser('train', help='train a masked language model')
    p.add_argument('--corpus', required=True)
    p.add_argument('--embeddings')
    p.add_argument('--injection', choices=tuple(INJECTION_SCHEDULES), default='none')
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument('--checkpoint-every', dest='checkpoint_every', type=int)
    p.add_argument('--resume')
    p.add_argument('--log-out')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('eval', help='evaluate a checkpoint on a split')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--corpus', required=True)
    p.add_argument('--embeddings')
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument('--dataset', choices=DatasetSplits.TAGS)
    which.add_argument('--all', action='store_true', help='report both val-k and val-u')
    p.add_argument('--spec', help='synthetic spec JSON for the entropy floor')
    p.add_argument('--out')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('experiment', help='run the five injection arms over several seeds')
    p.add_argument('--memberships')
    p.add_argument('--corpus')
    p.add_argument('--seeds', type=int, default=3)
    p.add_argument('--min-size', dest='min_size', type=int)
    _add_synth_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_embed_flags(p)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser('serve', help='serve the runs dashboard')
    p.add_argument('--host', default='0.0.0.0')
    p.add_argument('--port', type=int, default=int(os.environ.get('PORT', 5000)))
    p.set_defaults(handler=cmd_serve)
    return parser


def _apply_determinism(args):
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    elif args.threads:
        torch.set_num_threads(args.threads)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    settings.configure_logging(args.log_level)
    _apply_determinism(args)
    runs_dir = args.runs_dir or settings.RUNS_DIR

    if args.command == 'serve':
        cmd_serve(args)
        return 0

    started = datetime.now()
    clock = time.perf_counter()
    manifest = RunManifest(run_id=new_run_id(args.command, started), subcommand=args.command, config={},
                           inputs={}, outputs={}, seed=args.seed, started=started.isoformat())
    try:
        config, inputs, outputs, seed = args.handler(args)
        manifest.config, manifest.inputs, manifest.outputs, manifest.seed = config, inputs, outputs, seed
        manifest.config['deterministic'] = args.deterministic
        manifest.record_checksums()
    except SocialMLMError as e:
        logger.error(f"{args.command} failed: {e}")
        manifest.status, manifest.exit_code = 'error', e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        manifest.status, manifest.exit_code = 'error', 4
    manifest.wall_time = time.perf_counter() - clock
    if not args.no_manifest:
        try:
            manifest.save(runs_dir)
        except OSError as e:
            logger.warning(f"Could not write run manifest: {e}")
    return manifest.exit_code


if __name__ == '__main__':
    sys.exit(main())
