#!/usr/bin/env python3
"""
Flask dashboard over the runs directory.
Read-only: run manifests, evaluation reports and training curves.
Background scheduler refreshes the cached run index.
"""

import logging
import os
import threading
from dataclasses import asdict
from datetime import datetime

import numpy as np
from apscheduler.schedulers.background import BackgroundScheduler
from apscheduler.triggers.interval import IntervalTrigger
from flask import Flask, jsonify, request

import settings
from errors import ParseError
from runs import load_runs
from train_eval import EvalReport, check_report_relation, read_training_log

logger = logging.getLogger(__name__)

app = Flask(__name__)

RUNS_DIR = settings.RUNS_DIR
REPORT_TOLERANCE = 1e-12

scheduler = BackgroundScheduler()
_index = {'runs': [], 'refreshed': None}
_index_lock = threading.Lock()


def refresh_index():
    """Re-read every manifest under RUNS_DIR."""
    runs = load_runs(RUNS_DIR)
    with _index_lock:
        _index['runs'] = runs
        _index['refreshed'] = datetime.now().isoformat()
    logger.info(f"Run index refreshed: {len(runs)} runs in {RUNS_DIR}")
    return runs


def index_snapshot():
    """Runs and their refresh time, read together; loads the index on first use."""
    with _index_lock:
        loaded = _index['refreshed'] is not None
    if not loaded:
        refresh_index()
    with _index_lock:
        return list(_index['runs']), _index['refreshed']


def get_runs():
    return index_snapshot()[0]


def find_run(run_id):
    return next((r for r in get_runs() if r.run_id == run_id), None)


def read_reports(manifest):
    path = manifest.outputs.get('report')
    if not path or not os.path.isfile(path):
        return []
    reports = []
    with open(path, encoding='utf-8') as f:
        for line in f:
            if not line.strip() or line.startswith('#'):
                continue
            try:
                report = EvalReport.from_tsv(line)
            except (ParseError, ValueError) as e:
                logger.warning(f"Bad report line in {path}: {e}")
                continue
            reports.append(asdict(report) | {
                'run_id': manifest.run_id,
                'relation_ok': check_report_relation(report.loss, report.perplexity, REPORT_TOLERANCE),
            })
    return reports


def trailing_average(values, window):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return []
    sums = np.cumsum(values)
    averaged = sums.copy()
    averaged[window:] = sums[window:] - sums[:-window]
    counts = np.minimum(np.arange(1, values.size + 1), window)
    return (averaged / counts).tolist()


@app.route('/')
def index():
    """Overview of the runs directory."""
    runs, refreshed = index_snapshot()
    counts = {}
    for r in runs:
        counts[r.subcommand] = counts.get(r.subcommand, 0) + 1
    return jsonify({
        'runs_dir': RUNS_DIR,
        'total': len(runs),
        'failed': sum(1 for r in runs if r.status != 'ok'),
        'by_subcommand': counts,
        'latest': runs[0].run_id if runs else None,
        'refreshed': refreshed,
    })


@app.route('/api/health')
def api_health():
    return jsonify({
        'status': 'ok',
        'scheduler_running': scheduler.running,
        'runs_dir': RUNS_DIR,
    })


@app.route('/api/runs')
def api_runs():
    subcommand = request.args.get('subcommand')
    runs = [r for r in get_runs() if subcommand is None or r.subcommand == subcommand]
    return jsonify([asdict(r) for r in runs])


@app.route('/api/runs/<run_id>')
def api_run(run_id):
    run = find_run(run_id)
    if run is None:
        return jsonify({'error': f'run {run_id} not found'}), 404
    return jsonify(asdict(run))


@app.route('/api/reports')
def api_reports():
    reports = [rep for run in get_runs() if run.subcommand == 'eval' for rep in read_reports(run)]
    return jsonify(reports)


@app.route('/api/curve/<run_id>')
def api_curve(run_id):
    run = find_run(run_id)
    if run is None:
        return jsonify({'error': f'run {run_id} not found'}), 404
    path = run.outputs.get('training_log')
    if not path or not os.path.isfile(path):
        return jsonify({'error': f'run {run_id} has no training log'}), 404
    window = request.args.get('window', 50, type=int)
    if window < 1:
        return jsonify({'error': 'window must be >= 1'}), 400
    try:
        curve = read_training_log(path)
    except ParseError as e:
        return jsonify({'error': str(e)}), 500
    losses = [s.loss for s in curve]
    return jsonify({
        'run_id': run_id,
        'window': window,
        'steps': [s.step for s in curve],
        'loss': losses,
        'lr': [s.lr for s in curve],
        'trailing_loss': trailing_average(losses, window),
    })


@app.route('/api/refresh', methods=['POST'])
def api_refresh():
    refresh_index()
    runs, refreshed = index_snapshot()
    return jsonify({
        'status': 'success',
        'runs': len(runs),
        'timestamp': refreshed,
    })


def start_scheduler():
    scheduler.add_job(
        func=refresh_index,
        trigger=IntervalTrigger(minutes=settings.REFRESH_MINUTES),
        id='refresh_runs',
        name='Refresh run index',
        replace_existing=True,
    )
    if not scheduler.running:
        scheduler.start()
        logger.info(f"Scheduler started: run index refresh every {settings.REFRESH_MINUTES} minutes")


if __name__ == '__main__':
    settings.configure_logging()
    start_scheduler()
    port = int(os.environ.get('PORT', 5000))
    app.run(host='0.0.0.0', port=port)
