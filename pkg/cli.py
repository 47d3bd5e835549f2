#!/usr/bin/env python3
"""
nuggetprobe command line

    run          generate a run with the report pipeline (any variant, any length)
    eval         score a run against gold nuggets
    probe        wrap an existing run with the probe filters
    metaeval     leaderboards and agreement with a manual ranking
    gen-fixture  write a synthetic test collection
    grid         every variant x length, evaluated, with a relative-improvement table

Exit codes: 0 success, 1 validation/configuration error, 2 backend failure.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from collection import Corpus, NuggetBank, Origin, atomic_write, load_corpus, load_nugget_bank, load_topics
from config import Config, ExperimentConfig, VARIANT_PROBES, build_experiment_config, parse_probe_list
from errors import BackendError, ConfigError, NuggetProbeError, ValidationError
from evaluator import METRICS, RunEval, eval_run, load_eval, serialize_eval
from fixture import gen_fixture, write_fixture
from judge import Judge, build_judge
from metaeval import build_leaderboard, compare, leaderboards_to_csv, read_manual_scores, run_metaeval
from pipeline import TopicResult, run_pipeline
from probes import wrap_run
from report import parse_run, serialize_run
from retrieval import ingest_rankfile

logger = logging.getLogger(__name__)

LENGTHS = ('short', 'medium', 'long')


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _dump_json(data) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True, allow_nan=False) + '\n'


def _require(cfg: ExperimentConfig, *fields: str):
    missing = [f for f in fields if not getattr(cfg, f)]
    if missing:
        flags = ', '.join('--collection' if f == 'corpus' else f"--{f}" for f in missing)
        raise ConfigError(f"Missing required input(s): {flags}")


def make_judge(cfg: ExperimentConfig) -> Judge:
    problems = Config.validate(cfg.judge, endpoint=cfg.endpoint)
    if problems:
        raise ConfigError('; '.join(problems))
    return build_judge(
        kind=cfg.judge,
        model_name=cfg.model,
        endpoint=cfg.endpoint,
        prompt_dir=cfg.prompt_dir,
        cache_path=cfg.cache_path or None,
        include_citation_context=cfg.include_citation_context,
        concurrency=cfg.concurrency,
        max_tokens=cfg.max_tokens,
        seed=cfg.seed,
    )


def _load_gold(cfg: ExperimentConfig) -> Dict[str, NuggetBank]:
    return load_nugget_bank(cfg.nuggets, Origin.GOLD) if cfg.nuggets else {}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def generate(cfg: ExperimentConfig, judge: Judge, corpus: Corpus, topics, gold_banks: Dict[str, NuggetBank]):
    """Pipeline run for one configuration; returns (run, manifest dict, per-topic results)"""
    rankings = ingest_rankfile(cfg.rankfile, cfg.depth) if cfg.rankfile else None
    run, results = run_pipeline(judge, topics, corpus, cfg, gold_banks=gold_banks, rankings=rankings)
    manifest = {
        'config': cfg.model_dump(mode='json'),
        'derived': {
            'effective_probes': cfg.effective_probes,
            'nugget_source': cfg.nugget_source,
            'retrieval': cfg.retrieval,
            'variant_label': cfg.variant_label,
        },
        'seed': cfg.seed,
        'topics': [r.model_dump(mode='json') for r in results],
    }
    return run, manifest, results


def check_topic_results(results: List[TopicResult]):
    """Raise when every topic failed (backend failures take precedence for the exit code)"""
    failed = [r for r in results if r.status != 'ok']
    if results and len(failed) == len(results):
        error_class = BackendError if any(r.exit_code == BackendError.exit_code for r in failed) else ValidationError
        raise error_class(f"All {len(results)} topics failed; see the manifest for details")


def cmd_run(cfg: ExperimentConfig) -> Path:
    """Generate run.json (plus manifest.json) under cfg.out"""
    _require(cfg, 'corpus', 'topics')
    corpus = load_corpus(cfg.corpus)
    topics = load_topics(cfg.topics)
    gold_banks = _load_gold(cfg)
    judge = make_judge(cfg)

    out = Path(cfg.out)
    run, manifest, results = generate(cfg, judge, corpus, topics, gold_banks)
    atomic_write(out / 'run.json', serialize_run(run))
    atomic_write(out / 'manifest.json', _dump_json(manifest))
    check_topic_results(results)
    ok = sum(1 for r in results if r.status == 'ok')
    logger.info(f"📤 Wrote {out / 'run.json'} ({ok}/{len(results)} topics)")
    return out / 'run.json'


def cmd_eval(cfg: ExperimentConfig, run_path: str, out_path: Optional[str] = None) -> Path:
    """Evaluate a run against the gold nuggets; writes eval.json"""
    _require(cfg, 'corpus', 'nuggets')
    corpus = load_corpus(cfg.corpus)
    gold_banks = _load_gold(cfg)
    run = parse_run(run_path)
    judge = make_judge(cfg)

    run_eval = eval_run(judge, run, corpus, gold_banks)
    target = Path(out_path) if out_path else Path(cfg.out) / 'eval.json'
    atomic_write(target, serialize_eval(run_eval))
    if judge.cache is not None:
        logger.info(f"🗄️ Verdict cache: {judge.cache.get_stats()}")
    logger.info(f"📤 Wrote {target}")
    return target


def cmd_probe(cfg: ExperimentConfig, in_path: str, out_path: str) -> Path:
    """Wrap a finished run with probe filters"""
    _require(cfg, 'corpus')
    probes = [p for p in cfg.effective_probes if p != 'gold'] or ['citation']
    if any(p.startswith('cov') for p in probes) and not cfg.nuggets:
        raise ConfigError(f"Probes {', '.join(probes)} need a nugget bank (--nuggets)")

    corpus = load_corpus(cfg.corpus)
    banks = load_nugget_bank(cfg.nuggets, Origin.SYSTEM) if cfg.nuggets else None
    run = parse_run(in_path)
    judge = make_judge(cfg)

    wrapped = wrap_run(run, corpus, judge, banks=banks, probes=probes)
    atomic_write(out_path, serialize_run(wrapped))
    before = sum(len(r.sentences) for r in run.reports.values())
    after = sum(len(r.sentences) for r in wrapped.reports.values())
    logger.info(f"📤 Wrote {out_path}: {before} -> {after} sentences ({wrapped.variant_label})")
    return Path(out_path)


def cmd_metaeval(eval_dir: str, manual_csv: str, ks: Sequence[int], out_dir: str) -> Path:
    """Leaderboards per metric and agreement with the manual ranking"""
    paths = sorted(Path(eval_dir).glob('**/*.json'))
    run_evals: List[RunEval] = []
    for path in paths:
        try:
            run_evals.append(load_eval(path))
        except ValidationError as e:
            logger.debug(f"Skipping {path}: {e}")
    if len(run_evals) < 2:
        raise ValidationError(f"Meta-evaluation needs at least 2 eval files in {eval_dir} (found {len(run_evals)})")

    manual_path = Path(manual_csv)
    if not manual_path.exists():
        raise ValidationError(f"Manual scores file not found: {manual_csv}")
    manual = read_manual_scores(manual_path.read_text(encoding='utf-8'))

    leaderboards = [build_leaderboard(run_evals, metric) for metric in METRICS]
    result = run_metaeval(run_evals, manual, ks)

    out = Path(out_dir)
    atomic_write(out / 'leaderboard.csv', leaderboards_to_csv(leaderboards))
    atomic_write(out / 'metaeval.json', _dump_json(result.model_dump(mode='json')))
    for metric, agreement in result.metrics.items():
        logger.info(f"📊 {metric}: tau={agreement.tau} tau@k={agreement.tau_at_k}")
    return out / 'metaeval.json'


def cmd_gen_fixture(seed: int, n_topics: int, n_docs: int, answers: int, out_dir: str) -> Path:
    corpus, topics, banks = gen_fixture(seed=seed, n_topics=n_topics, n_docs=n_docs, answers_per_nugget=answers)
    write_fixture(out_dir, corpus, topics, banks)
    return Path(out_dir)


def cmd_grid(cfg: ExperimentConfig, lengths: Sequence[str], variants: Sequence[str]) -> Path:
    """Every variant x length: run, evaluate, compare against base of the same length"""
    _require(cfg, 'corpus', 'topics', 'nuggets')
    corpus = load_corpus(cfg.corpus)
    topics = load_topics(cfg.topics)
    gold_banks = _load_gold(cfg)
    judge = make_judge(cfg)
    out = Path(cfg.out)

    evals: Dict[tuple, RunEval] = {}
    for length in lengths:
        for variant in variants:
            cell = cfg.model_copy(update={'variant': variant, 'length': length, 'probes': []})
            run, manifest, results = generate(cell, judge, corpus, topics, gold_banks)
            check_topic_results(results)
            run_eval = eval_run(judge, run, corpus, gold_banks)
            cell_dir = out / f"{variant}-{length}"
            atomic_write(cell_dir / 'run.json', serialize_run(run))
            atomic_write(cell_dir / 'manifest.json', _dump_json(manifest))
            atomic_write(cell_dir / 'eval.json', serialize_eval(run_eval))
            evals[(variant, length)] = run_eval

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['variant', 'length', 'metric', 'base', 'score', 'improvement_pct', 't', 'p', 'significant'])
    for length in lengths:
        base = evals.get(('base', length))
        if base is None:
            continue
        for variant in variants:
            if variant == 'base':
                continue
            for metric in METRICS:
                c = compare(base, evals[(variant, length)], metric)
                writer.writerow([variant, length, metric, _fmt(c.base), _fmt(c.score), _fmt(c.improvement_pct),
                                 _fmt(c.t), _fmt(c.p), 'yes' if c.significant else 'no'])
    atomic_write(out / 'grid.csv', buffer.getvalue())
    logger.info(f"📤 Wrote {out / 'grid.csv'} ({len(evals)} cells)")
    return out / 'grid.csv'


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.6g}"


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_judge_flags(parser: argparse.ArgumentParser, out_help: str = 'Output directory'):
    parser.add_argument('--config', help='Experiment config file (.json/.toml) or a run manifest')
    parser.add_argument('--judge', choices=['mock', 'http', 'groq'], help='Judge backend (default: RAGE_JUDGE)')
    parser.add_argument('--model', help='Model name for http/groq backends')
    parser.add_argument('--endpoint', help='Chat-completions endpoint URL')
    parser.add_argument('--prompt-dir', help='Directory holding the prompt templates')
    parser.add_argument('--cache', help='Verdict cache path (JSONL)')
    parser.add_argument('--no-cache', action='store_true', help='Disable the verdict cache')
    parser.add_argument('--no-citation-context', action='store_true',
                        help='Judge nugget matches on the sentence alone')
    parser.add_argument('--seed', type=int, help='Seed sent to the model')
    parser.add_argument('--concurrency', type=int, help='Concurrent judge calls / topics')
    parser.add_argument('--collection', help='corpus.jsonl')
    parser.add_argument('--nuggets', help='Nugget bank JSON')
    parser.add_argument('--out', help=out_help)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='nuggetprobe', description='Nugget-based judge, report pipeline and probes')
    parser.add_argument('--log-level', default=None, help='Logging level (default: RAGE_LOG_LEVEL)')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Generate a run with the report pipeline')
    _add_judge_flags(run)
    run.add_argument('--topics', help='topics.json')
    run.add_argument('--rankfile', help='TREC run file to use instead of BM25')
    run.add_argument('--depth', type=int, help='Retrieval depth (default 20)')
    run.add_argument('--variant', choices=list(VARIANT_PROBES), help='Variant (default base)')
    run.add_argument('--probe', help='Extra probes: comma list of citation,cov-sentence,cov-extract,gold')
    run.add_argument('--length', choices=LENGTHS, help='Length class (default short)')
    run.add_argument('--max-nuggets', type=int, help='System nugget bank size (default 10)')
    run.add_argument('--system-name', help='System name recorded in the run')

    ev = sub.add_parser('eval', help='Evaluate a run against gold nuggets')
    _add_judge_flags(ev)
    ev.add_argument('--run', required=True, help='run.json to evaluate')
    ev.add_argument('--eval-out', help='eval.json path (default OUT/eval.json)')

    probe = sub.add_parser('probe', help='Wrap a finished run with the probe filters')
    _add_judge_flags(probe, out_help='Adulterated run file (default: next to --in, e.g. run.adulterated.json)')
    probe.add_argument('--in', dest='in_path', required=True, help='Run to wrap')
    probe.add_argument('--probe', help='Comma list of citation,cov-sentence,cov-extract (default citation)')

    meta = sub.add_parser('metaeval', help='Leaderboards and agreement with a manual ranking')
    meta.add_argument('--evals', required=True, help='Directory of eval.json files')
    meta.add_argument('--manual', required=True, help='Manual scores CSV (system,score)')
    meta.add_argument('--k', default='3,10', help='Comma list of tau@k cutoffs')
    meta.add_argument('--out', default='out', help='Output directory')

    fx = sub.add_parser('gen-fixture', help='Write a synthetic test collection')
    fx.add_argument('--seed', type=int, default=Config.SEED)
    fx.add_argument('--topics', type=int, default=3)
    fx.add_argument('--docs', type=int, default=30)
    fx.add_argument('--answers', type=int, default=1)
    fx.add_argument('--out', required=True)

    grid = sub.add_parser('grid', help='Run and evaluate every variant x length')
    _add_judge_flags(grid)
    grid.add_argument('--topics', help='topics.json')
    grid.add_argument('--rankfile', help='TREC run file to use instead of BM25')
    grid.add_argument('--depth', type=int)
    grid.add_argument('--max-nuggets', type=int)
    grid.add_argument('--lengths', default=','.join(LENGTHS), help='Comma list of length classes')
    grid.add_argument('--variants', default=','.join(VARIANT_PROBES), help='Comma list of variants')
    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    cache_path = '' if getattr(args, 'no_cache', False) else getattr(args, 'cache', None)
    include_context = False if getattr(args, 'no_citation_context', False) else None
    probes = parse_probe_list(getattr(args, 'probe', None)) or None
    return build_experiment_config(
        getattr(args, 'config', None),
        corpus=getattr(args, 'collection', None),
        topics=getattr(args, 'topics', None),
        nuggets=getattr(args, 'nuggets', None),
        rankfile=getattr(args, 'rankfile', None),
        depth=getattr(args, 'depth', None),
        judge=getattr(args, 'judge', None),
        model=getattr(args, 'model', None),
        endpoint=getattr(args, 'endpoint', None),
        prompt_dir=getattr(args, 'prompt_dir', None),
        cache_path=cache_path,
        include_citation_context=include_context,
        variant=getattr(args, 'variant', None),
        probes=probes,
        length=getattr(args, 'length', None),
        max_nuggets=getattr(args, 'max_nuggets', None),
        seed=getattr(args, 'seed', None),
        concurrency=getattr(args, 'concurrency', None),
        system_name=getattr(args, 'system_name', None),
        out=getattr(args, 'out', None),
    )


def _comma_list(value: str, allowed: Sequence[str], what: str) -> List[str]:
    items = [v.strip() for v in value.split(',') if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise ConfigError(f"Invalid {what}: {value!r} (choose from {', '.join(allowed)})")
    return items


def _k_list(value: str) -> List[int]:
    try:
        ks = [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f"Invalid k list: {value!r}")
    if not ks or any(k < 2 for k in ks):
        raise ConfigError(f"Every tau@k cutoff must be >= 2 (got {value!r})")
    return ks


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        logging.getLogger(__name__).error(f"❌ {e}")
        return e.exit_code

    logging.basicConfig(
        level=getattr(logging, (args.log_level or Config.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
    )

    try:
        if args.command == 'gen-fixture':
            cmd_gen_fixture(args.seed, args.topics, args.docs, args.answers, args.out)
        elif args.command == 'metaeval':
            ks = _k_list(args.k)
            cmd_metaeval(args.evals, args.manual, ks, args.out)
        else:
            cfg = _experiment_config(args)
            Config.print_config()
            if args.command == 'run':
                cmd_run(cfg)
            elif args.command == 'eval':
                cmd_eval(cfg, args.run, args.eval_out)
            elif args.command == 'probe':
                cmd_probe(cfg, args.in_path, args.out or str(Path(args.in_path).with_suffix('.adulterated.json')))
            elif args.command == 'grid':
                cmd_grid(cfg, _comma_list(args.lengths, LENGTHS, 'lengths'),
                         _comma_list(args.variants, list(VARIANT_PROBES), 'variants'))
    except NuggetProbeError as e:
        logger.error(f"❌ {e}")
        return e.exit_code

    return 0


if __name__ == '__main__':
    sys.exit(main())
