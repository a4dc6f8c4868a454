"""The forge command line: one subcommand per pipeline stage plus the
end-to-end pipeline runner and the manifest report.

Exit codes: 0 success, 1 validation/configuration error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import agreement as agreement_mod
from . import annotate as annotate_mod
from . import dataset as dataset_mod
from . import entity_link as link_mod
from . import evaluate as eval_mod
from . import ingest as ingest_mod
from . import judge as judge_mod
from . import pipeline as pipeline_mod
from . import review as review_mod
from . import segment as segment_mod
from . import select as select_mod
from .records import dump_json_line, read_records, write_jsonl, write_records

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_STAGE = 2


class CliError(Exception):
    """Input validation failed; maps to exit code 1."""


def cmd_extract(args: argparse.Namespace) -> int:
    dump = Path(args.dump)
    if not dump.exists():
        raise CliError(f"dump not found: {dump}")
    options = ingest_mod.IngestOptions(
        drop_redirects=not args.keep_redirects, workers=args.workers
    )
    report = ingest_mod.IngestReport()
    with ingest_mod.open_dump(dump) as stream:
        ingest_mod.write_articles(
            ingest_mod.parse_dump(stream, options, report), args.out, report
        )
    print(
        f"pages seen {report.pages_seen}, kept {report.kept}, "
        f"skipped {report.skipped} (redirects {report.skipped_redirect}, "
        f"namespace {report.skipped_namespace}, markup {report.skipped_markup})"
    )
    return EXIT_OK


def cmd_segment(args: argparse.Namespace) -> int:
    abbrevs = segment_mod.load_abbreviations(args.abbrev)
    count = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for article in ingest_mod.read_articles(args.infile):
            for draft in segment_mod.segment_article(article, abbrevs):
                fh.write(dump_json_line(draft.to_dict()) + "\n")
                count += 1
    print(f"wrote {count} sentences")
    return EXIT_OK


def cmd_link(args: argparse.Namespace) -> int:
    rules = (
        link_mod.EntityTypeRules.load(args.rules)
        if args.rules
        else link_mod.EntityTypeRules.default()
    )
    if args.fixtures:
        client: link_mod.WikidataClient = link_mod.FixtureClient(args.fixtures)
    else:
        client = link_mod.HttpWikidataClient()
        if args.cache:
            client = link_mod.CachingClient(client, args.cache)
    report = link_mod.LinkReport()
    sentences = segment_mod.read_sentences(args.infile)
    typed = link_mod.link_sentences(sentences, rules, client, report, workers=args.workers)
    count = link_mod.write_typed(args.out, typed)
    print(
        f"typed {report.typed} links over {count} sentences; "
        f"{report.discarded_untyped} links discarded, {report.unresolved} unresolved"
    )
    return EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    patterns = (
        annotate_mod.DatePatternSet.load(args.dates)
        if args.dates
        else annotate_mod.DatePatternSet.default()
    )
    if args.no_bare_years:
        patterns = patterns.without("bare_year")
    mapping = annotate_mod.parse_tag_map(args.map) if args.map else {}
    kept = 0
    invalid = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for sentence in link_mod.read_typed(args.infile):
            try:
                record = annotate_mod.project_bio(sentence)
            except annotate_mod.AnnotationError:
                invalid += 1
                continue
            record = annotate_mod.tag_dates(record, patterns)
            if mapping:
                record = annotate_mod.harmonize_tags(record, mapping)
            fh.write(dump_json_line(record.to_dict()) + "\n")
            kept += 1
    print(f"annotated {kept} sentences ({invalid} rejected as invalid)")
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    policy = (
        select_mod.SelectionPolicy.load(args.policy)
        if args.policy
        else select_mod.SelectionPolicy()
    )
    annotated = read_records(args.infile)
    accepted = []
    reject_rows = []
    for group in select_mod.group_by_article(annotated):
        picked, rejects = select_mod.select_candidates(group, policy)
        accepted.extend(picked)
        reject_rows.extend({"id": s.id, "reason": reason} for s, reason in rejects)
    final = list(
        select_mod.assign_ids(
            select_mod.dedupe(
                accepted,
                lambda s: reject_rows.append(
                    {"id": s.id, "reason": select_mod.REASON_DUPLICATE}
                ),
            ),
            start=1,
        )
    )
    write_records(args.out, final)
    write_jsonl(args.rejects, reject_rows)
    print(f"accepted {len(final)} sentences, rejected {len(reject_rows)}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    sentences = read_records(args.infile)
    prompt = judge_mod.load_prompt(args.prompt)
    if args.client == "mock":
        client: judge_mod.JudgeClient = judge_mod.MockJudgeClient()
    else:
        if not args.endpoint or not args.model:
            raise CliError("--client http needs --endpoint and --model")
        client = judge_mod.HttpJudgeClient(endpoint=args.endpoint, model=args.model)
    batches = judge_mod.build_batches(sentences, args.batch_size)
    run = judge_mod.run_judge(batches, client, prompt, batch_size=args.batch_size)
    judge_mod.write_verdicts(run, args.out)
    kept, discarded = judge_mod.apply_verdicts(sentences, run)
    if args.kept:
        write_records(args.kept, kept)
    if args.discarded:
        write_records(args.discarded, discarded)
    print(
        f"{len(kept)} kept, {len(discarded)} discarded "
        f"({len(run.anomalies)} anomalies over {len(batches)} batches)"
    )
    return EXIT_OK


def cmd_review(args: argparse.Namespace) -> int:
    sentences = read_records(args.infile)
    only_ids = None
    if args.only_ids:
        only_ids = {
            line.strip()
            for line in Path(args.only_ids).read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
    session = review_mod.run_review(
        sentences, args.annotator, args.session, args.out, only_ids=only_ids
    )
    if not session.complete():
        print(f"session saved at {session.resume_offset}/{len(session.queue)}")
    return EXIT_OK


def cmd_agree(args: argparse.Namespace) -> int:
    rows = agreement_mod.compare_table(args.reference, args.judges)
    agreement_mod.write_report_csv(rows, args.out)
    print(agreement_mod.render_report(rows))
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    sentences = read_records(args.infile)
    pinned: set[str] = set()
    if args.pin:
        pinned = {
            line.strip()
            for line in Path(args.pin).read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
    ratios = tuple(args.ratios) if args.ratios else dataset_mod.DEFAULT_RATIOS
    train, dev, test = dataset_mod.split(sentences, ratios, args.seed, pinned)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(dataset_mod.SPLIT_NAMES, (train, dev, test)):
        write_records(out_dir / f"{name}.jsonl", part)
    split_stats = dataset_mod.stats({"train": train, "dev": dev, "test": test})
    dataset_mod.write_stats_csv(split_stats, out_dir / "stats.csv")
    print(dataset_mod.render_stats(split_stats))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    gold = read_records(args.gold)
    pred = read_records(args.pred)
    report = eval_mod.micro_scores_from_records(gold, pred, policy=args.policy)
    eval_mod.write_scores_csv(report, args.out)
    print(eval_mod.render_scores(report))
    return EXIT_OK


def _apply_pipeline_overrides(config, args: argparse.Namespace) -> None:
    """Command-line flags win over their config-file counterparts."""
    path_overrides = {
        "dump": "dump",
        "out_dir": "out_dir",
        "rules": "rules",
        "policy": "policy",
        "dates": "date_patterns",
        "prompt": "prompt",
        "abbrev": "abbreviations",
        "fixtures": "fixtures_dir",
        "cache": "cache_dir",
        "pin": "pinned_ids",
    }
    for flag, field in path_overrides.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, field, Path(value).resolve())
    if args.seed is not None:
        config.seed = args.seed
    if args.batch_size is not None:
        config.batch_size = args.batch_size
    if args.client is not None:
        config.judge_client = args.client
    if args.endpoint is not None:
        config.judge_endpoint = args.endpoint
    if args.model is not None:
        config.judge_model = args.model
    if args.map is not None:
        config.tag_map = annotate_mod.parse_tag_map(args.map)
    if args.keep_redirects:
        config.keep_redirects = True
    if args.no_bare_years:
        config.bare_years = False


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = pipeline_mod.PipelineConfig.load(args.config)
    _apply_pipeline_overrides(config, args)
    entries = pipeline_mod.run_pipeline(config, resume=args.resume)
    print(pipeline_mod.render_report(pipeline_mod.manifest_path(config.out_dir)))
    return EXIT_OK if entries else EXIT_STAGE


def cmd_report(args: argparse.Namespace) -> int:
    print(pipeline_mod.render_report(args.manifest))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Build a judged, BIO-labelled NER corpus from a wiki dump.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="parse a wiki XML dump into articles.jsonl")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-redirects", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("segment", help="split articles into tokenized sentences")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--abbrev", default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("link", help="type link targets via Wikidata rules")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rules", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--fixtures", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("annotate", help="project BIO labels, tag dates, harmonize tags")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--dates", default=None)
    p.add_argument("--map", default="GPE=LOC")
    p.add_argument("--no-bare-years", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("select", help="positional sampling and quality filters")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("judge", help="batch sentences to a judge, collect verdicts")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--prompt", default=None)
    p.add_argument("--client", choices=("http", "mock"), default="mock")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--batch-size", type=int, default=judge_mod.DEFAULT_BATCH_SIZE)
    p.add_argument("--out", required=True)
    p.add_argument("--kept", default=None)
    p.add_argument("--discarded", default=None)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("review", help="interactive human verdicts in the terminal")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--annotator", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--only-ids", default=None)
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("agree", help="raw agreement and kappa against a consensus")
    p.add_argument("--reference", required=True)
    p.add_argument("--judges", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("split", help="shuffle and emit train/dev/test plus stats")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--ratios", type=float, nargs=3, default=None)
    p.add_argument("--pin", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="span-level micro P/R/F1 of predictions")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--policy", choices=eval_mod.POLICIES, default="repair")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage from one config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--dump", default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--rules", default=None)
    p.add_argument("--policy", default=None)
    p.add_argument("--dates", default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--abbrev", default=None)
    p.add_argument("--fixtures", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--pin", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--client", choices=("http", "mock"), default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--map", default=None)
    p.add_argument("--keep-redirects", action="store_true")
    p.add_argument("--no-bare-years", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="summarize a pipeline manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_report)

    return parser


VALIDATION_ERRORS = (
    CliError,
    pipeline_mod.ConfigError,
    link_mod.RulesError,
    select_mod.PolicyError,
    annotate_mod.TagMapError,
    dataset_mod.SplitConfigError,
    FileNotFoundError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pipeline_mod.ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except pipeline_mod.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except review_mod.NotInteractive as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except review_mod.SessionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything a stage raised
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
