"""End-to-end pipeline: one config, staged artifacts, a manifest per run.

Stages run in fixed order (extract, segment, link, annotate, select,
judge, split). Each stage writes its artifact plus a manifest line with
input/output counts, duration and content hashes; --resume skips stages
whose inputs (files and the relevant config slice) are unchanged and
whose outputs still match their recorded hashes.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import annotate as annotate_mod
from . import dataset as dataset_mod
from . import entity_link as link_mod
from . import ingest as ingest_mod
from . import judge as judge_mod
from . import segment as segment_mod
from . import select as select_mod
from .records import AnnotatedSentence, read_records, write_jsonl, write_records

STAGES = ("extract", "segment", "link", "annotate", "select", "judge", "split")


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    dump: Path
    out_dir: Path
    rules: Path | None = None
    policy: Path | None = None
    date_patterns: Path | None = None
    prompt: Path | None = None
    abbreviations: Path | None = None
    fixtures_dir: Path | None = None
    cache_dir: Path | None = None
    pinned_ids: Path | None = None
    tag_map: dict[str, str] = field(default_factory=lambda: {"GPE": "LOC"})
    judge_client: str = "mock"
    judge_endpoint: str | None = None
    judge_model: str | None = None
    judge_token_env: str = "JUDGE_API_TOKEN"
    batch_size: int = judge_mod.DEFAULT_BATCH_SIZE
    seed: int = 42
    ratios: tuple[float, float, float] = dataset_mod.DEFAULT_RATIOS
    bare_years: bool = True
    keep_redirects: bool = False

    _PATH_KEYS = (
        "dump", "out_dir", "rules", "policy", "date_patterns", "prompt",
        "abbreviations", "fixtures_dir", "cache_dir", "pinned_ids",
    )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        kwargs: dict[str, Any] = {}
        base = path.parent
        for key, value in obj.items():
            if key in cls._PATH_KEYS:
                kwargs[key] = None if value is None else (base / value).resolve()
            elif key == "ratios":
                kwargs[key] = tuple(float(x) for x in value)
            elif key == "judge":
                unknown = set(value) - {"client", "endpoint", "model", "token_env", "batch_size"}
                if unknown:
                    raise ConfigError([f"unknown judge config key {k!r}" for k in sorted(unknown)])
                kwargs["judge_client"] = str(value.get("client", "mock"))
                kwargs["judge_endpoint"] = value.get("endpoint")
                kwargs["judge_model"] = value.get("model")
                if "token_env" in value:
                    kwargs["judge_token_env"] = str(value["token_env"])
                if "batch_size" in value:
                    kwargs["batch_size"] = int(value["batch_size"])
            elif key in ("seed", "batch_size"):
                kwargs[key] = int(value)
            elif key in ("bare_years", "keep_redirects"):
                kwargs[key] = bool(value)
            elif key == "tag_map":
                kwargs[key] = {str(k): str(v) for k, v in value.items()}
            else:
                raise ConfigError([f"unknown config key {key!r}"])
        missing = [k for k in ("dump", "out_dir") if k not in kwargs]
        if missing:
            raise ConfigError([f"config missing required key {k!r}" for k in missing])
        return cls(**kwargs)

    def validate(self) -> list[str]:
        """All problems at once, before any work."""
        problems: list[str] = []
        if not self.dump.exists():
            problems.append(f"dump not found: {self.dump}")
        for name in ("rules", "policy", "date_patterns", "prompt", "abbreviations",
                     "pinned_ids"):
            value: Path | None = getattr(self, name)
            if value is not None and not value.exists():
                problems.append(f"{name} file not found: {value}")
        if self.fixtures_dir is not None and not self.fixtures_dir.is_dir():
            problems.append(f"fixtures_dir not found: {self.fixtures_dir}")
        out = self.out_dir.resolve()
        for name in self._PATH_KEYS:
            if name == "out_dir":
                continue
            value = getattr(self, name)
            if value is None:
                continue
            try:
                Path(value).resolve().relative_to(out)
            except ValueError:
                continue
            problems.append(f"{name} lies inside the output directory: {value}")
        if self.judge_client not in ("mock", "http"):
            problems.append(f"judge client must be mock or http, got {self.judge_client!r}")
        if self.judge_client == "http":
            if not self.judge_endpoint:
                problems.append("http judge needs an endpoint")
            if not self.judge_model:
                problems.append("http judge needs a model name")
        if abs(sum(self.ratios) - 1.0) > dataset_mod.RATIO_TOLERANCE:
            problems.append(f"split ratios must sum to 1, got {self.ratios}")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        return problems

    def artifact(self, name: str) -> Path:
        return self.out_dir / name

    def stage_params(self, stage: str) -> dict:
        """The config slice that affects a stage; part of its input hash."""
        if stage == "extract":
            return {"keep_redirects": self.keep_redirects}
        if stage == "segment":
            return {"abbreviations": str(self.abbreviations)}
        if stage == "link":
            return {"rules": str(self.rules), "fixtures": str(self.fixtures_dir)}
        if stage == "annotate":
            return {
                "date_patterns": str(self.date_patterns),
                "tag_map": self.tag_map,
                "bare_years": self.bare_years,
            }
        if stage == "select":
            return {"policy": str(self.policy)}
        if stage == "judge":
            return {
                "client": self.judge_client,
                "model": self.judge_model,
                "batch_size": self.batch_size,
                "prompt": str(self.prompt),
            }
        if stage == "split":
            return {
                "seed": self.seed,
                "ratios": list(self.ratios),
                "pinned_ids": str(self.pinned_ids),
            }
        return {}


def file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _combined_input_hash(paths: list[Path], params: dict) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(file_hash(path).encode())
    digest.update(json.dumps(params, sort_keys=True).encode())
    return digest.hexdigest()


@dataclass
class ManifestEntry:
    stage: str
    inputs: list[str]
    outputs: list[str]
    in_count: int
    out_count: int
    duration_s: float
    input_hash: str
    output_hash: str
    cached: bool = False

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "in_count": self.in_count,
            "out_count": self.out_count,
            "duration_s": round(self.duration_s, 3),
            "input_hash": self.input_hash,
            "output_hash": self.output_hash,
            "cached": self.cached,
        }


def manifest_path(out_dir: Path) -> Path:
    return out_dir / "manifest.jsonl"


def read_manifest(path: Path) -> dict[str, dict]:
    entries: dict[str, dict] = {}
    if not path.exists():
        return entries
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                entries[obj["stage"]] = obj
    return entries


def _outputs_hash(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(file_hash(path).encode())
    return digest.hexdigest()


@dataclass
class _StageRun:
    """Bookkeeping passed to each stage function."""
    config: PipelineConfig
    counts: dict[str, int] = field(default_factory=dict)


def _stage_extract(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    options = ingest_mod.IngestOptions(drop_redirects=not cfg.keep_redirects)
    report = ingest_mod.IngestReport()
    out = cfg.artifact("articles.jsonl")
    with ingest_mod.open_dump(cfg.dump) as stream:
        ingest_mod.write_articles(
            ingest_mod.parse_dump(stream, options, report), out, report
        )
    return report.pages_seen, report.kept, [out]


def _stage_segment(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    abbrevs = segment_mod.load_abbreviations(cfg.abbreviations)
    articles = list(ingest_mod.read_articles(cfg.artifact("articles.jsonl")))
    drafts = [d for a in articles for d in segment_mod.segment_article(a, abbrevs)]
    out = cfg.artifact("sentences.jsonl")
    segment_mod.write_sentences(out, drafts)
    return len(articles), len(drafts), [out]


def _make_client(cfg: PipelineConfig) -> link_mod.WikidataClient:
    if cfg.fixtures_dir is not None:
        return link_mod.FixtureClient(cfg.fixtures_dir)
    client: link_mod.WikidataClient = link_mod.HttpWikidataClient()
    if cfg.cache_dir is not None:
        client = link_mod.CachingClient(client, cfg.cache_dir)
    return client


def _stage_link(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    rules = link_mod.EntityTypeRules.load(cfg.rules) if cfg.rules else link_mod.EntityTypeRules.default()
    client = _make_client(cfg)
    sentences = list(segment_mod.read_sentences(cfg.artifact("sentences.jsonl")))
    report = link_mod.LinkReport()
    typed = list(link_mod.link_sentences(iter(sentences), rules, client, report, workers=4))
    out = cfg.artifact("typed.jsonl")
    link_mod.write_typed(out, typed)
    run.counts["unresolved_titles"] = report.unresolved
    return len(sentences), len(typed), [out]


def _stage_annotate(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    patterns = (
        annotate_mod.DatePatternSet.load(cfg.date_patterns)
        if cfg.date_patterns
        else annotate_mod.DatePatternSet.default()
    )
    if not cfg.bare_years:
        patterns = patterns.without("bare_year")
    typed = list(link_mod.read_typed(cfg.artifact("typed.jsonl")))
    annotated: list[AnnotatedSentence] = []
    invalid: list[dict] = []
    for sentence in typed:
        try:
            record = annotate_mod.project_bio(sentence)
        except annotate_mod.AnnotationError as exc:
            invalid.append(
                {
                    "id": annotate_mod.provisional_id(sentence.article_id, sentence.sent_index),
                    "reason": select_mod.REASON_OVERLAP,
                    "detail": str(exc),
                }
            )
            continue
        record = annotate_mod.tag_dates(record, patterns)
        record = annotate_mod.harmonize_tags(record, cfg.tag_map)
        annotated.append(record)
    out = cfg.artifact("annotated.jsonl")
    write_records(out, annotated)
    outputs = [out]
    if invalid:
        invalid_path = cfg.artifact("annotate_rejects.jsonl")
        write_jsonl(invalid_path, invalid)
        outputs.append(invalid_path)
    return len(typed), len(annotated), outputs


def _stage_select(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    policy = select_mod.SelectionPolicy.load(cfg.policy) if cfg.policy else select_mod.SelectionPolicy()
    annotated = read_records(cfg.artifact("annotated.jsonl"))
    accepted: list[AnnotatedSentence] = []
    reject_rows: list[dict] = []
    for group in select_mod.group_by_article(annotated):
        picked, rejects = select_mod.select_candidates(group, policy)
        accepted.extend(picked)
        reject_rows.extend({"id": s.id, "reason": reason} for s, reason in rejects)

    def on_duplicate(sentence: AnnotatedSentence) -> None:
        reject_rows.append({"id": sentence.id, "reason": select_mod.REASON_DUPLICATE})

    final = list(
        select_mod.assign_ids(select_mod.dedupe(accepted, on_duplicate), start=1)
    )
    out = cfg.artifact("candidates.jsonl")
    rejects_path = cfg.artifact("rejects.jsonl")
    write_records(out, final)
    write_jsonl(rejects_path, reject_rows)
    return len(annotated), len(final), [out, rejects_path]


def _judge_client(cfg: PipelineConfig) -> judge_mod.JudgeClient:
    if cfg.judge_client == "mock":
        return judge_mod.MockJudgeClient()
    return judge_mod.HttpJudgeClient(
        endpoint=cfg.judge_endpoint or "",
        model=cfg.judge_model or "",
        token_env=cfg.judge_token_env,
    )


def _free_verdict_path(out_dir: Path) -> Path:
    path = out_dir / "verdicts.csv"
    counter = 2
    while path.exists():
        path = out_dir / f"verdicts.{counter}.csv"
        counter += 1
    return path


def _stage_judge(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    candidates = read_records(cfg.artifact("candidates.jsonl"))
    prompt = judge_mod.load_prompt(cfg.prompt)
    client = _judge_client(cfg)
    batches = judge_mod.build_batches(candidates, cfg.batch_size)
    judge_run = judge_mod.run_judge(batches, client, prompt, batch_size=cfg.batch_size)
    kept, discarded = judge_mod.apply_verdicts(candidates, judge_run)
    verdict_path = _free_verdict_path(cfg.out_dir)
    judge_mod.write_verdicts(judge_run, verdict_path)
    kept_path = cfg.artifact("kept.jsonl")
    discarded_path = cfg.artifact("discarded.jsonl")
    write_records(kept_path, kept)
    write_records(discarded_path, discarded)
    run.counts["judge_anomalies"] = len(judge_run.anomalies)
    return len(candidates), len(kept), [kept_path, discarded_path]


def _stage_split(run: _StageRun) -> tuple[int, int, list[Path]]:
    cfg = run.config
    kept = read_records(cfg.artifact("kept.jsonl"))
    pinned: set[str] = set()
    if cfg.pinned_ids is not None:
        pinned = {
            line.strip()
            for line in cfg.pinned_ids.read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
        pinned &= {s.id for s in kept}  # ids judged away cannot be pinned
    train, dev, test = dataset_mod.split(kept, cfg.ratios, cfg.seed, pinned)
    outputs = []
    for name, part in zip(dataset_mod.SPLIT_NAMES, (train, dev, test)):
        path = cfg.artifact(f"{name}.jsonl")
        write_records(path, part)
        outputs.append(path)
    split_stats = dataset_mod.stats({"train": train, "dev": dev, "test": test})
    stats_path = cfg.artifact("stats.csv")
    dataset_mod.write_stats_csv(split_stats, stats_path)
    outputs.append(stats_path)
    return len(kept), len(train) + len(dev) + len(test), outputs


_STAGE_FUNCS: dict[str, Callable[[_StageRun], tuple[int, int, list[Path]]]] = {
    "extract": _stage_extract,
    "segment": _stage_segment,
    "link": _stage_link,
    "annotate": _stage_annotate,
    "select": _stage_select,
    "judge": _stage_judge,
    "split": _stage_split,
}

# Files each stage consumes from the artifact directory, for resume hashing.
_STAGE_ARTIFACT_INPUTS: dict[str, list[str]] = {
    "extract": [],
    "segment": ["articles.jsonl"],
    "link": ["sentences.jsonl"],
    "annotate": ["typed.jsonl"],
    "select": ["annotated.jsonl"],
    "judge": ["candidates.jsonl"],
    "split": ["kept.jsonl"],
}


def _stage_config_inputs(cfg: PipelineConfig, stage: str) -> list[Path]:
    mapping = {
        "extract": [cfg.dump],
        "segment": [cfg.abbreviations],
        "link": [cfg.rules],
        "annotate": [cfg.date_patterns],
        "select": [cfg.policy],
        "judge": [cfg.prompt],
        "split": [cfg.pinned_ids],
    }
    return [p for p in mapping.get(stage, []) if p is not None]


def run_pipeline(
    config: PipelineConfig,
    resume: bool = False,
    log: Callable[[str], None] = print,
) -> list[ManifestEntry]:
    """Execute all stages; halts on the first stage failure with prior
    artifacts intact. Returns the manifest entries of this run."""
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    previous = read_manifest(manifest_path(config.out_dir)) if resume else {}
    entries: list[ManifestEntry] = []
    run = _StageRun(config=config)

    def flush_manifest() -> None:
        # rewritten after every stage so a later failure keeps what completed
        with open(manifest_path(config.out_dir), "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")

    for stage in STAGES:
        inputs = _stage_config_inputs(config, stage) + [
            config.artifact(name) for name in _STAGE_ARTIFACT_INPUTS[stage]
        ]
        input_hash = _combined_input_hash(inputs, config.stage_params(stage))
        cached = previous.get(stage)
        if (
            cached
            and cached.get("input_hash") == input_hash
            and all(Path(p).exists() for p in cached.get("outputs", []))
            and _outputs_hash([Path(p) for p in cached["outputs"]]) == cached.get("output_hash")
        ):
            entry = ManifestEntry(
                stage=stage,
                inputs=[str(p) for p in inputs],
                outputs=list(cached["outputs"]),
                in_count=int(cached["in_count"]),
                out_count=int(cached["out_count"]),
                duration_s=0.0,
                input_hash=input_hash,
                output_hash=cached["output_hash"],
                cached=True,
            )
            entries.append(entry)
            flush_manifest()
            log(f"[{stage}] cached ({entry.in_count} -> {entry.out_count})")
            continue
        started = time.monotonic()
        try:
            in_count, out_count, outputs = _STAGE_FUNCS[stage](run)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        duration = time.monotonic() - started
        entry = ManifestEntry(
            stage=stage,
            inputs=[str(p) for p in inputs],
            outputs=[str(p) for p in outputs],
            in_count=in_count,
            out_count=out_count,
            duration_s=duration,
            input_hash=input_hash,
            output_hash=_outputs_hash(outputs),
        )
        entries.append(entry)
        flush_manifest()
        log(f"[{stage}] {in_count} -> {out_count} in {duration:.2f}s")

    return entries


def render_report(manifest_file: str | Path) -> str:
    """Per-stage counts from a manifest; missing stages are marked."""
    path = Path(manifest_file)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = read_manifest(path)
    lines = [f"{'stage':<10} {'in':>8} {'out':>8} {'time':>8}  note"]
    for stage in STAGES:
        entry = entries.get(stage)
        if entry is None:
            lines.append(f"{stage:<10} {'-':>8} {'-':>8} {'-':>8}  not run")
            continue
        note = "cached" if entry.get("cached") else ""
        lines.append(
            f"{stage:<10} {entry['in_count']:>8,} {entry['out_count']:>8,} "
            f"{entry['duration_s']:>7.2f}s  {note}"
        )
    select_entry = entries.get("select")
    judge_entry = entries.get("judge")
    split_entry = entries.get("split")
    if select_entry:
        lines.append(f"sentences after selection: {select_entry['out_count']:,}")
    if judge_entry:
        lines.append(f"sentences kept by judge:   {judge_entry['out_count']:,}")
    if split_entry:
        lines.append(f"sentences in final splits: {split_entry['out_count']:,}")
    return "\n".join(lines)
