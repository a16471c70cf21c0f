"""
Behavior Analyzer Agent
Detects linguistic and visual cognitive behaviors in reasoning traces and reports
emergence rates (share of traces showing a behavior) and transfer rates
(visual emergence over its linguistic counterpart's emergence).
"""

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
import yaml

from src.utils.errors import ContractViolation, CorpusError, LexiconError, UndefinedTransferError

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_FILE = "behavior_report.json"


class BehaviorKind(str, Enum):
    BACKTRACKING = "BACKTRACKING"
    VERIFICATION = "VERIFICATION"
    SUBGOAL_SETTING = "SUBGOAL_SETTING"
    BACKWARD_CHAINING = "BACKWARD_CHAINING"
    VISUAL_REFLECTION = "VISUAL_REFLECTION"
    DIVIDE_AND_CONQUER = "DIVIDE_AND_CONQUER"
    VISUAL_VERIFICATION = "VISUAL_VERIFICATION"
    GOAL_DRIVEN_TRACING = "GOAL_DRIVEN_TRACING"

    @property
    def is_visual(self) -> bool:
        return self in COUNTERPART


LINGUISTIC_KINDS = (
    BehaviorKind.BACKTRACKING,
    BehaviorKind.VERIFICATION,
    BehaviorKind.SUBGOAL_SETTING,
    BehaviorKind.BACKWARD_CHAINING,
)

# visual behavior -> its linguistic counterpart
COUNTERPART: Dict[BehaviorKind, BehaviorKind] = {
    BehaviorKind.VISUAL_REFLECTION: BehaviorKind.BACKTRACKING,
    BehaviorKind.DIVIDE_AND_CONQUER: BehaviorKind.SUBGOAL_SETTING,
    BehaviorKind.VISUAL_VERIFICATION: BehaviorKind.VERIFICATION,
    BehaviorKind.GOAL_DRIVEN_TRACING: BehaviorKind.BACKWARD_CHAINING,
}

VISUAL_KINDS = tuple(COUNTERPART)

DEFAULT_PHRASES: Dict[BehaviorKind, Tuple[str, ...]] = {
    BehaviorKind.BACKTRACKING: (
        "this approach won't work",
        "that doesn't work",
        "let me reconsider",
        "let me try a different approach",
        "let me go back",
    ),
    BehaviorKind.VERIFICATION: (
        "let me verify",
        "let me check",
        "let me double-check",
        "to confirm",
    ),
    BehaviorKind.SUBGOAL_SETTING: (
        "first, we need to",
        "first, i need to",
        "let's break this down",
        "the next step is to",
    ),
    BehaviorKind.BACKWARD_CHAINING: (
        "working backwards",
        "working backward",
        "to reach this result, we need",
    ),
    BehaviorKind.VISUAL_REFLECTION: (
        "let me see the image",
        "let me look at the image again",
        "let me visualize",
        "looking at the figure again",
    ),
    BehaviorKind.DIVIDE_AND_CONQUER: (
        "let's first look at",
        "region by region",
        "split the image into",
    ),
    BehaviorKind.VISUAL_VERIFICATION: (
        "verify this against the image",
        "check this against the figure",
        "confirm with the diagram",
    ),
    BehaviorKind.GOAL_DRIVEN_TRACING: (
        "to get this answer, i need",
        "trace back from the target",
    ),
}


def parse_kind(raw) -> BehaviorKind:
    if isinstance(raw, BehaviorKind):
        return raw
    try:
        return BehaviorKind(str(raw).strip().upper())
    except ValueError:
        raise ValueError(f"unknown behavior kind {raw!r}") from None


def _phrase_pattern(phrase: str) -> str:
    body = re.escape(phrase.replace("’", "'"))
    body = body.replace("'", "['’]").replace(r"\ ", r"\s+")
    return rf"(?<!\w){body}(?!\w)"


@dataclass(frozen=True)
class Detection:
    kind: BehaviorKind
    start: int   # byte offsets into the UTF-8 encoded text
    end: int
    phrase: str


@dataclass(frozen=True)
class Lexicon:
    phrases: Dict[BehaviorKind, Tuple[str, ...]]
    _patterns: Dict[BehaviorKind, re.Pattern] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        patterns = {}
        for kind, phrases in self.phrases.items():
            cleaned = sorted({p.strip().lower() for p in phrases if p.strip()}, key=lambda p: (-len(p), p))
            if cleaned:
                patterns[kind] = re.compile("|".join(_phrase_pattern(p) for p in cleaned), re.IGNORECASE)
        object.__setattr__(self, "_patterns", patterns)

    @classmethod
    def default(cls) -> "Lexicon":
        return cls(dict(DEFAULT_PHRASES))

    def pattern(self, kind: BehaviorKind) -> Optional[re.Pattern]:
        return self._patterns.get(kind)


def load_lexicon(path: str, extend_default: bool = True) -> Lexicon:
    """
    Read a lexicon mapping kind names to phrase lists (JSON or YAML).

    Args:
        path: Lexicon file
        extend_default: Add the phrases to the shipped lexicon instead of replacing it
    """
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise LexiconError(f"cannot parse lexicon {path}: {e}") from e
    if not isinstance(raw, dict):
        raise LexiconError(f"lexicon {path} must map behavior kinds to phrase lists")

    phrases = {k: list(v) for k, v in DEFAULT_PHRASES.items()} if extend_default else {}
    for key, values in raw.items():
        try:
            kind = parse_kind(key)
        except ValueError as e:
            raise LexiconError(f"lexicon {path}: {e}") from e
        if isinstance(values, str):
            values = [values]
        if not isinstance(values, list) or not all(isinstance(v, str) and v.strip() for v in values):
            raise LexiconError(f"lexicon {path}: {key} must list non-empty phrases")
        phrases.setdefault(kind, []).extend(values)
    return Lexicon({k: tuple(v) for k, v in phrases.items()})


@dataclass(frozen=True)
class Trace:
    trace_id: str
    text: str
    source_stage: str = "unknown"
    has_image: bool = False

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ContractViolation(f"trace {self.trace_id} has empty text")


def load_traces(path: str) -> List[Trace]:
    """Trace corpus JSONL: {trace_id, text, source_stage, has_image}."""
    df = pd.read_json(path, lines=True, dtype=False)
    for col in ("trace_id", "text"):
        if col not in df.columns:
            raise CorpusError(f"trace corpus {path} lacks column {col!r}")
    if "source_stage" not in df.columns:
        df["source_stage"] = "unknown"
    if "has_image" not in df.columns:
        df["has_image"] = False

    empty = df["text"].isna() | (df["text"].astype(str).str.strip() == "")
    if empty.any():
        raise CorpusError("traces with empty text", df.loc[empty, "trace_id"].astype(str).tolist())
    return [
        Trace(str(r.trace_id), str(r.text), str(r.source_stage), bool(r.has_image))
        for r in df.itertuples(index=False)
    ]


def detect(trace: Trace, lexicon: Optional[Lexicon] = None) -> List[Detection]:
    """All non-overlapping phrase matches per kind, ordered by kind then position."""
    lexicon = lexicon or Lexicon.default()
    text = trace.text
    found = []
    for kind in BehaviorKind:
        pattern = lexicon.pattern(kind)
        if pattern is None:
            continue
        for m in pattern.finditer(text):
            start = len(text[:m.start()].encode("utf-8"))
            end = start + len(m.group(0).encode("utf-8"))
            found.append(Detection(kind, start, end, m.group(0)))
    return found


@dataclass(frozen=True)
class JudgeLabel:
    trace_id: str
    kind: BehaviorKind
    verdict: bool


def ingest_judge_labels(path: str, known_trace_ids: Optional[Iterable[str]] = None) -> List[JudgeLabel]:
    """
    Read external-judge verdicts, one JSON record per (trace, kind).

    Bad lines are skipped and logged with their line number. Duplicate
    (trace, kind) records: the last one wins.
    """
    known = set(known_trace_ids) if known_trace_ids is not None else None
    merged: Dict[Tuple[str, BehaviorKind], JudgeLabel] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                trace_id = str(record["trace_id"])
                kind = parse_kind(record["kind"])
                verdict = record["verdict"]
                if not isinstance(verdict, bool):
                    raise ValueError(f"verdict must be true/false, got {verdict!r}")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                logger.warning("%s:%d: skipping judge label: %s", path, lineno, e)
                continue
            if known is not None and trace_id not in known:
                logger.warning("%s:%d: skipping judge label for unknown trace %s", path, lineno, trace_id)
                continue
            key = (trace_id, kind)
            if key in merged:
                logger.warning("%s:%d: duplicate label for (%s, %s); keeping the later one",
                               path, lineno, trace_id, kind.value)
            merged[key] = JudgeLabel(trace_id, kind, verdict)
    return list(merged.values())


def exhibited(traces: Sequence[Trace], lexicon: Optional[Lexicon] = None,
              labels: Optional[Iterable[JudgeLabel]] = None) -> pd.DataFrame:
    """
    One row per (trace, kind): whether the trace shows the kind, how many
    lexicon matches it has, and which detector decided (lexicon or judge).
    """
    lexicon = lexicon or Lexicon.default()
    overrides = {(l.trace_id, l.kind): l.verdict for l in (labels or [])}
    rows = []
    for trace in traces:
        counts = {k: 0 for k in BehaviorKind}
        for d in detect(trace, lexicon):
            counts[d.kind] += 1
        for kind in BehaviorKind:
            judged = (trace.trace_id, kind) in overrides
            rows.append({
                "trace_id": trace.trace_id,
                "source_stage": trace.source_stage,
                "has_image": trace.has_image,
                "kind": kind.value,
                "matches": counts[kind],
                "present": overrides[(trace.trace_id, kind)] if judged else counts[kind] > 0,
                "detector": "judge" if judged else "lexicon",
            })
    return pd.DataFrame(rows, columns=["trace_id", "source_stage", "has_image", "kind",
                                       "matches", "present", "detector"])


def emergence_rate(traces: Sequence[Trace], kind, lexicon: Optional[Lexicon] = None,
                   labels: Optional[Iterable[JudgeLabel]] = None) -> float:
    """Share of traces with at least one detection of `kind`."""
    if not traces:
        raise ContractViolation("emergence rate needs at least one trace")
    kind = parse_kind(kind)
    table = exhibited(traces, lexicon, labels)
    return float(table.loc[table["kind"] == kind.value, "present"].mean())


def transfer_rate(cbr_v: float, cbr_l: float) -> float:
    """Visual emergence over linguistic emergence; undefined when the latter is zero."""
    if cbr_l <= 0.0:
        raise UndefinedTransferError(f"transfer rate is undefined when the linguistic rate is {cbr_l}")
    return cbr_v / cbr_l


def _rates(table: pd.DataFrame) -> Tuple[Dict[str, int], Dict[str, float], Dict[str, Optional[float]]]:
    n_traces = table["trace_id"].nunique()
    present = table.groupby("kind", sort=False)["present"].sum()
    counts = {k.value: int(present.get(k.value, 0)) for k in BehaviorKind}
    cbr = {k: (c / n_traces if n_traces else 0.0) for k, c in counts.items()}
    btr = {}
    for visual, linguistic in COUNTERPART.items():
        try:
            btr[visual.value] = transfer_rate(cbr[visual.value], cbr[linguistic.value])
        except UndefinedTransferError:
            btr[visual.value] = None
    return counts, cbr, btr


@dataclass
class BehaviorReport:
    total_traces: int
    trace_counts: Dict[str, int]
    match_counts: Dict[str, int]
    cbr: Dict[str, float]
    btr: Dict[str, Optional[float]]
    provenance: Dict[str, Dict[str, int]]
    text_only_cbr: Dict[str, Optional[float]]
    stages: Dict[str, Dict] = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> Dict:
        return {
            "schema_version": self.schema_version,
            "total_traces": self.total_traces,
            "trace_counts": self.trace_counts,
            "match_counts": self.match_counts,
            "cbr": self.cbr,
            "btr": self.btr,
            "provenance": self.provenance,
            "text_only_cbr": self.text_only_cbr,
            "stages": self.stages,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        rows = []
        for kind in BehaviorKind:
            btr = self.btr.get(kind.value) if kind.is_visual else None
            rows.append({
                "behavior": kind.value,
                "modality": "visual" if kind.is_visual else "linguistic",
                "traces": self.trace_counts[kind.value],
                "CBR": f"{self.cbr[kind.value]:.4f}",
                "counterpart": COUNTERPART[kind].value if kind.is_visual else "-",
                "BTR": "-" if not kind.is_visual else ("undefined" if btr is None else f"{btr:.4f}"),
            })
        return pd.DataFrame(rows).to_string(index=False) + "\n"


def report(traces: Sequence[Trace], labels: Optional[Iterable[JudgeLabel]] = None,
           lexicon: Optional[Lexicon] = None) -> BehaviorReport:
    """Per-kind emergence, per-pair transfer, provenance, text-only and per-stage views."""
    if not traces:
        raise ContractViolation("behavior report needs at least one trace")
    table = exhibited(traces, lexicon, labels)
    counts, cbr, btr = _rates(table)

    match_counts = table.groupby("kind", sort=False)["matches"].sum()
    provenance = {}
    for kind in BehaviorKind:
        sub = table[table["kind"] == kind.value]
        provenance[kind.value] = {
            "lexicon": int((sub["detector"] == "lexicon").sum()),
            "judge": int((sub["detector"] == "judge").sum()),
        }

    text_only = table[~table["has_image"].astype(bool)]
    n_text = text_only["trace_id"].nunique()
    text_only_cbr = {}
    for kind in VISUAL_KINDS:
        hits = text_only.loc[text_only["kind"] == kind.value, "present"].sum()
        text_only_cbr[kind.value] = float(hits / n_text) if n_text else None

    stages = {}
    for stage, sub in table.groupby("source_stage", sort=True):
        _, s_cbr, s_btr = _rates(sub)
        stages[str(stage)] = {"traces": int(sub["trace_id"].nunique()), "cbr": s_cbr, "btr": s_btr}

    return BehaviorReport(
        total_traces=len(traces),
        trace_counts=counts,
        match_counts={k.value: int(match_counts.get(k.value, 0)) for k in BehaviorKind},
        cbr=cbr,
        btr=btr,
        provenance=provenance,
        text_only_cbr=text_only_cbr,
        stages=stages,
    )


class BehaviorAnalyzerAgent:
    """
    Agent that mines a trace corpus for cognitive behaviors.
    Judge labels, when supplied, override lexicon detections.
    """

    def __init__(self, traces_path: str, labels_path: Optional[str] = None,
                 lexicon_path: Optional[str] = None, verbose: bool = True):
        """
        Initialize the Behavior Analyzer Agent.

        Args:
            traces_path: Trace corpus JSONL
            labels_path: Optional judge-label JSONL
            lexicon_path: Optional extra phrases, merged into the default lexicon
        """
        self.traces_path = traces_path
        self.labels_path = labels_path
        self.lexicon_path = lexicon_path
        self.verbose = verbose
        self.report: Optional[BehaviorReport] = None

    def _say(self, message: str):
        if self.verbose:
            print(message)

    def run(self) -> BehaviorReport:
        self._say("🚀 Starting Behavior Analyzer Agent...")
        self._say("=" * 60)

        traces = load_traces(self.traces_path)
        self._say(f"✅ Loaded {len(traces)} traces")
        lexicon = load_lexicon(self.lexicon_path) if self.lexicon_path else Lexicon.default()
        labels = None
        if self.labels_path:
            labels = ingest_judge_labels(self.labels_path, [t.trace_id for t in traces])
            self._say(f"✅ Ingested {len(labels)} judge labels")

        self.report = report(traces, labels, lexicon)

        self._say("\n" + "=" * 60)
        self._say("✅ BEHAVIOR ANALYSIS COMPLETE")
        self._say("=" * 60)
        self._say(self.report.to_table())
        return self.report

    def save_report(self, output_dir: str) -> Dict[str, str]:
        if self.report is None:
            raise ContractViolation("no behavior report to save; call run() first")
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / REPORT_FILE
        table_path = out / "behavior_report.txt"
        json_path.write_text(self.report.to_json(), encoding="utf-8")
        table_path.write_text(self.report.to_table(), encoding="utf-8")
        self._say(f"💾 Behavior report saved to: {json_path}")
        return {"json": str(json_path), "table": str(table_path)}
