"""
Data Curation Agent
Loads a prompt-answer corpus, validates it, and runs the curation stages:
loss-based filtering, rule-based pattern filtering, pass-rate difficulty
filtering and category reweighting.
"""

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.rl.policy import ParamsLike, batch_logprobs
from src.rl.taskgen import TaskInstance, pass_rate
from src.utils.errors import ContractViolation, CorpusError, RuleError
from src.utils.rng import child_rngs, seeded_rng
from src.utils.vocab import Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_LOSS_QUANTILE = 0.9
DEFAULT_RULES = ("prove that", "show that")
REGEX_PREFIX = "re:"

CORPUS_COLUMNS = ["sample_id", "prompt_text", "reference_answer", "category",
                  "difficulty", "proxy_loss", "pass_rate"]


@dataclass(frozen=True)
class CorpusSample:
    sample_id: str
    prompt_text: str
    reference_answer: str
    category: str = "general"
    difficulty: int = 1
    proxy_loss: Optional[float] = None
    pass_rate: Optional[float] = None

    def __post_init__(self):
        if self.pass_rate is not None and not 0.0 <= self.pass_rate <= 1.0:
            raise ContractViolation(f"sample {self.sample_id}: pass_rate {self.pass_rate} outside [0, 1]")


def corpus_frame(samples: Sequence[CorpusSample]) -> pd.DataFrame:
    return pd.DataFrame([asdict(s) for s in samples], columns=CORPUS_COLUMNS)


def load_corpus(path: str) -> pd.DataFrame:
    """
    Read a corpus JSONL. Task exports (task_id instead of sample_id) are accepted;
    proxy_loss and pass_rate stay empty when absent.
    """
    df = pd.read_json(path, lines=True, dtype=False)
    if "sample_id" not in df.columns and "task_id" in df.columns:
        df = df.rename(columns={"task_id": "sample_id"})
    missing = [c for c in ("sample_id", "prompt_text", "reference_answer") if c not in df.columns]
    if missing:
        raise CorpusError(f"corpus {path} lacks columns {missing}")

    defaults = {"category": "general", "difficulty": 1, "proxy_loss": np.nan, "pass_rate": np.nan}
    for col, default in defaults.items():
        if col not in df.columns:
            df[col] = default
    df["sample_id"] = df["sample_id"].astype(str)
    df["proxy_loss"] = pd.to_numeric(df["proxy_loss"], errors="coerce")
    df["pass_rate"] = pd.to_numeric(df["pass_rate"], errors="coerce")

    bad = df["pass_rate"].notna() & ((df["pass_rate"] < 0) | (df["pass_rate"] > 1))
    if bad.any():
        raise CorpusError("pass_rate outside [0, 1]", df.loc[bad, "sample_id"].tolist())
    return df.reset_index(drop=True)


def save_corpus(corpus: pd.DataFrame, path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    corpus.to_json(path, orient="records", lines=True, force_ascii=False)
    return str(path)


def _require(corpus: pd.DataFrame, column: str):
    if column not in corpus.columns:
        raise CorpusError(f"corpus has no {column} column", corpus["sample_id"].astype(str).tolist())
    missing = corpus[column].isna()
    if missing.any():
        raise CorpusError(f"samples without {column}", corpus.loc[missing, "sample_id"].astype(str).tolist())


def loss_filter(corpus: pd.DataFrame, quantile: float = DEFAULT_LOSS_QUANTILE) -> pd.DataFrame:
    """Drop samples whose proxy_loss is above the corpus quantile; ties at the threshold stay."""
    if not 0.0 < quantile < 1.0:
        raise ContractViolation(f"quantile must be in (0, 1), got {quantile}")
    if corpus.empty:
        return corpus.copy()
    _require(corpus, "proxy_loss")
    threshold = np.quantile(corpus["proxy_loss"].to_numpy(dtype=float), quantile, method="inverted_cdf")
    return corpus[corpus["proxy_loss"] <= threshold].copy()


def compile_rules(rules: Sequence[str]) -> List[re.Pattern]:
    """Literal rules match case-insensitively; a `re:` prefix marks a regular expression."""
    compiled = []
    for i, rule in enumerate(rules):
        if not isinstance(rule, str) or not rule.strip():
            raise RuleError(i, str(rule), "empty rule")
        if rule.startswith(REGEX_PREFIX):
            body = rule[len(REGEX_PREFIX):]
            if not body:
                raise RuleError(i, rule, "empty regular expression")
            try:
                compiled.append(re.compile(body, re.IGNORECASE))
            except re.error as e:
                raise RuleError(i, rule, str(e)) from e
        else:
            compiled.append(re.compile(re.escape(rule), re.IGNORECASE))
    return compiled


def pattern_filter(corpus: pd.DataFrame, rules: Sequence[str] = DEFAULT_RULES) -> pd.DataFrame:
    """Drop samples whose prompt or answer matches any rule."""
    patterns = compile_rules(rules)
    if not patterns or corpus.empty:
        return corpus.copy()

    def flagged(row) -> bool:
        texts = (str(row["prompt_text"]), str(row["reference_answer"]))
        return any(p.search(t) for p in patterns for t in texts)

    hit = corpus.apply(flagged, axis=1).astype(bool)
    return corpus[~hit].copy()


def difficulty_filter(corpus: pd.DataFrame, lo: float = 0.0, hi: float = 1.0) -> pd.DataFrame:
    """Keep samples with lo < pass_rate < hi."""
    if not 0.0 <= lo < hi <= 1.0:
        raise ContractViolation(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    if corpus.empty:
        return corpus.copy()
    _require(corpus, "pass_rate")
    rates = corpus["pass_rate"]
    return corpus[(rates > lo) & (rates < hi)].copy()


def reweight(corpus: pd.DataFrame, targets: Dict[str, float]) -> Dict[str, float]:
    """
    weight(sample) = target(category) / count(category).

    Targets for categories absent from the corpus are dropped and the rest
    renormalized, so the weights always sum to 1.
    """
    if corpus.empty:
        return {}
    if any(v <= 0 for v in targets.values()):
        raise ContractViolation("category targets must be positive")
    if abs(sum(targets.values()) - 1.0) > 1e-9:
        raise ContractViolation(f"category targets must sum to 1, got {sum(targets.values())}")

    counts = corpus["category"].astype(str).value_counts()
    uncovered = sorted(set(counts.index) - set(targets))
    if uncovered:
        raise ContractViolation(f"no target weight for categories {uncovered}")
    absent = sorted(set(targets) - set(counts.index))
    if absent:
        logger.warning("targets name categories absent from the corpus: %s; renormalizing", absent)
    mass = sum(targets[c] for c in counts.index)

    return {
        str(sid): targets[str(cat)] / mass / counts[str(cat)]
        for sid, cat in zip(corpus["sample_id"], corpus["category"])
    }


def _as_task(row) -> TaskInstance:
    return TaskInstance(
        task_id=str(row["sample_id"]),
        family=str(row.get("family", "EXTERNAL")).upper(),
        prompt_text=str(row["prompt_text"]),
        prompt_tokens=(),
        reference_answer=str(row["reference_answer"]),
        difficulty=int(row["difficulty"]),
        category=str(row["category"]),
    )


def proxy_losses(corpus: pd.DataFrame, params: ParamsLike) -> np.ndarray:
    """-log pi(boxed reference | prompt) under `params`, scored token by token with the reference as context."""
    vocab: Vocabulary = params.vocab
    encoder = params.encoder
    if encoder is None:
        raise ContractViolation("proxy losses need parameters with a feature encoder")
    losses = []
    for _, row in corpus.iterrows():
        task = _as_task(row)
        actions = np.asarray(vocab.encode_answer(task.reference_answer), dtype=np.int64)
        prevs = np.concatenate([[int(vocab.query_id)], actions[:-1]])
        idx, val = encoder.encode_batch(np.full(len(actions), task.prompt_key), np.arange(len(actions)), prevs)
        logp, _ = batch_logprobs(params, idx, val, actions)
        losses.append(float(-logp.sum()))
    return np.asarray(losses)


def annotate_pass_rates(corpus: pd.DataFrame, policy, k: int = 8, seed: int = 0,
                        max_len: int = 32) -> pd.DataFrame:
    """Fill pass_rate by sampling k responses per sample; each sample owns a child stream."""
    out = corpus.copy()
    streams = child_rngs(seeded_rng(seed, "curation/pass_rate"), len(out))
    out["pass_rate"] = [
        pass_rate(policy, _as_task(row), k, rng, max_len=max_len)
        for (_, row), rng in zip(out.iterrows(), streams)
    ]
    return out


@dataclass
class StageResult:
    stage: str
    count_in: int
    kept: int
    removed: int
    removed_ids: List[str] = field(default_factory=list)


@dataclass
class CurationReport:
    stages: List[StageResult] = field(default_factory=list)
    category_weights: Dict[str, float] = field(default_factory=dict)
    difficulty_in: Dict[str, int] = field(default_factory=dict)
    difficulty_out: Dict[str, int] = field(default_factory=dict)

    def record(self, stage: str, before: pd.DataFrame, after: pd.DataFrame) -> StageResult:
        kept_ids = set(after["sample_id"].astype(str))
        removed = [s for s in before["sample_id"].astype(str) if s not in kept_ids]
        result = StageResult(stage, len(before), len(after), len(removed), removed)
        if result.count_in != result.kept + result.removed:
            raise ContractViolation(f"stage {stage} lost track of samples")
        self.stages.append(result)
        return result

    def to_dict(self) -> Dict:
        return {
            "stages": [asdict(s) for s in self.stages],
            "category_weights": self.category_weights,
            "difficulty_in": self.difficulty_in,
            "difficulty_out": self.difficulty_out,
        }


def _difficulty_counts(corpus: pd.DataFrame) -> Dict[str, int]:
    counts = corpus["difficulty"].astype(int).value_counts().sort_index()
    return {str(k): int(v) for k, v in counts.items()}


class CurationAgent:
    """
    Agent responsible for curating prompt-answer corpora before RL.
    Stages run in a fixed order: loss -> pattern -> difficulty, then reweighting.
    """

    def __init__(self, corpus_path: str, loss_quantile: Optional[float] = None,
                 rules: Optional[Sequence[str]] = None, difficulty_bounds: Optional[Tuple[float, float]] = None,
                 category_targets: Optional[Dict[str, float]] = None, verbose: bool = True):
        """
        Initialize the Curation Agent.

        Args:
            corpus_path: Corpus JSONL (taskgen export schema plus proxy_loss/pass_rate)
            loss_quantile: Run loss_filter at this quantile when set
            rules: Run pattern_filter with these rules when set (empty list is a no-op stage)
            difficulty_bounds: Run difficulty_filter with (lo, hi) when set
            category_targets: Compute category weights when set
        """
        self.corpus_path = corpus_path
        self.loss_quantile = loss_quantile
        self.rules = rules
        self.difficulty_bounds = difficulty_bounds
        self.category_targets = category_targets
        self.verbose = verbose
        self.raw_corpus: Optional[pd.DataFrame] = None
        self.curated: Optional[pd.DataFrame] = None
        self.weights: Dict[str, float] = {}
        self.report = CurationReport()

    def _say(self, message: str):
        if self.verbose:
            print(message)

    def load(self) -> pd.DataFrame:
        self._say("📥 Loading corpus ...")
        self.raw_corpus = load_corpus(self.corpus_path)
        self._say(f"✅ Loaded {len(self.raw_corpus)} samples")
        return self.raw_corpus

    def _stage(self, name: str, corpus: pd.DataFrame, fn, *args) -> pd.DataFrame:
        kept = fn(corpus, *args)
        result = self.report.record(name, corpus, kept)
        self._say(f"🔧 {name}: kept {result.kept} of {result.count_in} (removed {result.removed})")
        logger.info("curation stage %s: %d -> %d", name, result.count_in, result.kept)
        return kept

    def run(self) -> Tuple[pd.DataFrame, CurationReport]:
        self._say("🚀 Starting Data Curation Agent...")
        self._say("=" * 60)
        corpus = self.raw_corpus if self.raw_corpus is not None else self.load()
        self.report.difficulty_in = _difficulty_counts(corpus)

        if self.loss_quantile is not None:
            corpus = self._stage("loss_filter", corpus, loss_filter, self.loss_quantile)
        if self.rules is not None:
            corpus = self._stage("pattern_filter", corpus, pattern_filter, list(self.rules))
        if self.difficulty_bounds is not None:
            corpus = self._stage("difficulty_filter", corpus, difficulty_filter, *self.difficulty_bounds)
        if self.category_targets:
            self.weights = reweight(corpus, self.category_targets)
            per_category = {}
            for sid, cat in zip(corpus["sample_id"].astype(str), corpus["category"].astype(str)):
                per_category[cat] = self.weights[sid]
            self.report.category_weights = dict(sorted(per_category.items()))

        self.curated = corpus.reset_index(drop=True)
        self.report.difficulty_out = _difficulty_counts(self.curated)

        self._say("\n" + "=" * 60)
        self._say("✅ DATA CURATION COMPLETE")
        self._say("=" * 60)
        self._say(f"📊 {len(self.raw_corpus)} samples in, {len(self.curated)} kept")
        return self.curated, self.report

    def save(self, output_path: str, report_path: Optional[str] = None) -> Dict[str, str]:
        if self.curated is None:
            raise ContractViolation("nothing curated yet; call run() first")
        out = self.curated.copy()
        if self.weights:
            out["weight"] = out["sample_id"].astype(str).map(self.weights)
        paths = {"corpus": save_corpus(out, output_path)}
        report_path = report_path or str(Path(output_path).with_suffix(".report.json"))
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(self.report.to_dict(), f, indent=2)
        paths["report"] = report_path
        self._say(f"💾 Curated corpus saved to: {output_path}")
        self._say(f"💾 Curation report saved to: {report_path}")
        return paths
