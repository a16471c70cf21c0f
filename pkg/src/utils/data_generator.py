import pandas as pd
import numpy as np
from faker import Faker
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from src.agents.behavior_analyzer import DEFAULT_PHRASES, BehaviorKind
from src.rl.taskgen import TaskFamily, generate_tasks
from src.utils.rng import seeded_rng

# Filler vocabulary for synthetic traces. None of these words occur in a
# behavior phrase, so filler can never produce a detection on its own.
FILLER_WORDS = (
    "angle", "area", "triangle", "segment", "value", "ratio", "sum", "term",
    "digit", "product", "circle", "radius", "equals", "gives", "yields",
    "hence", "so", "thus", "side", "length", "number", "integer", "parity",
    "remainder", "modulo", "fraction", "denominator", "numerator", "slope",
    "vertex", "edge", "graph", "column", "row", "grid", "label", "count",
)

DEFAULT_BEHAVIOR_RATES: Dict[BehaviorKind, float] = {
    BehaviorKind.BACKTRACKING: 0.40,
    BehaviorKind.VERIFICATION: 0.35,
    BehaviorKind.SUBGOAL_SETTING: 0.50,
    BehaviorKind.BACKWARD_CHAINING: 0.15,
    BehaviorKind.VISUAL_REFLECTION: 0.20,
    BehaviorKind.DIVIDE_AND_CONQUER: 0.10,
    BehaviorKind.VISUAL_VERIFICATION: 0.05,
    BehaviorKind.GOAL_DRIVEN_TRACING: 0.05,
}

PROOF_TEMPLATES = (
    "Prove that the {a} of every {b} is even.",
    "Show that no {a} divides the {b}.",
)


def faker_seed(seed: int, stream: str) -> int:
    """Faker seed drawn from the (seed, stream) random stream."""
    return int(seeded_rng(seed, stream).integers(0, 2**31 - 1))


class TaskCorpusGenerator:
    """
    Generates synthetic verifiable task corpora from the registered task
    families, plus curation corpora with proxy losses, pass rates and a share
    of proof-style prompts the verifier cannot grade.
    """
    def __init__(self, seed: int = 0, families: Sequence[str] = ("ADD",), difficulty: int = 1):
        """Initialize generator with a seed and the families to draw from."""
        self.seed = seed
        self.families = list(families)
        self.difficulty = difficulty
        self.fake = Faker()
        self.fake.seed_instance(faker_seed(seed, "data/faker"))

    def generate_tasks(self, n: int) -> pd.DataFrame:
        """n task records in the taskgen export schema."""
        tasks = generate_tasks(self.families, self.difficulty, n, seeded_rng(self.seed, "data/tasks"))
        return pd.DataFrame([t.to_record() for t in tasks])

    def generate_curation_corpus(self, n: int, proof_share: float = 0.1) -> pd.DataFrame:
        """
        Task records with sample_id, proxy_loss and pass_rate columns.

        Pass rates are drawn from {0, 0.25, 0.5, 0.75, 1} so the difficulty
        filter has both trivial and infeasible samples to drop.
        """
        rng = seeded_rng(self.seed, "data/curation")
        df = self.generate_tasks(n).rename(columns={"task_id": "sample_id"})

        proof = rng.random(n) < proof_share
        for i in np.flatnonzero(proof):
            template = PROOF_TEMPLATES[int(rng.integers(len(PROOF_TEMPLATES)))]
            df.loc[i, "prompt_text"] = template.format(a=self.fake.word(ext_word_list=FILLER_WORDS),
                                                       b=self.fake.word(ext_word_list=FILLER_WORDS))
            df.loc[i, "category"] = "proof"

        df["proxy_loss"] = np.round(rng.gamma(shape=2.0, scale=1.5, size=n), 6)
        df["pass_rate"] = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)
        return df

    def save_jsonl(self, df: pd.DataFrame, path: str) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        df.to_json(path, orient="records", lines=True, force_ascii=False)
        print(f"✅ Data saved to: {path}")
        return str(path)


class TraceCorpusGenerator:
    """
    Generates synthetic reasoning traces with behavior phrases injected at
    known per-kind rates. The injected labels are the ground truth a
    detector should reproduce.

    Includes realistic patterns:
    - Several training stages with rising behavior rates
    - Image-grounded and text-only traces (visual phrases appear in both)
    """
    def __init__(self, seed: int = 0, rates: Optional[Dict[BehaviorKind, float]] = None,
                 stages: Sequence[str] = ("cold_start_step_100", "rl_step_500")):
        self.seed = seed
        self.rates = dict(rates or DEFAULT_BEHAVIOR_RATES)
        self.stages = list(stages)
        self.fake = Faker()
        self.fake.seed_instance(faker_seed(seed, "data/faker/traces"))

    def _filler(self, rng: np.random.Generator) -> str:
        n = int(rng.integers(1, 4))
        return " ".join(self.fake.sentence(nb_words=6, ext_word_list=FILLER_WORDS) for _ in range(n))

    def _stage_multiplier(self, stage_index: int) -> float:
        # later stages show each behavior more often
        if len(self.stages) <= 1:
            return 1.0
        return 0.6 + 0.8 * stage_index / (len(self.stages) - 1)

    def generate(self, n: int) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Return (traces, injected labels); labels have one row per (trace, kind)."""
        rng = seeded_rng(self.seed, "data/traces")
        traces, labels = [], []
        for i in range(n):
            stage_index = i * len(self.stages) // max(n, 1)
            multiplier = self._stage_multiplier(stage_index)
            sentences = [self._filler(rng)]
            for kind in BehaviorKind:
                present = bool(rng.random() < min(1.0, self.rates.get(kind, 0.0) * multiplier))
                if present:
                    phrases = DEFAULT_PHRASES[kind]
                    phrase = phrases[int(rng.integers(len(phrases)))]
                    sentences.append(f"{phrase[0].upper()}{phrase[1:]} {self._filler(rng)}")
                labels.append({"trace_id": f"t{i:04d}", "kind": kind.value, "verdict": present})
            order = rng.permutation(len(sentences))
            traces.append({
                "trace_id": f"t{i:04d}",
                "text": " ".join(sentences[j] for j in order),
                "source_stage": self.stages[stage_index],
                "has_image": bool(rng.random() < 0.5),
            })
        return pd.DataFrame(traces), pd.DataFrame(labels)

    def save_jsonl(self, df: pd.DataFrame, path: str) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        df.to_json(path, orient="records", lines=True, force_ascii=False)
        print(f"✅ Data saved to: {path}")
        return str(path)
