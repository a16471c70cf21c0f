"""
Tests for the synthetic corpus generators
"""

import pandas as pd
from faker import Faker

from src.agents.behavior_analyzer import Trace, detect
from src.agents.data_curation import DEFAULT_RULES, pattern_filter
from src.utils.data_generator import TaskCorpusGenerator, TraceCorpusGenerator, faker_seed


def test_task_corpus_schema_and_reproducibility():
    a = TaskCorpusGenerator(seed=4, families=["ADD", "COPY"]).generate_tasks(30)
    b = TaskCorpusGenerator(seed=4, families=["ADD", "COPY"]).generate_tasks(30)
    pd.testing.assert_frame_equal(a, b)
    assert list(a.columns) == ["task_id", "family", "prompt_text", "reference_answer", "difficulty", "category"]
    assert set(a["family"]) <= {"ADD", "COPY"}


def test_curation_corpus_annotations():
    df = TaskCorpusGenerator(seed=1).generate_curation_corpus(200, proof_share=0.2)
    assert {"sample_id", "proxy_loss", "pass_rate"} <= set(df.columns)
    assert set(df["pass_rate"]) <= {0.0, 0.25, 0.5, 0.75, 1.0}
    assert (df["proxy_loss"] > 0).all()

    proofs = df["category"] == "proof"
    assert 0 < proofs.sum() < 200
    flagged = ~df["sample_id"].isin(pattern_filter(df, DEFAULT_RULES)["sample_id"])
    assert flagged.tolist() == proofs.tolist()


def test_injected_labels_match_detections():
    traces, labels = TraceCorpusGenerator(seed=7).generate(80)
    assert len(labels) == 80 * 8
    truth = {(r.trace_id, r.kind): bool(r.verdict) for r in labels.itertuples(index=False)}

    for row in traces.itertuples(index=False):
        found = {d.kind.value for d in detect(Trace(row.trace_id, row.text))}
        for (trace_id, kind), present in truth.items():
            if trace_id == row.trace_id:
                assert (kind in found) == present, (trace_id, kind, row.text)


def test_trace_corpus_is_reproducible_and_staged():
    a, _ = TraceCorpusGenerator(seed=2).generate(40)
    b, _ = TraceCorpusGenerator(seed=2).generate(40)
    pd.testing.assert_frame_equal(a, b)
    assert a["source_stage"].tolist() == ["cold_start_step_100"] * 20 + ["rl_step_500"] * 20
    assert a["has_image"].dtype == bool


def test_faker_is_seeded_from_a_derived_stream():
    assert faker_seed(3, "data/faker") == faker_seed(3, "data/faker")
    assert faker_seed(3, "data/faker") != faker_seed(3, "data/faker/traces")

    reference = Faker()
    reference.seed_instance(faker_seed(3, "data/faker"))
    generator = TaskCorpusGenerator(seed=3)
    assert [generator.fake.word() for _ in range(5)] == [reference.word() for _ in range(5)]
