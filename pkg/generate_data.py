"""
Script to generate synthetic corpora for ReasonIQ.
Writes a task corpus, a curation corpus and a reasoning-trace corpus with
the injected behavior labels.
"""

import argparse

from src.utils.data_generator import TaskCorpusGenerator, TraceCorpusGenerator


def main():
    parser = argparse.ArgumentParser(description="Generate ReasonIQ demo corpora")
    parser.add_argument("--out-dir", default="data")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--families", nargs="+", default=["ADD", "SUB", "COPY", "COMPARE"])
    parser.add_argument("--tasks", type=int, default=500)
    parser.add_argument("--traces", type=int, default=200)
    args = parser.parse_args()

    print("🚀 Starting ReasonIQ Data Generation...")
    print("=" * 60)

    tasks = TaskCorpusGenerator(seed=args.seed, families=args.families)

    print("\n📊 Generating task corpus...")
    task_df = tasks.generate_tasks(args.tasks)
    tasks.save_jsonl(task_df, f"{args.out_dir}/tasks.jsonl")
    print(f"Families: {task_df['family'].value_counts().to_dict()}")

    print("\n📊 Generating curation corpus...")
    curation_df = tasks.generate_curation_corpus(args.tasks)
    tasks.save_jsonl(curation_df, f"{args.out_dir}/curation_corpus.jsonl")
    print(f"Categories: {curation_df['category'].value_counts().to_dict()}")

    print("\n📊 Generating reasoning traces...")
    traces = TraceCorpusGenerator(seed=args.seed)
    trace_df, label_df = traces.generate(args.traces)
    traces.save_jsonl(trace_df, f"{args.out_dir}/traces.jsonl")
    traces.save_jsonl(label_df, f"{args.out_dir}/trace_labels.jsonl")

    print("\n📈 INJECTED BEHAVIOR RATES")
    print("-" * 60)
    print(label_df.groupby("kind")["verdict"].mean().round(3))

    print("\n✅ DATA GENERATION COMPLETE!")
    print("=" * 60)
    print(f"\n📁 Your data is ready in: {args.out_dir}/")
    print("🎯 Next step: python run_reasoniq.py train\n")

if __name__ == "__main__":
    main()
