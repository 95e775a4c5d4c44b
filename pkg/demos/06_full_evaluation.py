"""Benchmark the scripted policies end to end with the local rule judge.

Two acts. On the standard generated benchmark every planted contrast is
strong enough for a plain intensity scan, so both tool-using policies ace
it and only the no-tool policy fails. Lowering the planted contrast below
the scan's detection threshold separates them: the mirror comparison
still finds every lesion, the zoom-only survey goes blind.
"""

from panodiag.evaluation import BenchmarkItem, LocalRuleJudge, evaluate
from panodiag.findings import render_report
from panodiag.synthetic import (
    Plant,
    SyntheticSpec,
    generate_case,
    make_benchmark,
    scripted_policy,
)


def report_line(kind: str, report) -> None:
    cv = f"{report.stability.cv_percent:.2f}%" if report.stability else "n/a"
    print(
        f"  {kind:12s} Avg@{report.runs}: {report.avg_at_k:5.1f}   "
        f"pass@1: {report.pass_at_1:5.1f}   stability cv: {cv}"
    )


def subtle_benchmark():
    """Eight cases with +-10 intensity plants, below the scan threshold."""
    teeth = ("36", "25", "16", "45", "34", "27", "44", "15")
    items, images = [], {}
    for i, tooth in enumerate(teeth):
        delta = -10 if i % 2 == 0 else 10
        category = "carious lesion" if delta < 0 else "root fragment"
        spec = SyntheticSpec(
            seed=400 + i, width=512, height=256, plants=(Plant(tooth, category, delta),)
        )
        image, case = generate_case(spec, case_id=f"subtle_{i}")
        ref = f"subtle_{i}.png"
        images[ref] = image
        items.append(
            BenchmarkItem(
                item_id=case.case_id,
                image_ref=ref,
                question="Report all abnormalities.",
                gt_answer=render_report(case.findings),
                gt_findings=case.findings,
            )
        )
    return items, images


def main() -> None:
    judge = LocalRuleJudge()

    items, images, _ = make_benchmark(10, seed=99, width=512, height=256)
    print("standard benchmark (10 items, 3 runs each)")
    for kind in ("zoom_mirror", "zoom_only", "finalize_now"):
        report = evaluate(
            scripted_policy(kind), items, judge, runs=3, image_loader=lambda ref: images[ref]
        )
        report_line(kind, report)

    items, images = subtle_benchmark()
    print("\nsubtle benchmark (8 items, contrast below the scan threshold)")
    for kind in ("zoom_mirror", "zoom_only"):
        report = evaluate(
            scripted_policy(kind), items, judge, runs=3, image_loader=lambda ref: images[ref]
        )
        report_line(kind, report)


if __name__ == "__main__":
    main()
