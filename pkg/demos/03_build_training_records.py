"""Turn annotated cases into multi-round training records.

The pipeline sorts findings into obvious, subtle, and bone-based groups,
clusters the tool-dependent ones into spatial proposals, picks a tool per
proposal, and writes one conversation per case. Obvious findings land in
round 1; everything that needs a closer look lands in a later round
alongside its tool call.
"""

import tempfile
from pathlib import Path

from panodiag.builder import build_training_record, export_records, import_records
from panodiag.synthetic import Plant, SyntheticSpec, generate_case, make_benchmark


def main() -> None:
    # One case with all three finding classes: the implant is visible at a
    # glance, the two lesions need a mirror pass, the resorption gets its
    # own bone-focused round.
    spec = SyntheticSpec(
        seed=5,
        width=512,
        height=256,
        plants=(
            Plant("11", "implant", 60),
            Plant("16", "carious lesion", -18),
            Plant("36", "apical periodontitis", -14),
            Plant("41", "bone resorption", -16),
        ),
    )
    image, case = generate_case(spec, case_id="mixed")
    record = build_training_record(image, case)

    print(f"case {record.case_id}: {record.rounds} rounds\n")
    for number, turn in enumerate(record.turns, start=1):
        print(f"round {number}")
        print(f"  Q: {turn.query}")
        print(f"  A: {turn.answer[:110]}{'...' if len(turn.answer) > 110 else ''}")
        print(f"  action: {turn.action}")
        for ref in turn.obs_refs:
            print(f"  view: {ref}")
        print()

    print("placements:")
    for placement in record.placements:
        pinned = ",".join(placement.finding.tooth_ids)
        print(
            f"  round {placement.round_no} [{placement.finding_class}] "
            f"{placement.finding.category} at {pinned}"
        )

    # Batch mode: everything make_benchmark produces exports losslessly.
    _, images, cases = make_benchmark(6, seed=20, width=512, height=256)
    records = [build_training_record(images[c.image_ref], c) for c in cases]
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "records.jsonl"
        count = export_records(records, out)
        back = import_records(out)
        print(f"\nexported {count} records, re-imported {len(back)}, lossless: {back == records}")


if __name__ == "__main__":
    main()
