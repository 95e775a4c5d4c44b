"""Walk through the pieces of the hybrid reward one at a time.

Three things are scored: how well the report matches the ground truth
(rubric), whether the response kept the required shape (format), and a
gated bonus that pays for correct answers that actually used a tool,
shrinking as a query's recent tool usage saturates.
"""

from panodiag.findings import Finding, findings_from_text
from panodiag.rewards import (
    ExplorationTracker,
    GateParams,
    RewardWeights,
    diag_reward,
    format_score,
    hybrid_reward,
    rubric_score,
)

TRUTH = [Finding("carious lesion", ("36",)), Finding("bone resorption", ("41", "42"))]

REPORTS = [
    ("exact", "Caries at tooth 36. Bone resorption at tooth 41. Bone resorption at tooth 42."),
    ("partial", "Caries at tooth 36."),
    ("wrong tooth", "Caries at tooth 46."),
    ("all clear", "no abnormalities detected."),
]


def main() -> None:
    print("rubric component")
    for label, text in REPORTS:
        value = rubric_score(findings_from_text(text), TRUTH)
        print(f"  {label:12s} -> {value:.1f}")

    print("\nformat component")
    good = "<Think>compare both sides first</Think>\nTOOL mirror_in 10 10 60 40"
    bad = "let me just answer: nothing to see"
    print(f"  tagged think + action -> {format_score(good):.1f}")
    print(f"  free-form prose       -> {format_score(bad):.1f}")

    # The gate: a correct, tool-using answer earns headroom that shrinks
    # as the tracker's window fills with tool-heavy episodes.
    print("\ndiagnostic bonus as the same query saturates")
    params = GateParams(threshold=0.5, scale=0.3, ceiling=2.0, window=8)
    tracker = ExplorationTracker(window=params.window, ceiling=params.ceiling)
    for episode, observed in enumerate((1, 1, 3, 3, 3, 3)):
        saturation = tracker.estimate("q1")
        bonus = diag_reward(0.9, n_tool=observed, saturation=saturation, params=params)
        print(
            f"  episode {episode}: recent usage {saturation:.2f} tools/run"
            f" -> bonus {bonus:.3f}"
        )
        tracker.observe("q1", observed)
    print("  an empty window counts as saturated, so run 0 never pays;")
    print("  light usage pays full headroom, heavy usage squeezes it back to zero")

    print("\nno bonus without a tool call, no matter how good the answer:")
    print(f"  diag_reward(0.9, n_tool=0, saturation=0.0) = {diag_reward(0.9, 0, 0.0, params)}")

    breakdown = hybrid_reward(0.8, 1.0, 0.45, RewardWeights(rubric=1.0, format=0.0, diagnostic=1.0))
    print(f"\ncombined: {breakdown}")


if __name__ == "__main__":
    main()
