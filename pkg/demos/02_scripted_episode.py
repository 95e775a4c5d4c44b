"""Drive the reference policy through a multi-turn episode and print the log."""

from panodiag.synthetic import Plant, SyntheticSpec, generate_case, scripted_policy
from panodiag.trajectory import run_episode, serialize_action, serialize_trajectory_line


def main() -> None:
    spec = SyntheticSpec(
        seed=7,
        width=512,
        height=256,
        plants=(Plant("25", "apical periodontitis", -11), Plant("44", "root fragment", 13)),
    )
    image, case = generate_case(spec, case_id="demo2")
    print("ground truth:")
    for finding in case.findings:
        print(f"  {finding}")

    trajectory = run_episode(
        scripted_policy("zoom_mirror"),
        "Inspect the radiograph and report every abnormality.",
        image,
        max_steps=6,
        query_id="demo2",
        image_ref="demo2.png",
    )

    print(f"\n{trajectory.rounds} rounds, {trajectory.n_tool} tool calls")
    for index, turn in enumerate(trajectory.turns, start=1):
        print(f"\nround {index}")
        print(f"  thought: {turn.thought}")
        print(f"  action:  {serialize_action(turn.action)}")
        for ref in turn.observation.refs:
            print(f"  saw:     {ref}")
    print(f"\nfinal answer: {trajectory.final_answer}")

    line = serialize_trajectory_line(trajectory)
    print(f"\nas one JSONL line ({len(line)} bytes):")
    print(line[:120] + ("..." if len(line) > 120 else ""))


if __name__ == "__main__":
    main()
