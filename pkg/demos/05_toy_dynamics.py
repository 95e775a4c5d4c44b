"""Compare toy training dynamics with and without the gated bonus.

The miniature loop trains a softmax over three scripted arms (answer
immediately, zoom only, zoom plus mirror) with group-standardized
advantages. Run it twice, once per reward setting, and watch the tool
rate: the gated bonus holds it in a working band, the ablation lets it
collapse once the zoom arm's cheap wins dominate.
"""

from panodiag.synthetic import ToyConfig, run_toy_grpo


def show(label: str, log) -> None:
    print(f"\n{label}")
    print("  iter   score   tools/ep   tool rate")
    for row in log.rows:
        if row.iteration % 50 == 0 or row.iteration == len(log.rows) - 1:
            print(
                f"  {row.iteration:4d}   {row.mean_score:.3f}   {row.mean_n_tool:8.2f}"
                f"   {row.tool_rate:9.3f}"
            )


def main() -> None:
    with_bonus = run_toy_grpo(ToyConfig(iterations=300, with_diag_reward=True, seed=0))
    ablated = run_toy_grpo(ToyConfig(iterations=300, with_diag_reward=False, seed=0))

    show("gated bonus ON", with_bonus)
    show("gated bonus OFF", ablated)

    collapsed = sum(1 for row in ablated.rows if row.tool_rate < 0.05)
    spiked = sum(1 for row in ablated.rows if row.tool_rate > 0.95)
    print(f"\nablated run: {collapsed} collapse iterations, {spiked} spike iterations")
    print(
        f"final scores: {with_bonus.final.mean_score:.3f} with bonus, "
        f"{ablated.final.mean_score:.3f} without"
    )


if __name__ == "__main__":
    main()
