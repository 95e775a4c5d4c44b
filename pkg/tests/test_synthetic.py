import numpy as np
import pytest

from panodiag.findings import findings_from_text
from panodiag.imaging import mirror_in, mirror_region, Region
from panodiag.rewards import rubric_score
from panodiag.synthetic import (
    AnnotatedCase,
    CATEGORY_OFFSETS,
    InvalidConfig,
    InvalidSpec,
    Plant,
    SURVEY_QUESTION,
    SyntheticSpec,
    ToyConfig,
    case_from_json,
    case_to_json,
    generate_case,
    make_benchmark,
    read_cases,
    run_toy_grpo,
    scripted_policy,
    tooth_cells,
    write_cases,
)
from panodiag.teeth import contralateral
from panodiag.trajectory import MirrorIn, run_episode


def _pairs(findings):
    return sorted((f.category, f.tooth_ids) for f in findings)


# --- layout -------------------------------------------------------------------


def test_tooth_cells_covers_all_permanent_teeth():
    cells = tooth_cells()
    assert len(cells) == 32
    assert set(cells) == {f"{q}{p}" for q in range(1, 5) for p in range(1, 9)}


def test_tooth_cells_fit_and_are_disjoint():
    cells = tooth_cells()
    boxes = list(cells.values())
    for box in boxes:
        assert box.x1 >= 0 and box.y1 >= 0 and box.x2 <= 1024 and box.y2 <= 512
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            overlap_x = min(a.x2, b.x2) - max(a.x1, b.x1)
            overlap_y = min(a.y2, b.y2) - max(a.y1, b.y1)
            assert overlap_x <= 0 or overlap_y <= 0


def test_tooth_cells_are_mirror_symmetric():
    cells = tooth_cells()
    for code, box in cells.items():
        partner = cells[contralateral(code)]
        assert partner == mirror_region(box, 1024)


# --- generation ---------------------------------------------------------------


def test_zero_plant_case_is_exactly_symmetric():
    image, case = generate_case(SyntheticSpec(seed=11))
    assert np.array_equal(image.pixels, image.pixels[:, ::-1])
    assert case.findings == ()


def test_plant_shifts_cell_mean_by_exact_delta():
    plant = Plant("36", "carious lesion", -24)
    image, case = generate_case(SyntheticSpec(seed=5, plants=(plant,)))
    cells = case.tooth_boxes
    box, mirror = cells["36"], cells["46"]
    planted_mean = image.pixels[box.y1:box.y2, box.x1:box.x2].astype(int).mean()
    partner_mean = image.pixels[mirror.y1:mirror.y2, mirror.x1:mirror.x2].astype(int).mean()
    # the unplanted canvas is symmetric, so noise cancels exactly
    assert planted_mean - partner_mean == pytest.approx(-24.0, abs=1e-12)


def test_symmetric_plant_lands_on_both_teeth():
    plant = Plant("25", "implant", 60, symmetric=True)
    image, case = generate_case(SyntheticSpec(seed=9, plants=(plant,)))
    teeth = {f.tooth_ids[0] for f in case.findings}
    assert teeth == {"25", "15"}
    dual = mirror_in(image, case.tooth_boxes["25"], factor=1.0)
    assert int(np.abs(dual.difference()).max()) == 0


def test_generation_is_deterministic_per_seed():
    a, _ = generate_case(SyntheticSpec(seed=42))
    b, _ = generate_case(SyntheticSpec(seed=42))
    c, _ = generate_case(SyntheticSpec(seed=43))
    assert a == b
    assert a != c


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        Plant("95", "x", -10)
    with pytest.raises(InvalidSpec):
        Plant("36", "caries", 0)
    with pytest.raises(InvalidSpec):
        SyntheticSpec(seed=0, plants=(Plant("36", "a", 5), Plant("36", "b", 5)))
    with pytest.raises(InvalidSpec):
        SyntheticSpec(seed=0, noise_amplitude=61)


def test_symmetric_plant_blocks_partner_cell():
    with pytest.raises(InvalidSpec):
        SyntheticSpec(
            seed=0,
            plants=(Plant("36", "a", 5, symmetric=True), Plant("46", "b", 5)),
        )


def test_case_json_round_trip(tmp_path):
    plant = Plant("17", "root fragment", 30)
    _, case = generate_case(SyntheticSpec(seed=3, plants=(plant,)), case_id="rt")
    case = AnnotatedCase(
        case_id=case.case_id,
        width=case.width,
        height=case.height,
        findings=case.findings,
        tooth_boxes=case.tooth_boxes,
        image_ref="rt.png",
        provenance="unit-test",
    )
    rebuilt = case_from_json(case_to_json(case))
    assert rebuilt == case
    assert rebuilt.provenance == "unit-test"
    path = tmp_path / "cases.jsonl"
    assert write_cases(path, [case]) == 1
    assert read_cases(path) == [case]


def test_case_from_json_rejects_malformed():
    with pytest.raises(InvalidSpec):
        case_from_json({"case_id": "x"})


# --- scripted policies ----------------------------------------------------------


def _case_image(*plants, seed=101):
    return generate_case(SyntheticSpec(seed=seed, plants=tuple(plants)))


def test_finalize_now_answers_immediately():
    image, _ = _case_image()
    trajectory = run_episode(scripted_policy("finalize_now"), SURVEY_QUESTION, image)
    assert trajectory.rounds == 1 and trajectory.n_tool == 0
    assert findings_from_text(trajectory.final_answer) == []


def test_zoom_only_catches_strong_plants():
    image, case = _case_image(Plant("36", "bone resorption", -56))
    trajectory = run_episode(scripted_policy("zoom_only"), SURVEY_QUESTION, image)
    assert trajectory.n_tool == 1
    predicted = findings_from_text(trajectory.final_answer)
    assert rubric_score(predicted, list(case.findings)) == 1.0


def test_zoom_only_misses_subtle_asymmetry():
    image, case = _case_image(Plant("36", "carious lesion", -10))
    trajectory = run_episode(scripted_policy("zoom_only"), SURVEY_QUESTION, image)
    predicted = findings_from_text(trajectory.final_answer)
    assert predicted == []
    assert rubric_score(predicted, list(case.findings)) == 0.0


def test_zoom_mirror_catches_subtle_asymmetry_with_mirror_calls():
    image, case = _case_image(Plant("36", "carious lesion", -10))
    trajectory = run_episode(scripted_policy("zoom_mirror"), SURVEY_QUESTION, image)
    assert trajectory.n_tool >= 2  # the survey zoom plus at least one mirror
    assert any(isinstance(t.action, MirrorIn) for t in trajectory.turns)
    predicted = findings_from_text(trajectory.final_answer)
    assert rubric_score(predicted, list(case.findings)) == 1.0


def test_zoom_mirror_decodes_exact_offsets():
    image, case = _case_image(Plant("25", "root resorption", CATEGORY_OFFSETS["root resorption"]))
    trajectory = run_episode(scripted_policy("zoom_mirror"), SURVEY_QUESTION, image)
    predicted = findings_from_text(trajectory.final_answer)
    assert _pairs(predicted) == _pairs(case.findings)


def test_zoom_mirror_respects_max_mirrors():
    image, _ = _case_image(
        Plant("36", "carious lesion", -10),
        Plant("25", "carious lesion", -10),
        Plant("14", "root fragment", 10),
    )
    trajectory = run_episode(
        scripted_policy("zoom_mirror", max_mirrors=1), SURVEY_QUESTION, image, max_steps=8
    )
    mirrors = sum(1 for t in trajectory.turns if isinstance(t.action, MirrorIn))
    assert mirrors == 1


def test_scripted_policy_rejects_unknown_kind():
    with pytest.raises(ValueError):
        scripted_policy("telepathy")


# --- toy training loop -----------------------------------------------------------


def test_toy_config_validation():
    with pytest.raises(InvalidConfig):
        ToyConfig(group_size=1)
    with pytest.raises(InvalidConfig):
        ToyConfig(iterations=0)
    with pytest.raises(InvalidConfig):
        ToyConfig(healthy_cases=0, planted_cases=0)
    with pytest.raises(InvalidConfig):
        ToyConfig(step_size=0.0)


def test_toy_run_is_deterministic_and_csv_round_trips(tmp_path):
    config = ToyConfig(iterations=12, seed=7)
    log_a = run_toy_grpo(config)
    log_b = run_toy_grpo(config)
    assert log_a.rows == log_b.rows
    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    log_a.to_csv(path_a)
    log_b.to_csv(path_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    reloaded = type(log_a).from_csv(path_a)
    assert reloaded.rows == log_a.rows


def test_toy_iteration_zero_identical_with_and_without_bonus():
    with_diag = run_toy_grpo(ToyConfig(iterations=1, seed=3, with_diag_reward=True))
    without = run_toy_grpo(ToyConfig(iterations=1, seed=3, with_diag_reward=False))
    assert with_diag.rows[0] == without.rows[0]


def test_toy_final_property():
    log = run_toy_grpo(ToyConfig(iterations=2, seed=1))
    assert log.final.iteration == 1


# --- benchmark construction -------------------------------------------------------


def test_make_benchmark_shapes_and_difficulties():
    items, images, cases = make_benchmark(6, seed=2)
    assert [i.difficulty for i in items] == [
        "Simple", "Moderate", "Complex", "Simple", "Moderate", "Complex",
    ]
    assert len({i.item_id for i in items}) == 6
    assert set(images) == {i.image_ref for i in items}
    assert [c.case_id for c in cases] == [i.item_id for i in items]


def test_make_benchmark_never_plants_a_mirror_pair_twice():
    items, _, cases = make_benchmark(30, seed=8)
    for case in cases:
        teeth = [f.tooth_ids[0] for f in case.findings]
        normalized = {tuple(sorted((t, contralateral(t)))) for t in teeth}
        assert len(normalized) == len(teeth)


def test_make_benchmark_gt_answer_parses_to_gt_findings():
    items, _, _ = make_benchmark(9, seed=4)
    for item in items:
        assert _pairs(findings_from_text(item.gt_answer)) == _pairs(item.gt_findings)


def test_make_benchmark_is_solvable_by_the_contralateral_policy():
    items, images, _ = make_benchmark(4, seed=6)
    policy = scripted_policy("zoom_mirror")
    for item in items:
        trajectory = run_episode(policy, item.question, images[item.image_ref], max_steps=6)
        predicted = findings_from_text(trajectory.final_answer)
        assert rubric_score(predicted, list(item.gt_findings)) == 1.0


def test_make_benchmark_validates_count():
    with pytest.raises(InvalidSpec):
        make_benchmark(0, seed=1)
