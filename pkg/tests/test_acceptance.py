"""Acceptance criteria, one test per criterion.

Each test records a ``#k PASS|FAIL`` line that is printed in the terminal
summary, so a plain ``pytest`` run shows the criterion-level verdicts.
"""

from __future__ import annotations

import random
import string
from fractions import Fraction

import pytest
from conftest import ACCEPTANCE_LINES, FIXTURES, TraceBuilder, run_fixture

from wmalign import metrics
from wmalign.evaluation import EvalSpec, evaluate, load_eval_spec, random_task
from wmalign.mentions import classify_trace
from wmalign.policies import make_policy
from wmalign.report import analyze, compare
from wmalign.runner import load_condition, run_condition
from wmalign.scene import load_scene_file, random_scene
from wmalign.simulator import SimConfig, run_episode
from wmalign.trace import EventKind, read_trace


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"#{k} {'PASS' if ok else 'FAIL'}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


# 1 ---------------------------------------------------------------------------------


def test_01_golden_information_novelty():
    trace = read_trace(FIXTURES / "traces" / "golden_dialogue.jsonl")
    rows = {r.t: r for r in metrics.message_table(trace)}
    a, b = rows[2724], rows[2727]
    ok = (
        (a.mentions, a.only_sender, a.novelty) == (4, 2, Fraction(1, 2))
        and (b.mentions, b.only_sender, b.novelty) == (3, 2, Fraction(2, 3))
    )
    record(1, ok, f"IN(t=2724)={a.novelty} (want 1/2), IN(t=2727)={b.novelty} (want 2/3)")


# 2 ---------------------------------------------------------------------------------


def test_02_silent_identity():
    snapshots = bad = 0
    for seed in range(50):
        scene = random_scene(seed)
        task = random_task(scene, seed)
        pair = ["silent_explorer", "random_agent"] if seed % 2 else ["random_agent", "random_agent"]
        tr = run_episode(scene, SimConfig("silent", scene.rooms[:2], budget=40, seed=seed),
                         [make_policy(p) for p in pair], task, f"s{seed}")
        for p in metrics.trajectories(tr):
            snapshots += 1
            if p.bc != p.oc or p.delta_align != 0 or p.delta_align_grounded != 0:
                bad += 1
    record(2, bad == 0 and snapshots > 0, f"{snapshots} silent snapshots, {bad} with BC != OC")


# 3 ---------------------------------------------------------------------------------


def _tokens_oracle(text: str) -> list[str]:
    """Handle tokens found without regular expressions."""
    word = set(string.ascii_letters + string.digits + "_")
    tokens, cur = [], []
    for ch in text + " ":
        if ch in word:
            cur.append(ch)
        elif cur:
            tokens.append("".join(cur))
            cur = []
    out = []
    lower = set(string.ascii_lowercase + string.digits)
    for tok in tokens:
        parts = tok.split("_")
        if (
            len(parts) >= 2
            and tok[0] in string.ascii_lowercase
            and all(parts)
            and all(set(p) <= lower for p in parts)
            and parts[-1].isdigit()
            and tok not in out
        ):
            out.append(tok)
    return out


def _brute_force_counts(trace) -> dict[str, int]:
    """Re-derive observation sets from observation events alone and classify every mention."""
    seen = [set(), set()]
    counts = {"both": 0, "only_sender": 0, "only_receiver": 0, "neither": 0}
    for e in trace.events:
        if e.kind is EventKind.OBSERVATION:
            seen[e.agent].update(e.payload.get("new", ()))
        elif e.kind is EventKind.MESSAGE_SENT:
            s = e.agent
            for h in _tokens_oracle(e.payload["text"]):
                in_s, in_r = h in seen[s], h in seen[1 - s]
                key = "both" if in_s and in_r else "only_sender" if in_s else "only_receiver" if in_r else "neither"
                counts[key] += 1
    counts["total"] = sum(counts.values())
    return counts


def test_03_four_way_partition():
    mismatches, mentions, messaging = [], 0, 0
    for seed in range(100):
        scene = random_scene(1000 + seed)
        task = random_task(scene, seed)
        arch = "SC" if seed % 2 else "ACF"
        policies = [make_policy({"name": "random_agent", "params": {"p_message": 0.5, "p_phantom": 0.4}})
                    for _ in range(2)]
        tr = run_episode(scene, SimConfig(arch, scene.rooms[:2], budget=30, seed=seed), policies, task, f"m{seed}")
        counts = classify_trace(tr).as_dict()
        parts = counts["both"] + counts["only_sender"] + counts["only_receiver"] + counts["neither"]
        if parts != counts["total"] or counts != _brute_force_counts(tr):
            mismatches.append(seed)
        mentions += counts["total"]
        messaging += bool(tr.messages())
    record(3, not mismatches and messaging >= 90 and mentions > 0,
           f"{messaging}/100 episodes with messages, {mentions} mentions, mismatching episodes: {mismatches}")


# 4 ---------------------------------------------------------------------------------


def test_04_hallucination_cancels_alignment():
    tr = run_fixture("two_room", "two_room", ["hallucinating_messenger", "silent_explorer"], "SC")
    end = metrics.trajectories(tr)[-1]
    ok = end.delta_align < 0 and end.delta_align_grounded >= 0
    record(4, ok, f"end-of-episode pooled delta={end.delta_align}, grounded delta={end.delta_align_grounded}")


# 5 ---------------------------------------------------------------------------------


def _bsm_fixture(text: str):
    b = TraceBuilder()
    b.view({"apple_1", "bowl_2", "cup_3", "dish_4"}, {"cup_3", "dish_4", "egg_5"})
    b.say(0, text)
    return b.finish()


def _uniform_random_trace(seed: int, target_mentions: int):
    rng = random.Random(seed)
    universe = [f"item_{i}" for i in range(40)]
    b = TraceBuilder()
    total = 0
    while total < target_mentions:
        vs = set(rng.sample(universe, rng.randint(2, 12)))
        vr = set(rng.sample(universe, rng.randint(0, 12)))
        b.view(vs, vr)
        mu = rng.sample(sorted(vs), rng.randint(1, min(3, len(vs))))
        b.say(0, "[STATUS] " + " ".join(mu), deliver=False)
        total += len(mu)
    return b.finish(), total


def test_05_bsm_oracle():
    novel = metrics.bsm(_bsm_fixture("[STATUS] apple_1 and bowl_2 are here")).pooled
    common = metrics.bsm(_bsm_fixture("[PLAN] meet at cup_3 by dish_4")).pooled
    trace, n = _uniform_random_trace(7, 10_000)
    uniform = metrics.bsm(trace).pooled
    ok = novel == Fraction(1, 2) and common == Fraction(-1, 2) and abs(float(uniform)) < 0.05
    record(5, ok, f"novel-only={novel} (want 1/2), common-ground={common} (want -1/2), "
                  f"uniform over {n} mentions={float(uniform):+.4f} (want |x|<0.05)")


# 6 ---------------------------------------------------------------------------------


def half_matching_trace():
    b = TraceBuilder(architecture="silent")
    b.view({"kitchen_1"}, {"kitchen_1"})
    plan = [
        (("Navigate", "table_1"), ("Navigate", "table_1")),
        (("Pick", "cup_2"), ("Pick", "cup_2")),
        (("Open", "fridge_0"), ("Open", "fridge_0")),
        (("Explore", "bedroom_0"), ("Explore", "bedroom_0")),
        (("Wait", None), ("Wait", None)),
        (("Navigate", "table_1"), ("Navigate", "sofa_1")),
        (("Pick", "cup_2"), ("Place", "cup_2")),
        (("Done", None), ("Done", None)),
    ]
    for a0, a1 in plan:
        b.next_round()
        b.act(0, "FindObject", "cup", cost=0)
        b.act(0, *a0)
        b.act(1, *a1)
    b.next_round()
    b.act(0, "Navigate", "table_1")  # only one agent acts: not a joint round
    return b.finish()


def test_06_conflict_extremes():
    mirror = metrics.conflict_rate(run_fixture("two_room", "two_room", ["mirror", "mirror"], "silent"))
    split = metrics.conflict_rate(
        run_fixture("two_room", "two_room", ["disjoint_splitter", "disjoint_splitter"], "silent")
    )
    half = metrics.conflict_rate(half_matching_trace())
    ok = mirror.rate == 1 and split.rate == 0 and half.rate == Fraction(1, 2) and half.joint_rounds == 8
    record(6, ok, f"mirror={mirror.rate}, disjoint={split.rate}, half-matching={half.rate} "
                  f"over {half.joint_rounds} joint rounds")


# 7 ---------------------------------------------------------------------------------


def pineapple_trace(in_order: bool):
    scene = load_scene_file(FIXTURES / "scenes" / "two_room.json")
    spec = load_eval_spec(FIXTURES / "tasks" / "two_room.json")
    b = TraceBuilder(architecture="silent")
    b.trace.header.update({"scene": scene.to_document(), "eval": spec.to_document()})
    b.view({"kitchen_1"}, {"living_room_0"})
    next_to = [["is_next_to", "toy_pineapple_0", "toy_food_1"]]
    on_counter = [["is_on", "toy_pineapple_0", "counter_68"]]
    on_shelves = [["is_on", "toy_pineapple_0", "shelves_1"]]
    food_shelves = [["is_on", "toy_food_1", "shelves_1"]]
    food_counter = [["is_on", "toy_food_1", "counter_68"]]

    def change(t, added, removed):
        b.t = t
        b.emit(EventKind.ACTION, 0, tool="Rearrange", args=[], target=added[0][1], cost=1,
               facts_added=added, facts_removed=removed)

    if in_order:
        change(10, next_to, [])
        change(20, on_shelves + food_shelves, on_counter + food_counter)
    else:
        change(10, on_shelves, on_counter + next_to)
        change(20, next_to + food_shelves, food_counter)
    b.t = 21
    return b.finish(), spec


def test_07_temporal_constraint():
    good = evaluate(*pineapple_trace(True))
    bad = evaluate(*pineapple_trace(False))
    ok = (good.pc, good.sr, good.tau) == (1, 1, (10, 20)) and (bad.pc, bad.sr, bad.tau) == (Fraction(1, 2), 0, (20, 10))
    record(7, ok, f"in-order PC={good.pc} SR={good.sr}; out-of-order PC={bad.pc} SR={bad.sr}")


# 8 ---------------------------------------------------------------------------------


def _free_calls_cost(trace) -> tuple[int, int]:
    free = [e for e in trace.of_kind(EventKind.ACTION, EventKind.ACTION_FAILURE)
            if e.payload["tool"] in ("ReadMessages", "FindObject", "FindReceptacle", "FindRoom", "FindAgent")]
    return len(free), sum(e.payload["cost"] for e in free)


def test_08_step_accounting():
    problems = []
    free_calls = 0
    traces = [
        ("SC", run_fixture("two_room", "two_room", ["novel_messenger", "silent_explorer"], "SC")),
        ("ACF", run_fixture("three_room", "three_room", ["acf_repeater", "silent_explorer"], "ACF")),
    ]
    for seed in range(12):
        scene = random_scene(seed)
        arch = "SC" if seed % 2 else "ACF"
        pol = [make_policy({"name": "random_agent", "params": {"p_message": 0.4}}) for _ in range(2)]
        traces.append((arch, run_episode(scene, SimConfig(arch, scene.rooms[:2], budget=40, seed=seed),
                                         pol, random_task(scene, seed), f"a{seed}")))
    for arch, tr in traces:
        comm = metrics.communication_steps(tr)
        sends = sum(1 for e in tr.of_kind(EventKind.ACTION) if e.payload["tool"] == "SendMessage")
        n_free, free_cost = _free_calls_cost(tr)
        free_calls += n_free
        if arch == "SC" and comm != len(tr.messages()) or arch == "SC" and comm != sends:
            problems.append(f"{tr.episode_id}: SC comm steps {comm} vs {len(tr.messages())} messages")
        if arch == "ACF" and comm != 0:
            problems.append(f"{tr.episode_id}: ACF comm steps {comm}")
        if free_cost != 0:
            problems.append(f"{tr.episode_id}: free calls charged {free_cost}")
        if metrics.charged_steps(tr) != tr.events[-1].t:
            problems.append(f"{tr.episode_id}: charged steps disagree with the final step counter")
    record(8, not problems and free_calls > 0,
           f"{len(traces)} traces, {free_calls} perception/read calls; problems: {problems or 'none'}")


# 9 ---------------------------------------------------------------------------------


def test_09_premature_termination():
    dialogue = run_fixture("two_room", "two_room", ["hallucinating_messenger", "premature_confirmer"], "SC")
    silent = run_fixture("two_room", "two_room", ["silent_explorer", "silent_explorer"], "silent")
    d, s = evaluate(dialogue), evaluate(silent)
    ok = dialogue.status.value == "done" and d.sr == 0 and silent.status.value == "done" and s.sr == 1
    record(9, ok, f"dialogue: {dialogue.status.value} SR={d.sr}; silent counterpart: {silent.status.value} SR={s.sr}")


# 10 --------------------------------------------------------------------------------


def test_10_determinism_and_round_trip(tmp_path):
    problems = []
    for name in ("silent", "sc_hallucination", "random_sc"):
        cond = load_condition(FIXTURES / "conditions" / f"{name}.json")
        first = run_condition(cond, tmp_path / "a", workers=1, seed=5)
        second = run_condition(cond, tmp_path / "b", workers=2, seed=5)
        for pa, pb in zip(first.paths, second.paths):
            if pa.read_bytes() != pb.read_bytes():
                problems.append(f"rerun differs: {pa.name}")
            if read_trace(pa).dumps().encode() != pa.read_bytes():
                problems.append(f"round trip differs: {pa.name}")
    golden = FIXTURES / "traces" / "golden_dialogue.jsonl"
    if read_trace(golden).dumps().encode() != golden.read_bytes():
        problems.append("round trip differs: golden trace")
    record(10, not problems, f"byte-identical reruns and round trips; problems: {problems or 'none'}")


# 11 --------------------------------------------------------------------------------


def test_11_paired_delta_protocol(tmp_path):
    a_traces = run_condition(load_condition(FIXTURES / "conditions" / "paired_silent.json")).traces
    b_traces = run_condition(load_condition(FIXTURES / "conditions" / "paired_sc.json")).traces
    b_traces = [t for t in b_traces if t.episode_id != "p4"]  # missing under B
    b_traces = [t for t in b_traces if t.episode_id != "p5"]
    scene = load_scene_file(FIXTURES / "scenes" / "three_room.json")
    stalled = run_episode(
        scene, SimConfig("SC", ("kitchen_1", "pantry_0"), budget=200, condition="paired_sc"),
        [make_policy("mirror"), make_policy("mirror")],
        EvalSpec.from_document(a_traces[-1].header["eval"]), "p5",
    )
    assert stalled.status.value == "stalled"
    b_traces.append(stalled)

    bundle_a, bundle_b = analyze(a_traces), analyze(b_traces)
    ab, ba = compare(bundle_a, bundle_b), compare(bundle_b, bundle_a)
    ids = ["p0", "p1", "p2", "p3"]
    sr_a = [r["sr"] for r in bundle_a.table("episode") if r["episode_id"] in ids]
    sr_b = [r["sr"] for r in bundle_b.table("episode") if r["episode_id"] in ids]
    ok = (
        ab["episode_ids"] == ids
        and ba["episode_ids"] == ids
        and ab["n"] == 4
        and ab["delta_sr"] == pytest.approx(sum(sr_a) / 4 - sum(sr_b) / 4)
        and ab["delta_sr"] == pytest.approx(-ba["delta_sr"])
        and ab["delta_pc"] == pytest.approx(-ba["delta_pc"])
    )
    record(11, ok, f"A-vs-B ids={ab['episode_ids']}, B-vs-A ids={ba['episode_ids']}, delta SR={ab['delta_sr']}")
