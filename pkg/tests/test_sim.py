"""Workload simulator: determinism, fault effects, ground truth, random trees."""

from __future__ import annotations

import json

import pytest

from xray.devlog import decode_dev_log
from xray.hosttrace import parse_host_trace
from xray.model import NodeKind, Protocol, node_count_by_kind, tree_to_dict, validate_tree
from xray.sim import (
    ANCHOR_FUNCTIONS,
    DEFAULT_DEVICE_OFFSET_NS,
    ScaleParams,
    SimConfig,
    SimConfigError,
    WorkloadOp,
    config_from_dict,
    config_from_file,
    generate_random_tree,
    scenario_broken_barrier,
    scenario_isize_update,
    scenario_trim_misdirect,
    simulate,
)

from conftest import run_pipeline


# ------------------------------------------------------------- determinism


def test_simulation_is_deterministic() -> None:
    config = scenario_broken_barrier()
    a, b = simulate(config), simulate(config)
    assert a.host_text == b.host_text
    assert a.dev_text == b.dev_text
    assert a.ground_truth.to_dict() == b.ground_truth.to_dict()


def test_seed_changes_timings_but_not_structure() -> None:
    base = simulate(scenario_broken_barrier(seed=7))
    other = simulate(scenario_broken_barrier(seed=8))
    assert base.host_text != other.host_text
    assert base.ground_truth.node_counts == other.ground_truth.node_counts
    assert base.ground_truth.rule_counts == other.ground_truth.rule_counts


# ------------------------------------------------------------ fault effects


def test_broken_barrier_omits_flush_everywhere() -> None:
    faulty = simulate(scenario_broken_barrier(faulty=True))
    clean = simulate(scenario_broken_barrier(faulty=False))

    assert "blkdev_issue_flush" not in faulty.host_text
    assert "blkdev_issue_flush" in clean.host_text

    faulty_names = [c.name for c in decode_dev_log(faulty.dev_text)]
    clean_names = [c.name for c in decode_dev_log(clean.dev_text)]
    assert "SYNCHRONIZE_CACHE" not in faulty_names
    # The fault-free device log ends with the writeback then the barrier.
    assert clean_names[-2:] == ["WRITE_10", "SYNCHRONIZE_CACHE"]
    assert faulty.ground_truth.divergence_roots == ["blkdev_fsync"]
    assert clean.ground_truth.divergence_roots == []


def test_isize_bug_omits_journal_commit() -> None:
    faulty = simulate(scenario_isize_update(faulty=True))
    clean = simulate(scenario_isize_update(faulty=False))
    assert "jbd2_journal_commit_transaction" not in faulty.host_text
    assert "jbd2_journal_commit_transaction" in clean.host_text
    # Two journal writes ride along with the commit record.
    faulty_writes = [c for c in decode_dev_log(faulty.dev_text) if c.name == "WRITE_10"]
    clean_writes = [c for c in decode_dev_log(clean.dev_text) if c.name == "WRITE_10"]
    assert len(clean_writes) - len(faulty_writes) == 2
    assert faulty.ground_truth.divergence_roots == ["ext4_sync_file"]


@pytest.mark.parametrize("protocol", [Protocol.SCSI, Protocol.NVME])
def test_trim_misdirect_shifts_lba_only(protocol: Protocol) -> None:
    faulty = simulate(scenario_trim_misdirect(protocol=protocol, faulty=True))
    clean = simulate(scenario_trim_misdirect(protocol=protocol, faulty=False))
    assert faulty.ground_truth.trim_requested == [[8_192, 2_048]]
    assert faulty.ground_truth.trim_emitted == [[8_256, 2_048]]
    assert clean.ground_truth.trim_emitted == [[8_192, 2_048]]

    # Host traces are identical: the misdirect is invisible on the host side.
    assert faulty.host_text == clean.host_text

    (trim_faulty,) = decode_dev_log(faulty.dev_text)
    (trim_clean,) = decode_dev_log(clean.dev_text)
    if protocol is Protocol.SCSI:
        assert trim_faulty.name == "UNMAP"
        assert trim_faulty.decoded["lba"] == 8_256
        assert trim_clean.decoded["lba"] == 8_192
        assert trim_faulty.decoded["block_count"] == 2_048
    else:
        assert trim_faulty.name == "DSM"
        assert trim_faulty.decoded["slba"] == 8_256
        assert trim_clean.decoded["slba"] == 8_192


# ------------------------------------------------------------- ground truth


def test_ground_truth_matches_built_tree(barrier_abnormal, isize_reference) -> None:
    for run in (barrier_abnormal, isize_reference):
        truth = run.result.ground_truth
        counts = node_count_by_kind(run.tree)
        assert {k.value: v for k, v in counts.items()} == truth.node_counts
        assert [c.name for c in run.raw_cmds] == truth.command_names

        assert truth.per_syscall is not None
        assert len(truth.per_syscall) == len(run.tree.roots)
        for root, facts in zip(run.tree.roots, truth.per_syscall):
            sub = run.tree.subtree_ids(root)
            kernels = [i for i in sub if run.tree.nodes[i].kind is NodeKind.KERNEL]
            cmd_nodes = sorted(
                (i for i in sub if run.tree.nodes[i].kind is NodeKind.CMD),
                key=lambda i: run.tree.nodes[i].start_ns,
            )
            assert run.tree.nodes[root].name == facts["name"]
            assert len(kernels) == facts["kernel_count"]
            assert [run.tree.nodes[i].name for i in cmd_nodes] == facts["commands"]


def test_device_log_is_time_sorted_and_offset(barrier_reference) -> None:
    truth = barrier_reference.result.ground_truth
    assert truth.expected_offset_ns == -DEFAULT_DEVICE_OFFSET_NS == 5_000
    ts = [c.ts for c in barrier_reference.raw_cmds]
    assert ts == sorted(ts)


def test_host_trace_parses_without_warnings() -> None:
    result = simulate(scenario_broken_barrier())
    trace = parse_host_trace(result.host_text)
    assert trace.warnings == []


def test_synthetic_functions_exclude_anchors() -> None:
    truth = simulate(scenario_broken_barrier(faulty=False)).ground_truth
    assert truth.synthetic_functions
    assert not (set(truth.synthetic_functions) & ANCHOR_FUNCTIONS)
    assert "submit_bio" in truth.synthetic_functions


def test_nvme_pipeline_end_to_end() -> None:
    run = run_pipeline(scenario_broken_barrier(protocol=Protocol.NVME, faulty=False))
    names = {c.name for c in run.cmds}
    assert names == {"WRITE", "FLUSH"}
    assert run.offset.offset_ns == 5_000
    counts = node_count_by_kind(run.tree)
    assert {k.value: v for k, v in counts.items()} == run.result.ground_truth.node_counts


# ------------------------------------------------------------------- config


def test_config_from_dict_defaults_and_validation() -> None:
    config = config_from_dict({"workload": [{"op": "fsync"}]})
    assert config.seed == 1
    assert config.protocol is Protocol.SCSI
    assert config.offset_ns == DEFAULT_DEVICE_OFFSET_NS
    assert config.workload == (WorkloadOp("fsync"),)

    with pytest.raises(SimConfigError, match="unknown config keys"):
        config_from_dict({"sead": 1})
    with pytest.raises(SimConfigError, match="bad protocol"):
        config_from_dict({"protocol": "SATA"})
    with pytest.raises(SimConfigError, match="unknown faults"):
        config_from_dict({"faults": ["gremlins"]})
    with pytest.raises(SimConfigError, match="unknown op"):
        config_from_dict({"workload": [{"op": "mmap"}]})
    with pytest.raises(SimConfigError, match="needs an 'op' key"):
        config_from_dict({"workload": ["fsync"]})


def test_config_from_file(tmp_path) -> None:
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 9, "workload": [{"op": "trim", "lba": 64}]}))
    config = config_from_file(path)
    assert config.seed == 9 and config.workload[0].lba == 64

    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(SimConfigError, match="not valid JSON"):
        config_from_file(bad)
    with pytest.raises(SimConfigError, match="missing.json"):
        config_from_file(tmp_path / "missing.json")


def test_scenario_helpers_describe_their_workloads() -> None:
    barrier = scenario_broken_barrier()
    assert [op.op for op in barrier.workload] == ["write", "write", "write", "fsync"]
    assert barrier.faults == frozenset({"broken_blkdev_fsync_barrier"})
    assert scenario_broken_barrier(faulty=False).faults == frozenset()

    isize = scenario_isize_update()
    assert [op.op for op in isize.workload] == ["write", "fdatasync"]
    assert isize.workload[1].size_only is True

    trim = scenario_trim_misdirect()
    assert trim.workload == (WorkloadOp("trim", lba=8_192, blocks=2_048),)


def test_empty_workload_produces_empty_run() -> None:
    result = simulate(SimConfig(workload=()))
    assert result.host_text == "" and result.dev_text == ""
    assert result.ground_truth.node_counts == {"SYSCALL": 0, "KERNEL": 0, "CMD": 0}


# ------------------------------------------------------------- random trees


def test_random_tree_exact_count_and_validity() -> None:
    scale = ScaleParams(node_count=5_000, cmd_ratio=0.1, max_depth=8)
    tree, truth = generate_random_tree(scale, seed=42)
    assert len(tree) == 5_000
    assert sum(truth.node_counts.values()) == 5_000
    counts = node_count_by_kind(tree)
    assert {k.value: v for k, v in counts.items()} == truth.node_counts
    assert validate_tree(tree) == []
    assert truth.rule_selections is not None
    assert set(truth.rule_selections) == {"rule1", "rule2", "rule3"}


def test_random_tree_is_deterministic() -> None:
    scale = ScaleParams(node_count=1_200)
    a, _ = generate_random_tree(scale, seed=5)
    b, _ = generate_random_tree(scale, seed=5)
    assert tree_to_dict(a) == tree_to_dict(b)
    c, _ = generate_random_tree(scale, seed=6)
    assert tree_to_dict(c) != tree_to_dict(a)


def test_random_tree_single_node() -> None:
    tree, truth = generate_random_tree(ScaleParams(node_count=1), seed=1)
    assert len(tree) == 1
    assert tree.nodes[0].kind is NodeKind.SYSCALL
    assert validate_tree(tree) == []
    assert truth.node_counts == {"SYSCALL": 1, "KERNEL": 0, "CMD": 0}


def test_random_tree_zero_cmd_ratio() -> None:
    tree, truth = generate_random_tree(
        ScaleParams(node_count=800, cmd_ratio=0.0), seed=3
    )
    assert truth.node_counts["CMD"] == 0
    assert all(n.kind is not NodeKind.CMD for n in tree.nodes)
    assert truth.rule_selections == {
        "rule1": frozenset(), "rule2": frozenset(), "rule3": frozenset(),
    }


def test_random_tree_rejects_bad_scales() -> None:
    with pytest.raises(SimConfigError, match="node_count must be positive"):
        generate_random_tree(ScaleParams(node_count=0), seed=1)
    with pytest.raises(SimConfigError, match="cmd_ratio"):
        generate_random_tree(ScaleParams(node_count=10, cmd_ratio=1.5), seed=1)
