import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import blocksweep as bs
from blocksweep.cli import (
    RunConfig,
    execute_run,
    main,
    parse_config,
    serialize_config,
    write_trace,
)
from blocksweep.errors import ConfigError


MINIMAL_KM = """
problem:
  kind: km
  dims: [1]
  operator: {type: affine, matrix: [[0.5]]}
solver:
  relaxation: 0.5
  tolerance: 1.0e-8
sweeping: {scheme: single_block}
seeds: [0]
initial: {x0: [[8.0]]}
"""

DR_1D = """
problem:
  kind: dr
  dims: [1]
  blocks:
    - {kind: l1, dim: 1, weight: 1.0}
  coupling:
    type: linear
    matrix: [[1.0]]
    offset: [-2.0]
solver:
  gamma: 1.0
  dr_relaxation: 1.0
  tolerance: 1.0e-9
sweeping: {scheme: single_block}
seeds: [0, 1, 2, 3, 4]
initial: {x0: [[4.0]]}
reference: [[1.0]]
"""

FB_TEMPLATE = """
problem:
  kind: fb
  dims: [1]
  blocks:
    - {{kind: zero, dim: 1}}
  forward:
    type: linear
    matrix: [[1.0]]
    offset: [-1.0]
solver:
  relaxation: 0.9
  stepsize: {stepsize}
  tolerance: 1.0e-9
sweeping: {{scheme: single_block}}
seeds: [0]
"""


def test_minimal_km_config_valid():
    rc = parse_config(MINIMAL_KM)
    assert rc.problem["kind"] == "km"
    assert rc.seeds == (0,)


def test_single_layer_relaxation_one_rejected():
    bad = MINIMAL_KM.replace("relaxation: 0.5", "relaxation: 1.0")
    with pytest.raises(ConfigError, match="sup lambda_n < 1"):
        parse_config(bad)


def test_fb_stepsize_at_twice_theta_rejected():
    # theta = 1 for the unit forward matrix, so 2.0 hits the open endpoint
    with pytest.raises(ConfigError, match=r"\]0, 2\*theta\["):
        parse_config(FB_TEMPLATE.format(stepsize="2.0"))
    parse_config(FB_TEMPLATE.format(stepsize="1.0"))  # interior is fine


def test_dr_relaxation_bound_rejected():
    bad = DR_1D.replace("dr_relaxation: 1.0", "dr_relaxation: 2.0")
    with pytest.raises(ConfigError, match=r"\]0, 2\["):
        parse_config(bad)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(MINIMAL_KM + "\nbogus_key: 1\n")
    bad = MINIMAL_KM.replace("  relaxation: 0.5",
                             "  relaxation: 0.5\n  typo_field: 3")
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(bad)


def test_parse_error_reports_line():
    with pytest.raises(ConfigError, match="line"):
        parse_config("problem: [unclosed\n  bad: {")


def test_roundtrip_parse_serialize_parse():
    for text in (MINIMAL_KM, DR_1D, FB_TEMPLATE.format(stepsize="1.0")):
        rc = parse_config(text)
        again = parse_config(serialize_config(rc))
        assert rc == again


@settings(max_examples=25, deadline=None)
@given(st.one_of(
    st.floats(min_value=1.0, max_value=5.0),     # sup lambda >= 1
    st.floats(min_value=-2.0, max_value=0.0),    # inf lambda <= 0
))
def test_out_of_range_single_layer_relaxations_always_rejected(lam):
    bad = MINIMAL_KM.replace("relaxation: 0.5", f"relaxation: {lam!r}")
    with pytest.raises(ConfigError):
        parse_config(bad)


@settings(max_examples=25, deadline=None)
@given(st.one_of(
    st.floats(min_value=2.0, max_value=6.0),
    st.floats(min_value=-1.0, max_value=0.0),
))
def test_out_of_range_splitting_relaxations_always_rejected(mu):
    bad = DR_1D.replace("dr_relaxation: 1.0", f"dr_relaxation: {mu!r}")
    with pytest.raises(ConfigError):
        parse_config(bad)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=2.0, max_value=8.0))
def test_out_of_range_stepsizes_always_rejected(gamma):
    with pytest.raises(ConfigError):
        parse_config(FB_TEMPLATE.format(stepsize=repr(gamma)))


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------


def _small_trace():
    d = bs.BlockDims([1, 1, 1])
    T = bs.affine_family(d, 0.5 * np.eye(3))
    cfg = bs.SolverConfig(sweeping=bs.single_block(3),
                          relaxation=bs.Schedule(0.5), max_iterations=3,
                          tolerance=0.0, seed=1)
    return bs.run_single_layer(T, cfg, bs.construct(d, [[1.0], [2.0], [3.0]]))


def test_write_trace_line_count_and_header(tmp_path):
    trace = _small_trace()
    assert len(trace.records) == 3
    path = tmp_path / "t.csv"
    write_trace(trace, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "n,residual,dist_to_ref,active_mask,lambda,gamma,objective"


def test_write_trace_mask_encoding(tmp_path):
    d = bs.BlockDims([1, 1, 1])
    rec = bs.TraceRecord(0, 1.0, (1, 0, 1), 0.5, None, None, None, None)
    trace = bs.IterateTrace((rec,), bs.construct(d), "max_iterations")
    path = tmp_path / "m.csv"
    write_trace(trace, str(path))
    row = path.read_text().splitlines()[1].split(",")
    assert row[3] == "101"
    assert row[1] == "1"  # 17 significant digits, shortest form
    assert row[2] == ""


def test_write_trace_float_precision(tmp_path):
    d = bs.BlockDims([1])
    value = 1 / 3
    rec = bs.TraceRecord(0, value, (1,), value, value, value, value, None)
    trace = bs.IterateTrace((rec,), bs.construct(d), "max_iterations")
    path = tmp_path / "p.csv"
    write_trace(trace, str(path))
    row = path.read_text().splitlines()[1].split(",")
    assert float(row[1]) == value  # 17 digits round-trip exactly


# ---------------------------------------------------------------------------
# execute_run
# ---------------------------------------------------------------------------


def test_execute_run_dr_writes_artifacts(tmp_path):
    rc = parse_config(DR_1D)
    code = execute_run(rc, out_dir=str(tmp_path))
    assert code == 0
    for seed in range(5):
        assert (tmp_path / f"trace_seed{seed}.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["success_fraction"] == 1.0
    assert report["kind"] == "dr"
    assert len(report["per_seed"]) == 5


def test_execute_run_budget_exhaustion_exit_2(tmp_path):
    rc = parse_config(DR_1D)
    code = execute_run(rc, out_dir=str(tmp_path), max_iter=1)
    assert code == 2
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["success_fraction"] < 1.0


def test_execute_run_unwritable_path_exit_1(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    rc = parse_config(DR_1D)
    code = execute_run(rc, out_dir=str(blocker / "sub"))
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_execute_run_replay_byte_identical(tmp_path):
    rc = parse_config(DR_1D)
    a, b = tmp_path / "a", tmp_path / "b"
    assert execute_run(rc, out_dir=str(a)) == 0
    assert execute_run(rc, out_dir=str(b)) == 0
    for seed in range(5):
        fa = (a / f"trace_seed{seed}.csv").read_bytes()
        fb = (b / f"trace_seed{seed}.csv").read_bytes()
        assert fa == fb


def test_execute_run_env_override(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("BLOCKSWEEP_OUT", str(target))
    rc = parse_config(MINIMAL_KM)
    assert execute_run(rc) == 0
    assert (target / "trace_seed0.csv").exists()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def test_main_validate_and_run(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(DR_1D)
    assert main(["validate", str(cfg_path)]) == 0
    assert "OK" in capsys.readouterr().out
    out_dir = tmp_path / "runs"
    assert main(["run", str(cfg_path), "--out", str(out_dir),
                 "--seeds", "7,8"]) == 0
    assert (out_dir / "trace_seed7.csv").exists()
    assert (out_dir / "trace_seed8.csv").exists()


def test_main_invalid_config_exit_1(tmp_path, capsys):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text(MINIMAL_KM.replace("relaxation: 0.5",
                                           "relaxation: 1.0"))
    assert main(["validate", str(cfg_path)]) == 1
    assert "sup lambda_n" in capsys.readouterr().err


def test_main_oracle_prints_solution(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(DR_1D)
    assert main(["oracle", str(cfg_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["blocks"][0][0] == pytest.approx(1.0, abs=1e-9)


def test_main_tol_and_max_iter_overrides(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(DR_1D)
    out_dir = tmp_path / "o"
    assert main(["run", str(cfg_path), "--out", str(out_dir),
                 "--tol", "1e-2", "--max-iter", "50"]) == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert report["max_final_residual"] <= 1e-2


# ---------------------------------------------------------------------------
# the other problem kinds parse and run end to end
# ---------------------------------------------------------------------------


PD_1D = """
problem:
  kind: pd_dr
  dims: [1]
  functions:
    - {kind: l1, dim: 1}
  duals:
    - {kind: sq_l2, center: [2.0]}
  grid: [[[[1.0]]]]
solver: {gamma: 1.0, tolerance: 1.0e-9}
sweeping: {scheme: single_block}
seeds: [0]
initial: {x0: [[4.0]]}
reference: [[1.0]]
"""

FB_MIN_LASSO = """
problem:
  kind: fb_min
  dims: [1]
  functions:
    - {kind: l1, dim: 1, weight: 0.5}
  smooth:
    - {kind: sq_l2, center: [1.0]}
  grid: [[[[1.0]]]]
solver: {relaxation: 0.9, stepsize: 1.0, tolerance: 1.0e-9}
sweeping: {scheme: single_block}
seeds: [0, 1]
reference: [[0.5]]
"""

DOUBLE_LAYER = """
problem:
  kind: double_layer
  dims: [2]
  outer: {type: identity}
  inner:
    type: prox
    functions:
      - {kind: sq_l2, center: [1.0, -1.0]}
    gamma: 1.0
solver: {relaxation: 1.0, tolerance: 1.0e-9}
sweeping: {scheme: fixed_subset_size, size: 1}
seeds: [3]
"""

AVERAGED = """
problem:
  kind: averaged
  dims: [1]
  operator:
    type: prox
    functions:
      - {kind: sq_l2, center: [2.0]}
    gamma: 1.0
solver: {relaxation: 1.5, tolerance: 1.0e-9}
sweeping: {scheme: single_block}
seeds: [0]
"""


@pytest.mark.parametrize("text,expected", [
    (PD_1D, 1.0),
    (FB_MIN_LASSO, 0.5),
])
def test_end_to_end_with_reference(tmp_path, text, expected):
    rc = parse_config(text)
    out = tmp_path / "out"
    assert execute_run(rc, out_dir=str(out)) == 0
    report = json.loads((out / "report.json").read_text())
    for entry in report["per_seed"].values():
        assert entry["distance_to_reference"] <= 1e-5


@pytest.mark.parametrize("text", [DOUBLE_LAYER, AVERAGED])
def test_end_to_end_other_kinds(tmp_path, text):
    rc = parse_config(text)
    assert execute_run(rc, out_dir=str(tmp_path / "x")) == 0


def test_pd_dr_mask_covers_all_blocks():
    # the sweeping rule is automatically sized over primal + image blocks
    rc = parse_config(PD_1D)
    from blocksweep.cli import _build_plan, _build_sweeping
    plan = _build_plan(rc)
    assert plan.mask_blocks == 2
    assert _build_sweeping(rc, plan.mask_blocks).m == 2


def test_averaged_kind_requires_averaged_operator():
    bad = AVERAGED.replace(
        """    type: prox
    functions:
      - {kind: sq_l2, center: [2.0]}
    gamma: 1.0""",
        "    {type: affine, matrix: [[0.5]]}")
    with pytest.raises(ConfigError, match="averaged"):
        parse_config(bad)
