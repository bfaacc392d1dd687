import pytest

from openwdvv.catalog import builtin, builtin_ids, manifest_run
from openwdvv.mutations import a3_model, mutations
from openwdvv.pipeline import STAGES, resolve_stages, run_checks, settings_for


def test_stage_resolution_adds_prerequisites():
    assert resolve_stages(["wdvv"]) == ["wdvv"]
    assert resolve_stages(["trr"]) == ["wdvv", "units", "euler", "calibrate", "hierarchy", "trr"]
    assert resolve_stages(None) == list(STAGES)
    with pytest.raises(ValueError):
        resolve_stages(["nonsense"])


def test_settings_raise_depth_to_what_the_operators_consume():
    st = settings_for(builtin("point").spec)
    assert st.P_ext == st.P_max + st.m_max
    assert st.D >= st.P_max + st.P_ext
    assert settings_for(builtin("point").spec, m_max=5).D >= 4 + 9


@pytest.mark.parametrize("ident", builtin_ids())
def test_every_builtin_passes_the_full_pipeline(run_builtin, ident):
    res = run_builtin(ident)
    assert res.ok, res.to_text()
    assert res.exit_code == 0
    expected_na = set() if builtin(ident).spec.open_ext is not None else {"open-virasoro"}
    assert {s.name for s in res.stages if s.status == "n/a"} == expected_na


def test_selected_stages_only(run_builtin):
    res = run_checks(builtin("p1").spec, stages=["wdvv"])
    assert [s.name for s in res.stages] == ["wdvv"]
    assert res.ok


@pytest.mark.parametrize("mut", mutations(), ids=lambda m: m.id)
def test_mutations_fail_at_expected_stage(mut):
    res = run_checks(mut.spec, faults=mut.faults)
    assert not res.ok and res.exit_code == 1
    first = res.first_failure
    assert first.name == mut.expected_stage
    loc = first.first_failure.first_nonzero
    assert loc is not None and loc[1] != "0"
    # everything downstream of a failed stage is skipped, never run
    for s in res.stages:
        if s.status == "skipped":
            assert not s.reports


def test_non_builtin_model_passes():
    assert run_checks(a3_model()).ok


def test_depth_problems_are_errors_not_failures(monkeypatch):
    from openwdvv import pipeline as P

    orig = P.settings_for

    def shallow(*a, **k):
        st = orig(*a, **k)
        return P.Settings(st.jet_order, 1, st.P_max, st.G_max, st.P_ext, st.m_max, st.lambdas)

    monkeypatch.setattr(P, "settings_for", shallow)
    res = run_checks(builtin("point").spec, stages=["hierarchy"])
    first = res.first_failure
    assert first.status == "error" and "DepthError" in first.message
    assert res.exit_code == 3
    assert res.stage("hierarchy").status in ("error", "skipped")


def test_reports_are_deterministic():
    spec = builtin("point_open").spec
    a = run_checks(spec).to_json()
    b = run_checks(spec).to_json()
    assert a == b
    assert "seconds" not in a


def test_manifest_run_returns_flat_reports():
    reps = manifest_run(builtin("point"), stages=["wdvv", "units"])
    assert [r.name for r in reps][:1] and all(r.is_zero for r in reps)
