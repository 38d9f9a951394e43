from __future__ import annotations

import json
import math

import numpy as np
import pytest

from canpwcrt.model import (
    ErrorModel,
    Frame,
    MessageSet,
    ValidationError,
    blocking_time,
    choose_retry_limit,
    load_message_set,
    poisson_ok,
    retrans_pmf,
    retry_probability,
    retry_residual,
    save_message_set,
    transmission_time_pmf,
    validate_and_convert,
)


def test_poisson_ok():
    assert poisson_ok(0, 1234) == 1.0
    assert poisson_ok(1e-5, 62) == pytest.approx(0.999380192, abs=1e-9)
    assert poisson_ok(1e-5, 75) == pytest.approx(0.999250281, abs=1e-9)


def test_retry_probability():
    assert retry_probability(0, 1e-5, 62, 13) == pytest.approx(0.999380192, abs=1e-9)
    assert retry_probability(1, 1e-5, 62, 13) == pytest.approx(6.19346e-4, rel=1e-5)
    assert retry_probability(2, 1e-5, 62, 13) == pytest.approx(4.6435e-7, rel=1e-4)


@pytest.mark.parametrize("lam", [0.0, 1e-7, 1e-5, 1e-3, 0.05])
@pytest.mark.parametrize("k", [0, 1, 5, 32])
def test_retry_masses_sum_with_residual(lam, k):
    C, E = 62, 13
    total = sum(retry_probability(n, lam, C, E) for n in range(k + 1))
    assert total + retry_residual(k, lam, C, E) == pytest.approx(1.0, abs=1e-12)


def test_choose_retry_limit():
    assert choose_retry_limit(0, 62, 13, 0.5) == 0
    assert choose_retry_limit(1e-5, 62, 13, 2.7e-15) == 4
    assert choose_retry_limit(1e-5, 62, 13, 1e-6) == 1
    with pytest.raises(ValidationError, match="too high"):
        choose_retry_limit(0.5, 62, 13, 1e-15)


def test_choose_retry_limit_monotone():
    thresholds = [10.0 ** -e for e in range(1, 30)]
    ks = [choose_retry_limit(1e-5, 62, 13, t) for t in thresholds]
    assert ks == sorted(ks)


def test_transmission_time_pmf_sae_prio1():
    f = Frame("m1", 1, 62, 125000, 625, 13)
    p = transmission_time_pmf(f, ErrorModel(1e-5, k=2))
    assert p.values.tolist() == [62, 137, 212]
    assert p.masses[0] == pytest.approx(0.99938019, abs=1e-8)
    assert p.masses[1] == pytest.approx(6.19346e-4, rel=1e-5)
    assert p.masses[2] == pytest.approx(4.6435e-7, rel=1e-4)
    assert p.residual == pytest.approx(3.48e-10, rel=1e-2)
    assert p.total + p.residual == pytest.approx(1.0, abs=1e-15)
    r = retrans_pmf(f, ErrorModel(1e-5, k=2))
    assert r.values.tolist() == [0, 75, 150]
    assert np.array_equal(r.masses, p.masses)


def test_transmission_time_support_is_arithmetic():
    f = Frame("x", 0, 40, 10_000, 10_000, 7)
    p = transmission_time_pmf(f, ErrorModel(1e-3, k=6))
    assert np.all(np.diff(p.values) == f.C + f.E)


def test_error_free_pmfs():
    f = Frame("x", 0, 9, 100, 100, 3)
    assert transmission_time_pmf(f, ErrorModel(0.0, k=3)).to_dict() == {9: 1.0}
    assert retrans_pmf(f, ErrorModel(0.0, residual_threshold=1e-12)).to_dict() == {0: 1.0}


def test_worked_example_pmfs():
    m = load_message_set("example3")
    tau0, tau1 = m.frames[0], m.frames[1]
    assert transmission_time_pmf(tau0, m.error_model).to_dict() == pytest.approx({1: 0.9, 3: 0.09, 5: 0.01})
    assert retrans_pmf(tau1, m.error_model).to_dict() == pytest.approx({0: 0.9, 1: 0.09, 2: 0.01})


def test_fold_mode():
    f = Frame("x", 0, 1, 10, 10, 1)
    p = transmission_time_pmf(f, ErrorModel(0.1, k=1), fold=True)
    assert p.residual == 0.0
    assert p.total == pytest.approx(1.0)


def test_blocking_time():
    assert blocking_time(load_message_set("example3"), 1) == 2
    sae = load_message_set("sae")
    assert blocking_time(sae, 0) == 125
    assert blocking_time(sae, sae.lowest_priority) == 0
    for i in range(len(sae)):
        brute = max([f.C + f.E for f in sae.frames if f.priority > sae.frames[i].priority], default=0)
        assert blocking_time(sae, i) == brute
    assert blocking_time(sae, 6, include_self=True) == 125


def test_sae_conversion():
    sae = load_message_set("sae")
    assert sae.frames[1].T == 625
    assert len(sae) == 17
    assert sae.utilization() == pytest.approx(0.8228, abs=1e-4)


def _raw(frames, **kw):
    return {"bus_speed_bps": 125000, "lambda_per_bit": 0.0, "frames": frames, **kw}


def test_duplicate_priority():
    frames = [{"id": "a", "priority": 3, "C_bits": 50, "T_ms": 10, "D_ms": 10},
              {"id": "b", "priority": 3, "C_bits": 50, "T_ms": 10, "D_ms": 10}]
    with pytest.raises(ValidationError, match="duplicate priority"):
        validate_and_convert(_raw(frames))


def test_constrained_deadline():
    frames = [{"id": "a", "priority": 1, "C_bits": 50, "T_ms": 10, "D_ms": 20}]
    with pytest.raises(ValidationError, match="constrained deadline violated"):
        validate_and_convert(_raw(frames))


def test_non_integral_time():
    frames = [{"id": "a", "priority": 1, "C_bits": 50, "T_ms": 0.0013, "D_ms": 0.0013}]
    with pytest.raises(ValidationError, match="not an integral number"):
        validate_and_convert(_raw(frames))


def test_error_model_validation():
    with pytest.raises(ValidationError):
        ErrorModel(1e-5)
    with pytest.raises(ValidationError):
        ErrorModel(1e-5, k=2, residual_threshold=1e-9)
    with pytest.raises(ValidationError):
        ErrorModel(-1.0, k=1)


def test_round_trip(tmp_path):
    sae = load_message_set("sae")
    path = tmp_path / "sae.json"
    save_message_set(sae, path)
    again = load_message_set(path)
    assert again.frames == sae.frames
    assert again.error_model == sae.error_model
    assert json.loads(path.read_text())["frames"][0]["T_bits"] == 125000


def test_load_errors(tmp_path):
    with pytest.raises(ValidationError, match="no dataset"):
        load_message_set(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_message_set(bad)


def test_with_lambda_drops_explicit_masses():
    m = load_message_set("example3").with_lambda(0.0)
    assert all(f.retry_masses is None for f in m.frames)
    assert transmission_time_pmf(m.frames[0], m.error_model).to_dict() == {1: 1.0}


def test_message_set_sorted_by_priority():
    frames = (Frame("b", 5, 1, 10, 10), Frame("a", 2, 1, 10, 10))
    m = MessageSet(frames, 1000, ErrorModel(0.0, k=0))
    assert [f.id for f in m.frames] == ["a", "b"]
    assert m.index_of("b") == 1
    assert math.isclose(m.bits_to_ms(1000), 1000.0)
