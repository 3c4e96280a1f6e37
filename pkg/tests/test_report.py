import math

from crfol.report import ERROR, FAIL, PASS, VACUOUS, Check, Report


def test_against_and_error():
    assert Check.against("x", 1e-9, 1e-6).status == PASS
    assert Check.against("x", 1e-3, 1e-6).status == FAIL
    err = Check.error("x", ValueError("boom"))
    assert err.status == ERROR and err.details["message"] == "boom"
    assert Check("v", VACUOUS).ok and not err.ok


def test_status_and_exit_code():
    r = Report("check", "demo")
    r.add(Check("a", PASS))
    assert (r.status, r.exit_code) == (PASS, 0)
    r.add(Check("b", FAIL))
    assert (r.status, r.exit_code) == (FAIL, 1)
    r.add(Check("c", ERROR))
    assert (r.status, r.exit_code) == (ERROR, 2)


def test_json_round_trip():
    r = Report("trace", "demo", wall_time=0.5)
    r.add(Check.against("t", 2.5e-7, 1e-6, value=1 + 2j, rows=[1, 2], worst=math.inf))
    back = Report.from_json(r.to_json())
    assert back.to_dict() == r.to_dict()
    rec = back.records[0]
    assert rec.details["value"] == {"re": 1.0, "im": 2.0}
    assert rec.details["worst"] == "inf"
    assert "t" in back.to_table()
