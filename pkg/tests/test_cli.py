import csv
import io
import json
import textwrap

import pytest

from ccp_ftp.cli import BUNDLED, main, parse_scenario
from ccp_ftp.errors import ParseError, ValidationError
from ccp_ftp.market_model import Entropic, ExpectedShortfall

TWO_EXCHANGES = """\
asset: {mu: [2.0, 1.0], gamma: [[0.04, 0.01], [0.01, 0.09]]}
participants:
  - {id: 1, risk: {kind: entropic, varrho: 1.0}, var_r: 0.5, cov_r: [0.05, -0.02]}
  - {id: 2, risk: {kind: entropic, varrho: 2.0}, var_r: 0.5, cov_r: [-0.03, 0.04]}
  - {id: 3, risk: {kind: entropic, varrho: 0.5}, var_r: 0.5, cov_r: [0.02, 0.06]}
  - {id: 4, risk: {kind: entropic, varrho: 1.5}, var_r: 0.5, cov_r: [-0.04, -0.05]}
  - {id: 5, risk: {kind: entropic, varrho: 1.0}, var_r: 0.5, cov_r: [0.01, 0.03]}
  - {id: 6, risk: {kind: entropic, varrho: 0.8}, var_r: 0.5, cov_r: [-0.02, 0.01]}
exchanges:
  - {id: D, members: [1, 2, 3, 4]}
  - {id: E, members: [5, 6]}
defaulter: 4
resolution:
  external_exchange: E
  q_d_liq: [0.1, -0.2]
"""

SMALL_XVA = """\
asset: {mu: 2.0, sigma: 0.2}
participants:
  - {id: 1, risk: {kind: es, alpha: 0.975}, var_r: 0.09, cov_r: [0.048]}
  - {id: 2, risk: {kind: es, alpha: 0.975}, var_r: 0.36, cov_r: [-0.096]}
  - {id: 3, risk: {kind: es, alpha: 0.975}, var_r: 0.81, cov_r: [0.144]}
  - {id: 4, risk: {kind: es, alpha: 0.975}, var_r: 1.44, cov_r: [-0.192]}
exchanges: [{id: D, members: all}]
defaulter: 4
resolution: {strategies: [liquidate_own, auction, hedge_then_auction]}
xva: {n_paths: 40000, n_batches: 2, alpha_kva: 0.99, seed: 5}
"""


def cli(*args):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(args), out, err)
    return code, out.getvalue(), err.getvalue()


def write(tmp_path, text, name="s.scn"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def summary_rows(text):
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    return [dict(zip(header, r)) for r in rows[1:] if r[0] == "summary"]


def test_bundled_scenarios_are_listed():
    code, out, _ = cli("scenarios")
    assert code == 0 and out.split() == list(BUNDLED)


def test_bundled_entropic_scenario():
    s = parse_scenario("example_4_1")
    assert len(s.participants) == 15 and s.defaulter == "15"
    assert s.asset.mu[0] == 2.0 and s.asset.gamma[0, 0] == pytest.approx(0.04)
    assert all(isinstance(p.risk, Entropic) for p in s.participants.values())


def test_bundled_shortfall_scenario():
    s = parse_scenario("example_5_1")
    assert all(isinstance(p.risk, ExpectedShortfall) and p.risk.alpha == 0.975 for p in s.participants.values())
    assert s.xva is not None and s.xva.alpha_im == 0.75 and s.xva.alpha_df == 0.80


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_validate(name):
    code, out, _ = cli("validate", name)
    assert code == 0 and out.strip() == "ok"


def test_parse_error_reports_position(tmp_path):
    path = write(tmp_path, "asset: {mu: 2.0, sigma: 0.2}\nparticipants:\n  - {id: 1, var_r: [oops\n")
    code, _, err = cli("run", path)
    assert code == 2 and "line" in err and "column" in err
    with pytest.raises(ParseError) as exc:
        parse_scenario(path)
    assert exc.value.line is not None


def test_bad_field_reports_its_line(tmp_path):
    text = SMALL_XVA.replace("var_r: 0.36", "var_r: lots")
    code, _, err = cli("run", write(tmp_path, text))
    assert code == 2 and "line 4" in err


def test_margin_levels_out_of_order(tmp_path):
    path = write(tmp_path, SMALL_XVA.replace("seed: 5}", "seed: 5, alpha_im: 0.8, alpha_df: 0.7}"))
    with pytest.raises(ValidationError):
        parse_scenario(path)
    code, _, err = cli("validate", path)
    assert code == 3 and "alpha_df" in err
    assert cli("run", path)[0] == 3


def test_dimension_mismatch_is_a_validation_error(tmp_path):
    path = write(tmp_path, SMALL_XVA.replace("cov_r: [0.048]", "cov_r: [0.048, 0.1]"))
    assert cli("run", path, "--no-xva")[0] == 3


def test_unknown_strategy(tmp_path):
    assert cli("run", "example_4_1", "--strategies", "panic")[0] == 3


def test_symmetric_pair_market_cost():
    code, out, _ = cli("run", "two_member_symmetric", "--out", "csv")
    assert code == 0
    (row,) = summary_rows(out)
    assert float(row["mc"]) == pytest.approx(1.0 / (2 * 4) * (0.05 / 0.2) ** 2, abs=1e-12)


def test_entropic_liquidation_row():
    code, out, _ = cli("run", "example_4_1", "--strategies", "liquidate_own", "--out", "csv")
    assert code == 0
    (row,) = summary_rows(out)
    assert round(float(row["mc"]), 2) == 0.43
    assert float(row["lc"]) == pytest.approx(0.0, abs=1e-12)


def test_all_eight_strategies(tmp_path):
    code, out, err = cli("run", write(tmp_path, TWO_EXCHANGES), "--strategies", "all8", "--out", "json")
    assert code == 0, err
    rows = json.loads(out)["summary"]
    assert len(rows) == 8
    assert [r["row"] for r in rows] == list(range(1, 9))
    for r in rows:
        assert r["lc"] + r["sum_delta_rho"] == pytest.approx(r["mc"], abs=1e-12)


def test_csv_and_json_agree(tmp_path):
    path = write(tmp_path, TWO_EXCHANGES)
    _, out_csv, _ = cli("run", path, "--strategies", "all8", "--report", "full", "--out", "csv")
    _, out_json, _ = cli("run", path, "--strategies", "all8", "--report", "full", "--out", "json")
    doc = json.loads(out_json)
    rows = list(csv.reader(io.StringIO(out_csv)))
    seen = 0
    header = None
    counters: dict[str, int] = {}
    for r in rows:
        if r[0] == "table":
            header = r[1:]
            continue
        table = r[0]
        k = counters.get(table, 0)
        counters[table] = k + 1
        record = doc[table][k]
        for col, cell in zip(header, r[1:]):
            v = record[col]
            if isinstance(v, float):
                assert float(cell) == v
                seen += 1
            elif v is None:
                assert cell == ""
            else:
                assert cell == str(v)
    assert seen > 100


def test_table_sink_uses_six_significant_digits():
    code, out, _ = cli("run", "two_member_symmetric")
    assert code == 0 and "0.0078125" in out


def test_rerun_with_same_seed_is_identical(tmp_path):
    path = write(tmp_path, SMALL_XVA)
    first = cli("run", path, "--report", "per_participant", "--out", "json")
    second = cli("run", path, "--report", "per_participant", "--out", "json")
    assert first[0] == 0, first[2]
    assert first[1] == second[1]
    other = cli("run", path, "--seed", "6", "--out", "json")
    assert other[1] != first[1]


def test_summary_has_credit_columns(tmp_path):
    code, out, _ = cli("run", write(tmp_path, SMALL_XVA), "--out", "json")
    rows = json.loads(out)["summary"]
    assert [r["strategy"] for r in rows] == ["liquidate_own", "auction", "hedge_then_auction"]
    for r in rows:
        assert r["ftp"] - r["mc"] == r["cc"]


def test_too_few_paths_for_the_capital_quantile():
    code, _, err = cli("run", "example_5_1", "--paths", "20000")
    assert code == 5 and "xva error" in err


def test_xva_flag_without_configuration():
    assert cli("run", "example_4_1", "--xva")[0] == 3
