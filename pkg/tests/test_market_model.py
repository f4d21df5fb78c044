import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccp_ftp.errors import DimensionMismatch
from ccp_ftp.market_model import (
    AssetModel,
    EllipseKind,
    Entropic,
    Exchange,
    ExpectedShortfall,
    Participant,
    Scenario,
    assemble_joint_moments,
    has_errors,
    validate_scenario,
)

from helpers import entropic_15, es_15


def test_joint_moments_zero_receivable():
    a = AssetModel([1.0, 2.0], np.eye(2))
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 0.0, [0.0, 0.0])
    np.testing.assert_array_equal(assemble_joint_moments(p, a), [[0, 0, 0], [0, 1, 0], [0, 0, 1]])


def test_joint_moments_first_member():
    a = AssetModel([2.0], [[0.04]])
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 0.09, [0.048])
    np.testing.assert_allclose(assemble_joint_moments(p, a), [[0.09, 0.048], [0.048, 0.04]])


def test_joint_moments_span_case_has_null_direction():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(3, 3))
    gamma = b @ b.T + 0.1 * np.eye(3)
    a_vec = rng.normal(size=3)
    asset = AssetModel(np.ones(3), gamma)
    p = Participant("1", "clearing_member", ExpectedShortfall(0.9), 0.0, a_vec @ gamma @ a_vec, gamma @ a_vec)
    joint = assemble_joint_moments(p, asset)
    eig, vec = np.linalg.eigh(joint)
    assert eig[0] > -1e-10 and abs(eig[0]) < 1e-10 * eig[-1]
    null = np.concatenate([[-1.0], a_vec])
    np.testing.assert_allclose(joint @ null, 0.0, atol=1e-10)


def test_joint_moments_dimension_mismatch():
    a = AssetModel([1.0, 2.0], np.eye(2))
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 1.0, [0.1])
    with pytest.raises(DimensionMismatch):
        assemble_joint_moments(p, a)


def test_fifteen_member_scenarios_are_clean():
    assert validate_scenario(entropic_15()) == []
    assert validate_scenario(es_15()) == []


def test_indefinite_gamma_is_an_error():
    a = AssetModel([1.0, 1.0], [[1.0, 0.0], [0.0, -0.5]])
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 1.0, [0.0, 0.0])
    s = Scenario(a, (Exchange("D", ("1",)),), {"1": p}, "1")
    codes = [(d.severity, d.code) for d in validate_scenario(s)]
    assert ("Error", "gamma_not_pd") in codes


def test_spanned_receivable_is_a_warning():
    gamma = np.array([[0.04]])
    cov = np.array([0.03])
    var = float(cov @ np.linalg.solve(gamma, cov))
    a = AssetModel([2.0], gamma)
    parts = {
        "1": Participant("1", "clearing_member", ExpectedShortfall(0.975), 0.0, var, cov),
        "2": Participant("2", "clearing_member", ExpectedShortfall(0.975), 0.0, 1.0, [0.0]),
    }
    s = Scenario(a, (Exchange("D", ("1", "2")),), parts, "2")
    diags = validate_scenario(s)
    assert [(d.severity, d.code) for d in diags] == [("Warning", "gamma_i_singular")]
    assert not has_errors(diags)


def test_student_t_needs_more_than_two_degrees_of_freedom():
    a = AssetModel([2.0], [[0.04]], EllipseKind.student_t(2.0))
    p = Participant("1", "clearing_member", ExpectedShortfall(0.975), 0.0, 1.0, [0.0])
    s = Scenario(a, (Exchange("D", ("1",)),), {"1": p}, "1")
    assert any(d.code == "nu_too_small" for d in validate_scenario(s))


def test_entropic_with_student_t_is_rejected():
    a = AssetModel([2.0], [[0.04]], EllipseKind.student_t(4.0))
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 1.0, [0.0])
    s = Scenario(a, (Exchange("D", ("1",)),), {"1": p}, "1")
    assert any(d.code == "entropic_needs_gaussian" for d in validate_scenario(s))


def test_unknown_ids_are_reported():
    a = AssetModel([2.0], [[0.04]])
    p = Participant("1", "clearing_member", Entropic(1.0), 0.0, 1.0, [0.0])
    s = Scenario(a, (Exchange("D", ("1", "9")),), {"1": p}, "7")
    codes = {d.code for d in validate_scenario(s)}
    assert {"unknown_participant", "unknown_defaulter"} <= codes


def test_validation_is_pure():
    s = es_15()
    first = [(d.severity, d.code, d.message) for d in validate_scenario(s)]
    second = [(d.severity, d.code, d.message) for d in validate_scenario(s)]
    assert first == second


@settings(max_examples=60, deadline=None)
@given(
    m=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
    var=st.floats(0.0, 10.0),
)
def test_joint_moments_symmetric(m, seed, var):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(m, m))
    asset = AssetModel(rng.normal(size=m), b @ b.T + np.eye(m))
    p = Participant("x", "clearing_member", Entropic(1.0), 0.0, var, rng.normal(size=m))
    joint = assemble_joint_moments(p, asset)
    assert np.array_equal(joint, joint.T)
