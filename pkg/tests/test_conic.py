import numpy as np
import pytest

from nlosloc.builders import epigraph_block
from nlosloc.conic import ConicProblem, PsdBlock
from nlosloc.errors import InvalidInputError


def tiny_problem():
    blk = PsdBlock(
        dim=2,
        const_rows=[0], const_cols=[1], const_vals=[1.0],
        term_vars=[0, 0], term_rows=[0, 1], term_cols=[0, 1], term_coefs=[1.0, 1.0],
    )
    return ConicProblem(
        num_vars=1,
        obj_vars=[0], obj_coefs=[1.0],
        eq_vars=[[0]], eq_coefs=[[2.0]], eq_rhs=[3.0], eq_labels=["double"],
        blocks=[blk], var_labels=["t"],
    )


class TestPsdBlock:
    def test_materialize_is_symmetric(self):
        blk = tiny_problem().blocks[0]
        mat = blk.materialize(np.array([2.0]))
        assert np.array_equal(mat, np.array([[2.0, 1.0], [1.0, 2.0]]))

    def test_lower_triangle_entry_rejected(self):
        with pytest.raises(InvalidInputError):
            PsdBlock(dim=2, const_rows=[1], const_cols=[0], const_vals=[1.0],
                     term_vars=[], term_rows=[], term_cols=[], term_coefs=[])

    def test_undeclared_variable_rejected(self):
        blk = PsdBlock(dim=1, const_rows=[], const_cols=[], const_vals=[],
                       term_vars=[5], term_rows=[0], term_cols=[0], term_coefs=[1.0])
        with pytest.raises(InvalidInputError):
            ConicProblem(num_vars=1, obj_vars=[], obj_coefs=[], eq_vars=[], eq_coefs=[],
                         eq_rhs=[], eq_labels=[], blocks=[blk], var_labels=["x"])


class TestEpigraphBlock:
    def test_equality_case_is_psd_with_expected_spectrum(self):
        blk = epigraph_block(sqdist_var=0, dist_var=1)
        mat = blk.materialize(np.array([9.0, 3.0]))
        assert np.array_equal(mat, np.array([[1.0, 3.0], [3.0, 9.0]]))
        eigs = np.linalg.eigvalsh(mat)
        assert eigs == pytest.approx([0.0, 10.0], abs=1e-12)

    def test_violating_point_is_not_psd(self):
        blk = epigraph_block(0, 1)
        mat = blk.materialize(np.array([8.0, 3.0]))
        assert np.linalg.det(mat) == pytest.approx(-1.0)
        assert np.linalg.eigvalsh(mat)[0] < 0

    def test_slack_point_is_psd(self):
        blk = epigraph_block(0, 1)
        assert np.linalg.eigvalsh(blk.materialize(np.array([10.0, 3.0])))[0] > 0


class TestSerialization:
    def test_round_trip_preserves_data(self):
        prob = tiny_problem()
        clone = ConicProblem.from_json(prob.to_json())
        assert clone.num_vars == prob.num_vars
        assert clone.var_labels == prob.var_labels
        assert np.array_equal(clone.eq_rhs, prob.eq_rhs)
        assert np.array_equal(clone.blocks[0].term_coefs, prob.blocks[0].term_coefs)

    def test_round_trip_is_byte_identical(self):
        text = tiny_problem().to_json()
        assert ConicProblem.from_json(text).to_json() == text

    def test_format_tag_checked(self):
        with pytest.raises(InvalidInputError):
            ConicProblem.from_json('{"format": "something-else"}')

    def test_objective_and_residual_helpers(self):
        prob = tiny_problem()
        x = np.array([1.5])
        assert prob.objective_value(x) == 1.5
        assert prob.equality_residuals(x) == pytest.approx([0.0])
