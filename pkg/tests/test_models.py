"""
Tests for parameter and result models
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError

from ssb_measurement.models import (
    ApparatusParams,
    ChshResult,
    CorrelationEstimate,
    MeasurementSummary,
    Readout,
    SpectrumResult,
)


def make_estimate(correlation: float = -0.5, label: str = "") -> CorrelationEstimate:
    return CorrelationEstimate(
        label=label,
        correlation=correlation,
        stderr=0.02,
        n_decided=990,
        n_undecided=10,
        marginal_plus=(0.5, 0.49),
    )


class TestReadout:
    """
    Test cases for Readout
    """

    def test_signed_values(self):
        assert Readout.PLUS.value_int == 1
        assert Readout.MINUS.value_int == -1
        assert Readout.UNDECIDED.value_int == 0

    def test_from_int(self):
        """
        Test that the sign selects the readout
        """
        assert Readout.from_int(3) is Readout.PLUS
        assert Readout.from_int(-1) is Readout.MINUS
        assert Readout.from_int(0) is Readout.UNDECIDED

    def test_string_values(self):
        assert Readout("+1") is Readout.PLUS
        assert Readout.UNDECIDED.value == "undecided"


class TestApparatusParams:
    """
    Test cases for ApparatusParams
    """

    def test_defaults(self):
        """
        Test the default unit double well
        """
        p = ApparatusParams()
        assert p.phi_plus == pytest.approx(1.0)
        assert p.field_strength == pytest.approx(1.0)
        assert p.readout_variance == pytest.approx(0.005)
        np.testing.assert_allclose(p.field_axis, [0.0, 0.0, 1.0])

    def test_field_axis_and_strength(self):
        p = ApparatusParams(field=(3.0, 0.0, 4.0))
        assert p.field_strength == pytest.approx(5.0)
        np.testing.assert_allclose(p.field_axis, [0.6, 0.0, 0.8])

    def test_zero_field_selects_z(self):
        p = ApparatusParams(field=(0.0, 0.0, 0.0))
        np.testing.assert_allclose(p.field_axis, [0.0, 0.0, 1.0])
        assert p.field_strength == 0.0

    def test_effective_variance_override(self):
        p = ApparatusParams(epsilon=0.2, effective_variance=0.5)
        assert p.readout_variance == 0.5

    def test_validation(self):
        """
        Test that unphysical coefficients and unknown keys are rejected
        """
        with pytest.raises(ValidationError):
            ApparatusParams(gamma=0.0)
        with pytest.raises(ValidationError):
            ApparatusParams(epsilon=-1.0)
        with pytest.raises(ValidationError):
            ApparatusParams(temperature=0.0)
        with pytest.raises(ValidationError):
            ApparatusParams(gama=1.0)
        with pytest.raises(ValidationError):
            ApparatusParams(lam=math.inf)

    def test_frozen(self):
        p = ApparatusParams()
        with pytest.raises(ValidationError):
            p.gamma = 2.0

    def test_with_field(self):
        """
        Test that with_field returns an updated copy
        """
        p = ApparatusParams(mu=2.0)
        moved = p.with_field(np.array([1.0, 0.0, 0.0]))
        assert moved.field == (1.0, 0.0, 0.0)
        assert moved.mu == 2.0
        assert p.field == (0.0, 0.0, 1.0)


class TestResultModels:
    """
    Test cases for the result models
    """

    def test_measurement_summary_defaults(self):
        summary = MeasurementSummary(n=10, p_plus=0.5, p_minus=0.4, p_undecided=0.1, stderr=0.16)
        assert summary.median_decision_time is None
        assert summary.warnings == []

    def test_undecided_fraction(self):
        assert make_estimate().undecided_fraction == pytest.approx(0.01)
        empty = CorrelationEstimate(
            correlation=0.0, stderr=0.0, n_decided=0, n_undecided=0, marginal_plus=(0.0, 0.0)
        )
        assert empty.undecided_fraction == 0.0

    def test_chsh_needs_four_estimates(self):
        """
        Test that a CHSH result carries exactly four estimates
        """
        estimates = [make_estimate(label=str(i)) for i in range(4)]
        result = ChshResult(estimates=estimates, statistic=1.0, stderr=0.04, violation=False)
        assert result.oracle_statistic is None
        with pytest.raises(ValidationError, match="four"):
            ChshResult(estimates=estimates[:3], statistic=1.0, stderr=0.04, violation=False)

    def test_spectrum_lengths_and_positivity(self):
        """
        Test SpectrumResult consistency checks
        """
        result = SpectrumResult(
            k=[1.0, 10.0], power=[0.1, 0.2], stderr=[0.01, 0.02], reference=0.025
        )
        assert result.warnings == []
        with pytest.raises(ValidationError, match="same length"):
            SpectrumResult(k=[1.0], power=[0.1, 0.2], stderr=[0.01], reference=0.025)
        with pytest.raises(ValidationError, match="non-negative"):
            SpectrumResult(k=[1.0], power=[-0.1], stderr=[0.01], reference=0.025)

    def test_json_round_trip(self):
        summary = MeasurementSummary(
            n=4, p_plus=0.75, p_minus=0.25, p_undecided=0.0, stderr=0.25, warnings=["w"]
        )
        assert MeasurementSummary.model_validate_json(summary.model_dump_json()) == summary
