import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelsmc import ParamSpec, ParamVector, from_estimation_scale, to_estimation_scale
from panelsmc.params import inverse_transform_array, perturbation_sds, transform_array


def spec3():
    return (
        ParamSpec("rate", role="shared", transform="log"),
        ParamSpec("frac", role="unit_specific", transform="logit"),
        ParamSpec("shift", role="shared", transform="identity"),
    )


class TestParamSpec:
    def test_fixed_forces_zero_sd(self):
        s = ParamSpec("c", role="fixed", transform="identity", perturbation_sd=0.5)
        assert s.perturbation_sd == 0.0

    def test_fixed_constructor(self):
        s = ParamSpec.fixed("mu")
        assert s.role == "fixed" and s.transform == "identity" and s.perturbation_sd == 0.0

    def test_rejects_unknown_role_and_transform(self):
        with pytest.raises(ValueError, match="role"):
            ParamSpec("x", role="global")
        with pytest.raises(ValueError, match="transform"):
            ParamSpec("x", transform="sqrt")

    def test_rejects_negative_sd(self):
        with pytest.raises(ValueError, match="perturbation_sd"):
            ParamSpec("x", perturbation_sd=-0.1)


class TestParamVector:
    def test_exact_key_match_enforced(self):
        spec = spec3()
        with pytest.raises(ValueError, match="missing"):
            ParamVector({"rate": 1.0, "frac": 0.5}, spec)
        with pytest.raises(ValueError, match="unknown"):
            ParamVector({"rate": 1.0, "frac": 0.5, "shift": 0.0, "bogus": 1.0}, spec)

    def test_as_array_follows_spec_order(self):
        pv = ParamVector({"shift": -2.0, "rate": 3.0, "frac": 0.25}, spec3())
        assert pv.as_array().tolist() == [3.0, 0.25, -2.0]

    def test_replace(self):
        pv = ParamVector({"rate": 1.0, "frac": 0.5, "shift": 0.0}, spec3())
        pv2 = pv.replace(rate=2.0)
        assert pv2["rate"] == 2.0 and pv["rate"] == 1.0
        with pytest.raises(ValueError):
            pv.replace(nope=1.0)


class TestTransforms:
    def test_identity_case(self):
        pv = ParamVector({"rate": 1.0, "frac": 0.5, "shift": 3.5}, spec3())
        assert to_estimation_scale(pv)[2] == 3.5

    def test_log_of_one_is_zero(self):
        pv = ParamVector({"rate": 1.0, "frac": 0.5, "shift": 0.0}, spec3())
        assert to_estimation_scale(pv)[0] == 0.0

    def test_logit_midpoint_is_zero(self):
        pv = ParamVector({"rate": 1.0, "frac": 0.5, "shift": 0.0}, spec3())
        assert to_estimation_scale(pv)[1] == 0.0

    def test_inverse_examples(self):
        spec = spec3()
        back = from_estimation_scale([0.0, 0.0, 1.5], spec)
        assert back["rate"] == pytest.approx(1.0)
        assert back["frac"] == pytest.approx(0.5)
        assert back["shift"] == 1.5

    def test_headline_value_round_trip(self):
        spec = (ParamSpec("juvenile_birth", transform="log"),)
        pv = ParamVector({"juvenile_birth": 40.8}, spec)
        rt = from_estimation_scale(to_estimation_scale(pv), spec)
        assert rt["juvenile_birth"] == pytest.approx(40.8, rel=1e-12)

    def test_domain_violation_names_parameter(self):
        pv = ParamVector({"rate": 0.0, "frac": 0.5, "shift": 0.0}, spec3())
        with pytest.raises(ValueError, match="rate"):
            to_estimation_scale(pv)
        pv = ParamVector({"rate": 1.0, "frac": 1.5, "shift": 0.0}, spec3())
        with pytest.raises(ValueError, match="frac"):
            to_estimation_scale(pv)

    def test_fixed_entries_included_and_flagged(self):
        spec = (ParamSpec("a", transform="log"), ParamSpec.fixed("b"))
        pv = ParamVector({"a": 2.0, "b": 0.0}, spec)
        assert to_estimation_scale(pv).shape == (2,)
        assert perturbation_sds(spec).tolist() == [0.02, 0.0]

    @given(
        rate=st.floats(1e-6, 1e6),
        frac=st.floats(1e-6, 1 - 1e-6),
        shift=st.floats(-1e6, 1e6),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, rate, frac, shift):
        spec = spec3()
        pv = ParamVector({"rate": rate, "frac": frac, "shift": shift}, spec)
        back = from_estimation_scale(to_estimation_scale(pv), spec)
        for name in ("rate", "frac", "shift"):
            a, b = pv[name], back[name]
            assert b == pytest.approx(a, rel=1e-12, abs=1e-300)

    def test_array_transforms_match_vector_path(self, rng):
        spec = spec3()
        nat = np.column_stack(
            [rng.uniform(0.1, 5, 8), rng.uniform(0.1, 0.9, 8), rng.normal(size=8)]
        )
        est = transform_array(nat, spec)
        back = inverse_transform_array(est, spec)
        np.testing.assert_allclose(back, nat, rtol=1e-12)
