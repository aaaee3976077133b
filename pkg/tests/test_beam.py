import numpy as np
import pytest
from scipy import stats

from bifid.beam import (
    HIGHFI,
    LOWFI,
    NOMINAL_SI,
    BeamGeometry,
    BeamInputs,
    HighFiConfig,
    InputDistribution,
    beam_highfi_surrogate,
    beam_lowfi_deflection,
    beam_lowfi_tip,
    default_distribution,
    generate_dataset,
    homogenized_EI,
    sample_inputs,
)
from bifid.datasets import read_csv, write_csv
from bifid.errors import ConfigurationError, DomainError
from bifid.seeding import DATA, stream

GEOM = BeamGeometry()
NOMINAL = BeamInputs(q=10.0, E1=1.0, E2=1.0, E3=10.0)

# hand-computed via the transformed section (n1 = n2 = 100):
# I = 2*(100*0.1^3/12) + 2*(10*2.55^2) + 5^3/12 = 8429/60, EI = 1e4 * I
EI_NOMINAL = 1404833.3333333333
TIP_NOMINAL = -5561.157907225057  # -q L^4 / (8 EI) = -6.25e10 / 1.1238666e7


def random_inputs(rng) -> BeamInputs:
    lo, hi = default_distribution().lowers, default_distribution().uppers
    row = rng.uniform(lo, hi)
    return BeamInputs.from_si_row(row)


class TestInputsAndGeometry:
    def test_si_round_trip(self):
        x = BeamInputs(q=10.7, E1=1.05, E2=0.92, E3=9.3)
        row = x.to_si_row()
        np.testing.assert_allclose(row, [10.7e3, 1.05e6, 0.92e6, 9.3e3], rtol=1e-15)
        back = BeamInputs.from_si_row(row)
        assert back == x

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            BeamInputs(q=0.0, E1=1.0, E2=1.0, E3=10.0)
        with pytest.raises(DomainError):
            BeamInputs(q=10.0, E1=-1.0, E2=1.0, E3=10.0)
        with pytest.raises(DomainError):
            BeamGeometry(h3=0.0)

    def test_si_row_shape_checked(self):
        with pytest.raises(ConfigurationError):
            BeamInputs.from_si_row(np.ones(3))

    def test_distribution_validation(self):
        with pytest.raises(ConfigurationError):
            InputDistribution(lowers=np.array([1.0, 2.0]), uppers=np.array([2.0, 2.0]))
        with pytest.raises(ConfigurationError):
            InputDistribution(lowers=np.array([-1.0]), uppers=np.array([1.0]))


class TestHomogenizedEI:
    def test_nominal_value(self):
        np.testing.assert_allclose(homogenized_EI(NOMINAL, GEOM), EI_NOMINAL, rtol=1e-12)

    def test_homogeneous_limit_is_rectangle(self):
        # equal moduli collapse the transformed section to w H^3 / 12
        rng = stream(41, 0)
        for _ in range(20):
            e = float(rng.uniform(0.5, 50.0))
            x = BeamInputs(q=10.0, E1=e, E2=e, E3=e * 1e3)  # same Pa via unit mix
            H = GEOM.h1 + GEOM.h2 + GEOM.h3
            expected = e * 1e6 * GEOM.width * H**3 / 12.0
            np.testing.assert_allclose(homogenized_EI(x, GEOM), expected, rtol=1e-12)

    def test_monotone_in_each_modulus(self):
        base = BeamInputs(q=10.0, E1=1.0, E2=1.0, E3=10.0)
        for field in ("E1", "E2", "E3"):
            bumped = BeamInputs(**{**base.__dict__, field: getattr(base, field) * 1.07})
            assert homogenized_EI(bumped, GEOM) > homogenized_EI(base, GEOM)

    def test_swap_symmetry_for_equal_flanges(self):
        # h1 == h2, so exchanging the flange moduli keeps the stiffness
        a = BeamInputs(q=10.0, E1=1.08, E2=0.93, E3=10.0)
        b = BeamInputs(q=10.0, E1=0.93, E2=1.08, E3=10.0)
        np.testing.assert_allclose(homogenized_EI(a, GEOM), homogenized_EI(b, GEOM), rtol=1e-12)


class TestLowFiDeflection:
    def test_clamped_end_is_zero(self):
        assert beam_lowfi_deflection(NOMINAL, 0.0, GEOM) == 0.0

    def test_tip_closed_form(self):
        np.testing.assert_allclose(beam_lowfi_tip(NOMINAL, GEOM), TIP_NOMINAL, rtol=1e-12)
        # polynomial evaluated at x = L agrees with -q L^4 / (8 EI)
        rng = stream(42, 0)
        for _ in range(20):
            x = random_inputs(rng)
            np.testing.assert_allclose(
                beam_lowfi_deflection(x, GEOM.length, GEOM), beam_lowfi_tip(x, GEOM), rtol=1e-12
            )

    def test_midspan_closed_form(self):
        # u(L/2) = -(17/384) q L^4 / EI = (17/48) * tip
        rng = stream(43, 0)
        for _ in range(20):
            x = random_inputs(rng)
            got = beam_lowfi_deflection(x, GEOM.length / 2.0, GEOM)
            np.testing.assert_allclose(got, beam_lowfi_tip(x, GEOM) * 17.0 / 48.0, rtol=1e-12)

    def test_linearity_in_load(self):
        rng = stream(44, 0)
        for _ in range(10):
            x = random_inputs(rng)
            double = BeamInputs(q=2.0 * x.q, E1=x.E1, E2=x.E2, E3=x.E3)
            np.testing.assert_allclose(
                beam_lowfi_tip(double, GEOM), 2.0 * beam_lowfi_tip(x, GEOM), rtol=1e-12
            )

    def test_tip_scales_inversely_with_moduli(self):
        rng = stream(45, 0)
        for _ in range(10):
            x = random_inputs(rng)
            c = float(rng.uniform(1.5, 4.0))
            stiff = BeamInputs(q=x.q, E1=c * x.E1, E2=c * x.E2, E3=c * x.E3)
            np.testing.assert_allclose(
                beam_lowfi_tip(stiff, GEOM), beam_lowfi_tip(x, GEOM) / c, rtol=1e-12
            )

    def test_tip_ei_over_q_constant(self):
        rng = stream(46, 0)
        ref = -GEOM.length**4 / 8.0
        for _ in range(10):
            x = random_inputs(rng)
            val = beam_lowfi_tip(x, GEOM) * homogenized_EI(x, GEOM) / x.to_si_row()[0]
            np.testing.assert_allclose(val, ref, rtol=1e-12)

    def test_deflection_monotone_along_span(self):
        xs = np.linspace(0.0, GEOM.length, 40)
        us = [beam_lowfi_deflection(NOMINAL, float(x), GEOM) for x in xs]
        assert all(b < a for a, b in zip(us, us[1:]))  # downward, growing toward the tip

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            beam_lowfi_deflection(NOMINAL, -0.1, GEOM)
        with pytest.raises(DomainError):
            beam_lowfi_deflection(NOMINAL, GEOM.length + 0.1, GEOM)


class TestHighFiStandIn:
    def test_nominal_corrections_vanish(self):
        # all corrections are zero at the nominal inputs
        assert beam_highfi_surrogate(NOMINAL, GEOM) == beam_lowfi_tip(NOMINAL, GEOM)

    def test_frozen_point(self):
        x = BeamInputs(q=10.7, E1=1.05, E2=0.92, E3=9.3)
        np.testing.assert_allclose(beam_lowfi_tip(x, GEOM), -6086.102342712843, rtol=1e-12)
        np.testing.assert_allclose(
            beam_highfi_surrogate(x, GEOM), -6048.1802969820073, rtol=1e-12
        )

    def test_not_a_function_of_lowfi_output(self):
        # swapping the flange moduli preserves y_l but must move y_h
        a = BeamInputs(q=10.0, E1=1.08, E2=0.93, E3=10.0)
        b = BeamInputs(q=10.0, E1=0.93, E2=1.08, E3=10.0)
        np.testing.assert_allclose(beam_lowfi_tip(a, GEOM), beam_lowfi_tip(b, GEOM), rtol=1e-12)
        assert abs(beam_highfi_surrogate(a, GEOM) - beam_highfi_surrogate(b, GEOM)) > 1.0

    def test_rank_correlation_with_lowfi(self):
        rng = stream(47, 0)
        X = sample_inputs(default_distribution(), 1000, rng)
        yl = np.array([beam_lowfi_tip(BeamInputs.from_si_row(r), GEOM) for r in X])
        yh = np.array([beam_highfi_surrogate(BeamInputs.from_si_row(r), GEOM) for r in X])
        rho = stats.spearmanr(yl, yh).statistic
        assert rho > 0.95

    def test_deviation_is_present_but_small(self):
        rng = stream(48, 0)
        X = sample_inputs(default_distribution(), 500, rng)
        yl = np.array([beam_lowfi_tip(BeamInputs.from_si_row(r), GEOM) for r in X])
        yh = np.array([beam_highfi_surrogate(BeamInputs.from_si_row(r), GEOM) for r in X])
        dev = np.std(yh - yl) / abs(np.mean(yl))
        assert 0.001 < dev < 0.02

    def test_c2_default_and_override(self):
        auto = HighFiConfig().resolved_c2(GEOM)
        np.testing.assert_allclose(auto, 0.05 * abs(TIP_NOMINAL), rtol=1e-12)
        assert HighFiConfig(c2=3.0).resolved_c2(GEOM) == 3.0

    def test_nominal_constants_are_box_midpoint(self):
        d = default_distribution()
        np.testing.assert_allclose(NOMINAL_SI, (d.lowers + d.uppers) / 2.0, rtol=1e-15)


class TestSamplingAndDatasets:
    def test_samples_inside_box_and_deterministic(self):
        d = default_distribution()
        X1 = sample_inputs(d, 200, stream(7, DATA))
        X2 = sample_inputs(d, 200, stream(7, DATA))
        assert X1.shape == (200, 4)
        assert np.all(X1 >= d.lowers) and np.all(X1 <= d.uppers)
        np.testing.assert_array_equal(X1, X2)
        X3 = sample_inputs(d, 200, stream(8, DATA))
        assert not np.array_equal(X1, X3)

    def test_generate_matches_scalar_evaluation(self):
        d = default_distribution()
        data_l = generate_dataset(LOWFI, d, 16, stream(9, DATA), GEOM)
        data_h = generate_dataset(HIGHFI, d, 16, stream(9, DATA), GEOM)
        np.testing.assert_array_equal(data_l.inputs, data_h.inputs)  # same draw
        for i in range(16):
            x = BeamInputs.from_si_row(data_l.inputs[i])
            assert data_l.outputs[i] == beam_lowfi_tip(x, GEOM)
            assert data_h.outputs[i] == beam_highfi_surrogate(x, GEOM)

    def test_generate_rejects_unknown_model(self):
        with pytest.raises(ConfigurationError):
            generate_dataset("midfi", default_distribution(), 4, stream(1, DATA))

    def test_csv_round_trip(self, tmp_path):
        data = generate_dataset(HIGHFI, default_distribution(), 12, stream(10, DATA), GEOM)
        path = tmp_path / "beam.csv"
        write_csv(data, path)
        back = read_csv(path)
        np.testing.assert_array_equal(back.inputs, data.inputs)
        np.testing.assert_array_equal(back.outputs, data.outputs)
