import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import beta as beta_dist
from scipy.stats import poisson

from app.distributions import (
    BetaLaw, BetaParams, ConvolvedLaw, MixtureLaw, MixtureSpec, QuantileTable, beta_cdf,
    beta_moments, beta_pdf, beta_quantile, density_rows, mixture_cdf, mixture_moments, mixture_pdf,
    mixture_quantile, mixture_weights, parse_quantile_table, poisson_masses, quantile_table,
    render_quantile_table, seed_form_moments, solve_quantile, urn_beta_params,
)
from app.errors import BoundaryMassError, DomainError, QuantileConvergenceError, ShapeError


# ---- beta law ----
def test_beta_pdf_examples():
    assert beta_pdf(0.37, BetaParams(1, 1)) == pytest.approx(1.0)
    assert beta_pdf(0.5, BetaParams(4, 4)) == pytest.approx(140 / 64)
    for t in (0.1, 0.3, 0.45):
        assert beta_pdf(t, BetaParams(4, 4)) == pytest.approx(beta_pdf(1 - t, BetaParams(4, 4)), rel=1e-12)


def test_beta_pdf_vectorised():
    grid = np.linspace(0, 1, 11)
    values = beta_pdf(grid, BetaParams(2, 3))
    assert values.shape == grid.shape
    assert values == pytest.approx(beta_dist.pdf(grid, 2, 3), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("shape", [0.5, 1.0, 4.0, 50.0])
def test_beta_pdf_integrates_to_one(shape):
    params = BetaParams(shape, 2.0)
    value, _ = integrate.quad(lambda t: beta_pdf(t, params), 0, 1, epsabs=1e-12, limit=200)
    assert value == pytest.approx(1.0, abs=1e-9)


def test_domain_and_shape_errors():
    with pytest.raises(DomainError):
        beta_pdf(-0.1, BetaParams(1, 1))
    with pytest.raises(DomainError):
        beta_cdf(1.5, BetaParams(1, 1))
    with pytest.raises(ShapeError):
        BetaParams(0, 1)
    with pytest.raises(ShapeError):
        BetaParams(1, 1, epsilon=-1.0)
    with pytest.raises(DomainError):
        beta_quantile(0.0, BetaParams(1, 1))
    with pytest.raises(DomainError):
        beta_quantile(1.0, BetaParams(1, 1))


def test_beta_moments():
    assert beta_moments(BetaParams(1, 1)) == pytest.approx((0.5, 1 / 12))
    assert beta_moments(BetaParams(4, 4)) == pytest.approx((0.5, 1 / 36))
    mean, _ = beta_moments(BetaParams(1, 1, 0.2))
    assert mean == pytest.approx(1.2 / 2.2)


def test_seed_form_moments_differ_from_shifted_law():
    assert seed_form_moments(3, 3) == pytest.approx((0.5, 1 / 28))
    assert seed_form_moments(1, 3)[0] == pytest.approx(0.25)
    assert beta_moments(urn_beta_params(1, 3))[0] == pytest.approx(2 / 6)
    with pytest.raises(DomainError):
        seed_form_moments(0, 0)


def test_urn_beta_params():
    assert urn_beta_params(3, 3) == BetaParams(4, 4)
    assert urn_beta_params(0, 0, epsilon=0.2) == BetaParams(1, 1, 0.2)
    assert urn_beta_params(2, 4, c=2) == BetaParams(1.5, 2.5)
    with pytest.raises(DomainError):
        urn_beta_params(1, 1, c=0)


def test_beta_cdf_examples():
    assert beta_cdf(0.5, BetaParams(4, 4)) == pytest.approx(0.5, abs=1e-14)
    assert beta_cdf(0.3, BetaParams(1, 1)) == pytest.approx(0.3, abs=1e-14)
    assert beta_cdf(1 / math.sqrt(2), BetaParams(2, 1)) == pytest.approx(0.5, abs=1e-14)
    assert beta_cdf(0.0, BetaParams(2, 3)) == 0.0
    assert beta_cdf(1.0, BetaParams(2, 3)) == 1.0


def test_beta_quantile_examples():
    assert beta_quantile(0.5, BetaParams(4, 4)) == pytest.approx(0.5, abs=1e-10)
    assert beta_quantile(0.25, BetaParams(1, 1)) == pytest.approx(0.25, abs=1e-10)
    assert beta_quantile(0.5, BetaParams(2, 1)) == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    # Beta(1.2, 1) has CDF t^1.2
    assert beta_quantile(0.5, BetaParams(1, 1, 0.2)) == pytest.approx(0.5 ** (1 / 1.2), abs=1e-10)


def test_biased_quantile_against_independent_bisection():
    params = BetaParams(1, 1, 0.2)

    def cdf(x):
        value, _ = integrate.quad(lambda t: beta_pdf(t, params), 0, x, epsabs=1e-13)
        return value

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if cdf(mid) < 0.5 else (lo, mid)
    assert beta_quantile(0.5, params) == pytest.approx(0.5 * (lo + hi), abs=1e-9)


@pytest.mark.parametrize("params", [BetaParams(1, 1), BetaParams(4, 4), BetaParams(0.5, 3), BetaParams(5, 2, 0.3)])
def test_quantile_round_trip(params):
    for xi in (0.001, 0.01, 0.2, 0.5, 0.8, 0.99, 0.999):
        assert beta_cdf(beta_quantile(xi, params), params) == pytest.approx(xi, abs=1e-10)
    for t in (0.05, 0.4, 0.77):
        assert beta_quantile(beta_cdf(t, params), params) == pytest.approx(t, abs=1e-8)


def test_epsilon_equivariance():
    for t in (0.1, 0.5, 0.9):
        assert beta_pdf(t, BetaParams(2, 3, 0.5)) == beta_pdf(t, BetaParams(3, 3))
        assert beta_cdf(t, BetaParams(2, 3, 0.5)) == beta_cdf(t, BetaParams(3, 3))


def test_solver_reports_bracket_when_level_unreachable():
    with pytest.raises(QuantileConvergenceError) as info:
        solve_quantile(lambda x: 0.6, 0.5)
    assert info.value.bracket == (0.0, 1.0)


# ---- Poisson mixture ----
def test_poisson_masses():
    assert poisson_masses(0.0).tolist() == [1.0]
    masses = poisson_masses(2.0)
    assert masses.sum() == pytest.approx(1.0, abs=1e-15)
    assert masses[:5] == pytest.approx(poisson.pmf(np.arange(5), 2.0), rel=1e-11)


def test_mixture_weights_sum_to_one_and_are_read_only():
    weights = mixture_weights(MixtureSpec(1.0, 3.0))
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        weights[0, 0] = 0.5


def test_vacuum_mixture_is_uniform():
    grid = np.linspace(0, 1, 101)
    assert np.max(np.abs(mixture_pdf(grid, MixtureSpec(0.0, 0.0)) - 1.0)) <= 1e-10
    assert mixture_quantile(0.3, MixtureSpec(0.0, 0.0)) == pytest.approx(0.3, abs=1e-10)


def test_mixture_matches_wide_double_sum():
    spec = MixtureSpec(2.0, 2.0)
    n = np.arange(61)
    pn = poisson.pmf(n, 2.0)
    weights = np.outer(pn, pn)
    for t in (0.05, 0.3, 0.5, 0.81):
        brute = float(np.sum(weights * beta_dist.pdf(t, n[:, None] + 1.0, n[None, :] + 1.0)))
        assert mixture_pdf(t, spec) == pytest.approx(brute, abs=1e-9)


def test_mixture_is_symmetric_and_normalised():
    spec = MixtureSpec(1.0, 3.0)
    for t in (0.1, 0.25, 0.4):
        assert mixture_pdf(t, spec) == pytest.approx(mixture_pdf(1 - t, spec), rel=1e-12)
    value, _ = integrate.quad(lambda t: mixture_pdf(t, spec), 0, 1, limit=200)
    assert value == pytest.approx(1.0, abs=1e-6)
    assert mixture_quantile(0.5, spec) == pytest.approx(0.5, abs=1e-8)
    assert mixture_moments(spec)[0] == pytest.approx(0.5, abs=1e-12)


def test_mixture_cdf_matches_quadrature():
    spec = MixtureSpec(2.0, 2.0)
    for t in (0.2, 0.6, 0.9):
        value, _ = integrate.quad(lambda x: mixture_pdf(x, spec), 0, t, epsabs=1e-12, limit=200)
        assert mixture_cdf(t, spec) == pytest.approx(value, abs=1e-9)


def test_mixture_quantile_against_sampling():
    spec = MixtureSpec(2.0, 2.0)
    q = mixture_quantile(0.25, spec)
    rng = np.random.default_rng(2024)
    weights = mixture_weights(spec)
    n_samples = 1_000_000
    flat = rng.choice(weights.size, size=n_samples, p=weights.ravel() / weights.sum())
    n, m = np.unravel_index(flat, weights.shape)
    samples = rng.beta(n + 1.0, m + 1.0)
    observed = np.mean(samples < q)
    assert abs(observed - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n_samples)


def test_unbalanced_splitter_shifts_mean_towards_blue():
    mean, _ = mixture_moments(MixtureSpec(2.0, 2.0, splitter_ratio=0.8))
    assert mean > 0.5
    assert not MixtureSpec(2.0, 2.0, splitter_ratio=0.8).symmetric


def test_mixture_spec_validation():
    with pytest.raises(DomainError):
        MixtureSpec(3.0, 1.0)
    with pytest.raises(DomainError):
        MixtureSpec(0.0, 1.0, truncation_mass=0.0)
    with pytest.raises(DomainError):
        MixtureSpec(splitter_ratio=1.0)


# ---- law handles and quantile tables ----
def test_convolved_law_with_narrow_noise_tracks_base():
    base = BetaLaw(BetaParams(4, 4))
    law = ConvolvedLaw(base, 1e-4)
    for x in (0.2, 0.5, 0.7):
        assert law.cdf(x) == pytest.approx(base.cdf(x), abs=1e-6)
    assert law.ppf(0.5) == pytest.approx(0.5, abs=1e-8)


def test_convolved_law_atoms_and_moments():
    sigma = 0.05
    law = ConvolvedLaw(BetaLaw(BetaParams(1, 1)), sigma)
    low, high = law.atoms()
    # for a uniform base each edge holds sigma / sqrt(2 pi)
    assert low == pytest.approx(sigma / math.sqrt(2 * math.pi), rel=1e-6)
    assert high == pytest.approx(low, rel=1e-6)
    mean, var = law.moments()
    assert mean == pytest.approx(0.5, abs=1e-9)
    # each clamped edge removes sigma^2/4 + sigma^3 E[g+^3]/3 from the unclamped variance
    assert var == pytest.approx(1 / 12 + sigma ** 2 / 2 - 4 * sigma ** 3 / (3 * math.sqrt(2 * math.pi)), abs=1e-7)
    assert law.unclamped_moments() == pytest.approx((0.5, 1 / 12 + sigma ** 2))


def test_quantile_table_refuses_levels_inside_an_edge_atom():
    law = ConvolvedLaw(BetaLaw(BetaParams(1, 1)), 0.05)
    # each edge atom is about 0.02: below 1/32, above 1/64
    table = quantile_table(law, 5)
    assert law.cdf(table.thresholds[0]) == pytest.approx(1 / 32, abs=1e-9)
    assert law.cdf(table.thresholds[-1]) == pytest.approx(31 / 32, abs=1e-9)
    with pytest.raises(BoundaryMassError) as info:
        quantile_table(law, 6)
    assert info.value.low == pytest.approx(law.atoms()[0])


def test_convolved_law_rejects_zero_sigma():
    with pytest.raises(DomainError):
        ConvolvedLaw(BetaLaw(BetaParams(1, 1)), 0.0)


def test_tabulated_law_follows_convolved_cdf():
    law = ConvolvedLaw(BetaLaw(BetaParams(4, 4)), 0.02)
    table = law.tabulate(257)
    for x in (0.3, 0.5, 0.65):
        assert table.cdf(x) == pytest.approx(law.cdf(x), abs=1e-4)
    assert table.cdf(-0.1) == 0.0
    assert table.cdf(1.1) == 1.0


@pytest.mark.parametrize("n_bits", [1, 2, 3])
def test_quantile_cells_are_equiprobable(n_bits):
    law = BetaLaw(BetaParams(1, 1, 0.2))
    table = quantile_table(law, n_bits)
    edges = [0.0, *table.thresholds, 1.0]
    masses = np.diff([law.cdf(e) for e in edges])
    assert masses == pytest.approx(np.full(2 ** n_bits, 2.0 ** -n_bits), abs=1e-9)


def test_mixture_law_quantile_table():
    table = quantile_table(MixtureLaw(MixtureSpec(1.0, 3.0)), 1)
    assert table.thresholds[0] == pytest.approx(0.5, abs=1e-8)


def test_quantile_table_validation():
    with pytest.raises(DomainError):
        QuantileTable(2, (0.25, 0.5))
    with pytest.raises(DomainError):
        QuantileTable(1, (1.0,))
    with pytest.raises(DomainError):
        QuantileTable(2, (0.5, 0.25, 0.75))


def test_quantile_table_text_round_trip():
    table = quantile_table(BetaLaw(BetaParams(4, 4)), 2)
    text = render_quantile_table(table)
    assert text.startswith("# n_bits=2\n")
    assert parse_quantile_table(text) == table


def test_density_rows():
    rows = density_rows(BetaLaw(BetaParams(1, 1)), 5)
    assert [r[0] for r in rows] == ["0", "0.25", "0.5", "0.75", "1"]
    assert all(float(r[1]) == pytest.approx(1.0) for r in rows)
    assert float(rows[-1][2]) == 1.0
