"""Discrete operators: allocation rules, mass ledgers, weak-form identities."""

import numpy as np
import pytest

from coagfrag.grid import State, exponential_ic, make_grid, moments, project
from coagfrag.kernel import (
    AssumptionViolation,
    CoefficientSpec,
    PowerLawDaughter,
    TabulatedDaughter,
    b_ln,
)
from coagfrag.operators import (
    StepLedger,
    TruncationSpec,
    build_tables,
    coagulation_rhs,
    eval_rates,
    fragmentation_rhs,
    naive_coagulation_rhs,
    weak_form_terms,
)

CANONICAL = CoefficientSpec(lam=2.0, alpha=1.0, K0=1.0, a0=1.0,
                            daughter=PowerLawDaughter(0.0))

SPECS = [
    CANONICAL,
    CoefficientSpec(lam=1.5, alpha=0.7, K0=0.8, a0=1.3,
                    daughter=PowerLawDaughter(-0.5)),
    CoefficientSpec(lam=1.9, alpha=0.95, K0=1.0, a0=2.0,
                    daughter=PowerLawDaughter(-1.0)),
    CoefficientSpec(lam=1.8, alpha=0.9, K0=2.0, a0=0.5,
                    daughter=PowerLawDaughter(-1.7)),
]


def random_state(grid, rng, scale=1.0):
    vals = scale * rng.uniform(size=grid.n)
    vals[rng.uniform(size=grid.n) < 0.2] = 0.0   # exercise empty-cell paths
    return State(grid, vals)


def gross(ledger: StepLedger) -> float:
    return (ledger.coag_gain_mass + ledger.coag_loss_mass
            + ledger.coag_mass_flux_out + ledger.frag_loss_mass)


# ---------------------------------------------------------------------------
# truncation spec


def test_truncation_spec_validation():
    with pytest.raises(ValueError):
        TruncationSpec.cutoff(0.0)
    with pytest.raises(ValueError):
        TruncationSpec.cutoff(float("inf"))
    with pytest.raises(ValueError):
        TruncationSpec(j=1.0, mode="none")
    with pytest.raises(ValueError):
        TruncationSpec(j=1.0, mode="delete")
    g = make_grid(1.0, 100.0, 16)
    assert TruncationSpec.none().resolve(g) == 100.0
    assert TruncationSpec.cutoff(50.0).resolve(g) == 50.0
    with pytest.raises(ValueError):
        TruncationSpec.cutoff(200.0).resolve(g)


def test_build_tables_validates_spec():
    g = make_grid(1.0, 100.0, 16)
    bad = CoefficientSpec(lam=1.5, alpha=0.9)
    with pytest.raises(AssumptionViolation):
        build_tables(g, bad, TruncationSpec.none())


# ---------------------------------------------------------------------------
# basic structure


def test_zero_state_zero_rhs():
    g = make_grid(1e-2, 1e2, 64)
    st = State(g, np.zeros(64))
    for fn in (coagulation_rhs, fragmentation_rhs):
        rhs, ledger = fn(st, CANONICAL, TruncationSpec.cutoff(10.0))
        assert np.all(rhs == 0.0)
        assert gross(ledger) == 0.0


def test_all_pairs_beyond_threshold_leaves_only_loss():
    # centers 1.5 and 2.5 with j = 2.9: every pair sum exceeds j
    g = make_grid(1.0, 3.0, 2, kind="uniform")
    st = State(g, np.array([2.0, 1.0]))
    rhs, ledger = coagulation_rhs(st, CANONICAL, TruncationSpec.cutoff(2.9))
    assert np.all(rhs < 0.0)
    mass_rate = np.sum(g.centers * rhs * g.widths)
    assert mass_rate == pytest.approx(-ledger.coag_mass_flux_out, rel=1e-14)
    assert ledger.coag_gain_mass == 0.0


def test_cells_above_threshold_are_frozen():
    g = make_grid(1.0, 64.0, 12, kind="geometric")
    rng = np.random.default_rng(1811)
    st = random_state(g, rng)
    j = float(g.centers[7])
    tabs = build_tables(g, CANONICAL, TruncationSpec.cutoff(j))
    rhs, _, lossrate = eval_rates(st.values, tabs)
    assert tabs.nb == 8
    assert np.all(rhs[8:] == 0.0)
    assert np.all(lossrate[8:] == 0.0)


def test_threshold_below_grid_freezes_everything():
    g = make_grid(1.0, 64.0, 12)
    st = State(g, np.ones(12))
    rhs, ledger = coagulation_rhs(st, CANONICAL, TruncationSpec.cutoff(1.05))
    assert np.all(rhs == 0.0) and gross(ledger) == 0.0


def test_sliver_pairs_keep_their_mass():
    # the (0,0) pair sum lands past the last representative but below j, so
    # its full mass stays in the top cell; the other pairs exceed j
    g = make_grid(1.0, 3.5, 2, kind="uniform")
    x0, x1 = g.centers
    w0, w1 = g.widths
    j = 2.0 * x0 + 0.05
    assert x1 < 2.0 * x0 <= j < x0 + x1
    f0, f1 = 2.0, 0.5
    st = State(g, np.array([f0, f1]))
    spec = CANONICAL
    rhs, ledger = coagulation_rhs(st, spec, TruncationSpec.cutoff(j))
    k00 = 2.0 * spec.K0 * x0 * x0
    expected_gain = 0.5 * k00 * (f0 * w0) ** 2 * (2.0 * x0)
    assert ledger.coag_gain_mass == pytest.approx(expected_gain, rel=1e-14)
    k01 = 2.0 * spec.K0 * x0 * x1
    k11 = 2.0 * spec.K0 * x1 * x1
    expected_flux = (k01 * (f0 * w0) * (f1 * w1) * (x0 + x1)
                     + 0.5 * k11 * (f1 * w1) ** 2 * (2.0 * x1))
    assert ledger.coag_mass_flux_out == pytest.approx(expected_flux, rel=1e-14)
    assert rhs[1] * w1 * x1 + rhs[0] * w0 * x0 == pytest.approx(
        -expected_flux, rel=1e-14)


# ---------------------------------------------------------------------------
# ledger identities and the naive oracle


@pytest.mark.parametrize("spec", SPECS)
def test_coagulation_mass_identity(spec):
    rng = np.random.default_rng(1812)
    g = make_grid(1e-3, 1e3, 480, kind="geometric")
    for j in (5.0, 100.0, None):
        trunc = TruncationSpec.none() if j is None else TruncationSpec.cutoff(j)
        tabs = build_tables(g, spec, trunc, include_frag=False)
        for _ in range(5):
            st = random_state(g, rng)
            rhs, ledger, _ = eval_rates(st.values, tabs)
            mass_rate = float(np.sum(g.centers * rhs * g.widths))
            assert abs(mass_rate + ledger.coag_mass_flux_out) <= 1e-12 * gross(ledger)


@pytest.mark.parametrize("spec", SPECS)
def test_fast_path_matches_naive_oracle(spec):
    rng = np.random.default_rng(1813)
    g = make_grid(1e-2, 1e2, 320, kind="geometric")
    for j in (3.0, 50.0, None):
        trunc = TruncationSpec.none() if j is None else TruncationSpec.cutoff(j)
        st = random_state(g, rng)
        rhs_fast, led_fast = coagulation_rhs(st, spec, trunc)
        rhs_naive, led_naive = naive_coagulation_rhs(st, spec, trunc)
        scale = np.max(np.abs(rhs_naive))
        assert np.max(np.abs(rhs_fast - rhs_naive)) <= 1e-13 * scale
        assert led_fast.coag_mass_flux_out == pytest.approx(
            led_naive.coag_mass_flux_out, rel=1e-12, abs=1e-13 * gross(led_naive))
        assert led_fast.coag_gain_mass == pytest.approx(
            led_naive.coag_gain_mass, rel=1e-12, abs=1e-13 * gross(led_naive))


def test_exponential_state_oracle_agreement():
    g = make_grid(1e-4, 1e4, 1280, kind="geometric")
    st = project(exponential_ic(2.0), g)
    for j in (5.0, 1e3):
        rhs_fast, led_fast = coagulation_rhs(st, CANONICAL, TruncationSpec.cutoff(j))
        rhs_naive, led_naive = naive_coagulation_rhs(st, CANONICAL,
                                                     TruncationSpec.cutoff(j))
        scale = np.max(np.abs(rhs_naive))
        assert np.max(np.abs(rhs_fast - rhs_naive)) <= 1e-13 * scale
        assert led_fast.coag_mass_flux_out == pytest.approx(
            led_naive.coag_mass_flux_out, rel=1e-12)


@pytest.mark.parametrize("spec", SPECS)
def test_fragmentation_mass_neutrality(spec):
    rng = np.random.default_rng(1814)
    g = make_grid(1e-3, 1e3, 480, kind="geometric")
    for j in (5.0, None):
        trunc = TruncationSpec.none() if j is None else TruncationSpec.cutoff(j)
        tabs = build_tables(g, spec, trunc, include_coag=False)
        for _ in range(10):
            st = random_state(g, rng)
            rhs, ledger, _ = eval_rates(st.values, tabs)
            mass_rate = float(np.sum(g.centers * rhs * g.widths))
            assert abs(mass_rate) <= 1e-13 * ledger.frag_loss_mass
            assert abs(ledger.frag_mass_residual) <= 1e-13 * ledger.frag_loss_mass


def test_tabulated_uniform_daughter_matches_powerlaw():
    # B = 2 via the dense tabulated path must reproduce the separable nu=0 path
    g = make_grid(1e-2, 1e2, 96, kind="geometric")
    rng = np.random.default_rng(1815)
    st = random_state(g, rng)
    tab_spec = CoefficientSpec(lam=2.0, alpha=1.0, daughter=TabulatedDaughter(
        breakpoints=(0.0, 1.0), coefficients=((2.0,),)))
    trunc = TruncationSpec.cutoff(30.0)
    rhs_pl, led_pl = fragmentation_rhs(st, CANONICAL, trunc)
    rhs_tab, led_tab = fragmentation_rhs(st, tab_spec, trunc)
    scale = np.max(np.abs(rhs_pl))
    assert np.max(np.abs(rhs_tab - rhs_pl)) <= 1e-12 * scale
    assert led_tab.frag_loss_mass == pytest.approx(led_pl.frag_loss_mass, rel=1e-13)
    mass_rate = float(np.sum(g.centers * rhs_tab * g.widths))
    assert abs(mass_rate) <= 1e-13 * led_tab.frag_loss_mass


def test_single_parent_uniform_daughter_gain():
    # with B = 2 a lone parent spreads a constant gain density over the cells
    # below it: 2*a(y)*f*dx/y up to the second-order mass renormalization
    g = make_grid(0.125, 8.0, 24, kind="geometric")
    vals = np.zeros(24)
    k = 23
    vals[k] = 3.0
    st = State(g, vals)
    rhs, _ = fragmentation_rhs(st, CANONICAL, TruncationSpec.none())
    below = rhs[:k]
    assert np.all(below > 0.0)
    assert np.max(below) == pytest.approx(np.min(below), rel=1e-14)
    y = g.centers[k]
    a_y = CANONICAL.a0 * y ** (CANONICAL.lam - 1.0)
    expected = 2.0 * a_y * vals[k] * g.widths[k] / y
    assert below[0] == pytest.approx(expected, rel=2e-2)
    assert rhs[k] < 0.0


def test_positivity_structure():
    rng = np.random.default_rng(1816)
    g = make_grid(1e-3, 1e3, 240, kind="geometric")
    tabs = build_tables(g, CANONICAL, TruncationSpec.cutoff(100.0))
    for _ in range(20):
        st = random_state(g, rng, scale=rng.uniform(0.1, 10.0))
        rhs, _, lossrate = eval_rates(st.values, tabs)
        gains = rhs + st.values * lossrate
        assert np.all(gains >= 0.0)
        assert np.all(lossrate >= 0.0)


def test_evaluation_is_deterministic():
    rng = np.random.default_rng(1817)
    g = make_grid(1e-3, 1e3, 320, kind="geometric")
    st = random_state(g, rng)
    tabs = build_tables(g, CANONICAL, TruncationSpec.cutoff(50.0))
    r1, l1, s1 = eval_rates(st.values, tabs)
    r2, l2, s2 = eval_rates(st.values, tabs)
    assert np.array_equal(r1, r2) and np.array_equal(s1, s2)
    assert l1 == l2
    tabs2 = build_tables(g, CANONICAL, TruncationSpec.cutoff(50.0))
    r3, l3, _ = eval_rates(st.values, tabs2)
    assert np.array_equal(r1, r3) and l1 == l3


def test_flux_vanishes_as_threshold_grows():
    # subcritical exponential: the boundary outflow dies off with j
    spec = CANONICAL
    fluxes = []
    g = make_grid(1e-4, 1e4, 640, kind="geometric")
    st = project(exponential_ic(0.2), g)
    for j in (10.0, 30.0, 100.0, 1000.0):
        _, ledger = coagulation_rhs(st, spec, TruncationSpec.cutoff(j))
        fluxes.append(ledger.coag_mass_flux_out)
        mass_rate = -ledger.coag_mass_flux_out
        assert mass_rate <= 0.0
    assert fluxes[0] > fluxes[1] > fluxes[2] > fluxes[3]
    assert fluxes[3] < 1e-12 * fluxes[0]


# ---------------------------------------------------------------------------
# weak-form terms


def test_weak_form_mass_test_function():
    g = make_grid(1e-4, 1e4, 640, kind="geometric")
    st = project(exponential_ic(2.0), g)
    trunc = TruncationSpec.cutoff(5.0)
    tabs = build_tables(g, CANONICAL, trunc)
    coag, frag, boundary = weak_form_terms(st, CANONICAL, trunc, lambda x: x, tabs)
    _, ledger, _ = eval_rates(st.values, tabs)
    scale = gross(ledger)
    assert abs(coag + ledger.coag_mass_flux_out) <= 1e-12 * scale
    assert abs(frag) <= 1e-13 * scale
    assert boundary == pytest.approx(ledger.coag_mass_flux_out, rel=1e-12)
    assert abs(coag + frag + boundary) <= 1e-12 * scale


def test_weak_form_bounded_mass_like_test_function():
    # theta(x) = min(x, j) agrees with x on every cell below j, so the
    # fragmentation term still cancels
    g = make_grid(1e-3, 1e3, 320, kind="geometric")
    st = project(exponential_ic(1.0), g)
    trunc = TruncationSpec.cutoff(10.0)
    _, frag, _ = weak_form_terms(st, CANONICAL, trunc,
                                 lambda x: np.minimum(x, 10.0))
    _, ledger, _ = eval_rates(
        st.values, build_tables(g, CANONICAL, trunc))
    assert abs(frag) <= 1e-13 * ledger.frag_loss_mass


@pytest.mark.parametrize("spec", [CANONICAL, SPECS[2]])
def test_weak_form_log_weight_fragmentation(spec):
    # theta(x) = x ln x: the fragmentation term is -a0 * b_ln * M_lam
    g = make_grid(1e-4, 1e4, 1280, kind="geometric")
    st = project(exponential_ic(0.5), g)
    trunc = TruncationSpec.cutoff(100.0)
    _, frag, _ = weak_form_terms(st, spec, trunc, lambda x: x * np.log(x))
    m_lam = moments(st, [spec.lam])[spec.lam]
    assert frag == pytest.approx(-spec.a0 * b_ln(spec) * m_lam, rel=2e-3)
